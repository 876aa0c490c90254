#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "kama/model.hpp"

namespace kama {

/// Absolute 3D keypoint observations with per-keypoint confidences and,
/// optionally, their 2D projections in pixels.
struct KeypointSet {
  std::vector<Vec3> positions;              // camera-space meters
  std::vector<double> confidence;           // in [0, 1]
  std::optional<std::vector<Vec2>> projected_2d;

  void validate(int expected_keypoints) const;
};

enum class JointSource { one_child, multi_child, zeroed };

const char* to_string(JointSource s);
JointSource joint_source_from_string(const std::string& s);

/// Articulation result: local pose, shape, global scale and translation,
/// plus the rule that produced each joint's rotation.
struct FitState {
  Pose pose;
  Shape shape = Shape::zero();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
  std::vector<JointSource> per_joint_source;
};

struct ArticulateConfig {
  // Including the parent keypoint in the weighted neighborhood biases the
  // estimate on rigid data (the parent bone moves with the parent's
  // rotation), so it is off by default.
  bool include_parent_in_neighborhood = false;
  // Rebuttal variant: for more than 2 children use only the 2 highest-score
  // children in the neighborhood.
  bool pair_selection = false;
  // Applied only when a neighborhood's confidence sum is below 1e-9.
  double confidence_floor = 1e-4;
};

/// Per-keypoint global rotation estimates with their source rule and, for
/// one-child estimates, the child keypoint that defined the bone.
struct KeypointRotations {
  std::vector<Rotation> global;
  std::vector<JointSource> source;
  std::vector<int> used_child;
};

/// Rotation rules: one child -> minimal bone-to-bone rotation; multiple
/// children -> confidence-weighted Kabsch over the joint-centered
/// neighborhood; childless -> identity. A failed Kabsch falls back to the
/// one-child rule on the highest-confidence child.
KeypointRotations estimate_global_rotations(const KeypointSet& x,
                                            const std::vector<Vec3>& canonical,
                                            const KinematicTree& tree,
                                            const ArticulateConfig& config = {});

/// Global to local: root keeps its global; every other estimated keypoint is
/// the inverse of its nearest rotation-carrying ancestor's global composed
/// with its own. Zeroed keypoints get identity locals.
std::vector<Rotation> globals_to_locals(const KeypointRotations& est,
                                        const KinematicTree& tree);

/// Strips the twist about the canonical child-bone direction from every
/// one-child local, carrying the stripped twist into descendant pre-locals so
/// that every keypoint position under forward kinematics is preserved.
std::vector<Rotation> remove_twist(const std::vector<Rotation>& locals,
                                   const KeypointRotations& est,
                                   const KinematicTree& tree,
                                   const std::vector<Vec3>& canonical);

/// Reindexes keypoint locals onto model joints; joints without a keypoint get
/// identity. Returns the full pose and per-joint source tags.
std::pair<Pose, std::vector<JointSource>> map_to_model_pose(
    const std::vector<Rotation>& locals, const KeypointRotations& est,
    const KinematicTree& tree);

/// Skins the model at (pose, beta = 0), regresses keypoints and solves the
/// closed-form scale/translation fit against the observations.
ScaleTranslation fit_global_scale_translation(const SkinnedModel& model,
                                              const Pose& pose,
                                              const KeypointSet& x);

/// The full analytic articulation pass: rotation rules, local conversion,
/// twist removal, joint mapping, scale/translation. Single pass, never
/// iterates; beta stays zero.
FitState articulate(const SkinnedModel& model, const KeypointSet& x,
                    const ArticulateConfig& config = {});

}  // namespace kama
