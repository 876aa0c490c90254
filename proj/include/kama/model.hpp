#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "kama/geom.hpp"

namespace kama {

inline constexpr int kShapeDims = 10;

/// Joint hierarchy plus the keypoint skeleton: per-joint parents and rest
/// positions, and the keypoint->model-joint map with the keypoint-level
/// kinematic structure (parents/children) used by the articulation rules.
struct KinematicTree {
  std::vector<std::string> joint_names;
  std::vector<int> parent;       // per joint; -1 marks the single root
  std::vector<Vec3> rest_joints; // canonical joint positions, meters

  std::vector<std::string> keypoint_names;
  std::vector<int> keypoint_joint;  // per keypoint; -1 = carries no rotation
  std::vector<int> keypoint_parent; // per keypoint; -1 = keypoint root

  // Derived adjacency, filled by validate().
  std::vector<std::vector<int>> joint_children;
  std::vector<std::vector<int>> keypoint_children;
  int root = -1;

  int joint_count() const { return static_cast<int>(parent.size()); }
  int keypoint_count() const { return static_cast<int>(keypoint_parent.size()); }

  int joint_index(const std::string& name) const;
  int keypoint_index(const std::string& name) const;

  /// Checks all structural invariants and rebuilds derived adjacency.
  /// Throws InvalidSpec on violation.
  void validate();
};

/// Per-joint local rotations, ordered by model joint index.
struct Pose {
  std::vector<Rotation> local;

  static Pose rest(int joint_count) {
    Pose p;
    p.local.assign(static_cast<size_t>(joint_count), Rotation::identity());
    return p;
  }
  int size() const { return static_cast<int>(local.size()); }
};

/// Blend-shape coefficients, length kShapeDims.
struct Shape {
  Eigen::VectorXd beta;

  static Shape zero() {
    Shape s;
    s.beta = Eigen::VectorXd::Zero(kShapeDims);
    return s;
  }
};

/// Parametric skinned body: canonical vertices, faces, skinning weights,
/// shape blend directions and the keypoint regressor W. Immutable after
/// construction; all operations on it are read-only.
struct SkinnedModel {
  KinematicTree tree;
  std::vector<Vec3> rest_vertices;
  std::vector<std::array<int, 3>> faces;
  // Per vertex: (joint, weight) pairs; weights of each vertex sum to 1.
  std::vector<std::vector<std::pair<int, double>>> skin_weights;
  // Per vertex: (blend index, direction) pairs.
  std::vector<std::vector<std::pair<int, Vec3>>> shape_dirs;
  // Per keypoint: (vertex, weight) pairs; rows sum to 1.
  std::vector<std::vector<std::pair<int, double>>> keypoint_regressor;
  // Keypoint names of the 14-point evaluation subset.
  std::vector<std::string> eval_subset;

  // Cached W * rest_vertices, filled by validate().
  std::vector<Vec3> rest_keypoints;

  int vertex_count() const { return static_cast<int>(rest_vertices.size()); }
  int joint_count() const { return tree.joint_count(); }
  int keypoint_count() const { return tree.keypoint_count(); }

  /// Checks every type invariant (row sums within 1e-6, face indices, sizes)
  /// and caches rest keypoints. Throws InvalidSpec / ParseError-compatible
  /// Error on violation.
  void validate();
};

/// Per-joint global transforms: each joint's world rotation and the posed
/// joint position. The transform of joint j acts as
///   x -> rotation[j] * (x - rest_joint[j]) + position[j].
struct FkResult {
  std::vector<Rotation> rotation;
  std::vector<Vec3> position;
};

/// Forward kinematics down the tree. The root rotates about its canonical
/// position; each child transform is the parent transform composed with the
/// child's local rotation about the child's canonical position. Identity pose
/// reproduces the canonical joint positions exactly.
FkResult forward_kinematics(const KinematicTree& tree, const Pose& pose);

/// Linear blend skinning: canonical vertices displaced by shape_dirs * beta,
/// then blended through the forward-kinematics joint transforms.
std::vector<Vec3> skin(const SkinnedModel& model, const Pose& pose,
                       const Shape& shape);

/// Keypoints as convex combinations of vertices (rows of W).
std::vector<Vec3> regress_keypoints(const SkinnedModel& model,
                                    const std::vector<Vec3>& vertices);

/// regress_keypoints(skin(...)) restricted to the vertices W touches.
std::vector<Vec3> pose_keypoints(const SkinnedModel& model, const Pose& pose,
                                 const Shape& shape);

}  // namespace kama
