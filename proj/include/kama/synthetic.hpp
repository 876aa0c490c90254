#pragma once

#include <string>
#include <vector>

#include "kama/model.hpp"

namespace kama {

struct SyntheticJoint {
  std::string name;
  int parent = -1;
  Vec3 position = Vec3::Zero();
};

struct SyntheticKeypoint {
  std::string name;
  int parent_keypoint = -1;
  int joint = -1;              // -1: surface site carrying no rotation
  Vec3 site = Vec3::Zero();    // used only when joint == -1
};

/// Description of a synthetic humanoid: joint tree, keypoint skeleton and
/// mesh resolution. Mapped keypoints sit at their joint centers; leaf
/// keypoints are explicit surface sites attached to their parent keypoint's
/// joint.
struct SyntheticBodySpec {
  std::vector<SyntheticJoint> joints;
  std::vector<SyntheticKeypoint> keypoints;
  std::vector<std::string> eval_subset;
  int vertex_budget = 4000;
  int radial_segments = 8;
  double falloff_sigma = 0.03;  // meters, nearest-bone skinning falloff
};

/// The default 24-joint / 26-keypoint humanoid in an A-like rest pose.
SyntheticBodySpec default_humanoid_spec();

/// Builds a watertight capsule-per-bone mesh with skin weights from
/// nearest-bone falloff, a one-hot keypoint regressor on marker vertices and
/// ten smooth per-segment shape fields. Throws InvalidSpec on malformed
/// specs (cycles, bad indices, duplicate names).
SkinnedModel make_synthetic_model(const SyntheticBodySpec& spec);

/// make_synthetic_model(default_humanoid_spec()) with an optional budget.
SkinnedModel make_default_model(int vertex_budget = 4000);

}  // namespace kama
