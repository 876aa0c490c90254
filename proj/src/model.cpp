#include "kama/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace kama {

namespace {

void check_finite(const Vec3& v, const char* what) {
  if (!v.allFinite()) {
    throw InvalidSpec(std::string(what) + ": non-finite value");
  }
}

}  // namespace

int KinematicTree::joint_index(const std::string& name) const {
  for (size_t i = 0; i < joint_names.size(); ++i) {
    if (joint_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

int KinematicTree::keypoint_index(const std::string& name) const {
  for (size_t i = 0; i < keypoint_names.size(); ++i) {
    if (keypoint_names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

void KinematicTree::validate() {
  const int nj = joint_count();
  if (nj <= 0) throw InvalidSpec("tree: no joints");
  if (static_cast<int>(joint_names.size()) != nj ||
      static_cast<int>(rest_joints.size()) != nj) {
    throw InvalidSpec("tree: joint array sizes disagree");
  }
  root = -1;
  for (int j = 0; j < nj; ++j) {
    check_finite(rest_joints[j], "tree: joint position");
    if (parent[j] == -1) {
      if (root != -1) throw InvalidSpec("tree: more than one root joint");
      root = j;
    } else if (parent[j] < 0 || parent[j] >= nj) {
      throw InvalidSpec("tree: parent index out of range for joint " +
                        joint_names[j]);
    } else if (parent[j] >= j) {
      // parent-before-child ordering also rules out cycles
      throw InvalidSpec("tree: joints must be listed parent-first (joint " +
                        joint_names[j] + ")");
    }
  }
  if (root == -1) throw InvalidSpec("tree: no root joint");
  {
    std::set<std::string> names(joint_names.begin(), joint_names.end());
    if (static_cast<int>(names.size()) != nj) {
      throw InvalidSpec("tree: duplicate joint names");
    }
  }
  joint_children.assign(nj, {});
  for (int j = 0; j < nj; ++j) {
    if (parent[j] >= 0) joint_children[parent[j]].push_back(j);
  }

  const int nk = keypoint_count();
  if (nk <= 0) throw InvalidSpec("tree: no keypoints");
  if (static_cast<int>(keypoint_names.size()) != nk ||
      static_cast<int>(keypoint_joint.size()) != nk) {
    throw InvalidSpec("tree: keypoint array sizes disagree");
  }
  {
    std::set<std::string> names(keypoint_names.begin(), keypoint_names.end());
    if (static_cast<int>(names.size()) != nk) {
      throw InvalidSpec("tree: duplicate keypoint names");
    }
  }
  std::unordered_set<int> mapped;
  for (int k = 0; k < nk; ++k) {
    const int j = keypoint_joint[k];
    if (j < -1 || j >= nj) {
      throw InvalidSpec("tree: keypoint " + keypoint_names[k] +
                        " maps to an invalid joint");
    }
    if (j >= 0 && !mapped.insert(j).second) {
      throw InvalidSpec("tree: keypoint map is not injective on joints");
    }
  }
  // Keypoint graph: exactly one root, acyclic.
  int kp_root = -1;
  for (int k = 0; k < nk; ++k) {
    const int p = keypoint_parent[k];
    if (p == -1) {
      if (kp_root != -1) throw InvalidSpec("tree: more than one keypoint root");
      kp_root = k;
    } else if (p < 0 || p >= nk || p == k) {
      throw InvalidSpec("tree: bad keypoint parent for " + keypoint_names[k]);
    }
  }
  if (kp_root == -1) throw InvalidSpec("tree: no keypoint root");
  for (int k = 0; k < nk; ++k) {
    int cursor = k;
    for (int steps = 0; cursor != -1; ++steps) {
      if (steps > nk) throw InvalidSpec("tree: keypoint parent cycle");
      cursor = keypoint_parent[cursor];
    }
  }
  keypoint_children.assign(nk, {});
  for (int k = 0; k < nk; ++k) {
    if (keypoint_parent[k] >= 0) keypoint_children[keypoint_parent[k]].push_back(k);
  }
}

void SkinnedModel::validate() {
  tree.validate();
  const int nv = vertex_count();
  const int nj = joint_count();
  const int nk = keypoint_count();
  if (nv <= 0) throw InvalidSpec("model: no vertices");
  if (static_cast<int>(skin_weights.size()) != nv ||
      static_cast<int>(shape_dirs.size()) != nv) {
    throw InvalidSpec("model: per-vertex array sizes disagree");
  }
  for (const Vec3& v : rest_vertices) check_finite(v, "model: vertex");
  for (const auto& f : faces) {
    for (int idx : f) {
      if (idx < 0 || idx >= nv) {
        throw InvalidSpec("model: face references invalid vertex index");
      }
    }
  }
  for (int v = 0; v < nv; ++v) {
    double sum = 0.0;
    for (const auto& [j, w] : skin_weights[v]) {
      if (j < 0 || j >= nj) throw InvalidSpec("model: skin weight joint index");
      if (w < 0.0) throw InvalidSpec("model: negative skin weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvalidSpec("model: skin weight row does not sum to 1");
    }
    for (const auto& [b, d] : shape_dirs[v]) {
      if (b < 0 || b >= kShapeDims) {
        throw InvalidSpec("model: shape blend index out of range");
      }
      check_finite(d, "model: shape direction");
    }
  }
  if (static_cast<int>(keypoint_regressor.size()) != nk) {
    throw InvalidSpec("model: keypoint regressor row count");
  }
  for (int k = 0; k < nk; ++k) {
    double sum = 0.0;
    for (const auto& [v, w] : keypoint_regressor[k]) {
      if (v < 0 || v >= nv) throw InvalidSpec("model: regressor vertex index");
      if (w < 0.0) throw InvalidSpec("model: negative regressor weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvalidSpec("model: regressor row does not sum to 1");
    }
  }
  for (const std::string& name : eval_subset) {
    if (tree.keypoint_index(name) < 0) {
      throw InvalidSpec("model: eval subset names unknown keypoint " + name);
    }
  }
  rest_keypoints = regress_keypoints(*this, rest_vertices);
}

FkResult forward_kinematics(const KinematicTree& tree, const Pose& pose) {
  const int nj = tree.joint_count();
  if (pose.size() != nj) {
    throw SizeMismatch("forward_kinematics: pose length != joint count");
  }
  FkResult fk;
  fk.rotation.resize(nj);
  fk.position.resize(nj);
  for (int j = 0; j < nj; ++j) {
    const int p = tree.parent[j];
    if (p == -1) {
      fk.rotation[j] = pose.local[j];
      fk.position[j] = tree.rest_joints[j];
    } else {
      fk.rotation[j] = fk.rotation[p] * pose.local[j];
      fk.position[j] =
          fk.rotation[p].apply(tree.rest_joints[j] - tree.rest_joints[p]) +
          fk.position[p];
    }
  }
  return fk;
}

namespace {

Vec3 shaped_vertex(const SkinnedModel& model, int v, const Shape& shape) {
  Vec3 out = model.rest_vertices[v];
  for (const auto& [b, d] : model.shape_dirs[v]) {
    out += shape.beta[b] * d;
  }
  return out;
}

Vec3 skinned_vertex(const SkinnedModel& model, const FkResult& fk, int v,
                    const Vec3& shaped) {
  Vec3 out = Vec3::Zero();
  for (const auto& [j, w] : model.skin_weights[v]) {
    out += w * (fk.rotation[j].apply(shaped - model.tree.rest_joints[j]) +
                fk.position[j]);
  }
  return out;
}

}  // namespace

std::vector<Vec3> skin(const SkinnedModel& model, const Pose& pose,
                       const Shape& shape) {
  if (shape.beta.size() != kShapeDims) {
    throw SizeMismatch("skin: shape must have 10 coefficients");
  }
  const FkResult fk = forward_kinematics(model.tree, pose);
  std::vector<Vec3> out(model.rest_vertices.size());
  for (int v = 0; v < model.vertex_count(); ++v) {
    out[v] = skinned_vertex(model, fk, v, shaped_vertex(model, v, shape));
  }
  return out;
}

std::vector<Vec3> regress_keypoints(const SkinnedModel& model,
                                    const std::vector<Vec3>& vertices) {
  if (static_cast<int>(vertices.size()) != model.vertex_count()) {
    throw SizeMismatch("regress_keypoints: vertex count mismatch");
  }
  std::vector<Vec3> out(model.keypoint_regressor.size(), Vec3::Zero());
  for (size_t k = 0; k < model.keypoint_regressor.size(); ++k) {
    for (const auto& [v, w] : model.keypoint_regressor[k]) {
      out[k] += w * vertices[v];
    }
  }
  return out;
}

std::vector<Vec3> pose_keypoints(const SkinnedModel& model, const Pose& pose,
                                 const Shape& shape) {
  if (shape.beta.size() != kShapeDims) {
    throw SizeMismatch("pose_keypoints: shape must have 10 coefficients");
  }
  const FkResult fk = forward_kinematics(model.tree, pose);
  std::vector<Vec3> out(model.keypoint_regressor.size(), Vec3::Zero());
  for (size_t k = 0; k < model.keypoint_regressor.size(); ++k) {
    for (const auto& [v, w] : model.keypoint_regressor[k]) {
      out[k] += w * skinned_vertex(model, fk, v, shaped_vertex(model, v, shape));
    }
  }
  return out;
}

}  // namespace kama
