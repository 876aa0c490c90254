#include "kama/articulate.hpp"

#include <algorithm>
#include <cmath>

namespace kama {

void KeypointSet::validate(int expected_keypoints) const {
  if (static_cast<int>(positions.size()) != expected_keypoints ||
      static_cast<int>(confidence.size()) != expected_keypoints) {
    throw SizeMismatch("keypoint set size != model keypoint count");
  }
  if (projected_2d &&
      static_cast<int>(projected_2d->size()) != expected_keypoints) {
    throw SizeMismatch("projected_2d size != model keypoint count");
  }
  for (const Vec3& p : positions) {
    if (!p.allFinite()) throw DegenerateInput("keypoint position not finite");
  }
  for (double c : confidence) {
    if (!(c >= 0.0 && c <= 1.0)) {
      throw DegenerateInput("keypoint confidence outside [0, 1]");
    }
  }
}

const char* to_string(JointSource s) {
  switch (s) {
    case JointSource::one_child: return "one_child";
    case JointSource::multi_child: return "multi_child";
    case JointSource::zeroed: return "zeroed";
  }
  return "zeroed";
}

JointSource joint_source_from_string(const std::string& s) {
  if (s == "one_child") return JointSource::one_child;
  if (s == "multi_child") return JointSource::multi_child;
  if (s == "zeroed") return JointSource::zeroed;
  throw ParseError("unknown joint source tag: " + s);
}

namespace {

Rotation one_child_rotation(const KeypointSet& x,
                            const std::vector<Vec3>& canonical, int k, int c) {
  return axis_angle_between(canonical[c] - canonical[k],
                            x.positions[c] - x.positions[k]);
}

int highest_confidence_child(const KeypointSet& x, const std::vector<int>& children) {
  int best = children.front();
  for (int c : children) {
    if (x.confidence[c] > x.confidence[best]) best = c;
  }
  return best;
}

}  // namespace

KeypointRotations estimate_global_rotations(const KeypointSet& x,
                                            const std::vector<Vec3>& canonical,
                                            const KinematicTree& tree,
                                            const ArticulateConfig& config) {
  const int nk = tree.keypoint_count();
  x.validate(nk);
  if (static_cast<int>(canonical.size()) != nk) {
    throw SizeMismatch("canonical keypoint count mismatch");
  }

  KeypointRotations out;
  out.global.assign(nk, Rotation::identity());
  out.source.assign(nk, JointSource::zeroed);
  out.used_child.assign(nk, -1);

  for (int k = 0; k < nk; ++k) {
    const std::vector<int>& children = tree.keypoint_children[k];
    if (children.empty()) {
      continue;  // no rotation for childless keypoints
    }
    if (children.size() == 1) {
      out.global[k] = one_child_rotation(x, canonical, k, children.front());
      out.source[k] = JointSource::one_child;
      out.used_child[k] = children.front();
      continue;
    }

    std::vector<int> neighborhood = children;
    if (config.pair_selection && children.size() > 2) {
      std::vector<int> ranked = children;
      std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
        return x.confidence[a] > x.confidence[b];
      });
      neighborhood.assign(ranked.begin(), ranked.begin() + 2);
    }
    neighborhood.push_back(k);
    if (config.include_parent_in_neighborhood && tree.keypoint_parent[k] >= 0) {
      neighborhood.push_back(tree.keypoint_parent[k]);
    }

    std::vector<Vec3> src, dst;
    std::vector<double> weights;
    src.reserve(neighborhood.size());
    for (int n : neighborhood) {
      src.push_back(canonical[n] - canonical[k]);
      dst.push_back(x.positions[n] - x.positions[k]);
      weights.push_back(x.confidence[n]);
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (wsum <= 1e-9) {
      for (double& w : weights) w = std::max(w, config.confidence_floor);
    }
    try {
      out.global[k] = weighted_kabsch(src, dst, weights);
      out.source[k] = JointSource::multi_child;
    } catch (const DegenerateInput&) {
      const int c = highest_confidence_child(x, children);
      out.global[k] = one_child_rotation(x, canonical, k, c);
      out.source[k] = JointSource::one_child;
      out.used_child[k] = c;
    }
  }
  return out;
}

namespace {

// Nearest ancestor keypoint that carries an estimated rotation, or -1.
int rotation_parent(const KeypointRotations& est, const KinematicTree& tree,
                    int k) {
  int p = tree.keypoint_parent[k];
  while (p >= 0 && est.source[p] == JointSource::zeroed) {
    p = tree.keypoint_parent[p];
  }
  return p;
}

// Keypoint indices in parent-before-child order.
std::vector<int> keypoint_topological_order(const KinematicTree& tree) {
  std::vector<int> order;
  order.reserve(tree.keypoint_count());
  std::vector<int> stack;
  for (int k = 0; k < tree.keypoint_count(); ++k) {
    if (tree.keypoint_parent[k] == -1) stack.push_back(k);
  }
  while (!stack.empty()) {
    const int k = stack.back();
    stack.pop_back();
    order.push_back(k);
    for (int c : tree.keypoint_children[k]) stack.push_back(c);
  }
  return order;
}

}  // namespace

std::vector<Rotation> globals_to_locals(const KeypointRotations& est,
                                        const KinematicTree& tree) {
  const int nk = tree.keypoint_count();
  std::vector<Rotation> locals(nk, Rotation::identity());
  for (int k = 0; k < nk; ++k) {
    if (est.source[k] == JointSource::zeroed) continue;
    const int p = rotation_parent(est, tree, k);
    locals[k] = p < 0 ? est.global[k] : est.global[p].inverse() * est.global[k];
  }
  return locals;
}

std::vector<Rotation> remove_twist(const std::vector<Rotation>& locals,
                                   const KeypointRotations& est,
                                   const KinematicTree& tree,
                                   const std::vector<Vec3>& canonical) {
  const int nk = tree.keypoint_count();
  if (static_cast<int>(locals.size()) != nk) {
    throw SizeMismatch("remove_twist: locals size mismatch");
  }
  std::vector<Rotation> out(locals);
  // Residual twist of each processed keypoint, carried into descendants so
  // their globals (and hence all keypoint positions) are unchanged.
  std::vector<Rotation> carried(nk, Rotation::identity());
  for (int k : keypoint_topological_order(tree)) {
    if (est.source[k] == JointSource::zeroed) continue;
    const int p = rotation_parent(est, tree, k);
    const Rotation pre = p < 0 ? locals[k] : carried[p] * locals[k];
    if (est.source[k] == JointSource::one_child) {
      const Vec3 bone = canonical[est.used_child[k]] - canonical[k];
      const SwingTwist st = swing_twist_decompose(pre, bone.normalized());
      out[k] = st.swing;
      carried[k] = st.twist;
    } else {
      out[k] = pre;
    }
  }
  return out;
}

std::pair<Pose, std::vector<JointSource>> map_to_model_pose(
    const std::vector<Rotation>& locals, const KeypointRotations& est,
    const KinematicTree& tree) {
  Pose pose = Pose::rest(tree.joint_count());
  std::vector<JointSource> sources(tree.joint_count(), JointSource::zeroed);
  for (int k = 0; k < tree.keypoint_count(); ++k) {
    const int j = tree.keypoint_joint[k];
    if (j < 0) continue;
    pose.local[j] = locals[k];
    sources[j] = est.source[k];
  }
  return {std::move(pose), std::move(sources)};
}

ScaleTranslation fit_global_scale_translation(const SkinnedModel& model,
                                              const Pose& pose,
                                              const KeypointSet& x) {
  x.validate(model.keypoint_count());
  const std::vector<Vec3> kp = pose_keypoints(model, pose, Shape::zero());
  return fit_scale_translation(kp, x.positions);
}

FitState articulate(const SkinnedModel& model, const KeypointSet& x,
                    const ArticulateConfig& config) {
  const KeypointRotations est =
      estimate_global_rotations(x, model.rest_keypoints, model.tree, config);
  const std::vector<Rotation> locals = globals_to_locals(est, model.tree);
  const std::vector<Rotation> detwisted =
      remove_twist(locals, est, model.tree, model.rest_keypoints);
  auto [pose, sources] = map_to_model_pose(detwisted, est, model.tree);
  const ScaleTranslation st = fit_global_scale_translation(model, pose, x);
  if (!(st.scale > 0.0)) {
    throw DegenerateInput("articulate: non-positive fitted scale");
  }
  FitState state;
  state.pose = std::move(pose);
  state.shape = Shape::zero();
  state.scale = st.scale;
  state.translation = st.translation;
  state.per_joint_source = std::move(sources);
  return state;
}

}  // namespace kama
