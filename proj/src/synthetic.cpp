#include "kama/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace kama {

namespace {

struct Segment {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  int owner = -1;       // joint whose transform carries this segment
  bool feature = false; // leaf-site stalk (eye/ear/heel/toe) vs bone
  double radius = 0.0;
  int rings = 0;
  int start_pole = -1;  // vertex index at a
  int end_pole = -1;    // vertex index at b
};

Vec3 any_perpendicular(const Vec3& d) {
  int smallest = 0;
  double best = std::abs(d.x());
  if (std::abs(d.y()) < best) {
    smallest = 1;
    best = std::abs(d.y());
  }
  if (std::abs(d.z()) < best) smallest = 2;
  Vec3 e = Vec3::Zero();
  e[smallest] = 1.0;
  return (e - e.dot(d) * d).normalized();
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-18) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Shape field groups by segment owner joint name.
int radial_group(const std::string& owner_name) {
  static const std::map<std::string, int> groups = {
      {"pelvis", 1},     {"spine1", 1},     {"spine2", 1},  {"spine3", 1},
      {"l_collar", 1},   {"r_collar", 1},   {"neck", 2},    {"head", 2},
      {"l_shoulder", 3}, {"l_elbow", 3},    {"l_wrist", 3}, {"r_shoulder", 4},
      {"r_elbow", 4},    {"r_wrist", 4},    {"l_hip", 5},   {"l_knee", 5},
      {"r_hip", 6},      {"r_knee", 6},     {"l_ankle", 7}, {"r_ankle", 7},
      {"l_foot", 7},     {"r_foot", 7}};
  const auto it = groups.find(owner_name);
  return it == groups.end() ? 1 : it->second;
}

}  // namespace

SyntheticBodySpec default_humanoid_spec() {
  SyntheticBodySpec s;
  const auto J = [&](const char* name, int parent, double x, double y, double z) {
    s.joints.push_back({name, parent, Vec3(x, y, z)});
  };
  // SMPL-like 24-joint tree, parent-first order, A-like rest pose (meters).
  J("pelvis", -1, 0.0, 0.95, 0.0);
  J("l_hip", 0, 0.09, 0.91, 0.01);
  J("r_hip", 0, -0.09, 0.91, 0.01);
  J("spine1", 0, 0.0, 1.06, 0.015);
  J("l_knee", 1, 0.105, 0.50, 0.02);
  J("r_knee", 2, -0.105, 0.50, 0.02);
  J("spine2", 3, 0.0, 1.18, 0.02);
  J("l_ankle", 4, 0.115, 0.09, 0.0);
  J("r_ankle", 5, -0.115, 0.09, 0.0);
  J("spine3", 6, 0.0, 1.29, 0.01);
  J("l_foot", 7, 0.125, 0.03, 0.13);
  J("r_foot", 8, -0.125, 0.03, 0.13);
  J("neck", 9, 0.0, 1.43, 0.0);
  J("l_collar", 9, 0.05, 1.36, 0.01);
  J("r_collar", 9, -0.05, 1.36, 0.01);
  J("head", 12, 0.0, 1.58, 0.09);  // pivot at the nose bridge
  J("l_shoulder", 13, 0.17, 1.40, 0.0);
  J("r_shoulder", 14, -0.17, 1.40, 0.0);
  J("l_elbow", 16, 0.42, 1.22, 0.01);
  J("r_elbow", 17, -0.42, 1.22, 0.01);
  J("l_wrist", 18, 0.63, 1.05, 0.02);
  J("r_wrist", 19, -0.63, 1.05, 0.02);
  J("l_hand", 20, 0.72, 0.98, 0.03);
  J("r_hand", 21, -0.72, 0.98, 0.03);

  const auto K = [&](const char* name, int parent_kp, int joint, double x = 0,
                     double y = 0, double z = 0) {
    s.keypoints.push_back({name, parent_kp, joint, Vec3(x, y, z)});
  };
  K("pelvis", -1, 0);
  K("l_hip", 0, 1);
  K("r_hip", 0, 2);
  K("l_knee", 1, 4);
  K("r_knee", 2, 5);
  K("l_ankle", 3, 7);
  K("r_ankle", 4, 8);
  K("chest", 0, 6);
  K("neck", 7, 12);
  K("nose", 8, 15);
  K("l_eye", 9, -1, 0.035, 1.63, 0.155);
  K("r_eye", 9, -1, -0.035, 1.63, 0.155);
  K("l_ear", 9, -1, 0.075, 1.60, 0.065);
  K("r_ear", 9, -1, -0.075, 1.60, 0.065);
  K("l_shoulder", 7, 16);
  K("r_shoulder", 7, 17);
  K("l_elbow", 14, 18);
  K("r_elbow", 15, 19);
  K("l_wrist", 16, 20);
  K("r_wrist", 17, 21);
  K("l_heel", 5, -1, 0.115, 0.035, -0.06);
  K("r_heel", 6, -1, -0.115, 0.035, -0.06);
  K("l_big_toe", 5, 10);
  K("r_big_toe", 6, 11);
  K("l_small_toe", 22, -1, 0.16, 0.02, 0.115);
  K("r_small_toe", 23, -1, -0.16, 0.02, 0.115);

  s.eval_subset = {"l_ankle", "r_ankle", "l_knee",     "r_knee",
                   "l_hip",   "r_hip",   "l_wrist",    "r_wrist",
                   "l_elbow", "r_elbow", "l_shoulder", "r_shoulder",
                   "neck",    "nose"};
  return s;
}

SkinnedModel make_synthetic_model(const SyntheticBodySpec& spec) {
  if (spec.joints.empty()) throw InvalidSpec("synthetic: no joints");
  if (spec.keypoints.empty()) throw InvalidSpec("synthetic: no keypoints");
  if (spec.vertex_budget < 500 || spec.vertex_budget > 50000) {
    throw InvalidSpec("synthetic: vertex budget out of range");
  }
  if (spec.radial_segments < 3) {
    throw InvalidSpec("synthetic: need at least 3 radial segments");
  }

  SkinnedModel model;
  KinematicTree& tree = model.tree;
  for (const SyntheticJoint& j : spec.joints) {
    tree.joint_names.push_back(j.name);
    tree.parent.push_back(j.parent);
    tree.rest_joints.push_back(j.position);
  }
  for (const SyntheticKeypoint& k : spec.keypoints) {
    tree.keypoint_names.push_back(k.name);
    tree.keypoint_parent.push_back(k.parent_keypoint);
    tree.keypoint_joint.push_back(k.joint);
  }
  tree.validate();  // InvalidSpec on cycles, bad indices, duplicates

  const int nk = tree.keypoint_count();
  // Resolve each keypoint's marker site and, for leaf keypoints, the joint
  // whose transform carries the site.
  std::vector<Vec3> site(nk);
  std::vector<int> attach(nk, -1);
  for (int k = 0; k < nk; ++k) {
    const int j = tree.keypoint_joint[k];
    if (j >= 0) {
      site[k] = tree.rest_joints[j];
      attach[k] = j;
    } else {
      const int pk = tree.keypoint_parent[k];
      if (pk < 0 || tree.keypoint_joint[pk] < 0) {
        throw InvalidSpec("synthetic: leaf keypoint " + tree.keypoint_names[k] +
                          " needs a joint-mapped parent keypoint");
      }
      site[k] = spec.keypoints[k].site;
      attach[k] = tree.keypoint_joint[pk];
    }
  }

  // Segments: one bone per non-root joint plus one stalk per leaf site.
  std::vector<Segment> segments;
  for (int j = 0; j < tree.joint_count(); ++j) {
    if (tree.parent[j] == -1) continue;
    Segment seg;
    seg.a = tree.rest_joints[tree.parent[j]];
    seg.b = tree.rest_joints[j];
    seg.owner = tree.parent[j];
    const double len = (seg.b - seg.a).norm();
    if (len < 1e-6) {
      throw InvalidSpec("synthetic: zero-length bone at joint " +
                        tree.joint_names[j]);
    }
    seg.radius = std::clamp(0.22 * len, 0.015, 0.06);
    segments.push_back(seg);
  }
  for (int k = 0; k < nk; ++k) {
    if (tree.keypoint_joint[k] >= 0) continue;
    Segment seg;
    seg.a = tree.rest_joints[attach[k]];
    seg.b = site[k];
    seg.owner = attach[k];
    seg.feature = true;
    const double len = (seg.b - seg.a).norm();
    if (len < 1e-6) {
      throw InvalidSpec("synthetic: leaf site coincides with its joint for " +
                        tree.keypoint_names[k]);
    }
    seg.radius = std::clamp(0.25 * len, 0.008, 0.02);
    segments.push_back(seg);
  }

  // Distribute ring counts in proportion to segment length.
  const int nseg = static_cast<int>(segments.size());
  double total_len = 0.0;
  for (const Segment& s : segments) total_len += (s.b - s.a).norm();
  const int ring_budget =
      std::max(3 * nseg, (spec.vertex_budget - 2 * nseg) / spec.radial_segments);
  for (Segment& s : segments) {
    const double share = (s.b - s.a).norm() / total_len;
    s.rings = std::max(3, static_cast<int>(std::lround(share * ring_budget)));
  }

  // Build spindle meshes: poles exactly at the segment endpoints, ring radius
  // following an ellipsoid profile so the surface closes at the poles.
  std::vector<Vec3>& verts = model.rest_vertices;
  std::vector<std::array<int, 3>>& faces = model.faces;
  struct RingVertex {
    int segment;
    double t;       // axial parameter in (0,1)
    Vec3 radial;    // offset from the axis point
  };
  std::vector<RingVertex> ring_info;  // indexed by vertex, poles excluded
  std::vector<int> vertex_segment;    // segment id per vertex
  const int m = spec.radial_segments;
  for (int si = 0; si < nseg; ++si) {
    Segment& s = segments[si];
    const Vec3 axis = s.b - s.a;
    const double len = axis.norm();
    const Vec3 d = axis / len;
    const Vec3 n1 = any_perpendicular(d);
    const Vec3 n2 = d.cross(n1);

    s.start_pole = static_cast<int>(verts.size());
    verts.push_back(s.a);
    vertex_segment.push_back(si);
    std::vector<int> prev_ring;
    for (int r = 0; r < s.rings; ++r) {
      const double t = static_cast<double>(r + 1) / (s.rings + 1);
      const double rho = 2.0 * s.radius * std::sqrt(t * (1.0 - t));
      std::vector<int> ring(m);
      for (int a = 0; a < m; ++a) {
        const double phi = 2.0 * M_PI * a / m;
        const Vec3 radial = rho * (std::cos(phi) * n1 + std::sin(phi) * n2);
        ring[a] = static_cast<int>(verts.size());
        verts.push_back(s.a + t * axis + radial);
        vertex_segment.push_back(si);
        ring_info.push_back({si, t, radial});
      }
      if (r == 0) {
        for (int a = 0; a < m; ++a) {
          faces.push_back({s.start_pole, ring[a], ring[(a + 1) % m]});
        }
      } else {
        for (int a = 0; a < m; ++a) {
          const int a2 = (a + 1) % m;
          faces.push_back({prev_ring[a], ring[a], ring[a2]});
          faces.push_back({prev_ring[a], ring[a2], prev_ring[a2]});
        }
      }
      prev_ring = ring;
    }
    s.end_pole = static_cast<int>(verts.size());
    verts.push_back(s.b);
    vertex_segment.push_back(si);
    for (int a = 0; a < m; ++a) {
      faces.push_back({prev_ring[a], s.end_pole, prev_ring[(a + 1) % m]});
    }
  }

  // Skinning. Pole vertices are pinned to their segment owner; ring vertices
  // blend nearby bones with a Gaussian falloff on distance to the bone axes.
  const int nv = static_cast<int>(verts.size());
  model.skin_weights.assign(nv, {});
  const double sigma2 = 2.0 * spec.falloff_sigma * spec.falloff_sigma;
  for (int v = 0; v < nv; ++v) {
    const int own = vertex_segment[v];
    const bool is_pole =
        (v == segments[own].start_pole) || (v == segments[own].end_pole);
    if (is_pole) {
      model.skin_weights[v] = {{segments[own].owner, 1.0}};
      continue;
    }
    std::map<int, double> by_owner;
    for (const Segment& s : segments) {
      const double dist = point_segment_distance(verts[v], s.a, s.b);
      const double w = std::exp(-dist * dist / sigma2);
      auto [it, inserted] = by_owner.try_emplace(s.owner, w);
      if (!inserted) it->second = std::max(it->second, w);
    }
    std::vector<std::pair<int, double>> weights(by_owner.begin(), by_owner.end());
    std::sort(weights.begin(), weights.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    if (weights.size() > 4) weights.resize(4);
    const double wmax = weights.front().second;
    weights.erase(std::remove_if(weights.begin(), weights.end(),
                                 [&](const auto& p) {
                                   return p.second < 1e-4 * wmax;
                                 }),
                  weights.end());
    double sum = 0.0;
    for (const auto& [j, w] : weights) sum += w;
    for (auto& [j, w] : weights) w /= sum;
    std::sort(weights.begin(), weights.end());
    model.skin_weights[v] = std::move(weights);
  }

  // Shape blend fields: [0] global girth, [1..7] per-region girth,
  // [8] face-feature reach, [9] foot-feature reach.
  model.shape_dirs.assign(nv, {});
  {
    size_t ring_idx = 0;
    for (int v = 0; v < nv; ++v) {
      const Segment& s = segments[vertex_segment[v]];
      const bool is_pole = (v == s.start_pole) || (v == s.end_pole);
      std::vector<std::pair<int, Vec3>> dirs;
      if (!is_pole) {
        const RingVertex& rv = ring_info[ring_idx++];
        const Vec3 girth = 0.35 * rv.radial;
        dirs.emplace_back(0, girth);
        dirs.emplace_back(radial_group(tree.joint_names[s.owner]), girth);
        if (s.feature) {
          const Vec3 axis = s.b - s.a;
          const int field = tree.joint_names[s.owner] == "head" ? 8 : 9;
          dirs.emplace_back(field, 0.12 * rv.t * axis);
        }
      } else if (s.feature && v == s.end_pole) {
        const Vec3 axis = s.b - s.a;
        const int field = tree.joint_names[s.owner] == "head" ? 8 : 9;
        dirs.emplace_back(field, 0.12 * axis);
      }
      model.shape_dirs[v] = std::move(dirs);
    }
  }

  // Keypoint regressor: one-hot on marker poles. Mapped keypoints use the
  // start pole of a segment owned by their joint (at the joint center); leaf
  // keypoints use the end pole of their stalk.
  model.keypoint_regressor.assign(nk, {});
  {
    int feature_cursor = 0;
    std::vector<int> feature_segment_of_leaf(nk, -1);
    for (int si = 0; si < nseg; ++si) {
      if (!segments[si].feature) continue;
      // Feature segments were appended in keypoint order.
      while (feature_cursor < nk && tree.keypoint_joint[feature_cursor] >= 0) {
        ++feature_cursor;
      }
      feature_segment_of_leaf[feature_cursor++] = si;
    }
    for (int k = 0; k < nk; ++k) {
      const int j = tree.keypoint_joint[k];
      if (j >= 0) {
        int pole = -1;
        for (const Segment& s : segments) {
          if (s.owner == j) {
            pole = s.start_pole;
            break;
          }
        }
        if (pole < 0) {
          throw InvalidSpec("synthetic: joint " + tree.joint_names[j] +
                            " owns no segment to anchor keypoint " +
                            tree.keypoint_names[k]);
        }
        model.keypoint_regressor[k] = {{pole, 1.0}};
      } else {
        const Segment& s = segments[feature_segment_of_leaf[k]];
        model.keypoint_regressor[k] = {{s.end_pole, 1.0}};
      }
    }
  }

  model.eval_subset = spec.eval_subset;
  model.validate();

  // Marker consistency: mapped keypoints must regress exactly to their joint
  // centers in the rest pose.
  for (int k = 0; k < nk; ++k) {
    const int j = tree.keypoint_joint[k];
    const Vec3 want = j >= 0 ? tree.rest_joints[j] : site[k];
    if ((model.rest_keypoints[k] - want).norm() > 1e-9) {
      throw InvalidSpec("synthetic: keypoint marker drifted for " +
                        tree.keypoint_names[k]);
    }
  }
  return model;
}

SkinnedModel make_default_model(int vertex_budget) {
  SyntheticBodySpec spec = default_humanoid_spec();
  spec.vertex_budget = vertex_budget;
  return make_synthetic_model(spec);
}

}  // namespace kama
