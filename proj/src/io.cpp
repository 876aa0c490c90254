#include "kama/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kama {

using nlohmann::json;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) {
    throw ParseError(what + ": expected [x, y, z]");
  }
  Vec3 v(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  if (!v.allFinite()) throw ParseError(what + ": non-finite value");
  return v;
}

double finite_number(const json& j, const std::string& what) {
  if (!j.is_number()) throw ParseError(what + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(what + ": non-finite value");
  return v;
}

}  // namespace

SkinnedModel load_model(const std::string& path) {
  const json j = read_json(path);
  SkinnedModel model;
  try {
    for (const json& joint : j.at("joints")) {
      model.tree.joint_names.push_back(joint.at("name").get<std::string>());
      model.tree.parent.push_back(joint.at("parent").get<int>());
      model.tree.rest_joints.push_back(
          vec3_from_json(joint.at("position"), "joint position"));
    }
    const json& kmap = j.at("keypoint_map");
    const int nk = static_cast<int>(kmap.size());
    model.tree.keypoint_names.assign(nk, {});
    model.tree.keypoint_joint.assign(nk, -1);
    model.tree.keypoint_parent.assign(nk, -1);
    std::set<int> seen;
    for (const json& e : kmap) {
      const int k = e.at("keypoint").get<int>();
      if (k < 0 || k >= nk || !seen.insert(k).second) {
        throw ParseError(path + ": keypoint_map must list every keypoint index exactly once");
      }
      model.tree.keypoint_names[k] = e.at("name").get<std::string>();
      model.tree.keypoint_joint[k] = e.at("joint").get<int>();
      model.tree.keypoint_parent[k] = e.at("parent").get<int>();
    }
    for (const json& v : j.at("vertices")) {
      model.rest_vertices.push_back(vec3_from_json(v, "vertex"));
    }
    for (const json& f : j.at("faces")) {
      if (!f.is_array() || f.size() != 3) {
        throw ParseError(path + ": face entries must be [a, b, c]");
      }
      model.faces.push_back({f[0].get<int>(), f[1].get<int>(), f[2].get<int>()});
    }
    const int nv = model.vertex_count();
    model.skin_weights.assign(nv, {});
    for (const json& t : j.at("skin_weights")) {
      if (!t.is_array() || t.size() != 3) {
        throw ParseError(path + ": skin_weights entries must be [vertex, joint, w]");
      }
      const int v = t[0].get<int>();
      if (v < 0 || v >= nv) throw ParseError(path + ": skin weight vertex index");
      model.skin_weights[v].emplace_back(t[1].get<int>(),
                                         finite_number(t[2], "skin weight"));
    }
    model.shape_dirs.assign(nv, {});
    for (const json& t : j.at("shape_dirs")) {
      if (!t.is_array() || t.size() != 4) {
        throw ParseError(path + ": shape_dirs entries must be [vertex, axis, blend, value]");
      }
      const int v = t[0].get<int>();
      const int axis = t[1].get<int>();
      const int b = t[2].get<int>();
      if (v < 0 || v >= nv || axis < 0 || axis > 2) {
        throw ParseError(path + ": shape_dirs index out of range");
      }
      auto& dirs = model.shape_dirs[v];
      auto it = std::find_if(dirs.begin(), dirs.end(),
                             [&](const auto& p) { return p.first == b; });
      if (it == dirs.end()) {
        dirs.emplace_back(b, Vec3::Zero());
        it = std::prev(dirs.end());
      }
      it->second[axis] = finite_number(t[3], "shape dir");
    }
    model.keypoint_regressor.assign(nk, {});
    for (const json& t : j.at("W")) {
      if (!t.is_array() || t.size() != 3) {
        throw ParseError(path + ": W entries must be [keypoint, vertex, w]");
      }
      const int k = t[0].get<int>();
      if (k < 0 || k >= nk) throw ParseError(path + ": W keypoint index");
      model.keypoint_regressor[k].emplace_back(t[1].get<int>(),
                                               finite_number(t[2], "W weight"));
    }
    if (j.contains("eval_subset")) {
      for (const json& name : j.at("eval_subset")) {
        model.eval_subset.push_back(name.get<std::string>());
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return model;
}

void save_model(const SkinnedModel& model, const std::string& path) {
  json j;
  j["format"] = "kama-model";
  json joints = json::array();
  for (int i = 0; i < model.joint_count(); ++i) {
    joints.push_back({{"name", model.tree.joint_names[i]},
                      {"parent", model.tree.parent[i]},
                      {"position", vec3_to_json(model.tree.rest_joints[i])}});
  }
  j["joints"] = std::move(joints);
  json kmap = json::array();
  for (int k = 0; k < model.keypoint_count(); ++k) {
    kmap.push_back({{"keypoint", k},
                    {"name", model.tree.keypoint_names[k]},
                    {"joint", model.tree.keypoint_joint[k]},
                    {"parent", model.tree.keypoint_parent[k]}});
  }
  j["keypoint_map"] = std::move(kmap);
  j["eval_subset"] = model.eval_subset;
  json verts = json::array();
  for (const Vec3& v : model.rest_vertices) verts.push_back(vec3_to_json(v));
  j["vertices"] = std::move(verts);
  json faces = json::array();
  for (const auto& f : model.faces) faces.push_back({f[0], f[1], f[2]});
  j["faces"] = std::move(faces);
  json sw = json::array();
  for (int v = 0; v < model.vertex_count(); ++v) {
    for (const auto& [joint, w] : model.skin_weights[v]) {
      sw.push_back({v, joint, w});
    }
  }
  j["skin_weights"] = std::move(sw);
  json sd = json::array();
  for (int v = 0; v < model.vertex_count(); ++v) {
    for (const auto& [b, dir] : model.shape_dirs[v]) {
      for (int axis = 0; axis < 3; ++axis) {
        if (dir[axis] != 0.0) sd.push_back({v, axis, b, dir[axis]});
      }
    }
  }
  j["shape_dirs"] = std::move(sd);
  json w = json::array();
  for (int k = 0; k < model.keypoint_count(); ++k) {
    for (const auto& [v, weight] : model.keypoint_regressor[k]) {
      w.push_back({k, v, weight});
    }
  }
  j["W"] = std::move(w);
  write_json(j, path);
}

std::vector<FrameRecord> load_frames(const std::string& path,
                                     const std::vector<std::string>& keypoint_names) {
  const json j = read_json(path);
  std::map<std::string, int> name_to_index;
  for (size_t i = 0; i < keypoint_names.size(); ++i) {
    name_to_index[keypoint_names[i]] = static_cast<int>(i);
  }
  const int nk = static_cast<int>(keypoint_names.size());
  std::vector<FrameRecord> out;
  std::set<int> ids;
  try {
    for (const json& f : j.at("frames")) {
      FrameRecord rec;
      rec.frame_id = f.at("frame_id").get<int>();
      const std::string ctx = path + ": frame " + std::to_string(rec.frame_id);
      if (!ids.insert(rec.frame_id).second) {
        throw ParseError(ctx + ": duplicate frame_id");
      }
      const json& kps = f.at("keypoints");
      if (static_cast<int>(kps.size()) != nk) {
        throw ParseError(ctx + ": expected " + std::to_string(nk) +
                         " keypoints, got " + std::to_string(kps.size()));
      }
      rec.keypoints.assign(nk, {});
      std::vector<bool> filled(nk, false);
      for (const json& e : kps) {
        FrameRecord::Entry entry;
        entry.name = e.at("name").get<std::string>();
        const auto it = name_to_index.find(entry.name);
        if (it == name_to_index.end()) {
          throw UnknownKeypointName(ctx + ": unknown keypoint name '" +
                                    entry.name + "'");
        }
        entry.position = Vec3(finite_number(e.at("x"), ctx + " x"),
                              finite_number(e.at("y"), ctx + " y"),
                              finite_number(e.at("z"), ctx + " z"));
        entry.confidence = finite_number(e.at("confidence"), ctx + " confidence");
        if (entry.confidence < 0.0 || entry.confidence > 1.0) {
          throw ParseError(ctx + ": confidence outside [0, 1] for '" +
                           entry.name + "'");
        }
        const bool has_u = e.contains("u");
        const bool has_v = e.contains("v");
        if (has_u != has_v) {
          throw ParseError(ctx + ": u and v must appear together");
        }
        if (has_u) {
          entry.pixel = Vec2(finite_number(e.at("u"), ctx + " u"),
                             finite_number(e.at("v"), ctx + " v"));
        }
        if (filled[it->second]) {
          throw ParseError(ctx + ": duplicate keypoint '" + entry.name + "'");
        }
        filled[it->second] = true;
        rec.keypoints[it->second] = std::move(entry);
      }
      if (f.contains("camera")) {
        const json& c = f.at("camera");
        try {
          rec.camera = CameraIntrinsics(
              finite_number(c.at("fx"), ctx + " fx"),
              finite_number(c.at("fy"), ctx + " fy"),
              finite_number(c.at("cx"), ctx + " cx"),
              finite_number(c.at("cy"), ctx + " cy"));
        } catch (const DegenerateInput& e) {
          throw ParseError(ctx + ": " + e.what());
        }
      }
      out.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  std::sort(out.begin(), out.end(),
            [](const FrameRecord& a, const FrameRecord& b) {
              return a.frame_id < b.frame_id;
            });
  return out;
}

void save_frames(const std::vector<FrameRecord>& frames, const std::string& path) {
  json j;
  j["format"] = "kama-frames";
  json arr = json::array();
  for (const FrameRecord& f : frames) {
    json kps = json::array();
    for (const FrameRecord::Entry& e : f.keypoints) {
      json entry = {{"name", e.name},
                    {"x", e.position.x()},
                    {"y", e.position.y()},
                    {"z", e.position.z()},
                    {"confidence", e.confidence}};
      if (e.pixel) {
        entry["u"] = e.pixel->x();
        entry["v"] = e.pixel->y();
      }
      kps.push_back(std::move(entry));
    }
    json frame = {{"frame_id", f.frame_id}, {"keypoints", std::move(kps)}};
    if (f.camera) {
      frame["camera"] = {{"fx", f.camera->fx},
                         {"fy", f.camera->fy},
                         {"cx", f.camera->cx},
                         {"cy", f.camera->cy}};
    }
    arr.push_back(std::move(frame));
  }
  j["frames"] = std::move(arr);
  write_json(j, path);
}

KeypointSet to_keypoint_set(const FrameRecord& frame) {
  KeypointSet x;
  bool any_pixel = false;
  for (const FrameRecord::Entry& e : frame.keypoints) {
    x.positions.push_back(e.position);
    x.confidence.push_back(e.confidence);
    if (e.pixel) any_pixel = true;
  }
  if (any_pixel) {
    std::vector<Vec2> px;
    for (const FrameRecord::Entry& e : frame.keypoints) {
      px.push_back(e.pixel.value_or(Vec2::Zero()));
    }
    x.projected_2d = std::move(px);
  }
  return x;
}

void write_obj(const std::vector<Vec3>& vertices,
               const std::vector<std::array<int, 3>>& faces,
               const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  char line[128];
  for (const Vec3& v : vertices) {
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out << line;
  }
  for (const auto& f : faces) {
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

void write_fit(const std::vector<FitRecord>& states, const std::string& path) {
  json j;
  j["format"] = "kama-fits";
  json arr = json::array();
  for (const FitRecord& rec : states) {
    json theta = json::array();
    for (const Rotation& r : rec.state.pose.local) {
      theta.push_back(vec3_to_json(r.axis_angle()));
    }
    json beta = json::array();
    for (int i = 0; i < rec.state.shape.beta.size(); ++i) {
      beta.push_back(rec.state.shape.beta[i]);
    }
    json sources = json::array();
    for (JointSource s : rec.state.per_joint_source) {
      sources.push_back(to_string(s));
    }
    arr.push_back({{"frame_id", rec.frame_id},
                   {"theta", std::move(theta)},
                   {"beta", std::move(beta)},
                   {"s", rec.state.scale},
                   {"t", vec3_to_json(rec.state.translation)},
                   {"per_joint_source", std::move(sources)}});
  }
  j["frames"] = std::move(arr);
  write_json(j, path);
}

std::vector<FitRecord> load_fit(const std::string& path) {
  const json j = read_json(path);
  std::vector<FitRecord> out;
  try {
    for (const json& f : j.at("frames")) {
      FitRecord rec;
      rec.frame_id = f.at("frame_id").get<int>();
      const std::string ctx = path + ": frame " + std::to_string(rec.frame_id);
      for (const json& aa : f.at("theta")) {
        rec.state.pose.local.push_back(
            Rotation::from_axis_angle(vec3_from_json(aa, ctx + " theta")));
      }
      const json& beta = f.at("beta");
      if (static_cast<int>(beta.size()) != kShapeDims) {
        throw ParseError(ctx + ": beta must have 10 entries");
      }
      rec.state.shape.beta.resize(kShapeDims);
      for (int i = 0; i < kShapeDims; ++i) {
        rec.state.shape.beta[i] = finite_number(beta[i], ctx + " beta");
      }
      rec.state.scale = finite_number(f.at("s"), ctx + " s");
      if (!(rec.state.scale > 0.0)) {
        throw ParseError(ctx + ": scale must be positive");
      }
      rec.state.translation = vec3_from_json(f.at("t"), ctx + " t");
      for (const json& s : f.at("per_joint_source")) {
        rec.state.per_joint_source.push_back(
            joint_source_from_string(s.get<std::string>()));
      }
      if (rec.state.per_joint_source.size() != rec.state.pose.local.size()) {
        throw ParseError(ctx + ": per_joint_source length != theta length");
      }
      out.push_back(std::move(rec));
    }
    if (!out.empty()) {
      for (const FitRecord& rec : out) {
        if (rec.state.pose.local.size() != out.front().state.pose.local.size()) {
          throw ParseError(path + ": inconsistent joint counts across frames");
        }
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return out;
}

PosePrior load_gmm_prior(const std::string& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const ParseError& e) {
    throw PriorLoadError(e.what());
  }
  GmmPrior gmm;
  try {
    for (const json& name : j.at("joint_names")) {
      gmm.joint_names.push_back(name.get<std::string>());
    }
    const int d = 3 * static_cast<int>(gmm.joint_names.size());
    for (const json& w : j.at("weights")) gmm.weights.push_back(w.get<double>());
    for (const json& mean : j.at("means")) {
      Eigen::VectorXd m(d);
      if (static_cast<int>(mean.size()) != d) {
        throw PriorLoadError(path + ": mean length != 3 * joint count");
      }
      for (int i = 0; i < d; ++i) m[i] = mean[i].get<double>();
      gmm.means.push_back(std::move(m));
    }
    for (const json& chol : j.at("precisions_cholesky")) {
      if (static_cast<int>(chol.size()) != d * d) {
        throw PriorLoadError(path + ": cholesky factor must be flattened d*d");
      }
      Eigen::MatrixXd l(d, d);
      for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) l(r, c) = chol[r * d + c].get<double>();
      }
      gmm.precisions_cholesky.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw PriorLoadError(path + ": " + e.what());
  }
  return PosePrior::gaussian_mixture(std::move(gmm));
}

}  // namespace kama
