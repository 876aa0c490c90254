#include "kama/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace kama {

using nlohmann::json;

void SynthSpec::validate(const SkinnedModel& model) const {
  if (num_frames < 0) throw InvalidSpec("synth: num_frames must be >= 0");
  if (sigma_3d < 0 || sigma_2d < 0) throw InvalidSpec("synth: sigma must be >= 0");
  if (pose_range < 0 || pose_range > M_PI) {
    throw InvalidSpec("synth: pose_range must be in [0, pi]");
  }
  for (const auto& [name, range] : joint_ranges) {
    if (model.tree.joint_index(name) < 0) {
      throw InvalidSpec("synth: unknown joint in ranges: " + name);
    }
    if (range < 0 || range > M_PI) {
      throw InvalidSpec("synth: joint range must be in [0, pi]");
    }
  }
  for (const auto& [name, bias] : joint_bias) {
    if (model.tree.joint_index(name) < 0) {
      throw InvalidSpec("synth: unknown joint in bias: " + name);
    }
    if (!bias.allFinite() || bias.norm() > M_PI) {
      throw InvalidSpec("synth: joint bias must be finite with norm <= pi");
    }
  }
  if (twist_range < 0 || twist_range > M_PI) {
    throw InvalidSpec("synth: twist_range must be in [0, pi]");
  }
  if (!(scale_min > 0) || scale_max < scale_min) {
    throw InvalidSpec("synth: need 0 < scale_min <= scale_max");
  }
  if (translation_extent.minCoeff() < 0) {
    throw InvalidSpec("synth: translation extent must be >= 0");
  }
}

namespace {

// Per-keypoint articulation rule implied by the keypoint graph; mirrors the
// estimator's tags so ground truth stays in the recoverable pose family.
std::vector<JointSource> joint_tags(const KinematicTree& tree) {
  std::vector<JointSource> tags(tree.joint_count(), JointSource::zeroed);
  for (int k = 0; k < tree.keypoint_count(); ++k) {
    const int j = tree.keypoint_joint[k];
    if (j < 0) continue;
    const size_t nc = tree.keypoint_children[k].size();
    if (nc == 1) {
      tags[j] = JointSource::one_child;
    } else if (nc > 1) {
      tags[j] = JointSource::multi_child;
    }
  }
  return tags;
}

Rotation random_rotation(std::mt19937_64& rng, double max_angle) {
  if (max_angle <= 0.0) return Rotation::identity();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
  while (axis.norm() < 1e-6) axis = Vec3(gauss(rng), gauss(rng), gauss(rng));
  std::uniform_real_distribution<double> uni(-max_angle, max_angle);
  return Rotation::from_axis_angle(uni(rng) * axis.normalized());
}

}  // namespace

namespace {

// Canonical child-bone direction per one-child joint, for twist handling.
std::vector<Vec3> one_child_bone_axes(const SkinnedModel& model) {
  const KinematicTree& tree = model.tree;
  std::vector<Vec3> bone_axis(tree.joint_count(), Vec3::UnitY());
  for (int k = 0; k < tree.keypoint_count(); ++k) {
    const int j = tree.keypoint_joint[k];
    if (j < 0 || tree.keypoint_children[k].size() != 1) continue;
    const int c = tree.keypoint_children[k].front();
    bone_axis[j] =
        (model.rest_keypoints[c] - model.rest_keypoints[k]).normalized();
  }
  return bone_axis;
}

}  // namespace

Pose mean_pose(const SkinnedModel& model, const SynthSpec& spec) {
  spec.validate(model);
  const std::vector<JointSource> tags = joint_tags(model.tree);
  const std::vector<Vec3> bone_axis = one_child_bone_axes(model);
  Pose pose = Pose::rest(model.joint_count());
  for (const auto& [name, bias] : spec.joint_bias) {
    const int j = model.tree.joint_index(name);
    if (tags[j] == JointSource::zeroed) continue;
    Rotation r = Rotation::from_axis_angle(bias);
    if (tags[j] == JointSource::one_child) {
      r = swing_twist_decompose(r, bone_axis[j]).swing;
    }
    pose.local[j] = r;
  }
  return pose;
}

SynthData synth_generate(const SkinnedModel& model, const SynthSpec& spec) {
  spec.validate(model);
  const KinematicTree& tree = model.tree;
  const std::vector<JointSource> tags = joint_tags(tree);
  const std::vector<Vec3> bone_axis = one_child_bone_axes(model);
  const Pose bias_pose = mean_pose(model, spec);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SynthData out;
  for (int frame = 0; frame < spec.num_frames; ++frame) {
    FitState gt;
    gt.pose = Pose::rest(tree.joint_count());
    gt.per_joint_source = tags;
    for (int j = 0; j < tree.joint_count(); ++j) {
      if (tags[j] == JointSource::zeroed) continue;
      const auto it = spec.joint_ranges.find(tree.joint_names[j]);
      const double range = it == spec.joint_ranges.end() ? spec.pose_range : it->second;
      Rotation r = bias_pose.local[j] * random_rotation(rng, range);
      if (tags[j] == JointSource::one_child) {
        r = swing_twist_decompose(r, bone_axis[j]).swing;
        if (spec.twist_range > 0.0) {
          std::uniform_real_distribution<double> tw(-spec.twist_range,
                                                    spec.twist_range);
          r = r * Rotation::from_axis_angle(tw(rng) * bone_axis[j]);
        }
      }
      gt.pose.local[j] = r;
    }
    gt.scale = spec.scale_min + (spec.scale_max - spec.scale_min) * uni01(rng);
    gt.translation =
        spec.translation_center +
        Vec3((2.0 * uni01(rng) - 1.0) * spec.translation_extent.x(),
             (2.0 * uni01(rng) - 1.0) * spec.translation_extent.y(),
             (2.0 * uni01(rng) - 1.0) * spec.translation_extent.z());

    const std::vector<Vec3> clean = pose_keypoints(model, gt.pose, gt.shape);
    FrameRecord rec;
    rec.frame_id = frame;
    rec.camera = spec.camera;
    rec.keypoints.resize(tree.keypoint_count());
    for (int k = 0; k < tree.keypoint_count(); ++k) {
      FrameRecord::Entry& e = rec.keypoints[k];
      e.name = tree.keypoint_names[k];
      const Vec3 truth = gt.scale * clean[k] + gt.translation;
      Vec3 noise = Vec3::Zero();
      if (spec.sigma_3d > 0.0) {
        noise = spec.sigma_3d * Vec3(gauss(rng), gauss(rng), gauss(rng));
      }
      e.position = truth + noise;
      e.confidence =
          spec.sigma_3d > 0.0 ? std::exp(-noise.norm() / spec.sigma_3d) : 1.0;
      Vec2 px = perspective_project(spec.camera, truth);
      if (spec.sigma_2d > 0.0) {
        px += spec.sigma_2d * Vec2(gauss(rng), gauss(rng));
      }
      e.pixel = px;
    }
    out.frames.push_back(std::move(rec));
    out.ground_truth.push_back({frame, std::move(gt)});
  }
  return out;
}

double metric_mpve(const std::vector<Vec3>& pred_vertices,
                   const std::vector<Vec3>& gt_vertices) {
  if (pred_vertices.size() != gt_vertices.size() || pred_vertices.empty()) {
    throw SizeMismatch("metric_mpve: vertex count mismatch");
  }
  double sum = 0.0;
  for (size_t i = 0; i < pred_vertices.size(); ++i) {
    sum += (pred_vertices[i] - gt_vertices[i]).norm();
  }
  return 1000.0 * sum / static_cast<double>(pred_vertices.size());
}

double metric_mpjpe(const std::vector<Vec3>& pred_kps,
                    const std::vector<Vec3>& gt_kps) {
  if (pred_kps.size() != gt_kps.size() || pred_kps.empty()) {
    throw SizeMismatch("metric_mpjpe: keypoint count mismatch");
  }
  double sum = 0.0;
  for (size_t i = 0; i < pred_kps.size(); ++i) {
    sum += (pred_kps[i] - gt_kps[i]).norm();
  }
  return 1000.0 * sum / static_cast<double>(pred_kps.size());
}

double metric_pa_mpjpe(const std::vector<Vec3>& pred_kps,
                       const std::vector<Vec3>& gt_kps) {
  if (pred_kps.size() != gt_kps.size() || pred_kps.size() < 2) {
    throw SizeMismatch("metric_pa_mpjpe: need matching sets of >= 2 points");
  }
  const Similarity sim = procrustes_align(pred_kps, gt_kps);
  std::vector<Vec3> aligned(pred_kps.size());
  for (size_t i = 0; i < pred_kps.size(); ++i) {
    aligned[i] = sim.scale * sim.rotation.apply(pred_kps[i]) + sim.translation;
  }
  return metric_mpjpe(aligned, gt_kps);
}

namespace {

std::vector<Vec3> fit_vertices(const SkinnedModel& model, const FitState& st) {
  std::vector<Vec3> v = skin(model, st.pose, st.shape);
  for (Vec3& p : v) p = st.scale * p + st.translation;
  return v;
}

std::vector<Vec3> fit_keypoints(const SkinnedModel& model, const FitState& st) {
  std::vector<Vec3> k = pose_keypoints(model, st.pose, st.shape);
  for (Vec3& p : k) p = st.scale * p + st.translation;
  return k;
}

}  // namespace

EvalReport evaluate_fits(const SkinnedModel& model,
                         const std::vector<FitRecord>& fits,
                         const std::vector<FitRecord>& ground_truth) {
  std::map<int, const FitState*> gt_by_id;
  for (const FitRecord& rec : ground_truth) gt_by_id[rec.frame_id] = &rec.state;

  std::vector<int> subset_idx;
  for (const std::string& name : model.eval_subset) {
    subset_idx.push_back(model.tree.keypoint_index(name));
  }

  EvalReport report;
  std::vector<double> joint_geo_sum(model.joint_count(), 0.0);
  int paired = 0;
  for (const FitRecord& rec : fits) {
    const auto it = gt_by_id.find(rec.frame_id);
    if (it == gt_by_id.end()) {
      throw SizeMismatch("evaluate_fits: no ground truth for frame " +
                         std::to_string(rec.frame_id));
    }
    if (rec.state.pose.size() != model.joint_count()) {
      throw SizeMismatch("evaluate_fits: fit joint count != model");
    }
    const FitState& gt = *it->second;
    const auto t0 = std::chrono::steady_clock::now();
    EvalFrame ef;
    ef.frame_id = rec.frame_id;
    ef.mpve_mm = metric_mpve(fit_vertices(model, rec.state),
                             fit_vertices(model, gt));
    const std::vector<Vec3> pk = fit_keypoints(model, rec.state);
    const std::vector<Vec3> gk = fit_keypoints(model, gt);
    ef.mpjpe_mm = metric_mpjpe(pk, gk);
    ef.pa_mpjpe_mm = metric_pa_mpjpe(pk, gk);
    if (!subset_idx.empty()) {
      std::vector<Vec3> ps, gs;
      for (int idx : subset_idx) {
        ps.push_back(pk[idx]);
        gs.push_back(gk[idx]);
      }
      ef.pa_mpjpe_subset_mm = metric_pa_mpjpe(ps, gs);
    }
    int counted = 0;
    for (int j = 0; j < model.joint_count(); ++j) {
      if (gt.per_joint_source.empty() ||
          gt.per_joint_source[j] == JointSource::zeroed) {
        continue;
      }
      const double geo = rec.state.pose.local[j].angle_to(gt.pose.local[j]);
      joint_geo_sum[j] += geo;
      ef.geodesic_rad += geo;
      ++counted;
    }
    if (counted > 0) ef.geodesic_rad /= counted;
    ef.eval_ms = std::chrono::duration<double, std::milli>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
    report.frames.push_back(ef);
    ++paired;
  }
  if (paired > 0) {
    for (const EvalFrame& f : report.frames) {
      report.mpve_mm += f.mpve_mm;
      report.mpjpe_mm += f.mpjpe_mm;
      report.pa_mpjpe_mm += f.pa_mpjpe_mm;
      report.pa_mpjpe_subset_mm += f.pa_mpjpe_subset_mm;
      report.geodesic_rad += f.geodesic_rad;
      report.eval_ms += f.eval_ms;
    }
    report.mpve_mm /= paired;
    report.mpjpe_mm /= paired;
    report.pa_mpjpe_mm /= paired;
    report.pa_mpjpe_subset_mm /= paired;
    report.geodesic_rad /= paired;
    report.eval_ms /= paired;
    for (int j = 0; j < model.joint_count(); ++j) {
      if (joint_geo_sum[j] > 0.0) {
        report.per_joint_geodesic_rad[model.tree.joint_names[j]] =
            joint_geo_sum[j] / paired;
      }
    }
  }
  return report;
}

void save_eval_report(const EvalReport& report, const std::string& path) {
  json j;
  json frames = json::array();
  for (const EvalFrame& f : report.frames) {
    frames.push_back({{"frame_id", f.frame_id},
                      {"mpve_mm", f.mpve_mm},
                      {"mpjpe_mm", f.mpjpe_mm},
                      {"pa_mpjpe_mm", f.pa_mpjpe_mm},
                      {"pa_mpjpe_subset_mm", f.pa_mpjpe_subset_mm},
                      {"geodesic_rad", f.geodesic_rad},
                      {"eval_ms", f.eval_ms}});
  }
  j["frames"] = std::move(frames);
  j["aggregate"] = {{"mpve_mm", report.mpve_mm},
                    {"mpjpe_mm", report.mpjpe_mm},
                    {"pa_mpjpe_mm", report.pa_mpjpe_mm},
                    {"pa_mpjpe_subset_mm", report.pa_mpjpe_subset_mm},
                    {"geodesic_rad", report.geodesic_rad},
                    {"eval_ms", report.eval_ms}};
  j["per_joint_geodesic_rad"] = report.per_joint_geodesic_rad;
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

InitComparisonReport experiment_init_comparison(const SkinnedModel& model,
                                                const SynthSpec& spec,
                                                const RefineConfig& config,
                                                double loss_threshold) {
  const SynthData data = synth_generate(model, spec);
  const PosePrior prior = PosePrior::quadratic_to_rest();

  struct Arm {
    std::string name;
    std::vector<FitState> inits;
  };
  std::vector<Arm> arms(3);
  arms[0].name = "kama";
  arms[1].name = "mean_pose";
  arms[2].name = "no_init";

  const int root_joint = model.tree.root;
  for (const FrameRecord& frame : data.frames) {
    const KeypointSet x = to_keypoint_set(frame);
    arms[0].inits.push_back(articulate(model, x));

    // Mean pose (the sampling distribution's mean; rest when unbiased);
    // global orientation from the pelvis rule; scale/translation from the
    // closed-form fit at that pose.
    {
      const KeypointRotations est =
          estimate_global_rotations(x, model.rest_keypoints, model.tree);
      FitState init;
      init.pose = mean_pose(model, spec);
      int root_kp = -1;
      for (int k = 0; k < model.keypoint_count(); ++k) {
        if (model.tree.keypoint_parent[k] == -1) root_kp = k;
      }
      init.pose.local[root_joint] = est.global[root_kp];
      init.per_joint_source.assign(model.joint_count(), JointSource::zeroed);
      const ScaleTranslation st =
          fit_global_scale_translation(model, init.pose, x);
      init.scale = std::max(1e-4, st.scale);
      init.translation = st.translation;
      arms[1].inits.push_back(std::move(init));
    }

    // Rest pose; similarity-only global alignment of the canonical keypoints.
    {
      FitState init;
      init.pose = Pose::rest(model.joint_count());
      const Similarity sim = procrustes_align(model.rest_keypoints, x.positions);
      init.pose.local[root_joint] = sim.rotation;
      init.per_joint_source.assign(model.joint_count(), JointSource::zeroed);
      const ScaleTranslation st =
          fit_global_scale_translation(model, init.pose, x);
      init.scale = std::max(1e-4, st.scale);
      init.translation = st.translation;
      arms[2].inits.push_back(std::move(init));
    }
  }

  InitComparisonReport report;
  std::vector<std::vector<RefineResult>> results(arms.size());
  for (size_t a = 0; a < arms.size(); ++a) {
    for (size_t i = 0; i < data.frames.size(); ++i) {
      const KeypointSet x = to_keypoint_set(data.frames[i]);
      results[a].push_back(refine(arms[a].inits[i], model, x,
                                  data.frames[i].camera, config, prior));
    }
  }

  if (loss_threshold <= 0.0) {
    double mean_kama = 0.0;
    for (const RefineResult& r : results[0]) mean_kama += r.best_loss;
    if (!results[0].empty()) mean_kama /= static_cast<double>(results[0].size());
    loss_threshold = 2.0 * mean_kama;
  }
  report.loss_threshold = loss_threshold;

  for (size_t a = 0; a < arms.size(); ++a) {
    InitArmResult arm;
    arm.name = arms[a].name;
    int reached = 0;
    for (size_t i = 0; i < results[a].size(); ++i) {
      const RefineResult& r = results[a][i];
      const std::vector<Vec3> pk = fit_keypoints(model, r.state);
      const std::vector<Vec3> gk =
          fit_keypoints(model, data.ground_truth[i].state);
      const double pa = metric_pa_mpjpe(pk, gk);
      arm.per_frame_pa_mpjpe_mm.push_back(pa);
      arm.per_frame_final_loss.push_back(r.best_loss);
      int iters = -1;
      for (size_t it = 0; it < r.loss_trace.size(); ++it) {
        if (r.loss_trace[it] <= loss_threshold) {
          iters = static_cast<int>(it);
          break;
        }
      }
      arm.per_frame_iters_to_threshold.push_back(iters);
      arm.mean_final_loss += r.best_loss;
      arm.mean_pa_mpjpe_mm += pa;
      if (iters >= 0) {
        arm.mean_iters_to_threshold += iters;
        ++reached;
      }
    }
    const double n = static_cast<double>(results[a].size());
    if (n > 0) {
      arm.mean_final_loss /= n;
      arm.mean_pa_mpjpe_mm /= n;
    }
    arm.mean_iters_to_threshold =
        reached > 0 ? arm.mean_iters_to_threshold / reached : -1.0;
    report.arms.push_back(std::move(arm));
  }
  return report;
}

void save_init_comparison(const InitComparisonReport& report,
                          const std::string& path) {
  json j;
  j["loss_threshold"] = report.loss_threshold;
  json arms = json::array();
  for (const InitArmResult& arm : report.arms) {
    arms.push_back({{"name", arm.name},
                    {"mean_final_loss", arm.mean_final_loss},
                    {"mean_pa_mpjpe_mm", arm.mean_pa_mpjpe_mm},
                    {"mean_iters_to_threshold", arm.mean_iters_to_threshold},
                    {"per_frame_pa_mpjpe_mm", arm.per_frame_pa_mpjpe_mm},
                    {"per_frame_final_loss", arm.per_frame_final_loss},
                    {"per_frame_iters_to_threshold", arm.per_frame_iters_to_threshold}});
  }
  j["arms"] = std::move(arms);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace kama
