#pragma once

#include <map>
#include <string>
#include <vector>

#include "kama/io.hpp"

namespace kama {

/// Synthetic data generation parameters: per-joint pose ranges, twist
/// injection for one-child joints, isotropic 3D/2D noise, similarity
/// transform ranges and the RNG seed.
struct SynthSpec {
  int num_frames = 50;
  unsigned seed = 0;
  double pose_range = 0.5;                     // radians, default per joint
  std::map<std::string, double> joint_ranges;  // overrides by joint name
  // Distribution mean pose as per-joint axis-angle offsets (empty: rest).
  // Sampled rotations are composed on top of these.
  std::map<std::string, Vec3> joint_bias;
  double twist_range = 0.0;                    // one-child twist injection
  double sigma_3d = 0.0;                       // meters
  double sigma_2d = 0.0;                       // pixels
  double scale_min = 0.8;
  double scale_max = 1.2;
  Vec3 translation_center = Vec3(0.0, -0.9, 3.0);
  Vec3 translation_extent = Vec3(0.3, 0.3, 0.5);
  CameraIntrinsics camera{1150.0, 1150.0, 500.0, 500.0};

  void validate(const SkinnedModel& model) const;
};

struct SynthData {
  std::vector<FrameRecord> frames;
  std::vector<FitRecord> ground_truth;
};

/// Samples ground-truth fit states (twist-free one-child joints unless twist
/// injection is requested, identity at unestimable joints), renders keypoints
/// through FK and the regressor, applies the similarity transform, injects
/// noise and assigns confidences exp(-|noise| / sigma_3d).
SynthData synth_generate(const SkinnedModel& model, const SynthSpec& spec);

/// The spec's distribution mean: the per-joint bias pose with one-child
/// twists stripped; the rest pose when no bias is configured.
Pose mean_pose(const SkinnedModel& model, const SynthSpec& spec);

/// Mean per-vertex error, millimeters.
double metric_mpve(const std::vector<Vec3>& pred_vertices,
                   const std::vector<Vec3>& gt_vertices);
/// Mean per-joint position error, millimeters.
double metric_mpjpe(const std::vector<Vec3>& pred_kps,
                    const std::vector<Vec3>& gt_kps);
/// MPJPE after similarity Procrustes alignment of the prediction.
double metric_pa_mpjpe(const std::vector<Vec3>& pred_kps,
                       const std::vector<Vec3>& gt_kps);

struct EvalFrame {
  int frame_id = 0;
  double mpve_mm = 0.0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double pa_mpjpe_subset_mm = 0.0;  // over the model's 14-name eval subset
  double geodesic_rad = 0.0;        // mean over estimable mapped joints
  double eval_ms = 0.0;
};

struct EvalReport {
  std::vector<EvalFrame> frames;
  double mpve_mm = 0.0;
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double pa_mpjpe_subset_mm = 0.0;
  double geodesic_rad = 0.0;
  double eval_ms = 0.0;
  std::map<std::string, double> per_joint_geodesic_rad;
};

/// Pairs prediction and ground-truth fits by frame_id and computes MPVE,
/// MPJPE, PA-MPJPE and per-joint geodesic rotation errors. Aggregates are
/// the means of the per-frame values.
EvalReport evaluate_fits(const SkinnedModel& model,
                         const std::vector<FitRecord>& fits,
                         const std::vector<FitRecord>& ground_truth);

void save_eval_report(const EvalReport& report, const std::string& path);

/// Initialization-comparison experiment: refinement from (a) the analytic
/// articulation, (b) rest pose with pelvis-rule global orientation, (c) rest
/// pose with similarity-only global alignment; all arms share the scale and
/// translation fit.
struct InitArmResult {
  std::string name;
  double mean_final_loss = 0.0;
  double mean_pa_mpjpe_mm = 0.0;
  double mean_iters_to_threshold = 0.0;  // -1 entries excluded; see report
  std::vector<double> per_frame_pa_mpjpe_mm;
  std::vector<double> per_frame_final_loss;
  std::vector<int> per_frame_iters_to_threshold;  // -1 when never reached
};

struct InitComparisonReport {
  double loss_threshold = 0.0;
  std::vector<InitArmResult> arms;  // kama, mean_pose, no_init
};

InitComparisonReport experiment_init_comparison(const SkinnedModel& model,
                                                const SynthSpec& spec,
                                                const RefineConfig& config,
                                                double loss_threshold = -1.0);

void save_init_comparison(const InitComparisonReport& report,
                          const std::string& path);

}  // namespace kama
