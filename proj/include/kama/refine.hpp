#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kama/articulate.hpp"
#include "kama/model.hpp"

namespace kama {

struct RefineConfig {
  double omega1 = 500.0;  // 3D term weight
  double omega2 = 4.78;   // shape prior weight
  double omega3 = 5.0;    // pose prior weight
  int iterations = 100;
  double step_size = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool freeze_pose = false;
  bool freeze_shape = false;
  bool freeze_scale = false;
  bool freeze_translation = false;
  double min_scale = 1e-4;

  void validate() const;
};

/// Gaussian mixture parameters over concatenated per-joint axis-angle
/// vectors of the joints listed in joint_names.
struct GmmPrior {
  std::vector<std::string> joint_names;
  std::vector<double> weights;                 // G
  std::vector<Eigen::VectorXd> means;          // G x (3*Jp)
  std::vector<Eigen::MatrixXd> precisions_cholesky;  // G x (3Jp x 3Jp), lower
};

/// Pluggable pose prior: quadratic distance to the rest pose by default, or a
/// Gaussian mixture negative log density loaded from file.
class PosePrior {
 public:
  static PosePrior quadratic_to_rest();
  static PosePrior gaussian_mixture(GmmPrior gmm);

  double value(const Pose& pose, const KinematicTree& tree) const;

  /// Adds weight * d(value)/d(delta_j) into grad (J x 3 right-tangent rows).
  void accumulate_gradient(const Pose& pose, const KinematicTree& tree,
                           double weight, Eigen::MatrixXd& grad) const;

  bool is_quadratic() const { return kind_ == Kind::quadratic; }

 private:
  enum class Kind { quadratic, gmm };
  Kind kind_ = Kind::quadratic;
  GmmPrior gmm_;

  std::vector<int> resolve_joints(const KinematicTree& tree) const;
  Eigen::VectorXd stack_pose(const Pose& pose, const std::vector<int>& idx) const;
  double gmm_neg_log(const Eigen::VectorXd& r, Eigen::VectorXd* grad_r) const;
};

/// Reprojection error, pixels^2: sum_k psi_k |P(target_k) - P(mesh kp_k)|^2.
/// Targets are the observed projections when present, else the projected
/// observed 3D positions. Throws BehindCamera when a mesh keypoint has
/// z <= 1e-6.
double loss_2d(const FitState& state, const SkinnedModel& model,
               const KeypointSet& x, const CameraIntrinsics& cam);

/// 3D error, m^2: sum_k psi_k |x_k - mesh kp_k|^2.
double loss_3d(const FitState& state, const SkinnedModel& model,
               const KeypointSet& x);

double prior_pose(const FitState& state, const SkinnedModel& model,
                  const PosePrior& prior);

/// |beta|^2.
double prior_shape(const FitState& state);

/// L_2D + omega1 * L_3D + omega3 * L_theta + omega2 * L_beta. Without a
/// camera the 2D term is absent.
double total_loss(const FitState& state, const SkinnedModel& model,
                  const KeypointSet& x,
                  const std::optional<CameraIntrinsics>& cam,
                  const RefineConfig& config, const PosePrior& prior);

/// Per-parameter gradient of total_loss. theta rows are per-joint axis-angle
/// tangents (right-multiplied increments); frozen blocks are exactly zero.
/// Throws NonFinite if any component is NaN or infinite.
struct Gradient {
  Eigen::MatrixXd theta;  // J x 3
  Eigen::VectorXd beta;   // kShapeDims
  double scale = 0.0;
  Vec3 translation = Vec3::Zero();
};

Gradient gradient(const FitState& state, const SkinnedModel& model,
                  const KeypointSet& x,
                  const std::optional<CameraIntrinsics>& cam,
                  const RefineConfig& config, const PosePrior& prior);

struct RefineResult {
  FitState state;                 // iterate with the lowest recorded loss
  double best_loss = 0.0;
  std::vector<double> loss_trace; // loss at the start of every iteration
  bool aborted = false;
  std::string diagnostic;
};

/// Adam over (theta, beta, s, t) from the given initialization. Returns the
/// best iterate and the full loss trace; on non-finite values aborts with the
/// best state so far and a diagnostic.
RefineResult refine(const FitState& initial, const SkinnedModel& model,
                    const KeypointSet& x,
                    const std::optional<CameraIntrinsics>& cam,
                    const RefineConfig& config = {},
                    const PosePrior& prior = PosePrior::quadratic_to_rest());

}  // namespace kama
