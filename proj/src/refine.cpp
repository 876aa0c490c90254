#include "kama/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kama {

void RefineConfig::validate() const {
  if (omega1 < 0 || omega2 < 0 || omega3 < 0) {
    throw InvalidSpec("refine config: weights must be >= 0");
  }
  if (iterations < 1) throw InvalidSpec("refine config: iterations >= 1");
  if (!(step_size > 0)) throw InvalidSpec("refine config: step_size > 0");
}

PosePrior PosePrior::quadratic_to_rest() { return PosePrior(); }

PosePrior PosePrior::gaussian_mixture(GmmPrior gmm) {
  const size_t g = gmm.weights.size();
  if (g == 0 || gmm.joint_names.empty()) {
    throw PriorLoadError("gmm prior: empty mixture");
  }
  if (gmm.means.size() != g || gmm.precisions_cholesky.size() != g) {
    throw PriorLoadError("gmm prior: component count mismatch");
  }
  const int d = 3 * static_cast<int>(gmm.joint_names.size());
  double wsum = 0.0;
  for (double w : gmm.weights) {
    if (!(w > 0.0)) throw PriorLoadError("gmm prior: weights must be > 0");
    wsum += w;
  }
  for (size_t i = 0; i < g; ++i) {
    if (gmm.means[i].size() != d) {
      throw PriorLoadError("gmm prior: mean length != 3 * joint count");
    }
    const Eigen::MatrixXd& l = gmm.precisions_cholesky[i];
    if (l.rows() != d || l.cols() != d) {
      throw PriorLoadError("gmm prior: cholesky factor shape");
    }
    for (int r = 0; r < d; ++r) {
      if (!(l(r, r) > 0.0)) {
        throw PriorLoadError("gmm prior: cholesky diagonal must be positive");
      }
      for (int c = r + 1; c < d; ++c) {
        if (l(r, c) != 0.0) {
          throw PriorLoadError("gmm prior: cholesky factor must be lower triangular");
        }
      }
    }
  }
  for (double& w : gmm.weights) w /= wsum;
  PosePrior p;
  p.kind_ = Kind::gmm;
  p.gmm_ = std::move(gmm);
  return p;
}

std::vector<int> PosePrior::resolve_joints(const KinematicTree& tree) const {
  std::vector<int> idx;
  idx.reserve(gmm_.joint_names.size());
  for (const std::string& name : gmm_.joint_names) {
    const int j = tree.joint_index(name);
    if (j < 0) {
      throw SizeMismatch("gmm prior: model has no joint named " + name);
    }
    idx.push_back(j);
  }
  return idx;
}

Eigen::VectorXd PosePrior::stack_pose(const Pose& pose,
                                      const std::vector<int>& idx) const {
  Eigen::VectorXd r(3 * idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    r.segment<3>(3 * i) = pose.local[idx[i]].axis_angle();
  }
  return r;
}

double PosePrior::gmm_neg_log(const Eigen::VectorXd& r,
                              Eigen::VectorXd* grad_r) const {
  const int d = static_cast<int>(r.size());
  const size_t g = gmm_.weights.size();
  Eigen::VectorXd logp(g);
  for (size_t i = 0; i < g; ++i) {
    const Eigen::MatrixXd& l = gmm_.precisions_cholesky[i];
    const Eigen::VectorXd diff = r - gmm_.means[i];
    const double q = (l.transpose() * diff).squaredNorm();
    double logdet = 0.0;
    for (int k = 0; k < d; ++k) logdet += std::log(l(k, k));
    logp[i] = std::log(gmm_.weights[i]) + logdet -
              0.5 * d * std::log(2.0 * M_PI) - 0.5 * q;
  }
  const double m = logp.maxCoeff();
  const double lse = m + std::log((logp.array() - m).exp().sum());
  if (grad_r) {
    grad_r->setZero(d);
    for (size_t i = 0; i < g; ++i) {
      const double resp = std::exp(logp[i] - lse);
      const Eigen::MatrixXd& l = gmm_.precisions_cholesky[i];
      const Eigen::VectorXd diff = r - gmm_.means[i];
      *grad_r += resp * (l * (l.transpose() * diff));
    }
  }
  return -lse;
}

double PosePrior::value(const Pose& pose, const KinematicTree& tree) const {
  if (kind_ == Kind::quadratic) {
    // Body-pose prior: the root (global orientation) is not penalized.
    double sum = 0.0;
    for (int j = 0; j < pose.size(); ++j) {
      if (j == tree.root) continue;
      sum += pose.local[j].axis_angle().squaredNorm();
    }
    return sum;
  }
  return gmm_neg_log(stack_pose(pose, resolve_joints(tree)), nullptr);
}

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Inverse right Jacobian of the SO(3) log: d log(R exp(dh)) / d dh at dh = 0.
Mat3 inverse_right_jacobian(const Vec3& r) {
  const double theta = r.norm();
  const Mat3 rx = skew(r);
  if (theta < 1e-8) {
    return Mat3::Identity() + 0.5 * rx + (1.0 / 12.0) * rx * rx;
  }
  const double c =
      1.0 / (theta * theta) -
      (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::Identity() + 0.5 * rx + c * rx * rx;
}

}  // namespace

void PosePrior::accumulate_gradient(const Pose& pose, const KinematicTree& tree,
                                    double weight, Eigen::MatrixXd& grad) const {
  if (weight == 0.0) return;
  if (kind_ == Kind::quadratic) {
    // d|log(L exp(dh))|^2 / d dh = 2 * axis_angle(L): the inverse Jacobian
    // fixes its own axis and the perpendicular parts cancel.
    for (int j = 0; j < pose.size(); ++j) {
      if (j == tree.root) continue;
      grad.row(j) += weight * 2.0 * pose.local[j].axis_angle().transpose();
    }
    return;
  }
  const std::vector<int> idx = resolve_joints(tree);
  const Eigen::VectorXd r = stack_pose(pose, idx);
  Eigen::VectorXd grad_r;
  gmm_neg_log(r, &grad_r);
  for (size_t i = 0; i < idx.size(); ++i) {
    const Vec3 ri = r.segment<3>(3 * i);
    const Vec3 gi = grad_r.segment<3>(3 * i);
    grad.row(idx[i]) +=
        weight * (inverse_right_jacobian(ri).transpose() * gi).transpose();
  }
}

namespace {

struct MeshKeypoints {
  std::vector<Vec3> points;  // s * y_k + t
  FkResult fk;
};

MeshKeypoints mesh_keypoints(const FitState& state, const SkinnedModel& model) {
  MeshKeypoints out;
  out.fk = forward_kinematics(model.tree, state.pose);
  out.points.assign(model.keypoint_count(), Vec3::Zero());
  for (int k = 0; k < model.keypoint_count(); ++k) {
    Vec3 y = Vec3::Zero();
    for (const auto& [v, wv] : model.keypoint_regressor[k]) {
      Vec3 shaped = model.rest_vertices[v];
      for (const auto& [b, dir] : model.shape_dirs[v]) {
        shaped += state.shape.beta[b] * dir;
      }
      for (const auto& [j, wj] : model.skin_weights[v]) {
        y += wv * wj *
             (out.fk.rotation[j].apply(shaped - model.tree.rest_joints[j]) +
              out.fk.position[j]);
      }
    }
    out.points[k] = state.scale * y + state.translation;
  }
  return out;
}

std::vector<Vec2> targets_2d(const KeypointSet& x, const CameraIntrinsics& cam) {
  if (x.projected_2d) return *x.projected_2d;
  std::vector<Vec2> t(x.positions.size());
  for (size_t k = 0; k < x.positions.size(); ++k) {
    t[k] = perspective_project(cam, x.positions[k]);
  }
  return t;
}

}  // namespace

double loss_2d(const FitState& state, const SkinnedModel& model,
               const KeypointSet& x, const CameraIntrinsics& cam) {
  x.validate(model.keypoint_count());
  const MeshKeypoints mk = mesh_keypoints(state, model);
  const std::vector<Vec2> target = targets_2d(x, cam);
  double sum = 0.0;
  for (int k = 0; k < model.keypoint_count(); ++k) {
    if (mk.points[k].z() <= 1e-6) {
      throw BehindCamera("loss_2d: mesh keypoint behind the camera");
    }
    sum += x.confidence[k] *
           (perspective_project(cam, mk.points[k]) - target[k]).squaredNorm();
  }
  return sum;
}

double loss_3d(const FitState& state, const SkinnedModel& model,
               const KeypointSet& x) {
  x.validate(model.keypoint_count());
  const MeshKeypoints mk = mesh_keypoints(state, model);
  double sum = 0.0;
  for (int k = 0; k < model.keypoint_count(); ++k) {
    sum += x.confidence[k] * (x.positions[k] - mk.points[k]).squaredNorm();
  }
  return sum;
}

double prior_pose(const FitState& state, const SkinnedModel& model,
                  const PosePrior& prior) {
  return prior.value(state.pose, model.tree);
}

double prior_shape(const FitState& state) { return state.shape.beta.squaredNorm(); }

double total_loss(const FitState& state, const SkinnedModel& model,
                  const KeypointSet& x,
                  const std::optional<CameraIntrinsics>& cam,
                  const RefineConfig& config, const PosePrior& prior) {
  double sum = config.omega1 * loss_3d(state, model, x) +
               config.omega3 * prior_pose(state, model, prior) +
               config.omega2 * prior_shape(state);
  if (cam) sum += loss_2d(state, model, x, *cam);
  return sum;
}

Gradient gradient(const FitState& state, const SkinnedModel& model,
                  const KeypointSet& x,
                  const std::optional<CameraIntrinsics>& cam,
                  const RefineConfig& config, const PosePrior& prior) {
  x.validate(model.keypoint_count());
  const int nj = model.joint_count();
  Gradient g;
  g.theta = Eigen::MatrixXd::Zero(nj, 3);
  g.beta = Eigen::VectorXd::Zero(kShapeDims);
  g.scale = 0.0;
  g.translation = Vec3::Zero();

  const MeshKeypoints mk = mesh_keypoints(state, model);
  std::vector<Vec2> target;
  if (cam) target = targets_2d(x, *cam);

  // dL/d(mesh keypoint k) for the two data terms.
  std::vector<Vec3> gk(model.keypoint_count(), Vec3::Zero());
  for (int k = 0; k < model.keypoint_count(); ++k) {
    const Vec3& p = mk.points[k];
    gk[k] = 2.0 * config.omega1 * x.confidence[k] * (p - x.positions[k]);
    if (cam) {
      if (p.z() <= 1e-6) {
        throw BehindCamera("gradient: mesh keypoint behind the camera");
      }
      const Vec2 res = perspective_project(*cam, p) - target[k];
      Eigen::Matrix<double, 2, 3> jp;
      jp << cam->fx / p.z(), 0, -cam->fx * p.x() / (p.z() * p.z()), 0,
          cam->fy / p.z(), -cam->fy * p.y() / (p.z() * p.z());
      gk[k] += 2.0 * x.confidence[k] * (jp.transpose() * res);
    }
  }

  for (int k = 0; k < model.keypoint_count(); ++k) {
    const Vec3& gkk = gk[k];
    for (const auto& [v, wv] : model.keypoint_regressor[k]) {
      Vec3 shaped = model.rest_vertices[v];
      for (const auto& [b, dir] : model.shape_dirs[v]) {
        shaped += state.shape.beta[b] * dir;
      }
      for (const auto& [j, wj] : model.skin_weights[v]) {
        const double w = wv * wj;
        const Vec3 yvb =
            mk.fk.rotation[j].apply(shaped - model.tree.rest_joints[j]) +
            mk.fk.position[j];
        g.scale += gkk.dot(w * yvb);
        g.translation += w * gkk;
        for (const auto& [b, dir] : model.shape_dirs[v]) {
          g.beta[b] += state.scale * w * gkk.dot(mk.fk.rotation[j].apply(dir));
        }
        // Rotation of any ancestor a (including j) moves this point by
        // G_a (delta x u), u = G_a^T (y - p_a).
        for (int a = j; a != -1; a = model.tree.parent[a]) {
          const Vec3 u = mk.fk.rotation[a].inverse().apply(yvb - mk.fk.position[a]);
          const Vec3 gr = mk.fk.rotation[a].inverse().apply(gkk);
          g.theta.row(a) += state.scale * w * u.cross(gr).transpose();
        }
      }
    }
  }

  prior.accumulate_gradient(state.pose, model.tree, config.omega3, g.theta);
  g.beta += config.omega2 * 2.0 * state.shape.beta;

  if (config.freeze_pose) g.theta.setZero();
  if (config.freeze_shape) g.beta.setZero();
  if (config.freeze_scale) g.scale = 0.0;
  if (config.freeze_translation) g.translation.setZero();

  if (!g.theta.allFinite() || !g.beta.allFinite() ||
      !std::isfinite(g.scale) || !g.translation.allFinite()) {
    throw NonFinite("gradient: non-finite component");
  }
  return g;
}

RefineResult refine(const FitState& initial, const SkinnedModel& model,
                    const KeypointSet& x,
                    const std::optional<CameraIntrinsics>& cam,
                    const RefineConfig& config, const PosePrior& prior) {
  config.validate();
  x.validate(model.keypoint_count());
  const int nj = model.joint_count();
  const int dim = 3 * nj + kShapeDims + 1 + 3;

  FitState cur = initial;
  RefineResult out;
  out.state = initial;
  out.best_loss = std::numeric_limits<double>::infinity();
  out.loss_trace.reserve(config.iterations);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);

  const auto track_best = [&](double loss, const FitState& s) {
    if (loss < out.best_loss) {
      out.best_loss = loss;
      out.state = s;
    }
  };

  try {
    for (int it = 0; it < config.iterations; ++it) {
      const double loss = total_loss(cur, model, x, cam, config, prior);
      if (!std::isfinite(loss)) throw NonFinite("refine: non-finite loss");
      out.loss_trace.push_back(loss);
      track_best(loss, cur);

      const Gradient g = gradient(cur, model, x, cam, config, prior);
      Eigen::VectorXd flat(dim);
      for (int j = 0; j < nj; ++j) flat.segment<3>(3 * j) = g.theta.row(j);
      flat.segment(3 * nj, kShapeDims) = g.beta;
      flat[3 * nj + kShapeDims] = g.scale;
      flat.tail<3>() = g.translation;

      m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * flat;
      v = config.adam_beta2 * v +
          (1.0 - config.adam_beta2) * flat.cwiseProduct(flat);
      const double bc1 = 1.0 - std::pow(config.adam_beta1, it + 1);
      const double bc2 = 1.0 - std::pow(config.adam_beta2, it + 1);
      const Eigen::VectorXd update =
          (-config.step_size) *
          (m / bc1).cwiseQuotient(
              ((v / bc2).cwiseSqrt().array() + config.adam_eps).matrix());

      if (!config.freeze_pose) {
        for (int j = 0; j < nj; ++j) {
          cur.pose.local[j] =
              cur.pose.local[j] *
              Rotation::from_axis_angle(update.segment<3>(3 * j));
        }
      }
      if (!config.freeze_shape) {
        cur.shape.beta += update.segment(3 * nj, kShapeDims);
      }
      if (!config.freeze_scale) {
        cur.scale =
            std::max(config.min_scale, cur.scale + update[3 * nj + kShapeDims]);
      }
      if (!config.freeze_translation) {
        cur.translation += update.tail<3>();
      }
    }
    const double final_loss = total_loss(cur, model, x, cam, config, prior);
    if (std::isfinite(final_loss)) track_best(final_loss, cur);
  } catch (const Error& e) {
    out.aborted = true;
    out.diagnostic = e.what();
    if (!std::isfinite(out.best_loss)) {
      out.state = initial;
    }
  }
  return out;
}

}  // namespace kama
