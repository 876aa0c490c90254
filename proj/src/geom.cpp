#include "kama/geom.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace kama {

namespace {

// Unit vector perpendicular to v: basis vector with the smallest absolute
// component of v, with v projected out.
Vec3 perpendicular_of(const Vec3& v) {
  int smallest = 0;
  double best = std::abs(v.x());
  if (std::abs(v.y()) < best) {
    smallest = 1;
    best = std::abs(v.y());
  }
  if (std::abs(v.z()) < best) {
    smallest = 2;
  }
  Vec3 e = Vec3::Zero();
  e[smallest] = 1.0;
  const Vec3 u = v.normalized();
  return (e - e.dot(u) * u).normalized();
}

}  // namespace

Rotation axis_angle_between(const Vec3& v1, const Vec3& v2) {
  const double n1 = v1.norm();
  const double n2 = v2.norm();
  if (n1 <= 1e-9 || n2 <= 1e-9) {
    throw DegenerateInput("axis_angle_between: near-zero direction");
  }
  const Vec3 u1 = v1 / n1;
  const Vec3 u2 = v2 / n2;
  const double dot = std::clamp(u1.dot(u2), -1.0, 1.0);
  const Vec3 cross = u1.cross(u2);
  const double cross_norm = cross.norm();
  if (cross_norm < 1e-9) {
    if (dot > 0.0) {
      return Rotation::identity();
    }
    return Rotation::from_axis_angle(M_PI * perpendicular_of(v1));
  }
  const double angle = std::acos(dot);
  return Rotation::from_axis_angle(angle * cross / cross_norm);
}

Vec3 rodrigues_rotate(const Rotation& r, const Vec3& v) { return r.apply(v); }

SwingTwist swing_twist_decompose(const Rotation& r, const Vec3& axis) {
  if (std::abs(axis.norm() - 1.0) > 1e-6) {
    throw DegenerateInput("swing_twist_decompose: axis must be unit length");
  }
  const Eigen::Quaterniond& q = r.quaternion();
  const Vec3 vec(q.x(), q.y(), q.z());
  const double proj = vec.dot(axis);
  const double tn = std::sqrt(q.w() * q.w() + proj * proj);
  SwingTwist st;
  if (tn < 1e-12) {
    // Rotation by pi about a direction perpendicular to axis: twist is
    // undefined, identity is the canonical choice.
    st.twist = Rotation::identity();
    st.swing = r;
    return st;
  }
  const Vec3 tvec = proj * axis;
  st.twist =
      Rotation::from_quaternion(q.w() / tn, tvec.x() / tn, tvec.y() / tn, tvec.z() / tn);
  st.swing = r * st.twist.inverse();
  return st;
}

Rotation weighted_kabsch(const std::vector<Vec3>& src,
                         const std::vector<Vec3>& dst,
                         const std::vector<double>& weights) {
  if (src.size() != dst.size() || src.size() != weights.size()) {
    throw DegenerateInput("weighted_kabsch: mismatched lengths");
  }
  if (src.size() < 2) {
    throw DegenerateInput("weighted_kabsch: need at least 2 points");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) {
      throw DegenerateInput("weighted_kabsch: negative weight");
    }
    wsum += w;
  }
  if (wsum <= 1e-9) {
    throw DegenerateInput("weighted_kabsch: weight sum below 1e-9");
  }

  Vec3 c_src = Vec3::Zero();
  Vec3 c_dst = Vec3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    c_src += weights[i] * src[i];
    c_dst += weights[i] * dst[i];
  }
  c_src /= wsum;
  c_dst /= wsum;

  Mat3 h = Mat3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    h += weights[i] * (src[i] - c_src) * (dst[i] - c_dst).transpose();
  }

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  // Reflection correction: flip the singular vector paired with the smallest
  // singular value (JacobiSVD sorts them descending).
  if ((v * u.transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  return Rotation::from_matrix(v * d * u.transpose());
}

ScaleTranslation fit_scale_translation(const std::vector<Vec3>& src,
                                       const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) {
    throw DegenerateInput("fit_scale_translation: mismatched lengths");
  }
  if (src.size() < 2) {
    throw DegenerateInput("fit_scale_translation: need at least 2 points");
  }
  Vec3 c_src = Vec3::Zero();
  Vec3 c_dst = Vec3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    c_src += src[i];
    c_dst += dst[i];
  }
  c_src /= static_cast<double>(src.size());
  c_dst /= static_cast<double>(dst.size());

  double num = 0.0;
  double den = 0.0;
  for (size_t i = 0; i < src.size(); ++i) {
    const Vec3 s = src[i] - c_src;
    const Vec3 d = dst[i] - c_dst;
    num += s.dot(d);
    den += s.squaredNorm();
  }
  if (den <= 1e-18) {
    throw DegenerateInput("fit_scale_translation: all source points coincide");
  }
  ScaleTranslation out;
  out.scale = num / den;
  out.translation = c_dst - out.scale * c_src;
  return out;
}

Similarity procrustes_align(const std::vector<Vec3>& src,
                            const std::vector<Vec3>& dst) {
  const std::vector<double> weights(src.size(), 1.0);
  Similarity sim;
  sim.rotation = weighted_kabsch(src, dst, weights);
  std::vector<Vec3> rotated(src.size());
  for (size_t i = 0; i < src.size(); ++i) {
    rotated[i] = sim.rotation.apply(src[i]);
  }
  const ScaleTranslation st = fit_scale_translation(rotated, dst);
  sim.scale = st.scale;
  sim.translation = st.translation;
  return sim;
}

Vec2 perspective_project(const CameraIntrinsics& k, const Vec3& x) {
  if (x.z() <= 1e-6) {
    throw BehindCamera("perspective_project: point at or behind the camera");
  }
  return Vec2(k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy);
}

}  // namespace kama
