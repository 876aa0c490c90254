#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <utility>
#include <vector>

#include "kama/errors.hpp"

namespace kama {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

/// A 3D rotation stored canonically as a unit quaternion. Convertible to and
/// from axis-angle (radians * unit axis) and 3x3 orthonormal matrix form.
/// The quaternion is renormalized after every constructor and composition so
/// long kinematic chains do not drift.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  static Rotation identity() { return Rotation(); }

  static Rotation from_quaternion(double w, double x, double y, double z) {
    return Rotation(Eigen::Quaterniond(w, x, y, z));
  }

  static Rotation from_quaternion(const Eigen::Quaterniond& q) {
    return Rotation(q);
  }

  /// Axis-angle vector: direction = rotation axis, norm = angle in radians.
  static Rotation from_axis_angle(const Vec3& aa) {
    const double angle = aa.norm();
    if (angle < 1e-14) {
      return identity();
    }
    return Rotation(Eigen::Quaterniond(Eigen::AngleAxisd(angle, aa / angle)));
  }

  static Rotation from_matrix(const Mat3& m) {
    return Rotation(Eigen::Quaterniond(m));
  }

  const Eigen::Quaterniond& quaternion() const { return q_; }

  Mat3 matrix() const { return q_.toRotationMatrix(); }

  /// Axis-angle with angle in [0, pi]; identity maps to the zero vector.
  Vec3 axis_angle() const {
    Eigen::AngleAxisd aa(q_);
    double angle = aa.angle();
    Vec3 axis = aa.axis();
    // Eigen may return angles in (pi, 2*pi); fold into [0, pi].
    if (angle > M_PI) {
      angle = 2.0 * M_PI - angle;
      axis = -axis;
    }
    if (angle < 1e-14) {
      return Vec3::Zero();
    }
    return angle * axis;
  }

  Vec3 apply(const Vec3& v) const { return q_ * v; }

  Rotation inverse() const { return Rotation(q_.conjugate()); }

  /// Composition: (a * b) acts as a applied after b, i.e. matrix product A*B.
  friend Rotation operator*(const Rotation& a, const Rotation& b) {
    return Rotation(a.q_ * b.q_);
  }

  /// Geodesic distance to another rotation, in radians, in [0, pi].
  double angle_to(const Rotation& other) const {
    const Eigen::Quaterniond rel = q_.conjugate() * other.q_;
    return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
  }

  double angle() const { return angle_to(identity()); }

  bool is_identity(double tol = 1e-9) const { return angle() <= tol; }

 private:
  explicit Rotation(const Eigen::Quaterniond& q) : q_(q.normalized()) {}

  Eigen::Quaterniond q_;
};

inline Rotation compose(const Rotation& a, const Rotation& b) { return a * b; }
inline Rotation inverse(const Rotation& r) { return r.inverse(); }

/// Pinhole camera intrinsics in pixels.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double fx_, double fy_, double cx_, double cy_)
      : fx(fx_), fy(fy_), cx(cx_), cy(cy_) {
    if (!(fx > 0.0) || !(fy > 0.0)) {
      throw DegenerateInput("camera intrinsics require fx > 0 and fy > 0");
    }
  }
};

struct SwingTwist {
  Rotation swing;
  Rotation twist;
};

struct ScaleTranslation {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
};

struct Similarity {
  Rotation rotation;
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
};

/// Minimal rotation mapping the direction of v1 onto the direction of v2.
/// Angle is the clamped arccos of the normalized dot product; axis is the
/// normalized cross product. Parallel inputs return identity; antiparallel
/// inputs return a pi rotation about a deterministic perpendicular axis.
/// Throws DegenerateInput if either vector has near-zero norm.
Rotation axis_angle_between(const Vec3& v1, const Vec3& v2);

/// Applies r to v (R * v in matrix form). Norm-preserving.
Vec3 rodrigues_rotate(const Rotation& r, const Vec3& v);

/// Factors r into swing * twist where twist is about `axis` (unit vector) and
/// swing carries the remainder. compose(swing, twist) reconstructs r; the
/// twist leaves `axis` fixed. Throws DegenerateInput on a non-unit axis.
SwingTwist swing_twist_decompose(const Rotation& r, const Vec3& axis);

/// Weighted Kabsch: the rotation minimizing
///   sum_i w_i * |R (src_i - c_src) - (dst_i - c_dst)|^2
/// over centroid-centered points (weighted centroids). Reflections are
/// corrected so det(R) = +1. Throws DegenerateInput on mismatched lengths,
/// fewer than 2 points, negative weights, or weight sum <= 1e-9.
Rotation weighted_kabsch(const std::vector<Vec3>& src,
                         const std::vector<Vec3>& dst,
                         const std::vector<double>& weights);

/// Closed-form least squares of |s*src + t - dst|^2 (no rotation):
///   s = sum<src'_i, dst'_i> / sum|src'_i|^2 over centered points,
///   t = c_dst - s * c_src.
/// Throws DegenerateInput on mismatched lengths, fewer than 2 points, or all
/// src points coincident.
ScaleTranslation fit_scale_translation(const std::vector<Vec3>& src,
                                       const std::vector<Vec3>& dst);

/// Full similarity alignment minimizing |s R src + t - dst|^2: uniform-weight
/// Kabsch followed by scale/translation on the rotated set.
Similarity procrustes_align(const std::vector<Vec3>& src,
                            const std::vector<Vec3>& dst);

/// Perspective projection: (fx x/z + cx, fy y/z + cy).
/// Throws BehindCamera if z <= 1e-6.
Vec2 perspective_project(const CameraIntrinsics& k, const Vec3& x);

}  // namespace kama
