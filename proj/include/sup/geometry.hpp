#pragma once

// geometry.hpp - Pose representation, quaternion interpolation, and the
// composite end-effector deviation metric used for trajectory comparison.
//
// Orientations are unit quaternions with antipodal equivalence: q and -q
// describe the same rotation, and every distance here is invariant to a
// global sign flip. Interpolation is NLERP (normalized linear), which
// coincides with SLERP at the endpoints and at t = 0.5.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace sup {

using Vec3 = Eigen::Vector3d;

inline constexpr double kQuatUnitTol = 1e-9;
inline constexpr double kNlerpDegenerateTol = 1e-8;

/// Unit quaternion (w, x, y, z). Constructors normalize; a zero-norm input
/// is invalid.
struct Quat {
  double w{1.0}, x{0.0}, y{0.0}, z{0.0};

  Quat() = default;

  Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n < 1e-12) {
      throw std::invalid_argument("Quat: zero-norm components");
    }
    w /= n;
    x /= n;
    y /= n;
    z /= n;
  }

  static Quat identity() { return Quat{}; }

  /// Axis is normalized internally; angle in radians.
  static Quat from_axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (n < 1e-12) {
      return Quat{};
    }
    const double h = 0.5 * angle;
    const double s = std::sin(h) / n;
    return Quat(std::cos(h), axis.x() * s, axis.y() * s, axis.z() * s);
  }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quat negated() const {
    Quat q;
    q.w = -w;
    q.x = -x;
    q.y = -y;
    q.z = -z;
    return q;
  }

  /// Sign-canonical representative of the double cover: w >= 0.
  Quat canonicalized() const { return w < 0.0 ? negated() : *this; }

  /// Hamilton product; composes *this followed-by rhs as q * rhs.
  Quat operator*(const Quat& rhs) const {
    Quat q;
    q.w = w * rhs.w - x * rhs.x - y * rhs.y - z * rhs.z;
    q.x = w * rhs.x + x * rhs.w + y * rhs.z - z * rhs.y;
    q.y = w * rhs.y - x * rhs.z + y * rhs.w + z * rhs.x;
    q.z = w * rhs.z + x * rhs.y - y * rhs.x + z * rhs.w;
    return q;
  }

  Quat conjugate() const {
    Quat q;
    q.w = w;
    q.x = -x;
    q.y = -y;
    q.z = -z;
    return q;
  }

  Vec3 rotate(const Vec3& v) const {
    // q v q*, expanded
    const Vec3 u(x, y, z);
    const Vec3 t = 2.0 * u.cross(v);
    return v + w * t + u.cross(t);
  }
};

inline double dot(const Quat& a, const Quat& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

/// Normalized linear interpolation with the shortest-path sign convention.
/// Degenerate pairs (q1 ~ -q0 sampled at the midpoint) return q0 and set
/// *antipodal_degenerate; they cannot arise from physically continuous
/// trajectories, so the total-function form keeps callers branch-free.
inline Quat nlerp(const Quat& q0, const Quat& q1, double t,
                  bool* antipodal_degenerate = nullptr) {
  if (antipodal_degenerate != nullptr) {
    *antipodal_degenerate = false;
  }
  double sign = 1.0;
  if (dot(q0, q1) < 0.0) {
    sign = -1.0;
  }
  const double a = 1.0 - t;
  const double b = t * sign;
  const double rw = a * q0.w + b * q1.w;
  const double rx = a * q0.x + b * q1.x;
  const double ry = a * q0.y + b * q1.y;
  const double rz = a * q0.z + b * q1.z;
  const double n = std::sqrt(rw * rw + rx * rx + ry * ry + rz * rz);
  if (n < kNlerpDegenerateTol) {
    if (antipodal_degenerate != nullptr) {
      *antipodal_degenerate = true;
    }
    return q0;
  }
  Quat q;
  q.w = rw / n;
  q.x = rx / n;
  q.y = ry / n;
  q.z = rz / n;
  return q;
}

/// Geodesic distance on the quotient sphere, arccos(clamp(|<q0,q1>|, 0, 1));
/// range [0, pi/2], zero for q1 = +/-q0. Evaluated in the equivalent
/// 2*atan2(|q0 - q1|, |q0 + q1|) form, which stays accurate near zero where
/// acos loses half the significand.
inline double geodesic_dist(const Quat& q0, const Quat& q1) {
  const double sign = dot(q0, q1) < 0.0 ? -1.0 : 1.0;
  const double dw = q0.w - sign * q1.w;
  const double dx = q0.x - sign * q1.x;
  const double dy = q0.y - sign * q1.y;
  const double dz = q0.z - sign * q1.z;
  const double sw = q0.w + sign * q1.w;
  const double sx = q0.x + sign * q1.x;
  const double sy = q0.y + sign * q1.y;
  const double sz = q0.z + sign * q1.z;
  const double dn = std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  const double sn = std::sqrt(sw * sw + sx * sx + sy * sy + sz * sz);
  return 2.0 * std::atan2(dn, sn);
}

struct Pose {
  Vec3 position{0.0, 0.0, 0.0};
  Quat orientation{};
};

/// Composite EEF distance: half the Euclidean positional gap plus the
/// rotational geodesic. Symmetric, non-negative, zero iff positions match
/// and orientations agree up to sign.
inline double eef_distance(const Pose& a, const Pose& b) {
  return 0.5 * (a.position - b.position).norm() +
         geodesic_dist(a.orientation, b.orientation);
}

inline Pose interpolate_pose(const Pose& a, const Pose& b, double t,
                             bool* antipodal_degenerate = nullptr) {
  Pose p;
  p.position = (1.0 - t) * a.position + t * b.position;
  p.orientation = nlerp(a.orientation, b.orientation, t, antipodal_degenerate);
  return p;
}

/// Ordered pose sequence; poses[i] is the state after step i+1 of its
/// source rollout.
struct Trajectory {
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }
  const Pose& operator[](std::size_t i) const { return poses[i]; }
  Pose& operator[](std::size_t i) { return poses[i]; }
};

namespace detail {

// Virtual time-0 pose for a trajectory whose poses sit at times j/L,
// j = 1..L. Back-extrapolating the first segment recovers the motion start
// exactly for uniformly sampled linear paths, which is what makes a
// straight-line path resample onto itself.
inline Pose virtual_start(const Trajectory& traj) {
  if (traj.size() < 2) {
    return traj[0];
  }
  const Pose& p1 = traj[0];
  const Pose& p2 = traj[1];
  Pose p0;
  p0.position = 2.0 * p1.position - p2.position;
  Quat q2 = p2.orientation;
  if (dot(p1.orientation, q2) < 0.0) {
    q2 = q2.negated();
  }
  const double rw = 2.0 * p1.orientation.w - q2.w;
  const double rx = 2.0 * p1.orientation.x - q2.x;
  const double ry = 2.0 * p1.orientation.y - q2.y;
  const double rz = 2.0 * p1.orientation.z - q2.z;
  const double n = std::sqrt(rw * rw + rx * rx + ry * ry + rz * rz);
  if (n < kNlerpDegenerateTol) {
    p0.orientation = p1.orientation;
  } else {
    p0.orientation.w = rw / n;
    p0.orientation.x = rx / n;
    p0.orientation.y = ry / n;
    p0.orientation.z = rz / n;
  }
  return p0;
}

}  // namespace detail

/// Resamples onto target_len poses at normalized times i/target_len,
/// i = 1..target_len, over the piecewise-linear time parameterization that
/// places input pose j at time j/L. Endpoint of the output equals the input
/// endpoint exactly; target_len = L reproduces the input pointwise.
inline Trajectory resample_trajectory(const Trajectory& traj, int target_len) {
  if (traj.empty()) {
    throw std::invalid_argument("resample_trajectory: empty trajectory");
  }
  if (target_len < 1) {
    throw std::invalid_argument("resample_trajectory: target_len < 1");
  }
  const std::size_t len = traj.size();
  const Pose start = detail::virtual_start(traj);
  Trajectory out;
  out.poses.reserve(static_cast<std::size_t>(target_len));
  for (int i = 1; i <= target_len; ++i) {
    // continuous knot index in [0, L]; knot 0 is the virtual start
    const double s =
        static_cast<double>(i) * static_cast<double>(len) / target_len;
    const double whole = std::floor(s);
    const double frac = s - whole;
    const auto j = static_cast<std::size_t>(whole);
    if (frac == 0.0 && j >= 1) {
      out.poses.push_back(traj[std::min(j, len) - 1]);
    } else if (j >= len) {
      out.poses.push_back(traj[len - 1]);
    } else {
      const Pose& lo = (j == 0) ? start : traj[j - 1];
      const Pose& hi = traj[j];
      out.poses.push_back(interpolate_pose(lo, hi, frac));
    }
  }
  return out;
}

/// Maximum composite EEF discrepancy between tau and tau_k after resampling
/// tau_k to tau's length.
inline double state_deviation(const Trajectory& tau, const Trajectory& tau_k) {
  if (tau.empty() || tau_k.empty()) {
    throw std::invalid_argument("state_deviation: empty trajectory");
  }
  const Trajectory matched =
      resample_trajectory(tau_k, static_cast<int>(tau.size()));
  double worst = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    worst = std::max(worst, eef_distance(tau[i], matched[i]));
  }
  return worst;
}

}  // namespace sup
