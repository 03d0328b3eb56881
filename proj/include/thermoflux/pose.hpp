#pragma once

#include <Eigen/Core>
#include <array>

namespace thermoflux {

// Minimal chart for pose optimization: (wx, wy, wz, vx, vy, vz) with the
// axis-angle block first.
using Twist = Eigen::Matrix<double, 6, 1>;

// Rigid transform. A pose named T_a_b maps frame-b points into frame a:
// X_a = R * X_b + t. compose(T_a_b, T_b_c) = T_a_c.
struct RigidPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidPose identity() { return {}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }

  RigidPose inverse() const {
    RigidPose p;
    p.rotation = rotation.transpose();
    p.translation = -(p.rotation * translation);
    return p;
  }

  // Nearest rotation by polar decomposition; cleans drift after long chains.
  RigidPose normalized() const;

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static RigidPose from_matrix(const Eigen::Matrix4d& m) {
    RigidPose p;
    p.rotation = m.topLeftCorner<3, 3>();
    p.translation = m.topRightCorner<3, 1>();
    return p;
  }
};

// Applies b first, then a.
inline RigidPose compose(const RigidPose& a, const RigidPose& b) {
  RigidPose p;
  p.rotation = a.rotation * b.rotation;
  p.translation = a.rotation * b.translation + a.translation;
  return p;
}

inline RigidPose operator*(const RigidPose& a, const RigidPose& b) { return compose(a, b); }

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

RigidPose se3_exp(const Twist& xi);

// Principal value. For rotations at or beyond the cut locus (angle >= pi the
// result is still a valid preimage); *near_cut_locus reports proximity.
Twist se3_log(const RigidPose& pose, bool* near_cut_locus = nullptr);

// Exact directional derivatives of se3_exp: dR[i], dt[i] are the derivative
// of (rotation, translation) with respect to twist coordinate i.
struct PoseDifferential {
  std::array<Eigen::Matrix3d, 6> dR;
  std::array<Eigen::Vector3d, 6> dt;
};

PoseDifferential se3_exp_differential(const Twist& xi);

// Pushes a differential through inversion: given P and dP, returns d(P^-1).
PoseDifferential invert_differential(const RigidPose& pose, const PoseDifferential& d);

// Pushes a differential through conjugation Q = E * P * E^-1 (E constant).
PoseDifferential conjugate_differential(const RigidPose& rig, const PoseDifferential& d);

// Contraction <dL/dR, dR_i> + <dL/dt, dt_i> for each twist coordinate.
Twist contract_differential(const PoseDifferential& d, const Eigen::Matrix3d& grad_rotation,
                            const Eigen::Vector3d& grad_translation);

}  // namespace thermoflux
