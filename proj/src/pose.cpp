#include "thermoflux/pose.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <cmath>

namespace thermoflux {

namespace {

// Forward-mode scalar carrying six partial derivatives. Used only to
// differentiate the exponential map exactly; everything per-pixel runs in
// hand-written reverse mode.
struct Dual6 {
  double a = 0.0;
  Eigen::Matrix<double, 6, 1> d = Eigen::Matrix<double, 6, 1>::Zero();

  Dual6() = default;
  Dual6(double v) : a(v) {}  // NOLINT: implicit by design
  static Dual6 variable(double v, int slot) {
    Dual6 x(v);
    x.d[slot] = 1.0;
    return x;
  }
};

inline Dual6 operator+(const Dual6& x, const Dual6& y) {
  Dual6 r(x.a + y.a);
  r.d = x.d + y.d;
  return r;
}
inline Dual6 operator-(const Dual6& x, const Dual6& y) {
  Dual6 r(x.a - y.a);
  r.d = x.d - y.d;
  return r;
}
inline Dual6 operator-(const Dual6& x) {
  Dual6 r(-x.a);
  r.d = -x.d;
  return r;
}
inline Dual6 operator*(const Dual6& x, const Dual6& y) {
  Dual6 r(x.a * y.a);
  r.d = x.d * y.a + y.d * x.a;
  return r;
}
inline Dual6 operator/(const Dual6& x, const Dual6& y) {
  Dual6 r(x.a / y.a);
  r.d = (x.d - r.a * y.d) / y.a;
  return r;
}
inline Dual6 sin(const Dual6& x) {
  Dual6 r(std::sin(x.a));
  r.d = std::cos(x.a) * x.d;
  return r;
}
inline Dual6 cos(const Dual6& x) {
  Dual6 r(std::cos(x.a));
  r.d = -std::sin(x.a) * x.d;
  return r;
}
inline Dual6 sqrt(const Dual6& x) {
  Dual6 r(std::sqrt(x.a));
  r.d = x.d / (2.0 * r.a);
  return r;
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual6& x) { return x.a; }

// Rodrigues rotation plus the closed-form translation factor. Templated so
// the same expression yields both the value (double) and its exact Jacobian
// (Dual6). The small-angle branch is a series in theta^2, which keeps it
// analytic in the twist coordinates.
template <typename S>
void exp_impl(const S w[3], const S v[3], S R[9], S t[3]) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  S A, B, C;
  if (value_of(th2) < 1e-8) {
    const S th4 = th2 * th2;
    A = S(1.0) - th2 * S(1.0 / 6.0) + th4 * S(1.0 / 120.0);
    B = S(0.5) - th2 * S(1.0 / 24.0) + th4 * S(1.0 / 720.0);
    C = S(1.0 / 6.0) - th2 * S(1.0 / 120.0) + th4 * S(1.0 / 5040.0);
  } else {
    const S th = sqrt(th2);
    A = sin(th) / th;
    B = (S(1.0) - cos(th)) / th2;
    C = (S(1.0) - A) / th2;
  }

  S wx[9] = {S(0.0), -w[2], w[1], w[2], S(0.0), -w[0], -w[1], w[0], S(0.0)};
  S wx2[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      S acc = S(0.0);
      for (int k = 0; k < 3; ++k) acc = acc + wx[3 * i + k] * wx[3 * k + j];
      wx2[3 * i + j] = acc;
    }

  for (int i = 0; i < 9; ++i) {
    const S eye = (i % 4 == 0) ? S(1.0) : S(0.0);
    R[i] = eye + A * wx[i] + B * wx2[i];
  }
  for (int i = 0; i < 3; ++i) {
    S acc = v[i];
    for (int j = 0; j < 3; ++j) acc = acc + (B * wx[3 * i + j] + C * wx2[3 * i + j]) * v[j];
    t[i] = acc;
  }
}

}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

RigidPose RigidPose::normalized() const {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  if ((u * svd.matrixV().transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  RigidPose p;
  p.rotation = u * svd.matrixV().transpose();
  p.translation = translation;
  return p;
}

RigidPose se3_exp(const Twist& xi) {
  double w[3] = {xi[0], xi[1], xi[2]};
  double v[3] = {xi[3], xi[4], xi[5]};
  double R[9], t[3];
  exp_impl(w, v, R, t);
  RigidPose p;
  p.rotation = Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(R);
  p.translation = Eigen::Map<Eigen::Vector3d>(t);
  return p;
}

PoseDifferential se3_exp_differential(const Twist& xi) {
  Dual6 w[3], v[3];
  for (int i = 0; i < 3; ++i) {
    w[i] = Dual6::variable(xi[i], i);
    v[i] = Dual6::variable(xi[3 + i], 3 + i);
  }
  Dual6 R[9], t[3];
  exp_impl(w, v, R, t);
  PoseDifferential out;
  for (int slot = 0; slot < 6; ++slot) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) out.dR[slot](i, j) = R[3 * i + j].d[slot];
      out.dt[slot][i] = t[i].d[slot];
    }
  }
  return out;
}

Twist se3_log(const RigidPose& pose, bool* near_cut_locus) {
  const Eigen::Matrix3d& R = pose.rotation;
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double th = std::acos(c);
  if (near_cut_locus) *near_cut_locus = th > M_PI - 1e-6;

  const Eigen::Vector3d antisym(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  Eigen::Vector3d w;
  if (th < 1e-6) {
    w = 0.5 * (1.0 + th * th / 6.0) * antisym;
  } else if (th > M_PI - 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // rank-one structure of (R + I) / 2 ~ u u^T.
    const Eigen::Matrix3d S = 0.5 * (R + Eigen::Matrix3d::Identity());
    int j = 0;
    for (int k = 1; k < 3; ++k)
      if (S(k, k) > S(j, j)) j = k;
    Eigen::Vector3d u = S.col(j) / std::sqrt(std::max(S(j, j), 1e-12));
    u.normalize();
    if (antisym.dot(u) < 0.0) u = -u;
    w = th * u;
  } else {
    w = (th / (2.0 * std::sin(th))) * antisym;
  }

  const double th2 = w.squaredNorm();
  double k;
  if (th < 1e-4) {
    k = 1.0 / 12.0 + th2 / 720.0 + th2 * th2 / 30240.0;
  } else {
    const double A = std::sin(th) / th;
    const double B = (1.0 - std::cos(th)) / th2;
    k = (1.0 - A / (2.0 * B)) / th2;
  }
  const Eigen::Matrix3d wx = skew(w);
  const Eigen::Matrix3d v_inv = Eigen::Matrix3d::Identity() - 0.5 * wx + k * (wx * wx);

  Twist xi;
  xi.head<3>() = w;
  xi.tail<3>() = v_inv * pose.translation;
  return xi;
}

PoseDifferential invert_differential(const RigidPose& pose, const PoseDifferential& d) {
  PoseDifferential out;
  const Eigen::Matrix3d rt = pose.rotation.transpose();
  for (int i = 0; i < 6; ++i) {
    out.dR[i] = d.dR[i].transpose();
    out.dt[i] = -out.dR[i] * pose.translation - rt * d.dt[i];
  }
  return out;
}

PoseDifferential conjugate_differential(const RigidPose& rig, const PoseDifferential& d) {
  PoseDifferential out;
  const Eigen::Matrix3d& re = rig.rotation;
  const Eigen::Vector3d back = -(re.transpose() * rig.translation);
  for (int i = 0; i < 6; ++i) {
    out.dR[i] = re * d.dR[i] * re.transpose();
    out.dt[i] = re * (d.dR[i] * back + d.dt[i]);
  }
  return out;
}

Twist contract_differential(const PoseDifferential& d, const Eigen::Matrix3d& grad_rotation,
                            const Eigen::Vector3d& grad_translation) {
  Twist g;
  for (int i = 0; i < 6; ++i)
    g[i] = (grad_rotation.array() * d.dR[i].array()).sum() + grad_translation.dot(d.dt[i]);
  return g;
}

}  // namespace thermoflux
