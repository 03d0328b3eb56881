#include <doctest.h>

#include <cmath>
#include <random>

#include "thermoflux/synth.hpp"
#include "thermoflux/warp.hpp"

using namespace thermoflux;

namespace {

CameraIntrinsics square_k(int n, double f) {
  CameraIntrinsics k;
  k.fx = f;
  k.fy = f;
  k.cx = (n - 1) / 2.0;
  k.cy = (n - 1) / 2.0;
  k.width = n;
  k.height = n;
  return k;
}

DepthMap constant_depth(int n, double d) { return DepthMap(n, n, d); }

RigidPose translation_pose(double x, double y, double z) {
  RigidPose p;
  p.translation = Eigen::Vector3d(x, y, z);
  return p;
}

// Smooth separable diffeomorphism used for reversal tests: forward flow
// F(p) = v(p) - p with invertible v per axis.
struct SineDiffeo {
  double ax = 2.0, wx = 2.0 * M_PI / 32.0, px = 0.4;
  double ay = 1.6, wy = 2.0 * M_PI / 28.0, py = 1.3;
  double drift_x = 0.7, drift_y = -0.4;

  double vx(double x) const { return x + drift_x + ax * std::sin(wx * x + px); }
  double vy(double y) const { return y + drift_y + ay * std::sin(wy * y + py); }

  // Newton inversion; the derivative is bounded away from zero.
  double inv_x(double u) const {
    double x = u - drift_x;
    for (int it = 0; it < 50; ++it) {
      const double f = vx(x) - u;
      x -= f / (1.0 + ax * wx * std::cos(wx * x + px));
      if (std::abs(f) < 1e-13) break;
    }
    return x;
  }
  double inv_y(double u) const {
    double y = u - drift_y;
    for (int it = 0; it < 50; ++it) {
      const double f = vy(y) - u;
      y -= f / (1.0 + ay * wy * std::cos(wy * y + py));
      if (std::abs(f) < 1e-13) break;
    }
    return y;
  }

  FlowField forward(int n) const {
    FlowField f(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const size_t i = static_cast<size_t>(y) * n + x;
        f.delta.data[2 * i] = vx(x) - x;
        f.delta.data[2 * i + 1] = vy(y) - y;
      }
    return f;
  }
};

}  // namespace

TEST_CASE("rigid flow: identity pose gives zero flow with full mask") {
  const CameraIntrinsics k = square_k(16, 20.0);
  const FlowField f = rigid_flow(constant_depth(16, 5.0), RigidPose::identity(), k, k);
  for (double v : f.delta.data) CHECK(v == 0.0);
  for (double m : f.mask.data) CHECK(m == 1.0);

  DepthMap bad = constant_depth(4, 1.0);
  bad.at(1, 2) = -0.5;
  const CameraIntrinsics k4 = square_k(4, 5.0);
  CHECK_THROWS_AS(rigid_flow(bad, RigidPose::identity(), k4, k4), std::domain_error);
}

TEST_CASE("rigid flow: z-translation toward a plane is radial") {
  const int n = 32;
  const CameraIntrinsics k = square_k(n, 40.0);
  const double d = 5.0, tz = 0.5;
  // Camera advances tz along the axis: points move to z = d - tz.
  const FlowField f = rigid_flow(constant_depth(n, d), translation_pose(0, 0, -tz), k, k);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const size_t i = static_cast<size_t>(y) * n + x;
      const double ex = (x - k.cx) * tz / (d - tz);
      const double ey = (y - k.cy) * tz / (d - tz);
      CHECK(f.delta.data[2 * i] == doctest::Approx(ex).epsilon(1e-12));
      CHECK(f.delta.data[2 * i + 1] == doctest::Approx(ey).epsilon(1e-12));
      const bool in = x + ex >= 0 && x + ex <= n - 1 && y + ey >= 0 && y + ey <= n - 1;
      CHECK(f.mask.data[i] == (in ? 1.0 : 0.0));
    }
}

TEST_CASE("rigid flow: x-translation over a plane is uniform") {
  const int n = 16;
  const CameraIntrinsics k = square_k(n, 30.0);
  const double d = 4.0, b = 0.2;
  // Camera shifts +b in x: scene points move -b in the new frame.
  const FlowField f = rigid_flow(constant_depth(n, d), translation_pose(-b, 0, 0), k, k);
  for (size_t i = 0; i < f.mask.data.size(); ++i) {
    CHECK(f.delta.data[2 * i] == doctest::Approx(-k.fx * b / d).epsilon(1e-12));
    CHECK(f.delta.data[2 * i + 1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  }
}

TEST_CASE("inverse warp: identity pose reproduces the source bit-exactly") {
  const int n = 12;
  const CameraIntrinsics k = square_k(n, 15.0);
  ImageGrid<3> img(n, n);
  std::mt19937 rng(61);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : img.data) v = u(rng);
  DepthMap d(n, n);
  for (auto& v : d.data) v = 2.0 + 3.0 * u(rng);

  const WarpResult<3> r = inverse_warp(img, d, RigidPose::identity(), k, &d);
  for (size_t i = 0; i < img.data.size(); ++i) CHECK(r.image.data[i] == img.data[i]);
  for (double v : r.valid.data) CHECK(v == 1.0);
  for (size_t i = 0; i < d.data.size(); ++i) {
    CHECK(r.sampled_depth.data[i] == d.data[i]);
    CHECK(r.projected_depth.data[i] == d.data[i]);
  }
}

TEST_CASE("inverse warp: renderer ground truth reconstructs the target view") {
  // Affine textures: bilinear sampling is exact, so the only error is
  // floating-point noise. Rendered RGB doubles are unquantized.
  const SceneSpec spec = make_plane_scene(/*affine_intensity=*/true, 7);
  const auto frames = render_sequence(spec, 2);
  const RigidPose t_c1_c0 =
      compose(frames[1].t_world_rgb.inverse(), frames[0].t_world_rgb);
  const WarpResult<3> r =
      inverse_warp(frames[1].rgb, frames[0].gt_depth_rgb, t_c1_c0, spec.rig.rgb);
  double max_err = 0.0;
  size_t valid = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const size_t i = static_cast<size_t>(y) * 64 + x;
      if (r.valid.data[i] != 1.0) continue;
      ++valid;
      for (int c = 0; c < 3; ++c)
        max_err = std::max(max_err,
                           std::abs(r.image.data[3 * i + c] - frames[0].rgb.data[3 * i + c]));
    }
  CHECK(valid > 3500);
  CHECK(max_err < 1e-6);
}

TEST_CASE("inverse warp: smooth textures reconstruct within interpolation error") {
  const SceneSpec spec = make_plane_scene(/*affine_intensity=*/false, 7);
  const auto frames = render_sequence(spec, 2);
  const RigidPose t_c1_c0 =
      compose(frames[1].t_world_rgb.inverse(), frames[0].t_world_rgb);
  const WarpResult<3> r =
      inverse_warp(frames[1].rgb, frames[0].gt_depth_rgb, t_c1_c0, spec.rig.rgb);
  double max_err = 0.0;
  for (size_t i = 0; i < r.valid.data.size(); ++i) {
    if (r.valid.data[i] != 1.0) continue;
    for (int c = 0; c < 3; ++c)
      max_err =
          std::max(max_err, std::abs(r.image.data[3 * i + c] - frames[0].rgb.data[3 * i + c]));
  }
  CHECK(max_err < 2e-2);
}

TEST_CASE("inverse warp: huge translation empties the valid set") {
  const int n = 8;
  const CameraIntrinsics k = square_k(n, 10.0);
  ImageGrid<3> img(n, n, 0.5);
  const WarpResult<3> r =
      inverse_warp(img, constant_depth(n, 2.0), translation_pose(100.0, 0.0, 0.0), k);
  for (double v : r.valid.data) CHECK(v == 0.0);
}

TEST_CASE("flow reversal: zero flow reverses to zero without holes") {
  FlowField f(10, 10);
  const FlowField r = flow_reversal(f, FlowReversalConfig{});
  for (double v : r.delta.data) CHECK(v == 0.0);
  for (double m : r.mask.data) CHECK(m == 1.0);
}

TEST_CASE("flow reversal: uniform integer flow reproduces -F on its support") {
  const int n = 16;
  FlowField f(n, n);
  for (size_t i = 0; i < f.mask.data.size(); ++i) f.delta.data[2 * i] = 3.0;
  const FlowField r = flow_reversal(f, FlowReversalConfig{});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const size_t i = static_cast<size_t>(y) * n + x;
      if (x < 2) {
        // Radius-1 splats from v = x+3 >= 3 reach down to u = 2: the
        // unreachable strip is exactly {0, 1}.
        CHECK(r.mask.data[i] == 0.0);
      } else {
        REQUIRE(r.mask.data[i] == 1.0);
        CHECK(r.delta.data[2 * i] == -3.0);  // every contributor agrees exactly
        CHECK(r.delta.data[2 * i + 1] == 0.0);
      }
    }
}

TEST_CASE("flow reversal: smooth diffeomorphism matches the analytic inverse") {
  const int n = 64;
  const SineDiffeo d;
  const FlowField fwd = d.forward(n);
  const FlowField rev = flow_reversal(fwd, FlowReversalConfig{});

  size_t nonhole = 0, close = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const size_t i = static_cast<size_t>(y) * n + x;
      if (rev.mask.data[i] != 1.0) continue;
      ++nonhole;
      // Exact backward flow at u is v^{-1}(u) - u.
      const double ex = d.inv_x(x) - x;
      const double ey = d.inv_y(y) - y;
      const double err = std::hypot(rev.delta.data[2 * i] - ex, rev.delta.data[2 * i + 1] - ey);
      close += err < 0.1;
    }
  CHECK(nonhole > size_t(0.9 * n * n));
  CHECK(double(close) >= 0.95 * double(nonhole));
}

TEST_CASE("flow reversal: double reversal approximates the original flow") {
  const int n = 64;
  const SineDiffeo d;
  const FlowField fwd = d.forward(n);
  const FlowField back = flow_reversal(flow_reversal(fwd, FlowReversalConfig{}),
                                       FlowReversalConfig{});
  size_t checked = 0, ok = 0;
  for (size_t i = 0; i < back.mask.data.size(); ++i) {
    if (back.mask.data[i] != 1.0) continue;
    ++checked;
    const double err = std::hypot(back.delta.data[2 * i] - fwd.delta.data[2 * i],
                                  back.delta.data[2 * i + 1] - fwd.delta.data[2 * i + 1]);
    ok += err < 0.2;
  }
  CHECK(checked > size_t(0.85 * n * n));
  CHECK(double(ok) >= 0.95 * double(checked));
}

TEST_CASE("forward depth warp: identity rig is the identity") {
  const int n = 10;
  const CameraIntrinsics k = square_k(n, 12.0);
  DepthMap d(n, n);
  std::mt19937 rng(67);
  std::uniform_real_distribution<double> u(2.0, 6.0);
  for (auto& v : d.data) v = u(rng);
  const ForwardDepth out =
      forward_warp_depth(d, RigidPose::identity(), k, k, FlowReversalConfig{});
  for (size_t i = 0; i < d.data.size(); ++i) {
    CHECK(out.valid.data[i] == 1.0);
    CHECK(out.depth.data[i] == doctest::Approx(d.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward depth warp: x-baseline over a plane keeps z") {
  const int n = 64;
  const CameraIntrinsics kt = square_k(n, 64.0);
  const RigidPose e = translation_pose(-0.1, 0.0, 0.0);  // RGB 10 cm right of thermal

  SUBCASE("mismatched focal lengths") {
    const CameraIntrinsics kr = square_k(n, 70.0);
    const ForwardDepth out =
        forward_warp_depth(constant_depth(n, 5.0), e, kt, kr, FlowReversalConfig{});
    size_t valid = 0;
    for (size_t i = 0; i < out.valid.data.size(); ++i) {
      if (out.valid.data[i] != 1.0) continue;
      ++valid;
      CHECK(out.depth.data[i] == doctest::Approx(5.0).epsilon(1e-12));
    }
    CHECK(valid > size_t(0.9 * n * n));
  }

  SUBCASE("equal intrinsics leave a hole strip where no splats land") {
    // Uniform flow -fx*0.1/5 = -1.28 px: the last column sits 1.28 px from
    // the nearest splat center (beyond the radius-1 footprint) and the
    // second-to-last samples thermal coordinate 63.28, out of the grid.
    const ForwardDepth out =
        forward_warp_depth(constant_depth(n, 5.0), e, kt, kt, FlowReversalConfig{});
    for (int y = 0; y < n; ++y) {
      CHECK(out.valid.at(n - 1, y) == 0.0);
      CHECK(out.valid.at(n - 2, y) == 0.0);
      CHECK(out.valid.at(0, y) == 1.0);
      CHECK(out.valid.at(n - 3, y) == 1.0);
    }
    for (size_t i = 0; i < out.valid.data.size(); ++i)
      if (out.valid.data[i] == 1.0)
        CHECK(out.depth.data[i] == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("forward depth warp: z-offset rig re-expresses depth values") {
  const int n = 64;
  const CameraIntrinsics k = square_k(n, 64.0);
  const RigidPose e = translation_pose(0.0, 0.0, -1.0);  // RGB 1 m ahead of thermal
  SUBCASE("transformed values give the RGB-frame z") {
    const ForwardDepth out =
        forward_warp_depth(constant_depth(n, 5.0), e, k, k, FlowReversalConfig{}, true);
    size_t valid = 0;
    for (size_t i = 0; i < out.valid.data.size(); ++i) {
      if (out.valid.data[i] != 1.0) continue;
      ++valid;
      CHECK(out.depth.data[i] == doctest::Approx(4.0).epsilon(1e-12));
    }
    CHECK(valid > size_t(0.5 * n * n));
  }
  SUBCASE("literal mode warps thermal values unchanged") {
    const ForwardDepth out =
        forward_warp_depth(constant_depth(n, 5.0), e, k, k, FlowReversalConfig{}, false);
    for (size_t i = 0; i < out.valid.data.size(); ++i)
      if (out.valid.data[i] == 1.0)
        CHECK(out.depth.data[i] == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("warp pose: identities and the conjugation identity") {
  std::mt19937 rng(71);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto rand_pose = [&] {
    Twist xi;
    for (int i = 0; i < 6; ++i) xi[i] = u(rng);
    return se3_exp(xi);
  };

  const RigidPose t = rand_pose();
  CHECK((warp_pose(t, RigidPose::identity()).matrix() - t.matrix()).cwiseAbs().maxCoeff() <
        1e-15);
  const RigidPose e = rand_pose();
  CHECK((warp_pose(RigidPose::identity(), e).matrix() - Eigen::Matrix4d::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  for (int trial = 0; trial < 1000; ++trial) {
    const RigidPose tt = rand_pose(), ee = rand_pose();
    const RigidPose lhs = compose(warp_pose(tt, ee), ee);
    const RigidPose rhs = compose(ee, tt);
    CHECK((lhs.matrix() - rhs.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("warp pose is a group homomorphism") {
  std::mt19937 rng(73);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto rand_pose = [&] {
    Twist xi;
    for (int i = 0; i < 6; ++i) xi[i] = u(rng);
    return se3_exp(xi);
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const RigidPose a = rand_pose(), b = rand_pose(), e = rand_pose();
    const RigidPose lhs = warp_pose(compose(a, b), e);
    const RigidPose rhs = compose(warp_pose(a, e), warp_pose(b, e));
    CHECK((lhs.matrix() - rhs.matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("analytic flow agrees with rigid flow on a static scene") {
  const SceneSpec spec = make_plane_scene(/*affine_intensity=*/false, 11);
  const auto frames = render_sequence(spec, 3);
  for (int j : {1, 2}) {
    const FlowField oracle = analytic_flow(spec, 0, j, CameraSelect::THERMAL);
    const RigidPose t_cj_c0 =
        compose(frames[j].t_world_thermal.inverse(), frames[0].t_world_thermal);
    const FlowField geom =
        rigid_flow(frames[0].gt_depth_thermal, t_cj_c0, spec.rig.thermal, spec.rig.thermal);
    size_t compared = 0;
    for (size_t i = 0; i < oracle.mask.data.size(); ++i) {
      if (oracle.mask.data[i] != 1.0 || geom.mask.data[i] != 1.0) continue;
      ++compared;
      REQUIRE(std::abs(oracle.delta.data[2 * i] - geom.delta.data[2 * i]) < 1e-9);
      REQUIRE(std::abs(oracle.delta.data[2 * i + 1] - geom.delta.data[2 * i + 1]) < 1e-9);
    }
    CHECK(compared > size_t(0.9 * oracle.mask.data.size()));
  }
}

// --- gradient checks -------------------------------------------------------

namespace {

DepthMap smooth_depth(int n, unsigned seed) {
  DepthMap d(n, n);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * M_PI);
  const double p1 = u(rng), p2 = u(rng);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      d.at(x, y) = 4.0 + 0.6 * std::sin(0.7 * x + p1) + 0.4 * std::cos(0.5 * y + p2);
  return d;
}

template <typename F>
double central_diff(F&& eval, double* slot, double h) {
  const double saved = *slot;
  *slot = saved + h;
  const double hi = eval();
  *slot = saved - h;
  const double lo = eval();
  *slot = saved;
  return (hi - lo) / (2.0 * h);
}

bool rel_close(double a, double b, double tol, double floor = 1e-9) {
  const double m = std::max(std::abs(a), std::abs(b));
  if (m < floor) return true;
  return std::abs(a - b) / m < tol;
}

}  // namespace

TEST_CASE("rigid flow backward matches finite differences") {
  const int n = 8;
  const CameraIntrinsics k = square_k(n, 9.0);
  DepthMap depth = smooth_depth(n, 81);
  Twist xi;
  xi << 0.02, -0.03, 0.01, 0.05, -0.04, 0.02;

  // Random linear functional over flow components and projected depths.
  std::mt19937 rng(83);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageGrid<2> gf(n, n);
  ImageGrid<1> gz(n, n);
  for (auto& v : gf.data) v = u(rng);
  for (auto& v : gz.data) v = u(rng);

  const auto eval = [&] {
    RigidFlowCache c;
    rigid_flow(depth, se3_exp(xi), k, k, &c);
    double s = 0.0;
    for (size_t i = 0; i < gz.data.size(); ++i) {
      s += gf.data[2 * i] * c.flow.delta.data[2 * i] +
           gf.data[2 * i + 1] * c.flow.delta.data[2 * i + 1];
      s += gz.data[i] * c.x_dst[i].z();
    }
    return s;
  };

  RigidFlowCache cache;
  rigid_flow(depth, se3_exp(xi), k, k, &cache);
  DepthMap d_depth(n, n);
  PoseGrad d_pose;
  rigid_flow_backward(cache, gf, &gz, &d_depth, &d_pose);

  const double h = 1e-6;
  for (int i = 0; i < 20; ++i) {
    const int idx = static_cast<int>(rng() % depth.data.size());
    const double fd = central_diff(eval, &depth.data[idx], h);
    CHECK(rel_close(fd, d_depth.data[idx], 1e-6));
  }
  const PoseDifferential dexp = se3_exp_differential(xi);
  const Twist g_xi = contract_differential(dexp, d_pose.rotation, d_pose.translation);
  for (int i = 0; i < 6; ++i) {
    const double fd = central_diff(eval, &xi[i], h);
    CHECK(rel_close(fd, g_xi[i], 1e-6));
  }
}

TEST_CASE("inverse warp backward matches finite differences") {
  const int n = 8;
  const CameraIntrinsics k = square_k(n, 9.0);
  DepthMap d_tgt = smooth_depth(n, 91);
  DepthMap d_src = smooth_depth(n, 92);
  ImageGrid<3> img(n, n);
  std::mt19937 rng(93);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = 0.5 + 0.3 * std::sin(0.6 * x + 0.4 * y + 1.1 * c);
  Twist xi;
  xi << 0.015, -0.02, 0.025, 0.04, -0.03, 0.05;

  ImageGrid<3> gi(n, n);
  ImageGrid<1> gs(n, n), gz(n, n);
  for (auto& v : gi.data) v = u(rng);
  for (auto& v : gs.data) v = u(rng);
  for (auto& v : gz.data) v = u(rng);

  const auto eval = [&] {
    const WarpResult<3> r = inverse_warp(img, d_tgt, se3_exp(xi), k, &d_src);
    double s = 0.0;
    for (size_t i = 0; i < gs.data.size(); ++i) {
      if (r.valid.data[i] != 1.0) continue;  // fixed functional over the base valid set
      for (int c = 0; c < 3; ++c) s += gi.data[3 * i + c] * r.image.data[3 * i + c];
      s += gs.data[i] * r.sampled_depth.data[i] + gz.data[i] * r.projected_depth.data[i];
    }
    return s;
  };

  InverseWarpCache<3> cache;
  const WarpResult<3> base = inverse_warp(img, d_tgt, se3_exp(xi), k, &d_src, &cache);
  // Zero the functional outside the valid set so backward sees what eval sums.
  ImageGrid<3> gi_m = gi;
  ImageGrid<1> gs_m = gs, gz_m = gz;
  for (size_t i = 0; i < gs.data.size(); ++i)
    if (base.valid.data[i] != 1.0) {
      for (int c = 0; c < 3; ++c) gi_m.data[3 * i + c] = 0.0;
      gs_m.data[i] = 0.0;
      gz_m.data[i] = 0.0;
    }

  DepthMap gd_tgt(n, n), gd_src(n, n);
  PoseGrad d_pose;
  inverse_warp_backward(cache, img, &d_src, &gi_m, &gs_m, &gz_m, &gd_tgt, &gd_src, &d_pose);

  const double h = 1e-6;
  int checked = 0;
  for (int i = 0; i < 40 && checked < 24; ++i) {
    const int idx = static_cast<int>(rng() % d_tgt.data.size());
    const double fd_t = central_diff(eval, &d_tgt.data[idx], h);
    const double fd_s = central_diff(eval, &d_src.data[idx], h);
    // Skip finite-difference samples that straddle a bilinear cell edge.
    const double fd_t2 = central_diff(eval, &d_tgt.data[idx], 2 * h);
    if (!rel_close(fd_t, fd_t2, 1e-4)) continue;
    ++checked;
    CHECK(rel_close(fd_t, gd_tgt.data[idx], 1e-5));
    CHECK(rel_close(fd_s, gd_src.data[idx], 1e-5));
  }
  CHECK(checked >= 16);
  const PoseDifferential dexp = se3_exp_differential(xi);
  const Twist g_xi = contract_differential(dexp, d_pose.rotation, d_pose.translation);
  for (int i = 0; i < 6; ++i) {
    const double fd = central_diff(eval, &xi[i], 1e-7);
    CHECK(rel_close(fd, g_xi[i], 1e-4));
  }
}

TEST_CASE("flow reversal backward matches finite differences") {
  const int n = 10;
  const SineDiffeo d;
  FlowField flow = d.forward(n);
  const FlowReversalConfig cfg;

  std::mt19937 rng(97);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageGrid<2> g(n, n);
  for (auto& v : g.data) v = u(rng);

  FlowReversalCache cache;
  const FlowField base = flow_reversal(flow, cfg, &cache);
  // Fix the functional to the base non-hole set.
  ImageGrid<2> g_m = g;
  for (size_t i = 0; i < base.mask.data.size(); ++i)
    if (base.mask.data[i] != 1.0) g_m.data[2 * i] = g_m.data[2 * i + 1] = 0.0;

  const auto eval = [&] {
    const FlowField r = flow_reversal(flow, cfg);
    double s = 0.0;
    for (size_t i = 0; i < r.mask.data.size(); ++i)
      s += g_m.data[2 * i] * r.delta.data[2 * i] + g_m.data[2 * i + 1] * r.delta.data[2 * i + 1];
    return s;
  };

  ImageGrid<2> d_flow(n, n);
  flow_reversal_backward(flow, cfg, cache, g_m, &d_flow);

  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 30; ++trial) {
    const size_t idx = rng() % flow.delta.data.size();
    const double fd = central_diff(eval, &flow.delta.data[idx], h);
    const double fd2 = central_diff(eval, &flow.delta.data[idx], 2 * h);
    if (!rel_close(fd, fd2, 1e-4)) continue;  // footprint membership flip
    ++checked;
    CHECK(rel_close(fd, d_flow.data[idx], 1e-4));
  }
  CHECK(checked >= 20);
}

TEST_CASE("forward depth warp backward matches finite differences") {
  const int n = 8;
  const CameraIntrinsics kt = square_k(n, 9.0);
  const CameraIntrinsics kr = square_k(n, 10.0);
  Twist exi;
  exi << 0.01, -0.015, 0.02, -0.06, 0.02, -0.03;
  const RigidPose e = se3_exp(exi);
  DepthMap depth = smooth_depth(n, 101);

  std::mt19937 rng(103);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageGrid<1> g(n, n);
  for (auto& v : g.data) v = u(rng);

  for (bool transformed : {true, false}) {
    CAPTURE(transformed);
    ForwardDepthCache cache;
    const ForwardDepth base =
        forward_warp_depth(depth, e, kt, kr, FlowReversalConfig{}, transformed, &cache);
    ImageGrid<1> g_m = g;
    for (size_t i = 0; i < base.valid.data.size(); ++i)
      if (base.valid.data[i] != 1.0) g_m.data[i] = 0.0;

    const auto eval = [&] {
      const ForwardDepth r = forward_warp_depth(depth, e, kt, kr, FlowReversalConfig{}, transformed);
      double s = 0.0;
      for (size_t i = 0; i < r.depth.data.size(); ++i) s += g_m.data[i] * r.depth.data[i];
      return s;
    };

    DepthMap d_depth(n, n);
    forward_warp_depth_backward(cache, g_m, &d_depth);

    const double h = 1e-6;
    int checked = 0;
    for (int trial = 0; trial < 60 && checked < 25; ++trial) {
      const size_t idx = rng() % depth.data.size();
      const double fd = central_diff(eval, &depth.data[idx], h);
      const double fd2 = central_diff(eval, &depth.data[idx], 2 * h);
      if (!rel_close(fd, fd2, 1e-4)) continue;
      ++checked;
      CHECK(rel_close(fd, d_depth.data[idx], 1e-4));
    }
    CHECK(checked >= 18);
  }
}
