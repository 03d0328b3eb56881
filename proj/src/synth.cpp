#include "thermoflux/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "thermoflux/camera.hpp"
#include "thermoflux/parallel.hpp"

namespace thermoflux {

namespace {

constexpr double kRayEps = 1e-9;

struct Hit {
  double s = std::numeric_limits<double>::infinity();  // ray parameter = camera z
  int object = -1;
  Eigen::Vector3d local = Eigen::Vector3d::Zero();
};

// Intersects one ray (given in the OBJECT frame) with the primitive.
// Returns the ray parameter and local hit point, or infinity on a miss.
bool intersect_object(const SceneObject& obj, const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                      double* s, Eigen::Vector3d* local) {
  if (obj.shape == SceneObject::Shape::PLANE) {
    if (std::abs(d.z()) < 1e-12) return false;
    const double t = -o.z() / d.z();
    if (t <= kRayEps) return false;
    const Eigen::Vector3d p = o + t * d;
    if (std::abs(p.x()) > obj.half_extent.x() || std::abs(p.y()) > obj.half_extent.y())
      return false;
    *s = t;
    *local = p;
    return true;
  }
  // Box: slab test against |p_i| <= h_i.
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (std::abs(o[i]) > obj.half_extent[i]) return false;
      continue;
    }
    double ta = (-obj.half_extent[i] - o[i]) / d[i];
    double tb = (obj.half_extent[i] - o[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t1 <= kRayEps || t0 <= kRayEps) return false;  // miss, behind, or on surface
  const Eigen::Vector3d p = o + t0 * d;
  *s = t0;
  *local = p;
  return true;
}

// Nearest hit over the whole layout for a world-frame ray at a given frame.
Hit cast_ray(const SceneSpec& spec, int frame, const Eigen::Vector3d& origin_w,
             const Eigen::Vector3d& dir_w) {
  Hit best;
  for (size_t k = 0; k < spec.objects.size(); ++k) {
    const RigidPose t_obj_world = spec.objects[k].pose_at(frame).inverse();
    const Eigen::Vector3d o = t_obj_world.apply(origin_w);
    const Eigen::Vector3d d = t_obj_world.rotation * dir_w;
    double s;
    Eigen::Vector3d local;
    if (intersect_object(spec.objects[k], o, d, &s, &local) && s < best.s) {
      best.s = s;
      best.object = static_cast<int>(k);
      best.local = local;
    }
  }
  return best;
}

void require_camera_outside_boxes(const SceneSpec& spec, int frame, const RigidPose& t_world_cam) {
  for (const SceneObject& obj : spec.objects) {
    if (obj.shape != SceneObject::Shape::BOX) continue;
    const Eigen::Vector3d q = obj.pose_at(frame).inverse().apply(t_world_cam.translation);
    if ((q.cwiseAbs().array() <= obj.half_extent.array() + 1e-9).all())
      throw std::domain_error("camera placed inside scene geometry");
  }
}

struct ViewHits {
  std::vector<double> s;
  std::vector<int> object;
  std::vector<Eigen::Vector3d> local;
};

// Ray-casts a full camera view. Pure per pixel, so rows are chunked freely.
ViewHits cast_view(const SceneSpec& spec, int frame, const RigidPose& t_world_cam,
                   const CameraIntrinsics& K) {
  require_camera_outside_boxes(spec, frame, t_world_cam);
  const size_t n = static_cast<size_t>(K.width) * K.height;
  ViewHits hits;
  hits.s.assign(n, 0.0);
  hits.object.assign(n, -1);
  hits.local.assign(n, Eigen::Vector3d::Zero());

  parallel_chunks(0, K.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < K.width; ++x) {
        const Eigen::Vector3d dir_cam((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
        const Hit h =
            cast_ray(spec, frame, t_world_cam.translation, t_world_cam.rotation * dir_cam);
        const size_t i = static_cast<size_t>(y) * K.width + x;
        if (h.object >= 0) {
          hits.s[i] = h.s;
          hits.object[i] = h.object;
          hits.local[i] = h.local;
        }
      }
  });

  size_t covered = 0;
  for (int o : hits.object) covered += o >= 0;
  if (covered < spec.min_coverage * static_cast<double>(n))
    throw std::domain_error("camera view covers less than the required scene fraction");
  return hits;
}

// splitmix64: the standard 64-bit finalizer, used as a counter-based RNG so
// thermal noise is a pure function of (seed, frame, pixel) — independent of
// thread partitioning.
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double gaussian_count_noise(uint64_t seed, uint64_t frame, uint64_t pixel) {
  const uint64_t h1 = splitmix64(seed ^ splitmix64(frame + 0x51ed2701));
  const uint64_t h2 = splitmix64(h1 ^ splitmix64(pixel + 0xabcd9873));
  const uint64_t h3 = splitmix64(h2 + 1);
  const double u1 = ((h2 >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = (h3 >> 11) * 0x1.0p-53;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

std::vector<MultiSpectralPair> render_sequence(const SceneSpec& spec, int n_frames) {
  if (n_frames <= 0) throw std::invalid_argument("need at least one frame");
  if (static_cast<size_t>(n_frames) > spec.trajectory.size())
    throw std::invalid_argument("trajectory shorter than requested frame count");
  if (spec.objects.empty()) throw std::invalid_argument("scene has no objects");
  spec.rig.validate();

  std::vector<MultiSpectralPair> out;
  out.reserve(n_frames);
  const RigidPose t_thermal_rgb = spec.rig.t_rgb_thermal.inverse();

  for (int f = 0; f < n_frames; ++f) {
    MultiSpectralPair pair;
    pair.timestamp = f;
    pair.t_world_thermal = spec.trajectory[f];
    pair.t_world_rgb = compose(pair.t_world_thermal, t_thermal_rgb);

    // Thermal view: temperatures to quantized counts.
    {
      const CameraIntrinsics& K = spec.rig.thermal;
      const ViewHits hits = cast_view(spec, f, pair.t_world_thermal, K);
      pair.gt_depth_thermal = DepthMap(K.width, K.height);
      pair.thermal_raw = RawThermalImage(K.width, K.height);
      for (size_t i = 0; i < hits.s.size(); ++i) {
        const bool hit = hits.object[i] >= 0;
        pair.gt_depth_thermal.data[i] = hit ? hits.s[i] : spec.background_depth;
        const double celsius = hit ? spec.objects[hits.object[i]].temperature.eval(hits.local[i])
                                   : spec.background_temperature;
        double count = celsius_to_raw(celsius);
        if (spec.thermal_noise_sigma > 0.0) {
          count += spec.thermal_noise_sigma *
                   gaussian_count_noise(spec.seed, static_cast<uint64_t>(f), i);
          count = std::clamp(std::round(count), 0.0, double(kThermalMaxCount));
        }
        pair.thermal_raw.data[i] = static_cast<uint16_t>(count);
      }
    }

    // RGB view: reflectance fields, unquantized.
    {
      const CameraIntrinsics& K = spec.rig.rgb;
      const ViewHits hits = cast_view(spec, f, pair.t_world_rgb, K);
      pair.gt_depth_rgb = DepthMap(K.width, K.height);
      pair.rgb = ImageGrid<3>(K.width, K.height);
      for (size_t i = 0; i < hits.s.size(); ++i) {
        const bool hit = hits.object[i] >= 0;
        pair.gt_depth_rgb.data[i] = hit ? hits.s[i] : spec.background_depth;
        for (int c = 0; c < 3; ++c) {
          const double a = hit ? spec.objects[hits.object[i]].albedo[c].eval(hits.local[i])
                               : spec.background_albedo;
          pair.rgb.data[3 * i + c] = std::clamp(a, 0.0, 1.0);
        }
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

FlowField analytic_flow(const SceneSpec& spec, int frame_i, int frame_j, CameraSelect camera) {
  const int frames_needed = std::max(frame_i, frame_j) + 1;
  if (frame_i < 0 || frame_j < 0 ||
      static_cast<size_t>(frames_needed) > spec.trajectory.size())
    throw std::invalid_argument("frame index outside the trajectory");
  const RigidPose t_thermal_rgb = spec.rig.t_rgb_thermal.inverse();
  const auto cam_pose = [&](int f) {
    return camera == CameraSelect::THERMAL ? spec.trajectory[f]
                                           : compose(spec.trajectory[f], t_thermal_rgb);
  };
  const CameraIntrinsics& K =
      camera == CameraSelect::THERMAL ? spec.rig.thermal : spec.rig.rgb;

  const RigidPose t_world_ci = cam_pose(frame_i);
  const RigidPose t_cj_world = cam_pose(frame_j).inverse();
  require_camera_outside_boxes(spec, frame_j, cam_pose(frame_j));
  const ViewHits hits = cast_view(spec, frame_i, t_world_ci, K);

  FlowField flow(K.width, K.height);
  parallel_chunks(0, K.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < K.width; ++x) {
        const size_t i = static_cast<size_t>(y) * K.width + x;
        flow.mask.data[i] = 0.0;
        const int obj = hits.object[i];
        if (obj < 0) continue;
        // The surface point rides its object between frames.
        const Eigen::Vector3d x_world = spec.objects[obj].pose_at(frame_j).apply(hits.local[i]);
        const Eigen::Vector3d x_cam = t_cj_world.apply(x_world);
        const Projection p = project(x_cam, K);
        // Tolerant bounds check: identity motion must keep border pixels
        // valid despite ~1e-14 rotation round-trip noise in p.
        if (x_cam.z() <= kMinProjectionDepth || p.x < -1e-9 || p.x > K.width - 1 + 1e-9 ||
            p.y < -1e-9 || p.y > K.height - 1 + 1e-9)
          continue;
        // Occlusion: the point must be the first surface on frame j's ray.
        const Eigen::Vector3d dir_cam((p.x - K.cx) / K.fx, (p.y - K.cy) / K.fy, 1.0);
        const Hit recast = cast_ray(spec, frame_j, cam_pose(frame_j).translation,
                                    cam_pose(frame_j).rotation * dir_cam);
        if (recast.object != obj || std::abs(recast.s - x_cam.z()) > 1e-6 * std::max(1.0, x_cam.z()))
          continue;
        flow.delta.data[2 * i + 0] = p.x - x;
        flow.delta.data[2 * i + 1] = p.y - y;
        flow.mask.data[i] = 1.0;
      }
  });
  return flow;
}

namespace {

CameraIntrinsics desk_intrinsics(double f) {
  CameraIntrinsics K;
  K.fx = f;
  K.fy = f;
  K.cx = 31.5;
  K.cy = 31.5;
  K.width = 64;
  K.height = 64;
  return K;
}

StereoRig desk_rig() {
  StereoRig rig;
  rig.thermal = desk_intrinsics(64.0);
  rig.rgb = desk_intrinsics(70.0);
  // RGB camera 10 cm along +x of the thermal frame: X_rgb = X_thermal - b.
  rig.t_rgb_thermal.translation = Eigen::Vector3d(-0.1, 0.0, 0.0);
  return rig;
}

RigidPose pose_zrot_trans(double angle, double tx, double ty, double tz) {
  Twist xi = Twist::Zero();
  xi[2] = angle;
  RigidPose p = se3_exp(xi);
  p.translation = Eigen::Vector3d(tx, ty, tz);
  return p;
}

}  // namespace

SceneSpec make_plane_scene(bool affine_intensity, uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.rig = desk_rig();

  SceneObject plane;
  plane.shape = SceneObject::Shape::PLANE;
  plane.pose.translation = Eigen::Vector3d(0.0, 0.0, 5.0);
  plane.half_extent = Eigen::Vector3d(8.0, 8.0, 0.0);
  plane.albedo[0] = ScalarField::affine(0.45, {0.050, -0.040, 0.0});
  plane.albedo[1] = ScalarField::affine(0.50, {-0.030, 0.060, 0.0});
  plane.albedo[2] = ScalarField::affine(0.40, {0.020, 0.020, 0.0});
  plane.temperature = ScalarField::affine(25.0, {1.2, -0.9, 0.0});
  if (!affine_intensity) {
    plane.albedo[0].waves = {{{0.9, 0.4, 0.0}, 0.08, 0.3}, {{-0.3, 1.1, 0.0}, 0.06, 1.7}};
    plane.albedo[1].waves = {{{0.5, -0.8, 0.0}, 0.07, 2.1}};
    plane.albedo[2].waves = {{{1.2, 0.6, 0.0}, 0.05, 0.9}};
    plane.temperature.waves = {{{0.7, 1.1, 0.0}, 2.5, 0.5}, {{-1.3, 0.4, 0.0}, 1.5, 2.6}};
  }
  spec.objects.push_back(plane);

  // Small in-plane motion: x/y/z translation plus rotation about the optical
  // axis keeps every view fronto-parallel, so affine textures stay affine in
  // image coordinates.
  spec.trajectory = {
      pose_zrot_trans(0.000, 0.00, 0.00, 0.00),
      pose_zrot_trans(0.008, 0.03, -0.02, 0.04),
      pose_zrot_trans(-0.006, -0.02, 0.03, 0.08),
      pose_zrot_trans(0.011, 0.04, 0.01, 0.12),
      pose_zrot_trans(-0.004, -0.01, -0.03, 0.16),
  };
  return spec;
}

SceneSpec make_slanted_scene(uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.rig = desk_rig();
  // Slight rig rotation exercises the full conjugation path.
  Twist rig_xi;
  rig_xi << 0.0, 0.01, 0.0, -0.11, 0.005, -0.01;
  spec.rig.t_rgb_thermal = se3_exp(rig_xi);

  SceneObject plane;
  plane.shape = SceneObject::Shape::PLANE;
  // Tilt about y: depth sweeps roughly 4-6 m across the view.
  Twist tilt = Twist::Zero();
  tilt[1] = 0.28;
  plane.pose = se3_exp(tilt);
  plane.pose.translation = Eigen::Vector3d(0.0, 0.0, 5.0);
  plane.half_extent = Eigen::Vector3d(9.0, 9.0, 0.0);
  // Crossed low-frequency waves on an affine base: textured along every
  // direction, smooth enough for stable bilinear gradients.
  plane.albedo[0] = ScalarField::affine(0.45, {0.035, -0.020, 0.0});
  plane.albedo[0].waves = {{{0.8, 0.3, 0.0}, 0.10, 0.4}, {{-0.2, 1.0, 0.0}, 0.08, 1.9}};
  plane.albedo[1] = ScalarField::affine(0.50, {-0.025, 0.030, 0.0});
  plane.albedo[1].waves = {{{0.4, -0.9, 0.0}, 0.09, 2.2}, {{1.1, 0.5, 0.0}, 0.06, 0.8}};
  plane.albedo[2] = ScalarField::affine(0.42, {0.015, 0.020, 0.0});
  plane.albedo[2].waves = {{{0.9, -0.5, 0.0}, 0.07, 1.2}};
  plane.temperature = ScalarField::affine(25.0, {0.9, -0.7, 0.0});
  plane.temperature.waves = {{{0.6, 0.9, 0.0}, 2.8, 0.7}, {{-1.0, 0.5, 0.0}, 1.8, 2.4}};
  spec.objects.push_back(plane);

  const auto pose6 = [](double wx, double wy, double wz, double tx, double ty, double tz) {
    Twist xi;
    xi << wx, wy, wz, 0.0, 0.0, 0.0;
    RigidPose p = se3_exp(xi);
    p.translation = Eigen::Vector3d(tx, ty, tz);
    return p;
  };
  spec.trajectory = {
      pose6(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
      pose6(0.006, -0.009, 0.007, 0.030, -0.020, 0.040),
      pose6(-0.008, 0.005, -0.006, -0.020, 0.025, 0.075),
      pose6(0.004, 0.008, 0.009, 0.035, 0.010, 0.110),
      pose6(-0.006, -0.004, -0.008, -0.015, -0.025, 0.150),
  };
  return spec;
}

SceneSpec make_structured_scene(uint64_t seed) {
  // One large tilted box whose visible faces fill the view. The creased
  // multi-plane structure is the point: a single plane admits a depth/pose
  // compensation family (planar two-view geometry is degenerate, hiding
  // translation errors), while two or three planes in general position pin
  // the motion. Being convex and view-filling, the box keeps depth
  // continuous — no occlusion edges, so forward depth warping to the RGB
  // view stays phantom-free and the ground truth remains the loss minimum.
  SceneSpec spec;
  spec.seed = seed;
  spec.rig = desk_rig();
  Twist rig_xi;
  rig_xi << 0.0, 0.01, 0.0, -0.11, 0.005, -0.01;
  spec.rig.t_rgb_thermal = se3_exp(rig_xi);

  SceneObject box;
  box.shape = SceneObject::Shape::BOX;
  Twist tilt = Twist::Zero();
  tilt[0] = 0.22;  // about x
  tilt[1] = 0.42;  // about y: two to three faces visible, depth sweeps ~4-7 m
  box.pose = se3_exp(tilt);
  box.pose.translation = Eigen::Vector3d(0.4, -0.3, 7.2);
  box.half_extent = Eigen::Vector3d(3.2, 3.2, 3.2);
  // Coarse waves only (image wavelengths of 15 px and up). Finer texture
  // would sharpen the loss in principle, but bilinear resynthesis error
  // grows with the image curvature (second derivative) while the alignment
  // signal only grows with the gradient, so at 64x64 finer waves lower the
  // signal-to-model-noise ratio and push the reachable minimum away from
  // the ground truth.
  box.albedo[0] = ScalarField::affine(0.48, {0.030, -0.015, 0.020});
  box.albedo[0].waves = {{{2.1, 0.9, 1.3}, 0.13, 0.4}, {{-0.8, 2.6, 0.7}, 0.10, 1.9}};
  box.albedo[1] = ScalarField::affine(0.52, {-0.020, 0.025, 0.015});
  box.albedo[1].waves = {{{1.2, -2.3, 1.6}, 0.12, 2.2}, {{2.8, 1.1, -0.9}, 0.08, 0.8}};
  box.albedo[2] = ScalarField::affine(0.45, {0.015, 0.020, -0.025});
  box.albedo[2].waves = {{{2.4, -1.4, 1.1}, 0.10, 1.2}};
  box.temperature = ScalarField::affine(25.0, {0.8, -0.6, 0.5});
  box.temperature.waves = {{{1.7, 2.2, 1.0}, 2.4, 0.7}, {{-2.5, 1.3, 1.5}, 1.6, 2.4}};
  spec.objects.push_back(box);

  const auto pose6 = [](double wx, double wy, double wz, double tx, double ty, double tz) {
    Twist xi;
    xi << wx, wy, wz, 0.0, 0.0, 0.0;
    RigidPose p = se3_exp(xi);
    p.translation = Eigen::Vector3d(tx, ty, tz);
    return p;
  };
  // Wide, non-collinear baselines: ~20 cm per step (2-3 px of parallax at
  // 5 m), first x-dominated then y-dominated. Short collinear steps leave a
  // smooth depth/pose compensation family with near-zero loss; crossing
  // baselines make both depth and translation identifiable at the per-mille
  // level the recovery experiments demand.
  spec.trajectory = {
      pose6(0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
      pose6(0.006, -0.009, 0.007, 0.200, -0.040, 0.060),
      pose6(-0.008, 0.005, -0.006, 0.150, 0.170, 0.140),
      pose6(0.004, 0.008, 0.009, -0.030, 0.120, 0.230),
      pose6(-0.006, -0.004, -0.008, 0.030, -0.040, 0.320),
  };
  spec.min_coverage = 1.0;  // every ray must hit the box in every frame
  return spec;
}

SceneSpec make_moving_object_scene(uint64_t seed) {
  SceneSpec spec = make_plane_scene(/*affine_intensity=*/false, seed);
  SceneObject box;
  box.shape = SceneObject::Shape::BOX;
  box.pose.translation = Eigen::Vector3d(0.5, 0.2, 4.0);
  box.half_extent = Eigen::Vector3d(0.30, 0.25, 0.20);
  box.velocity = Eigen::Vector3d(0.08, 0.0, 0.0);  // m per frame, violates rigidity
  for (int c = 0; c < 3; ++c) box.albedo[c] = ScalarField::constant(0.85);
  box.temperature = ScalarField::constant(38.0);  // hot but inside the narrow window
  spec.objects.push_back(box);
  return spec;
}

}  // namespace thermoflux
