#pragma once

#include <cstdint>
#include <vector>

#include "thermoflux/flow.hpp"
#include "thermoflux/image.hpp"
#include "thermoflux/rig.hpp"
#include "thermoflux/thermal.hpp"

namespace thermoflux {

// Additive scalar field on object-local coordinates:
//   f(p) = offset + gradient . p + sum_k amplitude_k sin(freq_k . p + phase_k)
// Constant fields set only offset; affine fields add the gradient; the wave
// list gives smooth non-affine texture. Affine fields on fronto-parallel
// planes image to affine functions of the pixel coordinates, which is what
// makes bilinear warping exact in the zero-loss fixtures.
struct ScalarField {
  double offset = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();
  struct Wave {
    Eigen::Vector3d freq = Eigen::Vector3d::Zero();  // rad per meter
    double amplitude = 0.0;
    double phase = 0.0;
  };
  std::vector<Wave> waves;

  static ScalarField constant(double c) { return {c, Eigen::Vector3d::Zero(), {}}; }
  static ScalarField affine(double c, const Eigen::Vector3d& g) { return {c, g, {}}; }

  double eval(const Eigen::Vector3d& p) const {
    double v = offset + gradient.dot(p);
    for (const Wave& w : waves) v += w.amplitude * std::sin(w.freq.dot(p) + w.phase);
    return v;
  }
};

// Textured primitive. Planes are the z = 0 rectangle of the object frame
// with |x| <= half_extent.x, |y| <= half_extent.y; boxes are solid axis
// aligned slabs |p| <= half_extent componentwise. velocity rigidly
// translates the object per frame (world frame, meters/frame) — the hook
// for consistency-violating scenes.
struct SceneObject {
  enum class Shape { PLANE, BOX };
  Shape shape = Shape::PLANE;
  RigidPose pose;  // T_world_object at frame 0
  Eigen::Vector3d half_extent = Eigen::Vector3d::Ones();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
  ScalarField albedo[3];          // RGB reflectance, clamped to [0,1] at render
  ScalarField temperature;        // degrees C

  RigidPose pose_at(int frame) const {
    RigidPose p = pose;
    p.translation += velocity * frame;
    return p;
  }
};

// Full scene description. The trajectory lists thermal-camera poses
// T_world_thermal per frame; the RGB camera rides the rig extrinsic.
// Rays that miss all geometry get the background depth/temperature/albedo
// filler (not multi-view consistent — fixtures for tight-tolerance tests
// should cover the frame with geometry).
struct SceneSpec {
  uint64_t seed = 0;
  std::vector<SceneObject> objects;
  std::vector<RigidPose> trajectory;
  StereoRig rig;
  double thermal_noise_sigma = 0.0;  // Gaussian count noise, 0 disables
  double background_depth = 50.0;    // m, camera-frame z for missed rays
  double background_temperature = 10.0;  // C
  double background_albedo = 0.2;
  double min_coverage = 0.5;  // asserted fraction of rays hitting geometry
};

// One rendered frame from both cameras with exact ground truth attached.
struct MultiSpectralPair {
  ImageGrid<3> rgb;              // unquantized reflectance in [0,1]
  RawThermalImage thermal_raw;   // quantized 14-bit counts
  DepthMap gt_depth_thermal;     // camera-frame z, thermal camera
  DepthMap gt_depth_rgb;
  RigidPose t_world_thermal;
  RigidPose t_world_rgb;
  int timestamp = 0;
};

enum class CameraSelect { THERMAL, RGB };

// Ray-casts every frame of the trajectory. Throws std::domain_error when a
// camera sits inside a box or coverage drops below spec.min_coverage.
std::vector<MultiSpectralPair> render_sequence(const SceneSpec& spec, int n_frames);

// Exact correspondence field from frame i to frame j of the selected
// camera, computed from ray hits and object motion — the independent oracle
// for rigid_flow and flow_reversal. Pixels that miss geometry, project out
// of frame j, or are occluded in frame j get mask 0.
FlowField analytic_flow(const SceneSpec& spec, int frame_i, int frame_j, CameraSelect camera);

// Fixture scenes used by tests and the CLI default configs.
//
// A fronto-parallel textured plane spanning the full view of every frame,
// with small in-plane camera motion. affine_intensity selects affine
// textures (bilinear-exact warping) versus smooth sinusoidal ones.
SceneSpec make_plane_scene(bool affine_intensity, uint64_t seed);
// A slanted plane at 4-6 m with multi-axis camera motion; textures are
// low-frequency sinusoids. The workhorse for recovery experiments.
SceneSpec make_slanted_scene(uint64_t seed);
// A large tilted textured box filling the view: creased multi-plane depth
// structure with no occlusion edges. A bare plane admits a depth/pose
// compensation family (planar two-view degeneracy) that hides translation
// errors, so pose recovery experiments use this scene instead.
SceneSpec make_structured_scene(uint64_t seed);
// Plane scene plus a hot box sweeping through the view — violates the
// static-scene assumption to exercise the consistency mask.
SceneSpec make_moving_object_scene(uint64_t seed);

}  // namespace thermoflux
