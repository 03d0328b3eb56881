#pragma once

#include <optional>
#include <vector>

#include "thermoflux/camera.hpp"
#include "thermoflux/flow.hpp"
#include "thermoflux/image.hpp"
#include "thermoflux/pose.hpp"
#include "thermoflux/sampling.hpp"

namespace thermoflux {

// Gaussian splatting parameters for the flow reversal layer. The paper
// fixes none of these; defaults are ours.
struct FlowReversalConfig {
  double delta = 1.0;        // Gaussian width in pixels
  int footprint_radius = 1;  // Chebyshev radius of the splat neighborhood
  double hole_eps = 1e-4;    // weight sums below this mark a hole

  void validate() const {
    if (!(delta > 0.0)) throw std::invalid_argument("flow reversal delta must be positive");
    if (footprint_radius < 1) throw std::invalid_argument("footprint radius must be >= 1");
    if (!(hole_eps > 0.0)) throw std::invalid_argument("hole_eps must be positive");
  }
};

// Output of inverse warping. valid is the set V: 1 where the projection
// landed in bounds with positive depth. sampled_depth carries the
// interpolated source depth (the D-tilde of the geometric consistency
// pair) when a source depth map was supplied; projected_depth carries the
// z-coordinate of the transformed point (the compensated depth D-prime).
template <int C>
struct WarpResult {
  ImageGrid<C> image;
  ImageGrid<1> valid;
  DepthMap sampled_depth;
  DepthMap projected_depth;
};

// Forward-warped depth: value 0 where valid = 0 (holes or out-of-bounds
// samples).
struct ForwardDepth {
  DepthMap depth;
  ImageGrid<1> valid;
};

// Accumulated loss gradient with respect to a pose, in matrix coordinates;
// contract with a PoseDifferential to reach twist space.
struct PoseGrad {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// ---------------------------------------------------------------------------
// Forward ops. Each takes an optional cache the matching *_backward pass
// replays; forward results are identical with or without a cache.
// ---------------------------------------------------------------------------

// Everything rigid_flow computed per pixel, kept for the backward pass.
struct RigidFlowCache {
  CameraIntrinsics k_src, k_dst;
  RigidPose pose;
  std::vector<Eigen::Vector3d> x_src;  // backprojected points, source camera frame
  std::vector<Eigen::Vector3d> x_dst;  // after the rigid transform
  FlowField flow;
};

// Pixel displacement induced by depth + relative pose: for each pixel p of
// the source grid, X = backproject(p, D(p), K_src), X' = T X, flow =
// project(X', K_dst) - p. Mask 0 where z' <= 1e-6 or the projection leaves
// the destination image. Throws std::domain_error on non-positive depth.
FlowField rigid_flow(const DepthMap& depth, const RigidPose& t_dst_src,
                     const CameraIntrinsics& k_src, const CameraIntrinsics& k_dst,
                     RigidFlowCache* cache = nullptr);

// Backward: feeds d(loss)/d(flow) — and optionally d(loss)/d(z') for
// consumers of the projected depth — back to the depth map and pose.
// Masked pixels contribute nothing. Accumulates into the outputs.
void rigid_flow_backward(const RigidFlowCache& cache, const ImageGrid<2>& d_flow,
                         const ImageGrid<1>* d_zprime, DepthMap* d_depth, PoseGrad* d_pose);

template <int C>
struct InverseWarpCache {
  RigidFlowCache flow;
  std::vector<BilinearCoeffs> coeffs;  // source-image footprint per target pixel
};

// Synthesizes the target image by sampling I_src at p + rigid_flow(p),
// where the flow comes from the TARGET depth map and the pose mapping
// target-frame points into the source frame. Both frames share K. If d_src
// is given, the source depth is sampled at the same coordinates.
template <int C>
WarpResult<C> inverse_warp(const ImageGrid<C>& i_src, const DepthMap& d_tgt,
                           const RigidPose& t_src_tgt, const CameraIntrinsics& k,
                           const DepthMap* d_src = nullptr,
                           InverseWarpCache<C>* cache = nullptr);

// Backward through image synthesis, depth sampling, and projection. Any of
// the gradient inputs may be null (treated as zero); any of the outputs may
// be null (dropped). d_d_src requires that the forward pass sampled a
// source depth. Accumulates into the outputs.
template <int C>
void inverse_warp_backward(const InverseWarpCache<C>& cache, const ImageGrid<C>& i_src,
                           const DepthMap* d_src, const ImageGrid<C>* d_image,
                           const ImageGrid<1>* d_sampled_depth,
                           const ImageGrid<1>* d_projected_depth, DepthMap* d_d_tgt,
                           DepthMap* d_d_src, PoseGrad* d_pose);

struct FlowReversalCache {
  ImageGrid<1> weight_sum;  // S(u)
  FlowField reversed;       // the forward output (values needed by backward)
};

// Eq. 6: Gaussian-weighted scatter of -F to the flow targets. For every
// source pixel x with mask 1, v = x + F(x) splats weight exp(-|v-u|^2 /
// delta^2) and value -F(x) onto each integer u within the Chebyshev
// footprint; outputs are weighted means, holes where the weight sum stays
// below hole_eps. The scatter runs in a fixed sequential order so results
// are byte-stable regardless of thread count.
FlowField flow_reversal(const FlowField& flow, const FlowReversalConfig& cfg,
                        FlowReversalCache* cache = nullptr);

// Backward through both paths of Eq. 6: the splatted values (-F) and the
// Gaussian weights (via v = x + F(x)). Accumulates into d_flow.
void flow_reversal_backward(const FlowField& flow, const FlowReversalConfig& cfg,
                            const FlowReversalCache& cache, const ImageGrid<2>& d_reversed,
                            ImageGrid<2>* d_flow);

struct ForwardDepthCache {
  RigidFlowCache flow;
  FlowReversalCache reversal;
  FlowReversalConfig cfg;
  std::vector<BilinearCoeffs> coeffs;  // value-map footprint per RGB pixel
  ImageGrid<1> value_map;              // what was sampled (thermal grid)
  ImageGrid<1> out_valid;
  bool transformed = false;
};

// Eq. 4: thermal depth pushed into the RGB view. Computes the cross-camera
// rigid flow, reverses it, and bilinearly samples the depth-value map at
// u + reversed(u). With transform_depth_values (default) the value map is
// the RGB-frame z of each thermal pixel; the literal-paper mode warps the
// thermal-frame values unchanged.
ForwardDepth forward_warp_depth(const DepthMap& d_thermal, const RigidPose& t_rgb_thermal,
                                const CameraIntrinsics& k_thermal,
                                const CameraIntrinsics& k_rgb, const FlowReversalConfig& cfg,
                                bool transform_depth_values = true,
                                ForwardDepthCache* cache = nullptr);

// Backward to the thermal depth map. The rig extrinsic is calibration, not
// a variable, so no pose gradient is produced. Accumulates into d_d_thermal.
void forward_warp_depth_backward(const ForwardDepthCache& cache, const ImageGrid<1>& d_depth_out,
                                 DepthMap* d_d_thermal);

// Eq. 5: the thermal-frame relative pose conjugated into the RGB frame.
inline RigidPose warp_pose(const RigidPose& t_thermal, const RigidPose& t_rgb_thermal) {
  return compose(compose(t_rgb_thermal, t_thermal), t_rgb_thermal.inverse());
}

}  // namespace thermoflux
