#include "thermoflux/warp.hpp"

#include <cmath>

#include "thermoflux/parallel.hpp"

namespace thermoflux {

FlowField rigid_flow(const DepthMap& depth, const RigidPose& t_dst_src,
                     const CameraIntrinsics& k_src, const CameraIntrinsics& k_dst,
                     RigidFlowCache* cache) {
  k_src.validate();
  k_dst.validate();
  if (depth.width != k_src.width || depth.height != k_src.height)
    throw std::invalid_argument("depth map does not match source intrinsics");
  require_positive_depth(depth, "rigid_flow");

  const int w = depth.width, h = depth.height;
  FlowField flow(w, h);
  RigidFlowCache local;
  RigidFlowCache& c = cache ? *cache : local;
  c.k_src = k_src;
  c.k_dst = k_dst;
  c.pose = t_dst_src;
  c.x_src.assign(static_cast<size_t>(w) * h, Eigen::Vector3d::Zero());
  c.x_dst.assign(static_cast<size_t>(w) * h, Eigen::Vector3d::Zero());

  const bool same_k = k_src.fx == k_dst.fx && k_src.fy == k_dst.fy && k_src.cx == k_dst.cx &&
                      k_src.cy == k_dst.cy && k_src.width == k_dst.width &&
                      k_src.height == k_dst.height;
  const Eigen::Matrix3d& rot = t_dst_src.rotation;
  const Eigen::Vector3d& t = t_dst_src.translation;

  parallel_chunks(0, h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const double d = depth.data[i];
        const double xh = (x - k_src.cx) / k_src.fx;
        const double yh = (y - k_src.cy) / k_src.fy;
        const Eigen::Vector3d ray(xh, yh, 1.0);
        const Eigen::Vector3d rw = rot * ray;
        const Eigen::Vector3d pd = d * rw + t;
        c.x_src[i] = d * ray;
        c.x_dst[i] = pd;
        if (pd.z() <= kMinProjectionDepth) {
          flow.delta.data[2 * i] = 0.0;
          flow.delta.data[2 * i + 1] = 0.0;
          flow.mask.data[i] = 0.0;
          continue;
        }
        // Flow from the displacement numerator N = X'_{xy} − r̂_{xy}·X'_z,
        // expanded so identity motion cancels term-by-term in floating
        // point: rigid_flow(identity) is exactly zero, which makes the
        // identity inverse warp bit-exact.
        const double nx = d * (rw.x() - xh * rw.z()) + (t.x() - xh * t.z());
        const double ny = d * (rw.y() - yh * rw.z()) + (t.y() - yh * t.z());
        const double inv_zp = 1.0 / pd.z();
        double fdx, fdy;
        if (same_k) {
          fdx = k_dst.fx * nx * inv_zp;
          fdy = k_dst.fy * ny * inv_zp;
        } else {
          fdx = k_dst.fx * (xh + nx * inv_zp) + k_dst.cx - x;
          fdy = k_dst.fy * (yh + ny * inv_zp) + k_dst.cy - y;
        }
        const double px = x + fdx, py = y + fdy;
        const bool inside = px >= 0.0 && px <= k_dst.width - 1.0 && py >= 0.0 &&
                            py <= k_dst.height - 1.0;
        flow.delta.data[2 * i] = fdx;
        flow.delta.data[2 * i + 1] = fdy;
        flow.mask.data[i] = inside ? 1.0 : 0.0;
      }
  });
  if (cache) cache->flow = flow;
  return flow;
}

void rigid_flow_backward(const RigidFlowCache& cache, const ImageGrid<2>& d_flow,
                         const ImageGrid<1>* d_zprime, DepthMap* d_depth, PoseGrad* d_pose) {
  const CameraIntrinsics& ks = cache.k_src;
  const CameraIntrinsics& kd = cache.k_dst;
  const Eigen::Matrix3d rt = cache.pose.rotation.transpose();
  const int w = ks.width, h = ks.height;
  // Sequential: the pose gradient is a cross-pixel reduction and must not
  // depend on the thread count.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const Eigen::Vector3d& pd = cache.x_dst[i];
      if (pd.z() <= kMinProjectionDepth) continue;  // no defined forward value
      const double gfx = d_flow.data[2 * i];
      const double gfy = d_flow.data[2 * i + 1];
      const double gz = d_zprime ? d_zprime->data[i] : 0.0;
      if (gfx == 0.0 && gfy == 0.0 && gz == 0.0) continue;
      const double inv_z = 1.0 / pd.z();
      Eigen::Vector3d g_pd(kd.fx * inv_z * gfx, kd.fy * inv_z * gfy,
                           -(kd.fx * pd.x() * gfx + kd.fy * pd.y() * gfy) * inv_z * inv_z + gz);
      if (d_pose) {
        d_pose->rotation += g_pd * cache.x_src[i].transpose();
        d_pose->translation += g_pd;
      }
      if (d_depth) {
        const Eigen::Vector3d g_ps = rt * g_pd;
        d_depth->data[i] +=
            g_ps.x() * (x - ks.cx) / ks.fx + g_ps.y() * (y - ks.cy) / ks.fy + g_ps.z();
      }
    }
}

template <int C>
WarpResult<C> inverse_warp(const ImageGrid<C>& i_src, const DepthMap& d_tgt,
                           const RigidPose& t_src_tgt, const CameraIntrinsics& k,
                           const DepthMap* d_src, InverseWarpCache<C>* cache) {
  if (i_src.width != k.width || i_src.height != k.height)
    throw std::invalid_argument("source image does not match intrinsics");
  if (d_src && !d_src->same_shape(i_src))
    throw std::invalid_argument("source depth does not match source image");

  InverseWarpCache<C> local;
  InverseWarpCache<C>& c = cache ? *cache : local;
  rigid_flow(d_tgt, t_src_tgt, k, k, &c.flow);

  const int w = k.width, h = k.height;
  WarpResult<C> out;
  out.image = ImageGrid<C>(w, h);
  out.valid = ImageGrid<1>(w, h);
  out.projected_depth = DepthMap(w, h);
  if (d_src) out.sampled_depth = DepthMap(w, h);
  c.coeffs.assign(static_cast<size_t>(w) * h, BilinearCoeffs{});

  parallel_chunks(0, h, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        out.projected_depth.data[i] = c.flow.x_dst[i].z();
        if (c.flow.x_dst[i].z() <= kMinProjectionDepth) continue;
        const double sx = x + c.flow.flow.delta.data[2 * i];
        const double sy = y + c.flow.flow.delta.data[2 * i + 1];
        const BilinearCoeffs bc = bilinear_coeffs(sx, sy, w, h);
        c.coeffs[i] = bc;
        for (int ch = 0; ch < C; ++ch)
          out.image.data[i * C + ch] = bilinear_apply(i_src, bc, ch);
        if (d_src) out.sampled_depth.data[i] = bilinear_apply(*d_src, bc, 0);
        out.valid.data[i] = bc.inside ? 1.0 : 0.0;
      }
  });
  return out;
}

template <int C>
void inverse_warp_backward(const InverseWarpCache<C>& cache, const ImageGrid<C>& i_src,
                           const DepthMap* d_src, const ImageGrid<C>* d_image,
                           const ImageGrid<1>* d_sampled_depth,
                           const ImageGrid<1>* d_projected_depth, DepthMap* d_d_tgt,
                           DepthMap* d_d_src, PoseGrad* d_pose) {
  if (d_sampled_depth && !d_src)
    throw std::invalid_argument("sampled-depth gradient without a source depth map");
  const int w = cache.flow.k_src.width, h = cache.flow.k_src.height;
  ImageGrid<2> d_flow(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      const BilinearCoeffs& bc = cache.coeffs[i];
      if (!bc.inside) continue;
      double gx = 0.0, gy = 0.0;
      if (d_image) {
        for (int ch = 0; ch < C; ++ch) {
          const double g = d_image->data[i * C + ch];
          if (g == 0.0) continue;
          double ix, iy;
          bilinear_spatial_gradient(i_src, bc, ch, &ix, &iy);
          gx += g * ix;
          gy += g * iy;
        }
      }
      if (d_sampled_depth) {
        const double g = d_sampled_depth->data[i];
        if (g != 0.0) {
          double ix, iy;
          bilinear_spatial_gradient(*d_src, bc, 0, &ix, &iy);
          gx += g * ix;
          gy += g * iy;
          if (d_d_src) bilinear_splat(*d_d_src, bc, 0, g);
        }
      }
      d_flow.data[2 * i] = gx;
      d_flow.data[2 * i + 1] = gy;
    }
  rigid_flow_backward(cache.flow, d_flow, d_projected_depth, d_d_tgt, d_pose);
}

FlowField flow_reversal(const FlowField& flow, const FlowReversalConfig& cfg,
                        FlowReversalCache* cache) {
  cfg.validate();
  const int w = flow.width(), h = flow.height();
  ImageGrid<2> mean(w, h);
  ImageGrid<1> wsum(w, h);
  const double inv_d2 = 1.0 / (cfg.delta * cfg.delta);
  const int r = cfg.footprint_radius;

  // Fixed row-major scatter order: byte-stable output for any thread count.
  // The weighted average is kept as a running mean — contributions that all
  // agree (uniform flows) then reproduce the common value bit-exactly.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (flow.mask.data[i] != 1.0) continue;
      const double fx = flow.delta.data[2 * i];
      const double fy = flow.delta.data[2 * i + 1];
      const double vx = x + fx, vy = y + fy;
      const int ux0 = std::max(0, static_cast<int>(std::ceil(vx - r)));
      const int ux1 = std::min(w - 1, static_cast<int>(std::floor(vx + r)));
      const int uy0 = std::max(0, static_cast<int>(std::ceil(vy - r)));
      const int uy1 = std::min(h - 1, static_cast<int>(std::floor(vy + r)));
      for (int uy = uy0; uy <= uy1; ++uy)
        for (int ux = ux0; ux <= ux1; ++ux) {
          const double dx = vx - ux, dy = vy - uy;
          const double wgt = std::exp(-(dx * dx + dy * dy) * inv_d2);
          const size_t u = static_cast<size_t>(uy) * w + ux;
          wsum.data[u] += wgt;
          const double step = wgt / wsum.data[u];
          mean.data[2 * u] += step * (-fx - mean.data[2 * u]);
          mean.data[2 * u + 1] += step * (-fy - mean.data[2 * u + 1]);
        }
    }

  FlowField out(w, h);
  for (size_t u = 0; u < wsum.data.size(); ++u) {
    if (wsum.data[u] >= cfg.hole_eps) {
      out.delta.data[2 * u] = mean.data[2 * u];
      out.delta.data[2 * u + 1] = mean.data[2 * u + 1];
      out.mask.data[u] = 1.0;
    } else {
      out.mask.data[u] = 0.0;
    }
  }
  if (cache) {
    cache->weight_sum = std::move(wsum);
    cache->reversed = out;
  }
  return out;
}

void flow_reversal_backward(const FlowField& flow, const FlowReversalConfig& cfg,
                            const FlowReversalCache& cache, const ImageGrid<2>& d_reversed,
                            ImageGrid<2>* d_flow) {
  const int w = flow.width(), h = flow.height();
  const double inv_d2 = 1.0 / (cfg.delta * cfg.delta);
  const int r = cfg.footprint_radius;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (flow.mask.data[i] != 1.0) continue;
      const double fx = flow.delta.data[2 * i];
      const double fy = flow.delta.data[2 * i + 1];
      const double vx = x + fx, vy = y + fy;
      const int ux0 = std::max(0, static_cast<int>(std::ceil(vx - r)));
      const int ux1 = std::min(w - 1, static_cast<int>(std::floor(vx + r)));
      const int uy0 = std::max(0, static_cast<int>(std::ceil(vy - r)));
      const int uy1 = std::min(h - 1, static_cast<int>(std::floor(vy + r)));
      double gfx = 0.0, gfy = 0.0;  // dL/dF(x)
      for (int uy = uy0; uy <= uy1; ++uy)
        for (int ux = ux0; ux <= ux1; ++ux) {
          const size_t u = static_cast<size_t>(uy) * w + ux;
          const double s = cache.weight_sum.data[u];
          if (s < cfg.hole_eps) continue;  // hole: masked output, no gradient
          const double gx = d_reversed.data[2 * u];
          const double gy = d_reversed.data[2 * u + 1];
          if (gx == 0.0 && gy == 0.0) continue;
          const double dx = vx - ux, dy = vy - uy;
          const double wgt = std::exp(-(dx * dx + dy * dy) * inv_d2);
          // Value path: d(out)/d(-F contribution) = w / S.
          gfx -= (wgt / s) * gx;
          gfy -= (wgt / s) * gy;
          // Weight path: d(out)/dw = (-F - out) / S, then dw/dv.
          const double a_w = (gx * (-fx - cache.reversed.delta.data[2 * u]) +
                              gy * (-fy - cache.reversed.delta.data[2 * u + 1])) /
                             s;
          const double dv_scale = a_w * wgt * (-2.0) * inv_d2;
          gfx += dv_scale * dx;
          gfy += dv_scale * dy;
        }
      d_flow->data[2 * i] += gfx;
      d_flow->data[2 * i + 1] += gfy;
    }
}

ForwardDepth forward_warp_depth(const DepthMap& d_thermal, const RigidPose& t_rgb_thermal,
                                const CameraIntrinsics& k_thermal, const CameraIntrinsics& k_rgb,
                                const FlowReversalConfig& cfg, bool transform_depth_values,
                                ForwardDepthCache* cache) {
  ForwardDepthCache local;
  ForwardDepthCache& c = cache ? *cache : local;
  c.transformed = transform_depth_values;
  c.cfg = cfg;

  rigid_flow(d_thermal, t_rgb_thermal, k_thermal, k_rgb, &c.flow);
  c.value_map = ImageGrid<1>(k_thermal.width, k_thermal.height);
  for (size_t i = 0; i < c.value_map.data.size(); ++i)
    c.value_map.data[i] = transform_depth_values ? c.flow.x_dst[i].z() : d_thermal.data[i];

  flow_reversal(c.flow.flow, cfg, &c.reversal);

  const int w = k_rgb.width, h = k_rgb.height;
  ForwardDepth out;
  out.depth = DepthMap(w, h);
  out.valid = ImageGrid<1>(w, h);
  c.coeffs.assign(static_cast<size_t>(w) * h, BilinearCoeffs{});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t u = static_cast<size_t>(y) * w + x;
      if (c.reversal.reversed.mask.data[u] != 1.0) continue;
      const double sx = x + c.reversal.reversed.delta.data[2 * u];
      const double sy = y + c.reversal.reversed.delta.data[2 * u + 1];
      const BilinearCoeffs bc = bilinear_coeffs(sx, sy, k_thermal.width, k_thermal.height);
      if (!bc.inside) continue;
      c.coeffs[u] = bc;
      out.depth.data[u] = bilinear_apply(c.value_map, bc, 0);
      out.valid.data[u] = 1.0;
    }
  c.out_valid = out.valid;
  return out;
}

void forward_warp_depth_backward(const ForwardDepthCache& cache, const ImageGrid<1>& d_depth_out,
                                 DepthMap* d_d_thermal) {
  const int w = cache.out_valid.width, h = cache.out_valid.height;
  const int tw = cache.value_map.width, th = cache.value_map.height;
  ImageGrid<2> d_rev(w, h);
  ImageGrid<1> d_value(tw, th);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t u = static_cast<size_t>(y) * w + x;
      if (cache.out_valid.data[u] != 1.0) continue;
      const double g = d_depth_out.data[u];
      if (g == 0.0) continue;
      const BilinearCoeffs& bc = cache.coeffs[u];
      bilinear_splat(d_value, bc, 0, g);
      double ix, iy;
      bilinear_spatial_gradient(cache.value_map, bc, 0, &ix, &iy);
      d_rev.data[2 * u] = g * ix;
      d_rev.data[2 * u + 1] = g * iy;
    }

  ImageGrid<2> d_flow(tw, th);
  flow_reversal_backward(cache.flow.flow, cache.cfg, cache.reversal, d_rev, &d_flow);
  if (cache.transformed) {
    // Value map is the transformed z: route its adjoint through the
    // projection chain together with the flow adjoint.
    rigid_flow_backward(cache.flow, d_flow, &d_value, d_d_thermal, nullptr);
  } else {
    rigid_flow_backward(cache.flow, d_flow, nullptr, d_d_thermal, nullptr);
    for (size_t i = 0; i < d_value.data.size(); ++i) d_d_thermal->data[i] += d_value.data[i];
  }
}

template WarpResult<1> inverse_warp<1>(const ImageGrid<1>&, const DepthMap&, const RigidPose&,
                                       const CameraIntrinsics&, const DepthMap*,
                                       InverseWarpCache<1>*);
template WarpResult<3> inverse_warp<3>(const ImageGrid<3>&, const DepthMap&, const RigidPose&,
                                       const CameraIntrinsics&, const DepthMap*,
                                       InverseWarpCache<3>*);
template void inverse_warp_backward<1>(const InverseWarpCache<1>&, const ImageGrid<1>&,
                                       const DepthMap*, const ImageGrid<1>*, const ImageGrid<1>*,
                                       const ImageGrid<1>*, DepthMap*, DepthMap*, PoseGrad*);
template void inverse_warp_backward<3>(const InverseWarpCache<3>&, const ImageGrid<3>&,
                                       const DepthMap*, const ImageGrid<3>*, const ImageGrid<1>*,
                                       const ImageGrid<1>*, DepthMap*, DepthMap*, PoseGrad*);

}  // namespace thermoflux
