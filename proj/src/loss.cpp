#include "thermoflux/loss.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "thermoflux/parallel.hpp"
#include "thermoflux/sampling.hpp"

namespace thermoflux {

namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct WindowStats {
  double mu_a = 0.0, mu_b = 0.0, va = 0.0, vb = 0.0, cab = 0.0;
  int n = 0;
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // inclusive window bounds
};

inline bool window_member(const ImageGrid<1>* valid, int x, int y) {
  return valid == nullptr || valid->at(x, y) == 1.0;
}

template <int C>
WindowStats window_stats(const ImageGrid<C>& a, const ImageGrid<C>& b, int x, int y, int ch,
                         const ImageGrid<1>* valid) {
  WindowStats s;
  s.x0 = std::max(0, x - 1);
  s.x1 = std::min(a.width - 1, x + 1);
  s.y0 = std::max(0, y - 1);
  s.y1 = std::min(a.height - 1, y + 1);
  for (int wy = s.y0; wy <= s.y1; ++wy)
    for (int wx = s.x0; wx <= s.x1; ++wx) {
      if (!window_member(valid, wx, wy)) continue;
      s.mu_a += a.at(wx, wy, ch);
      s.mu_b += b.at(wx, wy, ch);
      ++s.n;
    }
  if (s.n == 0) return s;
  s.mu_a /= s.n;
  s.mu_b /= s.n;
  for (int wy = s.y0; wy <= s.y1; ++wy)
    for (int wx = s.x0; wx <= s.x1; ++wx) {
      if (!window_member(valid, wx, wy)) continue;
      const double da = a.at(wx, wy, ch) - s.mu_a;
      const double db = b.at(wx, wy, ch) - s.mu_b;
      s.va += da * da;
      s.vb += db * db;
      s.cab += da * db;
    }
  s.va /= s.n;
  s.vb /= s.n;
  s.cab /= s.n;
  return s;
}

}  // namespace

template <int C>
ImageGrid<1> ssim_map(const ImageGrid<C>& a, const ImageGrid<C>& b, const ImageGrid<1>* valid) {
  if (!a.same_shape(b)) throw std::domain_error("ssim_map: shape mismatch");
  if (valid && (valid->width != a.width || valid->height != a.height))
    throw std::domain_error("ssim_map: validity shape mismatch");
  ImageGrid<1> out(a.width, a.height);
  parallel_chunks(0, a.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < a.width; ++x) {
        double acc = 0.0;
        for (int ch = 0; ch < C; ++ch) {
          const WindowStats s = window_stats(a, b, x, y, ch, valid);
          if (s.n == 0) {
            acc += 1.0;  // no observable pixels: neutral score
            continue;
          }
          const double a1 = 2.0 * (s.mu_a * s.mu_b) + kC1;
          const double a2 = 2.0 * s.cab + kC2;
          const double b1 = s.mu_a * s.mu_a + s.mu_b * s.mu_b + kC1;
          const double b2 = s.va + s.vb + kC2;
          acc += (a1 * a2) / (b1 * b2);
        }
        out.at(x, y) = acc / C;
      }
  });
  return out;
}

template <int C>
void ssim_backward(const ImageGrid<C>& a, const ImageGrid<C>& b, const ImageGrid<1>& d_ssim,
                   ImageGrid<C>* d_b, const ImageGrid<1>* valid) {
  if (!a.same_shape(b) || !d_ssim.same_shape(*d_b) || d_ssim.width != a.width ||
      d_ssim.height != a.height)
    throw std::domain_error("ssim_backward: shape mismatch");
  // Sequential scatter: window contributions overlap across output pixels.
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const double g = d_ssim.at(x, y);
      if (g == 0.0) continue;
      for (int ch = 0; ch < C; ++ch) {
        const WindowStats s = window_stats(a, b, x, y, ch, valid);
        if (s.n == 0) continue;  // neutral score, no dependence on b
        const double a1 = 2.0 * (s.mu_a * s.mu_b) + kC1;
        const double a2 = 2.0 * s.cab + kC2;
        const double b1 = s.mu_a * s.mu_a + s.mu_b * s.mu_b + kC1;
        const double b2 = s.va + s.vb + kC2;
        const double ssim = (a1 * a2) / (b1 * b2);
        const double d_mu = (2.0 * s.mu_a * a2) / (b1 * b2) - ssim * (2.0 * s.mu_b) / b1;
        const double d_cab = (2.0 * a1) / (b1 * b2);
        const double d_vb = -ssim / b2;
        const double gc = g / C;
        for (int wy = s.y0; wy <= s.y1; ++wy)
          for (int wx = s.x0; wx <= s.x1; ++wx) {
            if (!window_member(valid, wx, wy)) continue;
            const double da = a.at(wx, wy, ch) - s.mu_a;
            const double db = b.at(wx, wy, ch) - s.mu_b;
            d_b->at(wx, wy, ch) +=
                gc * (d_mu + d_cab * da + d_vb * 2.0 * db) / s.n;
          }
      }
    }
}

template <int C>
ImageGrid<1> reconstruction_map(const ImageGrid<C>& target, const ImageGrid<C>& synthesized,
                                double gamma, const ImageGrid<1>* valid) {
  if (!target.same_shape(synthesized)) throw std::domain_error("reconstruction_map: shape mismatch");
  const ImageGrid<1> ssim = ssim_map(target, synthesized, valid);
  ImageGrid<1> out(target.width, target.height);
  parallel_chunks(0, target.height, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < target.width; ++x) {
        double l1 = 0.0;
        for (int ch = 0; ch < C; ++ch)
          l1 += std::abs(target.at(x, y, ch) - synthesized.at(x, y, ch));
        out.at(x, y) = gamma * (1.0 - ssim.at(x, y)) / 2.0 + (1.0 - gamma) * (l1 / C);
      }
  });
  return out;
}

double masked_reduce(const ImageGrid<1>& loss_map, const ImageGrid<1>& mask,
                     const ImageGrid<1>& valid, bool* empty_valid) {
  if (!loss_map.same_shape(mask) || !loss_map.same_shape(valid))
    throw std::domain_error("masked_reduce: shape mismatch");
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < loss_map.data.size(); ++i) {
    if (valid.data[i] != 1.0) continue;
    sum += mask.data[i] * loss_map.data[i];
    ++count;
  }
  if (empty_valid) *empty_valid = count == 0;
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

ImageGrid<1> depth_inconsistency(const DepthMap& sampled, const DepthMap& compensated,
                                 const ImageGrid<1>& valid) {
  if (!sampled.same_shape(compensated) || !sampled.same_shape(valid))
    throw std::domain_error("depth_inconsistency: shape mismatch");
  ImageGrid<1> out(sampled.width, sampled.height);
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (valid.data[i] != 1.0) continue;
    const double a = sampled.data[i], b = compensated.data[i];
    if (a <= 0.0 || b <= 0.0)
      throw std::domain_error("depth_inconsistency: non-positive depth on the valid set");
    out.data[i] = std::abs(a - b) / (a + b);
  }
  return out;
}

double geometric_consistency(const ImageGrid<1>& d_diff, const ImageGrid<1>& valid,
                             ImageGrid<1>* mask_out, bool* empty_valid) {
  if (!d_diff.same_shape(valid)) throw std::domain_error("geometric_consistency: shape mismatch");
  if (mask_out) {
    *mask_out = ImageGrid<1>(d_diff.width, d_diff.height);
    for (size_t i = 0; i < d_diff.data.size(); ++i) mask_out->data[i] = 1.0 - d_diff.data[i];
  }
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < d_diff.data.size(); ++i) {
    if (valid.data[i] != 1.0) continue;
    sum += d_diff.data[i];
    ++count;
  }
  if (empty_valid) *empty_valid = count == 0;
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

namespace {

template <int C>
double image_edge_weight(const ImageGrid<C>& img, int x, int y, int nx, int ny) {
  double diff = 0.0;
  for (int ch = 0; ch < C; ++ch) diff += std::abs(img.at(nx, ny, ch) - img.at(x, y, ch));
  return std::exp(-diff / C);
}

}  // namespace

template <int C>
double smoothness_loss(const DepthMap& depth, const ImageGrid<C>& image) {
  if (depth.width != image.width || depth.height != image.height)
    throw std::domain_error("smoothness_loss: shape mismatch");
  require_positive_depth(depth, "smoothness_loss");
  const int w = depth.width, h = depth.height;
  double mu = 0.0;
  for (double v : depth.data) mu += v;
  mu /= static_cast<double>(depth.data.size());

  double sx = 0.0, sy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x)
      sx += std::abs(depth.at(x + 1, y) - depth.at(x, y)) * image_edge_weight(image, x, y, x + 1, y);
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x)
      sy += std::abs(depth.at(x, y + 1) - depth.at(x, y)) * image_edge_weight(image, x, y, x, y + 1);
  const double nx = static_cast<double>(w - 1) * h;
  const double ny = static_cast<double>(w) * (h - 1);
  double s = 0.0;
  if (nx > 0) s += sx / nx;
  if (ny > 0) s += sy / ny;
  return s / mu;
}

template <int C>
void smoothness_backward(const DepthMap& depth, const ImageGrid<C>& image, double d_loss,
                         DepthMap* d_depth) {
  const int w = depth.width, h = depth.height;
  double mu = 0.0;
  for (double v : depth.data) mu += v;
  mu /= static_cast<double>(depth.data.size());
  const double loss = smoothness_loss(depth, image);
  const double nx = static_cast<double>(w - 1) * h;
  const double ny = static_cast<double>(w) * (h - 1);

  // d/dD_k = (edge sign terms)/(mu * N) - loss/(mu * n)
  const double mean_term = d_loss * loss / (mu * static_cast<double>(depth.data.size()));
  for (size_t i = 0; i < depth.data.size(); ++i) d_depth->data[i] -= mean_term;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const double s = sgn(depth.at(x + 1, y) - depth.at(x, y));
      const double g = d_loss * s * image_edge_weight(image, x, y, x + 1, y) / (mu * nx);
      d_depth->at(x + 1, y) += g;
      d_depth->at(x, y) -= g;
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double s = sgn(depth.at(x, y + 1) - depth.at(x, y));
      const double g = d_loss * s * image_edge_weight(image, x, y, x, y + 1) / (mu * ny);
      d_depth->at(x, y + 1) += g;
      d_depth->at(x, y) -= g;
    }
}

LossWeights LossWeights::indoor() { return LossWeights{}; }

LossWeights LossWeights::outdoor() {
  LossWeights w;
  w.gamma_t = 0.85;
  w.gamma_rgb = 0.30;
  w.lambda_t = 1.0;
  w.lambda_rgb = 0.1;
  return w;
}

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || lambda_t < 0 || lambda_rgb < 0 || smoothness_weight < 0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (gamma_t < 0 || gamma_t > 1 || gamma_rgb < 0 || gamma_rgb > 1)
    throw std::invalid_argument("gamma weights must lie in [0,1]");
}

namespace {

struct PairSpec {
  int tgt, src, pose_index;
  bool inverted;
};

constexpr PairSpec kPairs[4] = {
    {0, 1, 0, false}, {1, 0, 0, true}, {1, 2, 1, false}, {2, 1, 1, true}};

struct PairWork {
  PairSpec spec{};
  RigidPose pose_t, pose_rgb;
  InverseWarpCache<3> wt;
  WarpResult<3> rt;
  ImageGrid<1> rec_map_t, ddiff_t, mask_t;
  double rec_t = 0.0, gc_t = 0.0;
  bool empty_t = false;
  int count_t = 0;
  InverseWarpCache<3> wr;
  WarpResult<3> rr;
  ImageGrid<1> valid_r, rec_map_r, ddiff_r, mask_r;
  double rec_r = 0.0, gc_r = 0.0;
  bool empty_r = false;
  int count_r = 0;
};

struct SnippetWork {
  const MultiSpectralPair* frames[3] = {nullptr, nullptr, nullptr};
  std::array<ImageGrid<3>, 3> repr;
  std::array<ForwardDepthCache, 3> fdw_cache;
  std::array<ForwardDepth, 3> fdw;
  std::array<DepthMap, 3> filled;
  std::array<PairWork, 4> pairs;
  double smooth = 0.0;
};

LossReport evaluate_snippet(const MultiSpectralPair& f0, const MultiSpectralPair& f1,
                            const MultiSpectralPair& f2, const std::array<DepthMap, 3>& depths,
                            const std::array<RigidPose, 2>& poses, const LossWeights& weights,
                            const StereoRig& rig, const LossConfig& cfg, SnippetWork& work) {
  weights.validate();
  rig.validate();
  cfg.thermal.validate();
  cfg.reversal.validate();
  if (!(f0.timestamp < f1.timestamp && f1.timestamp < f2.timestamp))
    throw std::invalid_argument("snippet frames must be time-ordered");
  work.frames[0] = &f0;
  work.frames[1] = &f1;
  work.frames[2] = &f2;
  for (int i = 0; i < 3; ++i) {
    if (depths[i].width != rig.thermal.width || depths[i].height != rig.thermal.height)
      throw std::invalid_argument("depth map does not match the thermal intrinsics");
    work.repr[i] = represent(work.frames[i]->thermal_raw, cfg.thermal);
    work.fdw[i] = forward_warp_depth(depths[i], rig.t_rgb_thermal, rig.thermal, rig.rgb,
                                     cfg.reversal, cfg.transform_depth_values, &work.fdw_cache[i]);
    // Holes get a positive placeholder so the RGB warp stays well-posed; the
    // pixels are excluded from every valid set and the fill carries no
    // gradient.
    work.filled[i] = work.fdw[i].depth;
    for (size_t p = 0; p < work.filled[i].data.size(); ++p)
      if (work.fdw[i].valid.data[p] != 1.0) work.filled[i].data[p] = 1.0;
  }

  for (int k = 0; k < 4; ++k) {
    PairWork& pw = work.pairs[k];
    pw.spec = kPairs[k];
    const RigidPose& base = poses[pw.spec.pose_index];
    pw.pose_t = pw.spec.inverted ? base.inverse() : base;
    pw.pose_rgb = warp_pose(pw.pose_t, rig.t_rgb_thermal);
    const int tgt = pw.spec.tgt, src = pw.spec.src;

    // Thermal branch.
    pw.rt = inverse_warp(work.repr[src], depths[tgt], pw.pose_t, rig.thermal, &depths[src],
                         &pw.wt);
    pw.rec_map_t = reconstruction_map(work.repr[tgt], pw.rt.image, weights.gamma_t, &pw.rt.valid);
    pw.ddiff_t = depth_inconsistency(pw.rt.sampled_depth, pw.rt.projected_depth, pw.rt.valid);
    pw.gc_t = geometric_consistency(pw.ddiff_t, pw.rt.valid, &pw.mask_t, &pw.empty_t);
    pw.rec_t = masked_reduce(pw.rec_map_t, pw.mask_t, pw.rt.valid);
    pw.count_t = 0;
    for (double v : pw.rt.valid.data) pw.count_t += v == 1.0;

    // RGB branch: warp the RGB image with the forward-warped depth and the
    // rig-conjugated pose.
    pw.rr = inverse_warp(work.frames[src]->rgb, work.filled[tgt], pw.pose_rgb, rig.rgb,
                         &work.filled[src], &pw.wr);
    pw.valid_r = ImageGrid<1>(rig.rgb.width, rig.rgb.height);
    for (size_t p = 0; p < pw.valid_r.data.size(); ++p) {
      const bool ok = pw.rr.valid.data[p] == 1.0 && work.fdw[tgt].valid.data[p] == 1.0 &&
                      bilinear_apply(work.fdw[src].valid, pw.wr.coeffs[p], 0) > 1.0 - 1e-12;
      pw.valid_r.data[p] = ok ? 1.0 : 0.0;
    }
    pw.rec_map_r =
        reconstruction_map(work.frames[tgt]->rgb, pw.rr.image, weights.gamma_rgb, &pw.valid_r);
    pw.ddiff_r = depth_inconsistency(pw.rr.sampled_depth, pw.rr.projected_depth, pw.valid_r);
    pw.gc_r = geometric_consistency(pw.ddiff_r, pw.valid_r, &pw.mask_r, &pw.empty_r);
    pw.rec_r = masked_reduce(pw.rec_map_r, pw.mask_r, pw.valid_r);
    pw.count_r = 0;
    for (double v : pw.valid_r.data) pw.count_r += v == 1.0;
  }

  double rec_t = 0.0, gc_t = 0.0, rec_r = 0.0, gc_r = 0.0;
  for (const PairWork& pw : work.pairs) {
    rec_t += pw.rec_t;
    gc_t += pw.gc_t;
    rec_r += pw.rec_r;
    gc_r += pw.gc_r;
  }
  rec_t /= 4.0;
  gc_t /= 4.0;
  rec_r /= 4.0;
  gc_r /= 4.0;

  work.smooth = 0.0;
  if (weights.use_smoothness) {
    for (int i = 0; i < 3; ++i) work.smooth += smoothness_loss(depths[i], work.repr[i]);
    work.smooth /= 3.0;
  }

  LossReport report;
  report.terms["rec_T"] = rec_t;
  report.terms["gc_T"] = gc_t;
  report.terms["rec_RGB"] = rec_r;
  report.terms["gc_RGB"] = gc_r;
  report.terms["smooth"] = work.smooth;
  report.total = weights.lambda_t * (weights.alpha * rec_t + weights.beta * gc_t) +
                 weights.lambda_rgb * (weights.alpha * rec_r + weights.beta * gc_r);
  if (weights.use_smoothness) report.total += weights.smoothness_weight * work.smooth;
  report.terms["total"] = report.total;
  for (const PairWork& pw : work.pairs) {
    report.empty_thermal_pairs += pw.empty_t;
    report.empty_rgb_pairs += pw.empty_r;
    if (!cfg.collect_diagnostics) continue;
    PairDiagnostics d;
    d.tgt = pw.spec.tgt;
    d.src = pw.spec.src;
    d.rec_residual_t = pw.rec_map_t;
    d.ddiff_t = pw.ddiff_t;
    d.mask_t = pw.mask_t;
    d.valid_t = pw.rt.valid;
    d.rec_residual_rgb = pw.rec_map_r;
    d.ddiff_rgb = pw.ddiff_r;
    d.mask_rgb = pw.mask_r;
    d.valid_rgb = pw.valid_r;
    report.pairs.push_back(std::move(d));
  }
  return report;
}

// Adjoints of one directed-pair branch: fills the image/sampled/projected
// adjoint maps for inverse_warp_backward from the reduction chain.
struct BranchAdjoints {
  ImageGrid<3> d_image;
  ImageGrid<1> d_sampled, d_projected, d_ssim;
};

template <typename ValidGrid>
void branch_adjoints(const ImageGrid<3>& target, const WarpResult<3>& r,
                     const ImageGrid<1>& rec_map, const ImageGrid<1>& ddiff,
                     const ImageGrid<1>& mask, const ValidGrid& valid, int count, double g_rec,
                     double g_gc, double gamma, bool differentiate_mask, BranchAdjoints& adj) {
  const int w = target.width, h = target.height;
  adj.d_image = ImageGrid<3>(w, h);
  adj.d_sampled = ImageGrid<1>(w, h);
  adj.d_projected = ImageGrid<1>(w, h);
  adj.d_ssim = ImageGrid<1>(w, h);
  const double inv_n = 1.0 / static_cast<double>(count);
  for (size_t p = 0; p < valid.data.size(); ++p) {
    if (valid.data[p] != 1.0) continue;
    const double dr = g_rec * mask.data[p] * inv_n;
    adj.d_ssim.data[p] = dr * (-gamma / 2.0);
    for (int ch = 0; ch < 3; ++ch)
      adj.d_image.data[3 * p + ch] =
          dr * (1.0 - gamma) / 3.0 * sgn(r.image.data[3 * p + ch] - target.data[3 * p + ch]);
    double dd = g_gc * inv_n;
    if (differentiate_mask) dd -= g_rec * rec_map.data[p] * inv_n;
    const double a = r.sampled_depth.data[p], b = r.projected_depth.data[p];
    const double s = sgn(a - b), den = a + b;
    adj.d_sampled.data[p] = dd * (s - ddiff.data[p]) / den;
    adj.d_projected.data[p] = dd * (-s - ddiff.data[p]) / den;
  }
}

}  // namespace

LossReport snippet_loss(const MultiSpectralPair& f0, const MultiSpectralPair& f1,
                        const MultiSpectralPair& f2, const std::array<DepthMap, 3>& depths,
                        const std::array<RigidPose, 2>& poses, const LossWeights& weights,
                        const StereoRig& rig, const LossConfig& cfg) {
  SnippetWork work;
  return evaluate_snippet(f0, f1, f2, depths, poses, weights, rig, cfg, work);
}

LossReport snippet_loss_with_gradients(const MultiSpectralPair& f0, const MultiSpectralPair& f1,
                                       const MultiSpectralPair& f2,
                                       const std::array<DepthMap, 3>& depths,
                                       const std::array<Twist, 2>& xi, const LossWeights& weights,
                                       const StereoRig& rig, const LossConfig& cfg,
                                       SnippetGradients* grads) {
  const std::array<RigidPose, 2> poses = {se3_exp(xi[0]), se3_exp(xi[1])};
  SnippetWork work;
  LossReport report = evaluate_snippet(f0, f1, f2, depths, poses, weights, rig, cfg, work);
  if (!grads) return report;

  const int tw = rig.thermal.width, th = rig.thermal.height;
  const int rw = rig.rgb.width, rh = rig.rgb.height;
  for (int i = 0; i < 3; ++i) grads->d_depths[i] = DepthMap(tw, th);
  for (int k = 0; k < 2; ++k) grads->d_twists[k].setZero();
  std::array<ImageGrid<1>, 3> d_fdw = {ImageGrid<1>(rw, rh), ImageGrid<1>(rw, rh),
                                       ImageGrid<1>(rw, rh)};

  const std::array<PoseDifferential, 2> dexp = {se3_exp_differential(xi[0]),
                                                se3_exp_differential(xi[1])};

  const double g_rec_t = weights.lambda_t * weights.alpha / 4.0;
  const double g_gc_t = weights.lambda_t * weights.beta / 4.0;
  const double g_rec_r = weights.lambda_rgb * weights.alpha / 4.0;
  const double g_gc_r = weights.lambda_rgb * weights.beta / 4.0;

  for (PairWork& pw : work.pairs) {
    const int tgt = pw.spec.tgt, src = pw.spec.src, k = pw.spec.pose_index;
    // Thermal branch.
    if (!pw.empty_t && (g_rec_t != 0.0 || g_gc_t != 0.0)) {
      BranchAdjoints adj;
      branch_adjoints(work.repr[tgt], pw.rt, pw.rec_map_t, pw.ddiff_t, pw.mask_t, pw.rt.valid,
                      pw.count_t, g_rec_t, g_gc_t, weights.gamma_t, cfg.differentiate_mask, adj);
      ssim_backward(work.repr[tgt], pw.rt.image, adj.d_ssim, &adj.d_image, &pw.rt.valid);
      PoseGrad pg;
      inverse_warp_backward(pw.wt, work.repr[src], &depths[src], &adj.d_image, &adj.d_sampled,
                            &adj.d_projected, &grads->d_depths[tgt], &grads->d_depths[src], &pg);
      if (!pw.spec.inverted) {
        grads->d_twists[k] += contract_differential(dexp[k], pg.rotation, pg.translation);
      } else {
        const PoseDifferential dinv = invert_differential(poses[k], dexp[k]);
        grads->d_twists[k] += contract_differential(dinv, pg.rotation, pg.translation);
      }
    }
    // RGB branch.
    if (!pw.empty_r && (g_rec_r != 0.0 || g_gc_r != 0.0)) {
      BranchAdjoints adj;
      branch_adjoints(work.frames[tgt]->rgb, pw.rr, pw.rec_map_r, pw.ddiff_r, pw.mask_r,
                      pw.valid_r, pw.count_r, g_rec_r, g_gc_r, weights.gamma_rgb,
                      cfg.differentiate_mask, adj);
      ssim_backward(work.frames[tgt]->rgb, pw.rr.image, adj.d_ssim, &adj.d_image, &pw.valid_r);
      PoseGrad pg;
      inverse_warp_backward(pw.wr, work.frames[src]->rgb, &work.filled[src], &adj.d_image,
                            &adj.d_sampled, &adj.d_projected, &d_fdw[tgt], &d_fdw[src], &pg);
      const PoseDifferential dconj = conjugate_differential(rig.t_rgb_thermal, dexp[k]);
      if (!pw.spec.inverted) {
        grads->d_twists[k] += contract_differential(dconj, pg.rotation, pg.translation);
      } else {
        const RigidPose conj = warp_pose(poses[k], rig.t_rgb_thermal);
        const PoseDifferential dinvc = invert_differential(conj, dconj);
        grads->d_twists[k] += contract_differential(dinvc, pg.rotation, pg.translation);
      }
    }
  }

  for (int i = 0; i < 3; ++i) {
    // Hole pixels hold a constant fill: their adjoint must not reach the
    // thermal depth.
    for (size_t p = 0; p < d_fdw[i].data.size(); ++p)
      if (work.fdw[i].valid.data[p] != 1.0) d_fdw[i].data[p] = 0.0;
    forward_warp_depth_backward(work.fdw_cache[i], d_fdw[i], &grads->d_depths[i]);
    if (weights.use_smoothness)
      smoothness_backward(depths[i], work.repr[i], weights.smoothness_weight / 3.0,
                          &grads->d_depths[i]);
  }
  return report;
}

std::string loss_report_json(const LossReport& report) {
  nlohmann::json j;
  for (const auto& [name, value] : report.terms) j[name] = value;
  j["empty_thermal_pairs"] = report.empty_thermal_pairs;
  j["empty_rgb_pairs"] = report.empty_rgb_pairs;
  return j.dump(2);
}

template ImageGrid<1> ssim_map<1>(const ImageGrid<1>&, const ImageGrid<1>&, const ImageGrid<1>*);
template ImageGrid<1> ssim_map<3>(const ImageGrid<3>&, const ImageGrid<3>&, const ImageGrid<1>*);
template void ssim_backward<1>(const ImageGrid<1>&, const ImageGrid<1>&, const ImageGrid<1>&,
                               ImageGrid<1>*, const ImageGrid<1>*);
template void ssim_backward<3>(const ImageGrid<3>&, const ImageGrid<3>&, const ImageGrid<1>&,
                               ImageGrid<3>*, const ImageGrid<1>*);
template ImageGrid<1> reconstruction_map<1>(const ImageGrid<1>&, const ImageGrid<1>&, double,
                                            const ImageGrid<1>*);
template ImageGrid<1> reconstruction_map<3>(const ImageGrid<3>&, const ImageGrid<3>&, double,
                                            const ImageGrid<1>*);
template double smoothness_loss<1>(const DepthMap&, const ImageGrid<1>&);
template double smoothness_loss<3>(const DepthMap&, const ImageGrid<3>&);
template void smoothness_backward<1>(const DepthMap&, const ImageGrid<1>&, double, DepthMap*);
template void smoothness_backward<3>(const DepthMap&, const ImageGrid<3>&, double, DepthMap*);

}  // namespace thermoflux
