#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "thermoflux/image.hpp"
#include "thermoflux/pose.hpp"
#include "thermoflux/rig.hpp"
#include "thermoflux/synth.hpp"
#include "thermoflux/thermal.hpp"
#include "thermoflux/warp.hpp"

namespace thermoflux {

// Objective weights. alpha/beta weight reconstruction vs geometric
// consistency, gamma mixes SSIM against L1 per branch, lambda weights the
// thermal and RGB branches of the total.
struct LossWeights {
  double alpha = 1.0;
  double beta = 0.5;
  double gamma_t = 0.15;
  double gamma_rgb = 0.85;
  double lambda_t = 0.25;
  double lambda_rgb = 1.0;
  bool use_smoothness = false;
  double smoothness_weight = 0.1;

  static LossWeights indoor();   // gamma [0.15, 0.85], lambda [0.25, 1.0]
  static LossWeights outdoor();  // gamma [0.85, 0.30], lambda [1.0, 0.1]
  void validate() const;
};

struct LossConfig {
  ThermalRepresentationConfig thermal;
  FlowReversalConfig reversal;
  bool transform_depth_values = true;
  // The inconsistency mask M = 1 - D_diff is treated as a constant of the
  // current iterate by default; set to differentiate through it.
  bool differentiate_mask = false;
  // Copy the per-pair residual/mask/validity maps into LossReport::pairs.
  // The optimizer evaluates the loss thousands of times and never reads
  // them, so it switches this off to avoid the copies.
  bool collect_diagnostics = true;
};

// Per-directed-pair diagnostic maps (target frame index, source frame index).
struct PairDiagnostics {
  int tgt = 0;
  int src = 0;
  ImageGrid<1> rec_residual_t, ddiff_t, mask_t, valid_t;
  ImageGrid<1> rec_residual_rgb, ddiff_rgb, mask_rgb, valid_rgb;
};

struct LossReport {
  double total = 0.0;
  // Fixed term names: rec_T, gc_T, rec_RGB, gc_RGB, smooth, total.
  std::map<std::string, double> terms;
  int empty_thermal_pairs = 0;  // directed pairs whose thermal valid set was empty
  int empty_rgb_pairs = 0;
  std::vector<PairDiagnostics> pairs;
};

struct SnippetGradients {
  std::array<DepthMap, 3> d_depths;  // with respect to metric depth values
  std::array<Twist, 2> d_twists;     // with respect to the pose twists
};

// Per-pixel SSIM with 3x3 uniform local statistics (window shrinks at the
// borders), constants C1 = 0.01^2, C2 = 0.03^2 for dynamic range 1.
// Multi-channel inputs average the per-channel SSIM. Output in [-1, 1].
// When `valid` is given, window statistics are computed over valid pixels
// only, so garbage at warp-invalid pixels cannot leak into the scores of
// their valid neighbors; a window with no valid pixel scores a neutral 1.
template <int C>
ImageGrid<1> ssim_map(const ImageGrid<C>& a, const ImageGrid<C>& b,
                      const ImageGrid<1>* valid = nullptr);

// Adjoint of ssim_map with respect to its second argument (the synthesized
// image); the first argument is an observation and never differentiated.
// `valid` must match the forward call.
template <int C>
void ssim_backward(const ImageGrid<C>& a, const ImageGrid<C>& b, const ImageGrid<1>& d_ssim,
                   ImageGrid<C>* d_b, const ImageGrid<1>* valid = nullptr);

// Per-pixel gamma*(1 - SSIM)/2 + (1-gamma)*mean_channels|target - synth|.
// `valid` restricts the SSIM window statistics (see ssim_map).
template <int C>
ImageGrid<1> reconstruction_map(const ImageGrid<C>& target, const ImageGrid<C>& synthesized,
                                double gamma, const ImageGrid<1>* valid = nullptr);

// (1/|V|) sum_{p in V} mask(p) * loss_map(p); 0 with *empty_valid = true when
// V is empty. V is the set of pixels where valid == 1.
double masked_reduce(const ImageGrid<1>& loss_map, const ImageGrid<1>& mask,
                     const ImageGrid<1>& valid, bool* empty_valid = nullptr);

// D_diff = |sampled - compensated| / (sampled + compensated) on V, 0 off V.
// Throws std::domain_error when either depth is non-positive on V.
ImageGrid<1> depth_inconsistency(const DepthMap& sampled, const DepthMap& compensated,
                                 const ImageGrid<1>& valid);

// (1/|V|) sum_{p in V} d_diff(p); optionally emits the mask M = 1 - D_diff.
double geometric_consistency(const ImageGrid<1>& d_diff, const ImageGrid<1>& valid,
                             ImageGrid<1>* mask_out = nullptr, bool* empty_valid = nullptr);

// Edge-aware first-order smoothness of the mean-normalized depth:
// mean |dx(D/mean D)| e^{-|dx I|} + |dy(D/mean D)| e^{-|dy I|}.
template <int C>
double smoothness_loss(const DepthMap& depth, const ImageGrid<C>& image);

template <int C>
void smoothness_backward(const DepthMap& depth, const ImageGrid<C>& image, double d_loss,
                         DepthMap* d_depth);

// Total multi-spectral objective over a time-ordered three-frame snippet.
// poses[k] maps frame-k points into frame k+1; each adjacent pair is scored
// in both directions (the reverse direction uses the inverse pose) and the
// four directed values are averaged per term.
LossReport snippet_loss(const MultiSpectralPair& f0, const MultiSpectralPair& f1,
                        const MultiSpectralPair& f2, const std::array<DepthMap, 3>& depths,
                        const std::array<RigidPose, 2>& poses, const LossWeights& weights,
                        const StereoRig& rig, const LossConfig& cfg);

// Same objective with poses parameterized by twists (poses[k] = se3_exp
// (xi[k])), returning d total / d(depth values) and d total / d(twists).
LossReport snippet_loss_with_gradients(const MultiSpectralPair& f0, const MultiSpectralPair& f1,
                                       const MultiSpectralPair& f2,
                                       const std::array<DepthMap, 3>& depths,
                                       const std::array<Twist, 2>& xi, const LossWeights& weights,
                                       const StereoRig& rig, const LossConfig& cfg,
                                       SnippetGradients* grads);

// Serialized scalar report: the six fixed term names plus empty-set counters.
std::string loss_report_json(const LossReport& report);

}  // namespace thermoflux
