#pragma once

#include <array>
#include <string>
#include <vector>

#include "thermoflux/loss.hpp"
#include "thermoflux/synth.hpp"

namespace thermoflux {

enum class GradientMode { ANALYTIC, FINITE_DIFFERENCE };
enum class StopReason { CONVERGED, MAX_ITERATIONS, DIVERGED };
// Descent direction used by refine. GRADIENT_DESCENT is the plain per-block
// scheme; LBFGS builds a quasi-Newton metric from gradient history, which
// follows the narrow depth/pose compensation valleys of this objective far
// faster (both remain monotone via the same backtracking acceptance).
enum class Algorithm { GRADIENT_DESCENT, LBFGS };

std::string to_string(GradientMode mode);
std::string to_string(StopReason reason);
std::string to_string(Algorithm algorithm);

// Free optimization variables standing in for the depth/pose networks:
// per-pixel log-depth (positivity by construction) and two pose twists.
struct OptimState {
  std::array<ImageGrid<1>, 3> log_depths;
  std::array<Twist, 2> twists = {Twist::Zero(), Twist::Zero()};
  int iteration = 0;
  LossReport report;

  static OptimState from_depths(const std::array<DepthMap, 3>& depths,
                                const std::array<Twist, 2>& twists);
  std::array<DepthMap, 3> depths() const;  // exp(log_depths)
};

struct OptimizerConfig {
  // Per-block step sizes. Gradient multipliers in GRADIENT_DESCENT mode; in
  // LBFGS mode the same values act as a static block preconditioner (the
  // variables are scaled by 1/sqrt(step), so a unit step of the fallback
  // metric reproduces the gradient-descent step). Zero freezes a block.
  double depth_step = 1e3;    // on log-depths; their gradients carry a 1/|V| factor
  double twist_step = 0.2;    // on twists
  int max_iterations = 2000;
  double tolerance = 1e-7;    // relative total-loss decrease per step
  double d_min = 0.1;         // meters; log-depths are projected into
  double d_max = 100.0;       // [log d_min, log d_max] after each step
  GradientMode mode = GradientMode::ANALYTIC;
  double fd_step = 1e-4;      // step for FINITE_DIFFERENCE mode
  Algorithm algorithm = Algorithm::GRADIENT_DESCENT;
  int lbfgs_history = 16;     // curvature pairs kept in LBFGS mode
  LossConfig loss;

  void validate() const;  // steps/tolerance >= 0, 0 < d_min < d_max, ...
};

struct LossGradients {
  LossReport report;
  std::array<ImageGrid<1>, 3> d_log_depths;
  std::array<Twist, 2> d_twists = {Twist::Zero(), Twist::Zero()};
};

// Total loss and its gradient with respect to the free variables, via the
// analytic reverse pass or dense central differences depending on cfg.mode
// (the latter is intended for small instances only). Throws std::runtime_error
// naming the offending term or gradient block if any value is non-finite.
LossGradients loss_gradients(const OptimState& state, const MultiSpectralPair& f0,
                             const MultiSpectralPair& f1, const MultiSpectralPair& f2,
                             const LossWeights& weights, const StereoRig& rig,
                             const OptimizerConfig& cfg);

struct FiniteDiffWorst {
  std::string parameter;  // e.g. "log_depth[1](7,9)" or "twist[0][3]"
  double analytic = 0.0;
  double fd = 0.0;
  double rel_err = 0.0;
};

struct FiniteDiffReport {
  int checked = 0;
  int excluded = 0;  // kinks and non-informative (near-zero) parameters
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  FiniteDiffWorst worst;
};

// Central-difference audit of the analytic gradient on a random subsample of
// at least min_params parameters (all 12 twist coordinates always included).
// Parameters where FD(step) and FD(2*step) disagree — the stencil straddles a
// kink of the piecewise-smooth objective, e.g. a zero-residual L1 pixel or a
// bilinear cell boundary — are excluded, as are parameters with no measurable
// sensitivity. The audited objective differentiates the consistency mask
// (cfg.differentiate_mask is forced on): finite differences of the actual
// scalar see the mask vary, so only that configuration is checkable.
// Deterministic for a fixed seed.
FiniteDiffReport finite_diff_check(const OptimState& state, const MultiSpectralPair& f0,
                                   const MultiSpectralPair& f1, const MultiSpectralPair& f2,
                                   const LossWeights& weights, const StereoRig& rig,
                                   LossConfig cfg = {}, double step = 1e-4, int min_params = 200,
                                   unsigned seed = 0);

std::string finite_diff_report_json(const FiniteDiffReport& report);

struct RefineResult {
  OptimState state;
  std::vector<LossReport> trace;  // initial evaluation plus one per accepted step
  StopReason reason = StopReason::MAX_ITERATIONS;
};

// Descent with per-block step sizes and backtracking halving on loss
// increase. In GRADIENT_DESCENT mode the step is the per-block scaled
// negative gradient with a backtracking scale that persists across
// iterations (halved on each rejected trial, regrown on success). In LBFGS
// mode the direction comes from the two-loop recursion over recent curvature
// pairs, falling back to the scaled gradient while no history exists or when
// a direction is rejected outright (history is then dropped). Either way a
// trial is accepted only if the total does not increase, so the trace is
// monotone nonincreasing by construction. Stops at max_iterations, or once
// the relative decrease stays below cfg.tolerance for 10 consecutive
// iterations, or — after 20 consecutive rejected trials with no intervening
// success — returns the last valid state with StopReason::DIVERGED.
RefineResult refine(const OptimState& initial, const MultiSpectralPair& f0,
                    const MultiSpectralPair& f1, const MultiSpectralPair& f2,
                    const LossWeights& weights, const StereoRig& rig,
                    const OptimizerConfig& cfg);

// CSV with header: iteration,total,rec_T,gc_T,rec_RGB,gc_RGB,smooth
std::string refine_trace_csv(const std::vector<LossReport>& trace);

}  // namespace thermoflux
