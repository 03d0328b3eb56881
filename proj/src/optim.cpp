#include "thermoflux/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace thermoflux {

namespace {

// FD(h) vs FD(2h) relative disagreement bound. For a smooth parameter the
// central-difference truncation errors are c*h^2 and 4c*h^2, so the observed
// gap is 3c*h^2 and the h-stencil's own error is a third of it: parameters
// kept under this bound carry FD error <= ~0.7e-4 relative, leaving the
// 1e-4 comparison meaningful. Larger gaps mean the stencil straddles a kink.
constexpr double kKinkTol = 2e-4;
constexpr double kMagFloor = 1e-10;   // below this nothing is measurable

void check_finite_terms(const LossReport& report) {
  for (const auto& [name, value] : report.terms)
    if (!std::isfinite(value))
      throw std::runtime_error("non-finite value in term " + name);
}

}  // namespace

std::string to_string(GradientMode mode) {
  return mode == GradientMode::ANALYTIC ? "analytic" : "finite-difference";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::CONVERGED: return "converged";
    case StopReason::MAX_ITERATIONS: return "max-iterations";
    case StopReason::DIVERGED: return "diverged";
  }
  return "unknown";
}

std::string to_string(Algorithm algorithm) {
  return algorithm == Algorithm::GRADIENT_DESCENT ? "gradient-descent" : "lbfgs";
}

OptimState OptimState::from_depths(const std::array<DepthMap, 3>& depths,
                                   const std::array<Twist, 2>& twists) {
  OptimState state;
  for (int i = 0; i < 3; ++i) {
    state.log_depths[i] = ImageGrid<1>(depths[i].width, depths[i].height);
    for (size_t p = 0; p < depths[i].data.size(); ++p) {
      const double d = depths[i].data[p];
      if (!(d > 0.0) || !std::isfinite(d))
        throw std::invalid_argument("OptimState: depths must be positive and finite");
      state.log_depths[i].data[p] = std::log(d);
    }
  }
  state.twists = twists;
  return state;
}

std::array<DepthMap, 3> OptimState::depths() const {
  std::array<DepthMap, 3> out;
  for (int i = 0; i < 3; ++i) {
    out[i] = DepthMap(log_depths[i].width, log_depths[i].height);
    for (size_t p = 0; p < out[i].data.size(); ++p) out[i].data[p] = std::exp(log_depths[i].data[p]);
  }
  return out;
}

void OptimizerConfig::validate() const {
  if (depth_step < 0.0 || twist_step < 0.0)
    throw std::invalid_argument("OptimizerConfig: step sizes must be nonnegative");
  if (max_iterations < 0) throw std::invalid_argument("OptimizerConfig: max_iterations < 0");
  if (tolerance < 0.0) throw std::invalid_argument("OptimizerConfig: tolerance < 0");
  if (!(d_min > 0.0) || !(d_min < d_max))
    throw std::invalid_argument("OptimizerConfig: depth bounds require 0 < d_min < d_max");
  if (!(fd_step > 0.0)) throw std::invalid_argument("OptimizerConfig: fd_step must be positive");
  if (lbfgs_history < 1) throw std::invalid_argument("OptimizerConfig: lbfgs_history < 1");
}

LossGradients loss_gradients(const OptimState& state, const MultiSpectralPair& f0,
                             const MultiSpectralPair& f1, const MultiSpectralPair& f2,
                             const LossWeights& weights, const StereoRig& rig,
                             const OptimizerConfig& cfg) {
  cfg.validate();
  LossGradients out;
  const std::array<DepthMap, 3> depths = state.depths();

  if (cfg.mode == GradientMode::ANALYTIC) {
    SnippetGradients grads;
    out.report =
        snippet_loss_with_gradients(f0, f1, f2, depths, state.twists, weights, rig, cfg.loss, &grads);
    for (int i = 0; i < 3; ++i) {
      out.d_log_depths[i] = ImageGrid<1>(depths[i].width, depths[i].height);
      for (size_t p = 0; p < depths[i].data.size(); ++p)
        out.d_log_depths[i].data[p] = grads.d_depths[i].data[p] * depths[i].data[p];
    }
    out.d_twists = grads.d_twists;
  } else {
    out.report = snippet_loss_with_gradients(f0, f1, f2, depths, state.twists, weights, rig,
                                             cfg.loss, nullptr);
    LossConfig probe_cfg = cfg.loss;
    probe_cfg.collect_diagnostics = false;
    OptimState probe = state;
    const auto eval = [&] {
      return snippet_loss_with_gradients(f0, f1, f2, probe.depths(), probe.twists, weights, rig,
                                         probe_cfg, nullptr)
          .total;
    };
    const double h = cfg.fd_step;
    const auto central = [&](double* slot) {
      const double saved = *slot;
      *slot = saved + h;
      const double hi = eval();
      *slot = saved - h;
      const double lo = eval();
      *slot = saved;
      return (hi - lo) / (2.0 * h);
    };
    for (int i = 0; i < 3; ++i) {
      out.d_log_depths[i] = ImageGrid<1>(depths[i].width, depths[i].height);
      for (size_t p = 0; p < depths[i].data.size(); ++p)
        out.d_log_depths[i].data[p] = central(&probe.log_depths[i].data[p]);
    }
    for (int k = 0; k < 2; ++k)
      for (int c = 0; c < 6; ++c) out.d_twists[k][c] = central(&probe.twists[k][c]);
  }

  check_finite_terms(out.report);
  for (int i = 0; i < 3; ++i)
    for (double v : out.d_log_depths[i].data)
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite gradient in log_depths[" + std::to_string(i) + "]");
  for (int k = 0; k < 2; ++k)
    for (int c = 0; c < 6; ++c)
      if (!std::isfinite(out.d_twists[k][c]))
        throw std::runtime_error("non-finite gradient in twists[" + std::to_string(k) + "]");
  return out;
}

FiniteDiffReport finite_diff_check(const OptimState& state, const MultiSpectralPair& f0,
                                   const MultiSpectralPair& f1, const MultiSpectralPair& f2,
                                   const LossWeights& weights, const StereoRig& rig, LossConfig cfg,
                                   double step, int min_params, unsigned seed) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  // Finite differences of the actual scalar include the mask's variation, so
  // the analytic side must route it too or the comparison is meaningless.
  cfg.differentiate_mask = true;
  cfg.collect_diagnostics = false;  // hundreds of probe evaluations

  OptimizerConfig ocfg;
  ocfg.loss = cfg;
  const LossGradients grads = loss_gradients(state, f0, f1, f2, weights, rig, ocfg);

  OptimState probe = state;
  const auto eval = [&] {
    return snippet_loss_with_gradients(f0, f1, f2, probe.depths(), probe.twists, weights, rig, cfg,
                                       nullptr)
        .total;
  };
  const auto central = [&](double* slot, double h) {
    const double saved = *slot;
    *slot = saved + h;
    const double hi = eval();
    *slot = saved - h;
    const double lo = eval();
    *slot = saved;
    return (hi - lo) / (2.0 * h);
  };

  FiniteDiffReport report;
  double err_sum = 0.0;
  const auto audit = [&](double* slot, double analytic, const std::string& name) {
    const double fd1 = central(slot, step);
    const double fd2 = central(slot, 2.0 * step);
    const double mag = std::max(std::abs(fd1), std::abs(fd2));
    if (std::max(mag, std::abs(analytic)) < kMagFloor || std::abs(fd1 - fd2) > kKinkTol * mag) {
      ++report.excluded;
      return;
    }
    const double rel =
        std::abs(analytic - fd1) / std::max({std::abs(fd1), std::abs(analytic), kMagFloor});
    ++report.checked;
    err_sum += rel;
    if (rel >= report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = FiniteDiffWorst{name, analytic, fd1, rel};
    }
  };

  for (int k = 0; k < 2; ++k)
    for (int c = 0; c < 6; ++c)
      audit(&probe.twists[k][c], grads.d_twists[k][c],
            "twist[" + std::to_string(k) + "][" + std::to_string(c) + "]");

  std::vector<std::pair<int, size_t>> universe;
  for (int i = 0; i < 3; ++i)
    for (size_t p = 0; p < state.log_depths[i].data.size(); ++p) universe.emplace_back(i, p);
  std::mt19937 rng(seed);
  std::shuffle(universe.begin(), universe.end(), rng);
  const size_t want = std::min(universe.size(), static_cast<size_t>(std::max(0, min_params - 12)));
  for (size_t s = 0; s < want; ++s) {
    const auto [i, p] = universe[s];
    const int x = static_cast<int>(p) % state.log_depths[i].width;
    const int y = static_cast<int>(p) / state.log_depths[i].width;
    audit(&probe.log_depths[i].data[p], grads.d_log_depths[i].data[p],
          "log_depth[" + std::to_string(i) + "](" + std::to_string(x) + "," + std::to_string(y) +
              ")");
  }

  report.mean_rel_err = report.checked > 0 ? err_sum / report.checked : 0.0;
  return report;
}

std::string finite_diff_report_json(const FiniteDiffReport& report) {
  nlohmann::json j;
  j["checked"] = report.checked;
  j["excluded"] = report.excluded;
  j["max_rel_err"] = report.max_rel_err;
  j["mean_rel_err"] = report.mean_rel_err;
  j["worst"] = {{"parameter", report.worst.parameter},
                {"analytic", report.worst.analytic},
                {"fd", report.worst.fd},
                {"rel_err", report.worst.rel_err}};
  return j.dump(2);
}

namespace {

void project_depths(OptimState* state, const OptimizerConfig& cfg) {
  const double lo = std::log(cfg.d_min), hi = std::log(cfg.d_max);
  for (auto& grid : state->log_depths)
    for (auto& v : grid.data) v = std::clamp(v, lo, hi);
}

}  // namespace

namespace {

// Variable scaling for the LBFGS path. A twist coordinate moves every pixel
// of the warp while one log-depth moves a single pixel, so their curvatures
// differ by orders of magnitude — far more than the scalar gamma*I seed of
// the two-loop recursion can express. Optimizing u = theta / sqrt(step_b)
// bakes the per-block step sizes in as a static block preconditioner (a unit
// gradient step in u reproduces the per-block gradient-descent step). A zero
// step freezes the block: its packed gradient is zeroed, so the two-loop
// recursion never moves it, and unpack leaves the stored value untouched.
struct BlockScales {
  double depth = 1.0, twist = 1.0;       // applied to the packed state
  double g_depth = 1.0, g_twist = 1.0;   // applied to the packed gradient
  explicit BlockScales(const OptimizerConfig& cfg) {
    depth = cfg.depth_step > 0.0 ? std::sqrt(cfg.depth_step) : 1.0;
    twist = cfg.twist_step > 0.0 ? std::sqrt(cfg.twist_step) : 1.0;
    g_depth = cfg.depth_step > 0.0 ? depth : 0.0;
    g_twist = cfg.twist_step > 0.0 ? twist : 0.0;
  }
};

// Flat parameter vector [log_depths x3 | twists x2] used by the LBFGS path.
std::vector<double> pack(const OptimState& s, const BlockScales& sc) {
  std::vector<double> x;
  size_t n = 12;
  for (const auto& g : s.log_depths) n += g.data.size();
  x.reserve(n);
  for (const auto& g : s.log_depths)
    for (double v : g.data) x.push_back(v / sc.depth);
  for (const auto& t : s.twists)
    for (int j = 0; j < 6; ++j) x.push_back(t[j] / sc.twist);
  return x;
}

std::vector<double> pack(const LossGradients& g, const BlockScales& sc) {
  std::vector<double> x;
  size_t n = 12;
  for (const auto& grid : g.d_log_depths) n += grid.data.size();
  x.reserve(n);
  for (const auto& grid : g.d_log_depths)
    for (double v : grid.data) x.push_back(v * sc.g_depth);
  for (const auto& t : g.d_twists)
    for (int j = 0; j < 6; ++j) x.push_back(t[j] * sc.g_twist);
  return x;
}

void unpack(const std::vector<double>& x, const BlockScales& sc, OptimState* s) {
  size_t off = 0;
  for (auto& g : s->log_depths) {
    for (double& v : g.data) v = x[off++] * sc.depth;
  }
  for (auto& t : s->twists)
    for (int j = 0; j < 6; ++j) t[j] = x[off++] * sc.twist;
}

struct CurvaturePair {
  std::vector<double> s, y;
  double rho = 0.0;  // 1 / (y . s)
};

// Two-loop recursion: d = -H g with H from the stored curvature pairs and
// H0 = gamma I, gamma from the most recent pair.
std::vector<double> lbfgs_direction(const std::vector<CurvaturePair>& pairs,
                                    const std::vector<double>& g) {
  std::vector<double> q = g;
  std::vector<double> alpha(pairs.size());
  for (size_t i = pairs.size(); i-- > 0;) {
    double dot = 0.0;
    for (size_t j = 0; j < q.size(); ++j) dot += pairs[i].s[j] * q[j];
    alpha[i] = pairs[i].rho * dot;
    for (size_t j = 0; j < q.size(); ++j) q[j] -= alpha[i] * pairs[i].y[j];
  }
  const CurvaturePair& last = pairs.back();
  double sy = 0.0, yy = 0.0;
  for (size_t j = 0; j < q.size(); ++j) {
    sy += last.s[j] * last.y[j];
    yy += last.y[j] * last.y[j];
  }
  const double gamma = yy > 0.0 ? sy / yy : 1.0;
  for (double& v : q) v *= gamma;
  for (size_t i = 0; i < pairs.size(); ++i) {
    double dot = 0.0;
    for (size_t j = 0; j < q.size(); ++j) dot += pairs[i].y[j] * q[j];
    const double beta = pairs[i].rho * dot;
    for (size_t j = 0; j < q.size(); ++j) q[j] += pairs[i].s[j] * (alpha[i] - beta);
  }
  for (double& v : q) v = -v;
  return q;
}

}  // namespace

RefineResult refine(const OptimState& initial, const MultiSpectralPair& f0,
                    const MultiSpectralPair& f1, const MultiSpectralPair& f2,
                    const LossWeights& weights, const StereoRig& rig, const OptimizerConfig& cfg) {
  cfg.validate();
  OptimizerConfig run_cfg = cfg;
  run_cfg.loss.collect_diagnostics = false;  // thousands of evaluations
  RefineResult result;
  result.state = initial;
  project_depths(&result.state, cfg);
  OptimState& cur = result.state;
  cur.iteration = 0;
  cur.report = snippet_loss_with_gradients(f0, f1, f2, cur.depths(), cur.twists, weights, rig,
                                           run_cfg.loss, nullptr);
  check_finite_terms(cur.report);
  result.trace.push_back(cur.report);
  result.reason = StopReason::MAX_ITERATIONS;

  const bool use_lbfgs = cfg.algorithm == Algorithm::LBFGS;

  // GRADIENT_DESCENT: the backtracking scale persists across iterations
  // instead of resetting to 1 — it halves on every rejected trial and regrows
  // on success, so it settles at the local scale of the piecewise-smooth
  // objective and the typical iteration costs one trial evaluation.
  double scale = 1.0;
  constexpr double kGrow = 1.5;
  int consecutive_rejects = 0;  // reset on any accepted trial
  int below_tol = 0;

  // LBFGS bookkeeping: curvature pairs plus the previous accepted point and
  // its gradient (a pair is completed when the next gradient arrives).
  const BlockScales sc(cfg);
  std::vector<CurvaturePair> pairs;
  std::vector<double> prev_x, prev_g;

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    const LossGradients grads = loss_gradients(cur, f0, f1, f2, weights, rig, run_cfg);

    // Stationary point: no step can make progress (the loss is piecewise
    // smooth, so at an exact minimum any nonzero step increases it and
    // backtracking would spin). Treat as converged before stepping.
    double ginf = 0.0;
    for (const auto& grid : grads.d_log_depths)
      for (double v : grid.data) ginf = std::max(ginf, std::abs(v));
    for (const auto& t : grads.d_twists) ginf = std::max(ginf, t.cwiseAbs().maxCoeff());
    if (ginf <= 1e-12) {
      result.reason = StopReason::CONVERGED;
      return result;
    }

    std::vector<double> x, g, dir;
    if (use_lbfgs) {
      x = pack(cur, sc);
      g = pack(grads, sc);
      if (!prev_x.empty()) {
        // Complete the curvature pair of the last accepted step; skip pairs
        // without positive curvature (kinks of the piecewise objective).
        CurvaturePair p;
        p.s.resize(x.size());
        p.y.resize(x.size());
        double sy = 0.0, ss = 0.0, yy = 0.0;
        for (size_t j = 0; j < x.size(); ++j) {
          p.s[j] = x[j] - prev_x[j];
          p.y[j] = g[j] - prev_g[j];
          sy += p.s[j] * p.y[j];
          ss += p.s[j] * p.s[j];
          yy += p.y[j] * p.y[j];
        }
        if (sy > 1e-12 * std::sqrt(ss * yy)) {
          p.rho = 1.0 / sy;
          pairs.push_back(std::move(p));
          if (static_cast<int>(pairs.size()) > cfg.lbfgs_history)
            pairs.erase(pairs.begin());
        }
      }
      if (!pairs.empty()) dir = lbfgs_direction(pairs, g);
    }

    const double total_before = cur.report.total;
    bool accepted = false;
    // A quasi-Newton direction tries the unit step of its metric afresh each
    // iteration; plain gradient steps (GRADIENT_DESCENT mode and the LBFGS
    // fallback while no history exists) carry the persistent scale.
    const bool quasi_newton_step = use_lbfgs && !dir.empty();
    double step = quasi_newton_step ? 1.0 : scale;
    for (int attempt = 0; attempt < 10; ++attempt) {
      OptimState cand = cur;
      if (use_lbfgs && !dir.empty()) {
        std::vector<double> xc = x;
        for (size_t j = 0; j < xc.size(); ++j) xc[j] += step * dir[j];
        unpack(xc, sc, &cand);
      } else {
        for (int i = 0; i < 3; ++i)
          for (size_t p = 0; p < cand.log_depths[i].data.size(); ++p)
            cand.log_depths[i].data[p] -= step * cfg.depth_step * grads.d_log_depths[i].data[p];
        for (int k = 0; k < 2; ++k) cand.twists[k] -= step * cfg.twist_step * grads.d_twists[k];
      }
      project_depths(&cand, cfg);
      cand.report = snippet_loss_with_gradients(f0, f1, f2, cand.depths(), cand.twists, weights,
                                                rig, run_cfg.loss, nullptr);
      // An empty valid set contributes zero to its term, so a step wild
      // enough to warp everything off-image scores as a perfect loss. Such
      // candidates are rejected: a trial may never empty more directed
      // pairs than the current state already has.
      const int cand_empty = cand.report.empty_thermal_pairs + cand.report.empty_rgb_pairs;
      const int cur_empty = cur.report.empty_thermal_pairs + cur.report.empty_rgb_pairs;
      if (std::isfinite(cand.report.total) && cand.report.total <= cur.report.total &&
          cand_empty <= cur_empty) {
        cand.iteration = iter;
        cur = std::move(cand);
        if (!quasi_newton_step) scale = std::min(step * kGrow, 1e12);
        consecutive_rejects = 0;
        accepted = true;
        break;
      }
      step /= 2.0;
      if (!quasi_newton_step) scale = step;
      if (++consecutive_rejects >= 20) {
        result.reason = StopReason::DIVERGED;
        return result;  // cur is the last valid state
      }
    }

    if (use_lbfgs) {
      if (accepted) {
        prev_x = std::move(x);
        prev_g = std::move(g);
      } else {
        // The quasi-Newton direction failed outright: drop the history so
        // the next iteration falls back to the plain scaled gradient.
        pairs.clear();
        prev_x.clear();
        prev_g.clear();
      }
    }

    cur.iteration = iter;
    result.trace.push_back(cur.report);

    const double rel_dec =
        (total_before - cur.report.total) / std::max(total_before, 1e-300);
    if (rel_dec < cfg.tolerance) {
      if (++below_tol >= 10) {
        result.reason = StopReason::CONVERGED;
        return result;
      }
    } else {
      below_tol = 0;
    }
  }
  return result;
}

std::string refine_trace_csv(const std::vector<LossReport>& trace) {
  static constexpr const char* kColumns[] = {"rec_T", "gc_T", "rec_RGB", "gc_RGB", "smooth"};
  std::string csv = "iteration,total,rec_T,gc_T,rec_RGB,gc_RGB,smooth\n";
  char buf[64];
  for (size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu", i);
    csv += buf;
    std::snprintf(buf, sizeof(buf), ",%.17g", trace[i].total);
    csv += buf;
    for (const char* col : kColumns) {
      const auto it = trace[i].terms.find(col);
      std::snprintf(buf, sizeof(buf), ",%.17g", it != trace[i].terms.end() ? it->second : 0.0);
      csv += buf;
    }
    csv += '\n';
  }
  return csv;
}

}  // namespace thermoflux
