#ifndef CMCAL_CALIBRATORS_HPP
#define CMCAL_CALIBRATORS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cmcal/conformal.hpp"
#include "cmcal/core.hpp"
#include "cmcal/golden.hpp"
#include "cmcal/isotonic.hpp"
#include "cmcal/metrics.hpp"

namespace cmcal {

enum class Method { MassRescale, ConformalTS, NaiveCMCE, TempScaleNLL, PlattOvR, IsotonicOvR };

inline bool is_conformal(Method m) { return m == Method::MassRescale || m == Method::ConformalTS; }

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::MassRescale: return "MR";
    case Method::ConformalTS: return "TS";
    case Method::NaiveCMCE: return "NaiveCMCE";
    case Method::TempScaleNLL: return "TempScale";
    case Method::PlattOvR: return "Platt";
    case Method::IsotonicOvR: return "Isotonic";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  for (Method m : {Method::MassRescale, Method::ConformalTS, Method::NaiveCMCE, Method::TempScaleNLL,
                   Method::PlattOvR, Method::IsotonicOvR}) {
    if (name == to_string(m)) return m;
  }
  throw InvalidParameter("unknown calibrator '" + std::string(name) + "'");
}

/// n log-uniform temperatures spanning [lo, hi], endpoints included.
inline std::vector<double> log_uniform_grid(std::size_t n, double lo, double hi) {
  if (n == 0 || !(lo > 0.0) || !(hi >= lo)) throw InvalidParameter("invalid temperature grid");
  if (n == 1) return {lo};
  std::vector<double> grid(n);
  const double step = std::log(hi / lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) grid[i] = lo * std::exp(step * static_cast<double>(i));
  grid.back() = hi;
  return grid;
}

inline std::vector<double> default_temperature_grid() { return log_uniform_grid(200, 0.05, 20.0); }

struct CalibratorSpec {
  Method method = Method::TempScaleNLL;
  std::optional<double> alpha;
  std::optional<ScoreKind> score_kind;
  /// NaiveCMCE only; the default grid is used when absent.
  std::optional<std::vector<double>> grid;

  static CalibratorSpec conformal(Method m, double alpha, ScoreKind kind) {
    CalibratorSpec s{m, alpha, kind, std::nullopt};
    s.validate();
    return s;
  }
  static CalibratorSpec plain(Method m) {
    CalibratorSpec s{m, std::nullopt, std::nullopt, std::nullopt};
    s.validate();
    return s;
  }

  void validate() const {
    if (is_conformal(method)) {
      if (!alpha || !score_kind) throw InvalidParameter("conformal calibrators need alpha and a score kind");
      if (!(*alpha > 0.0 && *alpha < 1.0)) throw InvalidParameter("alpha must lie in (0, 1)");
    } else if (alpha || score_kind) {
      throw InvalidParameter("alpha and score kind apply to conformal calibrators only");
    }
    if (grid && method != Method::NaiveCMCE) throw InvalidParameter("a temperature grid applies to NaiveCMCE only");
    if (grid && grid->empty()) throw InvalidParameter("temperature grid is empty");
  }

  /// Display name, e.g. "MR(alpha=0.1,MSP)".
  [[nodiscard]] std::string name() const {
    std::string out(to_string(method));
    if (is_conformal(method)) {
      out += "(alpha=" + format_double(*alpha) + "," + std::string(to_string(*score_kind)) + ")";
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Mass rescaling

struct MassRescaleResult {
  ProbVector probs;
  LabelSet set;
  bool empty_fallback = false;
  /// In-set or out-of-set mass was zero; the input is returned unchanged.
  bool degenerate = false;
};

/**
 * Rescales mass inside the conformal set to 1 - alpha and outside it to alpha,
 * keeping ratios within each group. This is the KL projection of p onto
 * {q : sum of q over the set = 1 - alpha}.
 */
inline MassRescaleResult mass_rescale_apply(const ConformalRule& rule, const ProbVector& p) {
  PredictionSet ps = predict_set(rule, p);
  MassRescaleResult out{p, std::move(ps.labels), ps.empty_fallback, false};

  double p_in = 0.0;
  double p_out = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) (out.set.contains(k) ? p_in : p_out) += p[k];
  if (!(p_in > 0.0) || !(p_out > 0.0)) {
    out.degenerate = true;
    return out;
  }

  const double in_scale = (1.0 - rule.alpha) / p_in;
  const double out_scale = rule.alpha / p_out;
  std::vector<double> q(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) q[k] = p[k] * (out.set.contains(k) ? in_scale : out_scale);
  out.probs = ProbVector::normalize(std::move(q));
  return out;
}

// ---------------------------------------------------------------------------
// Conformal temperature scaling

struct ConformalTsOptions {
  double tol = 1e-6;
  double tau_lo = 1e-3;
  double tau_hi = 1e3;
  int max_iter = 200;
};

enum class TsStatus {
  Solved,        // in-set mass within [1 - alpha, 1 - alpha + tol]
  Unchanged,     // tau = 1 already satisfies the constraint
  ConstantMass,  // the set holds every class; constraint is vacuous
  Infeasible,    // no tau within the (once expanded) bounds meets the constraint within tol
};

struct ConformalTsResult {
  ProbVector probs;
  double tau = 1.0;
  TsStatus status = TsStatus::Unchanged;
  LabelSet set;
  bool empty_fallback = false;

  [[nodiscard]] bool feasible() const noexcept {
    return status == TsStatus::Solved || status == TsStatus::Unchanged;
  }
};

/**
 * Finds the per-instance temperature whose in-set mass is the smallest value
 * not below 1 - alpha. Relies on the conformal set being a top-ranked prefix,
 * for which in-set mass is nonincreasing in tau; bisection runs on log tau.
 */
inline ConformalTsResult conformal_ts_apply(const ConformalRule& rule, const ProbVector& p,
                                            const ConformalTsOptions& opt = {}) {
  if (!(opt.tol > 0.0) || !(opt.tau_lo > 0.0) || !(opt.tau_lo < opt.tau_hi)) {
    throw InvalidParameter("conformal temperature scaling needs tol > 0 and 0 < tau_lo < tau_hi");
  }
  PredictionSet ps = predict_set(rule, p);
  ConformalTsResult out{p, 1.0, TsStatus::Unchanged, std::move(ps.labels), ps.empty_fallback};
  if (out.set.size() == p.size()) {
    out.status = TsStatus::ConstantMass;
    return out;
  }

  const double target = 1.0 - rule.alpha;
  auto mass_at = [&](double log_tau) { return set_mass(tempered_softmax(p, std::exp(log_tau)), out.set); };
  auto within = [&](double m) { return m >= target && m - target <= opt.tol; };
  auto finish = [&](double log_tau, TsStatus status) {
    out.tau = std::exp(log_tau);
    out.probs = tempered_softmax(p, out.tau);
    out.status = status;
    return out;
  };

  if (within(set_mass(p, out.set))) return out;

  const double expand = std::log(10.0);
  double lo = std::log(opt.tau_lo);
  double hi = std::log(opt.tau_hi);
  double m_lo = mass_at(lo);
  if (m_lo < target) {
    lo -= expand;
    m_lo = mass_at(lo);
  }
  if (m_lo < target) {
    // Mass is capped below the target. Keep the highest attainable mass, but back off
    // from the bound to the largest tau within tol of it so the smaller probabilities
    // do not underflow to ties.
    double a = lo;
    double b = hi;
    if (mass_at(b) >= m_lo - opt.tol) return finish(b, TsStatus::Infeasible);
    for (int it = 0; it < opt.max_iter && b - a > 1e-12; ++it) {
      const double mid = 0.5 * (a + b);
      (mass_at(mid) >= m_lo - opt.tol ? a : b) = mid;
    }
    return finish(a, TsStatus::Infeasible);
  }
  if (within(m_lo)) return finish(lo, TsStatus::Solved);

  double m_hi = mass_at(hi);
  if (m_hi >= target) {
    hi += expand;
    m_hi = mass_at(hi);
    if (m_hi >= target) return finish(hi, within(m_hi) ? TsStatus::Solved : TsStatus::Infeasible);
  }

  // Invariant: mass(lo) >= target > mass(hi).
  for (int it = 0; it < opt.max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double m = mass_at(mid);
    if (m >= target) {
      lo = mid;
      m_lo = m;
      if (within(m_lo)) break;
    } else {
      hi = mid;
    }
  }
  return finish(lo, within(m_lo) ? TsStatus::Solved : TsStatus::Infeasible);
}

// ---------------------------------------------------------------------------
// Fitted calibrators

struct SigmoidParams {
  double a = 1.0;
  double b = 0.0;
};

struct MassRescaleState {
  ConformalRule rule;
};
struct ConformalTsState {
  ConformalRule rule;
  ConformalTsOptions options;
};
struct TemperatureState {
  double temperature = 1.0;
};
struct PlattState {
  std::vector<SigmoidParams> params;
  /// Classes with no positive calibration example pass through unchanged.
  std::vector<bool> absent;
};
struct IsotonicState {
  std::vector<StepFunction> maps;
};

using CalibratorState =
    std::variant<MassRescaleState, ConformalTsState, TemperatureState, PlattState, IsotonicState>;

struct FittedCalibrator {
  CalibratorSpec spec;
  CalibratorState state;
};

/// Per-instance diagnostics surfaced by apply_detailed.
struct ApplyInfo {
  bool empty_set_fallback = false;
  bool degenerate = false;
  bool infeasible = false;
  bool constant_mass = false;
  std::optional<double> tau;
  std::optional<double> in_set_mass;
};

struct Applied {
  ProbVector probs;
  ApplyInfo info;
};

namespace detail {

inline ProbVector renormalize_or_uniform(std::vector<double> q, bool& degenerate) {
  double total = 0.0;
  for (double v : q) total += v;
  if (!(total > 0.0) || !std::isfinite(total)) {
    degenerate = true;
    return ProbVector::uniform(q.size());
  }
  return ProbVector::normalize(std::move(q));
}

inline double log_sigmoid(double f) { return f >= 0.0 ? -std::log1p(std::exp(-f)) : f - std::log1p(std::exp(f)); }

inline double sigmoid(double f) {
  if (f >= 0.0) return 1.0 / (1.0 + std::exp(-f));
  const double e = std::exp(f);
  return e / (1.0 + e);
}

}  // namespace detail

inline Applied apply_detailed(const FittedCalibrator& cal, const ProbVector& p) {
  return std::visit(
      [&](const auto& st) -> Applied {
        using T = std::decay_t<decltype(st)>;
        ApplyInfo info;
        if constexpr (std::is_same_v<T, MassRescaleState>) {
          auto r = mass_rescale_apply(st.rule, p);
          info.empty_set_fallback = r.empty_fallback;
          info.degenerate = r.degenerate;
          info.in_set_mass = set_mass(r.probs, r.set);
          return {std::move(r.probs), info};
        } else if constexpr (std::is_same_v<T, ConformalTsState>) {
          auto r = conformal_ts_apply(st.rule, p, st.options);
          info.empty_set_fallback = r.empty_fallback;
          info.infeasible = r.status == TsStatus::Infeasible;
          info.constant_mass = r.status == TsStatus::ConstantMass;
          info.tau = r.tau;
          info.in_set_mass = set_mass(r.probs, r.set);
          return {std::move(r.probs), info};
        } else if constexpr (std::is_same_v<T, TemperatureState>) {
          info.tau = st.temperature;
          return {tempered_softmax(p, st.temperature), info};
        } else if constexpr (std::is_same_v<T, PlattState>) {
          if (st.params.size() != p.size()) throw InvalidInput("class count differs from fitted calibrator");
          const std::vector<double> z = clamped_log(p);
          std::vector<double> q(p.size());
          for (std::size_t k = 0; k < p.size(); ++k) {
            q[k] = st.absent[k] ? p[k] : detail::sigmoid(st.params[k].a * z[k] + st.params[k].b);
          }
          ProbVector out = detail::renormalize_or_uniform(std::move(q), info.degenerate);
          return {std::move(out), info};
        } else {
          if (st.maps.size() != p.size()) throw InvalidInput("class count differs from fitted calibrator");
          std::vector<double> q(p.size());
          for (std::size_t k = 0; k < p.size(); ++k) q[k] = st.maps[k](p[k]);
          ProbVector out = detail::renormalize_or_uniform(std::move(q), info.degenerate);
          return {std::move(out), info};
        }
      },
      cal.state);
}

inline ProbVector apply(const FittedCalibrator& cal, const ProbVector& p) { return apply_detailed(cal, p).probs; }

// ---------------------------------------------------------------------------
// Temperature fitting

/// Tempers every row of a batch.
inline EvalBatch temper(const EvalBatch& batch, double temperature) {
  std::vector<ProbVector> rows;
  rows.reserve(batch.size());
  for (const auto& p : batch.probs()) rows.push_back(tempered_softmax(p, temperature));
  return {std::move(rows), batch.labels()};
}

/**
 * Picks the grid temperature with the lowest CMCE on the hold-out batch. Ties go
 * to the temperature nearest 1, then to the smaller one.
 */
inline FittedCalibrator fit_naive_cmce(const EvalBatch& holdout, const std::vector<double>& grid,
                                       const BinSpec& bins = BinSpec::uniform(25)) {
  if (grid.empty()) throw InvalidParameter("temperature grid is empty");
  double best_t = 0.0;
  double best_err = 0.0;
  bool first = true;
  for (double t : grid) {
    if (!(t > 0.0)) throw InvalidParameter("grid temperatures must be positive");
    const double err = cmce(temper(holdout, t), bins).value;
    const bool better = first || err < best_err ||
                        (err == best_err && (std::abs(t - 1.0) < std::abs(best_t - 1.0) ||
                                             (std::abs(t - 1.0) == std::abs(best_t - 1.0) && t < best_t)));
    if (better) {
      best_t = t;
      best_err = err;
      first = false;
    }
  }
  CalibratorSpec spec{Method::NaiveCMCE, std::nullopt, std::nullopt, grid};
  return {std::move(spec), TemperatureState{best_t}};
}

struct TempNllOptions {
  double t_lo = 1e-2;
  double t_hi = 1e2;
  double log_tol = 1e-4;
};

/// Mean NLL of the batch after tempering; rows are passed as clamped logs.
inline double tempered_nll(const std::vector<std::vector<double>>& logs, const std::vector<std::size_t>& labels,
                           double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& l = logs[i];
    const double top = *std::max_element(l.begin(), l.end()) / temperature;
    double s = 0.0;
    for (double v : l) s += std::exp(v / temperature - top);
    total += top + std::log(s) - l[labels[i]] / temperature;
  }
  return total / static_cast<double>(logs.size());
}

/// Classical temperature scaling: golden-section search on log T for minimum NLL.
inline FittedCalibrator fit_temp_nll(const EvalBatch& calib, const TempNllOptions& opt = {}) {
  std::vector<std::vector<double>> logs;
  logs.reserve(calib.size());
  for (const auto& p : calib.probs()) logs.push_back(clamped_log(p));

  auto objective = [&](double log_t) { return tempered_nll(logs, calib.labels(), std::exp(log_t)); };
  const GoldenResult g = golden_section_minimize(objective, std::log(opt.t_lo), std::log(opt.t_hi), opt.log_tol);
  const double t = g.fx <= objective(0.0) ? std::exp(g.x) : 1.0;
  return {CalibratorSpec::plain(Method::TempScaleNLL), TemperatureState{t}};
}

// ---------------------------------------------------------------------------
// One-vs-rest baselines

/// Cross-entropy of sigmoid(a z + b) against (smoothed) targets.
inline double sigmoid_cross_entropy(const std::vector<double>& z, const std::vector<double>& t, SigmoidParams prm) {
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = prm.a * z[i] + prm.b;
    total -= t[i] * detail::log_sigmoid(f) + (1.0 - t[i]) * detail::log_sigmoid(-f);
  }
  return total;
}

/// Platt's smoothed targets: (N+ + 1)/(N+ + 2) for positives, 1/(N- + 2) for negatives.
inline std::vector<double> platt_targets(const std::vector<bool>& positive) {
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(positive.size()) - n_pos;
  const double hi = (n_pos + 1.0) / (n_pos + 2.0);
  const double lo = 1.0 / (n_neg + 2.0);
  std::vector<double> t(positive.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = positive[i] ? hi : lo;
  return t;
}

/// Newton's method with backtracking on the two-parameter sigmoid fit.
inline SigmoidParams fit_sigmoid(const std::vector<double>& z, const std::vector<bool>& positive) {
  const std::vector<double> t = platt_targets(positive);
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(positive.size()) - n_pos;

  SigmoidParams prm{0.0, std::log((n_pos + 1.0) / (n_neg + 1.0))};
  double fval = sigmoid_cross_entropy(z, t, prm);
  constexpr double kRidge = 1e-12;
  for (int it = 0; it < 100; ++it) {
    double ga = 0.0, gb = 0.0, haa = kRidge, hab = 0.0, hbb = kRidge;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double s = detail::sigmoid(prm.a * z[i] + prm.b);
      const double d = s - t[i];
      const double w = s * (1.0 - s);
      ga += d * z[i];
      gb += d;
      haa += w * z[i] * z[i];
      hab += w * z[i];
      hbb += w;
    }
    if (std::abs(ga) < 1e-10 && std::abs(gb) < 1e-10) break;
    const double det = haa * hbb - hab * hab;
    const double da = -(hbb * ga - hab * gb) / det;
    const double db = -(-hab * ga + haa * gb) / det;
    const double slope = ga * da + gb * db;

    double step = 1.0;
    bool moved = false;
    while (step >= 1e-10) {
      const SigmoidParams cand{prm.a + step * da, prm.b + step * db};
      const double fc = sigmoid_cross_entropy(z, t, cand);
      if (fc <= fval + 1e-4 * step * slope) {
        moved = fc < fval || step == 1.0;
        prm = cand;
        fval = fc;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return prm;
}

inline FittedCalibrator fit_platt_ovr(const EvalBatch& calib) {
  const std::size_t k_count = calib.num_classes();
  std::vector<std::vector<double>> logs;
  logs.reserve(calib.size());
  for (const auto& p : calib.probs()) logs.push_back(clamped_log(p));

  PlattState st;
  st.params.resize(k_count);
  st.absent.assign(k_count, false);
  std::vector<double> z(calib.size());
  std::vector<bool> positive(calib.size());
  for (std::size_t k = 0; k < k_count; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < calib.size(); ++i) {
      z[i] = logs[i][k];
      positive[i] = calib.label(i) == k;
      any = any || positive[i];
    }
    if (!any) {
      st.absent[k] = true;
      continue;
    }
    st.params[k] = fit_sigmoid(z, positive);
  }
  return {CalibratorSpec::plain(Method::PlattOvR), std::move(st)};
}

inline FittedCalibrator fit_isotonic_ovr(const EvalBatch& calib) {
  IsotonicState st;
  std::vector<double> scores(calib.size());
  std::vector<double> targets(calib.size());
  for (std::size_t k = 0; k < calib.num_classes(); ++k) {
    for (std::size_t i = 0; i < calib.size(); ++i) {
      scores[i] = calib.prob(i)[k];
      targets[i] = calib.label(i) == k ? 1.0 : 0.0;
    }
    st.maps.push_back(fit_isotonic(scores, targets));
  }
  return {CalibratorSpec::plain(Method::IsotonicOvR), std::move(st)};
}

struct FitOptions {
  BinSpec cmce_bins = BinSpec::uniform(25);
  ConformalTsOptions ts;
  TempNllOptions nll;
};

/// Fits any calibrator from its spec on a calibration batch.
inline FittedCalibrator fit(const CalibratorSpec& spec, const EvalBatch& calib, const FitOptions& opt = {}) {
  spec.validate();
  switch (spec.method) {
    case Method::MassRescale:
      return {spec, MassRescaleState{fit_threshold(*spec.score_kind, calib, *spec.alpha)}};
    case Method::ConformalTS:
      return {spec, ConformalTsState{fit_threshold(*spec.score_kind, calib, *spec.alpha), opt.ts}};
    case Method::NaiveCMCE: {
      FittedCalibrator f = fit_naive_cmce(calib, spec.grid ? *spec.grid : default_temperature_grid(), opt.cmce_bins);
      f.spec = spec;
      return f;
    }
    case Method::TempScaleNLL:
      return fit_temp_nll(calib, opt.nll);
    case Method::PlattOvR:
      return fit_platt_ovr(calib);
    case Method::IsotonicOvR:
      return fit_isotonic_ovr(calib);
  }
  throw InvalidParameter("unknown calibrator method");
}

}  // namespace cmcal

#endif  // CMCAL_CALIBRATORS_HPP
