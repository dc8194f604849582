// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cmcal/cmcal.hpp"
#include "oracles.hpp"

namespace {

using namespace cmcal;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // <= 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double kl(const ProbVector& q, const ProbVector& p) {
  double out = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] > 0.0) out += q[k] * std::log(q[k] / p[k]);
  }
  return out;
}

/// A random distribution over `labels` with total `mass`.
void fill_random(Rng& rng, std::vector<double>& q, const std::vector<std::size_t>& labels, double mass) {
  std::vector<double> w(labels.size());
  double total = 0.0;
  for (double& v : w) {
    // Mix flat and spiky draws so candidates cover the constraint set unevenly.
    const double u = std::max(rng.uniform(), 1e-300);
    v = std::pow(-std::log(u), 1.0 + 3.0 * rng.uniform());
    total += v;
  }
  for (std::size_t j = 0; j < labels.size(); ++j) q[labels[j]] = mass * w[j] / total;
}

Outcome kl_projection() {
  Rng rng(101);
  double worst_margin = std::numeric_limits<double>::infinity();
  double worst_stationarity = 0.0;
  int instances = 0;
  while (instances < 100) {
    const std::size_t k = 2 + rng.below(5);
    const ProbVector p = oracle::random_simplex(rng, k);
    const double alpha = 0.01 + 0.98 * rng.uniform();
    const ConformalRule rule{ScoreKind::MSP, alpha, rng.uniform(), 100, {}};
    const MassRescaleResult r = mass_rescale_apply(rule, p);
    if (r.degenerate) continue;
    ++instances;

    std::vector<std::size_t> in, out;
    double p_in = 0.0, p_out = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (r.set.contains(j)) {
        in.push_back(j);
        p_in += p[j];
      } else {
        out.push_back(j);
        p_out += p[j];
      }
    }
    const double best = kl(r.probs, p);
    std::vector<double> q(k);
    for (int c = 0; c < 10000; ++c) {
      if (c % 2 == 0) {
        fill_random(rng, q, in, 1.0 - alpha);
        fill_random(rng, q, out, alpha);
      } else {
        // Small feasible perturbations of the projection itself.
        const double eps = std::pow(10.0, -1.0 - 5.0 * rng.uniform());
        fill_random(rng, q, in, 1.0 - alpha);
        fill_random(rng, q, out, alpha);
        for (std::size_t j = 0; j < k; ++j) q[j] = (1.0 - eps) * r.probs[j] + eps * q[j];
      }
      worst_margin = std::min(worst_margin, kl(ProbVector(q), p) - best);
    }
    const double s_in = (1.0 - alpha) / p_in;
    const double s_out = alpha / p_out;
    for (std::size_t j : in) worst_stationarity = std::max(worst_stationarity, std::abs(r.probs[j] / p[j] - s_in) / s_in);
    for (std::size_t j : out) worst_stationarity = std::max(worst_stationarity, std::abs(r.probs[j] / p[j] - s_out) / s_out);
  }
  return {worst_margin >= -1e-9 && worst_stationarity <= 1e-12,
          "min KL margin " + fmt("%.3g", worst_margin) + ", max relative scale-factor error " +
              fmt("%.3g", worst_stationarity)};
}

Outcome exact_in_set_mass() {
  SyntheticSpec spec;
  spec.num_classes = 9;
  spec.num_samples = 12500;
  spec.seed = 7;
  const LogitDataset data = make_synthetic(spec).predicted;
  const auto split = make_splits(data.size(), 0.2, 1, 3).front();
  const EvalBatch calib = data.subset(split.calibration);
  const EvalBatch test = data.subset(split.test);

  double mr_worst = 0.0;
  double ts_low = 0.0, ts_high = 0.0;
  std::size_t checked = 0, ts_feasible = 0, ts_skipped = 0;
  bool ok = test.size() == 10000;
  for (ScoreKind kind : {ScoreKind::APS, ScoreKind::MSP}) {
    for (double alpha : {0.1, 0.05}) {
      const ConformalRule rule = fit_threshold(kind, calib, alpha);
      for (const auto& p : test.probs()) {
        const MassRescaleResult mr = mass_rescale_apply(rule, p);
        if (!mr.degenerate) {
          const double dev = set_mass(mr.probs, mr.set) - (1.0 - alpha);
          mr_worst = std::max(mr_worst, std::abs(dev));
          ok = ok && std::abs(dev) <= 1e-9;
          ++checked;
        }
        const ConformalTsResult ts = conformal_ts_apply(rule, p);
        if (ts.feasible()) {
          const double dev = set_mass(ts.probs, ts.set) - (1.0 - alpha);
          ts_low = std::min(ts_low, dev);
          ts_high = std::max(ts_high, dev);
          ok = ok && dev >= 0.0 && dev <= 1e-6;
          ++ts_feasible;
        } else {
          ++ts_skipped;
        }
      }
    }
  }
  return {ok, std::to_string(checked) + " MR instances, max |dev| " + fmt("%.3g", mr_worst) + "; " +
                  std::to_string(ts_feasible) + " feasible TS instances, dev in [" + fmt("%.3g", ts_low) + ", " +
                  fmt("%.3g", ts_high) + "], " + std::to_string(ts_skipped) + " full-set/infeasible skipped"};
}

Outcome marginal_coverage() {
  const std::size_t n = 200, m = 2000, repeats = 30;
  const GridMixture mix = make_grid(9, 1.0, 0.35, 2024);
  bool ok = true;
  std::string detail;
  for (ScoreKind kind : {ScoreKind::APS, ScoreKind::MSP}) {
    for (double alpha : {0.1, 0.01}) {
      std::vector<double> cov;
      double with_fallback = 0.0;
      for (std::size_t r = 0; r < repeats; ++r) {
        const SyntheticBatch s = sample(mix, n + m, r);
        const auto pred = miscalibrate(s.truth, 0.5, 0.0, derive_seed(2024, r));
        const EvalBatch calib(std::vector<ProbVector>(pred.begin(), pred.begin() + n),
                              std::vector<std::size_t>(s.labels.begin(), s.labels.begin() + n));
        const ConformalRule rule = fit_threshold(kind, calib, alpha);
        // Coverage of the conformal set {y : score <= threshold} itself; the {argmax}
        // substitute for empty sets is tallied separately.
        std::size_t hits = 0, fallback_hits = 0;
        for (std::size_t i = n; i < n + m; ++i) {
          const bool in_set = rule.all_labels() || score(kind, pred[i], s.labels[i]) <= *rule.threshold;
          hits += in_set ? 1 : 0;
          fallback_hits += predict_set(rule, pred[i]).labels.contains(s.labels[i]) ? 1 : 0;
        }
        cov.push_back(static_cast<double>(hits) / static_cast<double>(m));
        with_fallback += static_cast<double>(fallback_hits) / static_cast<double>(m * repeats);
      }
      double mean = 0.0;
      for (double c : cov) mean += c;
      mean /= static_cast<double>(repeats);
      double ss = 0.0;
      for (double c : cov) ss += (c - mean) * (c - mean);
      const double se = std::sqrt(ss / static_cast<double>(repeats - 1) / static_cast<double>(repeats));
      const double lo = 1.0 - alpha - 3.0 * se;
      const double hi = 1.0 - alpha + 1.0 / static_cast<double>(n + 1) + 3.0 * se;
      ok = ok && mean >= lo && mean <= hi;
      detail += std::string(to_string(kind)) + " a=" + fmt("%g", alpha) + ": " + fmt("%.4f", mean) + " in [" +
                fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "] (" + fmt("%.4f", with_fallback) + " with empty-set fallback); ";
    }
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome quantile_oracle() {
  Rng rng(404);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(80);
    const std::size_t k = 2 + rng.below(5);
    // Draw a small pool of rows and resample from it so scores repeat.
    const EvalBatch pool = oracle::random_batch(rng, 1 + rng.below(std::max<std::size_t>(1, n / 3)), k, trial % 4 ? 0 : 6);
    std::vector<ProbVector> probs;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.below(pool.size());
      probs.push_back(pool.prob(j));
      labels.push_back(trial % 3 == 0 ? pool.label(j) : rng.below(k));
    }
    const EvalBatch calib(probs, labels);
    const ScoreKind kind = trial % 2 ? ScoreKind::APS : ScoreKind::MSP;
    const int pct = 1 + static_cast<int>(rng.below(99));

    std::vector<double> scores;
    for (std::size_t i = 0; i < n; ++i) {
      const ProbVector& p = probs[i];
      if (kind == ScoreKind::MSP) {
        scores.push_back(1.0 - p[labels[i]]);
      } else {
        double mass = 0.0;
        for (std::size_t c : oracle::ranking(p)) {
          mass += p[c];
          if (c == labels[i]) break;
        }
        scores.push_back(mass);
      }
    }
    std::sort(scores.begin(), scores.end());
    const std::size_t rank = ((100 - pct) * (n + 1) + 99) / 100;
    const ConformalRule rule = fit_threshold(kind, calib, pct / 100.0);
    const bool match = rank > n ? rule.all_labels() : (rule.threshold && *rule.threshold == scores[rank - 1]);
    mismatches += match ? 0 : 1;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 1000 multisets"};
}

Outcome metric_brute_force() {
  Rng rng(505);
  double worst = 0.0;
  bool nullopt_agree = true;
  for (int trial = 0; trial < 200; ++trial) {
    const EvalBatch b = oracle::random_batch(rng, 1 + rng.below(20), 2 + rng.below(4), trial % 3 == 0 ? 5 : 0);
    const BinSpec bins = BinSpec::uniform(1 + rng.below(25));
    worst = std::max(worst, std::abs(ece(b, bins) - oracle::ece(b, bins.edges())));
    worst = std::max(worst, std::abs(cwece(b, bins) - oracle::cwece(b, bins.edges())));
    worst = std::max(worst, std::abs(cmce(b, bins).value - oracle::cmce(b, bins.edges())));
    for (int j = 0; j < 5; ++j) {
      double a = rng.uniform(), c = rng.uniform();
      if (a > c) std::swap(a, c);
      if (j == 0) c = 1.0;
      const auto got = coverage_interval(b, a, c);
      const auto want = oracle::coverage(b, a, c);
      if (got.has_value() != want.has_value()) {
        nullopt_agree = false;
      } else if (got) {
        worst = std::max(worst, std::abs(*got - *want));
      }
    }
  }
  return {worst <= 1e-12 && nullopt_agree, "max abs difference " + fmt("%.3g", worst) +
                                               (nullopt_agree ? "" : "; empty-interval handling disagrees")};
}

Outcome temperature_recovery() {
  const GridMixture mix = make_grid(9, 1.0, 0.35, 606);
  const SyntheticBatch s = sample(mix, 20000);
  const std::vector<double> grid = default_temperature_grid();
  const double step = std::log(grid[1] / grid[0]);
  bool ok = true;
  std::string detail;
  for (double t0 : {0.5, 2.0}) {
    // Logits multiplied by t0, so the corrective temperature is t0.
    std::vector<ProbVector> probs;
    for (const auto& p : s.truth) probs.push_back(tempered_softmax(p, 1.0 / t0));
    const EvalBatch b(probs, s.labels);

    const auto start = std::chrono::steady_clock::now();
    const double t_nll = std::get<TemperatureState>(fit_temp_nll(b).state).temperature;
    const double t_naive = std::get<TemperatureState>(fit_naive_cmce(b, grid).state).temperature;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double steps_off = std::abs(std::log(t_naive / t0)) / step;
    ok = ok && std::abs(t_nll - t0) <= 0.15 && steps_off <= 1.0 + 1e-9 && secs < 60.0;
    detail += "T0=" + fmt("%g", t0) + ": NLL fit " + fmt("%.4f", t_nll) + ", naive " + fmt("%.4f", t_naive) + " (" +
              fmt("%.2f", steps_off) + " steps, " + fmt("%.1fs", secs) + "); ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome synthetic_improvement() {
  bool ok = true;
  std::string detail;
  for (std::size_t k : {std::size_t{9}, std::size_t{49}}) {
    int mr_wins = 0, naive_wins = 0, nll_wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ExperimentConfig c;
      SyntheticSpec spec;
      spec.num_classes = k;
      spec.num_samples = 50000;
      spec.t0 = 0.5;
      spec.seed = seed;
      c.synthetic = spec;
      c.calibrators = {"MR", "NaiveCMCE"};
      c.alphas = {0.1};
      c.score_kinds = {ScoreKind::MSP};
      c.num_splits = 1;
      c.seed = seed;
      const auto rows = run_experiment(c);
      const MetricReport& base = *rows.at(0).report;
      const MetricReport& mr = *rows.at(1).report;
      const MetricReport& naive = *rows.at(2).report;
      mr_wins += mr.cmce <= 0.5 * base.cmce ? 1 : 0;
      naive_wins += naive.cmce <= 0.5 * base.cmce ? 1 : 0;
      nll_wins += naive.nll < base.nll ? 1 : 0;
    }
    ok = ok && mr_wins >= 4 && naive_wins >= 4 && nll_wins >= 4;
    detail += "K=" + std::to_string(k) + ": MR CMCE halved " + std::to_string(mr_wins) + "/5, NaiveCMCE CMCE halved " +
              std::to_string(naive_wins) + "/5, NaiveCMCE NLL lower " + std::to_string(nll_wins) + "/5; ";
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome pava_oracle() {
  Rng rng(808);
  int mismatches = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> y(1 + rng.below(8));
    for (double& v : y) v = trial % 5 == 0 ? static_cast<double>(rng.below(2)) : rng.uniform();
    const std::vector<double> want = oracle::isotonic(y);
    if (pava(y) != want) ++mismatches;

    // The same targets at distinct increasing scores through the public fitting path.
    std::vector<double> x(y.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i + 1) / 16.0;
    const StepFunction g = fit_isotonic(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (g(x[i]) != want[i]) {
        ++mismatches;
        break;
      }
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches in 500 instances"};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  ExperimentConfig c;
  SyntheticSpec spec;
  spec.num_classes = 9;
  spec.num_samples = 3000;
  spec.seed = 9;
  c.synthetic = spec;
  c.calibrators = {"MR", "TS", "NaiveCMCE", "TempScale", "Platt", "Isotonic"};
  c.alphas = {0.1, 0.05};
  c.score_kinds = {ScoreKind::APS, ScoreKind::MSP};
  c.num_splits = 3;
  c.seed = 4;
  const auto root = std::filesystem::temp_directory_path() / "cmcal_acceptance_determinism";
  std::filesystem::remove_all(root);
  emit_report(c, run_experiment(c), root / "a");
  emit_report(c, run_experiment(c), root / "b");
  std::size_t files = 0, differing = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = root / "b" / std::filesystem::relative(e.path(), root / "a");
    if (!std::filesystem::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
  }
  std::size_t files_b = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root / "b")) files_b += e.is_regular_file() ? 1 : 0;
  std::filesystem::remove_all(root);
  return {files > 0 && differing == 0 && files == files_b,
          std::to_string(files) + " files compared, " + std::to_string(differing) + " differ"};
}

Outcome ranking_preservation() {
  Rng rng(1010);
  std::vector<FittedCalibrator> temps;
  for (int j = 0; j < 5; ++j) {
    const std::size_t k = 2 + rng.below(8);
    const GridMixture mix = make_grid(k, 1.0, 0.35, static_cast<std::uint64_t>(j));
    const SyntheticBatch s = sample(mix, 2000);
    const EvalBatch b(miscalibrate(s.truth, j % 2 ? 0.5 : 2.0, 0.3, static_cast<std::uint64_t>(j)), s.labels);
    temps.push_back(fit_temp_nll(b));
    temps.push_back(fit(CalibratorSpec::plain(Method::NaiveCMCE), b));
  }
  std::size_t changed_ts = 0, changed_temp = 0, solved = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t k = 2 + rng.below(9);
    const ProbVector p = oracle::random_simplex(rng, k, i % 4 == 0 ? 8 : 0);
    const SortPermutation order = sort_desc(p);

    const ScoreKind kind = i % 2 ? ScoreKind::APS : ScoreKind::MSP;
    const ConformalRule rule{kind, 0.01 + 0.5 * rng.uniform(), rng.uniform(), 100, {}};
    const ConformalTsResult ts = conformal_ts_apply(rule, p);
    solved += ts.status == TsStatus::Solved ? 1 : 0;
    changed_ts += sort_desc(ts.probs) == order ? 0 : 1;

    for (const auto& cal : temps) changed_temp += sort_desc(apply(cal, p)) == order ? 0 : 1;
  }
  return {changed_ts == 0 && changed_temp == 0,
          "conformal TS changed " + std::to_string(changed_ts) + "/10000 (" + std::to_string(solved) +
              " solved), temperature calibrators changed " + std::to_string(changed_temp) + "/" +
              std::to_string(10000 * temps.size())};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "KL-projection optimality", 10.0, kl_projection},
      {2, "exact in-set mass", 30.0, exact_in_set_mass},
      {3, "marginal coverage", 120.0, marginal_coverage},
      {4, "quantile rule oracle", 0.0, quantile_oracle},
      {5, "metric brute-force equivalence", 0.0, metric_brute_force},
      {6, "temperature recovery", 0.0, temperature_recovery},
      {7, "synthetic calibration improvement", 300.0, synthetic_improvement},
      {8, "PAVA oracle", 0.0, pava_oracle},
      {9, "determinism", 0.0, determinism},
      {10, "ranking preservation", 0.0, ranking_preservation},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0.0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt("%g", c.time_limit_s) + "s limit";
    }
    std::printf("%s [%d] %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
