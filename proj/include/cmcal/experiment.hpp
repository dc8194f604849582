#ifndef CMCAL_EXPERIMENT_HPP
#define CMCAL_EXPERIMENT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcal/calibrators.hpp"
#include "cmcal/conformal.hpp"
#include "cmcal/core.hpp"
#include "cmcal/dataset.hpp"
#include "cmcal/metrics.hpp"
#include "cmcal/random.hpp"
#include "cmcal/synthetic.hpp"

namespace cmcal {

/// Parameters of a generated benchmark: grid-mixture truth, tempered and noised.
struct SyntheticSpec {
  std::size_t num_classes = 9;
  std::size_t num_samples = 10000;
  double spacing = 1.0;
  double sigma = 0.35;
  double t0 = 0.5;
  double logit_noise = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  LogitDataset predicted;
  std::vector<ProbVector> truth;
};

inline SyntheticDataset make_synthetic(const SyntheticSpec& spec) {
  const GridMixture mix = make_grid(spec.num_classes, spec.spacing, spec.sigma, spec.seed);
  SyntheticBatch b = sample(mix, spec.num_samples);
  SyntheticDataset out;
  out.predicted.source_format = ScoreFormat::Probs;
  out.predicted.num_classes = spec.num_classes;
  out.predicted.probs = miscalibrate(b.truth, spec.t0, spec.logit_noise, derive_seed(spec.seed, 0x5eed));
  out.predicted.labels = std::move(b.labels);
  out.truth = std::move(b.truth);
  return out;
}

struct ExperimentConfig {
  std::optional<std::string> dataset_path;
  std::optional<SyntheticSpec> synthetic;
  /// Method names; conformal ones expand over alphas x score_kinds.
  std::vector<std::string> calibrators;
  std::vector<double> alphas{0.1};
  std::vector<ScoreKind> score_kinds{ScoreKind::MSP};
  double calib_fraction = 0.2;
  std::size_t num_splits = 10;
  std::uint64_t seed = 0;
  std::size_t ece_bins = 15;
  std::size_t cmce_bins = 25;
  std::vector<Interval> intervals{{0.9, 0.92}, {0.99, 0.995}};
  std::optional<std::vector<double>> naive_grid;
  std::string output_dir = "results";

  void validate() const {
    if (!(calib_fraction > 0.0 && calib_fraction < 1.0)) throw InvalidParameter("split fraction must lie in (0, 1)");
    if (num_splits == 0) throw InvalidParameter("num_splits must be at least 1");
    if (ece_bins == 0 || cmce_bins == 0) throw InvalidParameter("bin counts must be positive");
    for (const auto& [a, b] : intervals) {
      if (!(0.0 <= a && a <= b && b <= 1.0)) throw InvalidParameter("coverage intervals need 0 <= a <= b <= 1");
    }
    (void)expand_specs();
  }

  /// Resolves the configured data source.
  [[nodiscard]] LogitDataset load_data() const {
    if (dataset_path.has_value() == synthetic.has_value()) {
      throw InvalidParameter("exactly one of a dataset path or synthetic generator settings is required");
    }
    if (dataset_path) return load_dataset(*dataset_path);
    return make_synthetic(*synthetic).predicted;
  }

  [[nodiscard]] std::vector<CalibratorSpec> expand_specs() const {
    std::vector<CalibratorSpec> out;
    for (const auto& name : calibrators) {
      const Method m = parse_method(name);
      if (is_conformal(m)) {
        if (alphas.empty() || score_kinds.empty()) throw InvalidParameter("conformal calibrators need alphas and scores");
        for (double a : alphas) {
          for (ScoreKind s : score_kinds) out.push_back(CalibratorSpec::conformal(m, a, s));
        }
      } else {
        CalibratorSpec s = CalibratorSpec::plain(m);
        if (m == Method::NaiveCMCE) s.grid = naive_grid;
        s.validate();
        out.push_back(std::move(s));
      }
    }
    return out;
  }

  [[nodiscard]] ReportOptions report_options() const {
    return {BinSpec::uniform(ece_bins), BinSpec::uniform(cmce_bins), intervals};
  }
};

struct SplitAssignment {
  std::uint64_t seed = 0;
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> test;
};

/// Seeded uniform shuffles cut at floor(fraction * n); index lists are sorted.
inline std::vector<SplitAssignment> make_splits(std::size_t n, double fraction, std::size_t num_splits,
                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidParameter("split fraction must lie in (0, 1)");
  if (n < 2) throw InvalidParameter("need at least two samples to split");
  const auto calib_size = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (calib_size < 1 || calib_size >= n) throw InvalidParameter("split leaves an empty calibration or test set");

  std::vector<SplitAssignment> out;
  for (std::size_t s = 0; s < num_splits; ++s) {
    SplitAssignment a;
    a.seed = derive_seed(seed, s);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(a.seed);
    rng.shuffle(perm);
    a.calibration.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(calib_size));
    a.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(calib_size), perm.end());
    std::sort(a.calibration.begin(), a.calibration.end());
    std::sort(a.test.begin(), a.test.end());
    out.push_back(std::move(a));
  }
  return out;
}

/// Per-row counts of calibrator edge cases on the test split.
struct RowDiagnostics {
  std::size_t empty_set_fallbacks = 0;
  std::size_t degenerate = 0;
  std::size_t infeasible = 0;
  std::size_t constant_mass = 0;
  std::optional<double> temperature;
  /// Conformal methods: largest |in-set mass - (1 - alpha)| over instances where the
  /// constraint applies, and whether it is within the method's tolerance.
  std::optional<double> max_in_set_mass_error;
  std::optional<bool> in_set_mass_ok;
};

struct ResultRow {
  std::string calibrator;
  std::optional<double> alpha;
  std::optional<ScoreKind> score_kind;
  std::size_t split_index = 0;
  std::uint64_t split_seed = 0;
  std::optional<MetricReport> report;
  RowDiagnostics diagnostics;
  std::optional<std::string> error;
};

inline constexpr double kMassRescaleTolerance = 1e-9;

namespace detail {

inline ResultRow evaluate_calibrator(const CalibratorSpec& spec, const EvalBatch& calib, const EvalBatch& test,
                                     const ReportOptions& report_opt, const FitOptions& fit_opt) {
  ResultRow row;
  row.calibrator = spec.name();
  row.alpha = spec.alpha;
  row.score_kind = spec.score_kind;
  const FittedCalibrator fitted = fit(spec, calib, fit_opt);
  if (const auto* t = std::get_if<TemperatureState>(&fitted.state)) row.diagnostics.temperature = t->temperature;

  std::vector<ProbVector> out;
  out.reserve(test.size());
  double worst = 0.0;
  bool all_ok = true;
  for (const auto& p : test.probs()) {
    Applied a = apply_detailed(fitted, p);
    auto& d = row.diagnostics;
    d.empty_set_fallbacks += a.info.empty_set_fallback ? 1 : 0;
    d.degenerate += a.info.degenerate ? 1 : 0;
    d.infeasible += a.info.infeasible ? 1 : 0;
    d.constant_mass += a.info.constant_mass ? 1 : 0;
    const bool constrained = a.info.in_set_mass && !a.info.degenerate && !a.info.infeasible && !a.info.constant_mass;
    if (constrained) {
      const double dev = *a.info.in_set_mass - (1.0 - *spec.alpha);
      const bool ok = spec.method == Method::MassRescale ? std::abs(dev) <= kMassRescaleTolerance
                                                         : dev >= 0.0 && dev <= fit_opt.ts.tol;
      worst = std::max(worst, std::abs(dev));
      all_ok = all_ok && ok;
    }
    out.push_back(std::move(a.probs));
  }
  if (is_conformal(spec.method)) {
    row.diagnostics.max_in_set_mass_error = worst;
    row.diagnostics.in_set_mass_ok = all_ok;
  }
  row.report = full_report(EvalBatch(std::move(out), test.labels()), report_opt);
  return row;
}

}  // namespace detail

/**
 * For each split: fit every calibrator on the calibration part, apply it to the
 * test part and compute the full report. Each split starts with an uncalibrated
 * "Base" row. Fit failures are recorded on their row.
 */
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& config, const LogitDataset& data) {
  config.validate();
  const std::vector<CalibratorSpec> specs = config.expand_specs();
  const ReportOptions report_opt = config.report_options();
  FitOptions fit_opt;
  fit_opt.cmce_bins = BinSpec::uniform(config.cmce_bins);

  std::vector<ResultRow> rows;
  const auto splits = make_splits(data.size(), config.calib_fraction, config.num_splits, config.seed);
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const EvalBatch calib = data.subset(splits[s].calibration);
    const EvalBatch test = data.subset(splits[s].test);

    ResultRow base;
    base.calibrator = "Base";
    base.report = full_report(test, report_opt);
    base.split_index = s;
    base.split_seed = splits[s].seed;
    rows.push_back(std::move(base));

    for (const auto& spec : specs) {
      ResultRow row;
      try {
        row = detail::evaluate_calibrator(spec, calib, test, report_opt, fit_opt);
      } catch (const std::exception& e) {
        row = ResultRow{};
        row.calibrator = spec.name();
        row.alpha = spec.alpha;
        row.score_kind = spec.score_kind;
        row.error = e.what();
      }
      row.split_index = s;
      row.split_seed = splits[s].seed;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline std::vector<ResultRow> run_experiment(const ExperimentConfig& config) {
  return run_experiment(config, config.load_data());
}

// ---------------------------------------------------------------------------
// Reporting

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  out.count = xs.size();
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

inline std::string interval_key(const Interval& iv) {
  return "coverage_[" + format_double(iv.first) + "," + format_double(iv.second) + "]";
}

/// Scalar metrics of a report by name, in a fixed order.
inline std::vector<std::pair<std::string, std::optional<double>>> metric_values(const MetricReport& r) {
  std::vector<std::pair<std::string, std::optional<double>>> out{
      {"accuracy", r.accuracy}, {"ece", r.ece},     {"mce", r.mce},   {"cwece", r.cwece},
      {"nll", r.nll},           {"brier", r.brier}, {"cmce", r.cmce},
  };
  for (const auto& [iv, v] : r.coverage_intervals) out.emplace_back(interval_key(iv), v);
  return out;
}

using OrderedJson = nlohmann::ordered_json;

/// Calibrator names in order of first appearance.
inline std::vector<std::string> calibrator_order(const std::vector<ResultRow>& rows) {
  std::vector<std::string> names;
  for (const auto& r : rows) {
    if (std::find(names.begin(), names.end(), r.calibrator) == names.end()) names.push_back(r.calibrator);
  }
  return names;
}

/// calibrator -> metric -> statistics over splits with a value.
inline std::vector<std::pair<std::string, std::vector<std::pair<std::string, MeanStd>>>> summarize(
    const std::vector<ResultRow>& rows) {
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, MeanStd>>>> out;
  for (const auto& name : calibrator_order(rows)) {
    std::vector<std::string> metric_names;
    std::map<std::string, std::vector<double>> values;
    for (const auto& r : rows) {
      if (r.calibrator != name || !r.report) continue;
      for (const auto& [metric, v] : metric_values(*r.report)) {
        if (std::find(metric_names.begin(), metric_names.end(), metric) == metric_names.end()) {
          metric_names.push_back(metric);
        }
        if (v) values[metric].push_back(*v);
      }
    }
    std::vector<std::pair<std::string, MeanStd>> stats;
    for (const auto& m : metric_names) stats.emplace_back(m, mean_std(values[m]));
    out.emplace_back(name, std::move(stats));
  }
  return out;
}

/// Cumulative-mass curve pooled over all splits of one calibrator.
inline std::vector<CurvePoint> pooled_curve(const std::vector<ResultRow>& rows, const std::string& name) {
  std::map<std::size_t, CurvePoint> acc;
  for (const auto& r : rows) {
    if (r.calibrator != name || !r.report) continue;
    for (const auto& pt : r.report->cmce_curve) {
      auto& a = acc[pt.bin_index];
      a.bin_index = pt.bin_index;
      const auto n = static_cast<double>(pt.count);
      a.mean_mass += pt.mean_mass * n;
      a.coverage += pt.coverage * n;
      a.count += pt.count;
    }
  }
  std::vector<CurvePoint> out;
  for (auto& [bin, pt] : acc) {
    const auto n = static_cast<double>(pt.count);
    out.push_back({bin, pt.mean_mass / n, pt.coverage / n, pt.count});
  }
  return out;
}

inline OrderedJson config_to_json(const ExperimentConfig& c) {
  OrderedJson j;
  if (c.dataset_path) j["dataset"] = *c.dataset_path;
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"K", s.num_classes}, {"N", s.num_samples}, {"spacing", s.spacing}, {"sigma", s.sigma},
                      {"t0", s.t0},         {"logit_noise", s.logit_noise},              {"seed", s.seed}};
  }
  j["calibrators"] = c.calibrators;
  j["alphas"] = c.alphas;
  OrderedJson scores = OrderedJson::array();
  for (ScoreKind k : c.score_kinds) scores.push_back(std::string(to_string(k)));
  j["score_kinds"] = scores;
  j["calib_fraction"] = c.calib_fraction;
  j["num_splits"] = c.num_splits;
  j["seed"] = c.seed;
  j["ece_bins"] = c.ece_bins;
  j["cmce_bins"] = c.cmce_bins;
  OrderedJson ivs = OrderedJson::array();
  for (const auto& [a, b] : c.intervals) ivs.push_back({a, b});
  j["intervals"] = ivs;
  if (c.naive_grid) j["naive_grid"] = *c.naive_grid;
  return j;
}

inline OrderedJson optional_json(const std::optional<double>& v) { return v ? OrderedJson(*v) : OrderedJson(nullptr); }

inline OrderedJson row_to_json(const ResultRow& r) {
  OrderedJson j;
  j["calibrator"] = r.calibrator;
  j["alpha"] = optional_json(r.alpha);
  j["score_kind"] = r.score_kind ? OrderedJson(std::string(to_string(*r.score_kind))) : OrderedJson(nullptr);
  j["split"] = r.split_index;
  j["split_seed"] = r.split_seed;
  if (r.report) {
    OrderedJson m;
    for (const auto& [name, v] : metric_values(*r.report)) m[name] = optional_json(v);
    j["metrics"] = m;
  } else {
    j["metrics"] = nullptr;
  }
  const auto& d = r.diagnostics;
  OrderedJson diag;
  diag["empty_set_fallbacks"] = d.empty_set_fallbacks;
  diag["degenerate"] = d.degenerate;
  diag["infeasible"] = d.infeasible;
  diag["constant_mass"] = d.constant_mass;
  diag["temperature"] = optional_json(d.temperature);
  diag["max_in_set_mass_error"] = optional_json(d.max_in_set_mass_error);
  diag["in_set_mass_ok"] = d.in_set_mass_ok ? OrderedJson(*d.in_set_mass_ok) : OrderedJson(nullptr);
  j["diagnostics"] = diag;
  j["error"] = r.error ? OrderedJson(*r.error) : OrderedJson(nullptr);
  return j;
}

/// JSON document {config_echo, rows, summary} for a finished experiment.
inline OrderedJson report_json(const ExperimentConfig& config, const std::vector<ResultRow>& rows) {
  OrderedJson j;
  j["config_echo"] = config_to_json(config);
  OrderedJson jrows = OrderedJson::array();
  for (const auto& r : rows) jrows.push_back(row_to_json(r));
  j["rows"] = jrows;
  OrderedJson summary = OrderedJson::object();
  for (const auto& [name, stats] : summarize(rows)) {
    OrderedJson per;
    for (const auto& [metric, ms] : stats) {
      per[metric] = ms.count ? OrderedJson{{"mean", ms.mean}, {"std", ms.std}} : OrderedJson(nullptr);
    }
    summary[name] = per;
  }
  j["summary"] = summary;
  return j;
}

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "bin_index,mean_mass,coverage,count\n";
  for (const auto& pt : curve) {
    out << pt.bin_index << ',' << format_double(pt.mean_mass) << ',' << format_double(pt.coverage) << ','
        << pt.count << '\n';
  }
}

inline std::string file_stem(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-') {
      out += c;
    } else if (c == '=' || c == ',' || c == '(') {
      out += '_';
    }
  }
  return out;
}

/**
 * Writes report.json, summary.csv and curves/<calibrator>.csv under dir.
 * Output depends only on the rows and config, so reruns are byte-identical.
 */
inline void emit_report(const ExperimentConfig& config, const std::vector<ResultRow>& rows,
                        const std::filesystem::path& dir) {
  if (rows.empty()) throw InvalidInput("no result rows to report");
  std::error_code ec;
  std::filesystem::create_directories(dir / "curves", ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + dir.string() + "': " + ec.message());

  auto open = [](const std::filesystem::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
    return f;
  };

  {
    auto f = open(dir / "report.json");
    f << report_json(config, rows).dump(2) << '\n';
  }
  {
    auto f = open(dir / "summary.csv");
    const auto summary = summarize(rows);
    std::vector<std::string> metrics;
    for (const auto& [name, stats] : summary) {
      for (const auto& [m, ms] : stats) {
        if (std::find(metrics.begin(), metrics.end(), m) == metrics.end()) metrics.push_back(m);
      }
    }
    f << "calibrator";
    for (const auto& m : metrics) f << ',' << m << "_mean," << m << "_std";
    f << '\n';
    for (const auto& [name, stats] : summary) {
      f << name;
      for (const auto& m : metrics) {
        const auto it = std::find_if(stats.begin(), stats.end(), [&](const auto& s) { return s.first == m; });
        if (it == stats.end() || it->second.count == 0) {
          f << ",,";
        } else {
          f << ',' << format_double(it->second.mean) << ',' << format_double(it->second.std);
        }
      }
      f << '\n';
    }
  }
  for (const auto& name : calibrator_order(rows)) {
    auto f = open(dir / "curves" / (file_stem(name) + ".csv"));
    write_curve_csv(f, pooled_curve(rows, name));
  }
}

}  // namespace cmcal

#endif  // CMCAL_EXPERIMENT_HPP
