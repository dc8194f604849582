// Command-line front end: synthetic data generation, experiment runs and
// one-shot metric evaluation of prediction files.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmcal/cmcal.hpp"

namespace {

using cmcal::Interval;

std::vector<Interval> parse_intervals(const std::vector<std::string>& specs) {
  std::vector<Interval> out;
  for (const auto& s : specs) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw CLI::ValidationError("interval", "expected a:b, got '" + s + "'");
    const double a = std::stod(s.substr(0, colon));
    const double b = std::stod(s.substr(colon + 1));
    if (!(0.0 <= a && a <= b && b <= 1.0)) throw CLI::ValidationError("interval", "need 0 <= a <= b <= 1");
    out.emplace_back(a, b);
  }
  return out;
}

cmcal::FileFormat file_format(const std::string& name, const std::string& path) {
  if (name == "csv") return cmcal::FileFormat::Csv;
  if (name == "jsonl") return cmcal::FileFormat::Jsonl;
  return cmcal::guess_format(path);
}

struct SynthArgs {
  cmcal::SyntheticSpec spec;
  std::string output;
  std::string truth_output;
};

struct RunArgs {
  std::string dataset;
  bool synthetic = false;
  cmcal::SyntheticSpec synth;
  std::vector<std::string> calibrators;
  std::vector<double> alphas{0.1};
  std::vector<std::string> scores{"MSP"};
  double calib_fraction = 0.2;
  std::size_t num_splits = 10;
  std::uint64_t seed = 0;
  std::size_t ece_bins = 15;
  std::size_t cmce_bins = 25;
  std::vector<std::string> intervals{"0.9:0.92", "0.99:0.995"};
  std::vector<double> naive_grid;
  std::string output = "results";
};

struct EvalArgs {
  std::string input;
  std::string format = "auto";
  std::size_t ece_bins = 15;
  std::size_t cmce_bins = 25;
  std::vector<std::string> intervals{"0.9:0.92", "0.99:0.995"};
  std::string output;
};

void add_synth_options(CLI::App* cmd, cmcal::SyntheticSpec& s, const std::string& prefix) {
  cmd->add_option("--" + prefix + "classes", s.num_classes, "Number of classes K")->capture_default_str();
  cmd->add_option("--" + prefix + "samples", s.num_samples, "Number of samples N")->capture_default_str();
  cmd->add_option("--" + prefix + "spacing", s.spacing, "Grid spacing between class centers")->capture_default_str();
  cmd->add_option("--" + prefix + "sigma", s.sigma, "Shared class standard deviation")->capture_default_str();
  cmd->add_option("--" + prefix + "t0", s.t0, "Miscalibration temperature (<1 sharpens)")->capture_default_str();
  cmd->add_option("--" + prefix + "noise", s.logit_noise, "Logit noise standard deviation")->capture_default_str();
  cmd->add_option("--" + prefix + "seed", s.seed, "Data seed")->capture_default_str();
}

int cmd_synth(const SynthArgs& args) {
  const auto data = cmcal::make_synthetic(args.spec);
  std::ofstream out(args.output);
  if (!out) throw std::runtime_error("cannot write '" + args.output + "'");
  cmcal::write_csv(out, data.predicted.probs, data.predicted.labels);
  if (!args.truth_output.empty()) {
    std::ofstream truth(args.truth_output);
    if (!truth) throw std::runtime_error("cannot write '" + args.truth_output + "'");
    cmcal::write_csv(truth, data.truth, data.predicted.labels);
  }
  return 0;
}

int cmd_run(const RunArgs& args) {
  cmcal::ExperimentConfig config;
  if (args.synthetic) {
    config.synthetic = args.synth;
  } else if (!args.dataset.empty()) {
    config.dataset_path = args.dataset;
  }
  config.calibrators = args.calibrators;
  config.alphas = args.alphas;
  config.score_kinds.clear();
  for (const auto& s : args.scores) config.score_kinds.push_back(cmcal::parse_score_kind(s));
  config.calib_fraction = args.calib_fraction;
  config.num_splits = args.num_splits;
  config.seed = args.seed;
  config.ece_bins = args.ece_bins;
  config.cmce_bins = args.cmce_bins;
  config.intervals = parse_intervals(args.intervals);
  if (!args.naive_grid.empty()) config.naive_grid = args.naive_grid;
  config.output_dir = args.output;

  const auto rows = cmcal::run_experiment(config);
  cmcal::emit_report(config, rows, config.output_dir);
  for (const auto& r : rows) {
    if (r.error) std::cerr << "warning: " << r.calibrator << " split " << r.split_index << ": " << *r.error << '\n';
  }
  std::cout << "wrote " << rows.size() << " rows to " << config.output_dir << '\n';
  return 0;
}

nlohmann::ordered_json report_to_json(const cmcal::MetricReport& r) {
  nlohmann::ordered_json j;
  for (const auto& [name, v] : cmcal::metric_values(r)) j[name] = cmcal::optional_json(v);
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (const auto& pt : r.cmce_curve) {
    curve.push_back({{"bin_index", pt.bin_index}, {"mean_mass", pt.mean_mass}, {"coverage", pt.coverage},
                     {"count", pt.count}});
  }
  j["cmce_curve"] = curve;
  return j;
}

std::ostream& output_stream(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw std::runtime_error("cannot write '" + path + "'");
  return file;
}

int cmd_metrics(const EvalArgs& args) {
  const auto data = cmcal::load_dataset(args.input, file_format(args.format, args.input));
  const cmcal::ReportOptions opt{cmcal::BinSpec::uniform(args.ece_bins), cmcal::BinSpec::uniform(args.cmce_bins),
                                 parse_intervals(args.intervals)};
  const auto report = cmcal::full_report(data.batch(), opt);
  std::ofstream file;
  output_stream(args.output, file) << report_to_json(report).dump(2) << '\n';
  return 0;
}

int cmd_curves(const EvalArgs& args) {
  const auto data = cmcal::load_dataset(args.input, file_format(args.format, args.input));
  const auto result = cmcal::cmce(data.batch(), cmcal::BinSpec::uniform(args.cmce_bins));
  std::ofstream file;
  cmcal::write_curve_csv(output_stream(args.output, file), result.curve);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cumulative-mass calibration of probabilistic classifiers"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML/INI config file; keys for `run` go under a [run] section");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic predictions file");
  add_synth_options(synth_cmd, synth.spec, "");
  synth_cmd->add_option("-o,--output", synth.output, "Predictions CSV to write")->required();
  synth_cmd->add_option("--truth", synth.truth_output, "Also write ground-truth posteriors here");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Fit and evaluate calibrators over repeated splits");
  run_cmd->add_option("--dataset", run.dataset, "Predictions file (CSV or JSONL)");
  run_cmd->add_flag("--synthetic", run.synthetic, "Generate the dataset instead of loading one");
  add_synth_options(run_cmd, run.synth, "synth-");
  run_cmd->add_option("--calibrators", run.calibrators, "MR, TS, NaiveCMCE, TempScale, Platt, Isotonic")
      ->delimiter(',');
  run_cmd->add_option("--alphas", run.alphas, "Conformal error levels")->delimiter(',')->capture_default_str();
  run_cmd->add_option("--scores", run.scores, "Nonconformity scores: MSP, APS")->delimiter(',')->capture_default_str();
  run_cmd->add_option("--calib-fraction", run.calib_fraction, "Calibration share of each split")
      ->capture_default_str();
  run_cmd->add_option("--num-splits", run.num_splits, "Number of random splits")->capture_default_str();
  run_cmd->add_option("--seed", run.seed, "Split seed")->capture_default_str();
  run_cmd->add_option("--ece-bins", run.ece_bins, "Bins for ECE, MCE and cw-ECE")->capture_default_str();
  run_cmd->add_option("--cmce-bins", run.cmce_bins, "Bins for CMCE and its curve")->capture_default_str();
  run_cmd->add_option("--intervals", run.intervals, "Coverage intervals a:b")->delimiter(',')->capture_default_str();
  run_cmd->add_option("--naive-grid", run.naive_grid, "Temperatures for NaiveCMCE")->delimiter(',');
  run_cmd->add_option("-o,--output", run.output, "Output directory")->capture_default_str();

  auto add_eval_options = [](CLI::App* cmd, EvalArgs& a) {
    cmd->add_option("-i,--input", a.input, "Predictions file")->required();
    cmd->add_option("--format", a.format, "auto, csv or jsonl")->capture_default_str();
    cmd->add_option("--cmce-bins", a.cmce_bins, "Bins for CMCE")->capture_default_str();
    cmd->add_option("-o,--output", a.output, "Output file (default stdout)");
  };
  EvalArgs metrics;
  auto* metrics_cmd = app.add_subcommand("metrics", "Evaluate every metric on a predictions file");
  add_eval_options(metrics_cmd, metrics);
  metrics_cmd->add_option("--ece-bins", metrics.ece_bins, "Bins for ECE, MCE and cw-ECE")->capture_default_str();
  metrics_cmd->add_option("--intervals", metrics.intervals, "Coverage intervals a:b")
      ->delimiter(',')
      ->capture_default_str();

  EvalArgs curves;
  auto* curves_cmd = app.add_subcommand("curves", "Emit the cumulative-mass calibration curve as CSV");
  add_eval_options(curves_cmd, curves);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*run_cmd) return cmd_run(run);
    if (*metrics_cmd) return cmd_metrics(metrics);
    if (*curves_cmd) return cmd_curves(curves);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
