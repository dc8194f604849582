#ifndef CMCAL_METRICS_HPP
#define CMCAL_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmcal/core.hpp"

namespace cmcal {

/**
 * Partition of [0, 1] into bins. Bin i covers (t_i, t_{i+1}], except bin 0 which
 * is closed on both sides, so every value in [0, 1] lands in exactly one bin.
 */
class BinSpec {
public:
  explicit BinSpec(std::vector<double> edges) : edges_(std::move(edges)) {
    if (edges_.size() < 2) throw InvalidParameter("bin spec needs at least two edges");
    if (edges_.front() != 0.0 || edges_.back() != 1.0) {
      throw InvalidParameter("bin edges must start at 0 and end at 1");
    }
    for (std::size_t i = 1; i < edges_.size(); ++i) {
      if (!(edges_[i] > edges_[i - 1])) throw InvalidParameter("bin edges must be strictly increasing");
    }
  }

  static BinSpec uniform(std::size_t count) {
    if (count == 0) throw InvalidParameter("bin count must be positive");
    std::vector<double> edges(count + 1);
    for (std::size_t i = 0; i <= count; ++i) {
      edges[i] = static_cast<double>(i) / static_cast<double>(count);
    }
    edges.back() = 1.0;
    return BinSpec(std::move(edges));
  }

  [[nodiscard]] std::size_t count() const noexcept { return edges_.size() - 1; }
  [[nodiscard]] const std::vector<double>& edges() const noexcept { return edges_; }

  /// Values slightly outside [0, 1] from rounding go to the end bins.
  [[nodiscard]] std::size_t bin_of(double x) const {
    const auto it = std::lower_bound(edges_.begin() + 1, edges_.end() - 1, x);
    return static_cast<std::size_t>(it - (edges_.begin() + 1));
  }

private:
  std::vector<double> edges_;
};

/// Predictions and labels evaluated together.
class EvalBatch {
public:
  EvalBatch(std::vector<ProbVector> probs, std::vector<std::size_t> labels)
      : probs_(std::move(probs)), labels_(std::move(labels)) {
    if (probs_.empty()) throw InvalidInput("evaluation batch is empty");
    if (probs_.size() != labels_.size()) throw InvalidInput("probability and label counts differ");
    num_classes_ = probs_.front().size();
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      if (probs_[i].size() != num_classes_) {
        throw InvalidInput("row " + std::to_string(i) + " has inconsistent class count");
      }
      if (labels_[i] >= num_classes_) {
        throw InvalidInput("row " + std::to_string(i) + " has out-of-range label");
      }
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return probs_.size(); }
  [[nodiscard]] std::size_t num_classes() const noexcept { return num_classes_; }
  [[nodiscard]] const std::vector<ProbVector>& probs() const noexcept { return probs_; }
  [[nodiscard]] const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  [[nodiscard]] const ProbVector& prob(std::size_t i) const { return probs_[i]; }
  [[nodiscard]] std::size_t label(std::size_t i) const { return labels_[i]; }

private:
  std::vector<ProbVector> probs_;
  std::vector<std::size_t> labels_;
  std::size_t num_classes_ = 0;
};

struct CurvePoint {
  std::size_t bin_index = 0;
  double mean_mass = 0.0;
  double coverage = 0.0;
  std::size_t count = 0;
};

struct CmceResult {
  double value = 0.0;
  /// Nonempty bins only, in ascending bin order.
  std::vector<CurvePoint> curve;
};

using Interval = std::pair<double, double>;

struct MetricReport {
  double ece = 0.0;
  double mce = 0.0;
  double cwece = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double cmce = 0.0;
  double accuracy = 0.0;
  /// std::nullopt marks an interval with no qualifying prefix sets.
  std::map<Interval, std::optional<double>> coverage_intervals;
  std::vector<CurvePoint> cmce_curve;
};

inline double brier(const EvalBatch& batch) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ProbVector& p = batch.prob(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double target = k == batch.label(i) ? 1.0 : 0.0;
      total += (target - p[k]) * (target - p[k]);
    }
  }
  return total / static_cast<double>(batch.size());
}

/// Mean negative log-probability of the true label, after clamping zeros.
inline double nll(const EvalBatch& batch) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total -= clamped_log(batch.prob(i))[batch.label(i)];
  }
  return std::max(0.0, total / static_cast<double>(batch.size()));
}

inline double accuracy(const EvalBatch& batch) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (argmax(batch.prob(i)) == batch.label(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(batch.size());
}

namespace detail {

struct BinAccumulator {
  std::size_t count = 0;
  double hits = 0.0;
  double value_sum = 0.0;

  [[nodiscard]] double gap() const {
    const double n = static_cast<double>(count);
    return std::abs(hits / n - value_sum / n);
  }
};

inline std::vector<BinAccumulator> confidence_bins(const EvalBatch& batch, const BinSpec& bins) {
  std::vector<BinAccumulator> acc(bins.count());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ProbVector& p = batch.prob(i);
    const std::size_t top = argmax(p);
    BinAccumulator& b = acc[bins.bin_of(p[top])];
    ++b.count;
    b.value_sum += p[top];
    if (top == batch.label(i)) b.hits += 1.0;
  }
  return acc;
}

}  // namespace detail

/// Expected calibration error over top-class confidence bins.
inline double ece(const EvalBatch& batch, const BinSpec& bins) {
  const auto acc = detail::confidence_bins(batch, bins);
  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& b : acc) {
    if (b.count > 0) total += static_cast<double>(b.count) / n * b.gap();
  }
  return total;
}

/// Largest per-bin confidence gap over nonempty bins.
inline double mce(const EvalBatch& batch, const BinSpec& bins) {
  double worst = 0.0;
  for (const auto& b : detail::confidence_bins(batch, bins)) {
    if (b.count > 0) worst = std::max(worst, b.gap());
  }
  return worst;
}

/// Class-wise ECE with per-bin weight |B| / (n K).
inline double cwece(const EvalBatch& batch, const BinSpec& bins) {
  const std::size_t k_count = batch.num_classes();
  const double denom = static_cast<double>(batch.size()) * static_cast<double>(k_count);
  double total = 0.0;
  std::vector<detail::BinAccumulator> acc(bins.count());
  for (std::size_t k = 0; k < k_count; ++k) {
    std::fill(acc.begin(), acc.end(), detail::BinAccumulator{});
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double pk = batch.prob(i)[k];
      auto& b = acc[bins.bin_of(pk)];
      ++b.count;
      b.value_sum += pk;
      if (batch.label(i) == k) b.hits += 1.0;
    }
    for (const auto& b : acc) {
      if (b.count > 0) total += static_cast<double>(b.count) / denom * b.gap();
    }
  }
  return total;
}

/**
 * Visits the K nested highest-probability prefix sets of every sample, calling
 * fn(mass, covered) for each, where covered tells whether the prefix contains
 * the true label. The full set is assigned mass exactly 1 and partial sums are
 * capped at 1.
 */
template <typename Fn>
void for_each_prefix_set(const EvalBatch& batch, Fn&& fn) {
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ProbVector& p = batch.prob(i);
    const SortPermutation order = sort_desc(p);
    double mass = 0.0;
    bool covered = false;
    for (std::size_t t = 0; t < order.size(); ++t) {
      mass += p[order[t]];
      covered = covered || order[t] == batch.label(i);
      fn(t + 1 == order.size() ? 1.0 : std::min(mass, 1.0), covered);
    }
  }
}

/// Cumulative mass calibration error and its per-bin curve.
inline CmceResult cmce(const EvalBatch& batch, const BinSpec& bins) {
  std::vector<detail::BinAccumulator> acc(bins.count());
  for_each_prefix_set(batch, [&](double mass, bool covered) {
    auto& b = acc[bins.bin_of(mass)];
    ++b.count;
    b.value_sum += mass;
    if (covered) b.hits += 1.0;
  });

  const double total_sets = static_cast<double>(batch.size() * batch.num_classes());
  CmceResult out;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const auto& b = acc[i];
    if (b.count == 0) continue;
    out.value += static_cast<double>(b.count) / total_sets * b.gap();
    const double n = static_cast<double>(b.count);
    out.curve.push_back({i, b.value_sum / n, b.hits / n, b.count});
  }
  return out;
}

/**
 * Fraction of prefix sets with cumulative mass in [a, b] that contain the true
 * label; std::nullopt when no prefix set qualifies.
 */
inline std::optional<double> coverage_interval(const EvalBatch& batch, double a, double b) {
  if (a > b) throw InvalidParameter("coverage interval needs a <= b");
  if (a < 0.0 || b > 1.0) throw InvalidParameter("coverage interval must lie in [0, 1]");
  std::size_t qualifying = 0;
  std::size_t hits = 0;
  for_each_prefix_set(batch, [&](double mass, bool covered) {
    if (mass >= a && mass <= b) {
      ++qualifying;
      if (covered) ++hits;
    }
  });
  if (qualifying == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(qualifying);
}

struct ReportOptions {
  BinSpec ece_bins = BinSpec::uniform(15);
  BinSpec cmce_bins = BinSpec::uniform(25);
  std::vector<Interval> intervals = {{0.9, 0.92}, {0.99, 0.995}};
};

inline MetricReport full_report(const EvalBatch& batch, const ReportOptions& options = {}) {
  MetricReport r;
  r.ece = ece(batch, options.ece_bins);
  r.mce = mce(batch, options.ece_bins);
  r.cwece = cwece(batch, options.ece_bins);
  r.nll = nll(batch);
  r.brier = brier(batch);
  auto cm = cmce(batch, options.cmce_bins);
  r.cmce = cm.value;
  r.cmce_curve = std::move(cm.curve);
  r.accuracy = accuracy(batch);
  for (const auto& [a, b] : options.intervals) {
    r.coverage_intervals[{a, b}] = coverage_interval(batch, a, b);
  }
  return r;
}

}  // namespace cmcal

#endif  // CMCAL_METRICS_HPP
