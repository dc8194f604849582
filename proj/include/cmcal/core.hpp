#ifndef CMCAL_CORE_HPP
#define CMCAL_CORE_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cmcal {

/// Thrown when input data violates a precondition (non-finite values, bad shapes, bad labels).
class InvalidInput : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a tuning parameter is out of its admissible range.
class InvalidParameter : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return {buf, res.ptr};
}

/// Floor applied to probabilities before taking logarithms.
inline constexpr double kProbFloor = 1e-12;
/// Maximum deviation of a probability row sum from 1 that is accepted as-is.
inline constexpr double kSumTolerance = 1e-9;
/// Maximum deviation that is silently repaired by renormalization on ingestion.
inline constexpr double kRenormTolerance = 1e-6;

/**
 * A point on the probability simplex with at least two classes.
 *
 * Construction validates nonnegativity, finiteness and a row sum within
 * kSumTolerance of 1. Use ProbVector::ingest for external data, which also
 * repairs small drift, and ProbVector::normalize for internally computed
 * nonnegative weights.
 */
class ProbVector {
public:
  ProbVector() = default;

  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
    validate_entries(values_);
    const double total = sum(values_);
    if (std::abs(total - 1.0) > kSumTolerance) {
      throw InvalidInput("probabilities sum to " + std::to_string(total) + ", expected 1");
    }
  }

  ProbVector(std::initializer_list<double> values) : ProbVector(std::vector<double>(values)) {}

  /// Accepts rows summing to 1 within kRenormTolerance, renormalizing them.
  static ProbVector ingest(std::vector<double> values) {
    validate_entries(values);
    const double total = sum(values);
    if (std::abs(total - 1.0) > kRenormTolerance) {
      throw InvalidInput("probabilities sum to " + std::to_string(total) + ", outside tolerance");
    }
    if (std::abs(total - 1.0) > 0.0) {
      for (double& v : values) v /= total;
    }
    return ProbVector(std::move(values), Unchecked{});
  }

  /// Divides nonnegative weights by their sum. The sum must be positive.
  static ProbVector normalize(std::vector<double> weights) {
    validate_entries(weights);
    const double total = sum(weights);
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw InvalidInput("cannot normalize weights with sum " + std::to_string(total));
    }
    for (double& w : weights) w /= total;
    return ProbVector(std::move(weights), Unchecked{});
  }

  static ProbVector uniform(std::size_t k) {
    if (k < 2) throw InvalidInput("need at least two classes");
    return ProbVector(std::vector<double>(k, 1.0 / static_cast<double>(k)), Unchecked{});
  }

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] const std::vector<double>& vector() const noexcept { return values_; }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

private:
  struct Unchecked {};
  ProbVector(std::vector<double> values, Unchecked) : values_(std::move(values)) {}

  static double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

  static void validate_entries(const std::vector<double>& v) {
    if (v.size() < 2) throw InvalidInput("need at least two classes, got " + std::to_string(v.size()));
    for (double x : v) {
      if (!std::isfinite(x)) throw InvalidInput("non-finite probability");
      if (x < 0.0) throw InvalidInput("negative probability " + std::to_string(x));
    }
  }

  std::vector<double> values_;
};

/// Unbounded real class scores.
class LogitVector {
public:
  explicit LogitVector(std::vector<double> values) : values_(std::move(values)) {
    for (double x : values_) {
      if (!std::isfinite(x)) throw InvalidInput("non-finite logit");
    }
  }
  LogitVector(std::initializer_list<double> values) : LogitVector(std::vector<double>(values)) {}

  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }

private:
  std::vector<double> values_;
};

/// Class indices ordered by nonincreasing probability, ties by ascending index.
using SortPermutation = std::vector<std::size_t>;

/// A set of class indices, kept sorted ascending.
struct LabelSet {
  std::vector<std::size_t> members;

  [[nodiscard]] bool contains(std::size_t k) const {
    return std::binary_search(members.begin(), members.end(), k);
  }
  [[nodiscard]] std::size_t size() const noexcept { return members.size(); }
  [[nodiscard]] bool empty() const noexcept { return members.empty(); }

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

namespace detail {

inline std::vector<double> softmax_in_place(std::vector<double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& v : z) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : z) v /= total;
  return z;
}

}  // namespace detail

/// Numerically stable softmax (max-shifted).
inline ProbVector softmax(std::span<const double> z) {
  if (z.size() < 2) throw InvalidInput("softmax needs at least two scores");
  for (double v : z) {
    if (!std::isfinite(v)) throw InvalidInput("non-finite logit in softmax");
  }
  return ProbVector::normalize(detail::softmax_in_place({z.begin(), z.end()}));
}

inline ProbVector softmax(const LogitVector& z) { return softmax(z.values()); }

/// Clamps every entry to kProbFloor, renormalizes, and returns the logs.
inline std::vector<double> clamped_log(const ProbVector& p) {
  std::vector<double> out(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::max(p[i], kProbFloor);
    total += out[i];
  }
  const double log_total = std::log(total);
  for (double& v : out) v = std::log(v) - log_total;
  return out;
}

namespace detail {

/// Entries below this are treated as underflowed by tempering.
inline constexpr double kUnderflowLevel = 1e-300;

/**
 * Extreme temperatures push small probabilities below the double range, where
 * distinct classes would collapse to the same value. Such entries are re-spaced
 * at consecutive multiples of the smallest subnormal, ordered by their log-domain
 * value z, so the class ranking survives; the total moves by at most K^2 * 5e-324.
 */
inline std::vector<double> keep_underflow_order(std::vector<double> q, const std::vector<double>& z) {
  std::vector<std::size_t> tiny;
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (q[k] < kUnderflowLevel) tiny.push_back(k);
  }
  if (tiny.size() < 2) return q;
  std::stable_sort(tiny.begin(), tiny.end(), [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
  const double step = std::numeric_limits<double>::denorm_min();
  double level = step;
  for (std::size_t j = 0; j < tiny.size(); ++j) {
    if (j > 0 && z[tiny[j]] > z[tiny[j - 1]]) level += step;
    q[tiny[j]] = level;
  }
  return q;
}

}  // namespace detail

/// Softmax(log p / tau). Ranking of classes is preserved, including through underflow.
inline ProbVector tempered_softmax(const ProbVector& p, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw InvalidParameter("temperature must be positive and finite");
  }
  std::vector<double> z = clamped_log(p);
  for (double& v : z) v /= tau;
  std::vector<double> q = ProbVector::normalize(detail::softmax_in_place(z)).vector();
  return ProbVector(detail::keep_underflow_order(std::move(q), z));
}

inline SortPermutation sort_desc(std::span<const double> p) {
  SortPermutation order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  return order;
}

inline SortPermutation sort_desc(const ProbVector& p) { return sort_desc(p.values()); }

/// Lowest index among the maximal entries.
inline std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline std::size_t argmax(const ProbVector& p) { return argmax(p.values()); }

/**
 * Highest-probability region of mass at least 1 - alpha: the shortest prefix of
 * sort_desc(p) whose cumulative mass reaches 1 - alpha (non-strict comparison).
 * The full class set is returned when rounding keeps the total below 1 - alpha.
 */
inline LabelSet hpr(const ProbVector& p, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidParameter("alpha must lie in [0, 1]");
  const SortPermutation order = sort_desc(p);
  const double target = 1.0 - alpha;
  LabelSet out;
  double mass = 0.0;
  for (std::size_t k : order) {
    out.members.push_back(k);
    mass += p[k];
    if (mass >= target) break;
  }
  std::sort(out.members.begin(), out.members.end());
  return out;
}

/// Sum of p over the members of a set.
inline double set_mass(const ProbVector& p, const LabelSet& set) {
  double mass = 0.0;
  for (std::size_t k : set.members) mass += p[k];
  return mass;
}

inline LabelSet all_labels(std::size_t k) {
  LabelSet out;
  out.members.resize(k);
  std::iota(out.members.begin(), out.members.end(), std::size_t{0});
  return out;
}

}  // namespace cmcal

#endif  // CMCAL_CORE_HPP
