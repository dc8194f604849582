#ifndef CMCAL_ISOTONIC_HPP
#define CMCAL_ISOTONIC_HPP

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace cmcal {

/**
 * Pool adjacent violators: least-squares nondecreasing fit of y with weights w.
 *
 * Block values are recomputed from left-to-right sums once the partition is
 * final, so the result is bitwise identical to taking the weighted mean of each
 * optimal block directly.
 */
inline std::vector<double> pava(std::span<const double> y, std::span<const double> w) {
  const std::size_t n = y.size();
  if (w.size() != n) throw std::invalid_argument("pava: weight size mismatch");
  std::vector<double> out(n);
  if (n == 0) return out;

  struct Block {
    std::size_t start;
    std::size_t end;  // exclusive
    double wsum;
    double wysum;
    [[nodiscard]] double mean() const { return wysum / wsum; }
  };
  std::vector<Block> stack;
  stack.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    stack.push_back({i, i + 1, w[i], w[i] * y[i]});
    while (stack.size() > 1 && stack[stack.size() - 2].mean() >= stack.back().mean()) {
      const Block top = stack.back();
      stack.pop_back();
      Block& prev = stack.back();
      prev.end = top.end;
      prev.wsum += top.wsum;
      prev.wysum += top.wysum;
    }
  }

  for (const Block& b : stack) {
    double ws = 0.0;
    double wys = 0.0;
    for (std::size_t i = b.start; i < b.end; ++i) {
      ws += w[i];
      wys += w[i] * y[i];
    }
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(b.start),
              out.begin() + static_cast<std::ptrdiff_t>(b.end), wys / ws);
  }
  return out;
}

inline std::vector<double> pava(std::span<const double> y) {
  const std::vector<double> w(y.size(), 1.0);
  return pava(y, w);
}

/// Nondecreasing, right-continuous step function; constant beyond its knots.
class StepFunction {
public:
  StepFunction() = default;
  StepFunction(std::vector<double> knots, std::vector<double> values)
      : knots_(std::move(knots)), values_(std::move(values)) {
    if (knots_.size() != values_.size() || knots_.empty()) {
      throw std::invalid_argument("step function needs matching, nonempty knots and values");
    }
  }

  [[nodiscard]] double operator()(double x) const {
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
    if (it == knots_.begin()) return values_.front();
    return values_[static_cast<std::size_t>(it - knots_.begin()) - 1];
  }

  [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
  [[nodiscard]] const std::vector<double>& values() const noexcept { return values_; }

private:
  std::vector<double> knots_;
  std::vector<double> values_;
};

/**
 * Isotonic regression of targets on scores. Tied scores are pooled first so the
 * fit is a function of the score; the result keeps one knot per level change.
 */
inline StepFunction fit_isotonic(std::span<const double> scores, std::span<const double> targets) {
  if (scores.size() != targets.size() || scores.empty()) {
    throw std::invalid_argument("isotonic fit needs matching, nonempty inputs");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> ws;
  for (std::size_t idx : order) {
    if (!xs.empty() && xs.back() == scores[idx]) {
      ys.back() += targets[idx];
      ws.back() += 1.0;
    } else {
      xs.push_back(scores[idx]);
      ys.push_back(targets[idx]);
      ws.push_back(1.0);
    }
  }
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] /= ws[i];

  const std::vector<double> fitted = pava(ys, ws);
  std::vector<double> knots;
  std::vector<double> values;
  for (std::size_t i = 0; i < fitted.size(); ++i) {
    if (values.empty() || fitted[i] != values.back()) {
      knots.push_back(xs[i]);
      values.push_back(fitted[i]);
    }
  }
  return {std::move(knots), std::move(values)};
}

}  // namespace cmcal

#endif  // CMCAL_ISOTONIC_HPP
