#ifndef CMCAL_CONFORMAL_HPP
#define CMCAL_CONFORMAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmcal/core.hpp"
#include "cmcal/metrics.hpp"

namespace cmcal {

/// Nonconformity score family. Lower scores are more conforming.
enum class ScoreKind { APS, MSP };

inline std::string_view to_string(ScoreKind kind) { return kind == ScoreKind::APS ? "APS" : "MSP"; }

inline ScoreKind parse_score_kind(std::string_view name) {
  if (name == "APS" || name == "aps") return ScoreKind::APS;
  if (name == "MSP" || name == "msp") return ScoreKind::MSP;
  throw InvalidParameter("unknown score kind '" + std::string(name) + "'");
}

/**
 * Maps a raw score and instance features to a transformed score before
 * thresholding. The constant strategy uses the identity; an adaptive,
 * instance-dependent transform can be supplied without changing the API.
 */
using ScoreTransform = std::function<double(double score, std::span<const double> features)>;

/// APS: mass of the sorted prefix ending at y. MSP: 1 - p_y.
inline double score(ScoreKind kind, const ProbVector& p, std::size_t y) {
  if (y >= p.size()) throw InvalidInput("class index " + std::to_string(y) + " out of range");
  if (kind == ScoreKind::MSP) return 1.0 - p[y];
  double mass = 0.0;
  for (std::size_t k : sort_desc(p)) {
    mass += p[k];
    if (k == y) break;
  }
  return mass;
}

/// Scores of every class for one instance, indexed by class.
inline std::vector<double> all_scores(ScoreKind kind, const ProbVector& p) {
  std::vector<double> out(p.size());
  if (kind == ScoreKind::MSP) {
    for (std::size_t k = 0; k < p.size(); ++k) out[k] = 1.0 - p[k];
    return out;
  }
  double mass = 0.0;
  for (std::size_t k : sort_desc(p)) {
    mass += p[k];
    out[k] = mass;
  }
  return out;
}

/// Fitted split-conformal threshold.
struct ConformalRule {
  ScoreKind kind = ScoreKind::MSP;
  double alpha = 0.1;
  /// std::nullopt is the all-labels sentinel: the quantile rank exceeds n.
  std::optional<double> threshold;
  std::size_t calib_size = 0;
  /// Empty means identity (constant threshold strategy).
  ScoreTransform transform;

  [[nodiscard]] bool all_labels() const noexcept { return !threshold.has_value(); }
};

/// ceil((1 - alpha)(n + 1)), guarded against rounding just above an integer.
inline std::size_t quantile_rank(std::size_t n, double alpha) {
  const double raw = (1.0 - alpha) * static_cast<double>(n + 1);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
}

inline ConformalRule fit_threshold(ScoreKind kind, const EvalBatch& calib, double alpha,
                                   ScoreTransform transform = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("alpha must lie in (0, 1)");
  const std::size_t n = calib.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = score(kind, calib.prob(i), calib.label(i));
    scores[i] = transform ? transform(s, calib.prob(i).values()) : s;
  }

  ConformalRule rule{kind, alpha, std::nullopt, n, std::move(transform)};
  const std::size_t rank = quantile_rank(n, alpha);
  if (rank > n) return rule;
  const std::size_t idx = rank == 0 ? 0 : rank - 1;
  std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(idx), scores.end());
  rule.threshold = scores[idx];
  return rule;
}

struct PredictionSet {
  LabelSet labels;
  /// True when no score passed the threshold and {argmax p} was substituted.
  bool empty_fallback = false;
};

inline PredictionSet predict_set(const ConformalRule& rule, const ProbVector& p) {
  PredictionSet out;
  if (rule.all_labels()) {
    out.labels = all_labels(p.size());
    return out;
  }
  const std::vector<double> scores = all_scores(rule.kind, p);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double s = rule.transform ? rule.transform(scores[k], p.values()) : scores[k];
    if (s <= *rule.threshold) out.labels.members.push_back(k);
  }
  if (out.labels.empty()) {
    out.labels.members.push_back(argmax(p));
    out.empty_fallback = true;
  }
  return out;
}

}  // namespace cmcal

#endif  // CMCAL_CONFORMAL_HPP
