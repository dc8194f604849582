#ifndef CMCAL_SYNTHETIC_HPP
#define CMCAL_SYNTHETIC_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cmcal/core.hpp"
#include "cmcal/metrics.hpp"
#include "cmcal/random.hpp"

namespace cmcal {

using Point2 = std::array<double, 2>;

/// Equal-prior isotropic Gaussian classes with centers on a square lattice.
struct GridMixture {
  std::size_t num_classes = 0;
  std::vector<Point2> centers;
  double sigma = 0.35;
  std::uint64_t seed = 0;
};

struct SyntheticBatch {
  std::vector<Point2> inputs;
  std::vector<std::size_t> labels;
  /// Exact class posteriors p(y | x).
  std::vector<ProbVector> truth;

  [[nodiscard]] EvalBatch truth_batch() const { return {truth, labels}; }
};

/// Row-major ceil(sqrt K) x ceil(sqrt K) lattice truncated to K centers.
inline GridMixture make_grid(std::size_t k, double spacing = 1.0, double sigma = 0.35, std::uint64_t seed = 0) {
  if (k < 2) throw InvalidParameter("grid mixture needs at least two classes");
  if (!(spacing > 0.0) || !(sigma > 0.0)) throw InvalidParameter("spacing and sigma must be positive");
  auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
  while (side * side < k) ++side;
  GridMixture mix{k, {}, sigma, seed};
  mix.centers.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    mix.centers.push_back({spacing * static_cast<double>(i % side), spacing * static_cast<double>(i / side)});
  }
  return mix;
}

inline ProbVector true_posterior(const GridMixture& mix, Point2 x) {
  if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw InvalidInput("non-finite input point");
  std::vector<double> logits(mix.centers.size());
  const double scale = 1.0 / (2.0 * mix.sigma * mix.sigma);
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double dx = x[0] - mix.centers[k][0];
    const double dy = x[1] - mix.centers[k][1];
    logits[k] = -(dx * dx + dy * dy) * scale;
  }
  return softmax(logits);
}

/// Draws n labeled points; stream selects an independent substream of mix.seed.
inline SyntheticBatch sample(const GridMixture& mix, std::size_t n, std::uint64_t stream = 0) {
  if (n == 0) throw InvalidParameter("sample size must be positive");
  Rng rng(derive_seed(mix.seed, stream));
  SyntheticBatch out;
  out.inputs.reserve(n);
  out.labels.reserve(n);
  out.truth.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = rng.below(mix.num_classes);
    const Point2 x{mix.centers[y][0] + mix.sigma * rng.normal(), mix.centers[y][1] + mix.sigma * rng.normal()};
    out.inputs.push_back(x);
    out.labels.push_back(y);
    out.truth.push_back(true_posterior(mix, x));
  }
  return out;
}

/**
 * Controlled uncalibrated predictor: softmax(log truth / t0 + noise), with
 * i.i.d. N(0, logit_noise^2) noise per class. t0 < 1 sharpens, t0 > 1 flattens.
 */
inline ProbVector miscalibrate(const ProbVector& truth, double t0, double logit_noise, std::uint64_t seed) {
  if (!(t0 > 0.0)) throw InvalidParameter("miscalibration temperature must be positive");
  if (!(logit_noise >= 0.0)) throw InvalidParameter("logit noise must be nonnegative");
  if (logit_noise == 0.0) return tempered_softmax(truth, t0);
  std::vector<double> z = clamped_log(truth);
  Rng rng(seed);
  for (double& v : z) v = v / t0 + logit_noise * rng.normal();
  return softmax(z);
}

inline std::vector<ProbVector> miscalibrate(const std::vector<ProbVector>& truth, double t0, double logit_noise,
                                            std::uint64_t seed) {
  std::vector<ProbVector> out;
  out.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out.push_back(miscalibrate(truth[i], t0, logit_noise, derive_seed(seed, i)));
  }
  return out;
}

}  // namespace cmcal

#endif  // CMCAL_SYNTHETIC_HPP
