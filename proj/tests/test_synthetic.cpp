#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cmcal/metrics.hpp"
#include "cmcal/synthetic.hpp"

namespace cmcal {
namespace {

TEST(MakeGrid, Lattice) {
  const GridMixture four = make_grid(4, 1.0);
  EXPECT_EQ(four.centers, (std::vector<Point2>{{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
  const GridMixture two = make_grid(2, 1.0);
  EXPECT_EQ(two.centers, (std::vector<Point2>{{0, 0}, {1, 0}}));
  const GridMixture five = make_grid(5, 2.0);
  EXPECT_EQ(five.centers.back(), (Point2{2.0, 2.0}));
  EXPECT_THROW(make_grid(1), InvalidParameter);
  EXPECT_THROW(make_grid(4, 0.0), InvalidParameter);
  EXPECT_THROW(make_grid(4, 1.0, -1.0), InvalidParameter);
}

TEST(Sample, DeterministicPerSeed) {
  const GridMixture mix = make_grid(9, 1.0, 0.35, 5);
  const SyntheticBatch a = sample(mix, 100);
  const SyntheticBatch b = sample(make_grid(9, 1.0, 0.35, 5), 100);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  const SyntheticBatch c = sample(mix, 100, 1);
  EXPECT_NE(a.inputs, c.inputs);
}

TEST(Sample, SingleRow) {
  const SyntheticBatch s = sample(make_grid(4), 1);
  ASSERT_EQ(s.truth.size(), 1U);
  double total = 0.0;
  for (double v : s.truth[0].values()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Sample, LabelFrequenciesAndClassMeans) {
  const std::size_t k = 9;
  const std::size_t n = 100000;
  const GridMixture mix = make_grid(k, 1.0, 0.35, 42);
  const SyntheticBatch s = sample(mix, n);
  std::vector<double> count(k, 0.0);
  std::vector<Point2> mean(k, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    count[s.labels[i]] += 1.0;
    mean[s.labels[i]][0] += s.inputs[i][0];
    mean[s.labels[i]][1] += s.inputs[i][1];
  }
  const double p = 1.0 / static_cast<double>(k);
  const double freq_bound = 4.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  const double mean_bound = 5.0 * mix.sigma / std::sqrt(static_cast<double>(n) / static_cast<double>(k));
  for (std::size_t c = 0; c < k; ++c) {
    EXPECT_NEAR(count[c] / static_cast<double>(n), p, freq_bound);
    EXPECT_NEAR(mean[c][0] / count[c], mix.centers[c][0], mean_bound);
    EXPECT_NEAR(mean[c][1] / count[c], mix.centers[c][1], mean_bound);
  }
}

TEST(TruePosterior, Symmetry) {
  const GridMixture two = make_grid(2, 1.0);
  const ProbVector mid = true_posterior(two, {0.5, 0.0});
  EXPECT_NEAR(mid[0], 0.5, 1e-15);

  const GridMixture four = make_grid(4, 1.0);
  const ProbVector centre = true_posterior(four, {0.5, 0.5});
  for (double v : centre.values()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(TruePosterior, FarCentersVanish) {
  const GridMixture mix = make_grid(4, 10.0 * 0.35, 0.35);
  const ProbVector p = true_posterior(mix, mix.centers[3]);
  EXPECT_GT(p[3], 1.0 - 1e-10);
}

TEST(TruePosterior, StableForLargeInputs) {
  const GridMixture mix = make_grid(9);
  for (double r : {1e3, 1e5, 1e6, -1e6}) {
    const ProbVector p = true_posterior(mix, {r, -0.5 * r});
    double total = 0.0;
    for (double v : p.values()) {
      EXPECT_TRUE(std::isfinite(v));
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Miscalibrate, Examples) {
  const ProbVector truth{0.8, 0.2};
  const ProbVector same = miscalibrate(truth, 1.0, 0.0, 0);
  EXPECT_NEAR(same[0], 0.8, 1e-12);
  const ProbVector sharp = miscalibrate(truth, 0.5, 0.0, 0);
  EXPECT_NEAR(sharp[0], 0.64 / 0.68, 1e-12);
  const ProbVector half = miscalibrate(ProbVector{0.5, 0.5}, 3.0, 0.0, 0);
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  const ProbVector noisy = miscalibrate(truth, 1.0, 0.5, 9);
  EXPECT_NE(noisy[0], 0.8);
  EXPECT_THROW(miscalibrate(truth, 0.0, 0.0, 0), InvalidParameter);
  EXPECT_THROW(miscalibrate(truth, 1.0, -1.0, 0), InvalidParameter);
}

TEST(SyntheticProperty, TruthIsCumulativeMassCalibrated) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SyntheticBatch s = sample(make_grid(9, 1.0, 0.35, seed), 50000);
    EXPECT_LT(cmce(s.truth_batch(), BinSpec::uniform(25)).value, 0.02) << "seed " << seed;
  }
}

TEST(SyntheticProperty, MiscalibrationRaisesNll) {
  const SyntheticBatch s = sample(make_grid(9, 1.0, 0.35, 3), 50000);
  for (double t0 : {0.5, 2.0}) {
    const std::vector<ProbVector> bad = miscalibrate(s.truth, t0, 0.0, 0);
    std::vector<double> diff(s.labels.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
      diff[i] = -clamped_log(bad[i])[s.labels[i]] + clamped_log(s.truth[i])[s.labels[i]];
      mean += diff[i];
    }
    mean /= static_cast<double>(diff.size());
    double var = 0.0;
    for (double d : diff) var += (d - mean) * (d - mean);
    const double se = std::sqrt(var / static_cast<double>(diff.size() - 1) / static_cast<double>(diff.size()));
    EXPECT_GT(mean, 3.0 * se) << "t0 " << t0;
  }
}

}  // namespace
}  // namespace cmcal
