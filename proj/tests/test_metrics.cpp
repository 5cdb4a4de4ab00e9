#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "semcal/error.hpp"
#include "semcal/metrics.hpp"

using namespace semcal;

namespace {

std::vector<ScoredExample> ex(std::initializer_list<double> confs, std::initializer_list<int> labels) {
  std::vector<ScoredExample> out;
  auto l = labels.begin();
  int i = 0;
  for (double c : confs) out.push_back({c, *l++ != 0, "p" + std::to_string(i++)});
  return out;
}

std::vector<ScoredExample> random_examples(std::mt19937_64& gen, std::size_t n, bool coarse) {
  std::vector<ScoredExample> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double c = u(gen);
    if (coarse) c = std::round(c * 4) / 4;  // plenty of ties
    const bool y = u(gen) < c;
    out.push_back({c, y, "p" + std::to_string(i)});
  }
  return out;
}

}  // namespace

TEST(Ece, Examples) {
  EXPECT_EQ(ece(ex({0.5, 0.5}, {0, 1}), 1), 0.0);
  EXPECT_NEAR(ece(ex({0.2, 0.4, 0.8, 0.9}, {0, 1, 1, 1}), 2), 0.175, 1e-15);
  EXPECT_EQ(ece(ex({1.0, 1.0}, {1, 1})), 0.0);
  EXPECT_THROW(ece({}), ValidationError);
  EXPECT_THROW(ece(ex({1.5}, {1})), ValidationError);
}

TEST(Ece, SingleBinIsGap) {
  std::mt19937_64 gen(1);
  for (int t = 0; t < 200; ++t) {
    const auto xs = random_examples(gen, 1 + gen() % 30, false);
    double c = 0, a = 0;
    for (const auto& x : xs) c += x.confidence, a += x.correct;
    ASSERT_NEAR(ece(xs, 1), std::abs(c - a) / static_cast<double>(xs.size()), 1e-12);
  }
}

TEST(Ece, RightClosedLastBin) {
  const auto bins = reliability_bins(ex({1.0, 0.95, 0.0}, {1, 1, 0}), 10, BinScheme::equal_width);
  ASSERT_EQ(bins.size(), 10u);
  EXPECT_EQ(bins[9].count, 2u);
  EXPECT_EQ(bins[0].count, 1u);
}

TEST(Ace, Examples) {
  EXPECT_NEAR(ace(ex({0.2, 0.4, 0.8, 0.9}, {0, 1, 1, 1}), 2), 0.175, 1e-15);
  const auto xs = ex({0.3, 0.9, 0.6}, {1, 0, 1});
  EXPECT_NEAR(ace(xs, 3), (0.7 + 0.9 + 0.4) / 3, 1e-15);
  // Identical confidences: the stable order decides the split.
  EXPECT_NEAR(ace(ex({0.5, 0.5, 0.5, 0.5}, {1, 1, 0, 1}), 2), 0.5 * 0.5 + 0.5 * 0.0, 1e-15);
}

TEST(Ace, BinSizesDifferByAtMostOne) {
  std::mt19937_64 gen(2);
  for (std::size_t n = 1; n <= 40; ++n)
    for (std::size_t m = 1; m <= 12; ++m) {
      const auto bins = reliability_bins(random_examples(gen, n, true), m, BinScheme::equal_mass);
      std::size_t lo = n, hi = 0, total = 0;
      for (const auto& b : bins) {
        if (m <= n || b.count > 0) lo = std::min(lo, b.count);
        hi = std::max(hi, b.count);
        total += b.count;
      }
      ASSERT_EQ(total, n);
      if (m <= n) ASSERT_LE(hi - lo, 1u);
    }
}

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(ex({0.9, 0.99}, {0, 1})), 1.0);
  EXPECT_EQ(auroc(ex({0.5, 0.5}, {0, 1})), 0.5);
  EXPECT_EQ(auroc(ex({0.9, 0.2, 0.6}, {0, 1, 0})), 0.0);
  EXPECT_THROW(auroc(ex({0.1, 0.2}, {1, 1})), UndefinedMetric);
}

TEST(Auroc, MatchesPairCounting) {
  std::mt19937_64 gen(3);
  for (int t = 0; t < 500; ++t) {
    auto xs = random_examples(gen, 2 + gen() % 199, t % 2 == 0);
    xs[0].correct = true;
    xs[1].correct = false;
    ASSERT_EQ(auroc(xs), oracle::auroc_pairs(xs));
  }
}

TEST(Brier, Examples) {
  EXPECT_EQ(brier(ex({1.0}, {1})), 0.0);
  const auto half = ex({0.5, 0.5}, {1, 0});
  EXPECT_EQ(brier(half), 0.25);
  const auto d = brier_decomposition(half);
  EXPECT_EQ(d.calibration, 0.0);
  EXPECT_EQ(d.resolution, 0.0);
  EXPECT_EQ(d.uncertainty, 0.25);
  EXPECT_NEAR(brier(ex({0.9, 0.99}, {0, 1})), 0.40505, 1e-15);
}

TEST(Brier, DecompositionIdentity) {
  std::mt19937_64 gen(4);
  for (int t = 0; t < 1000; ++t) {
    const auto xs = random_examples(gen, 1 + gen() % 40, t % 2 == 0);
    const auto d = brier_decomposition(xs);
    ASSERT_NEAR(brier(xs), d.calibration - d.resolution + d.uncertainty, 1e-12);
  }
}

TEST(Pav, Examples) {
  EXPECT_EQ(pav_isotonic(ex({0.3, 0.6}, {1, 0})), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(pav_isotonic(ex({0.1, 0.5, 0.7, 0.9}, {0, 0, 1, 1})), (std::vector<double>{0, 0, 1, 1}));
  EXPECT_EQ(pav_isotonic(ex({0.9, 0.1, 0.5}, {1, 1, 1})), (std::vector<double>{1, 1, 1}));
  // Output follows input order.
  EXPECT_EQ(pav_isotonic(ex({0.6, 0.3}, {0, 1})), (std::vector<double>{0.5, 0.5}));
}

TEST(Pav, MatchesMinMaxOracle) {
  std::mt19937_64 gen(5);
  for (int t = 0; t < 500; ++t) {
    const auto xs = random_examples(gen, 1 + gen() % 12, t % 2 == 0);
    const auto got = pav_isotonic(xs), want = oracle::isotonic_minmax(xs);
    for (std::size_t i = 0; i < xs.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-9);
  }
}

TEST(Pav, Monotone) {
  std::mt19937_64 gen(6);
  for (int t = 0; t < 300; ++t) {
    const auto xs = random_examples(gen, 1 + gen() % 100, t % 2 == 0);
    const auto f = pav_isotonic(xs);
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (std::size_t j = 0; j < xs.size(); ++j)
        if (xs[i].confidence < xs[j].confidence) ASSERT_LE(f[i], f[j] + 1e-15);
  }
}

TEST(Corp, Examples) {
  const auto c = corp(ex({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}));
  EXPECT_EQ(c.recalibrated, (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
  EXPECT_NEAR(c.mcb, 0.0, 1e-15);
  EXPECT_NEAR(c.dsc, 0.0, 1e-15);
  EXPECT_NEAR(c.unc, 0.25, 1e-15);
  const auto s = corp(ex({0.1, 0.2, 0.7, 0.8}, {0, 0, 1, 1}));
  EXPECT_NEAR(s.dsc, s.unc, 1e-15);
  EXPECT_NEAR(s.mcb, s.s_p, 1e-15);
}

TEST(Corp, IdentityAndNonnegativity) {
  std::mt19937_64 gen(7);
  for (int t = 0; t < 1000; ++t) {
    const auto xs = random_examples(gen, 1 + gen() % 30, t % 2 == 0);
    const auto c = corp(xs);
    ASSERT_NEAR(c.s_p, c.mcb - c.dsc + c.unc, 1e-12);
    ASSERT_GE(c.mcb, -1e-12);
    ASSERT_GE(c.dsc, -1e-12);
    ASSERT_EQ(c.unc, c.s_r);
  }
}

TEST(Selective, Examples) {
  const std::vector<double> grid = {0.0, 1.0 / 3};
  const auto curve = selective_accuracy(ex({0.9, 0.8, 0.1}, {1, 1, 0}), grid);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_NEAR(curve[0].accuracy, 2.0 / 3, 1e-15);
  EXPECT_EQ(curve[0].kept, 3u);
  EXPECT_EQ(curve[1].kept, 2u);
  EXPECT_EQ(curve[1].accuracy, 1.0);
  const auto grid10 = default_rejection_grid();
  ASSERT_EQ(grid10.size(), 10u);
  for (const auto& p : selective_accuracy(ex({0.1, 0.4, 0.3}, {1, 1, 1}), grid10)) EXPECT_EQ(p.accuracy, 1.0);
}

TEST(Selective, TiesBrokenByPromptId) {
  std::vector<ScoredExample> xs = {{0.5, false, "b"}, {0.5, true, "a"}};
  const std::vector<double> grid = {0.5};
  EXPECT_EQ(selective_accuracy(xs, grid)[0].accuracy, 1.0);
}

TEST(Pearson, Examples) {
  const std::vector<double> x = {1, 2, 3}, neg = {-1, -2, -3}, y = {1, 2, 4}, flat = {2, 2, 2};
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-15);
  EXPECT_NEAR(pearson(x, y), 0.9820, 1e-4);
  EXPECT_THROW(pearson(x, flat), UndefinedMetric);
}

TEST(AppendixC, Reproductions) {
  const auto calibrated = ex({0.5, 0.5}, {0, 1});
  EXPECT_EQ(ece(calibrated, 1), 0.0);
  EXPECT_EQ(auroc(calibrated), 0.5);
  const auto sharp = ex({0.9, 0.99}, {0, 1});
  EXPECT_EQ(auroc(sharp), 1.0);
  EXPECT_NEAR(ece(sharp, 1), 0.445, 1e-15);
}
