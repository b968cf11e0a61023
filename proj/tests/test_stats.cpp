#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "decisionbench/stats.hpp"

using namespace decisionbench;

// ---------------------------------------------------------------------------
// Spearman

TEST(Spearman, PerfectAgreementAndReversal) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{10, 20, 30, 40, 50}, down{5, 4, 3, 2, 1};
  EXPECT_NEAR(*spearman(x, up), 1.0, 1e-15);
  EXPECT_NEAR(*spearman(x, down), -1.0, 1e-15);
}

TEST(Spearman, TiesUseAverageRanks) {
  const std::vector<double> x{1, 2, 2, 3, 4}, y{1, 3, 2, 4, 5};
  EXPECT_EQ(average_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4, 5}));
  // Pearson of ranks (1,2.5,2.5,4,5) vs (1,3,2,4,5): sxy = 9.5, sxx = 9.5, syy = 10.
  EXPECT_NEAR(*spearman(x, y), 9.5 / std::sqrt(9.5 * 10.0), 1e-14);
}

TEST(Spearman, ConstantInputIsUndefined) {
  const std::vector<double> x{1, 1, 1}, y{1, 2, 3};
  EXPECT_FALSE(spearman(x, y));
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Spearman, PropertyMonotoneTransformInvariant) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(20), y(20), fx(20);
    for (int i = 0; i < 20; ++i) {
      x[i] = nd(gen);
      y[i] = x[i] + nd(gen);
      fx[i] = std::exp(3 * x[i]) + 7;
    }
    const double r = *spearman(x, y);
    EXPECT_NEAR(*spearman(fx, y), r, 1e-12);
    EXPECT_NEAR(*spearman(y, x), r, 1e-12);
    EXPECT_LE(std::abs(r), 1.0 + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Paired bootstrap

namespace {

std::vector<ValuePair> shifted_pairs(std::size_t n, double sd, double shift, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<ValuePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = 0.5 + nd(gen);
    out.emplace_back(b, b + shift + nd(gen));
  }
  return out;
}

}  // namespace

TEST(Bootstrap, ZeroDifferencesGiveDegenerateInterval) {
  std::vector<ValuePair> pairs(50, {0.3, 0.3});
  const auto r = paired_bootstrap_mean_diff(pairs, {.n_boot = 500, .seed = 1});
  EXPECT_EQ(r.estimate, 0.0);
  EXPECT_EQ(r.ci_low, 0.0);
  EXPECT_EQ(r.ci_high, 0.0);
}

TEST(Bootstrap, ConstantShiftGivesPointInterval) {
  std::vector<ValuePair> pairs;
  for (int i = 0; i < 40; ++i) pairs.emplace_back(i * 0.25, i * 0.25 + 0.5);
  const auto r = paired_bootstrap_mean_diff(pairs, {.n_boot = 500, .seed = 2});
  EXPECT_DOUBLE_EQ(r.estimate, 0.5);
  EXPECT_NEAR(r.ci_low, 0.5, 1e-12);
  EXPECT_NEAR(r.ci_high, 0.5, 1e-12);
}

TEST(Bootstrap, BasicIntervalReflectsPercentiles) {
  // Independent oracle: rebuild the replicates with the documented substreams.
  const std::vector<ValuePair> input{{0, 1}, {0, 0}, {0, 3}, {0, 0.5}, {0, 2}};
  auto pairs = input;
  std::sort(pairs.begin(), pairs.end());
  BootstrapConfig cfg{.n_boot = 200, .seed = 9};
  std::vector<double> reps;
  for (std::size_t i = 0; i < cfg.n_boot; ++i) {
    Rng rng(substream_seed(cfg.seed, i));
    double s = 0;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      const auto& p = pairs[rng.below(pairs.size())];
      s += p.second - p.first;
    }
    reps.push_back(s / 5.0);
  }
  std::sort(reps.begin(), reps.end());
  const double est = 1.3;
  const auto r = paired_bootstrap_mean_diff(input, cfg);
  EXPECT_DOUBLE_EQ(r.estimate, est);
  EXPECT_NEAR(r.ci_low, 2 * est - numeric::quantile_sorted(reps, 0.975), 1e-12);
  EXPECT_NEAR(r.ci_high, 2 * est - numeric::quantile_sorted(reps, 0.025), 1e-12);
}

TEST(Bootstrap, OrderAndThreadInvariant) {
  auto pairs = shifted_pairs(120, 0.3, 0.1, 5);
  const auto a = paired_bootstrap_mean_diff(pairs, {.n_boot = 1000, .seed = 11, .threads = 1});
  std::reverse(pairs.begin(), pairs.end());
  const auto b = paired_bootstrap_mean_diff(pairs, {.n_boot = 1000, .seed = 11, .threads = 4});
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.ci_low, b.ci_low);
  EXPECT_EQ(a.ci_high, b.ci_high);
  const auto c = paired_bootstrap_mean_diff(pairs, {.n_boot = 1000, .seed = 12});
  EXPECT_NE(a.ci_low, c.ci_low);
}

TEST(Bootstrap, PropertyIntervalBracketsEstimate) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto pairs = shifted_pairs(60, 0.2, 0.05, 100 + s);
    const auto r = paired_bootstrap_mean_diff(pairs, {.n_boot = 400, .seed = s});
    EXPECT_NEAR(r.estimate, mean_difference(pairs), 1e-12);
    EXPECT_LE(r.ci_low, r.estimate);
    EXPECT_GE(r.ci_high, r.estimate);
  }
}

TEST(Bootstrap, RejectsBadConfig) {
  std::vector<ValuePair> pairs{{0, 1}};
  EXPECT_THROW(paired_bootstrap_mean_diff(pairs, {.n_boot = 99}), std::invalid_argument);
  EXPECT_THROW(paired_bootstrap_mean_diff(pairs, {.alpha = 0.0}), std::invalid_argument);
  EXPECT_THROW(paired_bootstrap_mean_diff(std::vector<ValuePair>{}, {}), std::invalid_argument);
}

TEST(Bootstrap, HypervolumeDifference) {
  std::vector<AgentPointPair> agents;
  for (int i = 0; i < 6; ++i) {
    ParetoPoint b{0.3 + 0.05 * i, 0.05 + 0.01 * i, std::nullopt, "a" + std::to_string(i)};
    ParetoPoint t = b;
    t.cost += 0.02;  // same quality, higher cost
    agents.push_back({b, t});
  }
  const auto r = paired_bootstrap_hv_diff(agents, 0.2, {.n_boot = 300, .seed = 4});
  std::vector<ParetoPoint> base, treat;
  for (const auto& a : agents) {
    base.push_back(a.baseline);
    treat.push_back(a.treatment);
  }
  EXPECT_NEAR(r.estimate, hypervolume_2d(treat, 0.2) - hypervolume_2d(base, 0.2), 1e-15);
  EXPECT_LT(r.estimate, 0.0);
  EXPECT_LE(r.ci_low, r.ci_high);
}

// ---------------------------------------------------------------------------
// Random-intercept model

namespace {

std::vector<MixedRow> one_way_rows(std::size_t groups, std::size_t per_group, double s2u, double s2e,
                                   std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> u(0, std::sqrt(s2u)), e(0, std::sqrt(s2e));
  std::vector<MixedRow> rows;
  for (std::size_t g = 0; g < groups; ++g) {
    const double b = u(gen);
    for (std::size_t i = 0; i < per_group; ++i) rows.push_back({0.5 + b + e(gen), Condition::blind, "g" + std::to_string(g)});
  }
  return rows;
}

}  // namespace

TEST(MixedModel, BalancedOneWayMatchesClosedForm) {
  const std::size_t g = 12, m = 30;
  const auto rows = one_way_rows(g, m, 0.04, 0.15, 77);
  std::vector<double> means(g, 0.0);
  double grand = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    means[i / m] += rows[i].q / m;
    grand += rows[i].q / static_cast<double>(rows.size());
  }
  double ssw = 0, ssb = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) ssw += std::pow(rows[i].q - means[i / m], 2);
  for (double mu : means) ssb += m * std::pow(mu - grand, 2);
  const double s2e = ssw / static_cast<double>(g * (m - 1));
  const double s2u = (ssb / g - s2e) / m;
  ASSERT_GT(s2u, 0.0);

  const auto fit = fit_random_intercept(rows);
  EXPECT_NEAR(fit.sigma2_e, s2e, 1e-6);
  EXPECT_NEAR(fit.sigma2_u, s2u, 1e-6);
  EXPECT_NEAR(fit.intercept, grand, 1e-9);
  EXPECT_NEAR(fit.icc, fit.sigma2_u / (fit.sigma2_u + fit.sigma2_e), 1e-15);
  EXPECT_EQ(fit.n_groups, g);
  EXPECT_EQ(fit.n_obs, g * m);
}

TEST(MixedModel, NoGroupVarianceReducesToOls) {
  // Every group holds the same values per condition, so group means coincide.
  const std::vector<double> blind{0.1, 0.6, 0.35}, aware{0.4, 0.9, 0.2, 0.75};
  std::vector<MixedRow> rows;
  for (int g = 0; g < 5; ++g) {
    for (double q : blind) rows.push_back({q, Condition::blind, "g" + std::to_string(g)});
    for (double q : aware) rows.push_back({q, Condition::aware_c2, "g" + std::to_string(g)});
  }
  const double mb = (0.1 + 0.6 + 0.35) / 3, ma = (0.4 + 0.9 + 0.2 + 0.75) / 4;
  double rss = 0;
  for (const auto& r : rows) rss += std::pow(r.q - (r.condition == Condition::blind ? mb : ma), 2);
  const double n = static_cast<double>(rows.size());

  const auto fit = fit_random_intercept(rows);
  EXPECT_LT(fit.sigma2_u, 1e-6);
  EXPECT_NEAR(fit.intercept, mb, 1e-6);
  EXPECT_NEAR(fit.beta.at(Condition::aware_c2), ma - mb, 1e-6);
  EXPECT_NEAR(fit.sigma2_e, rss / n, 1e-6);
  EXPECT_NEAR(fit.loglik, -0.5 * n * (std::log(2 * std::numbers::pi) + 1 + std::log(rss / n)), 1e-6);
}

TEST(MixedModel, IccArithmetic) {
  MixedFitResult r;
  r.sigma2_u = 0.039;
  r.sigma2_e = 0.146;
  EXPECT_EQ(fmt::format("{:.3f}", r.sigma2_u / (r.sigma2_u + r.sigma2_e)), "0.211");
}

TEST(MixedModel, LoglikTraceMonotoneAndAboveOls) {
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  std::vector<MixedRow> rows;
  for (int g = 0; g < 8; ++g) {
    const double u = 0.3 * nd(gen);
    const int n = 5 + g * 3;  // unbalanced
    for (int i = 0; i < n; ++i) {
      const auto c = kAllConditions[static_cast<std::size_t>(i) % kAllConditions.size()];
      rows.push_back({u + 0.05 * static_cast<double>(i % 5) + 0.4 * nd(gen), c, "g" + std::to_string(g)});
    }
  }
  const auto fit = fit_random_intercept(rows);
  ASSERT_FALSE(fit.loglik_trace.empty());
  for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) EXPECT_GE(fit.loglik_trace[i], fit.loglik_trace[i - 1]);
  EXPECT_EQ(fit.terms.size(), 4u);
  EXPECT_GE(fit.sigma2_u, 0.0);
  EXPECT_GT(fit.sigma2_e, 0.0);
  for (auto c : fit.terms) EXPECT_GT(fit.se.at(c), 0.0);
}

TEST(MixedModel, ErrorsAndNonConvergence) {
  std::vector<MixedRow> one_group{{0.1, Condition::blind, "g"}, {0.2, Condition::blind, "g"}};
  EXPECT_THROW(fit_random_intercept(one_group), std::invalid_argument);
  std::vector<MixedRow> no_blind{{0.1, Condition::aware_c1, "a"}, {0.2, Condition::aware_c1, "b"}};
  EXPECT_THROW(fit_random_intercept(no_blind), std::invalid_argument);
  const auto rows = one_way_rows(4, 5, 0.04, 0.15, 1);
  try {
    fit_random_intercept(rows, {.max_iter = 3});
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.iterations, 3);
    EXPECT_TRUE(std::isfinite(e.last_loglik));
  }
}

TEST(MixedModel, FormattedTableHasFixedRows) {
  const auto fit = fit_random_intercept(one_way_rows(4, 10, 0.04, 0.15, 2));
  const auto text = format_mixed_fit(fit);
  EXPECT_NE(text.find("group variance"), std::string::npos);
  EXPECT_NE(text.find("icc"), std::string::npos);
  EXPECT_EQ(text, format_mixed_fit(fit));
}

// ---------------------------------------------------------------------------
// Wald contrast

TEST(Wald, IdenticalCoefficients) {
  const auto w = wald_contrast(0.02, 0.01, 0.02, 0.01);
  EXPECT_EQ(w.delta_beta, 0.0);
  EXPECT_EQ(w.z, 0.0);
  EXPECT_EQ(w.p, 1.0);
}

TEST(Wald, PairwiseFixture) {
  const auto w = wald_contrast(-0.010, 0.008, 0.001, 0.008);
  EXPECT_NEAR(w.delta_beta, -0.011, 1e-15);
  // cov = half of the mean variance, so Var(diff) = SE^2.
  EXPECT_NEAR(w.se, 0.008, 1e-15);
  EXPECT_NEAR(w.p, 0.18, 0.02);
  EXPECT_NEAR(w.p, std::erfc(0.011 / 0.008 / std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(wald_contrast(-0.010, 0.008, 0.001, 0.008, 0.0).se, 0.008 * std::sqrt(2.0), 1e-15);
}

TEST(Wald, PropertyAntisymmetric) {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(-0.05, 0.05), s(0.001, 0.02);
  for (int i = 0; i < 100; ++i) {
    const double a = u(gen), b = u(gen), sa = s(gen), sb = s(gen);
    const auto ab = wald_contrast(a, sa, b, sb), ba = wald_contrast(b, sb, a, sa);
    EXPECT_NEAR(ab.delta_beta, -ba.delta_beta, 1e-15);
    EXPECT_NEAR(ab.z, -ba.z, 1e-12);
    EXPECT_NEAR(ab.p, ba.p, 1e-12);
    EXPECT_GE(ab.p, 0.0);
    EXPECT_LE(ab.p, 1.0);
  }
}

TEST(Wald, FromFit) {
  std::vector<MixedRow> rows;
  std::mt19937_64 gen(8);
  std::normal_distribution<double> nd(0, 0.3);
  for (int g = 0; g < 6; ++g)
    for (int i = 0; i < 40; ++i)
      rows.push_back({nd(gen), kAllConditions[static_cast<std::size_t>(i) % 3], "g" + std::to_string(g)});
  const auto fit = fit_random_intercept(rows);
  const auto w = wald_contrast(fit, Condition::aware_c1, Condition::aware_c2);
  EXPECT_NEAR(w.delta_beta, fit.beta.at(Condition::aware_c1) - fit.beta.at(Condition::aware_c2), 1e-15);
  EXPECT_EQ(wald_contrast(fit, Condition::aware_c1, Condition::aware_c1).p, 1.0);
  EXPECT_THROW(wald_contrast(fit, Condition::aware_c1, Condition::aware_c3), std::invalid_argument);
  const auto f = wald_contrast(fit, Condition::aware_c1, Condition::aware_c2, ContrastCovariance::fitted);
  EXPECT_GT(f.se, 0.0);
}

// ---------------------------------------------------------------------------
// Quadratic fit

TEST(QuadFit, ParabolaVertex) {
  std::vector<std::pair<double, double>> pts;
  for (double x : {0.0, 0.25, 0.5, 0.75, 1.0}) pts.emplace_back(x, -(x - 0.5) * (x - 0.5));
  const auto f = quad_fit(pts);
  EXPECT_NEAR(f.c2, -1.0, 1e-12);
  EXPECT_NEAR(*f.vertex_x, 0.5, 1e-12);
  EXPECT_NEAR(*f.vertex_y, 0.0, 1e-12);
  EXPECT_TRUE(f.concave);
}

TEST(QuadFit, LineIsNotConcave) {
  std::vector<std::pair<double, double>> pts{{1, 3}, {2, 5}, {3, 7}, {4, 9}};
  const auto f = quad_fit(pts);
  EXPECT_EQ(f.c2, 0.0);
  EXPECT_FALSE(f.concave);
  EXPECT_FALSE(f.vertex_x);
  EXPECT_NEAR(f.c1, 2.0, 1e-12);
  EXPECT_NEAR(f.c0, 1.0, 1e-12);
  EXPECT_THROW(quad_fit(std::vector<std::pair<double, double>>{{1, 1}, {1, 2}, {2, 3}}), std::invalid_argument);
}
