#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "satqa/errors.hpp"
#include "satqa/metrics.hpp"

using namespace satqa;

namespace {

// Reference statistics written independently of the library: quadratic
// rank counting and long double accumulation.
std::vector<long double> naive_ranks(const std::vector<double>& v) {
  std::vector<long double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    long double less = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) less += 1;
      if (w == v[i]) equal += 1;
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

long double naive_pearson(const std::vector<long double>& a, const std::vector<long double>& b) {
  const std::size_t n = a.size();
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

long double naive_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = naive_ranks(a), rb = naive_ranks(b);
  long double d2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const long double n = a.size();
  return 1 - 6 * d2 / (n * (n * n - 1));
}

std::vector<long double> widen(const std::vector<double>& v) { return {v.begin(), v.end()}; }

TEST(Srocc, WorkedCases) {
  EXPECT_DOUBLE_EQ(srocc({1, 2, 3, 4}, {1, 2, 3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(srocc({4, 3, 2, 1}, {1, 2, 3, 4}), -1.0);
  EXPECT_NEAR(srocc({1, 2, 4, 3}, {1, 2, 3, 4}), static_cast<double>(naive_spearman({1, 2, 4, 3}, {1, 2, 3, 4})), 1e-15);
  EXPECT_NEAR(srocc({1, 2, 4, 3}, {1, 2, 3, 4}), 0.8, 1e-15);
}

TEST(Srocc, Errors) {
  EXPECT_THROW(srocc({1, 2}, {1, 2}), InsufficientDataError);
  EXPECT_THROW(srocc({1, 1, 1}, {1, 2, 3}), DomainError);
  EXPECT_THROW(srocc({1, 2, 3}, {1, 2}), ContractError);
}

TEST(Srocc, TiesUseAverageRanks) {
  const std::vector<double> a{1, 2, 2, 3, 5}, b{2, 1, 4, 3, 6};
  EXPECT_EQ(average_ranks(a), (std::vector<double>{1, 2.5, 2.5, 4, 5}));
  EXPECT_NEAR(srocc(a, b), static_cast<double>(naive_pearson(naive_ranks(a), naive_ranks(b))), 1e-12);
}

TEST(Plcc, WorkedCases) {
  const std::vector<double> u{0.3, 1.7, -2.0, 4.4};
  std::vector<double> v;
  for (double x : u) v.push_back(-2 * x + 5);
  EXPECT_NEAR(plcc(u, u), 1.0, 1e-15);
  EXPECT_NEAR(plcc(v, u), -1.0, 1e-15);
  EXPECT_NEAR(plcc({1, 2, 3}, {1, 3, 2}), static_cast<double>(naive_pearson({1, 2, 3}, {1, 3, 2})), 1e-15);
  EXPECT_NEAR(plcc({1, 2, 3}, {1, 3, 2}), 0.5, 1e-15);
  EXPECT_THROW(plcc({2, 2, 2}, {1, 2, 3}), DomainError);
}

TEST(Metrics, InvarianceAndSymmetry) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(20), b(20);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    std::vector<double> cubic, ex, aff, neg;
    for (double x : a) {
      cubic.push_back(x * x * x + x);
      ex.push_back(std::exp(x));
      aff.push_back(3.5 * x + 2);
      neg.push_back(-0.5 * x + 1);
    }
    const double s = srocc(a, b), p = plcc(a, b);
    EXPECT_NEAR(srocc(cubic, b), s, 1e-12);
    EXPECT_NEAR(srocc(ex, b), s, 1e-12);
    EXPECT_NEAR(plcc(aff, b), p, 1e-12);
    EXPECT_NEAR(plcc(neg, b), -p, 1e-12);
    EXPECT_NEAR(srocc(b, a), s, 1e-15);
    EXPECT_NEAR(plcc(b, a), p, 1e-15);
  }
}

TEST(Metrics, ThousandRandomPairsMatchOracle) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(3, 50);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int t = 0; t < 1000; ++t) {
    const int n = len(rng);
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    ASSERT_NEAR(srocc(a, b), static_cast<double>(naive_spearman(a, b)), 1e-9) << "pair " << t;
    ASSERT_NEAR(plcc(a, b), static_cast<double>(naive_pearson(widen(a), widen(b))), 1e-9) << "pair " << t;
  }
}

TEST(Metrics, PerFamilyMarksSmallGroups) {
  const auto m = per_family_metrics({1, 2, 3, 4, 5}, {1, 4, 2, 3, 9}, {"a", "a", "a", "b", "b"});
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("a").n, 3);
  EXPECT_NEAR(*m.at("a").srocc, 0.5, 1e-12);
  EXPECT_EQ(m.at("b").n, 2);
  EXPECT_FALSE(m.at("b").srocc.has_value());
}

TEST(Metrics, AggregateMeanAndStd) {
  MetricReport a, b;
  a.seed = 0;
  a.srocc = 0.8;
  a.plcc = 0.7;
  a.n = 10;
  b.seed = 1;
  b.srocc = 0.6;
  b.plcc = 0.9;
  b.n = 10;
  const auto m = aggregate_reports({a, b});
  EXPECT_FALSE(m.seed.has_value());
  EXPECT_NEAR(m.srocc, 0.7, 1e-12);
  EXPECT_NEAR(m.plcc, 0.8, 1e-12);
  EXPECT_NEAR(*m.srocc_std, 0.1, 1e-12);
  const auto back = MetricReport::from_json(m.to_json());
  EXPECT_EQ(m.to_json(), back.to_json());
  EXPECT_EQ(m.to_json()["seed"], "mean");
}

}  // namespace
