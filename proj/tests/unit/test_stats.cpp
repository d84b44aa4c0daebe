#include <doctest.h>

#include <cmath>
#include <random>

#include "beamplan/stats.hpp"
#include "oracles.hpp"

using namespace beamplan;

TEST_CASE("one-way ANOVA on a hand-computed example") {
  const auto r = stats::one_way_anova({{1, 2, 3}, {2, 3, 4}, {3, 4, 5}});
  CHECK(r.f == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(r.df_between == 2);
  CHECK(r.df_within == 6);
  CHECK(r.ss_between == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(r.ss_within == doctest::Approx(6.0).epsilon(1e-12));
  // P(F(2,6) > 3) = (1 + 3*2/6)^-3 = 1/8
  CHECK(r.p == doctest::Approx(0.125).epsilon(1e-10));
  CHECK_FALSE(r.flagged);
}

TEST_CASE("ANOVA edge cases") {
  const auto same = stats::one_way_anova({{1, 2, 3}, {1, 2, 3}});
  CHECK(same.f == 0.0);
  CHECK(same.p == 1.0);
  const auto sep = stats::one_way_anova({{1, 1}, {2, 2}});
  CHECK(sep.flagged);
  CHECK(std::isinf(sep.f));
  CHECK(sep.p == 0.0);
  CHECK_THROWS(stats::one_way_anova({{1, 2, 3}}));
  CHECK_THROWS(stats::one_way_anova({{1, 2}, {3}}));
}

TEST_CASE("ANOVA matches the oracle and is affine invariant") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> g(3);
    for (int k = 0; k < 3; ++k)
      for (int i = 0; i < 10 + rep; ++i) g[k].push_back(nd(rng) + 0.3 * k);
    const auto r = stats::one_way_anova(g);
    const auto o = oracle::anova(g);
    CHECK(r.f == doctest::Approx(o.f).epsilon(1e-10));
    CHECK(r.df_within == o.df2);
    auto h = g;
    for (auto& grp : h)
      for (auto& x : grp) x = -250.0 + 37.5 * x;
    CHECK(stats::one_way_anova(h).f == doctest::Approx(r.f).epsilon(1e-9));
  }
}

TEST_CASE("pooled t-test") {
  const std::vector<double> a{1.0, 2.5, 3.0, 4.5, 2.0}, b{3.0, 4.0, 5.5, 6.0};
  const auto r = stats::two_sample_t(a, b);
  CHECK(r.t == doctest::Approx(oracle::pooled_t(a, b)).epsilon(1e-12));
  CHECK(r.df == 7);
  const auto rev = stats::two_sample_t(b, a);
  CHECK(rev.t == -r.t);
  CHECK(rev.p == r.p);
  const auto zero = stats::two_sample_t(a, a);
  CHECK(zero.t == 0.0);
  CHECK(zero.p == doctest::Approx(1.0));
  const std::vector<double> c{1, 1, 1}, d{2, 2, 2};
  const auto inf = stats::two_sample_t(c, d);
  CHECK(inf.flagged);
  CHECK(std::isinf(inf.t));
  CHECK(inf.t < 0);
  CHECK(inf.p == 0.0);
  // t = 1 with 1 df is a Cauchy quartile
  CHECK(stats::t_two_sided_p(1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("incomplete beta against a series oracle") {
  for (double a : {0.5, 1.0, 2.5, 10.0, 43.5})
    for (double b : {0.5, 1.0, 3.0, 29.0})
      for (double x : {0.001, 0.05, 0.2, 0.5, 0.77, 0.95, 0.999}) {
        CAPTURE(a);
        CAPTURE(b);
        CAPTURE(x);
        const double ref = static_cast<double>(oracle::incbeta_series(x, a, b));
        CHECK(std::abs(stats::regularized_incomplete_beta(x, a, b) - ref) <= 1e-10);
      }
  CHECK(stats::regularized_incomplete_beta(0.0, 2, 3) == 0.0);
  CHECK(stats::regularized_incomplete_beta(1.0, 2, 3) == 1.0);
}

TEST_CASE("p-values are monotone probabilities") {
  double prev = 1.0;
  for (double f = 0.0; f < 20.0; f += 0.25) {
    const double p = stats::f_upper_tail(f, 2, 87);
    CHECK(p >= 0.0);
    CHECK(p <= prev);
    prev = p;
  }
  prev = 1.0;
  for (double t = 0.0; t < 10.0; t += 0.25) {
    const double p = stats::t_two_sided_p(t, 58);
    CHECK(p <= prev);
    CHECK(stats::t_two_sided_p(-t, 58) == p);
    prev = p;
  }
}
