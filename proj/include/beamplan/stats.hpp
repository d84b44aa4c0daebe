#pragma once
// Classical one-way ANOVA and pooled two-sample t-test with p-values from
// the regularized incomplete beta function.

#include <span>
#include <vector>

namespace beamplan::stats {

// I_x(a, b) by Lentz's continued fraction, using the symmetry
// I_x(a, b) = 1 - I_{1-x}(b, a) on the slowly converging side.
double regularized_incomplete_beta(double x, double a, double b);

// P(F > f) for F ~ F(d1, d2).
double f_upper_tail(double f, double d1, double d2);
// P(|T| >= |t|) for T ~ Student t with df degrees of freedom.
double t_two_sided_p(double t, double df);

double mean(std::span<const double> v);
// Sample variance (n - 1 denominator).
double variance(std::span<const double> v);

struct AnovaResult {
  double f = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p = 1.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  bool flagged = false;  // zero within-group variance with separated means: F = inf
};

// Needs >= 2 groups of >= 2 samples. F = 0 whenever the between-group sum of
// squares is 0.
AnovaResult one_way_anova(const std::vector<std::vector<double>>& groups);

struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
  bool flagged = false;  // pooled variance 0 with unequal means: t = +-inf
};

// Equal-variance Student t on a - b with n_a + n_b - 2 degrees of freedom.
TTestResult two_sample_t(std::span<const double> a, std::span<const double> b);

}  // namespace beamplan::stats
