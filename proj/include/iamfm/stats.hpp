#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace iamfm {

double sample_mean(std::span<const double> xs);
// Unbiased (n-1) sample variance.
double sample_variance(std::span<const double> xs);

// Regularized incomplete beta I_x(a, b), evaluated with the continued
// fraction (modified Lentz).
double regularized_incomplete_beta(double a, double b, double x);

// Student-t distribution function and central quantile.
double student_t_cdf(double t, double nu);
double student_t_quantile(double p, double nu);

struct WelchResult {
    double t = 0.0;
    double p_two_sided = 1.0;
    double dof = 0.0;
    double mean_diff = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

// Welch's two-sample t-test with Welch-Satterthwaite degrees of freedom and a
// 95% confidence interval on the mean difference. Raises degenerate_sample
// when either sample has fewer than two points or zero variance.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

// (mean_a - mean_b) / pooled standard deviation.
double cohens_d(std::span<const double> a, std::span<const double> b);

struct BootstrapCi {
    double low = 0.0;
    double high = 0.0;
    int resamples = 0;
};

// Seeded stratified bootstrap percentile CI of the mean difference.
BootstrapCi bootstrap_mean_diff_ci(std::span<const double> a, std::span<const double> b,
                                   int resamples, std::uint64_t seed, double level = 0.95);

} // namespace iamfm
