#include "iamfm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "iamfm/errors.hpp"
#include "iamfm/rng.hpp"

namespace iamfm {

double sample_mean(std::span<const double> xs) {
    if (xs.empty()) raise(Errc::degenerate_sample, "mean of empty sample");
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) raise(Errc::degenerate_sample, "variance needs at least two points");
    const double m = sample_mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return ss / static_cast<double>(xs.size() - 1);
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz iteration).
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

} // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) raise(Errc::bad_config, "beta parameters must be positive");
    if (x < 0.0 || x > 1.0) raise(Errc::bad_config, "beta argument outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;

    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          b * std::log1p(-x) + a * std::log(x)) *
                     beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
    if (nu <= 0.0) raise(Errc::bad_config, "degrees of freedom must be positive");
    if (t == 0.0) return 0.5;
    const double x = nu / (nu + t * t);
    const double half_tail = 0.5 * regularized_incomplete_beta(0.5 * nu, 0.5, x);
    return t > 0.0 ? 1.0 - half_tail : half_tail;
}

double student_t_quantile(double p, double nu) {
    if (p <= 0.0 || p >= 1.0) raise(Errc::bad_config, "quantile level outside (0, 1)");
    if (p == 0.5) return 0.0;
    // Bisection on the CDF; expand the bracket until it straddles p.
    double lo = -1.0, hi = 1.0;
    while (student_t_cdf(lo, nu) > p) lo *= 2.0;
    while (student_t_cdf(hi, nu) < p) hi *= 2.0;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, nu) < p) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo < 1e-13 * std::max(1.0, std::abs(hi))) break;
    }
    return 0.5 * (lo + hi);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        raise(Errc::degenerate_sample, "each sample needs at least two points");
    }
    const double va = sample_variance(a);
    const double vb = sample_variance(b);
    if (va <= 0.0 || vb <= 0.0) {
        raise(Errc::degenerate_sample, "zero-variance sample; Welch statistic undefined");
    }
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;

    WelchResult r;
    r.mean_diff = sample_mean(a) - sample_mean(b);
    r.t = r.mean_diff / std::sqrt(se2);
    r.dof = se2 * se2 /
            (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
    // Two-sided p reduces to a single incomplete-beta evaluation.
    r.p_two_sided = regularized_incomplete_beta(0.5 * r.dof, 0.5, r.dof / (r.dof + r.t * r.t));
    const double tq = student_t_quantile(0.975, r.dof);
    r.ci_low = r.mean_diff - tq * std::sqrt(se2);
    r.ci_high = r.mean_diff + tq * std::sqrt(se2);
    return r;
}

double cohens_d(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        raise(Errc::degenerate_sample, "each sample needs at least two points");
    }
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double pooled =
        ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if (pooled <= 0.0) raise(Errc::degenerate_sample, "zero pooled variance");
    return (sample_mean(a) - sample_mean(b)) / std::sqrt(pooled);
}

BootstrapCi bootstrap_mean_diff_ci(std::span<const double> a, std::span<const double> b,
                                   int resamples, std::uint64_t seed, double level) {
    if (a.empty() || b.empty()) raise(Errc::degenerate_sample, "empty sample");
    Rng rng(seed);
    std::vector<double> diffs;
    diffs.reserve(static_cast<std::size_t>(resamples));
    for (int r = 0; r < resamples; ++r) {
        double ma = 0.0, mb = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) ma += a[rng.below(a.size())];
        for (std::size_t i = 0; i < b.size(); ++i) mb += b[rng.below(b.size())];
        diffs.push_back(ma / static_cast<double>(a.size()) - mb / static_cast<double>(b.size()));
    }
    std::sort(diffs.begin(), diffs.end());
    const double alpha = (1.0 - level) / 2.0;
    const auto pick = [&](double q) {
        const double pos = q * static_cast<double>(diffs.size() - 1);
        const std::size_t i = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i);
        if (i + 1 >= diffs.size()) return diffs.back();
        return diffs[i] * (1.0 - frac) + diffs[i + 1] * frac;
    };
    return {pick(alpha), pick(1.0 - alpha), resamples};
}

} // namespace iamfm
