#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "iamfm/harness.hpp"
#include "iamfm/rng.hpp"

using namespace iamfm;

namespace {

// Direct-summation Welch reference, written straight from the textbook
// formulas and independent of the library implementation.
struct WelchOracle {
    double t, dof, se;
};

WelchOracle welch_reference(const std::vector<double>& a, const std::vector<double>& b) {
    auto mean = [](const std::vector<double>& xs) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s / static_cast<double>(xs.size());
    };
    auto var = [&](const std::vector<double>& xs) {
        const double m = mean(xs);
        double s = 0.0;
        for (double x : xs) s += (x - m) * (x - m);
        return s / static_cast<double>(xs.size() - 1);
    };
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double va = var(a), vb = var(b);
    WelchOracle o;
    o.se = std::sqrt(va / na + vb / nb);
    o.t = (mean(a) - mean(b)) / o.se;
    o.dof = std::pow(va / na + vb / nb, 2) /
            (std::pow(va / na, 2) / (na - 1.0) + std::pow(vb / nb, 2) / (nb - 1.0));
    return o;
}

// High-precision Student-t CDF by adaptive Simpson quadrature of the density.
long double t_density(long double x, long double nu) {
    const long double ln =
        std::lgamma((nu + 1.0L) / 2.0L) - std::lgamma(nu / 2.0L) -
        0.5L * std::log(nu * static_cast<long double>(M_PI)) -
        (nu + 1.0L) / 2.0L * std::log1p(x * x / nu);
    return std::exp(ln);
}

long double simpson(long double lo, long double hi, long double nu, int depth) {
    const long double mid = 0.5L * (lo + hi);
    const long double coarse =
        (hi - lo) / 6.0L * (t_density(lo, nu) + 4.0L * t_density(mid, nu) + t_density(hi, nu));
    if (depth >= 22) return coarse;
    const long double left =
        (mid - lo) / 6.0L *
        (t_density(lo, nu) + 4.0L * t_density(0.5L * (lo + mid), nu) + t_density(mid, nu));
    const long double right =
        (hi - mid) / 6.0L *
        (t_density(mid, nu) + 4.0L * t_density(0.5L * (mid + hi), nu) + t_density(hi, nu));
    if (std::abs(left + right - coarse) < 1e-15L) return left + right;
    return simpson(lo, mid, nu, depth + 1) + simpson(mid, hi, nu, depth + 1);
}

double t_cdf_quadrature(double t, double nu) {
    if (t < 0.0) return 1.0 - t_cdf_quadrature(-t, nu);
    return 0.5 + static_cast<double>(simpson(0.0L, static_cast<long double>(t),
                                             static_cast<long double>(nu), 0));
}

ExperimentPlan small_plan() {
    ExperimentPlan plan;
    plan.budgets = {2000, 4000};
    plan.algorithms = {"uniform", "ucb"};
    plan.trials_per_cell = 3;
    plan.base_seed = 7;
    plan.ground_truth_draws = 10;
    return plan;
}

} // namespace

TEST_CASE("student-t cdf: closed forms at nu = 1 and nu = 2") {
    for (double t : {-4.0, -1.3, -0.2, 0.0, 0.4, 1.0, 2.7, 9.0}) {
        const double cauchy = 0.5 + std::atan(t) / M_PI;
        CHECK(student_t_cdf(t, 1.0) == doctest::Approx(cauchy).epsilon(1e-12));
        const double nu2 = 0.5 + t / (2.0 * std::sqrt(2.0 + t * t));
        CHECK(student_t_cdf(t, 2.0) == doctest::Approx(nu2).epsilon(1e-12));
    }
}

TEST_CASE("student-t cdf matches quadrature to 1e-10") {
    for (double nu : {3.0, 5.0, 8.5, 12.0, 19.0, 30.0}) {
        for (double t : {-3.2, -1.1, 0.35, 1.7, 2.9}) {
            CHECK(std::abs(student_t_cdf(t, nu) - t_cdf_quadrature(t, nu)) <= 1e-10);
        }
    }
}

TEST_CASE("student-t quantile inverts the cdf") {
    for (double nu : {2.0, 5.0, 11.0, 27.0}) {
        for (double p : {0.6, 0.9, 0.975, 0.995}) {
            const double q = student_t_quantile(p, nu);
            CHECK(student_t_cdf(q, nu) == doctest::Approx(p).epsilon(1e-10));
        }
    }
}

TEST_CASE("welch test on the worked example") {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    const std::vector<double> b = {3, 4, 5, 6, 7};
    const WelchResult r = welch_t_test(a, b);
    const WelchOracle o = welch_reference(a, b);
    CHECK(r.t == doctest::Approx(o.t).epsilon(1e-10));
    CHECK(r.dof == doctest::Approx(o.dof).epsilon(1e-10));
    CHECK(r.mean_diff == doctest::Approx(-2.0).epsilon(1e-12));
    // CI contains the point estimate.
    CHECK(r.ci_low <= r.mean_diff);
    CHECK(r.mean_diff <= r.ci_high);
    CHECK(r.p_two_sided > 0.0);
    CHECK(r.p_two_sided < 1.0);
}

TEST_CASE("welch matches the direct-summation oracle on random pairs") {
    Rng rng(4001);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a, b;
        const int na = 5 + static_cast<int>(rng.below(20));
        const int nb = 5 + static_cast<int>(rng.below(20));
        for (int i = 0; i < na; ++i) a.push_back(10.0 + 3.0 * rng.normal());
        for (int i = 0; i < nb; ++i) b.push_back(11.0 + 2.0 * rng.normal());
        const WelchResult r = welch_t_test(a, b);
        const WelchOracle o = welch_reference(a, b);
        CHECK(std::abs(r.t - o.t) <= 1e-10 * std::max(1.0, std::abs(o.t)));
        CHECK(std::abs(r.dof - o.dof) <= 1e-10 * std::max(1.0, std::abs(o.dof)));

        // CI from the oracle pieces.
        const double tq = student_t_quantile(0.975, o.dof);
        CHECK(std::abs(r.ci_low - (r.mean_diff - tq * o.se)) <= 1e-10);
        CHECK(std::abs(r.ci_high - (r.mean_diff + tq * o.se)) <= 1e-10);
        CHECK(r.p_two_sided >= 0.0);
        CHECK(r.p_two_sided <= 1.0);
    }
}

TEST_CASE("welch antisymmetry and identical-sample behavior") {
    const std::vector<double> a = {3.0, 4.5, 5.0, 6.5};
    const std::vector<double> b = {2.0, 2.5, 4.0, 4.5, 5.5};
    const WelchResult ab = welch_t_test(a, b);
    const WelchResult ba = welch_t_test(b, a);
    CHECK(ab.t == doctest::Approx(-ba.t).epsilon(1e-12));
    CHECK(ab.p_two_sided == doctest::Approx(ba.p_two_sided).epsilon(1e-12));

    const WelchResult same = welch_t_test(a, a);
    CHECK(same.t == doctest::Approx(0.0));
    CHECK(same.p_two_sided == doctest::Approx(1.0));
    CHECK(same.ci_low <= 0.0);
    CHECK(same.ci_high >= 0.0);
}

TEST_CASE("welch degenerate samples raise") {
    const std::vector<double> constant = {2.0, 2.0, 2.0};
    const std::vector<double> ok = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(welch_t_test(constant, ok), Error);
    CHECK_THROWS_AS(welch_t_test(ok, constant), Error);
    CHECK_THROWS_AS(welch_t_test(std::vector<double>{1.0}, ok), Error);
}

TEST_CASE("cohens d: definitional cases and oracle") {
    const std::vector<double> a = {1.0, 2.0, 3.0};
    CHECK(cohens_d(a, a) == doctest::Approx(0.0));

    // Mean shift of exactly one pooled std.
    const std::vector<double> base = {10.0, 12.0, 14.0, 16.0};
    std::vector<double> shifted = base;
    double m = 0.0;
    for (double x : base) m += x;
    m /= 4.0;
    double v = 0.0;
    for (double x : base) v += (x - m) * (x - m);
    v /= 3.0;
    const double sd = std::sqrt(v);
    for (double& x : shifted) x += sd;
    CHECK(cohens_d(shifted, base) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(4002);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> xs, ys;
        for (int i = 0; i < 12; ++i) xs.push_back(rng.normal());
        for (int i = 0; i < 9; ++i) ys.push_back(0.5 + rng.normal());
        auto mean = [](const std::vector<double>& zs) {
            double s = 0.0;
            for (double z : zs) s += z;
            return s / static_cast<double>(zs.size());
        };
        auto varf = [&](const std::vector<double>& zs) {
            const double mm = mean(zs);
            double s = 0.0;
            for (double z : zs) s += (z - mm) * (z - mm);
            return s / static_cast<double>(zs.size() - 1);
        };
        const double pooled = std::sqrt((11.0 * varf(xs) + 8.0 * varf(ys)) / 19.0);
        CHECK(cohens_d(xs, ys) ==
              doctest::Approx((mean(xs) - mean(ys)) / pooled).epsilon(1e-12));
    }

    const std::vector<double> flat = {5.0, 5.0, 5.0};
    CHECK_THROWS_AS(cohens_d(flat, flat), Error);
}

TEST_CASE("experiment runner: zero-noise runs hit the optimum everywhere") {
    ExperimentPlan plan = small_plan();
    plan.spec.noise_std = {1e-9, 1e-9, 1e-9, 1e-9};
    plan.algorithms = {"uniform", "sh"};
    plan.budgets = {8000};
    plan.trials_per_cell = 2;
    const ExperimentResults results = run_experiment(plan);
    const InfluenceConfiguration best = true_argmax(plan.spec);
    REQUIRE(results.cells.size() == 4);
    for (const auto& c : results.cells) {
        REQUIRE(c.ok);
        CHECK(c.recommendation == best);
        CHECK(c.welfare == doctest::Approx(true_welfare(plan.spec, best)).epsilon(1e-6));
        CHECK(c.spent <= c.budget);
    }
}

TEST_CASE("experiment runner: single-trial plans emit means only") {
    ExperimentPlan plan = small_plan();
    plan.trials_per_cell = 1;
    const ExperimentResults results = run_experiment(plan);
    const StatSummary summary = summarize(results);
    CHECK_FALSE(summary.cells.empty());
    CHECK(summary.pairwise.empty());
}

TEST_CASE("experiment runner: duplicate algorithm entries give identical cells") {
    ExperimentPlan plan = small_plan();
    plan.algorithms = {"uniform", "uniform"};
    plan.budgets = {2000};
    const ExperimentResults results = run_experiment(plan);
    REQUIRE(results.cells.size() == 6);
    for (int trial = 0; trial < 3; ++trial) {
        const CellResult& a = results.cells[static_cast<std::size_t>(trial)];
        const CellResult& b = results.cells[static_cast<std::size_t>(3 + trial)];
        CHECK(a.welfare == b.welfare);
        CHECK(a.spent == b.spent);
        CHECK(a.recommendation == b.recommendation);
    }
}

TEST_CASE("csv round trip reproduces the table") {
    const ExperimentResults results = run_experiment(small_plan());
    const std::string csv = render_csv(results);
    const auto parsed = parse_csv(csv);
    REQUIRE(parsed.size() == results.cells.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].algorithm == results.cells[i].algorithm);
        CHECK(parsed[i].budget == results.cells[i].budget);
        CHECK(parsed[i].trial == results.cells[i].trial);
        CHECK(parsed[i].seed == results.cells[i].seed);
        CHECK(parsed[i].welfare == results.cells[i].welfare); // %.17g round-trips exactly
        CHECK(parsed[i].spent == results.cells[i].spent);
        CHECK(parsed[i].recommendation == results.cells[i].recommendation);
    }
}

TEST_CASE("emit_report rejects empty results and honors the regime boundary") {
    ExperimentResults empty;
    empty.plan = small_plan();
    CHECK_THROWS_AS(emit_report(empty, ReportFormat::csv, "unused.csv"), Error);

    ExperimentPlan plan = small_plan();
    plan.budgets = {16000, 32000};
    plan.algorithms = {"uniform", "ucb"};
    plan.trials_per_cell = 2;
    plan.ground_truth_draws = 5;
    const ExperimentResults results = run_experiment(plan);
    const std::string path = "report_test.md";
    emit_report(results, ReportFormat::markdown, path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    // 16k lands in the low regime, 32k in the high regime.
    CHECK(text.find("<= 16000") != std::string::npos);
    CHECK(text.find(">= 32000") != std::string::npos);
    std::filesystem::remove(path);
}

TEST_CASE("full-plan determinism: identical plans produce byte-identical csv") {
    const ExperimentResults a = run_experiment(small_plan());
    const ExperimentResults b = run_experiment(small_plan());
    CHECK(render_csv(a) == render_csv(b));
}

TEST_CASE("parallel execution matches serial output exactly") {
    ExperimentPlan serial = small_plan();
    ExperimentPlan parallel = small_plan();
    parallel.jobs = 4;
    const std::string a = render_csv(run_experiment(serial));
    const std::string b = render_csv(run_experiment(parallel));
    CHECK(a == b);
}

TEST_CASE("plan json parsing and validation errors") {
    const std::string good = R"({"budgets": [1000, 2000], "algorithms": ["uniform"],
                                 "trials_per_cell": 2, "base_seed": 5})";
    const ExperimentPlan plan = ExperimentPlan::from_json(good);
    CHECK(plan.budgets.size() == 2);
    CHECK(plan.base_seed == 5);

    CHECK_THROWS_AS(ExperimentPlan::from_json("{\"algorithms\": [\"nope\"]}"), Error);
    CHECK_THROWS_AS(ExperimentPlan::from_json("not json"), Error);
}

TEST_CASE("bootstrap ci brackets the observed mean difference") {
    Rng rng(4003);
    std::vector<double> a, b;
    for (int i = 0; i < 30; ++i) a.push_back(5.0 + rng.normal());
    for (int i = 0; i < 30; ++i) b.push_back(3.0 + rng.normal());
    const BootstrapCi ci = bootstrap_mean_diff_ci(a, b, 2000, 9);
    CHECK(ci.low < ci.high);
    CHECK(ci.low > 0.0); // clear separation
    // Deterministic under the same seed.
    const BootstrapCi again = bootstrap_mean_diff_ci(a, b, 2000, 9);
    CHECK(ci.low == again.low);
    CHECK(ci.high == again.high);
}
