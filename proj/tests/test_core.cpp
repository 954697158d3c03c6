#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "iamfm/core.hpp"
#include "iamfm/rng.hpp"

using namespace iamfm;

TEST_CASE("cost_of returns ladder entries and rejects bad levels") {
    const FidelityLadder ladder = FidelityLadder::standard();
    CHECK(cost_of(ladder, 1) == 30);
    CHECK(cost_of(ladder, 2) == 60);
    CHECK(cost_of(ladder, 4) == 240);
    CHECK_THROWS_AS(cost_of(ladder, 0), Error);
    CHECK_THROWS_AS(cost_of(ladder, 5), Error);
}

TEST_CASE("ladder construction enforces positive strictly increasing costs") {
    CHECK_THROWS_AS(FidelityLadder({30, 30}), Error);
    CHECK_THROWS_AS(FidelityLadder({30, 20}), Error);
    CHECK_THROWS_AS(FidelityLadder({0, 10}), Error);
    CHECK_NOTHROW(FidelityLadder({10}));
}

TEST_CASE("marginal cost: upgrades pay the increment, resamples pay full") {
    const FidelityLadder ladder = FidelityLadder::standard();
    ArmStatistics stats;
    const InfluenceConfiguration arm{{1, 2}};

    // Never-evaluated arm: full cost at any level.
    CHECK(marginal_cost(ladder, stats, arm, 3) == 120);

    stats.record(arm, 1, 100.0);
    CHECK(marginal_cost(ladder, stats, arm, 2) == 30); // 60 - 30
    stats.record(arm, 2, 100.0);
    CHECK(marginal_cost(ladder, stats, arm, 2) == 60); // resample
    CHECK(marginal_cost(ladder, stats, arm, 1) == 30); // downward resample
    CHECK(marginal_cost(ladder, stats, arm, 4) == 180); // 240 - 60
}

TEST_CASE("upgrade path 1..F telescopes to the full top cost") {
    const FidelityLadder ladder = FidelityLadder::standard();
    ArmStatistics stats;
    const InfluenceConfiguration arm{{0, 0}};
    long total = 0;
    for (int f = 1; f <= ladder.levels(); ++f) {
        total += marginal_cost(ladder, stats, arm, f);
        stats.record(arm, f, 0.0);
    }
    CHECK(total == ladder.cost(ladder.levels()));
}

TEST_CASE("cost monotonicity") {
    const FidelityLadder ladder = FidelityLadder::standard();
    for (int f = 1; f < ladder.levels(); ++f) {
        CHECK(cost_of(ladder, f) < cost_of(ladder, f + 1));
    }
}

TEST_CASE("weighted welfare examples") {
    Valuations v;
    v.per_agent = {10.0, 5.0};
    v.user = 3.0;

    WelfareWeights unit = WelfareWeights::unit(2);
    CHECK(weighted_welfare(v, unit) == doctest::Approx(18.0));

    WelfareWeights zero;
    zero.agent_weights = {0.0, 0.0};
    zero.user_weight = 0.0;
    CHECK(weighted_welfare(v, zero) == doctest::Approx(0.0));

    Valuations table_row;
    table_row.per_agent = {52.41, 73.56};
    table_row.user = 60.02;
    WelfareWeights policy;
    policy.agent_weights = {1.0, 1.0};
    policy.user_weight = 0.2;
    CHECK(weighted_welfare(table_row, policy) == doctest::Approx(137.974).epsilon(1e-12));

    WelfareWeights wrong;
    wrong.agent_weights = {1.0};
    CHECK_THROWS_AS(weighted_welfare(v, wrong), Error);
}

TEST_CASE("unit weights reproduce realized welfare exactly") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Valuations v;
        const int n = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < n; ++i) v.per_agent.push_back(100.0 * rng.normal());
        v.user = 100.0 * rng.normal();
        CHECK(weighted_welfare(v, WelfareWeights::unit(static_cast<std::size_t>(n))) ==
              doctest::Approx(v.realized()).epsilon(1e-15));
    }
}

TEST_CASE("action space enumeration") {
    CHECK(enumerate_action_space(2, 4).size() == 25);
    CHECK(enumerate_action_space(3, 2).size() == 27);

    const auto singleton = enumerate_action_space(1, 0);
    REQUIRE(singleton.size() == 1);
    CHECK(singleton[0].strengths == std::vector<int>{0});

    // Bijection onto {0..k}^N: right count, no duplicates, all in range.
    const auto arms = enumerate_action_space(3, 3);
    std::set<std::vector<int>> seen;
    for (const auto& arm : arms) {
        REQUIRE(arm.strengths.size() == 3);
        for (int s : arm.strengths) {
            CHECK(s >= 0);
            CHECK(s <= 3);
        }
        seen.insert(arm.strengths);
    }
    CHECK(seen.size() == 64);

    // Lexicographic order.
    for (std::size_t i = 1; i < arms.size(); ++i) {
        CHECK(arms[i - 1].strengths < arms[i].strengths);
    }
}

TEST_CASE("arm statistics match direct recomputation") {
    Rng rng(11);
    ArmStatistics stats;
    const InfluenceConfiguration arm{{2, 3}};
    std::vector<double> values;
    for (int i = 0; i < 200; ++i) {
        const double v = 150.0 + 12.0 * rng.normal();
        values.push_back(v);
        stats.record(arm, 2, v);
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));

    CHECK(stats.count(arm, 2) == 200);
    CHECK(stats.mean(arm, 2) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(stats.stddev(arm, 2) == doctest::Approx(sd).epsilon(1e-12));
    CHECK(stats.highest_fidelity(arm) == 2);
}

TEST_CASE("stddev is zero below two samples") {
    ArmStatistics stats;
    const InfluenceConfiguration arm{{0}};
    CHECK(stats.stddev(arm, 1) == 0.0);
    stats.record(arm, 1, 42.0);
    CHECK(stats.stddev(arm, 1) == 0.0);
    stats.record(arm, 1, 44.0);
    CHECK(stats.stddev(arm, 1) > 0.0);
}

TEST_CASE("budget state enforces its bounds") {
    BudgetState budget(100, 25);
    CHECK(budget.remaining() == 100);
    budget.charge(60);
    CHECK(budget.spent() == 60);
    CHECK(budget.can_afford(40));
    CHECK_FALSE(budget.can_afford(41));
    CHECK_THROWS_AS(budget.charge(41), Error);
    CHECK_THROWS_AS(BudgetState(50, 60), Error);
}

TEST_CASE("configuration validation") {
    CHECK_NOTHROW(validate_configuration(InfluenceConfiguration{{0, 4}}, 2, 4));
    CHECK_THROWS_AS(validate_configuration(InfluenceConfiguration{{0, 5}}, 2, 4), Error);
    CHECK_THROWS_AS(validate_configuration(InfluenceConfiguration{{0}}, 2, 4), Error);
    CHECK_THROWS_AS(validate_configuration(InfluenceConfiguration{{-1, 0}}, 2, 4), Error);
}
