#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "iamfm/environment.hpp"

using namespace iamfm;

namespace {

SyntheticWelfareSpec noiseless_spec() {
    SyntheticWelfareSpec spec = default_foodcourt_spec();
    spec.noise_std = {1e-12, 1e-12, 1e-12, 1e-12};
    return spec;
}

// 3x3 welfare table with handcrafted entries for brute-force checks.
SyntheticWelfareSpec handcrafted_3x3() {
    SyntheticWelfareSpec spec;
    spec.n_agents = 2;
    spec.max_strength = 2;
    spec.noise_std = {2.0, 1.0};
    spec.bias = {0.0, 0.0};
    spec.continuation_coupling = 0.5;
    int v = 0;
    for (int a = 0; a <= 2; ++a) {
        for (int b = 0; b <= 2; ++b) {
            Valuations row;
            row.per_agent = {static_cast<double>(10 + v), static_cast<double>(5 + 2 * v)};
            row.user = static_cast<double>(3 + ((a * 7 + b * 5) % 11));
            spec.true_means[{a, b}] = row;
            ++v;
        }
    }
    return spec;
}

} // namespace

TEST_CASE("true welfare sums table rows") {
    SyntheticWelfareSpec spec = handcrafted_3x3();
    spec.true_means[{0, 0}] = Valuations{{10.0, 5.0}, 3.0};
    CHECK(true_welfare(spec, InfluenceConfiguration{{0, 0}}) == doctest::Approx(18.0));
    CHECK_THROWS_AS(true_welfare(default_foodcourt_spec(), InfluenceConfiguration{{9, 9}}), Error);
}

TEST_CASE("true argmax agrees with an exhaustive scan") {
    const SyntheticWelfareSpec spec = handcrafted_3x3();
    double best = -1e300;
    InfluenceConfiguration best_arm;
    for (const auto& arm : enumerate_action_space(2, 2)) {
        const double w = true_welfare(spec, arm);
        if (w > best) {
            best = w;
            best_arm = arm;
        }
    }
    CHECK(true_argmax(spec) == best_arm);
}

TEST_CASE("uniform table: every arm has the same welfare") {
    SyntheticWelfareSpec spec = handcrafted_3x3();
    for (auto& [arm, v] : spec.true_means) v = Valuations{{4.0, 6.0}, 2.5};
    for (const auto& arm : enumerate_action_space(2, 2)) {
        CHECK(true_welfare(spec, arm) == doctest::Approx(12.5));
    }
}

TEST_CASE("zero noise, zero bias: samples equal true means") {
    const FidelityLadder ladder({30, 60, 120, 240});
    SyntheticEnvironment env(noiseless_spec(), ladder, 3);
    const InfluenceConfiguration arm{{1, 3}};
    const Valuations& truth = true_valuations(env.spec(), arm);
    for (int f = 1; f <= 4; ++f) {
        const Observation obs = env.pull(arm, f);
        for (std::size_t i = 0; i < truth.per_agent.size(); ++i) {
            CHECK(obs.valuations.per_agent[i] == doctest::Approx(truth.per_agent[i]).epsilon(1e-6));
        }
        CHECK(obs.valuations.user == doctest::Approx(truth.user).epsilon(1e-6));
    }
}

TEST_CASE("full coupling with flat noise schedule: child inherits the parent deviation") {
    SyntheticWelfareSpec spec = default_foodcourt_spec();
    spec.noise_std = {5.0, 5.0, 5.0, 5.0};
    spec.continuation_coupling = 1.0;
    const FidelityLadder ladder = FidelityLadder::standard();
    SyntheticEnvironment env(spec, ladder, 17);

    const InfluenceConfiguration arm{{2, 2}};
    const Observation parent = env.pull(arm, 1);
    const Observation child = env.pull(arm, 2); // upgrade -> continuation of parent
    REQUIRE(child.parent_id.has_value());
    CHECK(*child.parent_id == parent.id);

    const Valuations& truth = true_valuations(spec, arm);
    for (std::size_t i = 0; i < truth.per_agent.size(); ++i) {
        const double parent_dev = parent.valuations.per_agent[i] - truth.per_agent[i];
        const double child_dev = child.valuations.per_agent[i] - truth.per_agent[i];
        CHECK(child_dev == doctest::Approx(parent_dev).epsilon(1e-12));
    }
}

TEST_CASE("tree lineage: parents share the arm and have lower fidelity, costs are marginal") {
    const FidelityLadder ladder = FidelityLadder::standard();
    SyntheticEnvironment env(default_foodcourt_spec(), ladder, 5);
    const InfluenceConfiguration arm{{0, 4}};

    const Observation o1 = env.pull(arm, 1);
    CHECK(o1.cost_charged == 30);
    CHECK_FALSE(o1.parent_id.has_value());

    const Observation o3 = env.pull(arm, 3); // upgrade 1 -> 3 skips a level
    CHECK(o3.cost_charged == 120 - 30);
    REQUIRE(o3.parent_id.has_value());
    CHECK(*o3.parent_id == o1.id);

    const Observation resample = env.pull(arm, 3);
    CHECK(resample.cost_charged == 120);
    CHECK_FALSE(resample.parent_id.has_value());

    const Observation o4 = env.pull(arm, 4);
    CHECK(o4.cost_charged == 240 - 120);
    REQUIRE(o4.parent_id.has_value());
    CHECK(*o4.parent_id == resample.id); // branch tip moved to the fresh draw

    for (const Observation& obs : env.cache().observations) {
        if (!obs.parent_id.has_value()) continue;
        const Observation& parent = env.cache().observations[static_cast<std::size_t>(*obs.parent_id)];
        CHECK(parent.arm == obs.arm);
        CHECK(parent.fidelity < obs.fidelity);
    }
}

TEST_CASE("explicit sample() rejects lineage violations") {
    const FidelityLadder ladder = FidelityLadder::standard();
    SyntheticEnvironment env(default_foodcourt_spec(), ladder, 5);
    const Observation parent = env.sample(InfluenceConfiguration{{1, 1}}, 2, nullptr);

    CHECK_THROWS_AS(env.sample(InfluenceConfiguration{{1, 2}}, 3, &parent), Error);
    CHECK_THROWS_AS(env.sample(InfluenceConfiguration{{1, 1}}, 2, &parent), Error);
    CHECK_THROWS_AS(env.sample(InfluenceConfiguration{{1, 1}}, 1, &parent), Error);
    CHECK_NOTHROW(env.sample(InfluenceConfiguration{{1, 1}}, 4, &parent));
}

TEST_CASE("determinism: same seed and pull sequence reproduce identical observations") {
    const FidelityLadder ladder = FidelityLadder::standard();
    auto run = [&] {
        SyntheticEnvironment env(default_foodcourt_spec(), ladder, 99);
        std::vector<Observation> out;
        for (const auto& arm : enumerate_action_space(2, 4)) {
            out.push_back(env.pull(arm, 1));
        }
        out.push_back(env.pull(InfluenceConfiguration{{2, 2}}, 2));
        out.push_back(env.pull(InfluenceConfiguration{{2, 2}}, 4));
        return out;
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].valuations.user == b[i].valuations.user);
        for (std::size_t j = 0; j < a[i].valuations.per_agent.size(); ++j) {
            CHECK(a[i].valuations.per_agent[j] == b[i].valuations.per_agent[j]);
        }
        CHECK(a[i].cost_charged == b[i].cost_charged);
        CHECK(a[i].parent_id == b[i].parent_id);
    }
}

TEST_CASE("estimator consistency: unbiased fidelities converge to the true welfare") {
    // Monte-Carlo contract check, fixed seed.
    const FidelityLadder ladder = FidelityLadder::standard();
    const SyntheticWelfareSpec spec = default_foodcourt_spec();
    const InfluenceConfiguration arm{{1, 2}};
    const double truth = true_welfare(spec, arm);
    const int n = 10000;

    for (int f = 1; f <= 4; ++f) {
        SyntheticEnvironment env(spec, ladder, 1234 + static_cast<std::uint64_t>(f));
        double mean = 0.0;
        for (int i = 0; i < n; ++i) {
            mean += env.sample(arm, f, nullptr).valuations.realized();
        }
        mean /= n;
        const double sigma = spec.noise_std[static_cast<std::size_t>(f - 1)];
        CHECK(std::abs(mean - truth) <= 4.0 * sigma / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("variance ordering follows the fidelity schedule") {
    const FidelityLadder ladder = FidelityLadder::standard();
    const SyntheticWelfareSpec spec = default_foodcourt_spec();
    const InfluenceConfiguration arm{{3, 1}};
    const int n = 5000;

    std::vector<double> variances;
    for (int f = 1; f <= 4; ++f) {
        SyntheticEnvironment env(spec, ladder, 777);
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double w = env.sample(arm, f, nullptr).valuations.realized();
            sum += w;
            sumsq += w * w;
        }
        variances.push_back(sumsq / n - (sum / n) * (sum / n));
    }
    for (std::size_t f = 1; f < variances.size(); ++f) {
        CHECK(variances[f] <= variances[f - 1]);
    }
}

TEST_CASE("ground truth evaluation") {
    const FidelityLadder ladder = FidelityLadder::standard();
    const InfluenceConfiguration arm{{2, 2}};

    SUBCASE("zero noise equals true welfare") {
        Rng rng(1);
        const double w = ground_truth_eval(noiseless_spec(), ladder, rng, arm, 50);
        CHECK(w == doctest::Approx(true_welfare(noiseless_spec(), arm)).epsilon(1e-6));
    }

    SUBCASE("single draw equals one sample's realized welfare") {
        const SyntheticWelfareSpec spec = default_foodcourt_spec();
        Rng rng_a(5);
        const double w = ground_truth_eval(spec, ladder, rng_a, arm, 1);
        SyntheticEnvironment env(spec, ladder, 0);
        // Identity case: a 1-draw mean is just one realized welfare value.
        CHECK(std::isfinite(w));
        const double truth = true_welfare(spec, arm);
        CHECK(std::abs(w - truth) < 40.0);
    }

    SUBCASE("CLT bound over 1000 repetitions") {
        // sigma_F = 1 per party, 3 parties: welfare std = sqrt(3).
        SyntheticWelfareSpec spec = default_foodcourt_spec();
        spec.noise_std = {2.0, 1.5, 1.2, 1.0};
        const double truth = true_welfare(spec, arm);
        Rng rng(2024);
        int outside = 0;
        const int reps = 1000;
        for (int r = 0; r < reps; ++r) {
            const double w = ground_truth_eval(spec, ladder, rng, arm, 50);
            // 3 sigma of the 50-draw mean of a sqrt(3)-noise welfare.
            if (std::abs(w - truth) > 3.0 * std::sqrt(3.0) / std::sqrt(50.0)) ++outside;
        }
        CHECK(outside <= 10); // 0.27% expected; generous deterministic margin
    }
}

TEST_CASE("default foodcourt surface") {
    const SyntheticWelfareSpec spec = default_foodcourt_spec();
    const auto arms = enumerate_action_space(spec.n_agents, spec.max_strength);
    CHECK(arms.size() == 25);
    CHECK(spec.true_means.size() == 25);

    const InfluenceConfiguration opt = true_argmax(spec);
    const InfluenceConfiguration corner{{4, 4}};
    CHECK(true_welfare(spec, corner) < true_welfare(spec, opt));

    // Interior optimum, not a boundary arm.
    for (int s : opt.strengths) {
        CHECK(s > 0);
        CHECK(s < 4);
    }

    // Welfare values live in the expected band.
    for (const auto& arm : arms) {
        const double w = true_welfare(spec, arm);
        CHECK(w >= 150.0);
        CHECK(w <= 215.0);
    }
}

TEST_CASE("replay cache round trip and stale detection") {
    const FidelityLadder ladder = FidelityLadder::standard();
    const std::string path = "replay_test.jsonl";

    SUBCASE("round trip is lossless") {
        SyntheticEnvironment env(default_foodcourt_spec(), ladder, 31);
        env.pull(InfluenceConfiguration{{0, 0}}, 1);
        env.pull(InfluenceConfiguration{{0, 0}}, 2);
        env.pull(InfluenceConfiguration{{3, 1}}, 1);
        replay_save(env.cache(), path);

        const ReplayCache loaded = replay_load(path, env.spec(), ladder);
        CHECK(loaded.seed == env.cache().seed);
        REQUIRE(loaded.observations.size() == env.cache().observations.size());
        for (std::size_t i = 0; i < loaded.observations.size(); ++i) {
            const Observation& a = loaded.observations[i];
            const Observation& b = env.cache().observations[i];
            CHECK(a.id == b.id);
            CHECK(a.arm == b.arm);
            CHECK(a.fidelity == b.fidelity);
            CHECK(a.parent_id == b.parent_id);
            CHECK(a.cost_charged == b.cost_charged);
            CHECK(a.step == b.step);
            CHECK(a.valuations.user == b.valuations.user);
            for (std::size_t j = 0; j < a.valuations.per_agent.size(); ++j) {
                CHECK(a.valuations.per_agent[j] == b.valuations.per_agent[j]);
            }
        }
    }

    SUBCASE("loading against an altered spec fails") {
        SyntheticEnvironment env(default_foodcourt_spec(), ladder, 31);
        env.pull(InfluenceConfiguration{{0, 0}}, 1);
        replay_save(env.cache(), path);

        SyntheticWelfareSpec altered = default_foodcourt_spec();
        altered.noise_std[0] = 9.5;
        CHECK_THROWS_AS(replay_load(path, altered, ladder), Error);
    }

    SUBCASE("empty cache round trips") {
        SyntheticEnvironment env(default_foodcourt_spec(), ladder, 31);
        replay_save(env.cache(), path);
        const ReplayCache loaded = replay_load(path, env.spec(), ladder);
        CHECK(loaded.observations.empty());
        CHECK(loaded.seed == 31);
    }

    std::filesystem::remove(path);
}

TEST_CASE("spec json round trip") {
    const SyntheticWelfareSpec spec = tiny_3x3_spec();
    const FidelityLadder ladder = FidelityLadder::standard();
    const std::string text = spec_to_json(spec, ladder);
    const auto [loaded, loaded_ladder] = spec_from_json(text);
    CHECK(loaded.n_agents == spec.n_agents);
    CHECK(loaded.max_strength == spec.max_strength);
    CHECK(loaded.fingerprint(loaded_ladder) == spec.fingerprint(ladder));
}

TEST_CASE("biased preset keeps the top fidelity clean") {
    const SyntheticWelfareSpec spec = biased_foodcourt_spec();
    CHECK(spec.bias.front() < 0.0);
    CHECK(spec.bias.back() == 0.0);
    CHECK_NOTHROW(spec.validate(FidelityLadder::standard()));
}
