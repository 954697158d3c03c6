#include "iamfm/environment.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace iamfm {

namespace {

// FNV-1a over a canonical byte stream; good enough to catch stale caches.
struct Fnv1a {
    std::uint64_t h = 1469598103934665603ULL;
    void feed(const void* data, std::size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    }
    void feed_double(double x) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &x, sizeof bits);
        feed(&bits, sizeof bits);
    }
    void feed_long(long x) {
        std::int64_t v = x;
        feed(&v, sizeof v);
    }
    void feed_int(int x) {
        std::int32_t v = x;
        feed(&v, sizeof v);
    }
};

} // namespace

void SyntheticWelfareSpec::validate(const FidelityLadder& ladder) const {
    const auto levels = static_cast<std::size_t>(ladder.levels());
    if (n_agents < 1) raise(Errc::bad_config, "spec needs at least one agent");
    if (max_strength < 0) raise(Errc::bad_config, "max strength must be non-negative");
    if (noise_std.size() != levels || bias.size() != levels) {
        raise(Errc::bad_config, "noise/bias schedules must cover every fidelity level");
    }
    double prev = std::numeric_limits<double>::infinity();
    for (double s : noise_std) {
        if (!(s >= 0.0) || s > prev) {
            raise(Errc::bad_config, "noise stds must be non-negative and non-increasing in fidelity");
        }
        prev = s;
    }
    if (bias.back() != 0.0) raise(Errc::bad_config, "max fidelity must be unbiased");
    if (continuation_coupling < 0.0 || continuation_coupling > 1.0) {
        raise(Errc::bad_config, "continuation coupling must lie in [0, 1]");
    }
    const auto arms = enumerate_action_space(n_agents, max_strength);
    if (true_means.size() != arms.size()) {
        raise(Errc::bad_config, "true-mean table must cover the full action space");
    }
    for (const auto& arm : arms) {
        auto it = true_means.find(arm.strengths);
        if (it == true_means.end()) raise(Errc::bad_config, "true-mean table missing arm " + arm.to_string());
        if (static_cast<int>(it->second.per_agent.size()) != n_agents) {
            raise(Errc::bad_config, "true-mean row has wrong agent count at arm " + arm.to_string());
        }
    }
}

std::uint64_t SyntheticWelfareSpec::fingerprint(const FidelityLadder& ladder) const {
    Fnv1a f;
    f.feed_int(n_agents);
    f.feed_int(max_strength);
    for (long c : ladder.costs()) f.feed_long(c);
    for (double s : noise_std) f.feed_double(s);
    for (double b : bias) f.feed_double(b);
    f.feed_double(continuation_coupling);
    for (const auto& [arm, v] : true_means) {
        for (int s : arm) f.feed_int(s);
        for (double x : v.per_agent) f.feed_double(x);
        f.feed_double(v.user);
    }
    return f.h;
}

namespace {

SyntheticWelfareSpec foodcourt_table(std::vector<double> bias) {
    SyntheticWelfareSpec spec;
    spec.n_agents = 2;
    spec.max_strength = 4;
    spec.noise_std = {7.0, 5.8, 5.0, 4.5};
    spec.bias = std::move(bias);
    spec.continuation_coupling = 0.5;
    for (int a = 0; a <= 4; ++a) {
        for (int b = 0; b <= 4; ++b) {
            const double da = a - 2.0;
            const double db = b - 2.0;
            // Single interior peak at (2,2) falling off to a ~154-163 floor;
            // the saturating form keeps the whole table inside [150, 215].
            const double bump = da * da + 0.95 * db * db + 0.5 * da * db;
            const double total =
                153.5 + 26.5 * std::exp(-bump / 5.0) + 0.3 * a + 0.2 * b;
            // Advertiser A saturates at strength 3, advertiser B rises to 4.
            const double va = 40.0 + 6.8 * a - 1.2 * a * a - 0.8 * b - 0.1 * a * b;
            const double vb = 50.0 + 4.6 * b - 0.58 * b * b - 0.7 * a;
            Valuations v;
            v.per_agent = {va, vb};
            v.user = total - va - vb;
            spec.true_means[{a, b}] = v;
        }
    }
    return spec;
}

} // namespace

SyntheticWelfareSpec default_foodcourt_spec() {
    return foodcourt_table({0.0, 0.0, 0.0, 0.0});
}

SyntheticWelfareSpec biased_foodcourt_spec() {
    return foodcourt_table({-6.0, -3.0, -1.0, 0.0});
}

SyntheticWelfareSpec tiny_3x3_spec() {
    SyntheticWelfareSpec spec;
    spec.n_agents = 2;
    spec.max_strength = 2;
    spec.noise_std = {4.0, 3.0, 2.0, 1.5};
    spec.bias = {0.0, 0.0, 0.0, 0.0};
    spec.continuation_coupling = 0.5;
    for (int a = 0; a <= 2; ++a) {
        for (int b = 0; b <= 2; ++b) {
            Valuations v;
            const double v1 = 10.0 + 4.0 * a - a * a - 0.5 * b;
            const double v2 = 8.0 + 3.0 * b - 0.8 * b * b - 0.4 * a;
            const double vu = 20.0 + a + b - 0.7 * a * a - 0.6 * b * b - 0.5 * a * b;
            v.per_agent = {v1, v2};
            v.user = vu;
            spec.true_means[{a, b}] = v;
        }
    }
    return spec;
}

const Valuations& true_valuations(const SyntheticWelfareSpec& spec, const InfluenceConfiguration& arm) {
    auto it = spec.true_means.find(arm.strengths);
    if (it == spec.true_means.end()) {
        raise(Errc::unknown_arm, "no true-mean entry for arm " + arm.to_string());
    }
    return it->second;
}

double true_welfare(const SyntheticWelfareSpec& spec, const InfluenceConfiguration& arm) {
    return true_valuations(spec, arm).realized();
}

InfluenceConfiguration true_argmax(const SyntheticWelfareSpec& spec) {
    const auto arms = enumerate_action_space(spec.n_agents, spec.max_strength);
    const InfluenceConfiguration* best = nullptr;
    double best_w = -std::numeric_limits<double>::infinity();
    for (const auto& arm : arms) {
        const double w = true_welfare(spec, arm);
        if (w > best_w) {
            best_w = w;
            best = &arm;
        }
    }
    return *best;
}

SyntheticEnvironment::SyntheticEnvironment(SyntheticWelfareSpec spec, FidelityLadder ladder,
                                           std::uint64_t seed)
    : spec_(std::move(spec)), ladder_(std::move(ladder)), seed_(seed), rng_(seed) {
    spec_.validate(ladder_);
    cache_.seed = seed;
    cache_.spec_fingerprint = spec_.fingerprint(ladder_);
}

Observation SyntheticEnvironment::sample(const InfluenceConfiguration& arm, int fidelity,
                                         const Observation* parent) {
    validate_configuration(arm, spec_.n_agents, spec_.max_strength);
    const long full_cost = ladder_.cost(fidelity);
    if (parent != nullptr) {
        if (parent->arm != arm) raise(Errc::lineage, "continuation parent has a different arm");
        if (parent->fidelity >= fidelity) {
            raise(Errc::lineage, "continuation parent must have strictly lower fidelity");
        }
    }

    const Valuations& truth = true_valuations(spec_, arm);
    const double sigma = spec_.noise_std[static_cast<std::size_t>(fidelity - 1)];
    const double level_bias = spec_.bias[static_cast<std::size_t>(fidelity - 1)];
    const double rho = spec_.continuation_coupling;
    const double fresh_scale = std::sqrt(std::max(0.0, 1.0 - rho * rho));

    const int parties = spec_.n_agents + 1;
    std::vector<double> eps(static_cast<std::size_t>(parties));
    for (int p = 0; p < parties; ++p) {
        double e = sigma * rng_.normal() * (parent != nullptr ? fresh_scale : 1.0);
        if (parent != nullptr) {
            const double parent_sigma =
                spec_.noise_std[static_cast<std::size_t>(parent->fidelity - 1)];
            const double parent_bias = spec_.bias[static_cast<std::size_t>(parent->fidelity - 1)];
            const double parent_true = p < spec_.n_agents
                                           ? truth.per_agent[static_cast<std::size_t>(p)]
                                           : truth.user;
            const double parent_eps =
                (p < spec_.n_agents ? parent->valuations.per_agent[static_cast<std::size_t>(p)]
                                    : parent->valuations.user) -
                parent_true - parent_bias;
            e += rho * parent_eps * (sigma / parent_sigma);
        }
        eps[static_cast<std::size_t>(p)] = e;
    }

    Observation obs;
    obs.id = next_id_++;
    obs.arm = arm;
    obs.fidelity = fidelity;
    obs.valuations.per_agent.resize(static_cast<std::size_t>(spec_.n_agents));
    for (int i = 0; i < spec_.n_agents; ++i) {
        obs.valuations.per_agent[static_cast<std::size_t>(i)] =
            truth.per_agent[static_cast<std::size_t>(i)] + level_bias + eps[static_cast<std::size_t>(i)];
    }
    obs.valuations.user = truth.user + level_bias + eps[static_cast<std::size_t>(spec_.n_agents)];
    obs.cost_charged = parent != nullptr ? full_cost - ladder_.cost(parent->fidelity) : full_cost;
    if (parent != nullptr) obs.parent_id = parent->id;
    obs.step = step_++;

    cache_.observations.push_back(obs);
    return obs;
}

Observation SyntheticEnvironment::pull(const InfluenceConfiguration& arm, int fidelity) {
    ladder_.cost(fidelity); // validates range
    const int prev = [&] {
        auto it = highest_.find(arm.strengths);
        return it == highest_.end() ? 0 : it->second;
    }();

    const Observation* parent = nullptr;
    if (fidelity > prev && prev >= 1) {
        // First-time upgrade continues the current branch tip.
        parent = &cache_.observations[tips_[arm.strengths][prev]];
    }
    // Resamples (fidelity <= prev) start a fresh branch and pay full cost.

    Observation obs = sample(arm, fidelity, parent);
    tips_[arm.strengths][fidelity] = cache_.observations.size() - 1;
    if (fidelity > prev) highest_[arm.strengths] = fidelity;
    return obs;
}

Valuations ground_truth_valuations(const SyntheticWelfareSpec& spec, const FidelityLadder& ladder,
                                   Rng& rng, const InfluenceConfiguration& arm, int n_draws) {
    if (n_draws < 1) raise(Errc::bad_config, "ground truth evaluation needs at least one draw");
    const Valuations& truth = true_valuations(spec, arm);
    const int top = ladder.levels();
    const double sigma = spec.noise_std[static_cast<std::size_t>(top - 1)];
    const double level_bias = spec.bias[static_cast<std::size_t>(top - 1)];

    Valuations mean;
    mean.per_agent.assign(truth.per_agent.size(), 0.0);
    mean.user = 0.0;
    for (int d = 0; d < n_draws; ++d) {
        for (std::size_t i = 0; i < truth.per_agent.size(); ++i) {
            mean.per_agent[i] += truth.per_agent[i] + level_bias + sigma * rng.normal();
        }
        mean.user += truth.user + level_bias + sigma * rng.normal();
    }
    for (double& v : mean.per_agent) v /= n_draws;
    mean.user /= n_draws;
    return mean;
}

double ground_truth_eval(const SyntheticWelfareSpec& spec, const FidelityLadder& ladder, Rng& rng,
                         const InfluenceConfiguration& arm, int n_draws) {
    return ground_truth_valuations(spec, ladder, rng, arm, n_draws).realized();
}

// --- replay files ---------------------------------------------------------

void replay_save(const ReplayCache& cache, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(Errc::io_failure, "cannot open " + path + " for writing");

    nlohmann::json header;
    header["seed"] = cache.seed;
    header["fingerprint"] = cache.spec_fingerprint;
    out << header.dump() << '\n';
    for (const Observation& obs : cache.observations) {
        nlohmann::json row;
        row["id"] = obs.id;
        row["arm"] = obs.arm.strengths;
        row["fidelity"] = obs.fidelity;
        if (obs.parent_id) {
            row["parent"] = *obs.parent_id;
        } else {
            row["parent"] = nullptr;
        }
        row["agents"] = obs.valuations.per_agent;
        row["user"] = obs.valuations.user;
        row["cost"] = obs.cost_charged;
        row["step"] = obs.step;
        out << row.dump() << '\n';
    }
    if (!out) raise(Errc::io_failure, "write to " + path + " failed");
}

ReplayCache replay_load(const std::string& path, const SyntheticWelfareSpec& spec,
                        const FidelityLadder& ladder) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_failure, "cannot open " + path + " for reading");

    std::string line;
    if (!std::getline(in, line)) raise(Errc::io_failure, "replay file " + path + " is empty");

    ReplayCache cache;
    try {
        nlohmann::json header = nlohmann::json::parse(line);
        cache.seed = header.at("seed").get<std::uint64_t>();
        cache.spec_fingerprint = header.at("fingerprint").get<std::uint64_t>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json row = nlohmann::json::parse(line);
            Observation obs;
            obs.id = row.at("id").get<std::int64_t>();
            obs.arm.strengths = row.at("arm").get<std::vector<int>>();
            obs.fidelity = row.at("fidelity").get<int>();
            if (!row.at("parent").is_null()) obs.parent_id = row.at("parent").get<std::int64_t>();
            obs.valuations.per_agent = row.at("agents").get<std::vector<double>>();
            obs.valuations.user = row.at("user").get<double>();
            obs.cost_charged = row.at("cost").get<long>();
            obs.step = row.at("step").get<std::int64_t>();
            cache.observations.push_back(std::move(obs));
        }
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::io_failure, std::string("malformed replay file: ") + e.what());
    }

    if (cache.spec_fingerprint != spec.fingerprint(ladder)) {
        raise(Errc::stale_cache, "replay file " + path + " was recorded against a different spec");
    }
    return cache;
}

// --- spec (de)serialization ------------------------------------------------

std::string spec_to_json(const SyntheticWelfareSpec& spec, const FidelityLadder& ladder) {
    nlohmann::json j;
    j["n_agents"] = spec.n_agents;
    j["max_strength"] = spec.max_strength;
    j["ladder"] = ladder.costs();
    j["noise_std"] = spec.noise_std;
    j["bias"] = spec.bias;
    j["continuation_coupling"] = spec.continuation_coupling;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [arm, v] : spec.true_means) {
        nlohmann::json row;
        row["arm"] = arm;
        row["agents"] = v.per_agent;
        row["user"] = v.user;
        table.push_back(std::move(row));
    }
    j["table"] = std::move(table);
    return j.dump(2);
}

std::pair<SyntheticWelfareSpec, FidelityLadder> spec_from_json(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        SyntheticWelfareSpec spec;
        spec.n_agents = j.at("n_agents").get<int>();
        spec.max_strength = j.at("max_strength").get<int>();
        FidelityLadder ladder(j.at("ladder").get<std::vector<long>>());
        spec.noise_std = j.at("noise_std").get<std::vector<double>>();
        spec.bias = j.at("bias").get<std::vector<double>>();
        spec.continuation_coupling = j.at("continuation_coupling").get<double>();
        for (const auto& row : j.at("table")) {
            Valuations v;
            v.per_agent = row.at("agents").get<std::vector<double>>();
            v.user = row.at("user").get<double>();
            spec.true_means[row.at("arm").get<std::vector<int>>()] = v;
        }
        spec.validate(ladder);
        return {std::move(spec), std::move(ladder)};
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::bad_config, std::string("malformed spec json: ") + e.what());
    }
}

std::pair<SyntheticWelfareSpec, FidelityLadder> spec_from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_failure, "cannot open spec file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return spec_from_json(buf.str());
}

} // namespace iamfm
