#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "iamfm/core.hpp"
#include "iamfm/rng.hpp"

namespace iamfm {

// Ground-truth description of a synthetic multi-fidelity welfare surface.
// Per-party true means are tabulated per arm; fidelity f adds bias[f-1] and
// Gaussian noise with std noise_std[f-1] to every party's reading.
struct SyntheticWelfareSpec {
    int n_agents = 0;
    int max_strength = 0;
    // arm strengths -> (per-agent true means, user true mean)
    std::map<std::vector<int>, Valuations> true_means;
    std::vector<double> noise_std;       // one per fidelity, non-increasing, all > 0
    std::vector<double> bias;            // one per fidelity, bias.back() == 0
    double continuation_coupling = 0.5;  // fraction of parent deviation a child inherits

    void validate(const FidelityLadder& ladder) const;
    std::uint64_t fingerprint(const FidelityLadder& ladder) const;
};

// 2-agent, k=4 surface with an interior optimum and an over-saturation
// penalty at high joint strength; welfare values sit in the ~150-215 band.
SyntheticWelfareSpec default_foodcourt_spec();
// Same surface with pessimistic low-fidelity bias, for robustness tests.
SyntheticWelfareSpec biased_foodcourt_spec();
// Small 2-agent, k=2 (3x3) instance for mechanism audits.
SyntheticWelfareSpec tiny_3x3_spec();

double true_welfare(const SyntheticWelfareSpec& spec, const InfluenceConfiguration& arm);
const Valuations& true_valuations(const SyntheticWelfareSpec& spec, const InfluenceConfiguration& arm);

// Exhaustive scan of the true table.
InfluenceConfiguration true_argmax(const SyntheticWelfareSpec& spec);

// Append-only record of every observation an environment produced.
struct ReplayCache {
    std::uint64_t seed = 0;
    std::uint64_t spec_fingerprint = 0;
    std::vector<Observation> observations;
};

void replay_save(const ReplayCache& cache, const std::string& path);
ReplayCache replay_load(const std::string& path, const SyntheticWelfareSpec& spec,
                        const FidelityLadder& ladder);

// Common arm-pull surface shared by the synthetic simulator and any live
// evaluation backend, so optimizers stay backend-agnostic.
class ArmPullEnvironment {
public:
    virtual ~ArmPullEnvironment() = default;

    virtual int n_agents() const = 0;
    virtual int max_strength() const = 0;
    virtual const FidelityLadder& ladder() const = 0;

    // Evaluate `arm` at `fidelity`, charging the marginal token cost and
    // honoring continuation lineage internally.
    virtual Observation pull(const InfluenceConfiguration& arm, int fidelity) = 0;
};

// Stateful simulator over a SyntheticWelfareSpec. Owns its RNG stream, the
// continuation branch tips, and the replay cache. One instance per run.
class SyntheticEnvironment : public ArmPullEnvironment {
public:
    SyntheticEnvironment(SyntheticWelfareSpec spec, FidelityLadder ladder, std::uint64_t seed);

    int n_agents() const override { return spec_.n_agents; }
    int max_strength() const override { return spec_.max_strength; }
    const FidelityLadder& ladder() const override { return ladder_; }
    const SyntheticWelfareSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }

    Observation pull(const InfluenceConfiguration& arm, int fidelity) override;

    // One draw with explicit lineage; parent must match the arm and have
    // strictly lower fidelity. Does not consult the branch tips.
    Observation sample(const InfluenceConfiguration& arm, int fidelity, const Observation* parent);

    const ReplayCache& cache() const { return cache_; }

private:
    SyntheticWelfareSpec spec_;
    FidelityLadder ladder_;
    std::uint64_t seed_;
    Rng rng_;
    ReplayCache cache_;
    std::int64_t next_id_ = 0;
    std::int64_t step_ = 0;
    // arm -> fidelity -> index into cache_.observations of the branch tip
    std::map<std::vector<int>, std::map<int, std::size_t>> tips_;
    std::map<std::vector<int>, int> highest_;
};

// Mean per-party valuations over n_draws independent max-fidelity draws.
Valuations ground_truth_valuations(const SyntheticWelfareSpec& spec, const FidelityLadder& ladder,
                                   Rng& rng, const InfluenceConfiguration& arm, int n_draws = 50);

// Mean realized welfare over n_draws independent max-fidelity draws.
double ground_truth_eval(const SyntheticWelfareSpec& spec, const FidelityLadder& ladder, Rng& rng,
                         const InfluenceConfiguration& arm, int n_draws = 50);

// JSON (de)serialization of environment specs, used by the CLI --spec flag.
std::string spec_to_json(const SyntheticWelfareSpec& spec, const FidelityLadder& ladder);
std::pair<SyntheticWelfareSpec, FidelityLadder> spec_from_json(const std::string& text);
std::pair<SyntheticWelfareSpec, FidelityLadder> spec_from_file(const std::string& path);

} // namespace iamfm
