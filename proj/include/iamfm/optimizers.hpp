#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iamfm/core.hpp"
#include "iamfm/environment.hpp"
#include "iamfm/surrogate.hpp"

namespace iamfm {

// Budget-decaying exploration weight:
//   beta(remaining) = beta_start * (remaining/total)^gamma + beta_min
// so the endpoints are beta_start + beta_min at a full budget and beta_min at
// exhaustion. Presets store quoted ranges endpoint-matched: a schedule quoted
// as "a -> b" becomes beta_start = a - b, beta_min = b.
struct BetaSchedule {
    double beta_start = 6.8;
    double beta_min = 1.7;
    double gamma = 1.0;

    double value(long remaining, long total) const;

    static BetaSchedule medium();               // 8.5 -> 1.7
    static BetaSchedule wide();                 // 15.0 -> 3.0
    static BetaSchedule for_budget(long budget); // wide at >= 32k tokens
};

// Counters proving the feasibility discipline actually ran.
struct BudgetAudit {
    long feasibility_checks = 0;
    long overspend_violations = 0;
    long reserve_violations = 0;
};

struct OptimizerConfig {
    long budget = 0;
    double elimination_rate = 3.0; // eta, SH/ASH
    std::optional<BetaSchedule> beta;
    double reserve_ratio = 0.25; // MFBO strategic reserve fraction
    int final_confirmations = 3; // K max-fidelity pulls guarded by the reserve
    std::uint64_t seed = 0;
    std::optional<WelfareWeights> weights;
    // Restrict the search to these arms (defaults to the full action space).
    std::optional<std::vector<InfluenceConfiguration>> arms;
    bool random_init_design = false; // MFBO: seeded-random design instead of the lattice

    BetaSchedule schedule() const { return beta ? *beta : BetaSchedule::for_budget(budget); }
};

struct RunResult {
    InfluenceConfiguration recommendation;
    std::vector<Observation> history;
    long spent = 0;
    ArmStatistics statistics;
    std::optional<GpModel> surrogate; // MFBO only
    BudgetAudit audit;
};

// Successive halving: uniform intra-stage sampling, top-1/eta elimination per
// fidelity stage, recommendation by max-fidelity empirical mean.
RunResult run_sh(ArmPullEnvironment& env, const OptimizerConfig& cfg);

// Adaptive successive halving: same staging, but intra-stage pulls go to
// argmax mean + beta * std/sqrt(n); unpulled arms rank as +infinity.
RunResult run_ash(ArmPullEnvironment& env, const OptimizerConfig& cfg);

// GP-driven search over (arm, fidelity) with a budget-aware UCB, a strategic
// reserve protecting final max-fidelity confirmations, and posterior-mean
// selection.
RunResult run_mfbo(ArmPullEnvironment& env, const OptimizerConfig& cfg);

// Single-fidelity baselines operating at the top of the ladder.
RunResult run_ucb_baseline(ArmPullEnvironment& env, const OptimizerConfig& cfg);
RunResult run_uniform_baseline(ArmPullEnvironment& env, const OptimizerConfig& cfg);

// Dispatch by name: sh | ash | mfbo | ucb | uniform.
RunResult run_algorithm(const std::string& name, ArmPullEnvironment& env,
                        const OptimizerConfig& cfg);
bool is_known_algorithm(const std::string& name);

// The SH/ASH stage plan: projected survivor counts and token allocations.
struct StagePlan {
    std::vector<std::size_t> survivors; // per stage
    std::vector<long> tokens;           // per stage
    long minimum_feasible = 0;
};
StagePlan plan_stages(const FidelityLadder& ladder, std::size_t arm_count, double eta, long budget);

} // namespace iamfm
