#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iamfm/errors.hpp"

namespace iamfm {

// A bandit arm: one promotional strength level per advertiser, each in [0, k].
struct InfluenceConfiguration {
    std::vector<int> strengths;

    auto operator<=>(const InfluenceConfiguration&) const = default;

    std::size_t agents() const { return strengths.size(); }
    std::string to_string() const;
};

// Validates entries against the declared action space; throws on violation.
void validate_configuration(const InfluenceConfiguration& arm, int n_agents, int max_strength);

// Token costs per fidelity level, 1-indexed: cost(1) < cost(2) < ... < cost(F).
// Single-level ladders are accepted so degenerate single-fidelity setups can
// reuse the same machinery.
class FidelityLadder {
public:
    explicit FidelityLadder(std::vector<long> costs);

    int levels() const { return static_cast<int>(costs_.size()); }
    long cost(int fidelity) const;
    const std::vector<long>& costs() const { return costs_; }

    // The four-level 30/60/120/240 token ladder used by the stock experiments.
    static FidelityLadder standard();

private:
    std::vector<long> costs_;
};

// Per-party welfare readings from one evaluation.
struct Valuations {
    std::vector<double> per_agent;
    double user = 0.0;

    // Realized welfare is exactly the unweighted sum; no hidden rescaling.
    double realized() const;
};

struct WelfareWeights {
    std::vector<double> agent_weights;
    double user_weight = 1.0;

    static WelfareWeights unit(std::size_t n_agents);
};

// One arm-pull record. parent_id links a continuation to the lower-fidelity
// prefix it extends.
struct Observation {
    std::int64_t id = 0;
    InfluenceConfiguration arm;
    int fidelity = 1;
    Valuations valuations;
    long cost_charged = 0;
    std::optional<std::int64_t> parent_id;
    std::int64_t step = 0;
};

// Running statistics per (arm, fidelity) plus the highest fidelity each arm
// has been evaluated at. Means/stds are Welford-accumulated sample statistics.
class ArmStatistics {
public:
    void record(const InfluenceConfiguration& arm, int fidelity, double value);

    long count(const InfluenceConfiguration& arm, int fidelity) const;
    double mean(const InfluenceConfiguration& arm, int fidelity) const;
    // Sample standard deviation; defined as 0 when count < 2.
    double stddev(const InfluenceConfiguration& arm, int fidelity) const;

    // Highest fidelity previously evaluated for this arm; 0 when never pulled.
    int highest_fidelity(const InfluenceConfiguration& arm) const;

    long total_count() const { return total_; }

private:
    struct Cell {
        long n = 0;
        double mean = 0.0;
        double m2 = 0.0;
    };
    std::map<std::pair<std::vector<int>, int>, Cell> cells_;
    std::map<std::vector<int>, int> highest_;
    long total_ = 0;
};

// Token ledger for one optimizer run.
class BudgetState {
public:
    BudgetState(long total, long reserve = 0);

    long total() const { return total_; }
    long spent() const { return spent_; }
    long reserve() const { return reserve_; }
    long remaining() const { return total_ - spent_; }

    bool can_afford(long cost) const { return cost <= remaining(); }
    void charge(long cost);

private:
    long total_;
    long reserve_;
    long spent_ = 0;
};

// --- operations ---------------------------------------------------------

long cost_of(const FidelityLadder& ladder, int fidelity);

// Marginal token cost of evaluating `arm` at `fidelity`:
//   - first-time upgrade (fidelity above anything seen for the arm) pays only
//     the increment cost(f) - cost(f_prev), with cost(f_prev) = 0 for arms
//     never evaluated;
//   - resampling at or below the highest seen fidelity pays the full cost(f).
long marginal_cost(const FidelityLadder& ladder, const ArmStatistics& stats,
                   const InfluenceConfiguration& arm, int fidelity);

// Same rule, keyed directly on the arm's highest previously seen fidelity.
long marginal_cost(const FidelityLadder& ladder, int highest_seen, int fidelity);

double weighted_welfare(const Valuations& v, const WelfareWeights& w);

// All (k+1)^N configurations in lexicographic order.
std::vector<InfluenceConfiguration> enumerate_action_space(int n_agents, int max_strength);

} // namespace iamfm
