#include "iamfm/core.hpp"

#include <cmath>
#include <sstream>

namespace iamfm {

std::string InfluenceConfiguration::to_string() const {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < strengths.size(); ++i) {
        if (i > 0) out << ' ';
        out << strengths[i];
    }
    out << ')';
    return out.str();
}

void validate_configuration(const InfluenceConfiguration& arm, int n_agents, int max_strength) {
    if (static_cast<int>(arm.strengths.size()) != n_agents) {
        raise(Errc::shape_mismatch,
              "configuration has " + std::to_string(arm.strengths.size()) +
                  " entries, action space declares " + std::to_string(n_agents));
    }
    for (int s : arm.strengths) {
        if (s < 0 || s > max_strength) {
            raise(Errc::shape_mismatch,
                  "strength " + std::to_string(s) + " outside [0, " +
                      std::to_string(max_strength) + "]");
        }
    }
}

FidelityLadder::FidelityLadder(std::vector<long> costs) : costs_(std::move(costs)) {
    if (costs_.empty()) raise(Errc::bad_config, "fidelity ladder must have at least one level");
    long prev = 0;
    for (long c : costs_) {
        if (c <= prev) raise(Errc::bad_config, "fidelity costs must be positive and strictly increasing");
        prev = c;
    }
}

long FidelityLadder::cost(int fidelity) const {
    if (fidelity < 1 || fidelity > levels()) {
        raise(Errc::invalid_fidelity,
              "fidelity " + std::to_string(fidelity) + " outside [1, " +
                  std::to_string(levels()) + "]");
    }
    return costs_[static_cast<std::size_t>(fidelity - 1)];
}

FidelityLadder FidelityLadder::standard() {
    return FidelityLadder({30, 60, 120, 240});
}

double Valuations::realized() const {
    double sum = user;
    for (double v : per_agent) sum += v;
    return sum;
}

WelfareWeights WelfareWeights::unit(std::size_t n_agents) {
    WelfareWeights w;
    w.agent_weights.assign(n_agents, 1.0);
    w.user_weight = 1.0;
    return w;
}

void ArmStatistics::record(const InfluenceConfiguration& arm, int fidelity, double value) {
    Cell& cell = cells_[{arm.strengths, fidelity}];
    cell.n += 1;
    const double delta = value - cell.mean;
    cell.mean += delta / static_cast<double>(cell.n);
    cell.m2 += delta * (value - cell.mean);

    int& top = highest_[arm.strengths];
    if (fidelity > top) top = fidelity;
    total_ += 1;
}

long ArmStatistics::count(const InfluenceConfiguration& arm, int fidelity) const {
    auto it = cells_.find({arm.strengths, fidelity});
    return it == cells_.end() ? 0 : it->second.n;
}

double ArmStatistics::mean(const InfluenceConfiguration& arm, int fidelity) const {
    auto it = cells_.find({arm.strengths, fidelity});
    return it == cells_.end() ? 0.0 : it->second.mean;
}

double ArmStatistics::stddev(const InfluenceConfiguration& arm, int fidelity) const {
    auto it = cells_.find({arm.strengths, fidelity});
    if (it == cells_.end() || it->second.n < 2) return 0.0;
    return std::sqrt(it->second.m2 / static_cast<double>(it->second.n - 1));
}

int ArmStatistics::highest_fidelity(const InfluenceConfiguration& arm) const {
    auto it = highest_.find(arm.strengths);
    return it == highest_.end() ? 0 : it->second;
}

BudgetState::BudgetState(long total, long reserve) : total_(total), reserve_(reserve) {
    if (total < 0) raise(Errc::bad_config, "budget must be non-negative");
    if (reserve > total) raise(Errc::bad_config, "reserve exceeds total budget");
}

void BudgetState::charge(long cost) {
    if (cost <= 0) raise(Errc::bad_config, "charge must be positive");
    if (cost > remaining()) {
        raise(Errc::budget_too_small,
              "charge of " + std::to_string(cost) + " exceeds remaining " +
                  std::to_string(remaining()));
    }
    spent_ += cost;
}

long cost_of(const FidelityLadder& ladder, int fidelity) {
    return ladder.cost(fidelity);
}

long marginal_cost(const FidelityLadder& ladder, int highest_seen, int fidelity) {
    const long full = ladder.cost(fidelity);
    if (fidelity > highest_seen) {
        const long prev = highest_seen >= 1 ? ladder.cost(highest_seen) : 0;
        return full - prev;
    }
    return full;
}

long marginal_cost(const FidelityLadder& ladder, const ArmStatistics& stats,
                   const InfluenceConfiguration& arm, int fidelity) {
    return marginal_cost(ladder, stats.highest_fidelity(arm), fidelity);
}

double weighted_welfare(const Valuations& v, const WelfareWeights& w) {
    if (v.per_agent.size() != w.agent_weights.size()) {
        raise(Errc::shape_mismatch,
              "valuations cover " + std::to_string(v.per_agent.size()) +
                  " agents, weights cover " + std::to_string(w.agent_weights.size()));
    }
    double sum = w.user_weight * v.user;
    for (std::size_t i = 0; i < v.per_agent.size(); ++i) {
        sum += w.agent_weights[i] * v.per_agent[i];
    }
    return sum;
}

std::vector<InfluenceConfiguration> enumerate_action_space(int n_agents, int max_strength) {
    if (n_agents < 1) raise(Errc::bad_config, "action space needs at least one agent");
    if (max_strength < 0) raise(Errc::bad_config, "max strength must be non-negative");

    std::vector<InfluenceConfiguration> out;
    InfluenceConfiguration current;
    current.strengths.assign(static_cast<std::size_t>(n_agents), 0);
    while (true) {
        out.push_back(current);
        // Odometer increment from the last coordinate keeps lexicographic order.
        int pos = n_agents - 1;
        while (pos >= 0) {
            if (current.strengths[static_cast<std::size_t>(pos)] < max_strength) {
                current.strengths[static_cast<std::size_t>(pos)] += 1;
                break;
            }
            current.strengths[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    return out;
}

} // namespace iamfm
