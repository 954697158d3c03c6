#include "iamfm/mechanism.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace iamfm {

PaymentResult vcg_payments(const InfluenceConfiguration& winner, const Valuations& winner_valuations,
                           const std::vector<double>& counterfactual_optima) {
    const std::size_t n = winner_valuations.per_agent.size();
    if (counterfactual_optima.size() != n) {
        raise(Errc::shape_mismatch, "need one counterfactual optimum per agent");
    }

    PaymentResult out;
    out.winner = winner;
    out.counterfactual_optima = counterfactual_optima;
    out.winner_welfare = winner_valuations.realized();
    out.user_valuation = winner_valuations.user;
    out.payments.resize(n);
    out.utilities.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double others = out.winner_welfare - winner_valuations.per_agent[i];
        out.payments[i] = counterfactual_optima[i] - others;
        out.utilities[i] = winner_valuations.per_agent[i] - out.payments[i];
        out.total_payments += out.payments[i];
    }
    return out;
}

void check_payment_identities(const PaymentResult& r, double tol) {
    const double n = static_cast<double>(r.payments.size());
    double cf_sum = 0.0;
    for (double c : r.counterfactual_optima) cf_sum += c;
    const double expect_total = cf_sum - (n - 1.0) * r.winner_welfare - r.user_valuation;
    if (std::abs(r.total_payments - expect_total) > tol) {
        raise(Errc::shape_mismatch, "total-payment identity violated by " +
                                       std::to_string(std::abs(r.total_payments - expect_total)));
    }
    for (std::size_t i = 0; i < r.payments.size(); ++i) {
        const double expect_u = r.winner_welfare - r.counterfactual_optima[i];
        if (std::abs(r.utilities[i] - expect_u) > tol) {
            raise(Errc::shape_mismatch, "utility identity violated for agent " + std::to_string(i));
        }
    }
}

double counterfactual_exact(const SyntheticWelfareSpec& truth, int agent_index) {
    if (agent_index < 0 || agent_index >= truth.n_agents) {
        raise(Errc::bad_config, "agent index outside action space");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [arm, v] : truth.true_means) {
        if (arm[static_cast<std::size_t>(agent_index)] != 0) continue;
        best = std::max(best, v.realized());
    }
    return best;
}

double clarke_pivot(const SyntheticWelfareSpec& truth, int agent_index) {
    if (agent_index < 0 || agent_index >= truth.n_agents) {
        raise(Errc::bad_config, "agent index outside action space");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& [arm, v] : truth.true_means) {
        if (arm[static_cast<std::size_t>(agent_index)] != 0) continue;
        best = std::max(best, v.realized() - v.per_agent[static_cast<std::size_t>(agent_index)]);
    }
    return best;
}

// --- ACO -----------------------------------------------------------------------

namespace {

std::vector<InfluenceConfiguration> slice_arms(int n_agents, int k, int agent_index) {
    std::vector<InfluenceConfiguration> out;
    for (auto& arm : enumerate_action_space(n_agents, k)) {
        if (arm.strengths[static_cast<std::size_t>(agent_index)] == 0) out.push_back(std::move(arm));
    }
    return out;
}

} // namespace

double aco_mfbo(const RunResult& main_run, ArmPullEnvironment& env, int agent_index,
                long extra_budget, const OptimizerConfig& cfg) {
    if (!main_run.surrogate || !main_run.surrogate->fitted()) {
        raise(Errc::missing_surrogate, "main run carries no fitted surrogate");
    }
    if (agent_index < 0 || agent_index >= env.n_agents()) {
        raise(Errc::bad_config, "agent index outside action space");
    }

    const FidelityLadder& ladder = env.ladder();
    const int levels = ladder.levels();
    const auto arms = slice_arms(env.n_agents(), env.max_strength(), agent_index);
    const WelfareWeights weights =
        cfg.weights ? *cfg.weights : WelfareWeights::unit(static_cast<std::size_t>(env.n_agents()));

    GpModel model = *main_run.surrogate; // global prior transfer
    SubspaceView view = model.restrict_to_subspace(agent_index);

    if (extra_budget > 0) {
        // Targeted refinement: the main-phase acquisition, restricted to the
        // slice, charged against the counterfactual budget.
        BudgetState ledger(extra_budget);
        ArmStatistics stats = main_run.statistics;
        const BetaSchedule schedule = cfg.beta ? *cfg.beta : BetaSchedule::for_budget(extra_budget);
        long adds = 0;
        while (true) {
            const double beta = schedule.value(ledger.remaining(), ledger.total());
            const double sqrt_beta = std::sqrt(beta);
            const InfluenceConfiguration* pick = nullptr;
            int pick_f = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& arm : arms) {
                for (int f = 1; f <= levels; ++f) {
                    const long cost = marginal_cost(ladder, stats, arm, f);
                    if (cost > ledger.remaining()) continue;
                    const auto [mu, var] = model.posterior_at(arm, f);
                    const double score = mu + sqrt_beta * std::sqrt(var);
                    if (pick == nullptr || score > best) {
                        pick = &arm;
                        pick_f = f;
                        best = score;
                    }
                }
            }
            if (pick == nullptr) break;
            Observation obs = env.pull(*pick, pick_f);
            ledger.charge(obs.cost_charged);
            stats.record(*pick, pick_f, weighted_welfare(obs.valuations, weights));
            model.add({*pick, pick_f, weighted_welfare(obs.valuations, weights)});
            ++adds;
            if (adds % 5 == 0) {
                model.refit();
            } else {
                model.update_factorization();
            }
        }
        if (adds > 0) model.refit();
        view = model.restrict_to_subspace(agent_index);
    }

    // Denoised estimate: best posterior mean at max fidelity over the slice.
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& arm : arms) {
        best = std::max(best, view.posterior_at(arm, levels).first);
    }
    return best;
}

double aco_ash(const RunResult& main_run, ArmPullEnvironment& env, int agent_index,
               long extra_budget, const OptimizerConfig& cfg) {
    if (agent_index < 0 || agent_index >= env.n_agents()) {
        raise(Errc::bad_config, "agent index outside action space");
    }
    const FidelityLadder& ladder = env.ladder();
    const int levels = ladder.levels();
    const auto arms = slice_arms(env.n_agents(), env.max_strength(), agent_index);
    const WelfareWeights weights =
        cfg.weights ? *cfg.weights : WelfareWeights::unit(static_cast<std::size_t>(env.n_agents()));

    // History filtering: seed the tournament with every slice observation
    // from the main phase.
    ArmStatistics stats;
    long seeded = 0;
    for (const Observation& obs : main_run.history) {
        if (obs.arm.strengths[static_cast<std::size_t>(agent_index)] != 0) continue;
        stats.record(obs.arm, obs.fidelity, weighted_welfare(obs.valuations, weights));
        ++seeded;
    }
    if (seeded == 0 && extra_budget <= 0) {
        raise(Errc::no_estimate, "no slice history and no counterfactual budget");
    }

    std::vector<InfluenceConfiguration> survivors = arms;
    if (extra_budget > 0) {
        // Warm-started tournament: the usual staged UCB loop, continuing from
        // the seeded statistics.
        StagePlan plan = plan_stages(ladder, arms.size(), cfg.elimination_rate, extra_budget);
        BudgetState ledger(extra_budget);
        const BetaSchedule schedule = cfg.beta ? *cfg.beta : BetaSchedule::for_budget(extra_budget);
        long carry = 0;
        for (int f = 1; f <= levels; ++f) {
            const long stage_tokens = plan.tokens[static_cast<std::size_t>(f - 1)] + carry;
            long stage_spent = 0;
            while (true) {
                // Same intra-stage rule as the main tournament: below two
                // pulls an arm ranks +infinity, fewest-pulls-first.
                const InfluenceConfiguration* pick = nullptr;
                double best = -std::numeric_limits<double>::infinity();
                long forced_n = 2;
                for (const auto& arm : survivors) {
                    const long n = stats.count(arm, f);
                    if (n < 2) {
                        if (n < forced_n) {
                            pick = &arm;
                            forced_n = n;
                        }
                        continue;
                    }
                    if (forced_n < 2) continue;
                    const double beta = schedule.value(ledger.remaining(), ledger.total());
                    const double score = stats.mean(arm, f) +
                                         beta * stats.stddev(arm, f) / std::sqrt(static_cast<double>(n));
                    if (pick == nullptr || score > best) {
                        pick = &arm;
                        best = score;
                    }
                }
                if (pick == nullptr) break;
                const long cost = marginal_cost(ladder, stats, *pick, f);
                if (stage_spent + cost > stage_tokens || !ledger.can_afford(cost)) break;
                Observation obs = env.pull(*pick, f);
                ledger.charge(obs.cost_charged);
                stage_spent += obs.cost_charged;
                stats.record(*pick, f, weighted_welfare(obs.valuations, weights));
            }
            carry = stage_tokens - stage_spent;
            if (f < levels && survivors.size() > 1) {
                std::vector<std::size_t> order(survivors.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                    const double ma = stats.mean(survivors[a], f);
                    const double mb = stats.mean(survivors[b], f);
                    if (ma != mb) return ma > mb;
                    return survivors[a].strengths < survivors[b].strengths;
                });
                const std::size_t keep = static_cast<std::size_t>(
                    std::ceil(static_cast<double>(survivors.size()) / cfg.elimination_rate));
                std::vector<InfluenceConfiguration> next;
                for (std::size_t i = 0; i < keep; ++i) next.push_back(survivors[order[i]]);
                std::sort(next.begin(), next.end(),
                          [](const auto& a, const auto& b) { return a.strengths < b.strengths; });
                survivors = std::move(next);
            }
        }
    }

    // Empirical estimation: the winner's final mean, read at the highest
    // fidelity it has data for.
    const InfluenceConfiguration* winner = nullptr;
    double winner_mean = -std::numeric_limits<double>::infinity();
    for (const auto& arm : survivors) {
        const int top = stats.highest_fidelity(arm);
        if (top == 0) continue;
        const double m = stats.mean(arm, top);
        if (winner == nullptr || m > winner_mean) {
            winner = &arm;
            winner_mean = m;
        }
    }
    if (winner == nullptr) {
        // Tournament never touched the finalists; fall back to anything seeded.
        for (const auto& arm : arms) {
            const int top = stats.highest_fidelity(arm);
            if (top == 0) continue;
            const double m = stats.mean(arm, top);
            if (winner == nullptr || m > winner_mean) {
                winner = &arm;
                winner_mean = m;
            }
        }
    }
    if (winner == nullptr) raise(Errc::no_estimate, "counterfactual tournament produced no data");
    return winner_mean;
}

// --- incentive audits ------------------------------------------------------------

BidTable truthful_bids(const SyntheticWelfareSpec& truth) {
    BidTable bids(static_cast<std::size_t>(truth.n_agents));
    for (const auto& [arm, v] : truth.true_means) {
        for (int i = 0; i < truth.n_agents; ++i) {
            bids[static_cast<std::size_t>(i)][arm] = v.per_agent[static_cast<std::size_t>(i)];
        }
    }
    return bids;
}

Selector exhaustive_selector() {
    return [](const std::vector<InfluenceConfiguration>& arms,
              const std::function<double(const InfluenceConfiguration&)>& welfare) {
        const InfluenceConfiguration* best = nullptr;
        double best_w = -std::numeric_limits<double>::infinity();
        for (const auto& arm : arms) {
            const double w = welfare(arm);
            if (best == nullptr || w > best_w) {
                best = &arm;
                best_w = w;
            }
        }
        return *best;
    };
}

Selector second_best_selector() {
    return [](const std::vector<InfluenceConfiguration>& arms,
              const std::function<double(const InfluenceConfiguration&)>& welfare) {
        if (arms.size() < 2) return arms.front();
        const InfluenceConfiguration* best = nullptr;
        const InfluenceConfiguration* second = nullptr;
        double best_w = -std::numeric_limits<double>::infinity();
        double second_w = -std::numeric_limits<double>::infinity();
        for (const auto& arm : arms) {
            const double w = welfare(arm);
            if (best == nullptr || w > best_w) {
                second = best;
                second_w = best_w;
                best = &arm;
                best_w = w;
            } else if (second == nullptr || w > second_w) {
                second = &arm;
                second_w = w;
            }
        }
        return *second;
    };
}

MechanismOutcome run_reported_mechanism(const SyntheticWelfareSpec& truth, const BidTable& bids,
                                        const Selector& selector) {
    if (static_cast<int>(bids.size()) != truth.n_agents) {
        raise(Errc::shape_mismatch, "bid table does not cover every agent");
    }
    const auto arms = enumerate_action_space(truth.n_agents, truth.max_strength);

    auto reported = [&](const InfluenceConfiguration& arm) {
        double sum = true_valuations(truth, arm).user;
        for (const auto& agent_bids : bids) sum += agent_bids.at(arm.strengths);
        return sum;
    };

    MechanismOutcome out;
    out.winner = selector(arms, reported);

    // Clarke pivots from the reports; agent i's own bid never enters h_i.
    const std::size_t n = bids.size();
    std::vector<double> pivots(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& arm : arms) {
            if (arm.strengths[i] != 0) continue;
            double sum = true_valuations(truth, arm).user;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                sum += bids[j].at(arm.strengths);
            }
            best = std::max(best, sum);
        }
        pivots[i] = best;
    }

    Valuations reported_at_winner;
    reported_at_winner.user = true_valuations(truth, out.winner).user;
    reported_at_winner.per_agent.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        reported_at_winner.per_agent[i] = bids[i].at(out.winner.strengths);
    }
    out.payments = vcg_payments(out.winner, reported_at_winner, pivots);
    return out;
}

IncentiveAuditReport audit_incentives(const SyntheticWelfareSpec& truth, const Selector& selector,
                                      double tol) {
    IncentiveAuditReport report;
    const auto arms = enumerate_action_space(truth.n_agents, truth.max_strength);
    const std::size_t n = static_cast<std::size_t>(truth.n_agents);

    const BidTable truth_bids = truthful_bids(truth);
    report.truthful = run_reported_mechanism(truth, truth_bids, selector);

    double w_max = -std::numeric_limits<double>::infinity();
    double w_min = std::numeric_limits<double>::infinity();
    for (const auto& arm : arms) {
        const double w = true_welfare(truth, arm);
        w_max = std::max(w_max, w);
        w_min = std::min(w_min, w);
    }
    const double w_star = true_welfare(truth, report.truthful.winner);
    report.epsilon = w_max - w_star;

    // True utilities under truthful reporting.
    auto true_utility = [&](const MechanismOutcome& outcome, std::size_t agent) {
        const Valuations& v = true_valuations(truth, outcome.winner);
        return v.per_agent[agent] - outcome.payments.payments[agent];
    };

    report.min_agent_utility = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        report.min_agent_utility = std::min(report.min_agent_utility, true_utility(report.truthful, i));
    }
    report.subsidy_slack = report.truthful.payments.total_payments;
    report.required_subsidy = std::max(0.0, -report.truthful.payments.total_payments);

    // Misreport sweep: multiplicative distortions plus targeted swap bids.
    const double distortions[] = {0.0, 0.5, 0.8, 1.25, 2.0};
    const double swap_bonus = 2.0 * (w_max - w_min) + 10.0;

    report.max_misreport_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double truthful_u = true_utility(report.truthful, i);

        auto probe = [&](BidTable bids, std::string kind) {
            MechanismOutcome outcome = run_reported_mechanism(truth, bids, selector);
            const double gain = true_utility(outcome, i) - truthful_u;
            report.probes.push_back({static_cast<int>(i), kind, gain});
            report.max_misreport_gain = std::max(report.max_misreport_gain, gain);
            if (gain > report.epsilon + tol) {
                report.bound_violations.push_back(
                    "misreport-gain: agent " + std::to_string(i) + " kind " + kind + " gain " +
                    std::to_string(gain) + " exceeds epsilon " + std::to_string(report.epsilon));
            }
        };

        for (double factor : distortions) {
            BidTable bids = truth_bids;
            for (auto& [arm, value] : bids[i]) value *= factor;
            probe(std::move(bids), "scale" + std::to_string(factor));
        }
        for (const auto& arm : arms) {
            BidTable bids = truth_bids;
            bids[i][arm.strengths] += swap_bonus;
            probe(std::move(bids), "swap" + arm.to_string());
        }
    }

    // Individual rationality, premise-gated per agent.
    for (std::size_t i = 0; i < n; ++i) {
        const double cf = report.truthful.payments.counterfactual_optima[i];
        if (cf <= w_star + report.epsilon) {
            const double u = true_utility(report.truthful, i);
            if (u < -report.epsilon - tol) {
                report.bound_violations.push_back("individual-rationality: agent " +
                                                  std::to_string(i) + " utility " +
                                                  std::to_string(u));
            }
        }
    }

    // No-subsidy, premise-gated; the bound carries the user term that the
    // user-inclusive payment rule introduces.
    bool premise = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (report.truthful.payments.counterfactual_optima[i] < w_star - report.epsilon) {
            premise = false;
            break;
        }
    }
    if (premise) {
        const double floor = w_star - static_cast<double>(n) * report.epsilon -
                             report.truthful.payments.user_valuation;
        if (report.truthful.payments.total_payments < floor - tol) {
            report.bound_violations.push_back(
                "no-subsidy: total payments " +
                std::to_string(report.truthful.payments.total_payments) + " below floor " +
                std::to_string(floor));
        }
    }

    return report;
}

std::string format_audit_report(const IncentiveAuditReport& report) {
    std::ostringstream out;
    out << "winner: " << report.truthful.winner.to_string() << '\n';
    out << "epsilon: " << report.epsilon << '\n';
    out << "max misreport gain: " << report.max_misreport_gain << " over "
        << report.probes.size() << " probes\n";
    out << "min agent utility: " << report.min_agent_utility << '\n';
    out << "total payments: " << report.truthful.payments.total_payments << '\n';
    out << "required subsidy: " << report.required_subsidy << '\n';
    if (report.bound_violations.empty()) {
        out << "violations: none\n";
    } else {
        out << "violations:\n";
        for (const auto& v : report.bound_violations) out << "  - " << v << '\n';
    }
    return out.str();
}

} // namespace iamfm
