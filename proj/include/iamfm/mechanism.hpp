#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "iamfm/core.hpp"
#include "iamfm/environment.hpp"
#include "iamfm/optimizers.hpp"

namespace iamfm {

// Payments and derived audit quantities for one winning configuration.
//
// Payment rule: p_i = W_cf[i] - (sum of the other agents' valuations at the
// winner + the user's valuation). Including the user in the "others" sum is
// what makes the per-agent utility identity U_i = winner_welfare - W_cf[i]
// exact; the total-payment identity then carries an explicit user term:
//   total_payments = sum_i W_cf[i] - (n-1) * winner_welfare - user_valuation.
struct PaymentResult {
    InfluenceConfiguration winner;
    std::vector<double> payments;
    std::vector<double> counterfactual_optima;
    std::vector<double> utilities; // U_i = winner_welfare - counterfactual_optima[i]
    double total_payments = 0.0;
    double winner_welfare = 0.0; // all agents + user at the winner
    double user_valuation = 0.0;
};

PaymentResult vcg_payments(const InfluenceConfiguration& winner, const Valuations& winner_valuations,
                           const std::vector<double>& counterfactual_optima);

// Verifies the two exact payment identities to `tol`; throws on violation.
void check_payment_identities(const PaymentResult& result, double tol = 1e-9);

// Exhaustive slice optimum of the full true welfare over {s : s_i = 0}.
// This is the oracle all counterfactual estimators are measured against.
double counterfactual_exact(const SyntheticWelfareSpec& truth, int agent_index);

// Clarke pivot from a table: max over the slice of (other agents + user),
// which by construction never reads agent i's own values.
double clarke_pivot(const SyntheticWelfareSpec& truth, int agent_index);

// --- warm-started counterfactual estimation -----------------------------------

// Counterfactual welfare estimate for `agent_index` by restricting the main
// run's GP posterior to the s_i = 0 slice; optionally refines with a UCB loop
// charged against `extra_budget`. With a zero budget this is a pure
// warm-start readout. Refinement pulls advance `env`'s branch state, so
// searches for different agents must each get their own environment (they
// are independent by design and may run concurrently that way).
double aco_mfbo(const RunResult& main_run, ArmPullEnvironment& env, int agent_index,
                long extra_budget, const OptimizerConfig& cfg);

// Counterfactual estimate by filtering the main run's history to the slice,
// seeding a fresh tournament with it, and (optionally) continuing the
// tournament with `extra_budget`. Returns the winning arm's final empirical
// mean. Raises no_estimate when nothing is known and no budget is granted.
double aco_ash(const RunResult& main_run, ArmPullEnvironment& env, int agent_index,
               long extra_budget, const OptimizerConfig& cfg);

// --- incentive audits ----------------------------------------------------------

// Per-agent reported per-arm values. The user's values always come from the
// truth spec; only advertisers bid.
using BidTable = std::vector<std::map<std::vector<int>, double>>;

BidTable truthful_bids(const SyntheticWelfareSpec& truth);

// Selection rule over a reported-welfare table.
using Selector = std::function<InfluenceConfiguration(
    const std::vector<InfluenceConfiguration>& arms,
    const std::function<double(const InfluenceConfiguration&)>& reported_welfare)>;

Selector exhaustive_selector();
// Deliberately suboptimal: picks the runner-up of the reported welfare. Its
// epsilon equals the true gap between the best and second-best arm.
Selector second_best_selector();

struct MechanismOutcome {
    InfluenceConfiguration winner;
    PaymentResult payments;
};

// Runs selection + Clarke payments on a reported table.
MechanismOutcome run_reported_mechanism(const SyntheticWelfareSpec& truth, const BidTable& bids,
                                        const Selector& selector);

struct MisreportProbe {
    int agent = 0;
    std::string kind;
    double true_utility_gain = 0.0;
};

struct IncentiveAuditReport {
    double epsilon = 0.0;             // max_s W(s) - W(s*_truthful)
    double max_misreport_gain = 0.0;
    double min_agent_utility = 0.0;
    double required_subsidy = 0.0;    // max(0, -total_payments)
    double subsidy_slack = 0.0;       // total payments: how far the mechanism is from needing a subsidy
    std::vector<std::string> bound_violations;
    std::vector<MisreportProbe> probes;
    MechanismOutcome truthful;
};

// Measures epsilon against the true table, sweeps every agent through the
// misreport grid (multiplicative distortions 0/0.5/0.8/1.25/2 plus one
// targeted swap-the-argmax bid per arm), and checks:
//   - misreport gain <= epsilon + tol                      (bounded misreport)
//   - U_i >= -epsilon - tol when W_cf[i] <= W(s*) + eps     (individual rationality)
//   - sum p >= W(s*) - n*eps - V_U(s*) - tol when
//     W_cf[i] >= W(s*) - eps for all i                      (no-subsidy, user-corrected)
// Violations are reported, never thrown.
IncentiveAuditReport audit_incentives(const SyntheticWelfareSpec& truth, const Selector& selector,
                                      double tol = 1e-9);

std::string format_audit_report(const IncentiveAuditReport& report);

} // namespace iamfm
