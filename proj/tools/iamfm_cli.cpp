#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "iamfm/environment.hpp"
#include "iamfm/harness.hpp"
#include "iamfm/mechanism.hpp"
#include "iamfm/optimizers.hpp"
#include "iamfm/stats.hpp"

namespace {

using namespace iamfm;

WelfareWeights parse_weights(const std::string& csv, int n_agents) {
    WelfareWeights w;
    std::stringstream ss(csv);
    std::string part;
    std::vector<double> values;
    while (std::getline(ss, part, ',')) {
        try {
            values.push_back(std::stod(part));
        } catch (const std::exception&) {
            raise(Errc::bad_config, "--weights entry '" + part + "' is not a number");
        }
    }
    if (static_cast<int>(values.size()) != n_agents + 1) {
        raise(Errc::bad_config, "--weights needs " + std::to_string(n_agents) +
                                    " agent weights plus one user weight");
    }
    w.agent_weights.assign(values.begin(), values.end() - 1);
    w.user_weight = values.back();
    return w;
}

std::pair<SyntheticWelfareSpec, FidelityLadder> load_spec(const std::string& path) {
    if (path.empty()) return {default_foodcourt_spec(), FidelityLadder::standard()};
    return spec_from_file(path);
}

int cmd_optimize(const std::string& algo, long budget, std::uint64_t seed,
                 const std::string& spec_path, const std::string& weights_csv) {
    auto [spec, ladder] = load_spec(spec_path);
    SyntheticEnvironment env(spec, ladder, seed);

    OptimizerConfig cfg;
    cfg.budget = budget;
    cfg.seed = seed;
    if (!weights_csv.empty()) cfg.weights = parse_weights(weights_csv, spec.n_agents);
    const WelfareWeights weights =
        cfg.weights ? *cfg.weights : WelfareWeights::unit(static_cast<std::size_t>(spec.n_agents));

    RunResult run = run_algorithm(algo, env, cfg);
    std::printf("algorithm:      %s\n", algo.c_str());
    std::printf("recommendation: %s\n", run.recommendation.to_string().c_str());
    std::printf("spend:          %ld / %ld tokens\n", run.spent, budget);
    std::printf("pulls:          %zu\n", run.history.size());

    // Payments: score the winner with ground-truth draws, estimate the
    // counterfactual optima by warm-started search.
    Rng gt_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const Valuations winner_vals = ground_truth_valuations(spec, ladder, gt_rng, run.recommendation);
    std::vector<double> counterfactuals;
    bool have_cf = true;
    for (int i = 0; i < spec.n_agents && have_cf; ++i) {
        try {
            if (algo == "mfbo") {
                counterfactuals.push_back(aco_mfbo(run, env, i, 0, cfg));
            } else {
                counterfactuals.push_back(aco_ash(run, env, i, 0, cfg));
            }
        } catch (const Error&) {
            have_cf = false;
        }
    }
    if (have_cf) {
        const PaymentResult payments = vcg_payments(run.recommendation, winner_vals, counterfactuals);
        std::printf("winner welfare: %.3f (weighted %.3f)\n", payments.winner_welfare,
                    weighted_welfare(winner_vals, weights));
        for (std::size_t i = 0; i < payments.payments.size(); ++i) {
            std::printf("agent %zu: payment %.3f, utility %.3f, counterfactual %.3f\n", i,
                        payments.payments[i], payments.utilities[i],
                        payments.counterfactual_optima[i]);
        }
        std::printf("total payments: %.3f\n", payments.total_payments);
    } else {
        std::printf("payments:       unavailable (no counterfactual estimate from this run)\n");
    }
    return 0;
}

int cmd_experiment(ExperimentPlan plan, const std::string& out_dir, bool with_bootstrap) {
    if (const char* env_seed = std::getenv("IAMFM_SEED")) {
        plan.base_seed = std::strtoull(env_seed, nullptr, 10);
    }
    ExperimentResults results = run_experiment(plan);

    std::filesystem::create_directories(out_dir);
    const std::string csv_path = out_dir + "/results.csv";
    const std::string md_path = out_dir + "/report.md";
    const std::string json_path = out_dir + "/report.json";
    emit_report(results, ReportFormat::csv, csv_path);
    emit_report(results, ReportFormat::markdown, md_path);
    emit_report(results, ReportFormat::structured, json_path);
    std::printf("wrote %s, %s, %s\n", csv_path.c_str(), md_path.c_str(), json_path.c_str());

    if (with_bootstrap && plan.algorithms.size() >= 2) {
        // Primary contrast: first two algorithms in the high-budget regime.
        std::vector<double> a, b;
        for (const auto& c : results.cells) {
            if (!c.ok || c.budget < plan.high_budget_min) continue;
            if (c.algorithm == plan.algorithms[0]) a.push_back(c.welfare);
            if (c.algorithm == plan.algorithms[1]) b.push_back(c.welfare);
        }
        if (a.size() >= 2 && b.size() >= 2) {
            const BootstrapCi ci = bootstrap_mean_diff_ci(a, b, 20000, plan.base_seed);
            std::printf("bootstrap 95%% CI of mean(%s) - mean(%s) at high budgets: [%.3f, %.3f] "
                        "(%d resamples)\n",
                        plan.algorithms[0].c_str(), plan.algorithms[1].c_str(), ci.low, ci.high,
                        ci.resamples);
        }
    }

    int failures = 0;
    for (const auto& c : results.cells) {
        if (!c.ok) {
            ++failures;
            std::fprintf(stderr, "cell %s/%ld/trial%d failed: %s\n", c.algorithm.c_str(), c.budget,
                         c.trial, c.error.c_str());
        }
    }
    if (failures > 0) std::printf("%d cell(s) failed; see stderr\n", failures);
    return 0;
}

int cmd_audit(const std::string& spec_path) {
    auto [spec, ladder] = load_spec(spec_path);
    (void)ladder;
    const IncentiveAuditReport report = audit_incentives(spec, exhaustive_selector());
    std::fputs(format_audit_report(report).c_str(), stdout);
    return 0;
}

int cmd_aco_bench(long budget, std::uint64_t seed, const std::string& spec_path,
                  const std::string& out_dir) {
    auto [spec, ladder] = load_spec(spec_path);
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/aco_bench.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(Errc::io_failure, "cannot open " + path);
    out << "method,agent,extra_budget,estimate,exact,abs_error\n";

    const std::vector<long> extras = {0, 250, 500, 1000, 2000, 4000};

    OptimizerConfig cfg;
    cfg.budget = budget;
    cfg.seed = seed;

    for (const std::string method : {"mfbo", "ash"}) {
        for (int agent = 0; agent < spec.n_agents; ++agent) {
            const double exact = counterfactual_exact(spec, agent);
            for (long extra : extras) {
                // Fresh main run per point so refinement budgets do not leak
                // across rows.
                SyntheticEnvironment env(spec, ladder, seed);
                RunResult run = method == "mfbo" ? run_mfbo(env, cfg) : run_ash(env, cfg);
                double warm = 0.0;
                try {
                    warm = method == "mfbo" ? aco_mfbo(run, env, agent, extra, cfg)
                                            : aco_ash(run, env, agent, extra, cfg);
                } catch (const Error&) {
                    continue;
                }
                char line[256];
                std::snprintf(line, sizeof line, "aco-%s,%d,%ld,%.6f,%.6f,%.6f\n", method.c_str(),
                              agent, extra, warm, exact, std::abs(warm - exact));
                out << line;

                // Cold start on the slice with the same extra budget.
                if (extra > 0) {
                    std::vector<InfluenceConfiguration> slice;
                    for (auto& arm : enumerate_action_space(spec.n_agents, spec.max_strength)) {
                        if (arm.strengths[static_cast<std::size_t>(agent)] == 0)
                            slice.push_back(std::move(arm));
                    }
                    OptimizerConfig cold_cfg;
                    cold_cfg.budget = extra;
                    cold_cfg.seed = seed + 1000;
                    cold_cfg.arms = slice;
                    try {
                        SyntheticEnvironment cold_env(spec, ladder, seed + 1000);
                        RunResult cold = method == "mfbo" ? run_mfbo(cold_env, cold_cfg)
                                                          : run_ash(cold_env, cold_cfg);
                        double estimate;
                        if (method == "mfbo" && cold.surrogate) {
                            estimate = cold.surrogate->posterior_at(cold.recommendation,
                                                                    ladder.levels()).first;
                        } else {
                            estimate = cold.statistics.mean(cold.recommendation, ladder.levels());
                        }
                        std::snprintf(line, sizeof line, "cold-%s,%d,%ld,%.6f,%.6f,%.6f\n",
                                      method.c_str(), agent, extra, estimate, exact,
                                      std::abs(estimate - exact));
                        out << line;
                    } catch (const Error&) {
                        // Infeasible cold budgets simply have no row.
                    }
                }
            }
        }
    }
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Incentive-aware multi-fidelity optimization toolkit"};
    app.require_subcommand(1);

    std::string algo = "mfbo";
    long budget = 0;
    std::uint64_t seed = 42;
    std::string spec_path;
    std::string weights_csv;
    std::string out_dir = "out";
    std::string plan_path;
    int trials = 10;
    int jobs = 1;
    bool with_bootstrap = false;

    CLI::App* optimize = app.add_subcommand("optimize", "Run one optimizer and print payments");
    optimize->add_option("--algo", algo, "sh|ash|mfbo|ucb|uniform")->required();
    optimize->add_option("--budget", budget, "token budget")->required();
    optimize->add_option("--seed", seed, "random seed");
    optimize->add_option("--spec", spec_path, "environment spec JSON file");
    optimize->add_option("--weights", weights_csv, "comma list: agent weights then user weight");

    CLI::App* experiment = app.add_subcommand("experiment", "Run a full budget-sweep plan");
    experiment->add_option("--plan", plan_path, "plan JSON file (defaults to the stock plan)");
    experiment->add_option("--budget", budget, "single budget override");
    experiment->add_option("--algo", algo, "single algorithm override");
    experiment->add_option("--trials", trials, "trials per cell");
    experiment->add_option("--seed", seed, "base seed");
    experiment->add_option("--spec", spec_path, "environment spec JSON file");
    experiment->add_option("--weights", weights_csv, "comma list: agent weights then user weight");
    experiment->add_option("--out", out_dir, "output directory");
    experiment->add_option("--jobs", jobs, "parallel trial workers");
    experiment->add_flag("--bootstrap", with_bootstrap, "bootstrap CI for the primary contrast");

    CLI::App* audit = app.add_subcommand("audit", "Incentive audit on a synthetic spec");
    audit->add_option("--spec", spec_path, "environment spec JSON file");

    CLI::App* aco = app.add_subcommand("aco-bench", "Warm vs cold counterfactual error curves");
    aco->add_option("--budget", budget, "main-phase budget")->required();
    aco->add_option("--seed", seed, "random seed");
    aco->add_option("--spec", spec_path, "environment spec JSON file");
    aco->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (optimize->parsed()) {
            return cmd_optimize(algo, budget, seed, spec_path, weights_csv);
        }
        if (experiment->parsed()) {
            ExperimentPlan plan;
            if (!plan_path.empty()) {
                plan = ExperimentPlan::from_file(plan_path);
            }
            if (experiment->count("--budget") > 0) plan.budgets = {budget};
            if (experiment->count("--algo") > 0) plan.algorithms = {algo};
            if (experiment->count("--trials") > 0) plan.trials_per_cell = trials;
            if (experiment->count("--seed") > 0) plan.base_seed = seed;
            if (experiment->count("--jobs") > 0) plan.jobs = jobs;
            if (!spec_path.empty()) {
                auto [spec, ladder] = spec_from_file(spec_path);
                plan.spec = std::move(spec);
                plan.ladder = std::move(ladder);
                plan.weights = WelfareWeights::unit(static_cast<std::size_t>(plan.spec.n_agents));
            }
            if (!weights_csv.empty()) plan.weights = parse_weights(weights_csv, plan.spec.n_agents);
            return cmd_experiment(std::move(plan), out_dir, with_bootstrap);
        }
        if (audit->parsed()) {
            return cmd_audit(spec_path);
        }
        if (aco->parsed()) {
            return cmd_aco_bench(budget, seed, spec_path, out_dir);
        }
    } catch (const iamfm::Error& e) {
        const bool config_error = e.code() == iamfm::Errc::bad_config;
        std::fprintf(stderr, "error: %s\n", e.what());
        return config_error ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
