#include "iamfm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace iamfm {

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Arm serialized as dash-joined strengths so CSV stays comma-clean.
std::string arm_field(const InfluenceConfiguration& arm) {
    std::string out;
    for (std::size_t i = 0; i < arm.strengths.size(); ++i) {
        if (i) out += '-';
        out += std::to_string(arm.strengths[i]);
    }
    return out;
}

InfluenceConfiguration parse_arm_field(const std::string& field) {
    InfluenceConfiguration arm;
    std::stringstream ss(field);
    std::string part;
    while (std::getline(ss, part, '-')) arm.strengths.push_back(std::stoi(part));
    return arm;
}

double median_of(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    if (n == 0) return 0.0;
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double quantile_of(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    if (xs.empty()) return 0.0;
    const double pos = q * static_cast<double>(xs.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= xs.size()) return xs.back();
    return xs[i] * (1.0 - frac) + xs[i + 1] * frac;
}

} // namespace

void ExperimentPlan::validate() const {
    if (budgets.empty()) raise(Errc::bad_config, "plan has no budgets");
    if (algorithms.empty()) raise(Errc::bad_config, "plan has no algorithms");
    for (const auto& a : algorithms) {
        if (!is_known_algorithm(a)) raise(Errc::bad_config, "unknown algorithm '" + a + "'");
    }
    if (trials_per_cell < 1) raise(Errc::bad_config, "trials_per_cell must be positive");
    if (ground_truth_draws < 1) raise(Errc::bad_config, "ground_truth_draws must be positive");
    if (jobs < 1) raise(Errc::bad_config, "jobs must be positive");
    spec.validate(ladder);
    if (static_cast<int>(weights.agent_weights.size()) != spec.n_agents) {
        raise(Errc::bad_config, "weights do not cover every agent");
    }
}

ExperimentPlan ExperimentPlan::from_json(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        ExperimentPlan plan;
        if (j.contains("budgets")) plan.budgets = j["budgets"].get<std::vector<long>>();
        if (j.contains("algorithms")) plan.algorithms = j["algorithms"].get<std::vector<std::string>>();
        if (j.contains("trials_per_cell")) plan.trials_per_cell = j["trials_per_cell"].get<int>();
        if (j.contains("base_seed")) plan.base_seed = j["base_seed"].get<std::uint64_t>();
        if (j.contains("ground_truth_draws")) plan.ground_truth_draws = j["ground_truth_draws"].get<int>();
        if (j.contains("jobs")) plan.jobs = j["jobs"].get<int>();
        if (j.contains("low_budget_max")) plan.low_budget_max = j["low_budget_max"].get<long>();
        if (j.contains("high_budget_min")) plan.high_budget_min = j["high_budget_min"].get<long>();
        if (j.contains("spec")) {
            auto [spec, ladder] = spec_from_json(j["spec"].dump());
            plan.spec = std::move(spec);
            plan.ladder = std::move(ladder);
        }
        if (j.contains("weights")) {
            plan.weights.agent_weights = j["weights"]["agents"].get<std::vector<double>>();
            plan.weights.user_weight = j["weights"]["user"].get<double>();
        } else if (plan.spec.n_agents != static_cast<int>(plan.weights.agent_weights.size())) {
            plan.weights = WelfareWeights::unit(static_cast<std::size_t>(plan.spec.n_agents));
        }
        plan.validate();
        return plan;
    } catch (const nlohmann::json::exception& e) {
        raise(Errc::bad_config, std::string("malformed plan json: ") + e.what());
    }
}

ExperimentPlan ExperimentPlan::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_failure, "cannot open plan file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

namespace {

CellResult run_cell(const ExperimentPlan& plan, const std::string& algo, long budget, int trial) {
    CellResult cell;
    cell.algorithm = algo;
    cell.budget = budget;
    cell.trial = trial;
    cell.seed = plan.base_seed + static_cast<std::uint64_t>(trial);
    try {
        SyntheticEnvironment env(plan.spec, plan.ladder, cell.seed);
        OptimizerConfig cfg;
        cfg.budget = budget;
        cfg.seed = cell.seed;
        cfg.weights = plan.weights;
        RunResult run = run_algorithm(algo, env, cfg);

        // Score the recommendation on an independent ground-truth stream so
        // evaluation never perturbs the run's own noise sequence.
        Rng gt_rng(cell.seed ^ 0x9e3779b97f4a7c15ULL);
        const Valuations means = ground_truth_valuations(plan.spec, plan.ladder, gt_rng,
                                                         run.recommendation, plan.ground_truth_draws);
        cell.welfare = weighted_welfare(means, plan.weights);
        cell.spent = run.spent;
        cell.recommendation = run.recommendation;
        cell.audit = run.audit;
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
    }
    return cell;
}

} // namespace

ExperimentResults run_experiment(const ExperimentPlan& plan) {
    plan.validate();
    ExperimentResults results;
    results.plan = plan;

    struct Task {
        std::string algo;
        long budget;
        int trial;
    };
    std::vector<Task> tasks;
    for (const auto& algo : plan.algorithms) {
        for (long budget : plan.budgets) {
            for (int trial = 0; trial < plan.trials_per_cell; ++trial) {
                tasks.push_back({algo, budget, trial});
            }
        }
    }
    results.cells.resize(tasks.size());

    if (plan.jobs <= 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            results.cells[i] = run_cell(plan, tasks[i].algo, tasks[i].budget, tasks[i].trial);
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= tasks.size()) break;
                results.cells[i] = run_cell(plan, tasks[i].algo, tasks[i].budget, tasks[i].trial);
            }
        };
        std::vector<std::thread> pool;
        const int threads = std::min<int>(plan.jobs, static_cast<int>(tasks.size()));
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return results;
}

StatSummary summarize(const ExperimentResults& results) {
    StatSummary summary;

    // Per-cell aggregates.
    for (const auto& algo : results.plan.algorithms) {
        for (long budget : results.plan.budgets) {
            std::vector<double> welfare;
            for (const auto& c : results.cells) {
                if (c.ok && c.algorithm == algo && c.budget == budget) welfare.push_back(c.welfare);
            }
            if (welfare.empty()) continue;
            CellSummary cs;
            cs.algorithm = algo;
            cs.budget = budget;
            cs.n = static_cast<int>(welfare.size());
            cs.mean = sample_mean(welfare);
            cs.stddev = welfare.size() >= 2 ? std::sqrt(sample_variance(welfare)) : 0.0;
            cs.median = median_of(welfare);
            cs.iqr = quantile_of(welfare, 0.75) - quantile_of(welfare, 0.25);
            summary.cells.push_back(cs);
        }
    }

    // Pairwise Welch/Cohen grids per budget regime. Cells with a single trial
    // contribute means only (no inferential statistics).
    if (results.plan.trials_per_cell >= 2) {
        struct Regime {
            std::string name;
            std::function<bool(long)> member;
        };
        const std::vector<Regime> regimes = {
            {"low", [&](long b) { return b <= results.plan.low_budget_max; }},
            {"high", [&](long b) { return b >= results.plan.high_budget_min; }},
        };
        for (const auto& regime : regimes) {
            for (std::size_t i = 0; i < results.plan.algorithms.size(); ++i) {
                for (std::size_t j = i + 1; j < results.plan.algorithms.size(); ++j) {
                    std::vector<double> a, b;
                    for (const auto& c : results.cells) {
                        if (!c.ok || !regime.member(c.budget)) continue;
                        if (c.algorithm == results.plan.algorithms[i]) a.push_back(c.welfare);
                        if (c.algorithm == results.plan.algorithms[j]) b.push_back(c.welfare);
                    }
                    if (a.size() < 2 || b.size() < 2) continue;
                    PairwiseTest test;
                    test.algorithm_a = results.plan.algorithms[i];
                    test.algorithm_b = results.plan.algorithms[j];
                    test.regime = regime.name;
                    try {
                        test.welch = welch_t_test(a, b);
                        test.cohens_d = cohens_d(a, b);
                    } catch (const Error&) {
                        test.degenerate = true;
                    }
                    summary.pairwise.push_back(std::move(test));
                }
            }
        }
    }
    return summary;
}

std::string render_csv(const ExperimentResults& results) {
    std::string out = "algorithm,budget,trial,seed,welfare,spend,recommendation\n";
    for (const auto& c : results.cells) {
        if (!c.ok) continue;
        out += c.algorithm;
        out += ',';
        out += std::to_string(c.budget);
        out += ',';
        out += std::to_string(c.trial);
        out += ',';
        out += std::to_string(c.seed);
        out += ',';
        out += format_double(c.welfare);
        out += ',';
        out += std::to_string(c.spent);
        out += ',';
        out += arm_field(c.recommendation);
        out += '\n';
    }
    return out;
}

std::vector<CellResult> parse_csv(const std::string& text) {
    std::vector<CellResult> out;
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) raise(Errc::io_failure, "csv is empty");
    if (line != "algorithm,budget,trial,seed,welfare,spend,recommendation") {
        raise(Errc::io_failure, "unexpected csv header: " + line);
    }
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string field;
        CellResult c;
        std::getline(row, c.algorithm, ',');
        std::getline(row, field, ',');
        c.budget = std::stol(field);
        std::getline(row, field, ',');
        c.trial = std::stoi(field);
        std::getline(row, field, ',');
        c.seed = std::stoull(field);
        std::getline(row, field, ',');
        c.welfare = std::stod(field);
        std::getline(row, field, ',');
        c.spent = std::stol(field);
        std::getline(row, field, ',');
        c.recommendation = parse_arm_field(field);
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

std::string render_markdown(const ExperimentResults& results) {
    const StatSummary summary = summarize(results);
    std::ostringstream out;
    out << "# Experiment report\n\n";

    out << "## Regime summary (mean ± std of ground-truth welfare)\n\n";
    out << "| Method | Low budget (<= " << results.plan.low_budget_max << ") | High budget (>= "
        << results.plan.high_budget_min << ") |\n";
    out << "| --- | --- | --- |\n";
    for (const auto& algo : results.plan.algorithms) {
        std::vector<double> low, high;
        for (const auto& c : results.cells) {
            if (!c.ok || c.algorithm != algo) continue;
            if (c.budget <= results.plan.low_budget_max) low.push_back(c.welfare);
            if (c.budget >= results.plan.high_budget_min) high.push_back(c.welfare);
        }
        auto cell = [](const std::vector<double>& xs) -> std::string {
            if (xs.empty()) return "-";
            char buf[64];
            const double m = sample_mean(xs);
            const double s = xs.size() >= 2 ? std::sqrt(sample_variance(xs)) : 0.0;
            std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m, s);
            return buf;
        };
        out << "| " << algo << " | " << cell(low) << " | " << cell(high) << " |\n";
    }

    out << "\n## Pairwise Welch tests\n\n";
    out << "| Regime | Comparison | Mean diff | t | p (two-sided) | 95% CI | Cohen's d |\n";
    out << "| --- | --- | --- | --- | --- | --- | --- |\n";
    for (const auto& p : summary.pairwise) {
        out << "| " << p.regime << " | " << p.algorithm_a << " vs " << p.algorithm_b << " | ";
        if (p.degenerate) {
            out << "degenerate | - | - | - | - |\n";
            continue;
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "%+.3f | %.3f | %.4g | [%+.3f, %+.3f] | %.3f |",
                      p.welch.mean_diff, p.welch.t, p.welch.p_two_sided, p.welch.ci_low,
                      p.welch.ci_high, p.cohens_d);
        out << buf << '\n';
    }

    out << "\n## Cell detail\n\n";
    out << "| Method | Budget | n | Mean | Std | Median | IQR |\n";
    out << "| --- | --- | --- | --- | --- | --- | --- |\n";
    for (const auto& c : summary.cells) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "| %s | %ld | %d | %.3f | %.3f | %.3f | %.3f |",
                      c.algorithm.c_str(), c.budget, c.n, c.mean, c.stddev, c.median, c.iqr);
        out << buf << '\n';
    }
    return out.str();
}

std::string render_structured(const ExperimentResults& results) {
    const StatSummary summary = summarize(results);
    nlohmann::json j;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : results.cells) {
        nlohmann::json row;
        row["algorithm"] = c.algorithm;
        row["budget"] = c.budget;
        row["trial"] = c.trial;
        row["seed"] = c.seed;
        row["ok"] = c.ok;
        if (c.ok) {
            row["welfare"] = c.welfare;
            row["spend"] = c.spent;
            row["recommendation"] = c.recommendation.strengths;
        } else {
            row["error"] = c.error;
        }
        j["cells"].push_back(std::move(row));
    }
    j["summary"] = nlohmann::json::array();
    for (const auto& c : summary.cells) {
        nlohmann::json row;
        row["algorithm"] = c.algorithm;
        row["budget"] = c.budget;
        row["n"] = c.n;
        row["mean"] = c.mean;
        row["stddev"] = c.stddev;
        row["median"] = c.median;
        row["iqr"] = c.iqr;
        j["summary"].push_back(std::move(row));
    }
    j["pairwise"] = nlohmann::json::array();
    for (const auto& p : summary.pairwise) {
        nlohmann::json row;
        row["regime"] = p.regime;
        row["a"] = p.algorithm_a;
        row["b"] = p.algorithm_b;
        row["degenerate"] = p.degenerate;
        if (!p.degenerate) {
            row["t"] = p.welch.t;
            row["p"] = p.welch.p_two_sided;
            row["mean_diff"] = p.welch.mean_diff;
            row["ci"] = {p.welch.ci_low, p.welch.ci_high};
            row["cohens_d"] = p.cohens_d;
        }
        j["pairwise"].push_back(std::move(row));
    }
    return j.dump(2);
}

} // namespace

void emit_report(const ExperimentResults& results, ReportFormat format, const std::string& path) {
    if (results.cells.empty()) raise(Errc::bad_config, "no results to report");
    std::string payload;
    switch (format) {
        case ReportFormat::csv: payload = render_csv(results); break;
        case ReportFormat::structured: payload = render_structured(results); break;
        case ReportFormat::markdown: payload = render_markdown(results); break;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) raise(Errc::io_failure, "cannot open " + path + " for writing");
    out << payload;
    if (!out) raise(Errc::io_failure, "write to " + path + " failed");
}

} // namespace iamfm
