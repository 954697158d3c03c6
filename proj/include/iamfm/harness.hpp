#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "iamfm/core.hpp"
#include "iamfm/environment.hpp"
#include "iamfm/optimizers.hpp"
#include "iamfm/stats.hpp"

namespace iamfm {

// One budget-sweep protocol: every (algorithm, budget) cell runs
// trials_per_cell independent seeded trials, each scored by a fixed number of
// max-fidelity ground-truth draws.
struct ExperimentPlan {
    std::vector<long> budgets = {1000, 2000, 4000, 8000, 16000, 32000, 64000, 128000};
    std::vector<std::string> algorithms = {"mfbo", "ash", "sh", "ucb", "uniform"};
    int trials_per_cell = 10;
    std::uint64_t base_seed = 42;
    SyntheticWelfareSpec spec = default_foodcourt_spec();
    FidelityLadder ladder = FidelityLadder::standard();
    int ground_truth_draws = 50;
    WelfareWeights weights = WelfareWeights::unit(2);
    int jobs = 1;
    // Regime boundaries for the markdown summary; the crossover is
    // environment-specific so both edges stay configurable.
    long low_budget_max = 16000;
    long high_budget_min = 32000;

    void validate() const;
    static ExperimentPlan from_json(const std::string& text);
    static ExperimentPlan from_file(const std::string& path);
};

struct CellResult {
    std::string algorithm;
    long budget = 0;
    int trial = 0;
    std::uint64_t seed = 0;
    double welfare = 0.0;
    long spent = 0;
    InfluenceConfiguration recommendation;
    BudgetAudit audit;
    bool ok = true;
    std::string error;
};

struct ExperimentResults {
    ExperimentPlan plan;
    std::vector<CellResult> cells;
};

// Runs every cell (optionally across plan.jobs threads); output order is
// (algorithm, budget, trial) regardless of scheduling. Per-cell failures are
// recorded on the cell, not thrown.
ExperimentResults run_experiment(const ExperimentPlan& plan);

// Per-cell aggregate statistics.
struct CellSummary {
    std::string algorithm;
    long budget = 0;
    int n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double median = 0.0;
    double iqr = 0.0;
};

struct PairwiseTest {
    std::string algorithm_a;
    std::string algorithm_b;
    std::string regime;
    WelchResult welch;
    double cohens_d = 0.0;
    bool degenerate = false;
};

struct StatSummary {
    std::vector<CellSummary> cells;
    std::vector<PairwiseTest> pairwise; // empty when trials < 2 or variance degenerates
};

StatSummary summarize(const ExperimentResults& results);

enum class ReportFormat { csv, structured, markdown };

// csv: one row per trial with a mandatory header, UTF-8, LF line endings.
// structured: JSON document with cells and summary.
// markdown: regime summary plus a pairwise test grid.
void emit_report(const ExperimentResults& results, ReportFormat format, const std::string& path);

std::string render_csv(const ExperimentResults& results);
std::vector<CellResult> parse_csv(const std::string& text);

} // namespace iamfm
