#include "iamfm/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "iamfm/rng.hpp"

namespace iamfm {

double BetaSchedule::value(long remaining, long total) const {
    if (total <= 0 || remaining < 0 || remaining > total) {
        raise(Errc::bad_config, "beta schedule needs 0 <= remaining <= total, total > 0");
    }
    const double frac = static_cast<double>(remaining) / static_cast<double>(total);
    return beta_start * std::pow(frac, gamma) + beta_min;
}

BetaSchedule BetaSchedule::medium() { return BetaSchedule{8.5 - 1.7, 1.7, 1.0}; }
BetaSchedule BetaSchedule::wide() { return BetaSchedule{15.0 - 3.0, 3.0, 1.0}; }
BetaSchedule BetaSchedule::for_budget(long budget) {
    return budget >= 32000 ? wide() : medium();
}

namespace {

struct RunContext {
    ArmPullEnvironment& env;
    const OptimizerConfig& cfg;
    std::vector<InfluenceConfiguration> arms;
    WelfareWeights weights;
    RunResult result;
    BudgetState budget;

    RunContext(ArmPullEnvironment& e, const OptimizerConfig& c, long reserve)
        : env(e), cfg(c), budget(c.budget, reserve) {
        if (c.budget < e.ladder().cost(e.ladder().levels())) {
            raise(Errc::budget_too_small,
                  "budget " + std::to_string(c.budget) + " below one max-fidelity pull (" +
                      std::to_string(e.ladder().cost(e.ladder().levels())) + " tokens)");
        }
        arms = c.arms ? *c.arms : enumerate_action_space(e.n_agents(), e.max_strength());
        if (arms.empty()) raise(Errc::bad_config, "empty action space");
        for (const auto& arm : arms) validate_configuration(arm, e.n_agents(), e.max_strength());
        weights = c.weights ? *c.weights
                            : WelfareWeights::unit(static_cast<std::size_t>(e.n_agents()));
    }

    // Executes one pull and folds it into the ledger/stats/history.
    const Observation& pull(const InfluenceConfiguration& arm, int fidelity) {
        Observation obs = env.pull(arm, fidelity);
        if (obs.cost_charged > budget.remaining()) {
            // Guarded by callers; tripping this means the feasibility check lied.
            result.audit.overspend_violations += 1;
        }
        budget.charge(obs.cost_charged);
        result.statistics.record(arm, fidelity, weighted_welfare(obs.valuations, weights));
        result.history.push_back(std::move(obs));
        return result.history.back();
    }

    void finish(InfluenceConfiguration rec) {
        result.recommendation = std::move(rec);
        result.spent = budget.spent();
    }
};

// Mean at `fidelity` when the arm has data there; otherwise the mean at the
// highest fidelity it was ever pulled at; -infinity for untouched arms. Keeps
// rankings deterministic when a starved stage skipped some arms.
double rank_value(const ArmStatistics& stats, const InfluenceConfiguration& arm, int fidelity) {
    if (stats.count(arm, fidelity) > 0) return stats.mean(arm, fidelity);
    const int top = stats.highest_fidelity(arm);
    if (top == 0) return -std::numeric_limits<double>::infinity();
    return stats.mean(arm, top);
}

InfluenceConfiguration argmax_mean(const std::vector<InfluenceConfiguration>& arms,
                                   const ArmStatistics& stats, int fidelity) {
    const InfluenceConfiguration* best = nullptr;
    double best_mean = -std::numeric_limits<double>::infinity();
    for (const auto& arm : arms) {
        const double m = rank_value(stats, arm, fidelity);
        if (best == nullptr || m > best_mean) {
            best = &arm;
            best_mean = m;
        }
    }
    if (best == nullptr || best_mean == -std::numeric_limits<double>::infinity()) {
        raise(Errc::no_estimate, "no arm has any data");
    }
    return *best;
}

std::vector<InfluenceConfiguration> top_fraction(const std::vector<InfluenceConfiguration>& arms,
                                                 const ArmStatistics& stats, int fidelity,
                                                 double eta) {
    std::vector<std::size_t> order(arms.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ma = rank_value(stats, arms[a], fidelity);
        const double mb = rank_value(stats, arms[b], fidelity);
        if (ma != mb) return ma > mb;
        return arms[a].strengths < arms[b].strengths;
    });
    const std::size_t keep =
        static_cast<std::size_t>(std::ceil(static_cast<double>(arms.size()) / eta));
    std::vector<InfluenceConfiguration> out;
    out.reserve(keep);
    for (std::size_t i = 0; i < keep && i < order.size(); ++i) out.push_back(arms[order[i]]);
    // Survivors keep lexicographic order so later stages iterate deterministically.
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.strengths < b.strengths; });
    return out;
}

} // namespace

StagePlan plan_stages(const FidelityLadder& ladder, std::size_t arm_count, double eta,
                      long budget) {
    if (eta <= 1.0) raise(Errc::bad_config, "elimination rate must exceed 1");
    StagePlan plan;
    std::size_t m = arm_count;
    long minimum = 0;
    for (int f = 1; f <= ladder.levels(); ++f) {
        plan.survivors.push_back(m);
        // One nominal-cost round per survivor per stage; marginal charging
        // makes the actual spend lower, never higher.
        minimum += static_cast<long>(m) * ladder.cost(f);
        m = static_cast<std::size_t>(std::ceil(static_cast<double>(m) / eta));
    }
    plan.minimum_feasible = minimum;

    double total_weight = 0.0;
    std::vector<double> weights(plan.survivors.size());
    for (std::size_t i = 0; i < plan.survivors.size(); ++i) {
        weights[i] = static_cast<double>(ladder.cost(static_cast<int>(i) + 1)) *
                     static_cast<double>(plan.survivors[i]);
        total_weight += weights[i];
    }
    long allocated = 0;
    plan.tokens.resize(plan.survivors.size());
    for (std::size_t i = 0; i < plan.survivors.size(); ++i) {
        plan.tokens[i] = static_cast<long>(std::floor(static_cast<double>(budget) * weights[i] /
                                                      total_weight));
        allocated += plan.tokens[i];
    }
    plan.tokens.back() += budget - allocated; // rounding remainder
    return plan;
}

// --- successive halving ------------------------------------------------------

namespace {

RunResult run_elimination(ArmPullEnvironment& env, const OptimizerConfig& cfg, bool adaptive) {
    RunContext ctx(env, cfg, 0);
    const FidelityLadder& ladder = env.ladder();
    const int levels = ladder.levels();

    StagePlan plan = plan_stages(ladder, ctx.arms.size(), cfg.elimination_rate, cfg.budget);
    if (cfg.budget < plan.minimum_feasible) {
        raise(Errc::budget_too_small,
              "budget " + std::to_string(cfg.budget) + " below the minimum feasible " +
                  std::to_string(plan.minimum_feasible) + " tokens for " +
                  std::to_string(ctx.arms.size()) + " arms");
    }

    const BetaSchedule schedule = cfg.schedule();
    std::vector<InfluenceConfiguration> survivors = ctx.arms;
    long carry = 0;

    for (int f = 1; f <= levels; ++f) {
        const long stage_tokens = plan.tokens[static_cast<std::size_t>(f - 1)] + carry;
        long stage_spent = 0;

        auto affordable = [&](long cost) {
            ctx.result.audit.feasibility_checks += 1;
            return stage_spent + cost <= stage_tokens && ctx.budget.can_afford(cost);
        };

        if (!adaptive) {
            const long per_round = ladder.cost(f) * static_cast<long>(survivors.size());
            const long rounds = std::max<long>(1, stage_tokens / std::max<long>(per_round, 1));
            bool exhausted = false;
            for (long r = 0; r < rounds && !exhausted; ++r) {
                for (const auto& arm : survivors) {
                    const long cost = marginal_cost(ladder, ctx.result.statistics, arm, f);
                    if (!affordable(cost)) {
                        exhausted = true;
                        break;
                    }
                    stage_spent += ctx.pull(arm, f).cost_charged;
                }
            }
        } else {
            while (true) {
                // Current-statistics UCB. Arms with fewer than two pulls at
                // this fidelity rank as +infinity (their sample std is not
                // defined yet), fewest-pulls-first, so one unlucky draw can
                // never freeze an arm out of the stage.
                const InfluenceConfiguration* pick = nullptr;
                double best = -std::numeric_limits<double>::infinity();
                long forced_n = 2;
                for (const auto& arm : survivors) {
                    const long n = ctx.result.statistics.count(arm, f);
                    if (n < 2) {
                        if (n < forced_n) {
                            pick = &arm;
                            forced_n = n;
                        }
                        continue;
                    }
                    if (forced_n < 2) continue;
                    const double beta =
                        schedule.value(ctx.budget.remaining(), ctx.budget.total());
                    const double score =
                        ctx.result.statistics.mean(arm, f) +
                        beta * ctx.result.statistics.stddev(arm, f) / std::sqrt(static_cast<double>(n));
                    if (pick == nullptr || score > best) {
                        pick = &arm;
                        best = score;
                    }
                }
                if (pick == nullptr) break;
                const long cost = marginal_cost(ladder, ctx.result.statistics, *pick, f);
                if (!affordable(cost)) break;
                stage_spent += ctx.pull(*pick, f).cost_charged;
            }
        }

        carry = stage_tokens - stage_spent;
        if (f < levels) {
            survivors = top_fraction(survivors, ctx.result.statistics, f, cfg.elimination_rate);
        }
    }

    ctx.finish(argmax_mean(survivors, ctx.result.statistics, levels));
    return ctx.result;
}

} // namespace

RunResult run_sh(ArmPullEnvironment& env, const OptimizerConfig& cfg) {
    return run_elimination(env, cfg, false);
}

RunResult run_ash(ArmPullEnvironment& env, const OptimizerConfig& cfg) {
    return run_elimination(env, cfg, true);
}

// --- model-based search ------------------------------------------------------

namespace {

// Three strength levels per free coordinate: off, midpoint, maximum.
std::vector<InfluenceConfiguration> lattice_design(const std::vector<InfluenceConfiguration>& arms,
                                                   int n_agents, int k) {
    std::set<int> levels{0, k, (k + 1) / 2};
    std::set<std::vector<int>> member;
    for (const auto& a : arms) member.insert(a.strengths);

    std::vector<InfluenceConfiguration> design;
    std::vector<int> cur(static_cast<std::size_t>(n_agents), 0);
    const std::vector<int> level_list(levels.begin(), levels.end());
    std::vector<std::size_t> idx(static_cast<std::size_t>(n_agents), 0);
    while (true) {
        for (int i = 0; i < n_agents; ++i) cur[static_cast<std::size_t>(i)] = level_list[idx[static_cast<std::size_t>(i)]];
        if (member.count(cur)) design.push_back(InfluenceConfiguration{cur});
        int pos = n_agents - 1;
        while (pos >= 0) {
            if (++idx[static_cast<std::size_t>(pos)] < level_list.size()) break;
            idx[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
    }
    if (design.empty()) {
        for (std::size_t i = 0; i < arms.size() && i < 3; ++i) design.push_back(arms[i]);
    }
    return design;
}

} // namespace

RunResult run_mfbo(ArmPullEnvironment& env, const OptimizerConfig& cfg) {
    const FidelityLadder& ladder = env.ladder();
    const int levels = ladder.levels();
    if (cfg.reserve_ratio < 0.0 || cfg.reserve_ratio >= 1.0) {
        raise(Errc::bad_config, "reserve ratio must lie in [0, 1)");
    }
    const long reserve = static_cast<long>(std::floor(cfg.reserve_ratio * static_cast<double>(cfg.budget)));
    if (cfg.budget - reserve < ladder.cost(1)) {
        long min_budget = ladder.cost(1);
        while (min_budget - static_cast<long>(std::floor(cfg.reserve_ratio * static_cast<double>(min_budget))) <
               ladder.cost(1)) {
            ++min_budget;
        }
        raise(Errc::budget_too_small,
              "budget " + std::to_string(cfg.budget) + " cannot hold the reserve plus one bottom-fidelity pull; needs at least " +
                  std::to_string(std::max(min_budget, ladder.cost(levels))));
    }

    RunContext ctx(env, cfg, reserve);
    const BetaSchedule schedule = cfg.schedule();

    SpaceDims dims{env.n_agents(), env.max_strength(), levels};
    struct ModelState {
        GpModel model;
        long adds_since_refit = 0;
        bool ever_fit = false;
    } gp;
    gp.model = GpModel(dims);

    auto gp_add = [&](const Observation& obs) {
        const double y = weighted_welfare(obs.valuations, ctx.weights);
        gp.model.add({obs.arm, obs.fidelity, y});
        gp.adds_since_refit += 1;
        const long n = static_cast<long>(gp.model.sample_count());
        if (n < 2) return;
        // Dynamic cadence: refit densely early, then at a growing interval.
        long interval = 1;
        if (n > 100) {
            interval = std::max<long>(5, n / 20);
        } else if (n > 20) {
            interval = 5;
        }
        if (!gp.ever_fit || gp.adds_since_refit >= interval) {
            gp.model.refit();
            gp.ever_fit = true;
            gp.adds_since_refit = 0;
        } else {
            gp.model.update_factorization();
        }
    };

    auto feasible_cost = [&](const InfluenceConfiguration& arm, int f) -> std::optional<long> {
        const long cost = marginal_cost(ladder, ctx.result.statistics, arm, f);
        ctx.result.audit.feasibility_checks += 1;
        const long limit = f < levels ? ctx.budget.remaining() - reserve : ctx.budget.remaining();
        if (cost > limit) return std::nullopt;
        return cost;
    };

    auto checked_pull = [&](const InfluenceConfiguration& arm, int f) {
        const Observation& obs = ctx.pull(arm, f);
        if (f < levels && ctx.budget.spent() + reserve > ctx.budget.total()) {
            ctx.result.audit.reserve_violations += 1;
        }
        gp_add(obs);
    };

    // Initial design: lattice arms at the bottom fidelity.
    std::vector<InfluenceConfiguration> design =
        lattice_design(ctx.arms, env.n_agents(), env.max_strength());
    if (cfg.random_init_design) {
        Rng rng(cfg.seed);
        std::vector<InfluenceConfiguration> pool = ctx.arms;
        std::vector<InfluenceConfiguration> picked;
        const std::size_t want = std::min(design.size(), pool.size());
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = static_cast<std::size_t>(rng.below(pool.size()));
            picked.push_back(pool[j]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
        }
        design = std::move(picked);
    }
    for (const auto& arm : design) {
        if (feasible_cost(arm, 1)) checked_pull(arm, 1);
    }

    // Main acquisition loop over the feasible (arm, fidelity) grid.
    while (gp.model.fitted() && gp.model.sample_count() >= 2) {
        const double beta = schedule.value(ctx.budget.remaining(), ctx.budget.total());
        const double sqrt_beta = std::sqrt(beta);

        const InfluenceConfiguration* pick_arm = nullptr;
        int pick_f = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& arm : ctx.arms) {
            for (int f = 1; f <= levels; ++f) {
                if (!feasible_cost(arm, f)) continue;
                const auto [mu, var] = gp.model.posterior_at(arm, f);
                const double score = mu + sqrt_beta * std::sqrt(var);
                // Ties prefer the cheaper fidelity, then lexicographic order.
                if (pick_arm == nullptr || score > best) {
                    pick_arm = &arm;
                    pick_f = f;
                    best = score;
                }
            }
        }
        if (pick_arm == nullptr) break; // feasible set empty
        checked_pull(*pick_arm, pick_f);
    }

    // Spend the reserve: max-fidelity confirmations of the top posterior arms.
    if (gp.model.fitted() && gp.model.sample_count() >= 1) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t i = 0; i < ctx.arms.size(); ++i) {
            const auto [mu, var] = gp.model.posterior_at(ctx.arms[i], levels);
            (void)var;
            ranked.emplace_back(mu, i);
        }
        std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return ctx.arms[a.second].strengths < ctx.arms[b.second].strengths;
        });
        int confirmed = 0;
        for (const auto& [mu, idx] : ranked) {
            if (confirmed >= cfg.final_confirmations) break;
            const long cost = marginal_cost(ladder, ctx.result.statistics, ctx.arms[idx], levels);
            ctx.result.audit.feasibility_checks += 1;
            if (cost > ctx.budget.remaining()) continue;
            checked_pull(ctx.arms[idx], levels);
            ++confirmed;
        }
    }

    // Denoised selection: posterior mean at max fidelity.
    InfluenceConfiguration rec;
    if (gp.model.fitted() && gp.model.sample_count() >= 1) {
        const InfluenceConfiguration* best_arm = nullptr;
        double best_mu = -std::numeric_limits<double>::infinity();
        for (const auto& arm : ctx.arms) {
            const double mu = gp.model.posterior_at(arm, levels).first;
            if (best_arm == nullptr || mu > best_mu) {
                best_arm = &arm;
                best_mu = mu;
            }
        }
        rec = *best_arm;
    } else {
        rec = ctx.arms.front();
    }

    ctx.finish(std::move(rec));
    ctx.result.surrogate = std::move(gp.model);
    return ctx.result;
}

// --- single-fidelity baselines ------------------------------------------------

RunResult run_ucb_baseline(ArmPullEnvironment& env, const OptimizerConfig& cfg) {
    RunContext ctx(env, cfg, 0);
    const FidelityLadder& ladder = env.ladder();
    const int top = ladder.levels();
    const long cost = ladder.cost(top);

    // Seeded exploration order; a fixed enumeration order would let short
    // budgets inherit whatever arm the action-space encoding happens to put
    // first.
    std::vector<InfluenceConfiguration> sweep = ctx.arms;
    {
        Rng order_rng(cfg.seed ^ 0xda3e39cb94b95bdbULL);
        for (std::size_t i = sweep.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(order_rng.below(i));
            std::swap(sweep[i - 1], sweep[j]);
        }
    }

    while (true) {
        ctx.result.audit.feasibility_checks += 1;
        if (!ctx.budget.can_afford(cost)) break;

        const long t = ctx.result.statistics.total_count();
        const InfluenceConfiguration* pick = nullptr;

        // Unexplored arms first, in sweep order.
        for (const auto& arm : sweep) {
            if (ctx.result.statistics.count(arm, top) == 0) {
                pick = &arm;
                break;
            }
        }
        if (pick == nullptr) {
            // Forced exploration for badly under-sampled arms, then a
            // variance-scaled optimism index.
            const double threshold = std::ceil(8.0 * std::log(static_cast<double>(t) + 1.0));
            long fewest = std::numeric_limits<long>::max();
            for (const auto& arm : ctx.arms) {
                const long n = ctx.result.statistics.count(arm, top);
                if (static_cast<double>(n) < threshold && n < fewest) {
                    fewest = n;
                    pick = &arm;
                }
            }
            if (pick == nullptr) {
                double best = -std::numeric_limits<double>::infinity();
                for (const auto& arm : ctx.arms) {
                    const long n = ctx.result.statistics.count(arm, top);
                    const double sd = ctx.result.statistics.stddev(arm, top);
                    const double bonus =
                        sd * std::sqrt(16.0 * std::log(static_cast<double>(t)) / static_cast<double>(n));
                    const double score = ctx.result.statistics.mean(arm, top) + bonus;
                    if (score > best) {
                        best = score;
                        pick = &arm;
                    }
                }
            }
        }
        ctx.pull(*pick, top);
    }

    ctx.finish(argmax_mean(ctx.arms, ctx.result.statistics, top));
    return ctx.result;
}

RunResult run_uniform_baseline(ArmPullEnvironment& env, const OptimizerConfig& cfg) {
    RunContext ctx(env, cfg, 0);
    const FidelityLadder& ladder = env.ladder();
    const int top = ladder.levels();
    const long cost = ladder.cost(top);

    std::size_t next = 0;
    while (true) {
        ctx.result.audit.feasibility_checks += 1;
        if (!ctx.budget.can_afford(cost)) break;
        ctx.pull(ctx.arms[next], top);
        next = (next + 1) % ctx.arms.size();
    }

    ctx.finish(argmax_mean(ctx.arms, ctx.result.statistics, top));
    return ctx.result;
}

bool is_known_algorithm(const std::string& name) {
    return name == "sh" || name == "ash" || name == "mfbo" || name == "ucb" || name == "uniform";
}

RunResult run_algorithm(const std::string& name, ArmPullEnvironment& env,
                        const OptimizerConfig& cfg) {
    if (name == "sh") return run_sh(env, cfg);
    if (name == "ash") return run_ash(env, cfg);
    if (name == "mfbo") return run_mfbo(env, cfg);
    if (name == "ucb") return run_ucb_baseline(env, cfg);
    if (name == "uniform") return run_uniform_baseline(env, cfg);
    raise(Errc::bad_config, "unknown algorithm '" + name + "'");
}

} // namespace iamfm
