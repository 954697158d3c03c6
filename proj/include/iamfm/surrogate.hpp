#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "iamfm/core.hpp"

namespace iamfm {

// Hyperparameters of the product kernel
//   k(x, x') = signal_variance
//            * exp(-1/2 sum_d (x_d - x'_d)^2 / len_d^2)            (action dims)
//            * [offset + (1-f)^(1+power) * (1-f')^(1+power)]       (fidelity dim)
// where f, f' are the normalized fidelity coordinates in [0, 1].
struct KernelParams {
    double signal_variance = 1.0;
    std::vector<double> action_lengthscales;
    double fidelity_offset = 0.5;
    double fidelity_power = 1.0;
    double noise_variance = 0.1;

    // Deterministic starting point: lengthscales 0.5, unit signal, offset 0.5,
    // power 1, noise 0.1.
    static KernelParams defaults(std::size_t action_dims);
};

// Covariance between two normalized points; the last coordinate is fidelity.
double kernel_eval(const KernelParams& params, const std::vector<double>& x,
                   const std::vector<double>& y);

struct FitOptions {
    int iterations = 50;
    double learning_rate = 0.1;
};

// Normalization context mapping (arm, fidelity) onto [0,1]^{N+1}.
struct SpaceDims {
    int n_agents = 0;
    int max_strength = 0;
    int fidelity_levels = 0;

    std::vector<double> normalize(const InfluenceConfiguration& arm, int fidelity) const;
};

struct GpSample {
    InfluenceConfiguration arm;
    int fidelity = 1;
    double value = 0.0;
};

class SubspaceView;

// Gaussian-process posterior over the joint configuration-fidelity cube.
// Observations at repeated inputs are folded into per-site sufficient
// statistics, which keeps fitting O(sites^3) instead of O(samples^3); the
// resulting likelihood and posterior are algebraically identical to the
// full-sample computation.
class GpModel {
public:
    GpModel() = default;
    // Empty model bound to a normalization context; populate with add().
    explicit GpModel(const SpaceDims& dims, KernelParams init = {});

    // Fit on domain samples; standardizes targets, then runs `iterations`
    // Adam steps of marginal-likelihood ascent in log-parameter space. The
    // returned model's likelihood is never below the starting point's.
    static GpModel fit(const std::vector<GpSample>& samples, const SpaceDims& dims,
                       KernelParams init, const FitOptions& options = {});

    // Generic entry point on raw points in [0,1]^d (last coordinate acts as
    // the fidelity axis).
    static GpModel fit_xy(const std::vector<std::vector<double>>& points,
                          const std::vector<double>& targets, KernelParams init,
                          const FitOptions& options = {});

    // Incremental interface used by the optimizer loop: absorb one sample and
    // refresh the factorization under the current hyperparameters (cheap), or
    // re-run the hyperparameter search (refit).
    void add(const GpSample& sample);
    void add_xy(const std::vector<double>& x, double value);
    void update_factorization();
    void refit(const FitOptions& options = {});
    // Replace the hyperparameters (invalidates the factorization).
    void set_params(KernelParams params);

    bool fitted() const { return factorized_; }
    std::size_t sample_count() const { return n_; }
    std::size_t site_count() const { return sites_.size(); }
    const KernelParams& params() const { return params_; }
    bool degenerate() const { return degenerate_; }

    // Posterior mean/variance in original target units; variance is clamped
    // at zero once numerical round-off drives it below zero.
    std::pair<double, double> posterior_at(const std::vector<double>& x) const;
    std::pair<double, double> posterior_at(const InfluenceConfiguration& arm, int fidelity) const;
    void posterior(const std::vector<std::vector<double>>& xs, std::vector<double>& means,
                   std::vector<double>& variances) const;

    // Marginal log-likelihood of the (standardized) data under the current or
    // given hyperparameters, and its gradient in log-parameter space. Exposed
    // so the gradients can be checked against finite differences.
    double mll() const;
    double mll_at(const KernelParams& params) const;
    std::vector<double> mll_gradient_at(const KernelParams& params) const;

    // Query view restricted to configurations with strengths[agent] == 0.
    SubspaceView restrict_to_subspace(int agent_index) const;

    const std::optional<SpaceDims>& dims() const { return dims_; }
    double target_mean() const { return mean_y_; }
    double target_std() const { return std_y_; }

private:
    friend class SubspaceView;

    struct Site {
        std::vector<double> x;
        long n = 0;
        double sum = 0.0;
    };

    std::size_t find_or_add_site(const std::vector<double>& x);
    void require_fitted() const;
    // Builds K over sites for `p` into `out` (row-major). Returns false if
    // factorization fails even with escalated jitter.
    void build_kernel_matrix(const KernelParams& p, std::vector<double>& out) const;
    bool factorize(const KernelParams& p, std::vector<double>& chol, double& jitter_used) const;
    double mll_core(const KernelParams& p, std::vector<double>* grad) const;

    std::optional<SpaceDims> dims_;
    std::size_t d_ = 0;
    std::vector<Site> sites_;
    std::size_t n_ = 0;
    double total_sum_ = 0.0;
    double total_sumsq_ = 0.0;

    KernelParams params_;
    double mean_y_ = 0.0;
    double std_y_ = 1.0;
    bool degenerate_ = false;
    bool factorized_ = false;

    // Factorization state under params_: chol(G) with G = K + noise * D^-1,
    // alpha = G^-1 ybar (standardized site means).
    std::vector<double> chol_;
    std::vector<double> alpha_;
    std::vector<double> ybar_;
    double cached_mll_ = 0.0;
};

// Posterior restricted to the slice where one agent's strength is zero.
class SubspaceView {
public:
    SubspaceView(const GpModel& model, int agent_index);

    std::pair<double, double> posterior_at(const InfluenceConfiguration& arm, int fidelity) const;
    int agent_index() const { return agent_; }

private:
    const GpModel* model_;
    int agent_;
};

} // namespace iamfm
