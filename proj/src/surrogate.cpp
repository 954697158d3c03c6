#include "iamfm/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace iamfm {

namespace {

constexpr double kDegenerateStd = 1e-12;
constexpr double kVarianceFloor = 0.0;
const double kJitterLevels[] = {0.0, 1e-8, 1e-6, 1e-4};

// In-place lower Cholesky of a row-major n x n matrix. Returns false on a
// non-positive pivot.
bool cholesky_lower(std::vector<double>& a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (sum <= 0.0 || !std::isfinite(sum)) return false;
                a[i * n + j] = std::sqrt(sum);
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    }
    return true;
}

// Solve L w = b in place.
void solve_lower(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= l[i * n + k] * b[k];
        b[i] = sum / l[i * n + i];
    }
}

// Solve L^T w = b in place.
void solve_lower_t(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = n; i-- > 0;) {
        double sum = b[i];
        for (std::size_t k = i + 1; k < n; ++k) sum -= l[k * n + i] * b[k];
        b[i] = sum / l[i * n + i];
    }
}

// Full inverse from the Cholesky factor: G^-1 = L^-T L^-1.
void inverse_from_cholesky(const std::vector<double>& l, std::size_t n, std::vector<double>& inv) {
    // Invert L into `inv` (lower triangular), then form L^-T L^-1.
    std::vector<double> linv(n * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        linv[j * n + j] = 1.0 / l[j * n + j];
        for (std::size_t i = j + 1; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t k = j; k < i; ++k) sum -= l[i * n + k] * linv[k * n + j];
            linv[i * n + j] = sum / l[i * n + i];
        }
    }
    inv.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = 0.0;
            for (std::size_t k = i; k < n; ++k) sum += linv[k * n + i] * linv[k * n + j];
            inv[i * n + j] = sum;
            inv[j * n + i] = sum;
        }
    }
}

struct LogParams {
    std::vector<double> u; // [log s2, log len..., log offset, log power, log noise]

    static LogParams from(const KernelParams& p) {
        LogParams lp;
        lp.u.reserve(p.action_lengthscales.size() + 4);
        lp.u.push_back(std::log(std::max(p.signal_variance, 1e-12)));
        for (double l : p.action_lengthscales) lp.u.push_back(std::log(std::max(l, 1e-12)));
        lp.u.push_back(std::log(std::max(p.fidelity_offset, 1e-10)));
        lp.u.push_back(std::log(std::max(p.fidelity_power, 1e-10)));
        lp.u.push_back(std::log(std::max(p.noise_variance, 1e-12)));
        return lp;
    }

    // Search box for the likelihood ascent. The fidelity offset is floored
    // strictly above zero: cross-fidelity correlation is the working premise
    // of the whole multi-fidelity setup, and the zero-coupling ridge is a
    // spurious near-tie that disconnects the top-fidelity slice from all
    // cheap observations.
    void clamp(std::size_t action_dims) {
        auto box = [](double& v, double lo, double hi) {
            v = std::min(std::max(v, std::log(lo)), std::log(hi));
        };
        box(u[0], 1e-4, 50.0);
        for (std::size_t a = 0; a < action_dims; ++a) box(u[1 + a], 0.05, 1.0);
        box(u[1 + action_dims], 0.05, 50.0);
        box(u[2 + action_dims], 0.05, 8.0);
        box(u[3 + action_dims], 1e-8, 10.0);
    }

    KernelParams to(std::size_t action_dims) const {
        KernelParams p;
        p.signal_variance = std::exp(u[0]);
        p.action_lengthscales.resize(action_dims);
        for (std::size_t a = 0; a < action_dims; ++a) p.action_lengthscales[a] = std::exp(u[1 + a]);
        p.fidelity_offset = std::exp(u[1 + action_dims]);
        p.fidelity_power = std::exp(u[2 + action_dims]);
        p.noise_variance = std::exp(u[3 + action_dims]);
        return p;
    }
};

double downsampling_factor(double f, double power) {
    const double t = 1.0 - f;
    if (t <= 0.0) return 0.0;
    return std::pow(t, 1.0 + power);
}

} // namespace

GpModel::GpModel(const SpaceDims& dims, KernelParams init) {
    dims_ = dims;
    d_ = static_cast<std::size_t>(dims.n_agents) + 1;
    if (init.action_lengthscales.size() != static_cast<std::size_t>(dims.n_agents)) {
        init = KernelParams::defaults(static_cast<std::size_t>(dims.n_agents));
    }
    params_ = std::move(init);
}

KernelParams KernelParams::defaults(std::size_t action_dims) {
    KernelParams p;
    p.signal_variance = 1.0;
    p.action_lengthscales.assign(action_dims, 0.5);
    p.fidelity_offset = 0.5;
    p.fidelity_power = 1.0;
    p.noise_variance = 0.1;
    return p;
}

double kernel_eval(const KernelParams& params, const std::vector<double>& x,
                   const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() != params.action_lengthscales.size() + 1) {
        raise(Errc::shape_mismatch, "kernel inputs disagree with lengthscale count");
    }
    const std::size_t a_dims = params.action_lengthscales.size();
    double quad = 0.0;
    for (std::size_t a = 0; a < a_dims; ++a) {
        const double d = (x[a] - y[a]) / params.action_lengthscales[a];
        quad += d * d;
    }
    const double rbf = std::exp(-0.5 * quad);
    const double g = params.fidelity_offset +
                     downsampling_factor(x[a_dims], params.fidelity_power) *
                         downsampling_factor(y[a_dims], params.fidelity_power);
    return params.signal_variance * rbf * g;
}

std::vector<double> SpaceDims::normalize(const InfluenceConfiguration& arm, int fidelity) const {
    validate_configuration(arm, n_agents, max_strength);
    if (fidelity < 1 || fidelity > fidelity_levels) {
        raise(Errc::invalid_fidelity, "fidelity " + std::to_string(fidelity) + " outside ladder");
    }
    std::vector<double> x(static_cast<std::size_t>(n_agents) + 1);
    for (int i = 0; i < n_agents; ++i) {
        x[static_cast<std::size_t>(i)] =
            max_strength == 0 ? 0.0
                              : static_cast<double>(arm.strengths[static_cast<std::size_t>(i)]) /
                                    static_cast<double>(max_strength);
    }
    x[static_cast<std::size_t>(n_agents)] =
        fidelity_levels == 1 ? 1.0
                             : static_cast<double>(fidelity - 1) /
                                   static_cast<double>(fidelity_levels - 1);
    return x;
}

std::size_t GpModel::find_or_add_site(const std::vector<double>& x) {
    for (std::size_t j = 0; j < sites_.size(); ++j) {
        if (sites_[j].x == x) return j;
    }
    Site s;
    s.x = x;
    sites_.push_back(std::move(s));
    return sites_.size() - 1;
}

void GpModel::add_xy(const std::vector<double>& x, double value) {
    if (d_ == 0) {
        d_ = x.size();
    } else if (x.size() != d_) {
        raise(Errc::shape_mismatch, "inconsistent input dimension");
    }
    Site& site = sites_[find_or_add_site(x)];
    site.n += 1;
    site.sum += value;
    n_ += 1;
    total_sum_ += value;
    total_sumsq_ += value * value;
    factorized_ = false;
}

void GpModel::add(const GpSample& sample) {
    if (!dims_) raise(Errc::bad_config, "model has no space dimensions; use add_xy");
    add_xy(dims_->normalize(sample.arm, sample.fidelity), sample.value);
}

void GpModel::build_kernel_matrix(const KernelParams& p, std::vector<double>& out) const {
    const std::size_t m = sites_.size();
    out.resize(m * m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double v = kernel_eval(p, sites_[i].x, sites_[j].x);
            out[i * m + j] = v;
            out[j * m + i] = v;
        }
    }
}

bool GpModel::factorize(const KernelParams& p, std::vector<double>& chol, double& jitter_used) const {
    const std::size_t m = sites_.size();
    std::vector<double> base;
    build_kernel_matrix(p, base);
    for (std::size_t i = 0; i < m; ++i) {
        base[i * m + i] += p.noise_variance / static_cast<double>(sites_[i].n);
    }
    for (double jitter : kJitterLevels) {
        chol = base;
        for (std::size_t i = 0; i < m; ++i) chol[i * m + i] += jitter;
        if (cholesky_lower(chol, m)) {
            jitter_used = jitter;
            return true;
        }
    }
    return false;
}

void GpModel::update_factorization() {
    if (n_ < 1) raise(Errc::bad_config, "no observations");
    if (params_.action_lengthscales.size() != d_ - 1) {
        params_ = KernelParams::defaults(d_ - 1);
    }
    const std::size_t m = sites_.size();

    mean_y_ = total_sum_ / static_cast<double>(n_);
    const double var = std::max(0.0, total_sumsq_ / static_cast<double>(n_) - mean_y_ * mean_y_);
    std_y_ = std::sqrt(var);
    degenerate_ = std_y_ < kDegenerateStd;
    if (degenerate_) {
        // Constant targets: intercept-only model, no covariance structure.
        std_y_ = 1.0;
        factorized_ = true;
        cached_mll_ = 0.0;
        return;
    }

    ybar_.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        ybar_[j] = (sites_[j].sum / static_cast<double>(sites_[j].n) - mean_y_) / std_y_;
    }

    double jitter = 0.0;
    if (!factorize(params_, chol_, jitter)) {
        raise(Errc::conditioning, "kernel matrix not positive definite even with jitter");
    }
    alpha_ = ybar_;
    solve_lower(chol_, m, alpha_);
    solve_lower_t(chol_, m, alpha_);
    cached_mll_ = mll_core(params_, nullptr);
    factorized_ = true;
}

double GpModel::mll_core(const KernelParams& p, std::vector<double>* grad) const {
    const std::size_t m = sites_.size();
    const std::size_t a_dims = p.action_lengthscales.size();
    const std::size_t n_params = a_dims + 4;

    std::vector<double> chol;
    double jitter = 0.0;
    if (!factorize(p, chol, jitter)) {
        if (grad != nullptr) grad->assign(n_params, 0.0);
        return -std::numeric_limits<double>::infinity();
    }

    // Standardized site means and within-site residual power.
    std::vector<double> yb(m);
    double site_meansq = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        yb[j] = (sites_[j].sum / static_cast<double>(sites_[j].n) - mean_y_) / std_y_;
        site_meansq += static_cast<double>(sites_[j].n) * yb[j] * yb[j];
    }
    const double total_std_sq =
        (total_sumsq_ - 2.0 * mean_y_ * total_sum_ + static_cast<double>(n_) * mean_y_ * mean_y_) /
        (std_y_ * std_y_);
    const double rr = std::max(0.0, total_std_sq - site_meansq);

    std::vector<double> a = yb;
    solve_lower(chol, m, a);
    solve_lower_t(chol, m, a);

    double quad = 0.0;
    for (std::size_t j = 0; j < m; ++j) quad += yb[j] * a[j];
    quad += rr / p.noise_variance;

    double logdet = 0.0;
    for (std::size_t j = 0; j < m; ++j) logdet += 2.0 * std::log(chol[j * m + j]);
    double log_counts = 0.0;
    for (std::size_t j = 0; j < m; ++j) log_counts += std::log(static_cast<double>(sites_[j].n));
    const double nd = static_cast<double>(n_);
    const double md = static_cast<double>(m);
    logdet += (nd - md) * std::log(p.noise_variance) + log_counts;

    const double mll = -0.5 * quad - 0.5 * logdet - 0.5 * nd * std::log(2.0 * M_PI);
    if (grad == nullptr) return mll;

    // Gradient in log space: d/du = theta * d/dtheta for positive params.
    std::vector<double> ginv;
    inverse_from_cholesky(chol, m, ginv);

    grad->assign(n_params, 0.0);
    const double power = p.fidelity_power;
    const double offset = p.fidelity_offset;

    std::vector<double> q(m), lq(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double t = 1.0 - sites_[j].x[a_dims];
        q[j] = t > 0.0 ? std::pow(t, 1.0 + power) : 0.0;
        lq[j] = t > 0.0 ? std::log(t) : 0.0;
    }

    // Accumulate 1/2 * sum_ij (alpha alpha^T - G^-1)_ij * dK_ij/du for every
    // kernel hyperparameter in one pass over site pairs.
    const std::size_t idx_s2 = 0;
    const std::size_t idx_off = 1 + a_dims;
    const std::size_t idx_pow = 2 + a_dims;
    const std::size_t idx_noise = 3 + a_dims;

    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const double w = a[i] * a[j] - ginv[i * m + j];
            double quad_term = 0.0;
            for (std::size_t dim = 0; dim < a_dims; ++dim) {
                const double diff = (sites_[i].x[dim] - sites_[j].x[dim]) / p.action_lengthscales[dim];
                quad_term += diff * diff;
            }
            const double rbf = std::exp(-0.5 * quad_term);
            const double gfid = offset + q[i] * q[j];
            const double k = p.signal_variance * rbf * gfid;

            (*grad)[idx_s2] += 0.5 * w * k;
            for (std::size_t dim = 0; dim < a_dims; ++dim) {
                const double diff = (sites_[i].x[dim] - sites_[j].x[dim]) / p.action_lengthscales[dim];
                (*grad)[1 + dim] += 0.5 * w * k * diff * diff;
            }
            (*grad)[idx_off] += 0.5 * w * p.signal_variance * rbf * offset;
            (*grad)[idx_pow] +=
                0.5 * w * p.signal_variance * rbf * power * q[i] * q[j] * (lq[i] + lq[j]);
        }
    }

    // Noise gradient: dG/dnoise = D^-1 plus the explicit noise terms.
    double a_dinv_a = 0.0;
    double tr_ginv_dinv = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        const double dinv = 1.0 / static_cast<double>(sites_[j].n);
        a_dinv_a += a[j] * a[j] * dinv;
        tr_ginv_dinv += ginv[j * m + j] * dinv;
    }
    const double s2n = p.noise_variance;
    (*grad)[idx_noise] =
        0.5 * s2n *
        (a_dinv_a + rr / (s2n * s2n) - (nd - md) / s2n - tr_ginv_dinv);

    return mll;
}

double GpModel::mll() const {
    require_fitted();
    if (degenerate_) return 0.0;
    return cached_mll_;
}

double GpModel::mll_at(const KernelParams& p) const {
    if (n_ < 2) raise(Errc::bad_config, "need at least two observations");
    if (degenerate_) return 0.0;
    return mll_core(p, nullptr);
}

std::vector<double> GpModel::mll_gradient_at(const KernelParams& p) const {
    if (n_ < 2) raise(Errc::bad_config, "need at least two observations");
    std::vector<double> grad;
    mll_core(p, &grad);
    return grad;
}

void GpModel::refit(const FitOptions& options) {
    if (n_ < 2) raise(Errc::bad_config, "need at least two observations to fit");

    // Standardization must be in place before evaluating likelihoods.
    mean_y_ = total_sum_ / static_cast<double>(n_);
    const double var = std::max(0.0, total_sumsq_ / static_cast<double>(n_) - mean_y_ * mean_y_);
    std_y_ = std::sqrt(var);
    degenerate_ = std_y_ < kDegenerateStd;
    if (degenerate_) {
        std_y_ = 1.0;
        factorized_ = true;
        cached_mll_ = 0.0;
        return;
    }

    const std::size_t a_dims = d_ - 1;
    if (params_.action_lengthscales.size() != a_dims) {
        params_ = KernelParams::defaults(a_dims);
    }

    LogParams best = LogParams::from(params_);
    double best_mll = mll_core(params_, nullptr);
    if (options.iterations <= 0) {
        update_factorization();
        return;
    }

    // One Adam ascent with the fixed step protocol, projected onto the search
    // box; the best point seen is kept, so a divergent tail never wins.
    auto ascend = [&](LogParams u) {
        u.clamp(a_dims);
        const std::size_t np = u.u.size();
        std::vector<double> mom(np, 0.0), vel(np, 0.0), grad(np, 0.0);
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        for (int step = 1; step <= options.iterations; ++step) {
            KernelParams cur = u.to(a_dims);
            const double value = mll_core(cur, &grad);
            if (!std::isfinite(value)) break;
            if (value > best_mll) {
                best_mll = value;
                best = u;
            }
            for (std::size_t i = 0; i < np; ++i) {
                mom[i] = b1 * mom[i] + (1.0 - b1) * grad[i];
                vel[i] = b2 * vel[i] + (1.0 - b2) * grad[i] * grad[i];
                const double mhat = mom[i] / (1.0 - std::pow(b1, step));
                const double vhat = vel[i] / (1.0 - std::pow(b2, step));
                u.u[i] += options.learning_rate * mhat / (std::sqrt(vhat) + eps);
            }
            u.clamp(a_dims);
        }
        KernelParams cur = u.to(a_dims);
        const double value = mll_core(cur, nullptr);
        if (std::isfinite(value) && value > best_mll) {
            best_mll = value;
            best = u;
        }
    };

    // Three starts: the incumbent parameters, the stock initialization, and a
    // noise-weighted point. The noise-only basin is locally stable at small
    // sample counts, so a pure warm-start chain can stay trapped in it; the
    // stock start's low noise floor can crush the signal variance before the
    // noise term catches up, which the noise-weighted start avoids.
    const LogParams incumbent = LogParams::from(params_);
    ascend(incumbent);
    const LogParams stock = LogParams::from(KernelParams::defaults(a_dims));
    if (stock.u != incumbent.u) ascend(stock);
    KernelParams weighted = KernelParams::defaults(a_dims);
    weighted.signal_variance = 0.3;
    weighted.noise_variance = 0.7;
    weighted.fidelity_offset = 2.0;
    ascend(LogParams::from(weighted));

    params_ = best.to(a_dims);
    update_factorization();
}

GpModel GpModel::fit(const std::vector<GpSample>& samples, const SpaceDims& dims, KernelParams init,
                     const FitOptions& options) {
    if (samples.size() < 2) raise(Errc::bad_config, "need at least two observations to fit");
    GpModel model;
    model.dims_ = dims;
    model.d_ = static_cast<std::size_t>(dims.n_agents) + 1;
    model.params_ = std::move(init);
    for (const auto& s : samples) model.add(s);
    model.refit(options);
    return model;
}

GpModel GpModel::fit_xy(const std::vector<std::vector<double>>& points,
                        const std::vector<double>& targets, KernelParams init,
                        const FitOptions& options) {
    if (points.size() != targets.size()) raise(Errc::shape_mismatch, "points/targets size mismatch");
    if (points.size() < 2) raise(Errc::bad_config, "need at least two observations to fit");
    GpModel model;
    model.params_ = std::move(init);
    for (std::size_t i = 0; i < points.size(); ++i) model.add_xy(points[i], targets[i]);
    model.refit(options);
    return model;
}

void GpModel::set_params(KernelParams params) {
    params_ = std::move(params);
    factorized_ = false;
}

void GpModel::require_fitted() const {
    if (!factorized_) raise(Errc::bad_config, "model not factorized; call update_factorization");
}

std::pair<double, double> GpModel::posterior_at(const std::vector<double>& x) const {
    require_fitted();
    if (x.size() != d_) raise(Errc::shape_mismatch, "query dimension mismatch");
    if (degenerate_) return {mean_y_, 0.0};

    const std::size_t m = sites_.size();
    std::vector<double> kstar(m);
    for (std::size_t j = 0; j < m; ++j) kstar[j] = kernel_eval(params_, x, sites_[j].x);

    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += kstar[j] * alpha_[j];

    std::vector<double> w = kstar;
    solve_lower(chol_, m, w);
    double explained = 0.0;
    for (std::size_t j = 0; j < m; ++j) explained += w[j] * w[j];
    double var = kernel_eval(params_, x, x) - explained;
    if (var < kVarianceFloor) var = 0.0;

    return {mean * std_y_ + mean_y_, var * std_y_ * std_y_};
}

std::pair<double, double> GpModel::posterior_at(const InfluenceConfiguration& arm,
                                                int fidelity) const {
    if (!dims_) raise(Errc::bad_config, "model has no space dimensions");
    return posterior_at(dims_->normalize(arm, fidelity));
}

void GpModel::posterior(const std::vector<std::vector<double>>& xs, std::vector<double>& means,
                        std::vector<double>& variances) const {
    means.resize(xs.size());
    variances.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const auto [mu, var] = posterior_at(xs[i]);
        means[i] = mu;
        variances[i] = var;
    }
}

SubspaceView GpModel::restrict_to_subspace(int agent_index) const {
    if (!dims_) raise(Errc::bad_config, "model has no space dimensions");
    if (agent_index < 0 || agent_index >= dims_->n_agents) {
        raise(Errc::bad_config, "agent index outside action space");
    }
    return SubspaceView(*this, agent_index);
}

SubspaceView::SubspaceView(const GpModel& model, int agent_index)
    : model_(&model), agent_(agent_index) {}

std::pair<double, double> SubspaceView::posterior_at(const InfluenceConfiguration& arm,
                                                     int fidelity) const {
    if (arm.strengths.at(static_cast<std::size_t>(agent_)) != 0) {
        raise(Errc::subspace_violation,
              "subspace view requires strength 0 for agent " + std::to_string(agent_));
    }
    return model_->posterior_at(arm, fidelity);
}

} // namespace iamfm
