#ifndef CURVEREG_SAEM_HPP
#define CURVEREG_SAEM_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <Eigen/Dense>

#include "curvereg/error.hpp"
#include "curvereg/model.hpp"
#include "curvereg/sampler.hpp"
#include "curvereg/splines.hpp"

namespace curvereg {

struct SaemConfig {
    int burn_in = 2000;
    int total_iters = 12000;
    double step_exponent = 0.75;
    int n_inner = 5;
    std::uint64_t seed = 1;
    bool adapt = true;
    /// Iterations per acceptance-rate window during burn-in adaptation.
    int adapt_window = 50;
    double initial_sigma_q = 0.1;
    /// Starting theta; init_params() is used when empty.
    std::optional<ModelParams> init;
    /// Keep theta at its starting value (E-step only). Used to check the
    /// stochastic approximation against the quadrature E-step.
    bool freeze_params = false;
    /// Points of the uniform grid on which fitted-curve averages are kept.
    int pred_grid_size = 201;
    int threads = 1;
    /// Wall-clock limit in seconds; 0 disables it.
    double max_seconds = 0.0;
    bool record_trajectory = true;

    void validate() const {
        if (burn_in < 0 || total_iters <= burn_in) {
            throw Error(ErrorCode::parameter, "need total_iters > burn_in >= 0");
        }
        if (!(step_exponent > 0.5 && step_exponent <= 1.0)) {
            throw Error(ErrorCode::parameter, "step exponent must lie in (0.5, 1]");
        }
        if (n_inner < 1) throw Error(ErrorCode::parameter, "n_inner must be >= 1");
        if (adapt_window < 1) throw Error(ErrorCode::parameter, "adapt_window must be >= 1");
        if (!(initial_sigma_q > 0.0)) throw Error(ErrorCode::parameter, "initial proposal scale must be > 0");
        if (pred_grid_size < 2) throw Error(ErrorCode::parameter, "prediction grid needs >= 2 points");
        if (threads < 1) throw Error(ErrorCode::parameter, "threads must be >= 1");
    }
};

struct ThetaSnapshot {
    int iter = 0;
    Vector alpha;
    double sigma2 = 0.0;
    Eigen::Matrix2d Sigma;
    double tau = 0.0;
};

/// Per-curve by-products of the fit.
struct CurveFit {
    std::string id;
    /// SA average of the warp increments, i.e. E[w_i | y_i].
    Vector mean_w;
    /// SA average of a_sh.
    double mean_shift = 0.0;
    /// SA average of a_sc B^f(h(t; w_i)) on the prediction grid (grid x K^f).
    Matrix mean_scaled_basis;
    SufficientStats sa_stats;
    long accepted_after_burn_in = 0;
    long proposed_after_burn_in = 0;
    double sigma_q = 0.0;

    double acceptance_rate() const {
        return proposed_after_burn_in > 0
                   ? static_cast<double>(accepted_after_burn_in) / static_cast<double>(proposed_after_burn_in)
                   : 0.0;
    }
};

struct FitResult {
    ModelParams theta;
    ModelParams theta_init;
    BasisSpec basis_f;
    BasisSpec basis_h;
    Vector pred_grid;
    long n_tot = 0;
    std::vector<CurveFit> curves;
    std::vector<ThetaSnapshot> trajectory;
    std::vector<std::string> warnings;

    SufficientStats total_stats() const {
        SufficientStats s = SufficientStats::zeros(basis_f.num_basis(), basis_h.num_basis() - 1);
        for (const auto& c : curves) s += c.sa_stats;
        return s;
    }

    const CurveFit& curve(const std::string& id) const {
        for (const auto& c : curves) {
            if (c.id == id) return c;
        }
        throw Error(ErrorCode::parameter, "unknown curve id '" + id + "'");
    }
};

// --- schedule and SA ---------------------------------------------------------

/// gamma_k = 1 for k <= B, (k - B)^(-alpha) afterwards.
inline double step_size(long k, long burn_in, double alpha) {
    if (k < 1) throw Error(ErrorCode::parameter, "iteration index starts at 1");
    if (k <= burn_in) return 1.0;
    return std::pow(static_cast<double>(k - burn_in), -alpha);
}

/// In-place old += gamma (mc - old) on every statistic.
inline void sa_update_inplace(SufficientStats& old, const SufficientStats& mc, double gamma) {
    old.yy += gamma * (mc.yy - old.yy);
    old.By += gamma * (mc.By - old.By);
    old.BB += gamma * (mc.BB - old.BB);
    old.a += gamma * (mc.a - old.a);
    old.w += gamma * (mc.w - old.w);
}

inline SufficientStats sa_update(SufficientStats old, const SufficientStats& mc, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error(ErrorCode::parameter, "SA step must lie in [0,1]");
    sa_update_inplace(old, mc, gamma);
    return old;
}

// --- M-step ------------------------------------------------------------------------

/// d/dtau of the tau part of Q.
inline double tau_gradient(double tau, const Vector& s_w, const Vector& kappa0, double n) {
    double g = kappa0.dot(s_w) + n * boost::math::digamma(tau);
    for (Eigen::Index k = 0; k < kappa0.size(); ++k) g -= n * kappa0[k] * boost::math::digamma(tau * kappa0[k]);
    return g;
}

inline double tau_hessian(double tau, const Vector& kappa0, double n) {
    double h = n * boost::math::trigamma(tau);
    for (Eigen::Index k = 0; k < kappa0.size(); ++k) {
        h -= n * kappa0[k] * kappa0[k] * boost::math::trigamma(tau * kappa0[k]);
    }
    return h;
}

/// Maximises sum_k (tau kappa_k - 1) S_w,k - N (sum_k lgamma(tau kappa_k) - lgamma(tau))
/// over tau > 0. Newton steps in log tau, kept inside a sign-change bracket of
/// the gradient and replaced by bisection whenever they leave it.
inline double newton_tau(const Vector& s_w, const Vector& kappa0, long n_curves, double tau_init,
                         double grad_tol = 1e-8) {
    if (s_w.size() != kappa0.size() || !s_w.allFinite()) {
        throw Error(ErrorCode::parameter, "S_w must be finite with one entry per increment");
    }
    const double n = static_cast<double>(n_curves);
    const double log_min = std::log(1e-10);
    const double log_max = std::log(1e12);
    auto grad = [&](double u) { return tau_gradient(std::exp(u), s_w, kappa0, n); };

    double u = std::clamp(std::log(tau_init > 0.0 && std::isfinite(tau_init) ? tau_init : 1.0), log_min, log_max);
    double g = grad(u);
    if (g == 0.0) return std::exp(u);

    // Bracket [lo, hi] with grad(lo) > 0 > grad(hi).
    double lo = u;
    double hi = u;
    double step = 1.0;
    if (g > 0.0) {
        while (grad(hi) > 0.0) {
            lo = hi;
            hi = std::min(hi + step, log_max);
            step *= 2.0;
            if (hi >= log_max && grad(hi) > 0.0) {
                throw Error(ErrorCode::max_iterations,
                            "tau objective increasing up to tau=1e12 (S_w at its supremum?)");
            }
        }
    } else {
        while (grad(lo) < 0.0) {
            hi = lo;
            lo = std::max(lo - step, log_min);
            step *= 2.0;
            if (lo <= log_min && grad(lo) < 0.0) {
                throw Error(ErrorCode::max_iterations, "tau objective decreasing down to tau=1e-10");
            }
        }
    }

    u = 0.5 * (lo + hi);
    for (int iter = 0; iter < 200; ++iter) {
        const double tau = std::exp(u);
        g = tau_gradient(tau, s_w, kappa0, n);
        if (std::abs(g) < grad_tol) return tau;
        if (g > 0.0) lo = u; else hi = u;
        // d/du grad(e^u) = tau * hessian
        const double dg = tau * tau_hessian(tau, kappa0, n);
        double next = (dg < 0.0) ? u - g / dg : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == u || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(u))) {
            return std::exp(next);
        }
        u = next;
    }
    throw Error(ErrorCode::max_iterations, "Newton iteration for tau did not converge (gradient " +
                                               std::to_string(g) + ")");
}

/// Closed-form maximiser of Q given the summed statistics.
inline ModelParams m_step(const SufficientStats& s, long n_tot, long n_curves, const Vector& kappa0,
                          double tau_prev, std::vector<std::string>* warnings = nullptr) {
    if (n_curves < 1) throw Error(ErrorCode::parameter, "m_step needs at least one curve");
    const Eigen::Index k_f = s.By.size();
    ModelParams p;
    p.kappa0 = kappa0;

    Matrix bb = 0.5 * (s.BB + s.BB.transpose());
    Eigen::LLT<Matrix> llt(bb);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
        const double ridge = 1e-8 * bb.trace() / static_cast<double>(k_f);
        bb.diagonal().array() += ridge > 0.0 ? ridge : 1e-8;
        llt.compute(bb);
        if (warnings) warnings->push_back("S_BB singular; ridge added");
        if (llt.info() != Eigen::Success) throw Error(ErrorCode::numerical, "S_BB not invertible after ridge");
    }
    p.alpha = llt.solve(s.By);

    p.sigma2 = (s.yy - 2.0 * s.By.dot(p.alpha) + p.alpha.dot(s.BB * p.alpha)) / static_cast<double>(n_tot);
    if (!(p.sigma2 > 1e-12)) {
        if (warnings) warnings->push_back("sigma2 update non-positive; floored at 1e-12");
        p.sigma2 = 1e-12;
    }

    p.Sigma = s.a / static_cast<double>(n_curves);
    p.Sigma = 0.5 * (p.Sigma + p.Sigma.transpose()).eval();
    if (p.Sigma.llt().info() != Eigen::Success || !(p.Sigma.determinant() > 0.0)) {
        const double jitter = std::max(1e-10 * p.Sigma.trace(), 1e-300);
        p.Sigma.diagonal().array() += jitter;
        if (warnings) warnings->push_back("Sigma update singular; jitter added");
    }

    p.tau = newton_tau(s.w, kappa0, n_curves, tau_prev);
    return p;
}

// --- initialisation -----------------------------------------------------------------

/// theta0: pooled least squares under identity warps, its residual variance,
/// Sigma0 = diag(sigma2_0, 0.01) and tau0 = K^h.
inline ModelParams init_params(const Dataset& data, const BasisSpec& basis_f, const BasisSpec& basis_h) {
    const Eigen::Index k_f = basis_f.num_basis();
    if (data.n_tot() <= k_f) throw Error(ErrorCode::parameter, "need more observations than shape coefficients");
    Matrix btb = Matrix::Zero(k_f, k_f);
    Vector bty = Vector::Zero(k_f);
    double yty = 0.0;
    for (const auto& c : data.curves()) {
        const Matrix b = eval_basis(basis_f, c.ts);
        btb += b.transpose() * b;
        bty += b.transpose() * c.ys;
        yty += c.ys.squaredNorm();
    }
    Eigen::LLT<Matrix> llt(btb);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
        btb.diagonal().array() += 1e-8 * std::max(btb.trace() / static_cast<double>(k_f), 1.0);
        llt.compute(btb);
    }
    ModelParams p;
    p.alpha = llt.solve(bty);
    double rss = 0.0;
    for (const auto& c : data.curves()) rss += (c.ys - eval_spline(basis_f, p.alpha, c.ts)).squaredNorm();
    p.sigma2 = std::max(rss / static_cast<double>(data.n_tot()), 1e-12);
    p.Sigma << p.sigma2, 0.0, 0.0, 0.01;
    p.tau = static_cast<double>(basis_h.num_basis());
    p.kappa0 = default_kappa0(basis_h);
    return p;
}

// --- driver ---------------------------------------------------------------------------

namespace detail {

inline void check_theta(const ModelParams& p, int iter) {
    const bool ok = p.alpha.allFinite() && std::isfinite(p.sigma2) && p.Sigma.allFinite() && std::isfinite(p.tau);
    if (!ok) throw Error(ErrorCode::numerical, "non-finite theta at iteration " + std::to_string(iter));
}

template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::exception_ptr> errors(t);
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < t; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += t) f(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace detail

/// SAEM with a Metropolis-Hastings-within-Gibbs E-step.
inline FitResult fit(const Dataset& data, const BasisSpec& basis_f, const BasisSpec& basis_h,
                     const SaemConfig& config) {
    config.validate();
    data.validate();
    if (data.size() == 0) throw Error(ErrorCode::parameter, "empty dataset");
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n_curves = data.size();
    const Eigen::Index k_f = basis_f.num_basis();
    const Eigen::Index k_w = basis_h.num_basis() - 1;

    FitResult result;
    result.basis_f = basis_f;
    result.basis_h = basis_h;
    result.n_tot = data.n_tot();
    result.pred_grid = uniform_grid(config.pred_grid_size);

    ModelParams theta = config.init ? *config.init : init_params(data, basis_f, basis_h);
    if (theta.alpha.size() != k_f || theta.kappa0.size() != k_w) {
        throw Error(ErrorCode::parameter, "initial parameters do not match the bases");
    }
    theta.validate();
    result.theta_init = theta;

    const WarpEvaluator grid_warp(basis_h, result.pred_grid);
    std::vector<CurveModel> models;
    std::vector<CurveState> states(n_curves);
    std::vector<Rng> rngs;
    std::vector<ChainWorkspace> spaces(n_curves);
    std::vector<SufficientStats> mc(n_curves);
    std::vector<LocalBasis> grid_rows(n_curves);
    std::vector<Vector> grid_h(n_curves);
    std::vector<long> window_acc(n_curves, 0), window_prop(n_curves, 0);
    result.curves.resize(n_curves);
    models.reserve(n_curves);
    for (std::size_t i = 0; i < n_curves; ++i) {
        models.emplace_back(data[i], basis_f, basis_h);
        rngs.push_back(make_rng(config.seed, i));
        states[i].a = AmplitudeEffects{};
        states[i].w = WarpingEffects{theta.kappa0};
        states[i].sigma_q = config.initial_sigma_q;
        states[i].sa_stats = SufficientStats::zeros(k_f, k_w);
        CurveFit& cf = result.curves[i];
        cf.id = data[i].id;
        cf.mean_w = Vector::Zero(k_w);
        cf.mean_scaled_basis = Matrix::Zero(config.pred_grid_size, k_f);
    }
    std::vector<long> acc_at_burn(n_curves, 0), prop_at_burn(n_curves, 0);

    for (int k = 1; k <= config.total_iters; ++k) {
        const double gamma = step_size(k, config.burn_in, config.step_exponent);
        const bool post_burn = k > config.burn_in;
        const bool adapt_now = config.adapt && !post_burn && k % config.adapt_window == 0;

        detail::parallel_for(n_curves, config.threads, [&](std::size_t i) {
            CurveState& st = states[i];
            ChainWorkspace& ws = spaces[i];
            chain_update(st, models[i], theta, config.n_inner, rngs[i], ws);
            curve_stats(data[i].ys, ws.current.rows, st.a, st.w, mc[i]);
            sa_update_inplace(st.sa_stats, mc[i], gamma);

            if (adapt_now) {
                const long acc = st.accept_count - window_acc[i];
                const long prop = st.propose_count - window_prop[i];
                st.sigma_q = adapt_scale(st.sigma_q, static_cast<double>(acc) / static_cast<double>(prop));
                window_acc[i] = st.accept_count;
                window_prop[i] = st.propose_count;
            }
            if (k == config.burn_in) {
                acc_at_burn[i] = st.accept_count;
                prop_at_burn[i] = st.propose_count;
            }
            if (post_burn) {
                CurveFit& cf = result.curves[i];
                cf.mean_w += gamma * (st.w.increments - cf.mean_w);
                cf.mean_shift += gamma * (st.a.shift - cf.mean_shift);
                grid_warp.apply(warp_coefficients(st.w), grid_h[i]);
                eval_basis_local(basis_f, grid_h[i], grid_rows[i]);
                const LocalBasis& rows = grid_rows[i];
                cf.mean_scaled_basis *= (1.0 - gamma);
                const double scale = gamma * st.a.scale;
                for (int j = 0; j < rows.rows(); ++j) {
                    const double* v = rows.row(j);
                    const int f = rows.first[static_cast<std::size_t>(j)];
                    for (int r = 0; r < rows.order; ++r) cf.mean_scaled_basis(j, f + r) += scale * v[r];
                }
            }
        });

        if (!config.freeze_params) {
            SufficientStats total = SufficientStats::zeros(k_f, k_w);
            for (const auto& st : states) total += st.sa_stats;
            if (!total.all_finite()) {
                throw Error(ErrorCode::numerical, "non-finite statistics at iteration " + std::to_string(k));
            }
            theta = m_step(total, result.n_tot, static_cast<long>(n_curves), theta.kappa0, theta.tau,
                           &result.warnings);
            detail::check_theta(theta, k);
        }
        if (config.record_trajectory) {
            result.trajectory.push_back(ThetaSnapshot{k, theta.alpha, theta.sigma2, theta.Sigma, theta.tau});
        }
        if (config.max_seconds > 0.0) {
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (elapsed > config.max_seconds) {
                throw Error(ErrorCode::time_limit, "fit exceeded " + std::to_string(config.max_seconds) +
                                                       " s at iteration " + std::to_string(k));
            }
        }
    }

    result.theta = theta;
    for (std::size_t i = 0; i < n_curves; ++i) {
        CurveFit& cf = result.curves[i];
        cf.sa_stats = states[i].sa_stats;
        cf.sigma_q = states[i].sigma_q;
        cf.accepted_after_burn_in = states[i].accept_count - acc_at_burn[i];
        cf.proposed_after_burn_in = states[i].propose_count - prop_at_burn[i];
    }
    // Keep the warning list short: repeated messages collapse to one.
    std::sort(result.warnings.begin(), result.warnings.end());
    result.warnings.erase(std::unique(result.warnings.begin(), result.warnings.end()), result.warnings.end());
    return result;
}

// --- prediction ------------------------------------------------------------------------

struct Prediction {
    Vector y_hat;
    Vector h_hat;
};

/// Predicted warp coefficients sum_{j<=k} E[w_j | y] of a fitted curve.
inline Vector predicted_warp_coefficients(const CurveFit& cf) {
    WarpingEffects w{cf.mean_w / cf.mean_w.sum()};
    return warp_coefficients(w);
}

/// Conditional-mean predictions of h_i and y_i on `ts`. h_hat is exact for
/// any t; y_hat interpolates the stored grid averages linearly between nodes.
inline Prediction predict(const FitResult& fit, const std::string& curve_id, const Vector& ts) {
    const CurveFit& cf = fit.curve(curve_id);
    Prediction out;
    out.h_hat = eval_spline(fit.basis_h, predicted_warp_coefficients(cf), ts);
    out.y_hat.resize(ts.size());
    const Eigen::Index g = fit.pred_grid.size();
    const Vector fitted_grid = cf.mean_scaled_basis * fit.theta.alpha;
    for (Eigen::Index j = 0; j < ts.size(); ++j) {
        const double pos = ts[j] * static_cast<double>(g - 1);
        const Eigen::Index lo = std::min<Eigen::Index>(static_cast<Eigen::Index>(pos), g - 2);
        const double frac = pos - static_cast<double>(lo);
        out.y_hat[j] = cf.mean_shift + (1.0 - frac) * fitted_grid[lo] + frac * fitted_grid[lo + 1];
    }
    return out;
}

}  // namespace curvereg

#endif
