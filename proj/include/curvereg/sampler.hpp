#ifndef CURVEREG_SAMPLER_HPP
#define CURVEREG_SAMPLER_HPP

#include <cmath>
#include <limits>
#include <random>
#include <utility>

#include <Eigen/Dense>

#include "curvereg/error.hpp"
#include "curvereg/model.hpp"
#include "curvereg/splines.hpp"

namespace curvereg {

/// Shape basis and base-shape values at the warped sampling times of one curve.
struct WarpedShape {
    Vector h;
    LocalBasis rows;
    Vector fh;
};

/// One curve bound to the two bases, with the warp-basis rows at its
/// sampling times precomputed once.
class CurveModel {
public:
    CurveModel(const Curve& curve, const BasisSpec& basis_f, const BasisSpec& basis_h)
        : curve_(&curve), basis_f_(&basis_f), basis_h_(&basis_h), warp_(basis_h, curve.ts) {}

    const Curve& curve() const { return *curve_; }
    const BasisSpec& basis_f() const { return *basis_f_; }
    const BasisSpec& basis_h() const { return *basis_h_; }
    Eigen::Index num_increments() const { return basis_h_->num_basis() - 1; }

    /// Evaluates h(t_j; w), the shape rows B^f(h) and f(h) = B^f(h) alpha.
    void warp(const WarpingEffects& w, const Vector& alpha, WarpedShape& out) const {
        warp_.apply(warp_coefficients(w), out.h);
        eval_basis_local(*basis_f_, out.h, out.rows);
        refresh_shape(alpha, out);
    }

    /// Recomputes f(h) after alpha changed; the rows stay valid.
    void refresh_shape(const Vector& alpha, WarpedShape& out) const {
        out.fh.resize(out.rows.rows());
        for (int j = 0; j < out.rows.rows(); ++j) out.fh[j] = out.rows.dot(j, alpha);
    }

    /// log p(y | a, w) up to the constant -n/2 log(2 pi sigma2).
    double data_loglik(const AmplitudeEffects& a, const Vector& fh, double sigma2) const {
        const Vector& y = curve_->ys;
        double rss = 0.0;
        for (Eigen::Index j = 0; j < y.size(); ++j) {
            const double r = y[j] - a.shift - a.scale * fh[j];
            rss += r * r;
        }
        return -rss / (2.0 * sigma2);
    }

private:
    const Curve* curve_;
    const BasisSpec* basis_f_;
    const BasisSpec* basis_h_;
    WarpEvaluator warp_;
};

// --- Gibbs step for the amplitude effects ------------------------------------

struct Gaussian2 {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
};

/// Full conditional of a_i given y_i and f(h(t)): N(mu_i, Sigma_i) with
/// Sigma_i = (F'F / sigma2 + Sigma^-1)^-1, mu_i = Sigma_i (F'y / sigma2 + Sigma^-1 mu0)
/// and F = [1 | f(h(t))].
inline Gaussian2 amplitude_conditional(const Vector& ys, const Vector& fh, const ModelParams& params) {
    const double n = static_cast<double>(ys.size());
    Eigen::Matrix2d ftf;
    ftf << n, fh.sum(), fh.sum(), fh.squaredNorm();
    const Eigen::Vector2d fty(ys.sum(), fh.dot(ys));
    const Eigen::Matrix2d sigma_inv = params.Sigma.inverse();
    Eigen::Matrix2d precision = ftf / params.sigma2 + sigma_inv;
    Eigen::LLT<Eigen::Matrix2d> llt(precision);
    if (llt.info() != Eigen::Success || !(precision.determinant() > 0.0)) {
        precision += 1e-10 * precision.trace() * Eigen::Matrix2d::Identity();
        llt.compute(precision);
        if (llt.info() != Eigen::Success || !(precision.determinant() > 0.0)) {
            throw Error(ErrorCode::numerical, "amplitude conditional precision is singular");
        }
    }
    Gaussian2 g;
    g.cov = llt.solve(Eigen::Matrix2d::Identity());
    g.cov = 0.5 * (g.cov + g.cov.transpose());
    g.mean = g.cov * (fty / params.sigma2 + sigma_inv * ModelParams::mu0());
    return g;
}

inline AmplitudeEffects draw_gaussian2(const Gaussian2& g, Rng& rng) {
    std::normal_distribution<double> normal;
    Eigen::Vector2d z;
    z[0] = normal(rng);
    z[1] = normal(rng);
    const Eigen::Matrix2d l = g.cov.llt().matrixL();
    return AmplitudeEffects::from_vector(g.mean + l * z);
}

inline AmplitudeEffects gibbs_a(const Curve& curve, const WarpingEffects& w, const ModelParams& params,
                                const BasisSpec& basis_f, const BasisSpec& basis_h, Rng& rng) {
    validate_warp(w, basis_h.num_basis() - 1);
    const Vector fh = eval_spline(basis_f, params.alpha, eval_warp(w, basis_h, curve.ts));
    return draw_gaussian2(amplitude_conditional(curve.ys, fh, params), rng);
}

// --- clr / softmax -------------------------------------------------------------

/// Centred log-ratio map from the open simplex onto the zero-sum hyperplane.
inline Vector clr(const WarpingEffects& w) {
    if ((w.increments.array() <= 0.0).any()) throw Error(ErrorCode::domain, "clr of a non-interior simplex point");
    Vector x = w.increments.array().log();
    x.array() -= x.mean();
    return x;
}

/// Softmax, the inverse of clr on the zero-sum hyperplane.
inline WarpingEffects softmax_inv(const Vector& x) {
    WarpingEffects w;
    w.increments = (x.array() - x.maxCoeff()).exp();
    w.increments /= w.increments.sum();
    return w;
}

/// Random-walk proposal on the clr hyperplane: iid N(0, sigma_q^2) steps
/// projected onto the zero-sum subspace, which gives covariance
/// sigma_q^2 (I - 11'/d) with d the number of increments.
inline WarpingEffects propose_w(const WarpingEffects& w, double sigma_q, Rng& rng) {
    if (sigma_q == 0.0) return w;
    std::normal_distribution<double> normal(0.0, sigma_q);
    Vector z(w.size());
    for (Eigen::Index k = 0; k < z.size(); ++k) z[k] = normal(rng);
    z.array() -= z.mean();
    return softmax_inv(clr(w) + z);
}

// --- Metropolis-Hastings step for the warping effects ---------------------------

/// Prior plus clr Jacobian: sum_k tau kappa_k log w_k. Minus infinity when an
/// increment underflowed to zero, so such proposals are always rejected.
inline double warp_log_prior_jacobian(const WarpingEffects& w, const ModelParams& params) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        const double v = w.increments[k];
        if (!(v > 0.0)) return -std::numeric_limits<double>::infinity();
        s += params.tau * params.kappa0[k] * std::log(v);
    }
    return s;
}

/// Log acceptance ratio for moving w -> w_star: the full-conditional ratio
/// p(y|a,w*)p(w*) / p(y|a,w)p(w) times prod_l w*_l / w_l.
inline double log_acceptance_ratio(const CurveModel& model, const AmplitudeEffects& a, const WarpingEffects& w,
                                   const WarpingEffects& w_star, const ModelParams& params) {
    WarpedShape cur;
    WarpedShape prop;
    model.warp(w, params.alpha, cur);
    model.warp(w_star, params.alpha, prop);
    return model.data_loglik(a, prop.fh, params.sigma2) - model.data_loglik(a, cur.fh, params.sigma2) +
           warp_log_prior_jacobian(w_star, params) - warp_log_prior_jacobian(w, params);
}

struct MhResult {
    WarpingEffects w;
    bool accepted = false;
};

/// Scratch buffers for one chain; `current` always matches the chain's w.
struct ChainWorkspace {
    WarpedShape current;
    WarpedShape proposal;
    double current_loglik = 0.0;
};

/// One MH update of w with the amplitude effects held fixed. `ws.current`
/// must hold the warped shape of `w` and `ws.current_loglik` its data
/// log-likelihood under `a`.
inline bool mh_step_w(const CurveModel& model, const AmplitudeEffects& a, WarpingEffects& w,
                      const ModelParams& params, double sigma_q, Rng& rng, ChainWorkspace& ws) {
    WarpingEffects w_star = propose_w(w, sigma_q, rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    const double prior_star = warp_log_prior_jacobian(w_star, params);
    if (!std::isfinite(prior_star)) return false;
    model.warp(w_star, params.alpha, ws.proposal);
    const double loglik_star = model.data_loglik(a, ws.proposal.fh, params.sigma2);
    const double log_ratio = loglik_star - ws.current_loglik + prior_star - warp_log_prior_jacobian(w, params);
    if (!(std::log(u) < log_ratio)) return false;
    w = std::move(w_star);
    std::swap(ws.current, ws.proposal);
    ws.current_loglik = loglik_star;
    return true;
}

inline MhResult mh_step_w(const Curve& curve, const AmplitudeEffects& a, const WarpingEffects& w,
                          const ModelParams& params, double sigma_q, const BasisSpec& basis_f,
                          const BasisSpec& basis_h, Rng& rng) {
    validate_warp(w, basis_h.num_basis() - 1);
    const CurveModel model(curve, basis_f, basis_h);
    ChainWorkspace ws;
    model.warp(w, params.alpha, ws.current);
    ws.current_loglik = model.data_loglik(a, ws.current.fh, params.sigma2);
    MhResult r{w, false};
    r.accepted = mh_step_w(model, a, r.w, params, sigma_q, rng, ws);
    return r;
}

// --- chain state --------------------------------------------------------------------

/// Per-curve chain: current (a, w), the curve's SA-averaged statistics,
/// acceptance counters and the proposal scale.
struct CurveState {
    AmplitudeEffects a;
    WarpingEffects w;
    SufficientStats sa_stats;
    long accept_count = 0;
    long propose_count = 0;
    double sigma_q = 0.1;
};

/// n_inner rounds of (Gibbs a, MH w). Leaves `ws.current` at the final w.
inline void chain_update(CurveState& state, const CurveModel& model, const ModelParams& params, int n_inner,
                         Rng& rng, ChainWorkspace& ws) {
    if (n_inner < 1) throw Error(ErrorCode::parameter, "n_inner must be >= 1");
    model.warp(state.w, params.alpha, ws.current);
    for (int r = 0; r < n_inner; ++r) {
        state.a = draw_gaussian2(amplitude_conditional(model.curve().ys, ws.current.fh, params), rng);
        ws.current_loglik = model.data_loglik(state.a, ws.current.fh, params.sigma2);
        if (mh_step_w(model, state.a, state.w, params, state.sigma_q, rng, ws)) ++state.accept_count;
        ++state.propose_count;
    }
}

inline CurveState chain_update(CurveState state, const Curve& curve, const ModelParams& params,
                               const BasisSpec& basis_f, const BasisSpec& basis_h, int n_inner, Rng& rng) {
    validate_warp(state.w, basis_h.num_basis() - 1);
    const CurveModel model(curve, basis_f, basis_h);
    ChainWorkspace ws;
    chain_update(state, model, params, n_inner, rng, ws);
    return state;
}

/// Acceptance band targeted by the proposal-scale adaptation.
inline constexpr double kAcceptLow = 0.17;
inline constexpr double kAcceptHigh = 0.33;
inline constexpr double kAcceptTarget = 0.25;

/// Multiplicative Robbins-Monro correction of the proposal scale; a rate
/// already inside the target band leaves it unchanged.
inline double adapt_scale(double sigma_q, double recent_accept_rate) {
    if (recent_accept_rate >= kAcceptLow && recent_accept_rate <= kAcceptHigh) return sigma_q;
    return std::exp(std::log(sigma_q) + (recent_accept_rate - kAcceptTarget));
}

}  // namespace curvereg

#endif
