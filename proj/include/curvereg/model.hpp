#ifndef CURVEREG_MODEL_HPP
#define CURVEREG_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "curvereg/error.hpp"
#include "curvereg/splines.hpp"

namespace curvereg {

using Rng = std::mt19937_64;

/// Independent generator for stream `stream` of a run seeded with `seed`.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5eedu};
    return Rng(seq);
}

/// Vertical shift and scale of the base shape.
struct AmplitudeEffects {
    double shift = 0.0;
    double scale = 1.0;

    Eigen::Vector2d as_vector() const { return {shift, scale}; }
    static AmplitudeEffects from_vector(const Eigen::Vector2d& v) { return {v[0], v[1]}; }
};

struct CurveEffects {
    AmplitudeEffects a;
    WarpingEffects w;
};

/// theta = (alpha, sigma2, Sigma, tau) plus the fixed Dirichlet base measure
/// kappa0 and the fixed amplitude mean mu0 = (0, 1).
struct ModelParams {
    Vector alpha;
    double sigma2 = 1.0;
    Eigen::Matrix2d Sigma = Eigen::Matrix2d::Identity();
    double tau = 1.0;
    Vector kappa0;

    static Eigen::Vector2d mu0() { return {0.0, 1.0}; }

    /// Throws a parameter error when an invariant fails. `allow_degenerate`
    /// admits sigma2 = 0 and a positive semi-definite Sigma (simulation only).
    void validate(bool allow_degenerate = false) const {
        if (!alpha.allFinite()) throw Error(ErrorCode::parameter, "alpha has non-finite entries");
        const bool sigma_ok = allow_degenerate ? sigma2 >= 0.0 : sigma2 > 0.0;
        if (!sigma_ok || !std::isfinite(sigma2)) {
            throw Error(ErrorCode::parameter, "sigma2 = " + std::to_string(sigma2) + " invalid");
        }
        if (!Sigma.allFinite() || std::abs(Sigma(0, 1) - Sigma(1, 0)) > 1e-12 * (1.0 + Sigma.norm())) {
            throw Error(ErrorCode::parameter, "Sigma must be finite and symmetric");
        }
        if (allow_degenerate) {
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(Sigma);
            if (es.eigenvalues().minCoeff() < -1e-12 * (1.0 + Sigma.norm())) {
                throw Error(ErrorCode::parameter, "Sigma is not positive semi-definite");
            }
        } else if (Sigma.llt().info() != Eigen::Success || Sigma.determinant() <= 0.0) {
            throw Error(ErrorCode::parameter, "Sigma is not positive definite");
        }
        if (!(tau > 0.0) || !std::isfinite(tau)) {
            throw Error(ErrorCode::parameter, "tau = " + std::to_string(tau) + " must be positive");
        }
        if (kappa0.size() < 1 || (kappa0.array() <= 0.0).any() || std::abs(kappa0.sum() - 1.0) > 1e-12) {
            throw Error(ErrorCode::parameter, "kappa0 must be a positive probability vector");
        }
    }
};

struct Curve {
    std::string id;
    Vector ts;
    Vector ys;

    Eigen::Index size() const { return ts.size(); }
};

class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::vector<Curve> curves) : curves_(std::move(curves)) { validate(); }

    const std::vector<Curve>& curves() const { return curves_; }
    std::size_t size() const { return curves_.size(); }
    const Curve& operator[](std::size_t i) const { return curves_[i]; }

    long n_tot() const {
        long n = 0;
        for (const auto& c : curves_) n += static_cast<long>(c.size());
        return n;
    }

    void validate() const {
        std::unordered_set<std::string> ids;
        for (const auto& c : curves_) {
            if (!ids.insert(c.id).second) throw Error(ErrorCode::parameter, "duplicate curve id '" + c.id + "'");
            if (c.ts.size() != c.ys.size() || c.ts.size() < 1) {
                throw Error(ErrorCode::parameter, "curve '" + c.id + "' has mismatched or empty data");
            }
            for (Eigen::Index j = 0; j < c.ts.size(); ++j) {
                if (!(c.ts[j] >= 0.0 && c.ts[j] <= 1.0)) {
                    throw Error(ErrorCode::domain, "curve '" + c.id + "' has t outside [0,1]");
                }
                if (j > 0 && !(c.ts[j] > c.ts[j - 1])) {
                    throw Error(ErrorCode::parameter, "curve '" + c.id + "' times not strictly increasing");
                }
                if (!std::isfinite(c.ys[j])) throw Error(ErrorCode::parameter, "curve '" + c.id + "' has non-finite y");
            }
        }
    }

private:
    std::vector<Curve> curves_;
};

/// Dirichlet base measure that makes E[h_i(t)] = t: differences of the
/// Greville abscissae of the warp basis.
inline Vector default_kappa0(const BasisSpec& basis_h) { return identity_warp(basis_h).increments; }

/// Analytic mean warp sum_k E[beta_k] B^h_k(t) under Dirichlet(tau * kappa0).
inline Vector mean_warp(const Vector& kappa0, const BasisSpec& basis_h, const Vector& ts) {
    return eval_spline(basis_h, warp_coefficients(WarpingEffects{kappa0}), ts);
}

/// Noiseless individual curve a_sh + a_sc * f(h(t)).
inline Vector individual_curve(const ModelParams& params, const AmplitudeEffects& a, const WarpingEffects& w,
                               const BasisSpec& basis_f, const BasisSpec& basis_h, const Vector& ts) {
    const Vector h = eval_warp(w, basis_h, ts);
    return (a.scale * eval_spline(basis_f, params.alpha, h)).array() + a.shift;
}

// --- sufficient statistics -------------------------------------------------

/// The five statistics that make the complete-data log-likelihood linear.
struct SufficientStats {
    double yy = 0.0;
    Vector By;
    Matrix BB;
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    Vector w;

    static SufficientStats zeros(Eigen::Index k_f, Eigen::Index k_w) {
        SufficientStats s;
        s.By = Vector::Zero(k_f);
        s.BB = Matrix::Zero(k_f, k_f);
        s.w = Vector::Zero(k_w);
        return s;
    }

    SufficientStats& operator+=(const SufficientStats& o) {
        yy += o.yy;
        By += o.By;
        BB += o.BB;
        a += o.a;
        w += o.w;
        return *this;
    }

    bool all_finite() const {
        return std::isfinite(yy) && By.allFinite() && BB.allFinite() && a.allFinite() && w.allFinite();
    }
};

/// Statistics of one curve given its effects and the shape basis already
/// evaluated at the warped times. Writes into `out` without reallocating.
inline void curve_stats(const Vector& ys, const LocalBasis& shape_rows, const AmplitudeEffects& a,
                        const WarpingEffects& w, SufficientStats& out) {
    const int order = shape_rows.order;
    out.yy = 0.0;
    out.By.setZero(shape_rows.num_basis);
    out.BB.setZero(shape_rows.num_basis, shape_rows.num_basis);
    for (int j = 0; j < shape_rows.rows(); ++j) {
        const double r = ys[j] - a.shift;
        out.yy += r * r;
        const double* v = shape_rows.row(j);
        const int f = shape_rows.first[static_cast<std::size_t>(j)];
        for (int p = 0; p < order; ++p) {
            out.By[f + p] += v[p] * r;
            for (int q = 0; q < order; ++q) out.BB(f + p, f + q) += v[p] * v[q];
        }
    }
    out.By *= a.scale;
    out.BB *= a.scale * a.scale;
    const Eigen::Vector2d d = a.as_vector() - ModelParams::mu0();
    out.a = d * d.transpose();
    out.w = w.increments.array().log();
}

inline SufficientStats curve_suff_stats(const Curve& curve, const CurveEffects& effects, const BasisSpec& basis_f,
                                        const BasisSpec& basis_h) {
    const Vector h = eval_warp(effects.w, basis_h, curve.ts);
    SufficientStats s;
    curve_stats(curve.ys, eval_basis_local(basis_f, h), effects.a, effects.w, s);
    return s;
}

inline SufficientStats suff_stats(const Dataset& data, const std::vector<CurveEffects>& effects,
                                  const BasisSpec& basis_f, const BasisSpec& basis_h) {
    if (effects.size() != data.size()) {
        throw Error(ErrorCode::parameter, "effects supplied for " + std::to_string(effects.size()) + " of " +
                                              std::to_string(data.size()) + " curves");
    }
    SufficientStats total = SufficientStats::zeros(basis_f.num_basis(), basis_h.num_basis() - 1);
    for (std::size_t i = 0; i < data.size(); ++i) total += curve_suff_stats(data[i], effects[i], basis_f, basis_h);
    return total;
}

// --- log-likelihood ----------------------------------------------------------

struct LogLikParts {
    double amplitude = 0.0;
    double warp = 0.0;
    double data = 0.0;

    double total() const { return amplitude + warp + data; }
};

/// log normaliser of Dirichlet(tau * kappa0): log Gamma(tau) - sum_k log Gamma(tau kappa_k).
inline double dirichlet_log_normalizer(double tau, const Vector& kappa0) {
    double s = std::lgamma(tau);
    for (Eigen::Index k = 0; k < kappa0.size(); ++k) s -= std::lgamma(tau * kappa0[k]);
    return s;
}

/// Complete-data log-likelihood evaluated from (summed) sufficient statistics.
/// As a function of theta this is the M-step objective Q.
inline LogLikParts expected_loglik(const ModelParams& params, const SufficientStats& s, long n_tot, long n_curves) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double n = static_cast<double>(n_curves);
    LogLikParts out;
    const Eigen::Matrix2d sigma_inv = params.Sigma.inverse();
    out.amplitude = -n * std::log(two_pi) - 0.5 * n * std::log(params.Sigma.determinant()) -
                    0.5 * (s.a * sigma_inv).trace();
    out.warp = ((params.tau * params.kappa0.array() - 1.0) * s.w.array()).sum() +
               n * dirichlet_log_normalizer(params.tau, params.kappa0);
    const double rss = s.yy - 2.0 * s.By.dot(params.alpha) + params.alpha.dot(s.BB * params.alpha);
    out.data = -0.5 * static_cast<double>(n_tot) * std::log(two_pi * params.sigma2) - rss / (2.0 * params.sigma2);
    return out;
}

/// Complete-data log-likelihood l_c^a + l_c^w + l_c^y for given effects.
inline LogLikParts complete_loglik(const ModelParams& params, const Dataset& data,
                                   const std::vector<CurveEffects>& effects, const BasisSpec& basis_f,
                                   const BasisSpec& basis_h) {
    params.validate();
    if (effects.size() != data.size()) throw Error(ErrorCode::parameter, "effects/curves count mismatch");
    for (const auto& e : effects) validate_warp(e.w, basis_h.num_basis() - 1);
    return expected_loglik(params, suff_stats(data, effects, basis_f, basis_h), data.n_tot(),
                           static_cast<long>(data.size()));
}

// --- simulation --------------------------------------------------------------

/// Draws from Dirichlet(concentration) by normalised gammas; any draw with an
/// increment below 1e-12 is discarded and redrawn.
inline WarpingEffects sample_dirichlet(const Vector& concentration, Rng& rng) {
    WarpingEffects w;
    w.increments.resize(concentration.size());
    for (int attempt = 0; attempt < 10000; ++attempt) {
        double sum = 0.0;
        for (Eigen::Index k = 0; k < concentration.size(); ++k) {
            std::gamma_distribution<double> g(concentration[k], 1.0);
            w.increments[k] = g(rng);
            sum += w.increments[k];
        }
        if (!(sum > 0.0)) continue;
        w.increments /= sum;
        if (w.increments.minCoeff() >= 1e-12) return w;
    }
    throw Error(ErrorCode::numerical, "Dirichlet sampler kept producing increments below 1e-12");
}

/// Draw from N(mean, cov) for a positive semi-definite 2x2 covariance.
inline Eigen::Vector2d sample_normal2(const Eigen::Vector2d& mean, const Eigen::Matrix2d& cov, Rng& rng) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Eigen::Vector2d sd = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    std::normal_distribution<double> normal;
    Eigen::Vector2d z;
    z[0] = normal(rng);
    z[1] = normal(rng);
    return mean + es.eigenvectors() * sd.cwiseProduct(z);
}

struct SimulatedData {
    Dataset data;
    std::vector<CurveEffects> truth;
};

inline std::string curve_label(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "curve_%03zu", i + 1);
    return buf;
}

/// Simulates n_curves curves on n_points equally spaced times. With
/// `concentrations` non-empty, curve i draws its warp from
/// Dirichlet(concentrations[i % size]) instead of Dirichlet(tau * kappa0).
inline SimulatedData simulate(const ModelParams& params, const BasisSpec& basis_f, const BasisSpec& basis_h,
                              int n_curves, int n_points, std::uint64_t seed,
                              const std::vector<Vector>& concentrations = {}) {
    params.validate(/*allow_degenerate=*/true);
    if (n_points < 2) throw Error(ErrorCode::parameter, "n_points must be >= 2");
    if (n_curves < 1) throw Error(ErrorCode::parameter, "n_curves must be >= 1");
    if (params.alpha.size() != basis_f.num_basis() || params.kappa0.size() != basis_h.num_basis() - 1) {
        throw Error(ErrorCode::parameter, "parameter sizes do not match the bases");
    }
    const Vector ts = uniform_grid(n_points);
    const Vector dirichlet = params.tau * params.kappa0;
    const double noise_sd = std::sqrt(params.sigma2);

    std::vector<Curve> curves;
    SimulatedData out;
    for (int i = 0; i < n_curves; ++i) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
        CurveEffects e;
        e.a = AmplitudeEffects::from_vector(sample_normal2(ModelParams::mu0(), params.Sigma, rng));
        e.w = sample_dirichlet(concentrations.empty() ? dirichlet
                                                      : concentrations[static_cast<std::size_t>(i) % concentrations.size()],
                               rng);
        Vector ys = individual_curve(params, e.a, e.w, basis_f, basis_h, ts);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (Eigen::Index j = 0; j < ys.size(); ++j) ys[j] += noise_sd * noise(rng);
        curves.push_back(Curve{curve_label(static_cast<std::size_t>(i)), ts, std::move(ys)});
        out.truth.push_back(std::move(e));
    }
    out.data = Dataset(std::move(curves));
    return out;
}

/// A simulation setting: bases, true parameters and curve count.
struct Scenario {
    std::string name;
    BasisSpec basis_f;
    BasisSpec basis_h;
    ModelParams params;
    int n_curves = 20;
};

inline Scenario make_scenario(const std::string& name, const std::vector<double>& alpha, int k_h) {
    Scenario s;
    s.name = name;
    s.basis_f = make_basis(static_cast<int>(alpha.size()), 4);
    s.basis_h = make_basis(k_h, 4);
    s.params.alpha = Eigen::Map<const Vector>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
    s.params.sigma2 = 25.0;
    s.params.Sigma << 400.0, 0.0, 0.0, 0.0025;
    s.params.tau = 10.0;
    s.params.kappa0 = default_kappa0(s.basis_h);
    return s;
}

/// Bowl-shaped base curve, 5 shape and 6 warp basis functions.
inline Scenario shape1_scenario() { return make_scenario("shape1", {0, -200, -500, -200, 0}, 6); }

/// Multi-modal base curve, 11 shape and 9 warp basis functions.
inline Scenario shape2_scenario() {
    return make_scenario("shape2", {-350, -300, -700, -100, 400, -100, -700, 100, -800, 400, -450}, 9);
}

inline Scenario scenario_by_name(const std::string& name) {
    if (name == "shape1") return shape1_scenario();
    if (name == "shape2") return shape2_scenario();
    throw Error(ErrorCode::parameter, "unknown scenario '" + name + "' (expected shape1 or shape2)");
}

/// M distinct Dirichlet means for grouped-warp experiments. Family m has
/// mean warp coefficients xi^p_m (xi the Greville abscissae) with exponents
/// spread geometrically around 1, so the middle family is the identity warp.
inline std::vector<Vector> warp_family_means(const BasisSpec& basis_h, int families, double spread = 0.5) {
    const Vector xi = greville(basis_h);
    std::vector<Vector> out;
    for (int m = 0; m < families; ++m) {
        const double p = std::exp(spread * (m - 0.5 * (families - 1)));
        const Vector beta = xi.array().pow(p);
        Vector inc = beta.tail(beta.size() - 1) - beta.head(beta.size() - 1);
        out.push_back(inc / inc.sum());
    }
    return out;
}

}  // namespace curvereg

#endif
