#ifndef CURVEREG_ORACLE_HPP
#define CURVEREG_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "curvereg/error.hpp"
#include "curvereg/model.hpp"
#include "curvereg/splines.hpp"

// Brute-force E-step for a single curve with one free warp dimension
// (K^h = 3, so w = (u, 1 - u)). The conditional expectations of the
// sufficient statistics are computed by composite Gauss-Legendre tensor
// quadrature over (u, a_sh, a_sc) against the unnormalised posterior.

namespace curvereg {

struct QuadratureSpec {
    int warp_panels = 200;
    int amplitude_panels = 20;
    /// Gauss-Legendre nodes per panel.
    int nodes = 8;
    /// Half-width of the amplitude box in conditional standard deviations.
    double box_sd = 10.0;
};

struct OracleResult {
    SufficientStats stats;
    double log_evidence = 0.0;
    /// Posterior mass in the outermost amplitude panels; small means the box
    /// was wide enough.
    double edge_mass = 0.0;
};

namespace detail {

/// n-point Gauss-Legendre nodes and weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(static_cast<std::size_t>(n), 0.0);
    w.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-15) break;
        }
        x[static_cast<std::size_t>(i)] = -z;
        x[static_cast<std::size_t>(n - 1 - i)] = z;
        w[static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(n - 1 - i)] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
}

/// Composite rule with `panels` equal panels on [lo, hi].
inline void composite_rule(double lo, double hi, int panels, int nodes, std::vector<double>& x,
                           std::vector<double>& w) {
    std::vector<double> gx, gw;
    gauss_legendre(nodes, gx, gw);
    x.clear();
    w.clear();
    const double h = (hi - lo) / panels;
    for (int p = 0; p < panels; ++p) {
        const double mid = lo + (p + 0.5) * h;
        for (int j = 0; j < nodes; ++j) {
            x.push_back(mid + 0.5 * h * gx[static_cast<std::size_t>(j)]);
            w.push_back(0.5 * h * gw[static_cast<std::size_t>(j)]);
        }
    }
}

struct WarpSlice {
    double u = 0.0;
    Vector fh;
    Matrix b;  // shape basis at warped times
};

inline WarpSlice warp_slice(const Curve& curve, const ModelParams& params, const BasisSpec& basis_f,
                            const BasisSpec& basis_h, double u) {
    WarpSlice s;
    s.u = u;
    WarpingEffects w;
    w.increments.resize(2);
    w.increments << u, 1.0 - u;
    const Vector h = WarpEvaluator(basis_h, curve.ts).apply(warp_coefficients(w));
    s.b = eval_basis(basis_f, h);
    s.fh = s.b * params.alpha;
    return s;
}

}  // namespace detail

inline OracleResult oracle_e_step(const Curve& curve, const ModelParams& params, const BasisSpec& basis_f,
                                  const BasisSpec& basis_h, const QuadratureSpec& spec = {}) {
    if (basis_h.num_basis() != 3) {
        throw Error(ErrorCode::unsupported, "quadrature E-step needs exactly 3 warp basis functions");
    }
    params.validate();
    const Vector& y = curve.ys;
    const double n = static_cast<double>(y.size());
    const Eigen::Matrix2d sigma_inv = params.Sigma.inverse();
    const Eigen::Vector2d mu0 = ModelParams::mu0();
    const double c1 = params.tau * params.kappa0[0] - 1.0;
    const double c2 = params.tau * params.kappa0[1] - 1.0;
    const double sy = y.sum();
    const double syy = y.squaredNorm();

    // Quadratic in a for fixed u: log p(y, a | u) = -a'Pa/2 + b'a + const.
    struct Quadratic {
        Eigen::Matrix2d precision;
        Eigen::Vector2d linear;
        double constant;
    };
    auto quadratic = [&](const detail::WarpSlice& s) {
        Eigen::Matrix2d ftf;
        ftf << n, s.fh.sum(), s.fh.sum(), s.fh.squaredNorm();
        Quadratic q;
        q.precision = ftf / params.sigma2 + sigma_inv;
        q.linear = Eigen::Vector2d(sy, s.fh.dot(y)) / params.sigma2 + sigma_inv * mu0;
        q.constant = -syy / (2.0 * params.sigma2) - 0.5 * mu0.dot(sigma_inv * mu0);
        return q;
    };

    // Coarse pass: locate the u range carrying the mass and the union of the
    // conditional amplitude boxes over it.
    std::vector<double> ux, uw;
    detail::composite_rule(0.0, 1.0, 400, 2, ux, uw);
    std::vector<double> log_marg(ux.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ux.size(); ++j) {
        const Quadratic q = quadratic(detail::warp_slice(curve, params, basis_f, basis_h, ux[j]));
        const Eigen::Vector2d mode = q.precision.ldlt().solve(q.linear);
        log_marg[j] = c1 * std::log(ux[j]) + c2 * std::log1p(-ux[j]) + q.constant + 0.5 * q.linear.dot(mode) -
                      0.5 * std::log(q.precision.determinant());
        best = std::max(best, log_marg[j]);
    }
    double u_lo = 1.0;
    double u_hi = 0.0;
    for (std::size_t j = 0; j < ux.size(); ++j) {
        if (log_marg[j] > best - 40.0) {
            u_lo = std::min(u_lo, ux[j]);
            u_hi = std::max(u_hi, ux[j]);
        }
    }
    u_lo = std::max(0.0, u_lo - 2.0 / 400.0);
    u_hi = std::min(1.0, u_hi + 2.0 / 400.0);

    Eigen::Vector2d a_lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector2d a_hi = -a_lo;
    for (std::size_t j = 0; j < ux.size(); ++j) {
        if (ux[j] < u_lo || ux[j] > u_hi) continue;
        const Quadratic q = quadratic(detail::warp_slice(curve, params, basis_f, basis_h, ux[j]));
        const Eigen::Matrix2d cov = q.precision.inverse();
        const Eigen::Vector2d mode = cov * q.linear;
        const Eigen::Vector2d sd = cov.diagonal().cwiseSqrt();
        a_lo = a_lo.cwiseMin(mode - spec.box_sd * sd);
        a_hi = a_hi.cwiseMax(mode + spec.box_sd * sd);
    }

    // Fine tensor quadrature.
    std::vector<double> fx, fw, shx, shw, scx, scw;
    detail::composite_rule(u_lo, u_hi, spec.warp_panels, spec.nodes, fx, fw);
    detail::composite_rule(a_lo[0], a_hi[0], spec.amplitude_panels, spec.nodes, shx, shw);
    detail::composite_rule(a_lo[1], a_hi[1], spec.amplitude_panels, spec.nodes, scx, scw);
    const std::size_t edge = static_cast<std::size_t>(spec.nodes);

    struct Moments {
        double log_scale = 0.0;
        double m0 = 0, sh = 0, sc = 0, shsh = 0, scsc = 0, shsc = 0, edge = 0;
    };
    std::vector<Moments> per_u(fx.size());
    std::vector<detail::WarpSlice> slices(fx.size());
    std::vector<double> logs(shx.size() * scx.size());
    double global_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < fx.size(); ++j) {
        const double u = fx[j];
        slices[j] = detail::warp_slice(curve, params, basis_f, basis_h, u);
        const Vector& fh = slices[j].fh;
        const double sf = fh.sum();
        const double sff = fh.squaredNorm();
        const double syf = fh.dot(y);
        const double prior_u = c1 * std::log(u) + c2 * std::log1p(-u);
        double local_max = -std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < shx.size(); ++p) {
            const double ash = shx[p];
            for (std::size_t q = 0; q < scx.size(); ++q) {
                const double asc = scx[q];
                const double rss = syy + n * ash * ash + asc * asc * sff - 2.0 * ash * sy - 2.0 * asc * syf +
                                   2.0 * ash * asc * sf;
                const Eigen::Vector2d d(ash - mu0[0], asc - mu0[1]);
                const double l = prior_u - rss / (2.0 * params.sigma2) - 0.5 * d.dot(sigma_inv * d);
                logs[p * scx.size() + q] = l;
                local_max = std::max(local_max, l);
            }
        }
        Moments& m = per_u[j];
        m.log_scale = local_max;
        global_max = std::max(global_max, local_max);
        for (std::size_t p = 0; p < shx.size(); ++p) {
            for (std::size_t q = 0; q < scx.size(); ++q) {
                const double e = fw[j] * shw[p] * scw[q] * std::exp(logs[p * scx.size() + q] - local_max);
                const double ash = shx[p];
                const double asc = scx[q];
                m.m0 += e;
                m.sh += e * ash;
                m.sc += e * asc;
                m.shsh += e * ash * ash;
                m.scsc += e * asc * asc;
                m.shsc += e * ash * asc;
                if (p < edge || p >= shx.size() - edge || q < edge || q >= scx.size() - edge) m.edge += e;
            }
        }
    }

    const Eigen::Index k_f = basis_f.num_basis();
    OracleResult out;
    out.stats = SufficientStats::zeros(k_f, 2);
    double z = 0.0;
    double m_sh = 0, m_sc = 0, m_shsh = 0, m_scsc = 0, m_shsc = 0, edge_mass = 0;
    for (std::size_t j = 0; j < fx.size(); ++j) {
        const Moments& m = per_u[j];
        const double s = std::exp(m.log_scale - global_max);
        const Matrix& b = slices[j].b;
        z += s * m.m0;
        m_sh += s * m.sh;
        m_sc += s * m.sc;
        m_shsh += s * m.shsh;
        m_scsc += s * m.scsc;
        m_shsc += s * m.shsc;
        edge_mass += s * m.edge;
        out.stats.yy += s * (syy * m.m0 - 2.0 * sy * m.sh + n * m.shsh);
        out.stats.By += s * (b.transpose() * y * m.sc - b.transpose() * Vector::Ones(y.size()) * m.shsc);
        out.stats.BB += s * (b.transpose() * b) * m.scsc;
        out.stats.w[0] += s * std::log(fx[j]) * m.m0;
        out.stats.w[1] += s * std::log1p(-fx[j]) * m.m0;
    }
    out.stats.yy /= z;
    out.stats.By /= z;
    out.stats.BB /= z;
    out.stats.w /= z;
    out.stats.a(0, 0) = m_shsh / z;
    out.stats.a(0, 1) = out.stats.a(1, 0) = (m_shsc - m_sh) / z;
    out.stats.a(1, 1) = (m_scsc - 2.0 * m_sc + z) / z;
    out.edge_mass = edge_mass / z;
    out.log_evidence = std::log(z) + global_max - 0.5 * n * std::log(2.0 * std::numbers::pi * params.sigma2) -
                       std::log(2.0 * std::numbers::pi) - 0.5 * std::log(params.Sigma.determinant()) +
                       dirichlet_log_normalizer(params.tau, params.kappa0);
    return out;
}

}  // namespace curvereg

#endif
