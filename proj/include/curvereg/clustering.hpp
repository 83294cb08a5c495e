#ifndef CURVEREG_CLUSTERING_HPP
#define CURVEREG_CLUSTERING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "curvereg/error.hpp"
#include "curvereg/model.hpp"
#include "curvereg/splines.hpp"

namespace curvereg {

struct ClusterResult {
    std::vector<int> labels;
    /// One row per cluster: K-means centres or mixture component coefficients.
    Matrix centers;
    /// K-means: within-cluster sum of squares. Unused by the mixture.
    double inertia = 0.0;
    /// Mixture: observed-data log-likelihood at the final parameters.
    double log_likelihood = 0.0;
    /// Mixture weights pi (mixture only).
    Vector weights;
    double sigma2 = 0.0;
    /// Inertia after each Lloyd update (best restart), or the observed
    /// log-likelihood at each EM iteration.
    std::vector<double> trace;
    std::vector<std::string> warnings;
};

namespace detail {

inline double squared_distance(const Matrix& x, Eigen::Index i, const Matrix& c, Eigen::Index k) {
    return (x.row(i) - c.row(k)).squaredNorm();
}

inline double inertia_of(const Matrix& x, const std::vector<int>& labels, const Matrix& centers) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) s += squared_distance(x, i, centers, labels[static_cast<std::size_t>(i)]);
    return s;
}

/// k-means++ seeding.
inline Matrix kmeanspp_seed(const Matrix& x, int m, Rng& rng) {
    const Eigen::Index n = x.rows();
    Matrix centers(m, x.cols());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    centers.row(0) = x.row(pick(rng));
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (int k = 1; k < m; ++k) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& d = d2[static_cast<std::size_t>(i)];
            d = std::min(d, squared_distance(x, i, centers, k - 1));
            total += d;
        }
        Eigen::Index chosen = 0;
        if (total > 0.0) {
            std::uniform_real_distribution<double> unif(0.0, total);
            double r = unif(rng);
            for (chosen = 0; chosen < n - 1; ++chosen) {
                r -= d2[static_cast<std::size_t>(chosen)];
                if (r < 0.0) break;
            }
        } else {
            chosen = pick(rng);
        }
        centers.row(k) = x.row(chosen);
    }
    return centers;
}

struct LloydRun {
    std::vector<int> labels;
    Matrix centers;
    double inertia = 0.0;
    std::vector<double> trace;
};

inline LloydRun lloyd(const Matrix& x, Matrix centers, int max_iters) {
    const Eigen::Index n = x.rows();
    const int m = static_cast<int>(centers.rows());
    LloydRun run;
    run.labels.assign(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = squared_distance(x, i, centers, 0);
            for (int k = 1; k < m; ++k) {
                const double d = squared_distance(x, i, centers, k);
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            if (run.labels[static_cast<std::size_t>(i)] != best) {
                run.labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        // Refill empty clusters with the point farthest from its centre.
        std::vector<int> counts(static_cast<std::size_t>(m), 0);
        for (int l : run.labels) ++counts[static_cast<std::size_t>(l)];
        for (int k = 0; k < m; ++k) {
            if (counts[static_cast<std::size_t>(k)] > 0) continue;
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int l = run.labels[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(l)] < 2) continue;
                const double d = squared_distance(x, i, centers, l);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far < 0) break;
            --counts[static_cast<std::size_t>(run.labels[static_cast<std::size_t>(far)])];
            run.labels[static_cast<std::size_t>(far)] = k;
            counts[static_cast<std::size_t>(k)] = 1;
            changed = true;
        }
        centers.setZero();
        for (Eigen::Index i = 0; i < n; ++i) centers.row(run.labels[static_cast<std::size_t>(i)]) += x.row(i);
        for (int k = 0; k < m; ++k) {
            if (counts[static_cast<std::size_t>(k)] > 0) centers.row(k) /= counts[static_cast<std::size_t>(k)];
        }
        run.trace.push_back(inertia_of(x, run.labels, centers));
        if (!changed) break;
    }
    run.centers = std::move(centers);
    run.inertia = run.trace.empty() ? 0.0 : run.trace.back();
    return run;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding; the best of `restarts` runs by
/// inertia. Rows of `points` are observations (here: predicted warp increments).
inline ClusterResult kmeans_warps(const Matrix& points, int m, std::uint64_t seed, int restarts = 10,
                                  int max_iters = 300) {
    if (m < 1) throw Error(ErrorCode::parameter, "cluster count must be >= 1");
    if (m > points.rows()) {
        throw Error(ErrorCode::parameter, "cluster count " + std::to_string(m) + " exceeds " +
                                              std::to_string(points.rows()) + " points");
    }
    if (!points.allFinite()) throw Error(ErrorCode::parameter, "points must be finite");
    if (restarts < 1) throw Error(ErrorCode::parameter, "restarts must be >= 1");
    Rng rng = make_rng(seed, 0x6b6d65616e73ULL);
    detail::LloydRun best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        detail::LloydRun run = detail::lloyd(points, detail::kmeanspp_seed(points, m, rng), max_iters);
        if (!have || run.inertia < best.inertia) {
            best = std::move(run);
            have = true;
        }
    }
    ClusterResult out;
    out.labels = std::move(best.labels);
    out.centers = std::move(best.centers);
    out.inertia = std::max(best.inertia, 0.0);
    out.trace = std::move(best.trace);
    return out;
}

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::parameter, "label vectors differ in length");
    std::map<std::pair<int, int>, long> joint;
    std::map<int, long> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[{a[i], b[i]}];
        ++ra[a[i]];
        ++rb[b[i]];
    }
    auto c2 = [](long v) { return 0.5 * static_cast<double>(v) * static_cast<double>(v - 1); };
    double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, v] : joint) sum_joint += c2(v);
    for (const auto& [key, v] : ra) sum_a += c2(v);
    for (const auto& [key, v] : rb) sum_b += c2(v);
    const double total = c2(static_cast<long>(a.size()));
    const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;
    return (sum_joint - expected) / (max_index - expected);
}

// --- mixture of curves --------------------------------------------------------------

namespace detail {

struct CurveDesign {
    Matrix btb;
    Vector bty;
    double yty = 0.0;
    double n = 0.0;
};

inline Vector solve_ridged(Matrix a, const Vector& b) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
        const double ridge = 1e-8 * std::max(a.trace() / static_cast<double>(a.rows()), 1.0);
        a.diagonal().array() += ridge;
        llt.compute(a);
    }
    return llt.solve(b);
}

}  // namespace detail

/// EM for the finite mixture P(m_i = k) = pi_k, y_ij = f_k(t_ij) + e_ij with
/// each f_k a spline on `basis` and a common noise variance.
inline ClusterResult mixture_em(const Dataset& data, int m, const BasisSpec& basis, std::uint64_t seed,
                                int max_iters = 500, double tol = 1e-8) {
    const Eigen::Index k = basis.num_basis();
    const auto n_curves = static_cast<Eigen::Index>(data.size());
    if (m < 1) throw Error(ErrorCode::parameter, "component count must be >= 1");
    if (m > n_curves) throw Error(ErrorCode::parameter, "more components than curves");
    if (data.n_tot() <= static_cast<long>(m) * k) {
        throw Error(ErrorCode::parameter, "need n_tot > M * K observations");
    }
    constexpr double two_pi = 2.0 * std::numbers::pi;

    std::vector<detail::CurveDesign> design(static_cast<std::size_t>(n_curves));
    Matrix individual(n_curves, k);
    for (Eigen::Index i = 0; i < n_curves; ++i) {
        const Curve& c = data[static_cast<std::size_t>(i)];
        const Matrix b = eval_basis(basis, c.ts);
        auto& d = design[static_cast<std::size_t>(i)];
        d.btb = b.transpose() * b;
        d.bty = b.transpose() * c.ys;
        d.yty = c.ys.squaredNorm();
        d.n = static_cast<double>(c.size());
        Matrix reg = d.btb;
        reg.diagonal().array() += 1e-6 * std::max(reg.trace() / static_cast<double>(k), 1e-12);
        individual.row(i) = reg.llt().solve(d.bty).transpose();
    }
    auto rss = [&](Eigen::Index i, const Vector& alpha) {
        const auto& d = design[static_cast<std::size_t>(i)];
        return std::max(d.yty - 2.0 * alpha.dot(d.bty) + alpha.dot(d.btb * alpha), 0.0);
    };

    ClusterResult out;
    Matrix resp = Matrix::Zero(n_curves, m);
    {
        const ClusterResult init = kmeans_warps(individual, m, seed, 10);
        for (Eigen::Index i = 0; i < n_curves; ++i) resp(i, init.labels[static_cast<std::size_t>(i)]) = 1.0;
    }

    Matrix alphas(m, k);
    Vector pi(m);
    double sigma2 = 1.0;
    auto m_step = [&] {
        for (int c = 0; c < m; ++c) {
            Matrix a = Matrix::Zero(k, k);
            Vector b = Vector::Zero(k);
            double mass = 0.0;
            for (Eigen::Index i = 0; i < n_curves; ++i) {
                const double r = resp(i, c);
                a += r * design[static_cast<std::size_t>(i)].btb;
                b += r * design[static_cast<std::size_t>(i)].bty;
                mass += r;
            }
            if (mass < 1e-8) {
                // Re-seed from the curve the current components explain worst.
                Eigen::Index worst = 0;
                double worst_fit = -std::numeric_limits<double>::infinity();
                for (Eigen::Index i = 0; i < n_curves; ++i) {
                    double fit_i = std::numeric_limits<double>::infinity();
                    for (int c2 = 0; c2 < m; ++c2) {
                        if (c2 != c) fit_i = std::min(fit_i, rss(i, alphas.row(c2).transpose()));
                    }
                    if (fit_i > worst_fit) {
                        worst_fit = fit_i;
                        worst = i;
                    }
                }
                alphas.row(c) = individual.row(worst);
                pi[c] = 1.0 / static_cast<double>(n_curves);
                out.warnings.push_back("component " + std::to_string(c) + " emptied; re-seeded from curve " +
                                       data[static_cast<std::size_t>(worst)].id);
                continue;
            }
            alphas.row(c) = detail::solve_ridged(a, b).transpose();
            pi[c] = mass / static_cast<double>(n_curves);
        }
        pi /= pi.sum();
        double total = 0.0;
        for (Eigen::Index i = 0; i < n_curves; ++i) {
            for (int c = 0; c < m; ++c) total += resp(i, c) * rss(i, alphas.row(c).transpose());
        }
        sigma2 = std::max(total / static_cast<double>(data.n_tot()), 1e-12);
    };

    // E-step: responsibilities and the observed log-likelihood at the current parameters.
    auto e_step = [&] {
        double loglik = 0.0;
        Vector logp(m);
        for (Eigen::Index i = 0; i < n_curves; ++i) {
            const double n_i = design[static_cast<std::size_t>(i)].n;
            for (int c = 0; c < m; ++c) {
                logp[c] = std::log(pi[c]) - 0.5 * n_i * std::log(two_pi * sigma2) -
                          rss(i, alphas.row(c).transpose()) / (2.0 * sigma2);
            }
            const double mx = logp.maxCoeff();
            const double lse = mx + std::log((logp.array() - mx).exp().sum());
            resp.row(i) = (logp.array() - lse).exp().transpose();
            loglik += lse;
        }
        return loglik;
    };

    m_step();
    for (int iter = 0; iter < max_iters; ++iter) {
        const double loglik = e_step();
        out.trace.push_back(loglik);
        out.log_likelihood = loglik;
        const std::size_t t = out.trace.size();
        if (t >= 2 && std::abs(out.trace[t - 1] - out.trace[t - 2]) < tol) break;
        m_step();
    }

    out.labels.resize(static_cast<std::size_t>(n_curves));
    for (Eigen::Index i = 0; i < n_curves; ++i) {
        Eigen::Index best = 0;
        resp.row(i).maxCoeff(&best);
        out.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    out.centers = alphas;
    out.weights = pi;
    out.sigma2 = sigma2;
    return out;
}

}  // namespace curvereg

#endif
