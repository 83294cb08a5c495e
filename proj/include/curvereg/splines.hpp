#ifndef CURVEREG_SPLINES_HPP
#define CURVEREG_SPLINES_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "curvereg/error.hpp"

namespace curvereg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Clamped B-spline basis on [0,1]. The boundary knots are repeated `order`
/// times and the interior knots are equally spaced.
struct BasisSpec {
    int order = 4;
    std::vector<double> knots;

    int num_basis() const { return static_cast<int>(knots.size()) - order; }
    int degree() const { return order - 1; }

    bool operator==(const BasisSpec&) const = default;
};

/// Dense basis evaluation: one row per evaluation point, one column per basis function.
using BasisMatrix = Matrix;

inline BasisSpec make_basis(int num_basis, int order = 4) {
    if (order < 2) {
        throw Error(ErrorCode::invalid_basis, "order must be >= 2, got " + std::to_string(order));
    }
    if (num_basis < order) {
        throw Error(ErrorCode::invalid_basis, "need num_basis >= order, got K=" +
                                                  std::to_string(num_basis) +
                                                  " order=" + std::to_string(order));
    }
    BasisSpec spec;
    spec.order = order;
    const int interior = num_basis - order;
    spec.knots.reserve(static_cast<std::size_t>(num_basis + order));
    spec.knots.insert(spec.knots.end(), static_cast<std::size_t>(order), 0.0);
    for (int j = 1; j <= interior; ++j) {
        spec.knots.push_back(static_cast<double>(j) / static_cast<double>(interior + 1));
    }
    spec.knots.insert(spec.knots.end(), static_cast<std::size_t>(order), 1.0);
    return spec;
}

namespace detail {

inline void check_unit_interval(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorCode::domain, "evaluation point " + std::to_string(t) + " outside [0,1]");
    }
}

/// Knot span index s with knots[s] <= t < knots[s+1]; t == 1 goes to the last span.
inline int find_span(const BasisSpec& basis, double t) {
    const int last = basis.num_basis() - 1;
    if (t >= basis.knots[static_cast<std::size_t>(last + 1)]) return last;
    const auto begin = basis.knots.begin() + basis.degree();
    const auto end = basis.knots.begin() + last + 1;
    const auto it = std::upper_bound(begin, end + 1, t);
    return static_cast<int>(it - basis.knots.begin()) - 1;
}

/// Cox-de Boor triangle: writes the `order` nonzero values B_{span-p..span}(t) into out.
inline void basis_funs(const BasisSpec& basis, int span, double t, double* out) {
    const int p = basis.degree();
    const auto& u = basis.knots;
    double left[16];
    double right[16];
    out[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - u[static_cast<std::size_t>(span + 1 - j)];
        right[j] = u[static_cast<std::size_t>(span + j)] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = out[r] / (right[r + 1] + left[j - r]);
            out[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        out[j] = saved;
    }
}

}  // namespace detail

/// Row-compressed basis evaluation. Row j holds the `order` nonzero values
/// starting at column first[j]; everything else in the row is zero.
struct LocalBasis {
    int order = 0;
    int num_basis = 0;
    std::vector<int> first;
    std::vector<double> values;

    int rows() const { return static_cast<int>(first.size()); }
    const double* row(int j) const { return values.data() + static_cast<std::size_t>(j) * order; }

    /// Row j dotted with a coefficient vector.
    double dot(int j, const Vector& coeffs) const {
        const double* v = row(j);
        const int f = first[static_cast<std::size_t>(j)];
        double s = 0.0;
        for (int r = 0; r < order; ++r) s += v[r] * coeffs[f + r];
        return s;
    }

    BasisMatrix to_dense() const {
        BasisMatrix m = BasisMatrix::Zero(rows(), num_basis);
        for (int j = 0; j < rows(); ++j) {
            const double* v = row(j);
            for (int r = 0; r < order; ++r) m(j, first[static_cast<std::size_t>(j)] + r) = v[r];
        }
        return m;
    }
};

/// Evaluates into an existing buffer, reusing its storage.
inline void eval_basis_local(const BasisSpec& basis, const Vector& ts, LocalBasis& out) {
    if (basis.order > 16) throw Error(ErrorCode::invalid_basis, "order above 16 unsupported");
    const auto n = static_cast<std::size_t>(ts.size());
    out.order = basis.order;
    out.num_basis = basis.num_basis();
    out.first.resize(n);
    out.values.resize(n * static_cast<std::size_t>(basis.order));
    for (std::size_t j = 0; j < n; ++j) {
        const double t = ts[static_cast<Eigen::Index>(j)];
        detail::check_unit_interval(t);
        const int span = detail::find_span(basis, t);
        out.first[j] = span - basis.degree();
        detail::basis_funs(basis, span, t, out.values.data() + j * static_cast<std::size_t>(basis.order));
    }
}

inline LocalBasis eval_basis_local(const BasisSpec& basis, const Vector& ts) {
    LocalBasis out;
    eval_basis_local(basis, ts, out);
    return out;
}

inline BasisMatrix eval_basis(const BasisSpec& basis, const Vector& ts) {
    return eval_basis_local(basis, ts).to_dense();
}

/// Greville abscissae: coefficients that make the spline reproduce t exactly.
inline Vector greville(const BasisSpec& basis) {
    const int k = basis.num_basis();
    const int p = basis.degree();
    Vector xi(k);
    for (int i = 0; i < k; ++i) {
        double s = 0.0;
        for (int j = 1; j <= p; ++j) s += basis.knots[static_cast<std::size_t>(i + j)];
        xi[i] = s / p;
    }
    return xi;
}

/// Spline value sum_k coeffs_k B_k(t) at every point of ts.
inline Vector eval_spline(const BasisSpec& basis, const Vector& coeffs, const Vector& ts) {
    if (coeffs.size() != basis.num_basis()) {
        throw Error(ErrorCode::parameter, "coefficient length " + std::to_string(coeffs.size()) +
                                              " does not match basis size " +
                                              std::to_string(basis.num_basis()));
    }
    const LocalBasis b = eval_basis_local(basis, ts);
    Vector out(ts.size());
    for (int j = 0; j < b.rows(); ++j) out[j] = b.dot(j, coeffs);
    return out;
}

/// Dirichlet warping increments (w_2, ..., w_K); w_1 = 0 is implicit.
struct WarpingEffects {
    Vector increments;

    Eigen::Index size() const { return increments.size(); }
};

inline void validate_warp(const WarpingEffects& w, Eigen::Index expected_size) {
    if (w.size() != expected_size) {
        throw Error(ErrorCode::invalid_warp, "expected " + std::to_string(expected_size) +
                                                 " increments, got " + std::to_string(w.size()));
    }
    double sum = 0.0;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        const double v = w.increments[k];
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw Error(ErrorCode::invalid_warp,
                        "increment " + std::to_string(k) + " = " + std::to_string(v) + " not positive");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw Error(ErrorCode::invalid_warp, "increments sum to " + std::to_string(sum) + ", not 1");
    }
}

/// Monotone coefficients beta_k = sum_{j<=k} w_j with beta_1 = 0 and beta_K = 1.
inline Vector warp_coefficients(const WarpingEffects& w) {
    const Eigen::Index k = w.size() + 1;
    Vector beta(k);
    beta[0] = 0.0;
    for (Eigen::Index i = 1; i < k; ++i) beta[i] = beta[i - 1] + w.increments[i - 1];
    beta[k - 1] = 1.0;
    return beta;
}

/// Increments whose cumulative sums are the Greville abscissae, i.e. the identity warp.
inline WarpingEffects identity_warp(const BasisSpec& basis_h) {
    const Vector xi = greville(basis_h);
    WarpingEffects w;
    w.increments = xi.tail(xi.size() - 1) - xi.head(xi.size() - 1);
    return w;
}

/// Precomputed warp-basis rows at fixed sampling times, so that h(t_j) for a
/// new coefficient vector costs `order` multiplies per point.
class WarpEvaluator {
public:
    WarpEvaluator() = default;
    WarpEvaluator(const BasisSpec& basis_h, const Vector& ts) : rows_(eval_basis_local(basis_h, ts)) {}

    void apply(const Vector& beta, Vector& out) const {
        out.resize(rows_.rows());
        for (int j = 0; j < rows_.rows(); ++j) out[j] = std::clamp(rows_.dot(j, beta), 0.0, 1.0);
    }

    Vector apply(const Vector& beta) const {
        Vector out;
        apply(beta, out);
        return out;
    }

    int size() const { return rows_.rows(); }

private:
    LocalBasis rows_;
};

inline Vector eval_warp(const WarpingEffects& w, const BasisSpec& basis_h, const Vector& ts) {
    validate_warp(w, basis_h.num_basis() - 1);
    return WarpEvaluator(basis_h, ts).apply(warp_coefficients(w));
}

/// B_i(w): shape basis evaluated at the warped times h(t_j; w).
inline BasisMatrix warp_basis_matrix(const WarpingEffects& w, const BasisSpec& basis_h,
                                     const BasisSpec& basis_f, const Vector& ts) {
    return eval_basis(basis_f, eval_warp(w, basis_h, ts));
}

/// Uniform grid of `size` points on [0,1] with exact endpoints.
inline Vector uniform_grid(int size) {
    if (size < 2) throw Error(ErrorCode::parameter, "grid needs at least 2 points");
    Vector g(size);
    for (int j = 0; j < size; ++j) g[j] = static_cast<double>(j) / static_cast<double>(size - 1);
    return g;
}

}  // namespace curvereg

#endif
