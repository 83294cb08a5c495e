#ifndef CURVEREG_METRICS_HPP
#define CURVEREG_METRICS_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvereg/error.hpp"
#include "curvereg/model.hpp"
#include "curvereg/saem.hpp"
#include "curvereg/splines.hpp"

namespace curvereg {

/// Trapezoidal integral over [0,1] of values on a uniform grid.
inline double trapezoid_unit(const Vector& values) {
    if (values.size() < 2) throw Error(ErrorCode::parameter, "integration grid needs >= 2 points");
    const double h = 1.0 / static_cast<double>(values.size() - 1);
    return h * (values.sum() - 0.5 * (values[0] + values[values.size() - 1]));
}

/// Integrated squared error between two splines on the same basis.
inline double imse(const Vector& f_hat, const Vector& f_true, const BasisSpec& basis_f, int grid_size = 1001) {
    if (grid_size < 2) throw Error(ErrorCode::parameter, "grid_size must be >= 2");
    const Vector grid = uniform_grid(grid_size);
    const Vector diff = eval_spline(basis_f, f_hat, grid) - eval_spline(basis_f, f_true, grid);
    return trapezoid_unit(diff.array().square().matrix());
}

/// Integrated squared error between two warps given on a common uniform grid.
inline double imspe(const Vector& h_hat, const Vector& h_true) {
    if (h_hat.size() != h_true.size()) {
        throw Error(ErrorCode::parameter, "warp grids differ in length (" + std::to_string(h_hat.size()) + " vs " +
                                              std::to_string(h_true.size()) + ")");
    }
    return trapezoid_unit((h_hat - h_true).array().square().matrix());
}

/// Mean of the per-curve integrated squared warp errors.
inline double imspe(const std::vector<Vector>& h_hat, const std::vector<Vector>& h_true) {
    if (h_hat.size() != h_true.size() || h_hat.empty()) {
        throw Error(ErrorCode::parameter, "need matching non-empty sets of warps");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < h_hat.size(); ++i) s += imspe(h_hat[i], h_true[i]);
    return s / static_cast<double>(h_hat.size());
}

/// Root mean squared difference between two equal-length vectors.
inline double rmse(const Vector& a, const Vector& b) {
    if (a.size() != b.size() || a.size() == 0) {
        throw Error(ErrorCode::parameter, "rmse needs non-empty vectors of equal length");
    }
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

// --- simulation study ------------------------------------------------------------

struct ReplicateResult {
    int index = 0;
    /// "ok", "time_exceeded" or "numerical_error".
    std::string status = "ok";
    std::string message;
    double imse = 0.0;
    double imspe = 0.0;
    /// Fitted values against the observations, pooled over curves.
    double rmse = 0.0;
    double seconds = 0.0;
    double tau_hat = 0.0;
    double sigma2_hat = 0.0;
    double accept_min = 0.0;
    double accept_max = 0.0;
    double accept_mean = 0.0;
};

struct StudyReport {
    std::string scenario;
    int n_points = 0;
    int n_curves = 0;
    std::uint64_t seed = 0;
    std::vector<ReplicateResult> replicates;

    int completed = 0;
    int time_exceeded = 0;
    int numerical_error = 0;
    double mean_imse = 0.0;
    double mean_imspe = 0.0;
    double mean_rmse = 0.0;
    double mean_seconds = 0.0;
    double median_seconds = 0.0;
    double mean_tau_hat = 0.0;
    double mean_sigma_hat = 0.0;

    void aggregate() {
        completed = time_exceeded = numerical_error = 0;
        mean_imse = mean_imspe = mean_rmse = mean_seconds = mean_tau_hat = mean_sigma_hat = median_seconds = 0.0;
        std::vector<double> times;
        for (const auto& r : replicates) {
            if (r.status == "time_exceeded") ++time_exceeded;
            if (r.status == "numerical_error") ++numerical_error;
            if (r.status != "ok") continue;
            ++completed;
            mean_imse += r.imse;
            mean_imspe += r.imspe;
            mean_rmse += r.rmse;
            mean_seconds += r.seconds;
            mean_tau_hat += r.tau_hat;
            mean_sigma_hat += std::sqrt(r.sigma2_hat);
            times.push_back(r.seconds);
        }
        if (completed > 0) {
            const double c = completed;
            mean_imse /= c;
            mean_imspe /= c;
            mean_rmse /= c;
            mean_seconds /= c;
            mean_tau_hat /= c;
            mean_sigma_hat /= c;
            std::sort(times.begin(), times.end());
            const std::size_t mid = times.size() / 2;
            median_seconds = times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
        }
    }
};

/// One replicate: simulate, fit, predict, score.
inline ReplicateResult run_replicate(const Scenario& sc, int n_points, int index, std::uint64_t seed,
                                     SaemConfig config, int metric_grid = 1001) {
    ReplicateResult r;
    r.index = index;
    Rng seeder = make_rng(seed, static_cast<std::uint64_t>(index));
    const std::uint64_t data_seed = seeder();
    config.seed = seeder();
    const auto start = std::chrono::steady_clock::now();
    try {
        const SimulatedData sim = simulate(sc.params, sc.basis_f, sc.basis_h, sc.n_curves, n_points, data_seed);
        const FitResult fr = fit(sim.data, sc.basis_f, sc.basis_h, config);
        r.imse = imse(fr.theta.alpha, sc.params.alpha, sc.basis_f, metric_grid);
        const Vector grid = uniform_grid(metric_grid);
        std::vector<Vector> h_hat, h_true;
        Vector y_obs(sim.data.n_tot()), y_fit(sim.data.n_tot());
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < sim.data.size(); ++i) {
            const Curve& cv = sim.data[i];
            h_hat.push_back(predict(fr, cv.id, grid).h_hat);
            h_true.push_back(eval_warp(sim.truth[i].w, sc.basis_h, grid));
            y_obs.segment(off, cv.ys.size()) = cv.ys;
            y_fit.segment(off, cv.ys.size()) = predict(fr, cv.id, cv.ts).y_hat;
            off += cv.ys.size();
        }
        r.imspe = imspe(h_hat, h_true);
        r.rmse = rmse(y_fit, y_obs);
        r.tau_hat = fr.theta.tau;
        r.sigma2_hat = fr.theta.sigma2;
        std::vector<double> rates;
        for (const auto& c : fr.curves) rates.push_back(c.acceptance_rate());
        r.accept_min = *std::min_element(rates.begin(), rates.end());
        r.accept_max = *std::max_element(rates.begin(), rates.end());
        double s = 0.0;
        for (double v : rates) s += v;
        r.accept_mean = s / static_cast<double>(rates.size());
    } catch (const Error& e) {
        r.status = e.code() == ErrorCode::time_limit ? "time_exceeded" : "numerical_error";
        r.message = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Multi-replicate study. Replicates run on `threads` workers; the report is
/// ordered by replicate index and each replicate's seeds depend only on
/// (seed, index).
inline StudyReport run_study(const Scenario& sc, int n_points, int n_replicates, std::uint64_t seed,
                             const SaemConfig& config, int threads = 1) {
    if (n_replicates < 1) throw Error(ErrorCode::parameter, "need at least one replicate");
    StudyReport report;
    report.scenario = sc.name;
    report.n_points = n_points;
    report.n_curves = sc.n_curves;
    report.seed = seed;
    report.replicates.resize(static_cast<std::size_t>(n_replicates));
    detail::parallel_for(static_cast<std::size_t>(n_replicates), threads, [&](std::size_t i) {
        report.replicates[i] = run_replicate(sc, n_points, static_cast<int>(i), seed, config);
    });
    report.aggregate();
    return report;
}

inline nlohmann::json to_json(const ReplicateResult& r) {
    return {{"index", r.index},       {"status", r.status},         {"message", r.message},
            {"imse", r.imse},         {"imspe", r.imspe},           {"rmse", r.rmse},
            {"seconds", r.seconds},
            {"tau_hat", r.tau_hat},   {"sigma2_hat", r.sigma2_hat}, {"accept_min", r.accept_min},
            {"accept_max", r.accept_max}, {"accept_mean", r.accept_mean}};
}

inline nlohmann::json to_json(const StudyReport& s) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : s.replicates) reps.push_back(to_json(r));
    return {{"scenario", s.scenario},
            {"n_points", s.n_points},
            {"n_curves", s.n_curves},
            {"seed", s.seed},
            {"summary",
             {{"completed", s.completed},
              {"time_exceeded", s.time_exceeded},
              {"numerical_error", s.numerical_error},
              {"mean_imse", s.mean_imse},
              {"mean_imspe", s.mean_imspe},
              {"mean_rmse", s.mean_rmse},
              {"mean_seconds", s.mean_seconds},
              {"median_seconds", s.median_seconds},
              {"mean_tau_hat", s.mean_tau_hat},
              {"mean_sigma_hat", s.mean_sigma_hat}}},
            {"replicates", reps}};
}

inline void write_csv(std::ostream& os, const StudyReport& s) {
    os << "replicate,status,imse,imspe,rmse,seconds,tau_hat,sigma2_hat,accept_min,accept_max,accept_mean\n";
    os.precision(17);
    for (const auto& r : s.replicates) {
        os << r.index << ',' << r.status << ',' << r.imse << ',' << r.imspe << ',' << r.rmse << ',' << r.seconds << ',' << r.tau_hat
           << ',' << r.sigma2_hat << ',' << r.accept_min << ',' << r.accept_max << ',' << r.accept_mean << '\n';
    }
}

}  // namespace curvereg

#endif
