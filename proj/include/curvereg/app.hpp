#ifndef CURVEREG_APP_HPP
#define CURVEREG_APP_HPP

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "curvereg/clustering.hpp"
#include "curvereg/error.hpp"
#include "curvereg/io.hpp"
#include "curvereg/metrics.hpp"
#include "curvereg/model.hpp"
#include "curvereg/saem.hpp"

namespace curvereg {

/// Settings for one CLI invocation. Defaults reproduce the shape-1 study setup.
struct RunConfig {
    std::string subcommand;
    std::string input;
    std::string output = ".";
    int kf = 5;
    int kh = 6;
    int order = 4;
    int burn_in = 2000;
    int iters = 12000;
    double alpha = 0.75;
    int inner = 5;
    std::uint64_t seed = 1;
    std::string scenario = "shape1";
    int n = 100;
    int curves = 20;
    int replicates = 10;
    std::string method = "kmeans";
    int M = 3;
    int restarts = 10;
    int families = 0;
    double family_tau = 100.0;
    int grid_size = 101;
    int threads = 1;

    SaemConfig saem() const {
        SaemConfig c;
        c.burn_in = burn_in;
        c.total_iters = iters;
        c.step_exponent = alpha;
        c.n_inner = inner;
        c.seed = seed;
        c.pred_grid_size = grid_size;
        c.threads = threads;
        return c;
    }
};

/// Config as embedded in output headers. The output directory is left out
/// so that reruns into different directories produce identical files.
inline nlohmann::json to_json(const RunConfig& c) {
    return {{"subcommand", c.subcommand}, {"input", c.input},       {"kf", c.kf},
            {"kh", c.kh},                 {"order", c.order},       {"burnin", c.burn_in},
            {"iters", c.iters},           {"alpha", c.alpha},       {"inner", c.inner},
            {"seed", c.seed},             {"scenario", c.scenario}, {"n", c.n},
            {"curves", c.curves},         {"replicates", c.replicates}, {"method", c.method},
            {"M", c.M},                   {"restarts", c.restarts}, {"families", c.families},
            {"family_tau", c.family_tau}, {"grid_size", c.grid_size}, {"threads", c.threads}};
}

/// Overwrites the fields present in `j` (a config file).
inline void apply_json(RunConfig& c, const nlohmann::json& j) {
    auto take = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        } catch (const nlohmann::json::exception&) {
            throw Error(ErrorCode::parse, std::string("config field '") + key + "' has the wrong type");
        }
    };
    take("subcommand", c.subcommand);
    take("input", c.input);
    take("output", c.output);
    take("kf", c.kf);
    take("kh", c.kh);
    take("order", c.order);
    take("burnin", c.burn_in);
    take("iters", c.iters);
    take("alpha", c.alpha);
    take("inner", c.inner);
    take("seed", c.seed);
    take("scenario", c.scenario);
    take("n", c.n);
    take("curves", c.curves);
    take("replicates", c.replicates);
    take("method", c.method);
    take("M", c.M);
    take("restarts", c.restarts);
    take("families", c.families);
    take("family_tau", c.family_tau);
    take("grid_size", c.grid_size);
    take("threads", c.threads);
}

namespace detail {

inline std::string out_path(const RunConfig& c, const std::string& name) {
    std::filesystem::create_directories(c.output);
    return (std::filesystem::path(c.output) / name).string();
}

inline nlohmann::json header(const RunConfig& c) { return {{"config", to_json(c)}, {"seed", c.seed}}; }

inline void require_input(const RunConfig& c) {
    if (c.input.empty()) throw Error(ErrorCode::usage, "--input is required for '" + c.subcommand + "'");
    if (!std::filesystem::exists(c.input)) throw Error(ErrorCode::io, "input '" + c.input + "' does not exist");
}

inline std::string format_curves_csv(const FitResult& f, const Vector& grid) {
    std::ostringstream os;
    os << "curve_id,t,h_hat,y_hat\n";
    for (const auto& c : f.curves) {
        const Prediction p = predict(f, c.id, grid);
        for (Eigen::Index j = 0; j < grid.size(); ++j) {
            os << c.id << ',' << format_double(grid[j]) << ',' << format_double(p.h_hat[j]) << ','
               << format_double(p.y_hat[j]) << '\n';
        }
    }
    return os.str();
}

inline void cmd_simulate(const RunConfig& c, std::ostream& log) {
    Scenario sc = scenario_by_name(c.scenario);
    std::vector<Vector> concentrations;
    std::vector<int> family;
    if (c.families > 0) {
        for (const Vector& mean : warp_family_means(sc.basis_h, c.families)) concentrations.push_back(c.family_tau * mean);
    }
    const SimulatedData sim = simulate(sc.params, sc.basis_f, sc.basis_h, c.curves, c.n, c.seed, concentrations);
    std::ostringstream csv;
    write_csv(csv, sim.data);
    write_text_file(out_path(c, "data.csv"), csv.str());
    nlohmann::json truth = header(c);
    truth["params"] = to_json(sc.params);
    truth["basis_f"] = to_json(sc.basis_f);
    truth["basis_h"] = to_json(sc.basis_h);
    truth["curves"] = truth_to_json(sim.data, sim.truth);
    if (c.families > 0) {
        for (int i = 0; i < c.curves; ++i) family.push_back(i % c.families);
        truth["families"] = family;
    }
    write_text_file(out_path(c, "truth.json"), truth.dump(2) + "\n");
    log << "simulated " << sim.data.size() << " curves (" << sim.data.n_tot() << " points) into " << c.output << "\n";
}

inline void cmd_fit(const RunConfig& c, std::ostream& log) {
    require_input(c);
    const Dataset data = ingest_csv(c.input);
    const BasisSpec basis_f = make_basis(c.kf, std::min(c.order, c.kf));
    const BasisSpec basis_h = make_basis(c.kh, std::min(c.order, c.kh));
    const FitResult f = fit(data, basis_f, basis_h, c.saem());

    nlohmann::json theta = header(c);
    theta["theta"] = to_json(f.theta);
    write_text_file(out_path(c, "theta.json"), theta.dump(2) + "\n");
    write_text_file(out_path(c, "curves.csv"), format_curves_csv(f, f.pred_grid));

    nlohmann::json diag = header(c);
    nlohmann::json curves = nlohmann::json::array();
    for (const auto& cf : f.curves) {
        curves.push_back({{"id", cf.id}, {"acceptance_rate", cf.acceptance_rate()}, {"sigma_q", cf.sigma_q}});
    }
    nlohmann::json traj = nlohmann::json::array();
    for (const auto& s : f.trajectory) {
        traj.push_back({{"iter", s.iter},
                        {"alpha", to_json(s.alpha)},
                        {"sigma2", s.sigma2},
                        {"Sigma", matrix_to_json(s.Sigma)},
                        {"tau", s.tau}});
    }
    diag["theta_init"] = to_json(f.theta_init);
    diag["curves"] = curves;
    diag["warnings"] = f.warnings;
    diag["trajectory"] = traj;
    write_text_file(out_path(c, "diagnostics.json"), diag.dump() + "\n");

    nlohmann::json state = header(c);
    state["fit"] = to_json(f);
    write_text_file(out_path(c, "fit.json"), state.dump() + "\n");
    log << "fitted " << data.size() << " curves: sigma2=" << f.theta.sigma2 << " tau=" << f.theta.tau << "\n";
}

inline FitResult load_fit(const std::string& path) {
    const nlohmann::json j = read_json_file(path);
    try {
        return fit_from_json(j.contains("fit") ? j.at("fit") : j);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::parse, path + ": " + e.what());
    }
}

inline void cmd_predict(const RunConfig& c, std::ostream& log) {
    require_input(c);
    const FitResult f = load_fit(c.input);
    write_text_file(out_path(c, "predictions.csv"), format_curves_csv(f, uniform_grid(c.grid_size)));
    log << "predicted " << f.curves.size() << " curves on " << c.grid_size << " points\n";
}

inline void cmd_cluster(const RunConfig& c, std::ostream& log) {
    require_input(c);
    std::vector<std::string> ids;
    ClusterResult r;
    nlohmann::json summary = header(c);
    if (c.method == "kmeans") {
        const FitResult f = load_fit(c.input);
        Matrix x(static_cast<Eigen::Index>(f.curves.size()), f.basis_h.num_basis() - 1);
        for (std::size_t i = 0; i < f.curves.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = f.curves[i].mean_w.transpose();
            ids.push_back(f.curves[i].id);
        }
        r = kmeans_warps(x, c.M, c.seed, c.restarts);
        summary["inertia"] = r.inertia;
    } else if (c.method == "mixture") {
        const Dataset data = ingest_csv(c.input);
        for (const auto& cv : data.curves()) ids.push_back(cv.id);
        r = mixture_em(data, c.M, make_basis(c.kf, std::min(c.order, c.kf)), c.seed);
        summary["log_likelihood"] = r.log_likelihood;
        summary["weights"] = to_json(r.weights);
        summary["sigma2"] = r.sigma2;
        summary["warnings"] = r.warnings;
    } else {
        throw Error(ErrorCode::usage, "unknown --method '" + c.method + "' (expected kmeans or mixture)");
    }
    summary["centers"] = matrix_to_json(r.centers);
    summary["trace"] = r.trace;
    std::ostringstream os;
    os << "curve_id,label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) os << ids[i] << ',' << r.labels[i] << '\n';
    write_text_file(out_path(c, "labels.csv"), os.str());
    write_text_file(out_path(c, "cluster.json"), summary.dump(2) + "\n");
    log << "clustered " << ids.size() << " curves into " << c.M << " groups\n";
}

inline void cmd_study(const RunConfig& c, std::ostream& log) {
    Scenario sc = scenario_by_name(c.scenario);
    sc.n_curves = c.curves;
    const StudyReport rep = run_study(sc, c.n, c.replicates, c.seed, c.saem(), c.threads);
    nlohmann::json j = header(c);
    j["report"] = to_json(rep);
    write_text_file(out_path(c, "study.json"), j.dump(2) + "\n");
    std::ostringstream os;
    write_csv(os, rep);
    write_text_file(out_path(c, "study.csv"), os.str());
    log << "study " << sc.name << " n=" << c.n << ": " << rep.completed << "/" << c.replicates
        << " completed, mean IMSE " << rep.mean_imse << ", mean IMSPE " << rep.mean_imspe << "\n";
}

}  // namespace detail

/// Runs one subcommand. Returns 0 on success, otherwise the numeric
/// ErrorCode of the failure after printing a category-tagged message.
inline int run(const RunConfig& c, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    try {
        if (c.subcommand == "simulate") detail::cmd_simulate(c, log);
        else if (c.subcommand == "fit") detail::cmd_fit(c, log);
        else if (c.subcommand == "predict") detail::cmd_predict(c, log);
        else if (c.subcommand == "cluster") detail::cmd_cluster(c, log);
        else if (c.subcommand == "study") detail::cmd_study(c, log);
        else throw Error(ErrorCode::usage, "unknown subcommand '" + c.subcommand + "'");
        return 0;
    } catch (const Error& e) {
        err << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return static_cast<int>(ErrorCode::io);
    }
}

}  // namespace curvereg

#endif
