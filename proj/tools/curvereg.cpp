#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "curvereg/app.hpp"

namespace {

template <class T>
void override_with(const std::optional<T>& flag, T& field) {
    if (flag) field = *flag;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"Curve registration with random warps fitted by stochastic EM"};
    cli.require_subcommand(1);

    std::optional<std::string> config_path, input, output, scenario, method;
    std::optional<int> kf, kh, order, burn_in, iters, inner, n, curves, replicates, M, restarts, families, grid_size,
        threads;
    std::optional<double> alpha, family_tau;
    std::optional<std::uint64_t> seed;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file; flags override its fields");
        sub->add_option("--output", output, "Output directory");
        sub->add_option("--seed", seed, "Random seed");
        sub->add_option("--threads", threads, "Worker threads");
    };
    auto model_flags = [&](CLI::App* sub) {
        sub->add_option("--kf", kf, "Shape basis size");
        sub->add_option("--kh", kh, "Warp basis size");
        sub->add_option("--order", order, "B-spline order");
    };
    auto saem_flags = [&](CLI::App* sub) {
        sub->add_option("--burnin", burn_in, "Burn-in iterations (step size 1)");
        sub->add_option("--iters", iters, "Total SAEM iterations, burn-in included");
        sub->add_option("--alpha", alpha, "Step size exponent after burn-in");
        sub->add_option("--inner", inner, "MCMC sweeps per SAEM iteration");
        sub->add_option("--grid-size", grid_size, "Prediction grid size");
    };
    auto scenario_flags = [&](CLI::App* sub) {
        sub->add_option("--scenario", scenario, "shape1 or shape2");
        sub->add_option("--n", n, "Points per curve");
        sub->add_option("--curves", curves, "Number of curves");
    };

    CLI::App* sim = cli.add_subcommand("simulate", "Simulate a dataset from a scenario");
    common(sim);
    scenario_flags(sim);
    sim->add_option("--families", families, "Number of warp families (0 for one common prior)");
    sim->add_option("--family-tau", family_tau, "Concentration of each warp family");

    CLI::App* fit = cli.add_subcommand("fit", "Fit a long-format CSV dataset");
    common(fit);
    model_flags(fit);
    saem_flags(fit);
    fit->add_option("--input", input, "CSV with columns curve_id,t,y");

    CLI::App* pred = cli.add_subcommand("predict", "Evaluate fitted curves and warps on a grid");
    common(pred);
    pred->add_option("--input", input, "fit.json written by 'fit'");
    pred->add_option("--grid-size", grid_size, "Number of grid points");

    CLI::App* clu = cli.add_subcommand("cluster", "Cluster curves");
    common(clu);
    clu->add_option("--input", input, "fit.json (kmeans) or data CSV (mixture)");
    clu->add_option("--method", method, "kmeans or mixture");
    clu->add_option("--M", M, "Number of clusters");
    clu->add_option("--restarts", restarts, "k-means restarts");
    model_flags(clu);

    CLI::App* study = cli.add_subcommand("study", "Run a replicated simulation study");
    common(study);
    scenario_flags(study);
    saem_flags(study);
    study->add_option("--replicates", replicates, "Number of replicates");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = cli.exit(e);
        return rc == 0 ? 0 : static_cast<int>(curvereg::ErrorCode::usage);
    }

    curvereg::RunConfig cfg;
    try {
        if (config_path) curvereg::apply_json(cfg, curvereg::read_json_file(*config_path));
    } catch (const curvereg::Error& e) {
        std::cerr << e.what() << "\n";
        return static_cast<int>(e.code());
    }
    cfg.subcommand = cli.get_subcommands().front()->get_name();
    override_with(input, cfg.input);
    override_with(output, cfg.output);
    override_with(scenario, cfg.scenario);
    override_with(method, cfg.method);
    override_with(kf, cfg.kf);
    override_with(kh, cfg.kh);
    override_with(order, cfg.order);
    override_with(burn_in, cfg.burn_in);
    override_with(iters, cfg.iters);
    override_with(alpha, cfg.alpha);
    override_with(inner, cfg.inner);
    override_with(seed, cfg.seed);
    override_with(n, cfg.n);
    override_with(curves, cfg.curves);
    override_with(replicates, cfg.replicates);
    override_with(M, cfg.M);
    override_with(restarts, cfg.restarts);
    override_with(families, cfg.families);
    override_with(family_tau, cfg.family_tau);
    override_with(grid_size, cfg.grid_size);
    override_with(threads, cfg.threads);
    return curvereg::run(cfg);
}
