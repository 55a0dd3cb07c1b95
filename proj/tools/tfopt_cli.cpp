#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "tfopt/harness.hpp"

namespace {

using namespace tfopt;

void save_models(const ExperimentConfig& cfg, const std::string& which) {
    const std::string dir = (std::filesystem::path(cfg.out_dir) / "model").string();
    if (which == "invert") {
        save_model(dir, build_inversion_block(cfg.d));
    } else if (which == "linreg") {
        const LinregData data = gen_linreg_data(cfg);
        const DenseMatrix r = matmul(data.a.transpose(), data.a);
        save_model(dir, build_linreg_transformer(cfg.d, cfg.n, cfg.t_max, safe_alpha(r, 0.9)).model);
    } else if (which == "logreg") {
        const LogregData data = gen_logreg_data(cfg);
        const double mu = data.problem.mu();
        const BudgetReport b = width_depth_budget(cfg.eps, mu, (1.0 + mu) / mu, cfg.d, {cfg.max_pieces, 16});
        save_model(dir, build_logreg_newton_step(data.problem, b).model);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Newton-type solvers and linear-attention constructions that emulate them"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key=value file; command-line flags win");

    ExperimentConfig cfg;
    bool save_model_flag = false;
    int grid_x = 500, grid_c = 500;
    app.add_option("--d", cfg.d, "data dimension")->capture_default_str();
    app.add_option("--n", cfg.n, "in-context samples")->capture_default_str();
    app.add_option("--kappa", cfg.kappa, "condition number (kappa_f for budget)")->capture_default_str();
    app.add_option("--noise-std,--noise_std", cfg.noise_std, "label noise standard deviation")->capture_default_str();
    app.add_option("--mu", cfg.mu, "L2 regularization")->capture_default_str();
    app.add_option("--eps", cfg.eps, "target accuracy")->capture_default_str();
    app.add_option("--orders", cfg.orders, "hyperpower orders")->delimiter(',')->capture_default_str();
    app.add_option("--t-max,--t_max", cfg.t_max, "maximum steps / layers")->capture_default_str();
    app.add_option("--seed", cfg.seed, "RNG seed")->capture_default_str();
    app.add_option("--out-dir,--out_dir", cfg.out_dir, "output directory")->capture_default_str();
    app.add_option("--batch", cfg.batch, "prompts per linreg point")->capture_default_str();
    app.add_option("--max-pieces,--max_pieces", cfg.max_pieces, "width ceiling per approximator")->capture_default_str();
    app.add_option("--grid-x,--grid_x", grid_x, "scan grid over x")->capture_default_str();
    app.add_option("--grid-c,--grid_c", grid_c, "scan grid over c")->capture_default_str();
    app.add_flag("--save-model,--save_model", save_model_flag, "also write the constructed weights under out-dir/model");

    auto* invert = app.add_subcommand("invert", "Newton-Schulz and hyperpower inversion vs the constructed block");
    auto* linreg = app.add_subcommand("linreg", "in-context linear regression, constructed model vs oracles");
    auto* logreg = app.add_subcommand("logreg", "damped Newton on logistic loss: exact, inexact, constructed");
    auto* budget = app.add_subcommand("budget", "width/depth budget of one constructed logistic step");
    auto* scan = app.add_subcommand("scan-decrease", "grid scan of the constant-decrease bound");
    for (auto* s : {invert, linreg, logreg, budget, scan}) s->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunSummary s;
        std::string which;
        if (invert->parsed()) {
            cfg.task = Task::invert;
            which = "invert";
            s = run_invert_experiment(cfg);
        } else if (linreg->parsed()) {
            cfg.task = Task::linreg;
            which = "linreg";
            s = run_linreg_experiment(cfg);
        } else if (logreg->parsed()) {
            cfg.task = Task::logreg;
            which = "logreg";
            s = run_logreg_experiment(cfg);
        } else if (budget->parsed()) {
            s = run_budget(cfg);
        } else {
            s = run_scan(cfg, grid_x, grid_c);
        }
        if (save_model_flag) save_models(cfg, which);
        std::cout << s.message;
        for (const auto& f : s.files) std::cout << "wrote " << f << '\n';
        return 0;
    } catch (const BudgetError& e) {
        std::cerr << "budget error: " << e.what() << '\n';
        return 2;
    } catch (const InverseConvergenceError& e) {
        std::cerr << "convergence error: " << e.what() << '\n';
        return 2;
    } catch (const NewtonConvergenceError& e) {
        std::cerr << "convergence error: " << e.what() << '\n';
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
