// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--expect-fail 3,10]
// Exit status is 0 when the set of failing criteria equals the expected set
// (empty by default), so criteria known to be unattainable stay visibly red
// without breaking ctest, and any change in either direction is caught.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "oracles.hpp"
#include "tfopt/harness.hpp"

using namespace tfopt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* title;
    double time_limit_s;  // 0 = no limit
    std::function<Outcome()> run;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

LogisticProblem logreg_problem(std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.task = Task::logreg;
    cfg.seed = seed;
    cfg.kappa = 10;
    return gen_logreg_data(cfg).problem;
}

Outcome c1_inversion_equivalence() {
    Rng rng(101);
    double worst = 0.0;
    int cases = 0;
    for (std::size_t d : {2, 4, 8}) {
        const PromptLayout l = inversion_layout(d);
        const Model block = build_inversion_block(d);
        for (int trial = 0; trial < 100; ++trial) {
            const DenseMatrix a = oracle::random_matrix(d, d, rng);
            const DenseMatrix x0 = safe_alpha(a, 0.9) * a.transpose();
            const DenseMatrix h = model_forward(block, inversion_prompt(x0, a));
            worst = std::max(worst, oracle::rel_frobenius(l.extract(h, "X"), newton_step(x0, a)));
            ++cases;
        }
    }
    return {worst <= 1e-12, std::to_string(cases) + " cases, max relative Frobenius deviation " + fmt(worst)};
}

Outcome c2_convergence_order() {
    Rng rng(102);
    std::ostringstream os;
    bool ok = true;
    for (double kappa : {10.0, 100.0}) {
        const DenseMatrix a = oracle::spd_with_condition(8, kappa, rng);
        for (int order : {2, 3}) {
            const InverseRun run = run_inverse(a, order, 1e-12, 200);
            // Pairs whose successor sits at the rounding floor carry no order information.
            const double q = fitted_order(run.residuals, 3, 1e-13);
            const double need = order == 2 ? 1.9 : 2.8;
            ok = ok && q >= need;
            os << "kappa=" << kappa << " order " << order << ": " << fmt(q) << " (need " << need << "); ";
        }
    }
    return {ok, os.str()};
}

Outcome c3_step_scaling() {
    Rng rng(103);
    std::vector<int> steps;
    std::ostringstream os;
    os << "steps";
    for (double kappa : {4.0, 16.0, 64.0, 256.0}) {
        steps.push_back(run_inverse(oracle::spd_with_condition(8, kappa, rng), 2, 1e-10, 200).steps());
        os << ' ' << steps.back();
    }
    int worst = 0;
    for (std::size_t i = 1; i < steps.size(); ++i) worst = std::max(worst, steps[i] - steps[i - 1]);
    os << ", max growth per quadrupling " << worst
       << " (X0 = alpha A^T makes the effective condition kappa^2, so 2 log2 4 = 4 is expected)";
    return {worst <= 2.5, os.str()};
}

Outcome c4_linreg_end_to_end() {
    double worst = 0.0;
    int t_max = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
        ExperimentConfig cfg;
        cfg.d = 10;
        cfg.n = 50;
        cfg.kappa = 100;
        cfg.seed = seed;
        const LinregData data = gen_linreg_data(cfg);
        const DenseMatrix at = data.a.transpose();
        const DenseMatrix r = matmul(at, data.a);
        const Vector ev = oracle::jacobi_eigenvalues(r);
        const double kr = ev.back() / ev.front();
        // X0 = alpha A^T A, so the iteration sees condition kappa(A^T A)^2.
        const int t = predicted_steps(kr * kr, 1e-12, 2);
        t_max = std::max(t_max, t);
        const LinregModel m = build_linreg_transformer(10, 50, t, safe_alpha(r, 0.9));
        const double yhat = linreg_readout(m.layout, model_forward(m.model, linreg_prompt(m.layout, data.a, data.y, data.a_test)));
        const double want = dot(data.a_test, solve_spd(r, matvec(at, data.y)));
        worst = std::max(worst, std::abs(yhat - want) / (1.0 + std::abs(want)));
    }
    return {worst <= 1e-6, "50 seeds, T up to " + std::to_string(t_max) + ", max relative error " + fmt(worst)};
}

Outcome c5_logistic_derivatives() {
    double g_err = 0, h_err = 0, lo = INFINITY, hi = 0;
    for (std::uint64_t seed = 500; seed < 550; ++seed) {
        const LogisticProblem p = logreg_problem(seed);
        Rng rng(seed);
        Vector x(p.d());
        for (double& v : x) v = 2.0 * rng.normal();
        const LossEval e = loss_grad_hess(p, x);
        const Vector fd = oracle::central_gradient([&](const Vector& v) { return loss(p, v); }, x, 1e-5);
        g_err = std::max(g_err, norm2(axpy(-1.0, fd, e.grad)) / norm2(fd));
        const DenseMatrix fh =
            oracle::central_jacobian([&](const Vector& v) { return loss_grad_hess(p, v).grad; }, x, 1e-5);
        h_err = std::max(h_err, oracle::rel_frobenius(e.hess, fh));
        const Vector ev = oracle::jacobi_eigenvalues(e.hess);
        lo = std::min(lo, ev.front() / p.mu());
        hi = std::max(hi, ev.back() / (1 + p.mu()));
    }
    const bool ok = g_err <= 1e-5 && h_err <= 1e-5 && lo >= 1 - 1e-12 && hi <= 1 + 1e-12;
    return {ok, "grad rel err " + fmt(g_err) + ", Hessian rel err " + fmt(h_err) + ", lambda_min/mu " + fmt(lo) +
                    ", lambda_max/(1+mu) " + fmt(hi)};
}

Outcome c6_damped_newton_phases() {
    int first = 0, second = 0;
    double min_drop = INFINITY, worst_quad = -INFINITY;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const LogisticProblem p = logreg_problem(seed);
        const double mu = p.mu();
        Rng rng(seed + 600);
        for (double scale : {0.0, 3.0, 10.0}) {
            Vector x(p.d(), 0.0);
            if (scale > 0) x = random_direction(p.d(), scale, rng);
            for (int t = 0; t < 60; ++t) {
                const NewtonState s = damped_step(p, x);
                const double lg = scaled_decrement(s.lambda, mu);
                if (lg < 1e-9) break;
                if (lg >= kQuadraticPhaseThreshold) {
                    min_drop = std::min(min_drop, scaled_loss(loss(p, x), mu) - scaled_loss(loss(p, s.x), mu));
                    ++first;
                } else {
                    const double next = scaled_decrement(newton_decrement(p, s.x), mu);
                    worst_quad = std::max(worst_quad, next - (3 * lg * lg + 1e-12));
                    ++second;
                }
                x = s.x;
            }
        }
    }
    const bool ok = first > 0 && second > 0 && min_drop >= 0.01 && worst_quad <= 0.0;
    return {ok, std::to_string(first) + " first-phase steps, min decrease " + fmt(min_drop) + "; " +
                    std::to_string(second) + " quadratic-phase steps, max excess over 3 lambda^2 " + fmt(worst_quad)};
}

Outcome c7_inexact_convergence() {
    std::vector<double> ll, worst_steps;
    std::ostringstream os;
    bool ok = true;
    for (double delta : {1e-4, 1e-6, 1e-8}) {
        const double loglog = std::log(std::log(1.0 / delta));
        int worst = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const LogisticProblem p = logreg_problem(seed);
            const double g_star = scaled_loss(loss(p, reference_minimizer(p)), p.mu());
            Rng rng(seed + 700);
            Vector x(p.d(), 0.0);
            int reached = -1;
            double final_gap = 0.0;
            for (int t = 0; t <= 60; ++t) {
                final_gap = scaled_loss(loss(p, x), p.mu()) - g_star;
                if (reached < 0 && final_gap <= 1e-3) reached = t;
                if (t < 60) x = damped_step(p, x, random_direction(p.d(), delta, rng)).x;
            }
            if (reached < 0 || final_gap > 1e-3) ok = false;
            worst = std::max(worst, reached < 0 ? 1000 : reached);
        }
        ok = ok && worst <= 30 + 4 * loglog;
        ll.push_back(loglog);
        worst_steps.push_back(worst);
        os << "error " << delta << ": " << worst << " steps (allowed " << fmt(30 + 4 * loglog) << "); ";
    }
    // Least-squares envelope steps ~ C1 + C2 loglog(1/error).
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < ll.size(); ++i) mx += ll[i] / ll.size(), my += worst_steps[i] / ll.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < ll.size(); ++i) sxy += (ll[i] - mx) * (worst_steps[i] - my), sxx += (ll[i] - mx) * (ll[i] - mx);
    const double c2 = sxy / sxx, c1 = my - c2 * mx;
    ok = ok && c1 <= 30 && c2 <= 4;
    os << "fitted C1=" << fmt(c1) << " C2=" << fmt(c2);
    return {ok, os.str()};
}

Outcome c8_constructed_logistic_step() {
    ExperimentConfig cfg;
    const LogregData data = gen_logreg_data(cfg);
    const LogisticProblem& p = data.problem;
    const BudgetReport b = width_depth_budget(1e-2, p.mu(), (1 + p.mu()) / p.mu(), p.d());
    const LogregNewtonStack st = build_logreg_newton_step(p, b);
    const Vector x0(p.d(), 0.0);
    const double dev = norm2(axpy(-1.0, damped_step(p, x0).x, logreg_transformer_step(st, p, x0)));
    const bool depth_ok = static_cast<int>(st.model.size()) == 11 + 2 * b.k;
    return {dev <= 1e-2 && depth_ok, "k=" + std::to_string(b.k) + ", depth " + std::to_string(st.model.size()) +
                                         ", ||x1_hat - x1|| = " + fmt(dev)};
}

Outcome c9_pwl_width_law() {
    std::ostringstream os;
    bool ok = true;
    for (int n : {250, 1000, 4000}) {
        const PwlApprox pw = build_pwl(sigmoid_derivative, -10, 10, n);
        const double err = oracle::dense_sup_error([&](double z) { return eval_pwl(pw, z); }, sigmoid_derivative, -10, 10, 100000);
        ok = ok && err <= 4.0 / n;
        os << "N=" << n << " sup err " << fmt(err) << " (4/N=" << fmt(4.0 / n) << "); ";
    }
    std::vector<double> ns, errs;
    for (int n : {25, 50, 100, 200, 400, 800}) {
        const ProductApprox pa = build_product({-1.1, 1.1}, {-1.1, 1.1}, n);
        double worst = 0;
        for (int i = 0; i <= 300; ++i)
            for (int j = 0; j <= 300; ++j) {
                const double x = -1.1 + 2.2 * i / 300, y = -1.1 + 2.2 * j / 300;
                worst = std::max(worst, std::abs(eval_product(pa, x, y) - x * y));
            }
        ns.push_back(n);
        errs.push_back(worst);
    }
    const double slope = oracle::loglog_slope(ns, errs);
    ok = ok && std::abs(slope + 2.0) <= 0.2;
    os << "product slope " << fmt(slope);
    return {ok, os.str()};
}

Outcome c10_constant_decrease_scan() {
    const ScanResult r = scan_constant_decrease_report(500, 500);
    return {r.max_h <= -0.01, "max " + fmt(r.max_h) + " at x=" + fmt(r.arg_x) + " c=" + fmt(r.arg_c) + " c'=" +
                                  fmt(r.arg_cp) + ", " + std::to_string(r.anomalies.size()) +
                                  " grid points with negative radicand"};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

Outcome c11_reproducibility() {
    const std::vector<std::string> runs = {
        "invert --d 6 --kappa 50 --eps 1e-10 --t-max 60 --save-model",
        "linreg --batch 8 --t-max 10 --save-model",
        "logreg --t-max 6",
        "budget",
        "scan-decrease",
    };
    const fs::path root = fs::temp_directory_path() / "tfopt_acceptance_repro";
    std::ostringstream os;
    bool ok = true;
    std::size_t files = 0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::map<std::string, std::string> first;
        for (int rep = 0; rep < 2; ++rep) {
            const fs::path dir = root / (std::to_string(i) + "_" + std::to_string(rep));
            fs::remove_all(dir);
            const std::string cmd =
                std::string(TFOPT_CLI_PATH) + " " + runs[i] + " --seed 11 --out-dir " + dir.string() + " > /dev/null 2>&1";
            const int status = std::system(cmd.c_str());
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
                ok = false;
                os << "'" << runs[i] << "' failed; ";
                break;
            }
            const auto bytes = tree_bytes(dir);
            if (rep == 0) {
                first = bytes;
                files += bytes.size();
            } else if (bytes != first) {
                ok = false;
                os << "'" << runs[i] << "' differs between runs; ";
            }
        }
    }
    fs::remove_all(root);
    os << runs.size() << " subcommands, " << files << " files compared byte for byte";
    return {ok, os.str()};
}

std::set<int> parse_ids(const std::string& s) {
    std::set<int> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty()) out.insert(std::stoi(tok));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> expected_fail;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--expect-fail" && i + 1 < argc) {
            expected_fail = parse_ids(argv[++i]);
        } else {
            std::cerr << "usage: acceptance [--expect-fail ids]\n";
            return 1;
        }
    }

    const std::vector<Criterion> criteria = {
        {1, "construction-oracle equivalence", 5, c1_inversion_equivalence},
        {2, "quadratic and cubic convergence order", 0, c2_convergence_order},
        {3, "step-count scaling in kappa", 10, c3_step_scaling},
        {4, "linear regression end to end", 0, c4_linreg_end_to_end},
        {5, "logistic derivatives", 0, c5_logistic_derivatives},
        {6, "damped Newton phases", 0, c6_damped_newton_phases},
        {7, "inexact convergence envelope", 0, c7_inexact_convergence},
        {8, "constructed logistic step", 60, c8_constructed_logistic_step},
        {9, "PWL width law", 0, c9_pwl_width_law},
        {10, "constant-decrease scan", 5, c10_constant_decrease_scan},
        {11, "CLI reproducibility", 0, c11_reproducibility},
    };

    std::set<int> failed;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit_s > 0 && secs > c.time_limit_s) {
            o.pass = false;
            o.detail += "; runtime above " + fmt(c.time_limit_s) + " s";
        }
        if (!o.pass) failed.insert(c.id);
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << ", " << fmt(secs)
                  << " s): " << o.detail << std::endl;
    }

    std::cout << (criteria.size() - failed.size()) << "/" << criteria.size() << " criteria pass";
    if (!expected_fail.empty()) {
        std::cout << "; expected failures:";
        for (int id : expected_fail) std::cout << ' ' << id;
    }
    std::cout << '\n';
    if (failed != expected_fail) {
        std::cout << "failing set differs from the expected set\n";
        return 1;
    }
    return 0;
}
