#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tfopt/builders.hpp"
#include "tfopt/linalg.hpp"
#include "tfopt/logistic.hpp"
#include "tfopt/newton_inverse.hpp"
#include "tfopt/rng.hpp"
#include "tfopt/transformer.hpp"

namespace tfopt {

enum class Task { invert, linreg, logreg };

struct ExperimentConfig {
    Task task = Task::linreg;
    int d = 5;
    int n = 26;
    double kappa = 100.0;
    double noise_std = 0.1;
    double mu = 0.1;
    double eps = 1e-2;
    std::vector<int> orders = {2, 3};
    int t_max = 20;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int batch = 64;
    long long max_pieces = BudgetLimits{}.max_pieces;
};

inline void validate(const ExperimentConfig& c) {
    if (c.d < 1) throw DomainError("config: d must be >= 1");
    if (c.n < 1) throw DomainError("config: n must be >= 1");
    if (!(c.kappa >= 1.0)) throw DomainError("config: kappa must be >= 1");
    if (!(c.noise_std >= 0.0)) throw DomainError("config: noise_std must be >= 0");
    if (c.t_max < 0) throw DomainError("config: t_max must be >= 0");
    if (c.batch < 1) throw DomainError("config: batch must be >= 1");
    for (int o : c.orders)
        if (o < 2 || o > kMaxHyperpowerOrder) throw DomainError("config: orders must lie in [2, 8]");
    if (c.task != Task::invert && c.n < c.d) throw DomainError("config: need n >= d");
    if (c.task == Task::logreg && !(c.mu > 0.0)) throw DomainError("config: mu must be positive");
    if ((c.task == Task::logreg || c.task == Task::invert) && !(c.eps > 0.0 && c.eps < 1.0))
        throw DomainError("config: eps must lie in (0,1)");
}

// --- data ---

struct Covariance {
    DenseMatrix sigma;
    DenseMatrix basis;     // orthogonal U
    Vector eigenvalues;    // S, with sigma = U S U^T
};

inline Covariance gen_covariance(int d, double kappa, Rng& rng) {
    if (!(kappa >= 1.0)) throw DomainError("gen_covariance: kappa must be >= 1");
    Covariance c;
    const double lmax = rng.uniform(1.0, 100.0);
    const double lmin = lmax / kappa;
    c.eigenvalues.assign(d, lmax);
    if (d >= 2) c.eigenvalues[1] = lmin;
    for (int i = 2; i < d; ++i) c.eigenvalues[i] = rng.uniform(lmin, lmax);
    c.basis = random_orthogonal(d, rng);
    DenseMatrix us = c.basis;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) us(i, j) *= c.eigenvalues[j];
    c.sigma = matmul(us, c.basis.transpose());
    // Exact symmetry so downstream factorizations accept it.
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) c.sigma(j, i) = c.sigma(i, j);
    return c;
}

inline Vector sample_gaussian(const Covariance& c, Rng& rng) {
    const std::size_t d = c.eigenvalues.size();
    Vector z(d);
    for (std::size_t j = 0; j < d; ++j) z[j] = std::sqrt(c.eigenvalues[j]) * rng.normal();
    return matvec(c.basis, z);
}

struct LinregData {
    DenseMatrix a;
    Vector y;
    Vector a_test;
    double y_test = 0.0;
    Vector w_star;
    Covariance cov;
};

inline LinregData gen_linreg_data(const ExperimentConfig& cfg, Rng& rng) {
    if (!(cfg.kappa >= 1.0)) throw DomainError("gen_linreg_data: kappa must be >= 1");
    LinregData out;
    out.cov = gen_covariance(cfg.d, cfg.kappa, rng);
    out.w_star.resize(cfg.d);
    for (double& w : out.w_star) w = rng.normal();
    out.a = DenseMatrix(cfg.n, cfg.d);
    out.y.resize(cfg.n);
    for (int i = 0; i < cfg.n; ++i) {
        const Vector ai = sample_gaussian(out.cov, rng);
        for (int j = 0; j < cfg.d; ++j) out.a(i, j) = ai[j];
        out.y[i] = dot(ai, out.w_star) + cfg.noise_std * rng.normal();
    }
    out.a_test = sample_gaussian(out.cov, rng);
    out.y_test = dot(out.a_test, out.w_star) + cfg.noise_std * rng.normal();
    return out;
}

inline LinregData gen_linreg_data(const ExperimentConfig& cfg) {
    Rng rng(cfg.seed);
    return gen_linreg_data(cfg, rng);
}

struct LogregData {
    LogisticProblem problem;
    Vector w_star;
};

inline LogregData make_logreg_data(DenseMatrix a, const Vector& w_star, double mu) {
    double mx = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
        mx = std::max(mx, std::sqrt(s));
    }
    if (mx > 0.0) a *= 1.0 / mx;
    std::vector<int> y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * w_star[j];
        y[i] = s < 0.0 ? -1 : 1;
    }
    return {LogisticProblem(std::move(a), std::move(y), mu), w_star};
}

inline LogregData gen_logreg_data(const ExperimentConfig& cfg, Rng& rng) {
    const LinregData lin = gen_linreg_data(cfg, rng);
    return make_logreg_data(lin.a, lin.w_star, cfg.mu);
}

inline LogregData gen_logreg_data(const ExperimentConfig& cfg) {
    Rng rng(cfg.seed);
    return gen_logreg_data(cfg, rng);
}

inline LogregData gen_logreg_data(const ExperimentConfig& cfg, const Vector& w_star) {
    if (w_star.size() != static_cast<std::size_t>(cfg.d)) throw ShapeError("gen_logreg_data: w_star has wrong length");
    Rng rng(cfg.seed);
    const LinregData lin = gen_linreg_data(cfg, rng);
    return make_logreg_data(lin.a, w_star, cfg.mu);
}

// --- output ---

class CsvFile {
public:
    CsvFile(const std::string& dir, const std::string& name) {
        std::filesystem::create_directories(dir);
        path_ = (std::filesystem::path(dir) / name).string();
        os_.open(path_, std::ios::binary);
        if (!os_) throw IoError("cannot open " + path_);
    }
    std::ostream& stream() { return os_; }
    const std::string& path() const { return path_; }
    ~CsvFile() { os_.close(); }

private:
    std::string path_;
    std::ofstream os_;
};

struct RunSummary {
    std::vector<std::string> files;
    std::string message;
};

// --- invert ---

inline RunSummary run_invert_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    const DenseMatrix a = gen_covariance(cfg.d, cfg.kappa, rng).sigma;
    RunSummary sum;
    std::ostringstream msg;
    bool failed = false;
    std::string failure;
    for (int order : cfg.orders) {
        InverseRun run;
        try {
            run = run_inverse(a, order, cfg.eps, cfg.t_max);
        } catch (const InverseConvergenceError& e) {
            run = e.trace;
            failed = true;
            failure = e.what();
        }
        CsvFile f(cfg.out_dir, "invert_order" + std::to_string(order) + ".csv");
        write_csv(f.stream(), run);
        sum.files.push_back(f.path());
        msg << "order " << order << ": " << run.steps() << " steps, residual " << format_double(run.residuals.back())
            << ", predicted " << predicted_steps(cfg.kappa, cfg.eps, order) << '\n';
    }
    // Same iteration through the constructed two-layer block.
    {
        const double alpha = safe_alpha(a, 0.9);
        const Model block = build_inversion_block(cfg.d);
        const PromptLayout l = inversion_layout(cfg.d);
        DenseMatrix h = inversion_prompt(alpha * a.transpose(), a);
        DenseMatrix x = alpha * a.transpose();
        InverseRun tf;
        tf.alpha = alpha;
        tf.iterates.push_back(x);
        tf.residuals.push_back(inverse_residual(x, a));
        double dev = 0.0;
        for (int t = 0; t < cfg.t_max && tf.residuals.back() > cfg.eps; ++t) {
            h = model_forward(block, h);
            const DenseMatrix xt = l.extract(h, "X");
            x = newton_step(x, a);
            dev = std::max(dev, frobenius_norm(xt - x) / std::max(frobenius_norm(x), 1e-300));
            tf.iterates.push_back(xt);
            tf.residuals.push_back(inverse_residual(xt, a));
        }
        CsvFile f(cfg.out_dir, "invert_transformer.csv");
        write_csv(f.stream(), tf);
        sum.files.push_back(f.path());
        msg << "transformer: " << tf.steps() << " blocks (" << 2 * tf.steps() << " layers), max relative deviation from newton_step "
            << format_double(dev) << '\n';
    }
    sum.message = msg.str();
    if (failed) throw InverseConvergenceError(failure + "\n" + sum.message, InverseRun{});
    return sum;
}

// --- linreg ---

struct LinregPoint {
    std::string method;
    int t = 0;
    double mse = 0.0;
};

inline double linreg_oracle_prediction(const DenseMatrix& xt, const LinregData& data) {
    const Vector aty = matvec(data.a.transpose(), data.y);
    return dot(data.a_test, matvec(xt, aty));
}

inline std::vector<LinregPoint> linreg_curves(const ExperimentConfig& cfg) {
    validate(cfg);
    Rng master(cfg.seed);
    std::vector<Rng> streams;
    for (int b = 0; b < cfg.batch; ++b) streams.push_back(master.split());

    const int T = cfg.t_max;
    std::vector<double> tf(T + 1, 0.0), ls(T + 1, 0.0);
    std::vector<std::vector<double>> oracle(cfg.orders.size(), std::vector<double>(T + 1, 0.0));
    for (int b = 0; b < cfg.batch; ++b) {
        const LinregData data = gen_linreg_data(cfg, streams[b]);
        const DenseMatrix at = data.a.transpose();
        const DenseMatrix r = matmul(at, data.a);
        const double alpha = safe_alpha(r, 0.9);
        const Vector w_ls = solve_spd(r, matvec(at, data.y));
        const double e_ls = dot(data.a_test, w_ls) - data.y_test;
        for (std::size_t o = 0; o < cfg.orders.size(); ++o) {
            DenseMatrix x = alpha * r;
            for (int t = 0; t <= T; ++t) {
                if (t > 0) x = hyperpower_step(x, r, cfg.orders[o]);
                const double e = linreg_oracle_prediction(x, data) - data.y_test;
                oracle[o][t] += e * e;
            }
        }
        for (int t = 0; t <= T; ++t) {
            const LinregModel m = build_linreg_transformer(cfg.d, cfg.n, t, alpha);
            const DenseMatrix h = model_forward(m.model, linreg_prompt(m.layout, data.a, data.y, data.a_test));
            const double e = linreg_readout(m.layout, h) - data.y_test;
            tf[t] += e * e;
            ls[t] += e_ls * e_ls;
        }
    }
    std::vector<LinregPoint> pts;
    const double nb = cfg.batch;
    for (int t = 0; t <= T; ++t) {
        pts.push_back({"transformer", t, tf[t] / nb});
        for (std::size_t o = 0; o < cfg.orders.size(); ++o)
            pts.push_back({"newton_order" + std::to_string(cfg.orders[o]), t, oracle[o][t] / nb});
        pts.push_back({"least_squares", t, ls[t] / nb});
    }
    return pts;
}

inline RunSummary run_linreg_experiment(const ExperimentConfig& cfg) {
    const std::vector<LinregPoint> pts = linreg_curves(cfg);
    CsvFile f(cfg.out_dir, "linreg.csv");
    f.stream() << "method,T,mse\n";
    for (const auto& p : pts) f.stream() << p.method << ',' << p.t << ',' << format_double(p.mse) << '\n';
    RunSummary s;
    s.files.push_back(f.path());
    std::ostringstream msg;
    for (const auto& p : pts)
        if (p.t == cfg.t_max) msg << p.method << " T=" << p.t << " mse " << format_double(p.mse) << '\n';
    s.message = msg.str();
    return s;
}

// --- logreg ---

struct StepResult {
    Vector x;
    double step_size = 0.0;
    double injected_error_norm = 0.0;
};

using StepFn = std::function<StepResult(int t, const Vector& x)>;

inline IterateTrace trace_fixed_steps(const LogisticProblem& p, const Vector& x0, int steps, const StepFn& step,
                                      const Vector& x_star) {
    const double g_star = scaled_loss(loss(p, x_star), p.mu());
    IterateTrace tr;
    Vector x = x0;
    for (int t = 0; t <= steps; ++t) {
        IterateRecord rec = make_record(p, t, x, g_star);
        if (t < steps) {
            const StepResult s = step(t, x);
            rec.step_size = s.step_size;
            rec.injected_error_norm = s.injected_error_norm;
            x = s.x;
        }
        tr.records.push_back(std::move(rec));
    }
    return tr;
}

inline Vector random_direction(std::size_t d, double norm, Rng& rng) {
    Vector v(d);
    for (double& x : v) x = rng.normal();
    const double s = norm2(v);
    for (double& x : v) x *= norm / s;
    return v;
}

struct LogregTraces {
    IterateTrace exact, inexact, transformer;
    BudgetReport budget;
};

inline LogregTraces logreg_traces(const ExperimentConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    const LogregData data = gen_logreg_data(cfg, rng);
    const LogisticProblem& p = data.problem;
    Rng err_rng = rng.split();
    const Vector x0(p.d(), 0.0);
    const Vector x_star = reference_minimizer(p);

    LogregTraces out;
    out.budget = width_depth_budget(cfg.eps, p.mu(), (1.0 + p.mu()) / p.mu(), p.d(), {cfg.max_pieces, 16});
    const LogregNewtonStack st = build_logreg_newton_step(p, out.budget);

    out.exact = trace_fixed_steps(p, x0, cfg.t_max, [&](int, const Vector& x) {
        const NewtonState s = damped_step(p, x);
        return StepResult{s.x, s.step_size, 0.0};
    }, x_star);
    out.inexact = trace_fixed_steps(p, x0, cfg.t_max, [&](int, const Vector& x) {
        const NewtonState s = damped_step(p, x, random_direction(p.d(), cfg.eps, err_rng));
        return StepResult{s.x, s.step_size, s.injected_error_norm};
    }, x_star);
    out.transformer = trace_fixed_steps(p, x0, cfg.t_max, [&](int, const Vector& x) {
        const NewtonState s = damped_step(p, x);
        const Vector xt = logreg_transformer_step(st, p, x);
        return StepResult{xt, s.step_size, norm2(axpy(-1.0, s.x, xt))};
    }, x_star);
    return out;
}

inline RunSummary run_logreg_experiment(const ExperimentConfig& cfg) {
    const LogregTraces tr = logreg_traces(cfg);
    RunSummary s;
    const std::pair<const char*, const IterateTrace*> named[] = {
        {"exact", &tr.exact}, {"inexact", &tr.inexact}, {"transformer", &tr.transformer}};
    for (const auto& [name, t] : named) {
        CsvFile f(cfg.out_dir, std::string("logreg_") + name + ".csv");
        write_csv(f.stream(), *t);
        s.files.push_back(f.path());
    }
    CsvFile f(cfg.out_dir, "logreg_loss.csv");
    f.stream() << "method,step,layers_per_step,layers,f\n";
    const int lps = tr.budget.depth;
    for (const auto& [name, t] : named)
        for (const auto& r : t->records)
            f.stream() << name << ',' << r.step << ',' << lps << ',' << r.step * lps << ',' << format_double(r.f) << '\n';
    s.files.push_back(f.path());
    {
        CsvFile b(cfg.out_dir, "budget.json");
        b.stream() << tr.budget.to_json() << '\n';
        s.files.push_back(b.path());
    }
    double worst = 0.0;
    for (const auto& r : tr.transformer.records) worst = std::max(worst, r.injected_error_norm);
    std::ostringstream msg;
    msg << "layers per step " << lps << " (k=" << tr.budget.k << "), final f exact " << format_double(tr.exact.records.back().f)
        << ", transformer " << format_double(tr.transformer.records.back().f) << ", max per-step deviation "
        << format_double(worst) << '\n';
    s.message = msg.str();
    return s;
}

// --- budget and scan ---

inline RunSummary run_budget(const ExperimentConfig& cfg) {
    const BudgetReport b = width_depth_budget(cfg.eps, cfg.mu, cfg.kappa, cfg.d, {cfg.max_pieces, 16});
    CsvFile f(cfg.out_dir, "budget.json");
    f.stream() << b.to_json() << '\n';
    return {{f.path()}, b.to_json() + "\n"};
}

inline RunSummary run_scan(const ExperimentConfig& cfg, int grid_x, int grid_c) {
    const ScanResult r = scan_constant_decrease_report(grid_x, grid_c);
    nlohmann::ordered_json j;
    j["grid_x"] = grid_x;
    j["grid_c"] = grid_c;
    j["max_h"] = r.max_h;
    j["argmax"] = {{"x", r.arg_x}, {"c", r.arg_c}, {"c_prime", r.arg_cp}};
    j["evaluated"] = r.evaluated;
    j["anomalies"] = r.anomalies.size();
    j["meets_decrease_0_01"] = r.max_h <= -0.01;
    CsvFile s(cfg.out_dir, "scan_summary.json");
    s.stream() << j.dump(2) << '\n';
    CsvFile a(cfg.out_dir, "scan_anomalies.csv");
    a.stream() << "x,c,c_prime,radicand\n";
    for (const auto& an : r.anomalies)
        a.stream() << format_double(an.x) << ',' << format_double(an.c) << ',' << format_double(an.cp) << ','
                   << format_double(an.radicand) << '\n';
    return {{s.path(), a.path()}, j.dump(2) + "\n"};
}

}  // namespace tfopt
