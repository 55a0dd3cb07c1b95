#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tfopt/linalg.hpp"

namespace tfopt {

class LogisticProblem {
public:
    LogisticProblem(DenseMatrix a, std::vector<int> y, double mu) : a_(std::move(a)), y_(std::move(y)), mu_(mu) {
        if (y_.size() != a_.rows())
            throw ShapeError("LogisticProblem: " + std::to_string(y_.size()) + " labels for " +
                             std::to_string(a_.rows()) + " rows");
        if (!(mu_ > 0.0)) throw DomainError("LogisticProblem: mu must be positive");
        for (std::size_t i = 0; i < y_.size(); ++i) {
            if (y_[i] != 1 && y_[i] != -1)
                throw DomainError("LogisticProblem: label " + std::to_string(i) + " not in {-1,+1}");
            double s = 0.0;
            for (std::size_t j = 0; j < a_.cols(); ++j) s += a_(i, j) * a_(i, j);
            if (std::sqrt(s) > 1.0 + 1e-12)
                throw DomainError("LogisticProblem: row " + std::to_string(i) + " has norm above 1");
        }
        require_finite(a_, "LogisticProblem");
    }

    const DenseMatrix& a() const { return a_; }
    const std::vector<int>& y() const { return y_; }
    double mu() const { return mu_; }
    std::size_t n() const { return a_.rows(); }
    std::size_t d() const { return a_.cols(); }

private:
    DenseMatrix a_;
    std::vector<int> y_;
    double mu_;
};

inline constexpr double kExpClamp = 40.0;

struct LossEval {
    double f = 0.0;
    Vector grad;
    DenseMatrix hess;
};

// log(1 + e^t) without overflow.
inline double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

inline void require_dim(const LogisticProblem& p, const Vector& x, const char* where) {
    if (x.size() != p.d())
        throw ShapeError(std::string(where) + ": x has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(p.d()));
}

// p_i = 1 / (1 + exp(y_i x^T a_i)) with the exponent clamped.
inline Vector logistic_weights(const LogisticProblem& p, const Vector& x) {
    require_dim(p, x, "logistic_weights");
    const Vector z = matvec(p.a(), x);
    Vector w(p.n());
    for (std::size_t i = 0; i < p.n(); ++i) {
        const double t = std::clamp(p.y()[i] * z[i], -kExpClamp, kExpClamp);
        w[i] = 1.0 / (1.0 + std::exp(t));
    }
    return w;
}

inline double loss(const LogisticProblem& p, const Vector& x) {
    require_dim(p, x, "loss");
    const Vector z = matvec(p.a(), x);
    double s = 0.0;
    for (std::size_t i = 0; i < p.n(); ++i) s += softplus(-p.y()[i] * z[i]);
    return s / static_cast<double>(p.n()) + 0.5 * p.mu() * dot(x, x);
}

inline LossEval loss_grad_hess(const LogisticProblem& p, const Vector& x) {
    require_dim(p, x, "loss_grad_hess");
    const std::size_t n = p.n(), d = p.d();
    const double inv_n = 1.0 / static_cast<double>(n);
    const Vector w = logistic_weights(p, x);
    LossEval out;
    out.f = loss(p, x);
    out.grad.assign(d, 0.0);
    out.hess = DenseMatrix(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = p.a().row_ptr(i);
        const double gi = p.y()[i] * w[i];
        const double di = w[i] * (1.0 - w[i]);
        for (std::size_t j = 0; j < d; ++j) {
            out.grad[j] -= gi * ai[j];
            for (std::size_t k = 0; k < d; ++k) out.hess(j, k) += di * ai[j] * ai[k];
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        out.grad[j] = out.grad[j] * inv_n + p.mu() * x[j];
        for (std::size_t k = 0; k < d; ++k) out.hess(j, k) *= inv_n;
        out.hess(j, j) += p.mu();
    }
    return out;
}

inline double newton_decrement(const LogisticProblem& p, const Vector& x) {
    const LossEval e = loss_grad_hess(p, x);
    return std::sqrt(std::max(0.0, dot(e.grad, solve_spd(e.hess, e.grad))));
}

// Decrement of g = f / (4 mu).
inline double scaled_decrement(double lambda_f, double mu) { return lambda_f / (2.0 * std::sqrt(mu)); }

inline double scaled_loss(double f, double mu) { return f / (4.0 * mu); }

inline double damped_step_size(double lambda_f, double mu) {
    const double r = 2.0 * std::sqrt(mu);
    return r / (r + lambda_f);
}

struct NewtonState {
    Vector x;
    double lambda = 0.0;  // lambda_f at the point the step was taken from
    double step_size = 1.0;
    double injected_error_norm = 0.0;
};

inline NewtonState damped_step(const LogisticProblem& p, const Vector& x,
                               const std::optional<Vector>& injected_error = std::nullopt) {
    const LossEval e = loss_grad_hess(p, x);
    const Vector v = solve_spd(e.hess, e.grad);
    NewtonState s;
    s.lambda = std::sqrt(std::max(0.0, dot(e.grad, v)));
    s.step_size = damped_step_size(s.lambda, p.mu());
    s.x = axpy(-s.step_size, v, x);
    if (injected_error) {
        if (injected_error->size() != x.size()) throw ShapeError("damped_step: injected error has wrong length");
        s.x = axpy(1.0, *injected_error, s.x);
        s.injected_error_norm = norm2(*injected_error);
    }
    return s;
}

struct IterateRecord {
    int step = 0;
    Vector x;
    double f = 0.0;
    double g = 0.0;
    double lambda_g = 0.0;
    double step_size = 0.0;            // step taken from this iterate (0 on the final row)
    double injected_error_norm = 0.0;  // error added on that step
    double g_suboptimality = 0.0;
};

struct IterateTrace {
    std::vector<IterateRecord> records;
};

using NewtonConvergenceError = ConvergenceError<IterateTrace>;

inline IterateRecord make_record(const LogisticProblem& p, int step, const Vector& x, double g_star) {
    IterateRecord r;
    r.step = step;
    r.x = x;
    r.f = loss(p, x);
    r.g = scaled_loss(r.f, p.mu());
    r.lambda_g = scaled_decrement(newton_decrement(p, x), p.mu());
    r.g_suboptimality = r.g - g_star;
    return r;
}

// Exact damped Newton until lambda_g <= tol; the operational minimizer.
inline Vector reference_minimizer(const LogisticProblem& p, double tol = 1e-12, int max_iters = 500) {
    Vector x(p.d(), 0.0);
    for (int t = 0; t < max_iters; ++t) {
        const NewtonState s = damped_step(p, x);
        if (scaled_decrement(s.lambda, p.mu()) <= tol) return x;
        x = s.x;
    }
    throw NumericError("reference_minimizer: no convergence");
}

using ErrorSource = std::function<Vector(int step, const Vector& x)>;

struct InexactOptions {
    std::optional<double> stop_lambda_g;  // defaults to sqrt(eps)
    std::optional<Vector> x_star;         // defaults to reference_minimizer
};

inline IterateTrace run_inexact_newton(const LogisticProblem& p, const Vector& x0, double eps,
                                       const ErrorSource& error_source, int max_iters,
                                       const InexactOptions& opt = {}) {
    if (!(eps > 0.0)) throw DomainError("run_inexact_newton: eps must be positive");
    require_dim(p, x0, "run_inexact_newton");
    const double stop = opt.stop_lambda_g.value_or(std::sqrt(eps));
    const Vector x_star = opt.x_star ? *opt.x_star : reference_minimizer(p);
    const double g_star = scaled_loss(loss(p, x_star), p.mu());

    IterateTrace trace;
    Vector x = x0;
    for (int t = 0;; ++t) {
        IterateRecord rec = make_record(p, t, x, g_star);
        if (rec.lambda_g <= stop) {
            trace.records.push_back(std::move(rec));
            return trace;
        }
        if (t == max_iters) {
            const std::string msg = "run_inexact_newton: lambda_g still " + format_double(rec.lambda_g) + " after " +
                                    std::to_string(max_iters) + " steps";
            trace.records.push_back(std::move(rec));
            throw NewtonConvergenceError(msg, std::move(trace));
        }
        Vector err = error_source ? error_source(t, x) : Vector(p.d(), 0.0);
        if (err.size() != p.d()) throw ShapeError("run_inexact_newton: error source returned wrong length");
        const NewtonState s = damped_step(p, x, err);
        rec.step_size = s.step_size;
        rec.injected_error_norm = s.injected_error_norm;
        trace.records.push_back(std::move(rec));
        x = s.x;
    }
}

// omega*(t) = -t - ln(1 - t): bound on g(x) - g(x*) for lambda_g < 1.
inline double suboptimality_bound(double lambda_g) {
    if (!(lambda_g >= 0.0 && lambda_g < 1.0)) throw DomainError("suboptimality_bound: need 0 <= lambda_g < 1");
    return -lambda_g - std::log1p(-lambda_g);
}

inline double omega(double t) { return t - std::log1p(t); }

// Valid for lambda_g <= 1/6.
inline double relaxed_suboptimality_bound(double lambda_g) { return 0.6 * lambda_g * lambda_g; }

// Additive term of the quadratic-phase recursion lambda' <= 3 lambda^2 + eps'.
inline double quadratic_phase_slack(double eps, double mu) {
    return 3.0 * eps * (1.0 + mu) / (8.0 * mu) + eps * std::sqrt(1.0 + mu) / (2.0 * std::sqrt(mu));
}

inline constexpr double kQuadraticPhaseThreshold = 1.0 / 6.0;

// --- constant-decrease scan ---

// h(x) for one-step decrease with error terms c, c'. Empty when the radicand
// leaves [0, 1).
inline std::optional<double> decrease_bound(double x, double c, double cp, double* radicand = nullptr) {
    const double r = x * x / ((1 + x) * (1 + x)) - 2 * c / (1 + x) + cp;
    if (radicand) *radicand = r;
    if (!(r >= 0.0)) return std::nullopt;
    const double delta = std::sqrt(r);
    if (!(delta < 1.0)) return std::nullopt;
    return -x * x / (1 + x) + c - std::log1p(-delta) - delta;
}

struct ScanAnomaly {
    double x, c, cp, radicand;
};

struct ScanResult {
    double max_h = -INFINITY;
    double arg_x = 0, arg_c = 0, arg_cp = 0;
    std::size_t evaluated = 0;
    std::vector<ScanAnomaly> anomalies;
};

struct ScanRanges {
    double x_lo = 1.0 / 6.0;
    double x_hi = 1.0;
    double c_max = 0.06;
    double cp_max = 1e-4;
    int grid_cp = 5;
};

inline ScanResult scan_constant_decrease_report(int grid_x, int grid_c, const ScanRanges& rg = {}) {
    if (grid_x < 100 || grid_c < 100) throw DomainError("scan_constant_decrease: grid sizes must be >= 100");
    if (rg.grid_cp < 1) throw DomainError("scan_constant_decrease: grid_cp must be >= 1");
    ScanResult res;
    auto lin = [](double lo, double hi, int n, int i) { return n == 1 ? lo : lo + (hi - lo) * i / (n - 1); };
    for (int k = 0; k < rg.grid_cp; ++k) {
        const double cp = rg.grid_cp == 1 ? rg.cp_max : lin(-rg.cp_max, rg.cp_max, rg.grid_cp, k);
        for (int i = 0; i < grid_x; ++i) {
            const double x = lin(rg.x_lo, rg.x_hi, grid_x, i);
            for (int j = 0; j < grid_c; ++j) {
                const double c = lin(-rg.c_max, rg.c_max, grid_c, j);
                double rad = 0.0;
                const auto h = decrease_bound(x, c, cp, &rad);
                if (!h) {
                    res.anomalies.push_back({x, c, cp, rad});
                    continue;
                }
                ++res.evaluated;
                if (*h > res.max_h) {
                    res.max_h = *h;
                    res.arg_x = x;
                    res.arg_c = c;
                    res.arg_cp = cp;
                }
            }
        }
    }
    return res;
}

inline double scan_constant_decrease(int grid_x, int grid_c) {
    return scan_constant_decrease_report(grid_x, grid_c).max_h;
}

inline void write_csv(std::ostream& os, const IterateTrace& tr) {
    os << "step,f,g,lambda_g,step_size,injected_error_norm,g_suboptimality\n";
    for (const auto& r : tr.records)
        os << r.step << ',' << format_double(r.f) << ',' << format_double(r.g) << ',' << format_double(r.lambda_g)
           << ',' << format_double(r.step_size) << ',' << format_double(r.injected_error_norm) << ','
           << format_double(r.g_suboptimality) << '\n';
}

}  // namespace tfopt
