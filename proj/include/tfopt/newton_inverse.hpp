#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "tfopt/linalg.hpp"

namespace tfopt {

inline constexpr int kMaxHyperpowerOrder = 8;
inline constexpr int kPowerIters = 200;
inline constexpr std::uint64_t kPowerSeed = 0x5eedULL;

struct InverseRun {
    std::vector<DenseMatrix> iterates;  // X_0..X_T
    std::vector<double> residuals;      // ||I - X_t A||_F
    double alpha = 0.0;
    int order = 2;

    int steps() const { return static_cast<int>(iterates.size()) - 1; }
    const DenseMatrix& result() const { return iterates.back(); }
};

using InverseConvergenceError = ConvergenceError<InverseRun>;

inline void require_square_pair(const DenseMatrix& x, const DenseMatrix& a, const char* where) {
    if (!a.square() || !x.square() || x.rows() != a.rows())
        throw ShapeError(std::string(where) + ": expected matching square matrices, got " +
                         shape_str(x) + " and " + shape_str(a));
}

inline long long binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    long long c = 1;
    for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
    return c;
}

inline DenseMatrix newton_step(const DenseMatrix& x, const DenseMatrix& a) {
    require_square_pair(x, a, "newton_step");
    DenseMatrix s = matmul(a, x);
    const std::size_t d = s.rows();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s(i, j) = (i == j ? 2.0 : 0.0) - s(i, j);
    return matmul(x, s);
}

// X * sum_{m<n} (-1)^m C(n, m+1) (A X)^m. For n = 2 the arithmetic is the
// same as newton_step: S = 2I - AX, then X S.
inline DenseMatrix hyperpower_step(const DenseMatrix& x, const DenseMatrix& a, int n) {
    if (n < 2) throw DomainError("hyperpower_step: order must be >= 2, got " + std::to_string(n));
    if (n > kMaxHyperpowerOrder)
        throw DomainError("hyperpower_step: order above " + std::to_string(kMaxHyperpowerOrder) +
                          " is not supported");
    require_square_pair(x, a, "hyperpower_step");
    const std::size_t d = a.rows();
    const DenseMatrix p = matmul(a, x);
    DenseMatrix s(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s(i, j) = (i == j ? static_cast<double>(n) : 0.0);
    DenseMatrix pm = p;
    for (int m = 1; m < n; ++m) {
        const double c = static_cast<double>((m % 2 ? -1 : 1) * binomial(n, m + 1));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) s(i, j) = s(i, j) - (-c) * pm(i, j);
        if (m + 1 < n) pm = matmul(pm, p);
    }
    return matmul(x, s);
}

inline double inverse_residual(const DenseMatrix& x, const DenseMatrix& a) {
    DenseMatrix r = matmul(x, a);
    for (std::size_t i = 0; i < r.rows(); ++i)
        for (std::size_t j = 0; j < r.cols(); ++j) r(i, j) = (i == j ? 1.0 : 0.0) - r(i, j);
    return frobenius_norm(r);
}

inline double safe_alpha(const DenseMatrix& a, double safety, int power_iters = kPowerIters,
                         std::uint64_t seed = kPowerSeed) {
    if (!(safety > 0.0 && safety < 1.0)) throw DomainError("safety must lie in (0,1)");
    const double s = spectral_norm_est(a, power_iters, seed);
    if (s == 0.0) throw DomainError("matrix is zero; no inverse");
    return 2.0 * safety / (s * s);
}

// Runs exactly `steps` iterations from x0, recording residuals.
inline InverseRun iterate_inverse(const DenseMatrix& a, const DenseMatrix& x0, int order, int steps,
                                  double alpha = 0.0) {
    if (steps < 0) throw DomainError("iterate_inverse: steps must be >= 0");
    InverseRun run;
    run.alpha = alpha;
    run.order = order;
    run.iterates.push_back(x0);
    run.residuals.push_back(inverse_residual(x0, a));
    for (int t = 0; t < steps; ++t) {
        run.iterates.push_back(hyperpower_step(run.iterates.back(), a, order));
        run.residuals.push_back(inverse_residual(run.iterates.back(), a));
    }
    return run;
}

inline InverseRun run_inverse(const DenseMatrix& a, int order, double tol, int max_iters,
                              double safety = 0.9) {
    if (!a.square()) throw ShapeError("run_inverse: matrix must be square, got " + shape_str(a));
    if (order < 2 || order > kMaxHyperpowerOrder)
        throw DomainError("run_inverse: order must lie in [2, " + std::to_string(kMaxHyperpowerOrder) + "]");
    if (!(tol > 0.0)) throw DomainError("run_inverse: tol must be positive");
    if (max_iters < 0) throw DomainError("run_inverse: max_iters must be >= 0");

    InverseRun run;
    run.order = order;
    run.alpha = safe_alpha(a, safety);
    run.iterates.push_back(run.alpha * a.transpose());
    try {
        run.residuals.push_back(inverse_residual(run.iterates.back(), a));
        for (int t = 0;; ++t) {
            if (run.residuals.back() <= tol) return run;
            if (t == max_iters) break;
            run.iterates.push_back(hyperpower_step(run.iterates.back(), a, order));
            run.residuals.push_back(inverse_residual(run.iterates.back(), a));
        }
    } catch (const NumericError& e) {
        throw InverseConvergenceError(std::string("run_inverse: iteration diverged: ") + e.what(),
                                      std::move(run));
    }
    const double last = run.residuals.back();
    throw InverseConvergenceError("run_inverse: residual " + format_double(last) + " above tol after " +
                                      std::to_string(max_iters) + " steps (matrix singular or too few steps)",
                                  std::move(run));
}

inline int predicted_steps(double kappa, double eps, int order) {
    if (!(kappa >= 1.0)) throw DomainError("predicted_steps: kappa must be >= 1");
    if (!(eps > 0.0 && eps < 1.0)) throw DomainError("predicted_steps: eps must lie in (0,1)");
    if (order < 2) throw DomainError("predicted_steps: order must be >= 2");
    const double lb = std::log(static_cast<double>(order));
    // Small slack keeps exact powers (kappa = order^j) from rounding up.
    const double warm = std::ceil(2.0 * std::log(kappa) / lb - 1e-12);
    const double fast = std::ceil(std::log(std::log2(1.0 / eps)) / lb - 1e-12);
    return static_cast<int>(std::max(0.0, warm) + std::max(0.0, fast)) + 2;
}

// Least-squares slope of log r_{t+1} against log r_t over the last `pairs`
// consecutive pairs with r_t < 1 and r_{t+1} > floor.
inline double fitted_order(const std::vector<double>& r, int pairs, double floor = 0.0) {
    std::vector<double> xs, ys;
    for (std::size_t t = 0; t + 1 < r.size(); ++t) {
        if (r[t] < 1.0 && r[t + 1] > floor && r[t + 1] > 0.0) {
            xs.push_back(std::log(r[t]));
            ys.push_back(std::log(r[t + 1]));
        }
    }
    if (xs.size() < static_cast<std::size_t>(pairs) || pairs < 2)
        throw DomainError("fitted_order: not enough contracting steps");
    xs.erase(xs.begin(), xs.end() - pairs);
    ys.erase(ys.begin(), ys.end() - pairs);
    double mx = 0, my = 0;
    for (int i = 0; i < pairs; ++i) mx += xs[i], my += ys[i];
    mx /= pairs;
    my /= pairs;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < pairs; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    return sxy / sxx;
}

inline void write_csv(std::ostream& os, const InverseRun& run) {
    os << "step,residual_frobenius\n";
    for (std::size_t t = 0; t < run.residuals.size(); ++t)
        os << t << ',' << format_double(run.residuals[t]) << '\n';
}

}  // namespace tfopt
