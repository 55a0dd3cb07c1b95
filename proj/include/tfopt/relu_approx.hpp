#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "tfopt/linalg.hpp"

namespace tfopt {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double x) const { return x >= lo && x <= hi; }
    double width() const { return hi - lo; }
};

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

struct PwlApprox {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> knots;
    std::vector<double> values;
    bool clamp_outside = true;

    std::size_t pieces() const { return knots.size() - 1; }
};

inline void validate_pwl(const PwlApprox& p) {
    if (p.knots.size() < 2 || p.knots.size() != p.values.size())
        throw ShapeError("PwlApprox: need >= 2 knots with one value each");
    if (p.knots.front() != p.lo || p.knots.back() != p.hi)
        throw DomainError("PwlApprox: end knots must equal lo/hi");
    for (std::size_t i = 1; i < p.knots.size(); ++i)
        if (!(p.knots[i] > p.knots[i - 1])) throw DomainError("PwlApprox: knots not strictly increasing");
}

inline PwlApprox build_pwl(const std::function<double(double)>& f, double lo, double hi, int pieces,
                           bool clamp_outside = true) {
    if (!(lo < hi)) throw DomainError("build_pwl: need lo < hi");
    if (pieces < 1) throw DomainError("build_pwl: pieces must be >= 1");
    PwlApprox p;
    p.lo = lo;
    p.hi = hi;
    p.clamp_outside = clamp_outside;
    p.knots.resize(pieces + 1);
    p.values.resize(pieces + 1);
    const double h = (hi - lo) / pieces;
    for (int i = 0; i <= pieces; ++i) {
        const double t = (i == pieces) ? hi : lo + i * h;
        const double v = f(t);
        if (!std::isfinite(v)) throw NumericError("build_pwl: f is not finite at " + format_double(t));
        p.knots[i] = t;
        p.values[i] = v;
    }
    return p;
}

inline double eval_pwl(const PwlApprox& p, double x) {
    const auto& k = p.knots;
    const auto& v = p.values;
    const std::size_t last = k.size() - 1;
    if (x <= p.lo) {
        if (x == p.lo || p.clamp_outside) return v[0];
        return v[0] + (x - k[0]) * (v[1] - v[0]) / (k[1] - k[0]);
    }
    if (x >= p.hi) {
        if (x == p.hi || p.clamp_outside) return v[last];
        return v[last] + (x - k[last]) * (v[last] - v[last - 1]) / (k[last] - k[last - 1]);
    }
    const std::size_t j = static_cast<std::size_t>(std::upper_bound(k.begin(), k.end(), x) - k.begin()) - 1;
    if (x == k[j]) return v[j];
    const double w = (x - k[j]) / (k[j + 1] - k[j]);
    return v[j] + w * (v[j + 1] - v[j]);
}

// Coefficients of the ReLU expansion f(z) = bias + sum_k coef_k * relu(z - knot_k).
// With clamp_outside the expansion is flat outside [lo, hi]; otherwise the
// left end segment is extended with relu(z - lo) - relu(lo - z).
struct ReluExpansion {
    double bias = 0.0;
    std::vector<double> knots;
    std::vector<double> coefs;
    double left_slope = 0.0;  // coefficient of -relu(lo - z); zero when clamped
};

inline ReluExpansion relu_expansion(const PwlApprox& p) {
    validate_pwl(p);
    const std::size_t m = p.pieces();
    std::vector<double> slope(m);
    for (std::size_t i = 0; i < m; ++i)
        slope[i] = (p.values[i + 1] - p.values[i]) / (p.knots[i + 1] - p.knots[i]);
    ReluExpansion e;
    e.bias = p.values[0];
    for (std::size_t i = 0; i < m; ++i) {
        e.knots.push_back(p.knots[i]);
        e.coefs.push_back(i == 0 ? slope[0] : slope[i] - slope[i - 1]);
    }
    if (p.clamp_outside) {
        e.knots.push_back(p.knots[m]);
        e.coefs.push_back(-slope[m - 1]);
    } else {
        e.left_slope = slope[0];
    }
    return e;
}

inline double eval_relu_expansion(const ReluExpansion& e, double z) {
    double s = e.bias;
    for (std::size_t i = 0; i < e.knots.size(); ++i) s += e.coefs[i] * relu(z - e.knots[i]);
    if (e.left_slope != 0.0) s -= e.left_slope * relu(e.knots.front() - z);
    return s;
}

// Staircase approximator for a unimodal target (increasing on [lo, peak],
// decreasing on [peak, hi]): the range is cut into equal levels and each
// level crossing is a steep two-ReLU ramp, so `neurons` ReLUs buy a sup
// error of about (max f - min f) * 2 / neurons.
inline PwlApprox build_level_pwl(const std::function<double(double)>& f, double lo, double hi, double peak,
                                 int neurons) {
    if (!(lo < peak && peak < hi)) throw DomainError("build_level_pwl: need lo < peak < hi");
    if (neurons < 4) throw DomainError("build_level_pwl: need at least 4 neurons");
    const int levels = neurons / 4;
    const double fl = f(lo), fh = f(hi), fp = f(peak);
    const double base = std::min(fl, fh);
    const double delta = (fp - base) / levels;
    auto crossing = [&](double a, double b, double target, bool increasing) {
        for (int it = 0; it < 200; ++it) {
            const double m = 0.5 * (a + b);
            if ((f(m) < target) == increasing) a = m;
            else b = m;
        }
        return 0.5 * (a + b);
    };
    const double ramp = (hi - lo) * 1e-9;
    std::vector<std::pair<double, double>> pts;  // (knot, staircase value)
    pts.emplace_back(lo, base + std::round((fl - base) / delta) * delta);
    double level_value = pts.back().second;
    for (int j = 1; j <= levels; ++j) {
        const double thr = base + (j - 0.5) * delta;
        if (thr <= fl) continue;
        const double a = crossing(lo, peak, thr, true);
        pts.emplace_back(a - ramp, level_value);
        level_value = base + j * delta;
        pts.emplace_back(a, level_value);
    }
    for (int j = levels; j >= 1; --j) {
        const double thr = base + (j - 0.5) * delta;
        if (thr <= fh) continue;
        const double b = crossing(peak, hi, thr, false);
        pts.emplace_back(b, level_value);
        level_value = base + (j - 1) * delta;
        pts.emplace_back(b + ramp, level_value);
    }
    pts.emplace_back(hi, level_value);
    PwlApprox p;
    p.lo = lo;
    p.hi = hi;
    p.clamp_outside = true;
    for (const auto& [k, v] : pts) {
        if (!p.knots.empty() && !(k > p.knots.back())) continue;
        p.knots.push_back(k);
        p.values.push_back(v);
    }
    p.knots.back() = hi;
    validate_pwl(p);
    return p;
}

inline double signed_copy(double x, double y) {
    if (y != 1.0 && y != -1.0) throw DomainError("signed_copy: y must be +1 or -1");
    return relu(x / 2 + 2 * y) - relu(-x / 2 + 2 * y) + relu(-x / 2 - 2 * y) - relu(x / 2 - 2 * y);
}

// Quarter-square product xy = ((x+y)^2 - (x-y)^2) / 4 with both squares
// replaced by uniform-knot interpolants over the reachable sum/difference ranges.
struct ProductApprox {
    Interval range_x;
    Interval range_y;
    PwlApprox sum_sq;
    PwlApprox diff_sq;
};

inline ProductApprox build_product(Interval range_x, Interval range_y, int pieces) {
    if (!(range_x.lo < range_x.hi) || !(range_y.lo < range_y.hi))
        throw DomainError("build_product: empty range");
    auto sq = [](double t) { return t * t; };
    ProductApprox pa;
    pa.range_x = range_x;
    pa.range_y = range_y;
    pa.sum_sq = build_pwl(sq, range_x.lo + range_y.lo, range_x.hi + range_y.hi, pieces);
    pa.diff_sq = build_pwl(sq, range_x.lo - range_y.hi, range_x.hi - range_y.lo, pieces);
    return pa;
}

inline double eval_product(const ProductApprox& pa, double x, double y) {
    if (!pa.range_x.contains(x) || !pa.range_y.contains(y))
        throw DomainError("pwl_product: input outside declared range");
    return 0.25 * (eval_pwl(pa.sum_sq, x + y) - eval_pwl(pa.diff_sq, x - y));
}

inline double pwl_product(double x, double y, Interval range_x, Interval range_y, int pieces) {
    return eval_product(build_product(range_x, range_y, pieces), x, y);
}

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// e^z / (1 + e^z)^2
inline double sigmoid_derivative(double z) {
    const double e = std::exp(-std::abs(z));
    return e / ((1.0 + e) * (1.0 + e));
}

inline void write_csv(std::ostream& os, const PwlApprox& p) {
    os << "knot,value\n";
    for (std::size_t i = 0; i < p.knots.size(); ++i)
        os << format_double(p.knots[i]) << ',' << format_double(p.values[i]) << '\n';
}

}  // namespace tfopt
