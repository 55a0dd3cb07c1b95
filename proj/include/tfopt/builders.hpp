#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tfopt/linalg.hpp"
#include "tfopt/logistic.hpp"
#include "tfopt/newton_inverse.hpp"
#include "tfopt/relu_approx.hpp"
#include "tfopt/transformer.hpp"

namespace tfopt {

namespace detail {

inline AttentionHead make_head(std::size_t dim, std::initializer_list<Copy> v, std::initializer_list<Copy> k,
                               std::initializer_list<Copy> q) {
    return {selector(dim, v), selector(dim, k), selector(dim, q)};
}

inline TransformerLayer attention_layer(std::vector<AttentionHead> heads) { return {std::move(heads), std::nullopt}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix inversion: prompt (X; A^T; 0; I), d columns.

inline PromptLayout inversion_layout(std::size_t d) {
    PromptLayout l;
    l.add("X", d, BlockRole::iterate).add("AT", d, BlockRole::data_matrix);
    l.add("S", d, BlockRole::scratch).add("I", d, BlockRole::identity_pad);
    return l;
}

inline DenseMatrix inversion_prompt(const DenseMatrix& x0, const DenseMatrix& a) {
    require_square_pair(x0, a, "inversion_prompt");
    const std::size_t d = a.rows();
    const PromptLayout l = inversion_layout(d);
    DenseMatrix h(l.dim(), d);
    l.place(h, "X", x0);
    l.place(h, "AT", a.transpose());
    l.place(h, "I", DenseMatrix::identity(d));
    return h;
}

// Two layers: S += A X, then X += X - X S and S -= S. Heads are accumulated
// in order, so erasing heads come first to keep cancellations exact.
inline Model build_inversion_block(std::size_t d) {
    if (d < 1) throw DomainError("build_inversion_block: d must be >= 1");
    const PromptLayout l = inversion_layout(d);
    const std::size_t D = l.dim(), X = l.row("X"), AT = l.row("AT"), S = l.row("S"), I = l.row("I");
    Model m;
    // V picks I into S; (W_K H)^T (W_Q H) = (A^T)^T X = A X.
    m.push_back(detail::attention_layer({detail::make_head(D, {{S, I, d}}, {{0, AT, d}}, {{0, X, d}})}));
    m.push_back(detail::attention_layer({
        detail::make_head(D, {{X, X, d}, {S, S, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        detail::make_head(D, {{X, X, d}}, {{0, I, d}}, {{0, S, d, -1.0}}),
    }));
    return m;
}

// ---------------------------------------------------------------------------
// Linear regression: prompt (I; I; I; A^T; a_test^T; y^T; out), n columns.

inline PromptLayout linreg_layout(std::size_t d) {
    PromptLayout l;
    l.add("X", d, BlockRole::iterate).add("R", d, BlockRole::scratch).add("I", d, BlockRole::identity_pad);
    l.add("AT", d, BlockRole::data_matrix).add("atest", 1, BlockRole::data_matrix);
    l.add("y", 1, BlockRole::labels).add("out", 1, BlockRole::scratch);
    return l;
}

inline DenseMatrix linreg_prompt(const PromptLayout& l, const DenseMatrix& a, const Vector& y, const Vector& a_test) {
    const std::size_t n = a.rows(), d = a.cols();
    if (l.block("AT").rows() != d) throw LayoutError("linreg_prompt: layout built for d=" + std::to_string(l.block("AT").rows()));
    if (y.size() != n || a_test.size() != d) throw ShapeError("linreg_prompt: y or a_test has wrong length");
    if (n < d) throw ShapeError("linreg_prompt: need n >= d");
    DenseMatrix h(l.dim(), n);
    const DenseMatrix id = DenseMatrix::identity(d);
    l.place(h, "X", id);
    l.place(h, "R", id);
    l.place(h, "I", id);
    l.place(h, "AT", a.transpose());
    l.place(h, "atest", DenseMatrix::row(a_test));
    l.place(h, "y", DenseMatrix::row(y));
    return h;
}

inline double linreg_readout(const PromptLayout& l, const DenseMatrix& h) { return h(l.row("out"), 0); }

struct LinregModel {
    Model model;
    PromptLayout layout;
};

// Depth 3 + t_steps. With ridge_mu the inverted matrix is A^T A + mu I.
inline LinregModel build_linreg_transformer(std::size_t d, std::size_t n, int t_steps, double alpha,
                                            std::optional<double> ridge_mu = std::nullopt) {
    if (d < 1 || n < d) throw DomainError("build_linreg_transformer: need n >= d >= 1");
    if (t_steps < 0) throw DomainError("build_linreg_transformer: t_steps must be >= 0");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("build_linreg_transformer: alpha must be positive");
    if (ridge_mu && !(*ridge_mu >= 0.0)) throw DomainError("build_linreg_transformer: ridge mu must be >= 0");
    LinregModel out{{}, linreg_layout(d)};
    const PromptLayout& l = out.layout;
    const std::size_t D = l.dim(), X = l.row("X"), R = l.row("R"), I = l.row("I"), AT = l.row("AT");
    const std::size_t at = l.row("atest"), Y = l.row("y"), O = l.row("out");
    using detail::make_head;

    // Init: X = alpha A^T A, R = A^T A (plus the ridge shift).
    std::vector<AttentionHead> init = {
        make_head(D, {{X, I, d, -1.0}, {R, I, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{X, AT, d, alpha}, {R, AT, d}}, {{0, AT, d}}, {{0, I, d}}),
    };
    if (ridge_mu) init.push_back(make_head(D, {{X, I, d, alpha * *ridge_mu}, {R, I, d, *ridge_mu}}, {{0, I, d}}, {{0, I, d}}));
    out.model.push_back(detail::attention_layer(std::move(init)));

    // Symmetric Newton step: X += -X R X + X.
    for (int t = 0; t < t_steps; ++t)
        out.model.push_back(detail::attention_layer({
            make_head(D, {{X, X, d, -1.0}}, {{0, R, d}}, {{0, X, d}}),
            make_head(D, {{X, X, d}}, {{0, I, d}}, {{0, I, d}}),
        }));

    // out = y^T A X, then out = [y^T A X a_test, 0, ...].
    out.model.push_back(detail::attention_layer({make_head(D, {{O, Y, 1}}, {{0, AT, d}}, {{0, X, d}})}));
    out.model.push_back(detail::attention_layer({
        make_head(D, {{O, O, 1, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{O, O, 1}}, {{0, at, 1}}, {{0, I, 1}}),
    }));
    return out;
}

// ---------------------------------------------------------------------------
// Budget for one constructed damped Newton step.

struct BudgetReport {
    double target_eps = 0.0;
    double mu = 0.0;
    double kappa_f = 1.0;
    std::size_t d = 1;
    double iterate_bound = 0.0;  // C with ||x_t|| <= C
    int k = 1;
    int depth = 13;
    long long u1_pieces = 0;
    long long U2_pieces = 0;
    long long u3_pieces = 0;
    long long eps4_pieces = 0;

    std::map<std::string, long long> widths() const {
        return {{"u1_pieces", u1_pieces}, {"U2_pieces", U2_pieces}, {"u3_pieces", u3_pieces},
                {"eps4_pieces", eps4_pieces}, {"inversion_steps_k", k}};
    }

    std::string to_json() const {
        nlohmann::ordered_json j;
        j["target_eps"] = target_eps;
        j["mu"] = mu;
        j["kappa_f"] = kappa_f;
        j["d"] = d;
        j["iterate_bound"] = iterate_bound;
        j["depth"] = depth;
        nlohmann::ordered_json w;
        for (const auto& [name, v] : widths()) w[name] = v;
        j["widths"] = w;
        return j.dump(2);
    }
};

struct BudgetLimits {
    long long max_pieces = 100000;
    long long min_pieces = 16;
};

// Iterates of damped Newton from 0 stay in {f <= ln 2}, so ||x|| <= sqrt(2 ln 2 / mu);
// the minimizer satisfies ||x*|| <= 1/mu. C is the larger of the two.
inline double iterate_norm_bound(double mu) { return std::max(1.0 / mu, std::sqrt(2.0 * std::log(2.0) / mu)); }

inline int inversion_steps_bound(double eps, double mu, double kappa_f) {
    const double inner = std::pow(1.0 + mu, 3) / (eps * eps * mu * mu);
    const double loglog = inner > 2.0 ? std::log2(std::log2(inner)) : 0.0;
    return std::max(1, static_cast<int>(std::ceil(2.0 * std::log2(kappa_f) + loglog - 1e-12)));
}

namespace detail {
// Reference configuration that pins the multiplicative constants of the
// width envelopes; the end-to-end step test runs exactly this case.
inline constexpr double kRefEps = 1e-2;
inline constexpr double kRefMu = 0.1;
inline constexpr double kRefD = 5.0;
inline constexpr double kRefU1 = 2000;    // sigmoid-derivative interpolant
inline constexpr double kRefU2 = 2000;    // each quarter-square interpolant
inline constexpr double kRefU3 = 2000;    // each branch of the p_i interpolant
inline constexpr double kRefEps4 = 4000;  // step-size interpolant
}  // namespace detail

inline BudgetReport width_depth_budget(double eps, double mu, double kappa_f, std::size_t d,
                                       const BudgetLimits& lim = {}) {
    if (!(eps > 0.0)) throw DomainError("width_depth_budget: eps must be positive");
    if (!(mu > 0.0)) throw DomainError("width_depth_budget: mu must be positive");
    if (!(kappa_f >= 1.0)) throw DomainError("width_depth_budget: kappa_f must be >= 1");
    if (d < 1) throw DomainError("width_depth_budget: d must be >= 1");
    using namespace detail;
    BudgetReport b;
    b.target_eps = eps;
    b.mu = mu;
    b.kappa_f = kappa_f;
    b.d = d;
    b.iterate_bound = iterate_norm_bound(mu);
    b.k = inversion_steps_bound(eps, mu, kappa_f);
    b.depth = 11 + 2 * b.k;

    const double q = 1.0 + b.iterate_bound * mu;
    const double q_ref = 1.0 + iterate_norm_bound(kRefMu) * kRefMu;
    const double qr = q / q_ref, er = kRefEps / eps, mr = kRefMu / mu;
    auto pieces = [&](const char* name, double n) {
        if (!(n <= static_cast<double>(lim.max_pieces)))
            throw BudgetError(std::string("width_depth_budget: ") + name + " needs " + format_double(std::ceil(n)) +
                              " pieces, above the ceiling " + std::to_string(lim.max_pieces));
        return std::max(lim.min_pieces, static_cast<long long>(std::ceil(n - 1e-9)));
    };
    // ||u1|| ~ q^4 / (eps^2 mu^5)
    b.u1_pieces = pieces("u1", kRefU1 * std::pow(qr, 4) * er * er * std::pow(mr, 5));
    // ||U2||_F ~ d q^8 / (eps^4 mu^10)
    b.U2_pieces = pieces("U2", kRefU2 * (d / kRefD) * std::pow(qr, 8) * std::pow(er, 4) * std::pow(mr, 10));
    // ||eps3|| ~ q^3 / (eps^2 mu^4)
    b.u3_pieces = pieces("u3", kRefU3 * std::pow(qr, 3) * er * er * std::pow(mr, 4));
    // |eps4| ~ q / (eps mu)
    b.eps4_pieces = pieces("eps4", kRefEps4 * qr * er * mr);
    return b;
}

// ---------------------------------------------------------------------------
// One damped Newton step on the regularized logistic loss.

enum class HessianScale {
    uniform_bound,  // alpha = 2 safety / (1 + mu)^2, valid for every iterate
    at_iterate,     // alpha from the true Hessian at a given point
};

struct LogregBuildOptions {
    HessianScale scale = HessianScale::uniform_bound;
    std::optional<Vector> alpha_point;  // required for at_iterate
    double safety = 0.9;
    double arg_bound = 10.0;   // B: domain [-B, B] of the sigmoid-type interpolants
    double gate = 100.0;       // label gate for the p_i branches
    double product_scale = 4.0;
    Interval product_x{-0.1, 1.1};
    Interval product_y{-1.1, 1.1};
};

struct LogregNewtonStack {
    Model model;
    PromptLayout layout;
    BudgetReport budget;
    double alpha = 0.0;
    LogregBuildOptions options;
    PwlApprox d_approx;       // Step 1
    ProductApprox product;    // Step 2
    PwlApprox p_plus;         // Step 5, y = +1
    PwlApprox p_minus;        // Step 5, y = -1
    PwlApprox step_approx;    // Step 8
    std::size_t n = 0;
};

inline PromptLayout logreg_layout(std::size_t d) {
    PromptLayout l;
    l.add("X", d, BlockRole::scratch).add("M", d, BlockRole::scratch).add("I", d, BlockRole::identity_pad);
    l.add("S", d, BlockRole::scratch).add("AT", d, BlockRole::data_matrix).add("y", 1, BlockRole::labels);
    l.add("XB", d, BlockRole::iterate).add("E", 1, BlockRole::constant).add("R", 1, BlockRole::scratch);
    l.add("ONE", 1, BlockRole::ones);
    return l;
}

inline DenseMatrix logreg_prompt(const PromptLayout& l, const LogisticProblem& p, const Vector& x) {
    const std::size_t n = p.n(), d = p.d();
    if (l.block("AT").rows() != d) throw LayoutError("logreg_prompt: layout built for another d");
    if (n < d) throw ShapeError("logreg_prompt: need n >= d");
    require_dim(p, x, "logreg_prompt");
    DenseMatrix h(l.dim(), n);
    const DenseMatrix id = DenseMatrix::identity(d);
    l.place(h, "X", id);
    l.place(h, "M", id);
    l.place(h, "I", id);
    l.place(h, "AT", p.a().transpose());
    Vector yv(n), e(n, 0.0), ones(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) yv[i] = p.y()[i];
    e[0] = 1.0 / static_cast<double>(n);
    l.place(h, "y", DenseMatrix::row(yv));
    DenseMatrix xb(d, n);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < n; ++j) xb(i, j) = x[i];
    l.place(h, "XB", xb);
    l.place(h, "E", DenseMatrix::row(e));
    l.place(h, "ONE", DenseMatrix::row(ones));
    return h;
}

inline Vector logreg_read_iterate(const PromptLayout& l, const DenseMatrix& h) {
    const Block& b = l.block("XB");
    Vector x(b.rows());
    for (std::size_t i = 0; i < b.rows(); ++i) x[i] = h(b.begin + i, 0);
    return x;
}

inline void check_logreg_budget(const LogisticProblem& p, const BudgetReport& b) {
    if (b.depth != 11 + 2 * b.k)
        throw BudgetError("budget inconsistent: depth " + std::to_string(b.depth) + " != 11 + 2k with k=" + std::to_string(b.k));
    if (b.d != p.d()) throw BudgetError("budget built for d=" + std::to_string(b.d) + ", problem has d=" + std::to_string(p.d()));
    if (b.mu != p.mu()) throw BudgetError("budget built for mu=" + format_double(b.mu) + ", problem has mu=" + format_double(p.mu()));
    const double kappa_bound = (1.0 + p.mu()) / p.mu();
    if (b.kappa_f < kappa_bound * (1.0 - 1e-12))
        throw BudgetError("budget kappa_f=" + format_double(b.kappa_f) + " below the Hessian bound (1+mu)/mu=" +
                          format_double(kappa_bound));
    const BudgetReport need = width_depth_budget(b.target_eps, b.mu, b.kappa_f, b.d, {INT64_MAX, 16});
    auto check = [&](const char* name, long long have, long long want) {
        if (have < want)
            throw BudgetError(std::string("insufficient budget: ") + name + "=" + std::to_string(have) + " below the " +
                              std::to_string(want) + " required for eps=" + format_double(b.target_eps));
    };
    check("inversion steps k", b.k, need.k);
    check("u1_pieces", b.u1_pieces, need.u1_pieces);
    check("U2_pieces", b.U2_pieces, need.U2_pieces);
    check("u3_pieces", b.u3_pieces, need.u3_pieces);
    check("eps4_pieces", b.eps4_pieces, need.eps4_pieces);
}

inline LogregNewtonStack build_logreg_newton_step(const LogisticProblem& p, const BudgetReport& budget,
                                                  const LogregBuildOptions& opt = {}) {
    check_logreg_budget(p, budget);
    const std::size_t d = p.d(), n = p.n();
    if (n < d) throw ShapeError("build_logreg_newton_step: need n >= d");
    const double mu = p.mu();

    LogregNewtonStack st;
    st.layout = logreg_layout(d);
    st.budget = budget;
    st.options = opt;
    st.n = n;
    const PromptLayout& l = st.layout;
    const std::size_t D = l.dim();
    const std::size_t X = l.row("X"), M = l.row("M"), I = l.row("I"), S = l.row("S"), AT = l.row("AT");
    const std::size_t Y = l.row("y"), XB = l.row("XB"), E = l.row("E"), R = l.row("R"), ONE = l.row("ONE");
    using detail::attention_layer;
    using detail::make_head;

    if (opt.scale == HessianScale::uniform_bound) {
        st.alpha = 2.0 * opt.safety / ((1.0 + mu) * (1.0 + mu));
    } else {
        if (!opt.alpha_point) throw DomainError("build_logreg_newton_step: at_iterate scaling needs alpha_point");
        st.alpha = safe_alpha(loss_grad_hess(p, *opt.alpha_point).hess, opt.safety);
    }
    const double alpha = st.alpha;
    const double B = opt.arg_bound;

    // Approximators.
    st.d_approx = build_pwl(sigmoid_derivative, -B, B, static_cast<int>(budget.u1_pieces));
    st.product = build_product(opt.product_x, opt.product_y, static_cast<int>(budget.U2_pieces));
    st.p_plus = build_pwl([](double z) { return sigmoid(-z); }, -B, B, static_cast<int>(budget.u3_pieces));
    st.p_minus = build_pwl([](double z) { return sigmoid(z); }, -B, B, static_cast<int>(budget.u3_pieces));
    const double r = 2.0 * std::sqrt(mu);
    // lambda_f <= ||grad f|| / sqrt(mu) <= (1 + mu C) / sqrt(mu).
    const double zmax = std::pow((1.0 + mu * budget.iterate_bound) / std::sqrt(mu), 2);
    st.step_approx = build_pwl([r](double z) { return r / (r + std::sqrt(std::max(z, 0.0))); }, 0.0, zmax,
                               static_cast<int>(budget.eps4_pieces));

    // Row 0 of the identity block is e_1^T; "I0" below.
    const std::size_t I0 = I;
    Model& m = st.model;

    // Step 1: R = x^T A^T, then R = d_hat(R).
    {
        TransformerLayer L = attention_layer({make_head(D, {{R, I0, 1}}, {{0, XB, d}}, {{0, AT, d}})});
        FfnBuilder f(D, ONE);
        f.add_erase(R);
        f.add_pwl({{R, 1.0}}, st.d_approx, R, 1.0);
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    // Step 2: R = d_hat / n, then S_j = (d_hat_i / n) a_ij by quarter squares; R cleared.
    {
        TransformerLayer L = attention_layer({
            make_head(D, {{R, I0, 1, -1.0}}, {{0, I0, 1}}, {{0, R, 1}}),
            make_head(D, {{R, I0, 1}}, {{0, E, 1}}, {{0, R, 1}}),
        });
        FfnBuilder f(D, ONE);
        const double s = opt.product_scale;
        for (std::size_t j = 0; j < d; ++j) {
            f.add_pwl({{R, s}, {AT + j, 1.0}}, st.product.sum_sq, S + j, 0.25 / s);
            f.add_pwl({{R, s}, {AT + j, -1.0}}, st.product.diff_sq, S + j, -0.25 / s);
        }
        f.add_erase(R);
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    // Step 3a: M = A^T S^T + mu I = B, X = alpha B, S cleared.
    m.push_back(attention_layer({
        make_head(D, {{X, I, d, -1.0}, {M, I, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{X, AT, d, alpha}, {M, AT, d}}, {{0, S, d}}, {{0, I, d}}),
        make_head(D, {{X, I, d, alpha * mu}, {M, I, d, mu}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{S, I, d, -1.0}}, {{0, I, d}}, {{0, S, d}}),
    }));
    // Step 3b: X = alpha B^T.
    m.push_back(attention_layer({
        make_head(D, {{X, X, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{X, I, d}}, {{0, X, d}}, {{0, I, d}}),
    }));
    // Step 4: k general Newton steps on B (stored untransposed in M).
    for (int t = 0; t < budget.k; ++t) {
        m.push_back(attention_layer({make_head(D, {{S, M, d}}, {{0, I, d}}, {{0, X, d}})}));
        m.push_back(attention_layer({
            make_head(D, {{X, X, d}, {S, S, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
            make_head(D, {{X, X, d}}, {{0, I, d}}, {{0, S, d, -1.0}}),
        }));
    }
    // Step 5: R = x^T A^T, then R = p_hat(R, y) with one gated branch per label.
    {
        TransformerLayer L = attention_layer({make_head(D, {{R, I0, 1}}, {{0, XB, d}}, {{0, AT, d}})});
        FfnBuilder f(D, ONE);
        f.add_erase(R);
        const double g = opt.gate;
        for (int sign : {+1, -1}) {
            const PwlApprox& pw = sign > 0 ? st.p_plus : st.p_minus;
            const ReluExpansion e = relu_expansion(pw);
            // Indicator of y == sign is relu((1 + sign y) / 2).
            f.add_neuron({{ONE, 0.5}, {Y, 0.5 * sign}}, {{R, e.bias}});
            for (std::size_t k = 0; k < e.knots.size(); ++k) {
                if (e.coefs[k] == 0.0) continue;
                // Argument z - t_k - g (1 - sign y): unchanged for the active label, pushed below zero otherwise.
                f.add_neuron({{R, 1.0}, {ONE, -e.knots[k] - g}, {Y, g * sign}}, {{R, e.coefs[k]}});
            }
        }
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    // Step 6: R = p_hat / n, then R = y p_hat / n with the four-ReLU sign gadget.
    {
        TransformerLayer L = attention_layer({
            make_head(D, {{R, I0, 1, -1.0}}, {{0, I0, 1}}, {{0, R, 1}}),
            make_head(D, {{R, I0, 1}}, {{0, E, 1}}, {{0, R, 1}}),
        });
        FfnBuilder f(D, ONE);
        f.add_erase(R);
        f.add_neuron({{R, 0.5}, {Y, 2.0}}, {{R, 1.0}});
        f.add_neuron({{R, -0.5}, {Y, 2.0}}, {{R, -1.0}});
        f.add_neuron({{R, -0.5}, {Y, -2.0}}, {{R, 1.0}});
        f.add_neuron({{R, 0.5}, {Y, -2.0}}, {{R, -1.0}});
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    // Step 7: M = [b 0] with b = -A^T (y p / n) + mu x; R cleared.
    {
        TransformerLayer L = attention_layer({
            make_head(D, {{M, M, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
            make_head(D, {{M, AT, d, -1.0}}, {{0, R, 1}}, {{0, I0, 1}}),
            make_head(D, {{M, XB, d}}, {{0, I0, 1}}, {{0, I0, 1, mu}}),
        });
        FfnBuilder f(D, ONE);
        f.add_erase(R);
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    // Step 8a: X = [X_k b 0] = [v 0].
    m.push_back(attention_layer({
        make_head(D, {{X, X, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{X, X, d}}, {{0, I, d}}, {{0, M, d}}),
    }));
    // Step 8b: R = [b^T v 0], then R = eta_hat(R); other columns become eta_hat(0) = 1.
    {
        TransformerLayer L = attention_layer({make_head(D, {{R, I0, 1}}, {{0, M, d}}, {{0, X, d}})});
        FfnBuilder f(D, ONE);
        f.add_erase(R);
        f.add_pwl({{R, 1.0}}, st.step_approx, R, 1.0);
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    // Step 9a: R = [eta v^T, *].
    m.push_back(attention_layer({
        make_head(D, {{R, R, 1, -1.0}}, {{0, I, d}}, {{0, I, d}}),
        make_head(D, {{R, R, 1}}, {{0, X, d}}, {{0, I, d}}),
    }));
    // Step 9b: XB -= eta v 1^T, X and M back to [I 0], R cleared by
    // relu(-r/2 + 5) - relu(r/2 + 5) = -r for |r| <= 10.
    {
        TransformerLayer L = attention_layer({
            make_head(D, {{XB, I, d, -1.0}}, {{0, R, 1}}, {{0, ONE, 1}}),
            make_head(D, {{X, X, d, -1.0}, {M, M, d, -1.0}}, {{0, I, d}}, {{0, I, d}}),
            make_head(D, {{X, I, d}, {M, I, d}}, {{0, I, d}}, {{0, I, d}}),
        });
        FfnBuilder f(D, ONE);
        f.add_neuron({{R, -0.5}, {ONE, 5.0}}, {{R, 1.0}});
        f.add_neuron({{R, 0.5}, {ONE, 5.0}}, {{R, -1.0}});
        L.ffn = f.build();
        m.push_back(std::move(L));
    }
    if (static_cast<int>(m.size()) != budget.depth)
        throw BudgetError("build_logreg_newton_step: built " + std::to_string(m.size()) + " layers, budget says " +
                          std::to_string(budget.depth));
    return st;
}

// Runs the stack on a prompt and checks the input ranges the gadgets rely on.
inline DenseMatrix apply_logreg_step(const LogregNewtonStack& st, const DenseMatrix& h0) {
    const PromptLayout& l = st.layout;
    const std::size_t d = st.budget.d, k = static_cast<std::size_t>(st.budget.k);
    const std::size_t R = l.row("R"), AT = l.row("AT");
    const std::size_t step2 = 1, step5 = 4 + 2 * k, step6 = step5 + 1, step8b = step5 + 4;
    const std::size_t cleanup = st.model.size() - 1;
    const auto& o = st.options;
    auto fail = [](const std::string& msg) { throw DomainError("apply_logreg_step: " + msg); };
    auto observe = [&](std::size_t layer, Stage stage, const DenseMatrix& h) {
        if (stage != Stage::attention) return;
        for (std::size_t j = 0; j < h.cols(); ++j) {
            const double rv = h(R, j);
            if (layer == step2) {
                if (!o.product_x.contains(o.product_scale * rv)) fail("scaled d_hat/n outside the product range");
                for (std::size_t i = 0; i < d; ++i)
                    if (!o.product_y.contains(h(AT + i, j))) fail("data entry outside the product range");
            } else if (layer == step5) {
                if (std::abs(rv) >= 2.0 * o.gate - o.arg_bound) fail("x^T a_i outside the label-gate range");
            } else if (layer == step6) {
                if (std::abs(rv) >= 4.0) fail("p_hat/n outside the sign-gadget range");
            } else if (layer == step8b && j == 0) {
                if (rv > st.step_approx.hi) fail("squared decrement above the step-size domain");
            } else if (layer == cleanup) {
                if (std::abs(rv) > 10.0) fail("scratch row outside the cleanup range |r| <= 10");
            }
        }
    };
    return model_forward(st.model, h0, observe);
}

inline Vector logreg_transformer_step(const LogregNewtonStack& st, const LogisticProblem& p, const Vector& x) {
    return logreg_read_iterate(st.layout, apply_logreg_step(st, logreg_prompt(st.layout, p, x)));
}

}  // namespace tfopt
