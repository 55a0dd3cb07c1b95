// Builds the three constructions and runs each against its classical counterpart.

#include <iostream>

#include "tfopt/builders.hpp"
#include "tfopt/harness.hpp"

using namespace tfopt;

int main() {
    // Matrix inversion: one two-layer block per Newton-Schulz step.
    Rng rng(7);
    const DenseMatrix a = gen_covariance(4, 20.0, rng).sigma;
    const InverseRun run = run_inverse(a, 2, 1e-10, 100);
    const PromptLayout inv = inversion_layout(4);
    DenseMatrix h = inversion_prompt(run.iterates[0], a);
    const Model block = build_inversion_block(4);
    for (int t = 0; t < run.steps(); ++t) h = model_forward(block, h);
    std::cout << "inversion: " << run.steps() << " steps, residual of the transformer output "
              << inverse_residual(inv.extract(h, "X"), a) << '\n';

    // In-context linear regression.
    ExperimentConfig cfg;
    const LinregData data = gen_linreg_data(cfg);
    const DenseMatrix r = matmul(data.a.transpose(), data.a);
    const LinregModel lin = build_linreg_transformer(cfg.d, cfg.n, 30, safe_alpha(r, 0.9));
    const double yhat = linreg_readout(lin.layout, model_forward(lin.model, linreg_prompt(lin.layout, data.a, data.y, data.a_test)));
    const double ls = dot(data.a_test, solve_spd(r, matvec(data.a.transpose(), data.y)));
    std::cout << "linreg: transformer " << yhat << ", least squares " << ls << '\n';

    // One damped Newton step on regularized logistic regression, applied repeatedly.
    const LogregData lg = gen_logreg_data(cfg);
    const LogisticProblem& p = lg.problem;
    const BudgetReport budget = width_depth_budget(1e-2, p.mu(), (1 + p.mu()) / p.mu(), p.d());
    const LogregNewtonStack stack = build_logreg_newton_step(p, budget);
    Vector x(p.d(), 0.0);
    for (int t = 0; t < 6; ++t) x = logreg_transformer_step(stack, p, x);
    std::cout << "logreg: depth " << budget.depth << " per step, loss after 6 steps " << loss(p, x) << ", optimum "
              << loss(p, reference_minimizer(p)) << '\n';
    return 0;
}
