#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "tfopt/newton_inverse.hpp"

using namespace tfopt;

TEST(NewtonStep, ExactInverseIsFixedPoint) {
    const DenseMatrix i = DenseMatrix::identity(3);
    EXPECT_EQ(newton_step(i, i), i);
}

TEST(NewtonStep, HalfIdentity) {
    const DenseMatrix x = newton_step(0.5 * DenseMatrix::identity(2), DenseMatrix::identity(2));
    EXPECT_EQ(x, 0.75 * DenseMatrix::identity(2));
}

TEST(NewtonStep, DiagonalScalarRecursion) {
    const DenseMatrix a = DenseMatrix::diag({1, 2});
    const DenseMatrix x = newton_step(0.3 * a.transpose(), a);
    EXPECT_NEAR(x(0, 0), 0.51, 1e-15);
    EXPECT_NEAR(x(1, 1), 0.48, 1e-15);
    EXPECT_EQ(x(0, 1), 0.0);
    EXPECT_EQ(x(1, 0), 0.0);
}

TEST(NewtonStep, ShapeMismatchThrows) {
    EXPECT_THROW(newton_step(DenseMatrix(2, 2), DenseMatrix(3, 3)), ShapeError);
}

TEST(Hyperpower, OrderTwoIsBitIdenticalToNewton) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const DenseMatrix a = oracle::random_matrix(5, 5, rng);
        const DenseMatrix x = oracle::random_matrix(5, 5, rng);
        EXPECT_EQ(hyperpower_step(x, a, 2), newton_step(x, a));
    }
}

TEST(Hyperpower, ScalarOrderThree) {
    const DenseMatrix x = hyperpower_step(DenseMatrix{{0.5}}, DenseMatrix{{1.0}}, 3);
    EXPECT_DOUBLE_EQ(x(0, 0), 0.875);
}

TEST(Hyperpower, ResidualLaw) {
    Rng rng(2);
    for (int n = 2; n <= kMaxHyperpowerOrder; ++n) {
        const DenseMatrix a = oracle::random_matrix(4, 4, rng);
        const DenseMatrix x = 0.3 * oracle::random_matrix(4, 4, rng);
        const DenseMatrix i4 = DenseMatrix::identity(4);
        const DenseMatrix e = i4 - matmul(x, a);
        DenseMatrix en = i4;
        for (int k = 0; k < n; ++k) en = matmul(en, e);
        const DenseMatrix lhs = i4 - matmul(hyperpower_step(x, a, n), a);
        EXPECT_LE(frobenius_norm(lhs - en), 1e-10) << "n=" << n;
    }
}

TEST(Hyperpower, RejectsBadOrders) {
    const DenseMatrix i = DenseMatrix::identity(2);
    EXPECT_THROW(hyperpower_step(i, i, 1), DomainError);
    EXPECT_THROW(hyperpower_step(i, i, kMaxHyperpowerOrder + 1), DomainError);
}

TEST(Binomial, SmallTable) {
    EXPECT_EQ(binomial(8, 4), 70);
    EXPECT_EQ(binomial(5, 0), 1);
    EXPECT_EQ(binomial(5, 5), 1);
    EXPECT_EQ(binomial(3, 4), 0);
}

TEST(RunInverse, IdentityConvergesQuickly) {
    const InverseRun run = run_inverse(DenseMatrix::identity(3), 2, 1e-12, 50);
    // Every eigen-residual starts at 1 - 1.8 = -0.8 and squares each step.
    double e = 0.8;
    int steps = 0;
    while (std::sqrt(3.0) * e > 1e-12) {
        e *= e;
        ++steps;
    }
    EXPECT_EQ(run.steps(), steps);
    EXPECT_LE(run.steps(), 7);
    EXPECT_EQ(run.iterates[0], 1.8 * DenseMatrix::identity(3));
    EXPECT_LE(run.residuals.back(), 1e-12);
}

TEST(RunInverse, Kappa100StepBoundAndOracle) {
    Rng rng(3);
    const DenseMatrix a = oracle::spd_with_condition(8, 100, rng);
    const double tol = 1e-10;
    const InverseRun run = run_inverse(a, 2, tol, 100);
    EXPECT_LE(run.steps(), 2 * std::log2(100.0) + std::log2(std::log2(1 / tol)) + 4);
    const DenseMatrix inv = solve_spd(a, DenseMatrix::identity(8));
    EXPECT_LE(frobenius_norm(run.result() - inv), 10 * tol * frobenius_norm(inv));
    EXPECT_EQ(run.iterates[0], run.alpha * a.transpose());
}

TEST(RunInverse, OrderThreeNeedsFewerSteps) {
    Rng rng(3);
    const DenseMatrix a = oracle::spd_with_condition(8, 100, rng);
    EXPECT_LT(run_inverse(a, 3, 1e-10, 100).steps(), run_inverse(a, 2, 1e-10, 100).steps());
}

TEST(RunInverse, ResidualsStrictlyDecreaseBelowOne) {
    Rng rng(4);
    for (int order = 2; order <= 4; ++order) {
        const DenseMatrix a = oracle::spd_with_condition(6, 30, rng);
        const InverseRun run = run_inverse(a, order, 1e-12, 100);
        for (std::size_t t = 0; t + 1 < run.residuals.size(); ++t) {
            if (run.residuals[t] < 1.0) {
                EXPECT_LT(run.residuals[t + 1], run.residuals[t]);
            }
        }
    }
}

TEST(RunInverse, NonSymmetricUsesTranspose) {
    Rng rng(6);
    DenseMatrix a = oracle::random_matrix(5, 5, rng);
    for (std::size_t i = 0; i < 5; ++i) a(i, i) += 3.0;
    const InverseRun run = run_inverse(a, 2, 1e-11, 200);
    EXPECT_LE(inverse_residual(run.result(), a), 1e-11);
}

TEST(RunInverse, SingularMatrixFailsWithTrace) {
    const DenseMatrix a = DenseMatrix::diag({1, 0});
    try {
        run_inverse(a, 2, 1e-10, 30);
        FAIL() << "expected a convergence error";
    } catch (const InverseConvergenceError& e) {
        EXPECT_EQ(e.trace.steps(), 30);
        EXPECT_NEAR(e.trace.residuals.back(), 1.0, 1e-9);
    }
}

TEST(RunInverse, QuadraticOrderProperty) {
    Rng rng(7);
    for (double kappa : {10.0, 100.0}) {
        const DenseMatrix a = oracle::spd_with_condition(8, kappa, rng);
        const InverseRun run = run_inverse(a, 2, 1e-12, 100);
        EXPECT_GE(fitted_order(run.residuals, 3, 1e-13), 1.9) << kappa;
    }
}

TEST(PredictedSteps, Examples) {
    EXPECT_EQ(predicted_steps(1, 0.5, 2), 2);
    EXPECT_EQ(predicted_steps(100, 1e-10, 2), 22);
}

TEST(PredictedSteps, HigherOrderNeverWorse) {
    for (double kappa = 4; kappa < 1e6; kappa *= 1.7)
        for (double eps : {1e-2, 1e-6, 1e-12})
            EXPECT_LE(predicted_steps(kappa, eps, 3), predicted_steps(kappa, eps, 2));
}

TEST(PredictedSteps, RejectsInvalid) {
    EXPECT_THROW(predicted_steps(0.5, 0.1, 2), DomainError);
    EXPECT_THROW(predicted_steps(2, 1.0, 2), DomainError);
    EXPECT_THROW(predicted_steps(2, 0.1, 1), DomainError);
}

TEST(PredictedSteps, BoundsMeasuredSteps) {
    Rng rng(12);
    for (double kappa : {2.0, 10.0, 100.0})
        for (int order : {2, 3}) {
            const DenseMatrix a = oracle::spd_with_condition(6, kappa, rng);
            EXPECT_LE(run_inverse(a, order, 1e-10, 200).steps(), predicted_steps(kappa * kappa, 1e-10, order))
                << "A^T A has condition kappa^2";
        }
}

TEST(InverseRun, CsvHeader) {
    const InverseRun run = run_inverse(DenseMatrix::identity(2), 2, 1e-6, 20);
    std::ostringstream os;
    write_csv(os, run);
    EXPECT_EQ(os.str().substr(0, 25), "step,residual_frobenius\n0");
}
