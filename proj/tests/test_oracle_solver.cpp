#include "indeed/oracle_solver.hpp"

#include "indeed/tasks_metrics.hpp"
#include "test_helpers.hpp"

#include <doctest.h>

using namespace indeed;
using namespace indeed::testing;

TEST_SUITE_BEGIN("oracle_solver");

TEST_CASE("generator: density, noise, additive identity, rank") {
    const SyntheticLrs a = generate_synthetic_lrs(16, 16, 2, 0.0, 0.0, 1);
    CHECK(a.S_true.cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.N_true.cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.Y - a.L_true).cwiseAbs().maxCoeff() == 0.0);

    const SyntheticLrs b = generate_synthetic_lrs(20, 20, 5, 0.05, 0.02, 2);
    int nnz = 0;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) nnz += (b.S_true(i, j) != 0.0);
    CHECK(nnz == 20); // round(0.05 * 400)
    CHECK((b.Y - (b.L_true + b.S_true + b.N_true)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(estimate_rank_svd(b.L_true, 1e-8) == 5);

    CHECK_THROWS_AS(generate_synthetic_lrs(8, 8, 9, 0.1, 0.0, 3), std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic_lrs(8, 8, 2, 1.5, 0.0, 3), std::invalid_argument);
}

TEST_CASE("generator determinism") {
    const SyntheticLrs a = generate_synthetic_lrs(12, 10, 3, 0.1, 0.05, 77);
    const SyntheticLrs b = generate_synthetic_lrs(12, 10, 3, 0.1, 0.05, 77);
    CHECK(bitwise_equal(a.Y, b.Y));
    CHECK(bitwise_equal(a.S_true, b.S_true));
}

TEST_CASE("zero image: posterior means collapse to zero") {
    SolverConfig cfg;
    cfg.r0 = 3;
    cfg.outer_iters = 30;
    cfg.inner_grad_steps = 15;
    cfg.seed = 4;
    Hyperparams hyper;
    hyper.r0 = 3;
    const SolveReport rep = solve_single_image(Matrix::Zero(12, 12), hyper, cfg);
    const auto& c = rep.result.ch(0);
    CHECK(c.post.A.mean.cwiseAbs().maxCoeff() < 1e-2);
    CHECK(c.post.B.mean.cwiseAbs().maxCoeff() < 1e-2);
    CHECK(c.post.S.mean.cwiseAbs().maxCoeff() < 1e-2);
    // mean-field reconstruction is numerically zero, per-pixel
    const Matrix recon = c.post.A.mean * c.post.B.mean.transpose() + c.post.S.mean;
    CHECK(recon.squaredNorm() / recon.size() < 1e-6);
}

TEST_CASE("exact rank-1 image is recovered") {
    Rng rng(5);
    Matrix u = random_matrix(rng, 16, 1, 0.2, 1.0);
    Matrix v = random_matrix(rng, 16, 1, 0.2, 1.0);
    Matrix Y = u * v.transpose();
    Y *= 0.9 / Y.maxCoeff();

    SolverConfig cfg;
    cfg.r0 = 4;
    cfg.seed = 6;
    Hyperparams hyper;
    hyper.r0 = 4;
    const SolveReport rep = solve_single_image(Y, hyper, cfg);
    const auto& c = rep.result.ch(0);
    // posterior mean of L — E[A B^T] factorizes over independent q(A), q(B)
    const Matrix recon = c.post.A.mean * c.post.B.mean.transpose();
    CHECK((recon - Y).norm() / Y.norm() <= 0.05);
    CHECK(rank_indicator(c.leaf.gamma, 0.05) == 1);
}

TEST_CASE("trace is non-increasing and the leaf step is exactly monotone") {
    const SyntheticLrs inst = generate_synthetic_lrs(16, 16, 2, 0.03, 0.01, 9);
    SolverConfig cfg;
    cfg.r0 = 4;
    cfg.outer_iters = 12;
    cfg.seed = 10;
    cfg.tol = 1e-12; // keep iterating
    Hyperparams hyper;
    hyper.r0 = 4;
    const SolveReport rep = solve_single_image(inst.Y, hyper, cfg);
    REQUIRE(rep.trace.size() >= 3);
    for (size_t i = 1; i < rep.trace.size(); ++i)
        CHECK(rep.trace[i] <= rep.trace[i - 1] + 1e-6 * (1.0 + std::abs(rep.trace[i - 1])));
}

TEST_CASE("gamma shrinkage separates active from inactive components") {
    const SyntheticLrs inst = generate_synthetic_lrs(24, 24, 2, 0.0, 0.0, 11);
    SolverConfig cfg;
    cfg.r0 = 6;
    cfg.seed = 12;
    Hyperparams hyper;
    hyper.r0 = 6;
    const SolveReport rep = solve_single_image(inst.Y, hyper, cfg);
    const Matrix gm = gamma_mean(rep.result.ch(0).leaf.gamma);
    std::vector<double> means(gm.data(), gm.data() + gm.size());
    std::sort(means.begin(), means.end());
    // 2 active components have small precision; at least 4 shrink away.
    const double active_median = means[1];
    int huge = 0;
    for (double m : means)
        if (m > 10.0 * active_median) ++huge;
    CHECK(huge >= 4);
}

TEST_CASE("solver recovery on a noisy sparse instance") {
    const SyntheticLrs inst = generate_synthetic_lrs(32, 32, 3, 0.05, 0.02, 13);
    SolverConfig cfg;
    cfg.r0 = 8;
    cfg.seed = 14;
    Hyperparams hyper;
    hyper.r0 = 8;
    const SolveReport rep = solve_single_image(inst.Y, hyper, cfg);
    const auto& c = rep.result.ch(0);
    const Matrix mean_L = c.post.A.mean * c.post.B.mean.transpose();
    const double rel = (mean_L - inst.L_true).norm() / inst.L_true.norm();
    CHECK(rel <= 0.1);
    CHECK(rank_indicator(c.leaf.gamma, 0.05) == 3);
}

TEST_CASE("invalid configs and divergence reporting") {
    SolverConfig cfg;
    cfg.tol = 2.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SolverConfig{};
    cfg.r0 = 64;
    Hyperparams hyper;
    hyper.r0 = 64;
    CHECK_THROWS_AS(solve_single_image(Matrix::Zero(8, 8), hyper, cfg), std::invalid_argument);
}

TEST_SUITE_END();
