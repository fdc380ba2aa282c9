#include "indeed/distributions.hpp"

#include "test_helpers.hpp"

#include <cstring>
#include <random>

#include <doctest.h>

using namespace indeed;
using namespace indeed::testing;

TEST_SUITE_BEGIN("distributions");

TEST_CASE("gamma_mean is the elementwise ratio") {
    Matrix a(2, 1), b(2, 1);
    a << 9, 9;
    b << 3, 1;
    const Matrix m = gamma_mean(GammaPosterior(a, b));
    CHECK(m(0, 0) == doctest::Approx(3.0));
    CHECK(m(1, 0) == doctest::Approx(9.0));

    Matrix a1(1, 1), b1(1, 1);
    a1 << 5;
    b1 << 5;
    CHECK(gamma_mean(GammaPosterior(a1, b1))(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("gamma_mean extreme ratio cross-checked against sample mean") {
    Matrix a(1, 1), b(1, 1);
    a << 12;
    b << 2e-6;
    const double closed = gamma_mean(GammaPosterior(a, b))(0, 0);
    CHECK(closed == doctest::Approx(6e6).epsilon(1e-12));

    std::mt19937_64 eng(7);
    std::gamma_distribution<double> dist(12.0, 1.0 / 2e-6);
    double acc = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) acc += dist(eng);
    CHECK(acc / n == doctest::Approx(closed).epsilon(0.01));
}

TEST_CASE("gamma_mean invariant under joint scaling of shape and rate") {
    Rng rng(11);
    for (int t = 0; t < 50; ++t) {
        Matrix a = random_matrix(rng, 3, 2, 0.2, 8.0);
        Matrix b = random_matrix(rng, 3, 2, 0.2, 8.0);
        const double c = rng.uniform(0.01, 100.0);
        const Matrix m1 = gamma_mean(GammaPosterior(a, b));
        const Matrix m2 = gamma_mean(GammaPosterior(c * a, c * b));
        CHECK((m1 - m2).cwiseAbs().maxCoeff() < 1e-9 * m1.cwiseAbs().maxCoeff());
    }
}

TEST_CASE("sample_factor with zero std returns the mean exactly") {
    Rng rng(3);
    const Matrix mean = random_matrix(rng, 4, 3);
    GaussianFactorPosterior post(mean, Matrix::Zero(4, 3));
    CHECK(bitwise_equal(sample_factor(post, 99), mean));
}

TEST_CASE("sample_factor determinism") {
    Rng rng(4);
    const auto post = random_posterior(rng, 5, 2);
    const Matrix s1 = sample_factor(post, 1234);
    const Matrix s2 = sample_factor(post, 1234);
    CHECK(bitwise_equal(s1, s2));
    const Matrix s3 = sample_factor(post, 1235);
    CHECK(!bitwise_equal(s1, s3));
}

TEST_CASE("sample_factor Monte-Carlo moments") {
    GaussianFactorPosterior post(Matrix::Zero(1, 1), Matrix::Ones(1, 1));
    Rng rng(5);
    double sum = 0.0, sum2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = sample_factor(post, rng)(0, 0);
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum2 / n - mean * mean);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sd - 1.0) < 0.02);
}

TEST_CASE("low_rank_moments symmetric-weight case") {
    Rng rng(6);
    const Matrix u = random_matrix(rng, 4, 1);
    const Matrix v = random_matrix(rng, 3, 1);
    GaussianFactorPosterior phiA(u, Matrix::Ones(4, 1));
    GaussianFactorPosterior phiB(v, Matrix::Ones(3, 1));
    const auto lm = low_rank_moments(phiA, phiB);
    const Matrix expect_mu =
        0.5 * (u * Matrix::Ones(1, 3) + Matrix::Ones(4, 1) * v.transpose());
    CHECK((lm.mu_L - expect_mu).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((lm.var_L.array() - 0.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("low_rank_moments limit sigma_A -> 0 stays finite") {
    Rng rng(7);
    const Matrix u = random_matrix(rng, 4, 2);
    const Matrix v = random_matrix(rng, 3, 2);
    GaussianFactorPosterior phiA(u, Matrix::Constant(4, 2, 1e-12));
    GaussianFactorPosterior phiB(v, Matrix::Ones(3, 2));
    const auto lm = low_rank_moments(phiA, phiB);
    CHECK(lm.mu_L.allFinite());
    CHECK(lm.var_L.allFinite());
    // sigma_A -> 0 collapses the weights onto the sigma_B side of the combination
    Matrix direct(4, 3);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            double num = 0, den = 0;
            for (int k = 0; k < 2; ++k) {
                num += u(i, k) * phiB.std(j, k) * phiB.std(j, k);
                den += phiB.std(j, k) * phiB.std(j, k);
            }
            direct(i, j) = num / den;
        }
    CHECK((lm.mu_L - direct).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(lm.var_L.cwiseAbs().maxCoeff() < 1e-6); // variance vanishes with sigma_A
}

TEST_CASE("low_rank_moments matches a direct elementwise evaluation") {
    Rng rng(8);
    const auto phiA = random_posterior(rng, 3, 2);
    const auto phiB = random_posterior(rng, 4, 2);
    const auto lm = low_rank_moments(phiA, phiB);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            long double num_mu = 0, num_var = 0, den = 0;
            for (int k = 0; k < 2; ++k) {
                const long double sa2 = phiA.std(i, k) * phiA.std(i, k);
                const long double sb2 = phiB.std(j, k) * phiB.std(j, k);
                num_mu += phiA.mean(i, k) * sb2 + sa2 * phiB.mean(j, k);
                num_var += sa2 * sb2;
                den += sa2 + sb2;
            }
            CHECK(lm.mu_L(i, j) ==
                  doctest::Approx(static_cast<double>(num_mu / den)).epsilon(1e-12));
            CHECK(lm.var_L(i, j) ==
                  doctest::Approx(static_cast<double>(num_var / den)).epsilon(1e-12));
        }
    }
    CHECK(lm.mu_L.rows() == 3);
    CHECK(lm.mu_L.cols() == 4);
    CHECK((lm.var_L.array() > 0.0).all());
}

TEST_CASE("kl_gamma_to_prior zero iff equal, positive otherwise") {
    Matrix a(1, 1), b(1, 1);
    a << 2;
    b << 2;
    CHECK(kl_gamma_to_prior(GammaPosterior(a, b), 2.0, 2.0) == doctest::Approx(0.0).epsilon(1e-12));
    a << 3;
    b << 1;
    CHECK(kl_gamma_to_prior(GammaPosterior(a, b), 2.0, 1.0) > 0.0);

    Rng rng(9);
    for (int t = 0; t < 100; ++t) {
        Matrix aa = random_matrix(rng, 2, 2, 0.2, 6.0);
        Matrix bb = random_matrix(rng, 2, 2, 0.2, 6.0);
        CHECK(kl_gamma_to_prior(GammaPosterior(aa, bb), rng.uniform(0.2, 6.0),
                                rng.uniform(0.2, 6.0)) >= -1e-12);
    }
}

TEST_CASE("kl_gamma_to_prior against numerical quadrature") {
    // KL( G(2,1) || G(2,2) ), rate parameterization
    const double a = 2.0, b = 1.0, a0 = 2.0, b0 = 2.0;
    auto log_pdf = [](double x, double shape, double rate) {
        return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
               rate * x;
    };
    // composite Simpson over [eps, 60]
    const double lo = 1e-9, hi = 60.0;
    const int n = 200000; // even
    const double h = (hi - lo) / n;
    auto integrand = [&](double x) {
        const double lq = log_pdf(x, a, b);
        return std::exp(lq) * (lq - log_pdf(x, a0, b0));
    };
    double acc = integrand(lo) + integrand(hi);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * integrand(lo + i * h);
    const double quad = acc * h / 3.0;

    Matrix am(1, 1), bm(1, 1);
    am << a;
    bm << b;
    CHECK(kl_gamma_to_prior(GammaPosterior(am, bm), a0, b0) ==
          doctest::Approx(quad).epsilon(1e-6));
}

TEST_CASE("invariant violations raise invalid-posterior errors") {
    Matrix m = Matrix::Zero(2, 2);
    Matrix bad_std = Matrix::Constant(2, 2, -0.5);
    CHECK_THROWS_AS(GaussianFactorPosterior(m, bad_std), InvalidPosterior);
    CHECK_THROWS_AS(GaussianFactorPosterior(m, Matrix::Zero(3, 2)), InvalidPosterior);
    Matrix zero_beta = Matrix::Zero(2, 2);
    CHECK_THROWS_AS(GammaPosterior(Matrix::Ones(2, 2), zero_beta), InvalidPosterior);
    Hyperparams h;
    h.r0 = 0;
    CHECK_THROWS_AS(h.validate(), InvalidPosterior);
}

TEST_SUITE_END();
