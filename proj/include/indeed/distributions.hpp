#pragma once

#include "indeed/core.hpp"
#include "indeed/rng.hpp"

namespace indeed {

/// Mean/std pair parameterizing a fully factorized Gaussian posterior over a
/// factor matrix (h x r0 for the left factor, w x r0 for the right factor,
/// h x w for the sparse component).
struct GaussianFactorPosterior {
    Matrix mean;
    Matrix std; // elementwise standard deviation, strictly positive

    GaussianFactorPosterior() = default;
    GaussianFactorPosterior(Matrix mean_, Matrix std_);

    Eigen::Index rows() const { return mean.rows(); }
    Eigen::Index cols() const { return mean.cols(); }

    void validate() const;
};

/// Shape/rate pair parameterizing a factorized Gamma posterior. Stored as a
/// matrix; a length-r0 posterior (for the rank precisions) uses an r0 x 1 shape.
struct GammaPosterior {
    Matrix alpha; // shape, > 0
    Matrix beta;  // rate, > 0

    GammaPosterior() = default;
    GammaPosterior(Matrix alpha_, Matrix beta_);

    void validate() const;
};

/// Prior constants and balancing weights shared by every inference path.
struct Hyperparams {
    double alpha0_gamma = 2.0;
    double beta0_gamma = 1e-6;
    double alpha0_omega = 2.0;
    double beta0_omega = 1e-6;
    double alpha0_lambda = 2.0;
    double beta0_lambda = 1e-8;
    int r0 = 8;           // maximal rank
    double tau = 1.0;     // orthogonality weight
    double sigma0 = 1.0;  // supervision precision

    void validate() const;
};

/// Posterior mean alpha/beta, elementwise.
Matrix gamma_mean(const GammaPosterior& post);

/// Reparameterized draw: mean + std .* eta with eta ~ N(0, I).
/// The same (posterior, seed) always returns the same matrix.
Matrix sample_factor(const GaussianFactorPosterior& post, std::uint64_t seed);

/// Same draw, consuming noise from an existing stream. Returns eta through
/// `eta_out` so the caller can chain gradients through the sample.
Matrix sample_factor(const GaussianFactorPosterior& post, Rng& rng, Matrix* eta_out = nullptr);

/// Moments of the low-rank component L implied by q(A), q(B):
/// mu_L  = (mu_A (sigma_B^T)^2 + sigma_A^2 mu_B^T) / D
/// var_L = sigma_A^2 (sigma_B^T)^2 / D
/// with D = sigma_A^2 1_B^T + 1_A (sigma_B^T)^2 and all products matrix products
/// of elementwise-squared inputs, division elementwise. Both outputs are h x w.
struct LowRankMoments {
    Matrix mu_L;
    Matrix var_L;
};
LowRankMoments low_rank_moments(const GaussianFactorPosterior& phiA,
                                const GaussianFactorPosterior& phiB);

/// Sum over elements of KL( Gamma(alpha, beta) || Gamma(alpha0, beta0) ).
double kl_gamma_to_prior(const GammaPosterior& post, double alpha0, double beta0);

} // namespace indeed
