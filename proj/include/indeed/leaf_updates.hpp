#pragma once

#include "indeed/distributions.hpp"

namespace indeed {

/// Closed-form posteriors for the leaf precision variables. Values in a
/// LeafState are constants with respect to any downstream gradient: no
/// gradient path in this codebase flows through them.
struct LeafState {
    GammaPosterior gamma;  // r0 x 1
    GammaPosterior omega;  // h x w
    GammaPosterior lambda; // h x w
};

/// Rank-precision update. For each column i:
///   alpha_i = 2*alpha0 + h + w
///   beta_i  = 2*beta0 + |mu_a_i|^2 + |sigma_a_i|^2 + |mu_b_i|^2 + |sigma_b_i|^2
/// alpha depends only on (h, w, hyper), never on the data.
GammaPosterior update_gamma(const GaussianFactorPosterior& phiA,
                            const GaussianFactorPosterior& phiB, const Hyperparams& hyper);

/// Sparsity-precision update, per pixel:
///   alpha = 2*alpha0 + 1,  beta = 2*beta0 + mu_s^2 + sigma_s^2
GammaPosterior update_omega(const GaussianFactorPosterior& phiS, const Hyperparams& hyper);

/// Noise-precision update from sampled factors, per pixel:
///   alpha = 2*alpha0 + 1,  beta = 2*beta0 + (y - (A B^T + S))^2
/// With several samples the squared residuals are averaged.
GammaPosterior update_lambda(const Matrix& Y, const std::vector<Matrix>& A_hats,
                             const std::vector<Matrix>& B_hats,
                             const std::vector<Matrix>& S_hats, const Hyperparams& hyper);
GammaPosterior update_lambda(const Matrix& Y, const Matrix& A_hat, const Matrix& B_hat,
                             const Matrix& S_hat, const Hyperparams& hyper);

/// All three updates on a consistent state.
LeafState leaf_update_all(const Matrix& Y, const GaussianFactorPosterior& phiA,
                          const GaussianFactorPosterior& phiB,
                          const GaussianFactorPosterior& phiS, const Matrix& A_hat,
                          const Matrix& B_hat, const Matrix& S_hat, const Hyperparams& hyper);

/// Negative-ELBO restriction to the leaf parameters: the sub-problem objective
/// whose minimization the closed forms address. Includes the E[ln .] terms that
/// the detached training losses treat as constants. Used by the solver trace
/// and the minimizer oracles; additive terms that do not depend on the leaf
/// state are dropped.
double leaf_objective(const GaussianFactorPosterior& phiA, const GaussianFactorPosterior& phiB,
                      const GaussianFactorPosterior& phiS, const Matrix& Y, const Matrix& A_hat,
                      const Matrix& B_hat, const Matrix& S_hat, const LeafState& leaf,
                      const Hyperparams& hyper);

} // namespace indeed
