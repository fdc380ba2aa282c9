#pragma once

#include "indeed/leaf_updates.hpp"

#include <optional>

namespace indeed {

enum class Task { DEN, UAD };

/// Per-term values of the training objective. `total` excludes the prior KL
/// diagnostics, which are constant once the leaf state is fixed:
///   total = fid + sup + rank + sparse + tau * orth
struct LossBreakdown {
    double fid = 0.0;
    double rank = 0.0;
    double sparse = 0.0;
    double orth = 0.0;
    double sup = 0.0;
    double total = 0.0;
    // diagnostics, not part of total
    double l_gamma = 0.0;
    double l_omega = 0.0;
    double l_lambda = 0.0;
};

/// Ground truth for the supervision term of the selected task.
struct SupervisionTarget {
    Task task = Task::DEN;
    Matrix U;   // DEN: clean image
    Matrix U_N; // UAD: normal content
    Matrix U_A; // UAD: synthetic anomaly, U_A = Y - U_N
};

/// Middle-level posteriors of one channel.
struct Posteriors {
    GaussianFactorPosterior A, B, S;
};

/// Reparameterized draws together with the noise that produced them.
struct Samples {
    Matrix A_hat, B_hat, S_hat;
    Matrix eta_A, eta_B, eta_S;
};

/// Gradients of a scalar loss with respect to the sampled matrices and the
/// directly-entering posterior parameters (all same shapes as their targets).
struct LossGrads {
    Matrix dA_hat, dB_hat, dS_hat;
    Matrix d_mu_A, d_sig_A, d_mu_B, d_sig_B;
    Matrix d_mu_S, d_sig_S;
};

/// Gradient of the total loss with respect to the middle-level variational
/// parameters, after folding the the reparameterization chain
/// d_mu += dX_hat, d_sig += dX_hat .* eta.
struct MiddleGrads {
    Matrix d_mu_A, d_sig_A, d_mu_B, d_sig_B, d_mu_S, d_sig_S;
};

// --- individual terms -------------------------------------------------------

/// 1/2 || sqrt(mu_Lambda) .* (Y - (A B^T + S)) ||_F^2
double loss_fid(const Matrix& Y, const Matrix& A_hat, const Matrix& B_hat, const Matrix& S_hat,
                const Matrix& lambda_mean);
double loss_fid_grad(const Matrix& Y, const Matrix& A_hat, const Matrix& B_hat,
                     const Matrix& S_hat, const Matrix& lambda_mean, Matrix& dA, Matrix& dB,
                     Matrix& dS);

/// 1/2 { ||mu_A .* 1 sqrt(mu_gamma)^T||^2 + <1 mu_gamma^T, sigma_A^2> - <1, ln sigma_A^2> }
/// plus the same three terms for B.
double loss_rank(const GaussianFactorPosterior& phiA, const GaussianFactorPosterior& phiB,
                 const Vector& gamma_mean_vec);
double loss_rank_grad(const GaussianFactorPosterior& phiA, const GaussianFactorPosterior& phiB,
                      const Vector& gamma_mean_vec, Matrix& d_mu_A, Matrix& d_sig_A,
                      Matrix& d_mu_B, Matrix& d_sig_B);

/// 1/2 { ||mu_S .* sqrt(mu_Omega)||^2 + <mu_Omega, sigma_S^2> - <1, ln sigma_S^2> }
double loss_sparse(const GaussianFactorPosterior& phiS, const Matrix& omega_mean);
double loss_sparse_grad(const GaussianFactorPosterior& phiS, const Matrix& omega_mean,
                        Matrix& d_mu_S, Matrix& d_sig_S);

/// ||A^T A - I||_F^2 + ||B^T B - I||_F^2
double loss_orth(const Matrix& A_hat, const Matrix& B_hat);
double loss_orth_grad(const Matrix& A_hat, const Matrix& B_hat, Matrix& dA, Matrix& dB);

/// (sigma0/2) ( ||L + S - U||_F^2 + ||L - U||_F^2 )
double loss_sup_den(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U, double sigma0);
double loss_sup_den_grad(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U, double sigma0,
                         Matrix& dL, Matrix& dS);

/// (sigma0/2) ( ||L - U_N||_F^2 + ||S - U_A||_F^2 )
double loss_sup_uad(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U_N,
                    const Matrix& U_A, double sigma0);
double loss_sup_uad_grad(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U_N,
                         const Matrix& U_A, double sigma0, Matrix& dL, Matrix& dS);

// --- composition ------------------------------------------------------------

/// All terms of the deep-inference objective for one channel. Passing a null
/// target gives the unsupervised objective (sup = 0), which with tau = 0 is the
/// adaptation objective. Leaf expectations enter as constants.
LossBreakdown loss_total(const Matrix& Y, const SupervisionTarget* target,
                         const Posteriors& post, const Samples& samples, const LeafState& leaf,
                         const Hyperparams& hyper);

/// Same, also accumulating gradients with respect to samples and parameters.
LossBreakdown loss_total_with_grads(const Matrix& Y, const SupervisionTarget* target,
                                    const Posteriors& post, const Samples& samples,
                                    const LeafState& leaf, const Hyperparams& hyper,
                                    LossGrads& grads);

/// Fold sampled-matrix gradients through X_hat = mu + sigma .* eta.
MiddleGrads fold_sample_grads(const LossGrads& grads, const Samples& samples);

} // namespace indeed
