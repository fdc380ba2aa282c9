#include "indeed/elbo_losses.hpp"

namespace indeed {

namespace {

void check_positive(const Matrix& sig, const char* who) {
    if ((sig.array() <= 0.0).any())
        throw std::domain_error(std::string(who) + ": nonpositive standard deviation");
}

} // namespace

double loss_fid(const Matrix& Y, const Matrix& A_hat, const Matrix& B_hat, const Matrix& S_hat,
                const Matrix& lambda_mean) {
    if ((lambda_mean.array() < 0.0).any())
        throw std::domain_error("loss_fid: negative precision entries");
    const Matrix r = Y - (A_hat * B_hat.transpose() + S_hat);
    return 0.5 * (lambda_mean.array() * r.array().square()).sum();
}

double loss_fid_grad(const Matrix& Y, const Matrix& A_hat, const Matrix& B_hat,
                     const Matrix& S_hat, const Matrix& lambda_mean, Matrix& dA, Matrix& dB,
                     Matrix& dS) {
    if ((lambda_mean.array() < 0.0).any())
        throw std::domain_error("loss_fid: negative precision entries");
    const Matrix r = Y - (A_hat * B_hat.transpose() + S_hat);
    const Matrix wr = lambda_mean.cwiseProduct(r);
    dA = -wr * B_hat;
    dB = -wr.transpose() * A_hat;
    dS = -wr;
    return 0.5 * (lambda_mean.array() * r.array().square()).sum();
}

namespace {

double rank_half(const GaussianFactorPosterior& phi, const Vector& mu_gamma, Matrix* d_mu,
                 Matrix* d_sig) {
    check_positive(phi.std, "loss_rank");
    const Eigen::Index n = phi.rows(), r = phi.cols();
    if (mu_gamma.size() != r) throw std::invalid_argument("loss_rank: gamma mean length != r0");
    double val = 0.0;
    if (d_mu) d_mu->resize(n, r);
    if (d_sig) d_sig->resize(n, r);
    for (Eigen::Index k = 0; k < r; ++k) {
        const double g = mu_gamma(k);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = phi.mean(i, k), sig = phi.std(i, k);
            val += 0.5 * (g * mu * mu + g * sig * sig - std::log(sig * sig));
            if (d_mu) (*d_mu)(i, k) = g * mu;
            if (d_sig) (*d_sig)(i, k) = g * sig - 1.0 / sig;
        }
    }
    return val;
}

} // namespace

double loss_rank(const GaussianFactorPosterior& phiA, const GaussianFactorPosterior& phiB,
                 const Vector& gamma_mean_vec) {
    return rank_half(phiA, gamma_mean_vec, nullptr, nullptr) +
           rank_half(phiB, gamma_mean_vec, nullptr, nullptr);
}

double loss_rank_grad(const GaussianFactorPosterior& phiA, const GaussianFactorPosterior& phiB,
                      const Vector& gamma_mean_vec, Matrix& d_mu_A, Matrix& d_sig_A,
                      Matrix& d_mu_B, Matrix& d_sig_B) {
    return rank_half(phiA, gamma_mean_vec, &d_mu_A, &d_sig_A) +
           rank_half(phiB, gamma_mean_vec, &d_mu_B, &d_sig_B);
}

double loss_sparse(const GaussianFactorPosterior& phiS, const Matrix& omega_mean) {
    check_positive(phiS.std, "loss_sparse");
    const auto mu2 = phiS.mean.array().square();
    const auto sig2 = phiS.std.array().square();
    return 0.5 * (omega_mean.array() * (mu2 + sig2) - sig2.log()).sum();
}

double loss_sparse_grad(const GaussianFactorPosterior& phiS, const Matrix& omega_mean,
                        Matrix& d_mu_S, Matrix& d_sig_S) {
    check_positive(phiS.std, "loss_sparse");
    d_mu_S = phiS.mean.cwiseProduct(omega_mean);
    d_sig_S = (phiS.std.array() * omega_mean.array() - phiS.std.array().inverse()).matrix();
    return loss_sparse(phiS, omega_mean);
}

double loss_orth(const Matrix& A_hat, const Matrix& B_hat) {
    const Eigen::Index r = A_hat.cols();
    const Matrix I = Matrix::Identity(r, r);
    return (A_hat.transpose() * A_hat - I).squaredNorm() +
           (B_hat.transpose() * B_hat - I).squaredNorm();
}

double loss_orth_grad(const Matrix& A_hat, const Matrix& B_hat, Matrix& dA, Matrix& dB) {
    const Eigen::Index r = A_hat.cols();
    const Matrix I = Matrix::Identity(r, r);
    const Matrix Ga = A_hat.transpose() * A_hat - I;
    const Matrix Gb = B_hat.transpose() * B_hat - I;
    dA = 4.0 * A_hat * Ga;
    dB = 4.0 * B_hat * Gb;
    return Ga.squaredNorm() + Gb.squaredNorm();
}

double loss_sup_den(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U, double sigma0) {
    return 0.5 * sigma0 * ((L_hat + S_hat - U).squaredNorm() + (L_hat - U).squaredNorm());
}

double loss_sup_den_grad(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U, double sigma0,
                         Matrix& dL, Matrix& dS) {
    const Matrix r1 = L_hat + S_hat - U;
    const Matrix r2 = L_hat - U;
    dL = sigma0 * (r1 + r2);
    dS = sigma0 * r1;
    return 0.5 * sigma0 * (r1.squaredNorm() + r2.squaredNorm());
}

double loss_sup_uad(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U_N,
                    const Matrix& U_A, double sigma0) {
    return 0.5 * sigma0 * ((L_hat - U_N).squaredNorm() + (S_hat - U_A).squaredNorm());
}

double loss_sup_uad_grad(const Matrix& L_hat, const Matrix& S_hat, const Matrix& U_N,
                         const Matrix& U_A, double sigma0, Matrix& dL, Matrix& dS) {
    const Matrix r1 = L_hat - U_N;
    const Matrix r2 = S_hat - U_A;
    dL = sigma0 * r1;
    dS = sigma0 * r2;
    return 0.5 * sigma0 * (r1.squaredNorm() + r2.squaredNorm());
}

namespace {

LossBreakdown total_impl(const Matrix& Y, const SupervisionTarget* target, const Posteriors& post,
                         const Samples& samples, const LeafState& leaf, const Hyperparams& hyper,
                         LossGrads* grads) {
    LossBreakdown out;
    const Matrix lambda_mu = gamma_mean(leaf.lambda);
    const Matrix omega_mu = gamma_mean(leaf.omega);
    const Vector gamma_mu = gamma_mean(leaf.gamma).col(0);

    Matrix dA = Matrix::Zero(samples.A_hat.rows(), samples.A_hat.cols());
    Matrix dB = Matrix::Zero(samples.B_hat.rows(), samples.B_hat.cols());
    Matrix dS = Matrix::Zero(samples.S_hat.rows(), samples.S_hat.cols());

    if (grads) {
        Matrix ta, tb, ts;
        out.fid = loss_fid_grad(Y, samples.A_hat, samples.B_hat, samples.S_hat, lambda_mu, ta, tb,
                                ts);
        dA += ta;
        dB += tb;
        dS += ts;
        out.rank = loss_rank_grad(post.A, post.B, gamma_mu, grads->d_mu_A, grads->d_sig_A,
                                  grads->d_mu_B, grads->d_sig_B);
        out.sparse = loss_sparse_grad(post.S, omega_mu, grads->d_mu_S, grads->d_sig_S);
        out.orth = loss_orth_grad(samples.A_hat, samples.B_hat, ta, tb);
        dA += hyper.tau * ta;
        dB += hyper.tau * tb;
    } else {
        out.fid = loss_fid(Y, samples.A_hat, samples.B_hat, samples.S_hat, lambda_mu);
        out.rank = loss_rank(post.A, post.B, gamma_mu);
        out.sparse = loss_sparse(post.S, omega_mu);
        out.orth = loss_orth(samples.A_hat, samples.B_hat);
    }

    if (target) {
        const Matrix L_hat = samples.A_hat * samples.B_hat.transpose();
        Matrix dL, dSsup;
        if (target->task == Task::DEN) {
            out.sup = grads ? loss_sup_den_grad(L_hat, samples.S_hat, target->U, hyper.sigma0, dL,
                                                dSsup)
                            : loss_sup_den(L_hat, samples.S_hat, target->U, hyper.sigma0);
        } else {
            out.sup = grads ? loss_sup_uad_grad(L_hat, samples.S_hat, target->U_N, target->U_A,
                                                hyper.sigma0, dL, dSsup)
                            : loss_sup_uad(L_hat, samples.S_hat, target->U_N, target->U_A,
                                           hyper.sigma0);
        }
        if (grads) {
            dA += dL * samples.B_hat;
            dB += dL.transpose() * samples.A_hat;
            dS += dSsup;
        }
    }

    out.total = out.fid + out.sup + out.rank + out.sparse + hyper.tau * out.orth;

    out.l_gamma = kl_gamma_to_prior(leaf.gamma, hyper.alpha0_gamma, hyper.beta0_gamma);
    out.l_omega = kl_gamma_to_prior(leaf.omega, hyper.alpha0_omega, hyper.beta0_omega);
    out.l_lambda = kl_gamma_to_prior(leaf.lambda, hyper.alpha0_lambda, hyper.beta0_lambda);

    if (!std::isfinite(out.total))
        throw SolverDiverged("loss_total: non-finite loss");

    if (grads) {
        grads->dA_hat = std::move(dA);
        grads->dB_hat = std::move(dB);
        grads->dS_hat = std::move(dS);
    }
    return out;
}

} // namespace

LossBreakdown loss_total(const Matrix& Y, const SupervisionTarget* target, const Posteriors& post,
                         const Samples& samples, const LeafState& leaf,
                         const Hyperparams& hyper) {
    return total_impl(Y, target, post, samples, leaf, hyper, nullptr);
}

LossBreakdown loss_total_with_grads(const Matrix& Y, const SupervisionTarget* target,
                                    const Posteriors& post, const Samples& samples,
                                    const LeafState& leaf, const Hyperparams& hyper,
                                    LossGrads& grads) {
    return total_impl(Y, target, post, samples, leaf, hyper, &grads);
}

MiddleGrads fold_sample_grads(const LossGrads& g, const Samples& s) {
    MiddleGrads out;
    out.d_mu_A = g.d_mu_A + g.dA_hat;
    out.d_sig_A = g.d_sig_A + g.dA_hat.cwiseProduct(s.eta_A);
    out.d_mu_B = g.d_mu_B + g.dB_hat;
    out.d_sig_B = g.d_sig_B + g.dB_hat.cwiseProduct(s.eta_B);
    out.d_mu_S = g.d_mu_S + g.dS_hat;
    out.d_sig_S = g.d_sig_S + g.dS_hat.cwiseProduct(s.eta_S);
    return out;
}

} // namespace indeed
