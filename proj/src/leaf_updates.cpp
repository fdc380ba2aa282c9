#include "indeed/leaf_updates.hpp"

#include "indeed/special.hpp"

namespace indeed {

namespace {

// Guards division when a user configures beta0 = 0.
constexpr double kBetaFloor = 1e-30;

Matrix floored(Matrix m) {
    return m.array().max(kBetaFloor).matrix();
}

Matrix mean_sq_residual(const Matrix& Y, const std::vector<Matrix>& A_hats,
                        const std::vector<Matrix>& B_hats, const std::vector<Matrix>& S_hats) {
    Matrix acc = Matrix::Zero(Y.rows(), Y.cols());
    for (size_t s = 0; s < A_hats.size(); ++s) {
        Matrix r = Y - (A_hats[s] * B_hats[s].transpose() + S_hats[s]);
        acc += r.cwiseProduct(r);
    }
    return acc / static_cast<double>(A_hats.size());
}

} // namespace

GammaPosterior update_gamma(const GaussianFactorPosterior& phiA,
                            const GaussianFactorPosterior& phiB, const Hyperparams& hyper) {
    phiA.validate();
    phiB.validate();
    hyper.validate();
    if (phiA.cols() != hyper.r0 || phiB.cols() != hyper.r0)
        throw InvalidPosterior("update_gamma: factor column count does not match r0");

    const double h = static_cast<double>(phiA.rows());
    const double w = static_cast<double>(phiB.rows());
    Matrix alpha = Matrix::Constant(hyper.r0, 1, 2.0 * hyper.alpha0_gamma + h + w);
    Matrix beta(hyper.r0, 1);
    for (int i = 0; i < hyper.r0; ++i) {
        beta(i, 0) = 2.0 * hyper.beta0_gamma + phiA.mean.col(i).squaredNorm() +
                     phiA.std.col(i).squaredNorm() + phiB.mean.col(i).squaredNorm() +
                     phiB.std.col(i).squaredNorm();
    }
    return GammaPosterior(std::move(alpha), floored(std::move(beta)));
}

GammaPosterior update_omega(const GaussianFactorPosterior& phiS, const Hyperparams& hyper) {
    phiS.validate();
    hyper.validate();
    Matrix alpha = Matrix::Constant(phiS.rows(), phiS.cols(), 2.0 * hyper.alpha0_omega + 1.0);
    Matrix beta = (2.0 * hyper.beta0_omega + phiS.mean.array().square() +
                   phiS.std.array().square())
                      .matrix();
    return GammaPosterior(std::move(alpha), floored(std::move(beta)));
}

GammaPosterior update_lambda(const Matrix& Y, const std::vector<Matrix>& A_hats,
                             const std::vector<Matrix>& B_hats,
                             const std::vector<Matrix>& S_hats, const Hyperparams& hyper) {
    hyper.validate();
    if (A_hats.empty() || A_hats.size() != B_hats.size() || A_hats.size() != S_hats.size())
        throw InvalidPosterior("update_lambda: inconsistent sample lists");
    Matrix alpha = Matrix::Constant(Y.rows(), Y.cols(), 2.0 * hyper.alpha0_lambda + 1.0);
    Matrix beta =
        (2.0 * hyper.beta0_lambda + mean_sq_residual(Y, A_hats, B_hats, S_hats).array()).matrix();
    return GammaPosterior(std::move(alpha), floored(std::move(beta)));
}

GammaPosterior update_lambda(const Matrix& Y, const Matrix& A_hat, const Matrix& B_hat,
                             const Matrix& S_hat, const Hyperparams& hyper) {
    return update_lambda(Y, std::vector<Matrix>{A_hat}, std::vector<Matrix>{B_hat},
                         std::vector<Matrix>{S_hat}, hyper);
}

LeafState leaf_update_all(const Matrix& Y, const GaussianFactorPosterior& phiA,
                          const GaussianFactorPosterior& phiB,
                          const GaussianFactorPosterior& phiS, const Matrix& A_hat,
                          const Matrix& B_hat, const Matrix& S_hat, const Hyperparams& hyper) {
    LeafState leaf;
    leaf.gamma = update_gamma(phiA, phiB, hyper);
    leaf.omega = update_omega(phiS, hyper);
    leaf.lambda = update_lambda(Y, A_hat, B_hat, S_hat, hyper);
    return leaf;
}

double leaf_objective(const GaussianFactorPosterior& phiA, const GaussianFactorPosterior& phiB,
                      const GaussianFactorPosterior& phiS, const Matrix& Y, const Matrix& A_hat,
                      const Matrix& B_hat, const Matrix& S_hat, const LeafState& leaf,
                      const Hyperparams& hyper) {
    const double h = static_cast<double>(phiA.rows());
    const double w = static_cast<double>(phiB.rows());

    double obj = 0.0;

    // Rank part: 1/2 sum_i [ (|mu_a_i|^2+|sigma_a_i|^2+|mu_b_i|^2+|sigma_b_i|^2) E[gamma_i]
    //                        - (h+w) E[ln gamma_i] ]
    for (Eigen::Index i = 0; i < leaf.gamma.alpha.rows(); ++i) {
        const double a = leaf.gamma.alpha(i, 0);
        const double b = leaf.gamma.beta(i, 0);
        const double n = phiA.mean.col(i).squaredNorm() + phiA.std.col(i).squaredNorm() +
                         phiB.mean.col(i).squaredNorm() + phiB.std.col(i).squaredNorm();
        obj += 0.5 * (n * a / b - (h + w) * (digamma(a) - std::log(b)));
    }

    // Sparsity part: 1/2 sum_ij [ (mu_s^2+sigma_s^2) E[omega] - E[ln omega] ]
    for (Eigen::Index j = 0; j < leaf.omega.alpha.cols(); ++j) {
        for (Eigen::Index i = 0; i < leaf.omega.alpha.rows(); ++i) {
            const double a = leaf.omega.alpha(i, j);
            const double b = leaf.omega.beta(i, j);
            const double m2 = phiS.mean(i, j) * phiS.mean(i, j) + phiS.std(i, j) * phiS.std(i, j);
            obj += 0.5 * (m2 * a / b - (digamma(a) - std::log(b)));
        }
    }

    // Fidelity part with the sampled residual: 1/2 sum_ij [ r^2 E[lambda] - E[ln lambda] ]
    const Matrix resid = Y - (A_hat * B_hat.transpose() + S_hat);
    for (Eigen::Index j = 0; j < leaf.lambda.alpha.cols(); ++j) {
        for (Eigen::Index i = 0; i < leaf.lambda.alpha.rows(); ++i) {
            const double a = leaf.lambda.alpha(i, j);
            const double b = leaf.lambda.beta(i, j);
            const double r2 = resid(i, j) * resid(i, j);
            obj += 0.5 * (r2 * a / b - (digamma(a) - std::log(b)));
        }
    }

    obj += kl_gamma_to_prior(leaf.gamma, hyper.alpha0_gamma, hyper.beta0_gamma);
    obj += kl_gamma_to_prior(leaf.omega, hyper.alpha0_omega, hyper.beta0_omega);
    obj += kl_gamma_to_prior(leaf.lambda, hyper.alpha0_lambda, hyper.beta0_lambda);
    return obj;
}

} // namespace indeed
