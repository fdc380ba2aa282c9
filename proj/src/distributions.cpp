#include "indeed/distributions.hpp"

#include "indeed/special.hpp"

namespace indeed {

GaussianFactorPosterior::GaussianFactorPosterior(Matrix mean_, Matrix std_)
    : mean(std::move(mean_)), std(std::move(std_)) {
    validate();
}

void GaussianFactorPosterior::validate() const {
    if (mean.rows() != std.rows() || mean.cols() != std.cols())
        throw InvalidPosterior("GaussianFactorPosterior: mean/std shape mismatch");
    if (!mean.allFinite() || !std.allFinite())
        throw InvalidPosterior("GaussianFactorPosterior: non-finite entries");
    if ((std.array() < 0.0).any())
        throw InvalidPosterior("GaussianFactorPosterior: negative std");
}

GammaPosterior::GammaPosterior(Matrix alpha_, Matrix beta_)
    : alpha(std::move(alpha_)), beta(std::move(beta_)) {
    validate();
}

void GammaPosterior::validate() const {
    if (alpha.rows() != beta.rows() || alpha.cols() != beta.cols())
        throw InvalidPosterior("GammaPosterior: alpha/beta shape mismatch");
    if (!alpha.allFinite() || !beta.allFinite())
        throw InvalidPosterior("GammaPosterior: non-finite parameters");
    if ((alpha.array() <= 0.0).any() || (beta.array() <= 0.0).any())
        throw InvalidPosterior("GammaPosterior: parameters must be positive");
}

void Hyperparams::validate() const {
    if (!(alpha0_gamma > 0 && beta0_gamma > 0 && alpha0_omega > 0 && beta0_omega > 0 &&
          alpha0_lambda > 0 && beta0_lambda > 0))
        throw InvalidPosterior("Hyperparams: prior constants must be positive");
    if (r0 <= 0) throw InvalidPosterior("Hyperparams: r0 must be positive");
    if (tau < 0) throw InvalidPosterior("Hyperparams: tau must be nonnegative");
    if (!(sigma0 > 0)) throw InvalidPosterior("Hyperparams: sigma0 must be positive");
}

Matrix gamma_mean(const GammaPosterior& post) {
    post.validate();
    Matrix m = post.alpha.array() / post.beta.array();
    if (!m.allFinite()) throw InvalidPosterior("gamma_mean: non-finite mean");
    return m;
}

Matrix sample_factor(const GaussianFactorPosterior& post, std::uint64_t seed) {
    Rng rng(seed);
    return sample_factor(post, rng);
}

Matrix sample_factor(const GaussianFactorPosterior& post, Rng& rng, Matrix* eta_out) {
    post.validate();
    Matrix eta = rng.normal_matrix(post.rows(), post.cols());
    Matrix draw = post.mean.array() + post.std.array() * eta.array();
    if (eta_out) *eta_out = std::move(eta);
    return draw;
}

LowRankMoments low_rank_moments(const GaussianFactorPosterior& phiA,
                                const GaussianFactorPosterior& phiB) {
    phiA.validate();
    phiB.validate();
    if (phiA.cols() != phiB.cols())
        throw InvalidPosterior("low_rank_moments: rank mismatch between factors");

    const Matrix sa2 = phiA.std.array().square();
    const Matrix sb2 = phiB.std.array().square();
    const Matrix ones_a = Matrix::Ones(phiA.rows(), phiA.cols());
    const Matrix ones_b = Matrix::Ones(phiB.rows(), phiB.cols());

    Matrix denom = sa2 * ones_b.transpose() + ones_a * sb2.transpose();
    if ((denom.array() <= 0.0).any())
        throw InvalidPosterior("low_rank_moments: degenerate variance (zero denominator)");

    LowRankMoments out;
    out.mu_L = ((phiA.mean * sb2.transpose() + sa2 * phiB.mean.transpose()).array() /
                denom.array())
                   .matrix();
    out.var_L = ((sa2 * sb2.transpose()).array() / denom.array()).matrix();
    return out;
}

double kl_gamma_to_prior(const GammaPosterior& post, double alpha0, double beta0) {
    post.validate();
    if (!(alpha0 > 0.0) || !(beta0 > 0.0))
        throw InvalidPosterior("kl_gamma_to_prior: prior parameters must be positive");
    double kl = 0.0;
    for (Eigen::Index j = 0; j < post.alpha.cols(); ++j) {
        for (Eigen::Index i = 0; i < post.alpha.rows(); ++i) {
            const double a = post.alpha(i, j);
            const double b = post.beta(i, j);
            kl += (a - alpha0) * digamma(a) - log_gamma(a) + log_gamma(alpha0) +
                  alpha0 * (std::log(b) - std::log(beta0)) + a * (beta0 - b) / b;
        }
    }
    return kl;
}

} // namespace indeed
