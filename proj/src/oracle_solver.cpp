#include "indeed/oracle_solver.hpp"

#include "indeed/special.hpp"

#include <Eigen/SVD>

namespace indeed {

void SolverConfig::validate() const {
    if (outer_iters <= 0 || inner_grad_steps <= 0 || r0 <= 0 || n_samples <= 0)
        throw std::invalid_argument("SolverConfig: iteration/rank counts must be positive");
    if (!(step_size > 0)) throw std::invalid_argument("SolverConfig: step_size must be positive");
    if (!(tol > 0 && tol < 1)) throw std::invalid_argument("SolverConfig: tol must be in (0,1)");
}

namespace {

struct MiddleState {
    Matrix mu_A, log_sig_A, mu_B, log_sig_B, mu_S, log_sig_S;

    Posteriors posteriors() const {
        Posteriors p;
        p.A = GaussianFactorPosterior(mu_A, log_sig_A.array().exp());
        p.B = GaussianFactorPosterior(mu_B, log_sig_B.array().exp());
        p.S = GaussianFactorPosterior(mu_S, log_sig_S.array().exp());
        return p;
    }
};

struct EtaSet {
    std::vector<Matrix> A, B, S;
};

std::vector<Samples> draw_samples(const Posteriors& post, const EtaSet& eta) {
    std::vector<Samples> out(eta.A.size());
    for (size_t s = 0; s < eta.A.size(); ++s) {
        out[s].eta_A = eta.A[s];
        out[s].eta_B = eta.B[s];
        out[s].eta_S = eta.S[s];
        out[s].A_hat = post.A.mean.array() + post.A.std.array() * eta.A[s].array();
        out[s].B_hat = post.B.mean.array() + post.B.std.array() * eta.B[s].array();
        out[s].S_hat = post.S.mean.array() + post.S.std.array() * eta.S[s].array();
    }
    return out;
}

/// Exact expectation of the fidelity term over the factorized posterior:
///   E[ (Y - A B^T - S)^2_ij ] = R_ij^2 + sum_k (sa2 mb2 + ma2 sb2 + sa2 sb2) + ss2
/// with R = Y - mu_A mu_B^T - mu_S. The classical per-image treatment is
/// deterministic; the Monte-Carlo form stays on the network training path.
struct ExactFid {
    double value = 0.0;
    Matrix d_mu_A, d_sig_A, d_mu_B, d_sig_B, d_mu_S, d_sig_S;
};

ExactFid exact_fid(const Matrix& Y, const Posteriors& post, const Matrix& lambda_mu,
                   bool with_grads) {
    const Matrix ma2 = post.A.mean.array().square();
    const Matrix sa2 = post.A.std.array().square();
    const Matrix mb2 = post.B.mean.array().square();
    const Matrix sb2 = post.B.std.array().square();
    const Matrix R = Y - post.A.mean * post.B.mean.transpose() - post.S.mean;

    ExactFid out;
    const Matrix var_L = sa2 * mb2.transpose() + ma2 * sb2.transpose() + sa2 * sb2.transpose();
    out.value = 0.5 * (lambda_mu.array() *
                       (R.array().square() + var_L.array() + post.S.std.array().square()))
                          .sum();
    if (!with_grads) return out;

    const Matrix wR = lambda_mu.cwiseProduct(R);
    out.d_mu_A = -wR * post.B.mean +
                 post.A.mean.cwiseProduct(lambda_mu * sb2);
    out.d_sig_A = post.A.std.cwiseProduct(lambda_mu * (mb2 + sb2));
    out.d_mu_B = -wR.transpose() * post.A.mean +
                 post.B.mean.cwiseProduct(lambda_mu.transpose() * sa2);
    out.d_sig_B = post.B.std.cwiseProduct(lambda_mu.transpose() * (ma2 + sa2));
    out.d_mu_S = -wR;
    out.d_sig_S = lambda_mu.cwiseProduct(post.S.std);
    return out;
}

/// Leaf updates with the exact residual second moment in the lambda update
/// (the infinite-sample limit of the averaged squared residuals).
LeafState leaf_update_exact(const Matrix& Y, const Posteriors& post, const Hyperparams& hyper) {
    LeafState leaf;
    leaf.gamma = update_gamma(post.A, post.B, hyper);
    leaf.omega = update_omega(post.S, hyper);
    const Matrix ma2 = post.A.mean.array().square();
    const Matrix sa2 = post.A.std.array().square();
    const Matrix mb2 = post.B.mean.array().square();
    const Matrix sb2 = post.B.std.array().square();
    const Matrix R = Y - post.A.mean * post.B.mean.transpose() - post.S.mean;
    const Matrix e_r2 = R.array().square().matrix() + sa2 * mb2.transpose() +
                        ma2 * sb2.transpose() + sa2 * sb2.transpose() +
                        post.S.std.array().square().matrix();
    Matrix alpha = Matrix::Constant(Y.rows(), Y.cols(), 2.0 * hyper.alpha0_lambda + 1.0);
    Matrix beta = (2.0 * hyper.beta0_lambda + e_r2.array()).max(1e-30).matrix();
    leaf.lambda = GammaPosterior(std::move(alpha), std::move(beta));
    return leaf;
}

/// Middle-level objective given a fixed leaf: exact fidelity + rank + sparse.
double middle_objective(const Matrix& Y, const Posteriors& post, const LeafState& leaf) {
    const Matrix lambda_mu = gamma_mean(leaf.lambda);
    const Vector gamma_mu = gamma_mean(leaf.gamma).col(0);
    const Matrix omega_mu = gamma_mean(leaf.omega);
    return exact_fid(Y, post, lambda_mu, false).value +
           loss_rank(post.A, post.B, gamma_mu) + loss_sparse(post.S, omega_mu);
}

struct MiddleGradsAccum {
    Matrix d_mu_A, d_lsig_A, d_mu_B, d_lsig_B, d_mu_S, d_lsig_S;
};

/// Gradient of the middle objective in (mu, log-sigma) coordinates.
MiddleGradsAccum middle_gradient(const Matrix& Y, const Posteriors& post,
                                 const LeafState& leaf) {
    const Matrix lambda_mu = gamma_mean(leaf.lambda);
    const Vector gamma_mu = gamma_mean(leaf.gamma).col(0);
    const Matrix omega_mu = gamma_mean(leaf.omega);

    ExactFid fid = exact_fid(Y, post, lambda_mu, true);
    Matrix rma, rsa, rmb, rsb, sms, sss;
    loss_rank_grad(post.A, post.B, gamma_mu, rma, rsa, rmb, rsb);
    loss_sparse_grad(post.S, omega_mu, sms, sss);

    MiddleGradsAccum acc;
    acc.d_mu_A = fid.d_mu_A + rma;
    acc.d_lsig_A = (fid.d_sig_A + rsa).cwiseProduct(post.A.std);
    acc.d_mu_B = fid.d_mu_B + rmb;
    acc.d_lsig_B = (fid.d_sig_B + rsb).cwiseProduct(post.B.std);
    acc.d_mu_S = fid.d_mu_S + sms;
    acc.d_lsig_S = (fid.d_sig_S + sss).cwiseProduct(post.S.std);
    return acc;
}

/// Leaf-only objective terms: -E[ln .] expectations and the prior KLs.
double leaf_log_terms(const LeafState& leaf, const Hyperparams& hyper) {
    const double hw =
        static_cast<double>(leaf.omega.alpha.rows()) + static_cast<double>(leaf.omega.alpha.cols());
    double obj = 0.0;
    for (Eigen::Index i = 0; i < leaf.gamma.alpha.rows(); ++i)
        obj -= 0.5 * hw * (digamma(leaf.gamma.alpha(i, 0)) - std::log(leaf.gamma.beta(i, 0)));
    for (Eigen::Index j = 0; j < leaf.omega.alpha.cols(); ++j)
        for (Eigen::Index i = 0; i < leaf.omega.alpha.rows(); ++i)
            obj -= 0.5 * (digamma(leaf.omega.alpha(i, j)) - std::log(leaf.omega.beta(i, j)));
    for (Eigen::Index j = 0; j < leaf.lambda.alpha.cols(); ++j)
        for (Eigen::Index i = 0; i < leaf.lambda.alpha.rows(); ++i)
            obj -= 0.5 * (digamma(leaf.lambda.alpha(i, j)) - std::log(leaf.lambda.beta(i, j)));
    obj += kl_gamma_to_prior(leaf.gamma, hyper.alpha0_gamma, hyper.beta0_gamma);
    obj += kl_gamma_to_prior(leaf.omega, hyper.alpha0_omega, hyper.beta0_omega);
    obj += kl_gamma_to_prior(leaf.lambda, hyper.alpha0_lambda, hyper.beta0_lambda);
    return obj;
}

MiddleState stepped(const MiddleState& st, const MiddleGradsAccum& g, double step) {
    MiddleState out = st;
    out.mu_A -= step * g.d_mu_A;
    out.log_sig_A -= step * g.d_lsig_A;
    out.mu_B -= step * g.d_mu_B;
    out.log_sig_B -= step * g.d_lsig_B;
    out.mu_S -= step * g.d_mu_S;
    out.log_sig_S -= step * g.d_lsig_S;
    return out;
}

} // namespace

double variational_objective(const Posteriors& post, const std::vector<Samples>& samples,
                             const Matrix& Y, const LeafState& leaf, const Hyperparams& hyper) {
    const Matrix lambda_mu = gamma_mean(leaf.lambda);
    const Vector gamma_mu = gamma_mean(leaf.gamma).col(0);
    const Matrix omega_mu = gamma_mean(leaf.omega);

    double fid = 0.0;
    for (const auto& s : samples) fid += loss_fid(Y, s.A_hat, s.B_hat, s.S_hat, lambda_mu);
    fid /= static_cast<double>(samples.size());

    double obj = fid + loss_rank(post.A, post.B, gamma_mu) + loss_sparse(post.S, omega_mu);

    // E[ln .] expectations dropped by the detached training losses.
    const double hw = static_cast<double>(post.A.rows()) + static_cast<double>(post.B.rows());
    for (Eigen::Index i = 0; i < leaf.gamma.alpha.rows(); ++i)
        obj -= 0.5 * hw *
               (digamma(leaf.gamma.alpha(i, 0)) - std::log(leaf.gamma.beta(i, 0)));
    for (Eigen::Index j = 0; j < leaf.omega.alpha.cols(); ++j)
        for (Eigen::Index i = 0; i < leaf.omega.alpha.rows(); ++i)
            obj -= 0.5 * (digamma(leaf.omega.alpha(i, j)) - std::log(leaf.omega.beta(i, j)));
    for (Eigen::Index j = 0; j < leaf.lambda.alpha.cols(); ++j)
        for (Eigen::Index i = 0; i < leaf.lambda.alpha.rows(); ++i)
            obj -= 0.5 * (digamma(leaf.lambda.alpha(i, j)) - std::log(leaf.lambda.beta(i, j)));

    obj += kl_gamma_to_prior(leaf.gamma, hyper.alpha0_gamma, hyper.beta0_gamma);
    obj += kl_gamma_to_prior(leaf.omega, hyper.alpha0_omega, hyper.beta0_omega);
    obj += kl_gamma_to_prior(leaf.lambda, hyper.alpha0_lambda, hyper.beta0_lambda);
    return obj;
}

SolveReport solve_single_image(const Matrix& Y, const Hyperparams& hyper,
                               const SolverConfig& cfg) {
    cfg.validate();
    hyper.validate();
    const Eigen::Index h = Y.rows(), w = Y.cols();
    if (cfg.r0 > std::min(h, w))
        throw std::invalid_argument("solve_single_image: r0 exceeds min(h, w)");
    Hyperparams hy = hyper;
    hy.r0 = cfg.r0;

    // SVD warm start, singular values split evenly between the factors.
    Eigen::JacobiSVD<Matrix> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
    MiddleState st;
    const Vector sv = svd.singularValues();
    Matrix sqrt_s = Matrix::Zero(cfg.r0, cfg.r0);
    for (int i = 0; i < cfg.r0; ++i) sqrt_s(i, i) = std::sqrt(std::max(0.0, sv(i)));
    st.mu_A = svd.matrixU().leftCols(cfg.r0) * sqrt_s;
    st.mu_B = svd.matrixV().leftCols(cfg.r0) * sqrt_s;
    st.mu_S = Matrix::Zero(h, w);
    const double ls0 = std::log(0.1);
    st.log_sig_A = Matrix::Constant(h, cfg.r0, ls0);
    st.log_sig_B = Matrix::Constant(w, cfg.r0, ls0);
    st.log_sig_S = Matrix::Constant(h, w, ls0);

    SolveReport report;
    double prev_trace = std::numeric_limits<double>::infinity();
    LeafState leaf;
    Posteriors post = st.posteriors();

    for (int outer = 0; outer < cfg.outer_iters; ++outer) {
        // (a) closed-form leaf step
        leaf = leaf_update_exact(Y, post, hy);

        // (b) backtracked gradient steps on the middle-level parameters
        double obj = middle_objective(Y, post, leaf);
        for (int it = 0; it < cfg.inner_grad_steps; ++it) {
            MiddleGradsAccum g = middle_gradient(Y, post, leaf);
            double step = cfg.step_size;
            bool accepted = false;
            for (int bt = 0; bt < 16; ++bt) {
                MiddleState cand = stepped(st, g, step);
                Posteriors cand_post = cand.posteriors();
                const double cand_obj = middle_objective(Y, cand_post, leaf);
                if (std::isfinite(cand_obj) && cand_obj <= obj) {
                    st = std::move(cand);
                    post = std::move(cand_post);
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break; // at numerical stationarity for this leaf
        }

        // exact objective plus the E[ln .] and prior-KL leaf terms
        double tr = middle_objective(Y, post, leaf) + leaf_log_terms(leaf, hy);
        if (!std::isfinite(tr)) throw SolverDiverged("solve_single_image: non-finite objective");
        report.trace.push_back(tr);
        report.iters_run = outer + 1;
        if (outer > 0 && std::abs(prev_trace - tr) <= cfg.tol * (1.0 + std::abs(prev_trace)))
            break;
        prev_trace = tr;
    }

    // Final leaf refresh and result assembly with seeded reporting draws.
    Rng rng(Rng::mix(cfg.seed, 0x5eedULL));
    EtaSet eta;
    for (int s = 0; s < std::max(1, cfg.n_samples); ++s) {
        if (s % 2 == 1) {
            eta.A.push_back(-eta.A.back());
            eta.B.push_back(-eta.B.back());
            eta.S.push_back(-eta.S.back());
        } else {
            eta.A.push_back(rng.normal_matrix(h, cfg.r0));
            eta.B.push_back(rng.normal_matrix(w, cfg.r0));
            eta.S.push_back(rng.normal_matrix(h, w));
        }
    }
    std::vector<Samples> samples = draw_samples(post, eta);
    {
        std::vector<Matrix> As, Bs, Ss;
        for (const auto& s : samples) {
            As.push_back(s.A_hat);
            Bs.push_back(s.B_hat);
            Ss.push_back(s.S_hat);
        }
        leaf.gamma = update_gamma(post.A, post.B, hy);
        leaf.omega = update_omega(post.S, hy);
        leaf.lambda = update_lambda(Y, As, Bs, Ss, hy);
    }
    ChannelDecomposition cd;
    cd.post = post;
    cd.samples = samples.front();
    cd.L_hat = cd.samples.A_hat * cd.samples.B_hat.transpose();
    cd.N_hat = Y - cd.L_hat - cd.samples.S_hat;
    cd.leaf = leaf;
    report.result.seed = cfg.seed;
    report.result.losses = loss_total(Y, nullptr, post, cd.samples, leaf, hy);
    report.result.channels.push_back(std::move(cd));
    return report;
}

SolveReport solve_single_image(const ImageTensor& Y, const Hyperparams& hyper,
                               const SolverConfig& cfg) {
    if (Y.num_channels() != 1)
        throw std::invalid_argument("solve_single_image: expected a single-channel image");
    return solve_single_image(Y.ch(0), hyper, cfg);
}

SyntheticLrs generate_synthetic_lrs(int h, int w, int true_rank, double sparse_density,
                                    double noise_sigma, std::uint64_t seed) {
    if (true_rank < 0 || true_rank > std::min(h, w))
        throw std::invalid_argument("generate_synthetic_lrs: invalid true_rank");
    if (sparse_density < 0.0 || sparse_density > 1.0)
        throw std::invalid_argument("generate_synthetic_lrs: density must be in [0,1]");
    if (noise_sigma < 0.0)
        throw std::invalid_argument("generate_synthetic_lrs: noise_sigma must be >= 0");

    Rng rng(seed);
    SyntheticLrs out;

    // Orthonormal factors with a flat-amplitude DC carrier and a controlled
    // spectrum: rank is exact and no singular value is vanishingly small.
    out.L_true = Matrix::Zero(h, w);
    if (true_rank > 0) {
        // Flat-amplitude basis: a DC carrier plus sign-balanced vectors, so the
        // trailing singular values stay strong after amplitude budgeting.
        auto orthonormal_with_dc = [&](int n, int r) {
            Matrix U(n, r);
            U.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(n)));
            for (int k = 1; k < r; ++k) {
                Vector v(n);
                for (int i = 0; i < n; ++i) v(i) = (i < n / 2) ? 1.0 : -1.0;
                for (int i = n - 1; i > 0; --i)
                    std::swap(v(i), v(static_cast<Eigen::Index>(rng.below(i + 1))));
                for (int p = 0; p < k; ++p) v -= U.col(p).dot(v) * U.col(p);
                U.col(k) = v / v.norm();
            }
            return U;
        };
        const Matrix U = orthonormal_with_dc(h, true_rank);
        const Matrix V = orthonormal_with_dc(w, true_rank);
        const double dc = 0.48 + 0.04 * rng.uniform();
        out.L_true = dc * std::sqrt(static_cast<double>(h) * w) * U.col(0) * V.col(0).transpose();
        if (true_rank > 1) {
            Matrix dev = Matrix::Zero(h, w);
            for (int k = 1; k < true_rank; ++k)
                dev += rng.uniform(0.7, 1.0) * U.col(k) * V.col(k).transpose();
            dev *= 0.45 / dev.cwiseAbs().maxCoeff();
            out.L_true += dev;
        }
    }

    out.S_true = Matrix::Zero(h, w);
    const auto n_spikes =
        static_cast<std::int64_t>(std::llround(sparse_density * static_cast<double>(h) * w));
    if (n_spikes > 0) {
        // uniform positions without replacement
        std::vector<std::int64_t> idx(static_cast<size_t>(h) * w);
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
        for (std::int64_t k = 0; k < n_spikes; ++k) {
            const auto j = k + static_cast<std::int64_t>(rng.below(idx.size() - k));
            std::swap(idx[k], idx[j]);
            const auto flat = idx[k];
            const double mag = 0.2 + 0.6 * rng.uniform();
            out.S_true(flat / w, flat % w) = rng.uniform() < 0.5 ? -mag : mag;
        }
    }

    out.N_true = Matrix::Zero(h, w);
    if (noise_sigma > 0) out.N_true = noise_sigma * rng.normal_matrix(h, w);

    out.Y = out.L_true + out.S_true + out.N_true;
    return out;
}

} // namespace indeed
