#pragma once

#include "indeed/elbo_losses.hpp"
#include "indeed/rng.hpp"

#include <cstring>
#include <functional>

namespace indeed::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                            double hi = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    return m;
}

inline GaussianFactorPosterior random_posterior(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    return GaussianFactorPosterior(random_matrix(rng, rows, cols),
                                   random_matrix(rng, rows, cols, 0.3, 1.5));
}

/// Central finite difference of f at x, step h, one matrix argument.
inline Matrix finite_diff(const std::function<double(const Matrix&)>& f, const Matrix& x,
                          double h = 1e-5) {
    Matrix g(x.rows(), x.cols());
    Matrix xp = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const double orig = xp(i, j);
            xp(i, j) = orig + h;
            const double fp = f(xp);
            xp(i, j) = orig - h;
            const double fm = f(xp);
            xp(i, j) = orig;
            g(i, j) = (fp - fm) / (2.0 * h);
        }
    return g;
}

/// Max relative disagreement between analytic and FD gradients.
inline double grad_rel_err(const Matrix& analytic, const Matrix& fd) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < analytic.rows(); ++i)
        for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
            const double a = analytic(i, j), b = fd(i, j);
            const double denom = std::max({1.0, std::abs(a), std::abs(b)});
            worst = std::max(worst, std::abs(a - b) / denom);
        }
    return worst;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

inline Samples make_samples(const Posteriors& post, Rng& rng) {
    Samples s;
    s.eta_A = rng.normal_matrix(post.A.rows(), post.A.cols());
    s.eta_B = rng.normal_matrix(post.B.rows(), post.B.cols());
    s.eta_S = rng.normal_matrix(post.S.rows(), post.S.cols());
    s.A_hat = post.A.mean.array() + post.A.std.array() * s.eta_A.array();
    s.B_hat = post.B.mean.array() + post.B.std.array() * s.eta_B.array();
    s.S_hat = post.S.mean.array() + post.S.std.array() * s.eta_S.array();
    return s;
}

inline Samples resample_with_eta(const Posteriors& post, const Samples& base) {
    Samples s = base;
    s.A_hat = post.A.mean.array() + post.A.std.array() * base.eta_A.array();
    s.B_hat = post.B.mean.array() + post.B.std.array() * base.eta_B.array();
    s.S_hat = post.S.mean.array() + post.S.std.array() * base.eta_S.array();
    return s;
}

} // namespace indeed::testing
