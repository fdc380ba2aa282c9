#pragma once

#include "indeed/inference_network.hpp"

namespace indeed {

struct SolverConfig {
    int outer_iters = 50;
    int inner_grad_steps = 25;
    double step_size = 1e-2; // initial trial step; each step backtracks on increase
    int r0 = 8;
    std::uint64_t seed = 0;
    double tol = 1e-6;  // relative trace-change stopping threshold
    int n_samples = 8;  // fixed reparameterization draws shared by gradients, leaf
                        // updates and the recorded trace

    void validate() const;
};

struct SolveReport {
    DecompositionResult result;
    std::vector<double> trace; // multi-sample objective after each outer iteration
    int iters_run = 0;
};

/// Per-image variational inference with no network: alternates backtracked
/// gradient descent on the middle-level parameters with the closed-form leaf
/// updates. The recorded trace is the full negative-ELBO restriction evaluated
/// on the fixed sample set.
SolveReport solve_single_image(const Matrix& Y, const Hyperparams& hyper,
                               const SolverConfig& cfg);
SolveReport solve_single_image(const ImageTensor& Y, const Hyperparams& hyper,
                               const SolverConfig& cfg);

/// Full per-image variational objective (negative ELBO up to data-independent
/// constants): MC fidelity + rank + sparsity terms, their E[ln .] expectations,
/// and the three prior KLs. The quantity the solver alternation descends.
double variational_objective(const Posteriors& post, const std::vector<Samples>& samples,
                             const Matrix& Y, const LeafState& leaf, const Hyperparams& hyper);

/// Synthetic low-rank + sparse + noise instance with exact ground truth parts.
struct SyntheticLrs {
    Matrix Y, L_true, S_true, N_true;
};
SyntheticLrs generate_synthetic_lrs(int h, int w, int true_rank, double sparse_density,
                                    double noise_sigma, std::uint64_t seed);

} // namespace indeed
