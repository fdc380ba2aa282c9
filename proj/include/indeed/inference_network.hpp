#pragma once

#include "indeed/elbo_losses.hpp"
#include "indeed/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>

namespace indeed {

struct ModelConfig {
    int depth = 8;       // residual blocks per trunk
    int kernel = 3;      // odd
    int channels = 32;
    int groups = 8;      // group-normalization groups
    int r0 = 8;
    int in_channels = 1; // images are decomposed one channel at a time

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// Paper-scale preset: depth 35, kernel 3, r0 64.
ModelConfig paper_preset();

/// Factor sub-network: residual trunk on the image, mean-pooled along one
/// axis to per-row (or per-column) features, then a linear head emitting
/// [mu | log-std] of width 2*r0.
struct FactorNet {
    nn::Trunk trunk;
    nn::Linear head;
    bool pool_width = true; // true: h x 2r0 (left factor), false: w x 2r0 (right factor)
};

/// Sparse sub-network: residual trunk on the low-rank residual, convolutional
/// head emitting two channels [mu_S | log-std_S].
struct SparseNet {
    nn::Trunk trunk;
    nn::Conv2d head;
};

struct Model {
    FactorNet netA;
    FactorNet netB;
    SparseNet netS;
    ModelConfig config;
    int version = 1;
};

/// Deterministic initialization; the three sub-networks draw from independent
/// streams derived from the seed.
Model build_model(const ModelConfig& config, std::uint64_t seed);

std::size_t param_count(const Model& model);

/// Visit every parameter matrix with a stable name, in a fixed order.
void visit_params(Model& model, const std::function<void(const std::string&, Matrix&)>& fn);
void visit_params(const Model& model,
                  const std::function<void(const std::string&, const Matrix&)>& fn);

// --- forward passes ---------------------------------------------------------

struct FactorCache {
    nn::TrunkCache trunk;
    Matrix pooled;   // n x channels
    Matrix head_out; // n x 2r0
};

struct SparseCache {
    nn::TrunkCache trunk;
    nn::ConvCache head;
    Matrix head_out; // 2 x (h*w)
};

GaussianFactorPosterior forward_factor(const FactorNet& net, const ModelConfig& cfg,
                                       const Matrix& img, FactorCache* cache = nullptr);
GaussianFactorPosterior forward_sparse_net(const SparseNet& net, const ModelConfig& cfg,
                                           const Matrix& residual, SparseCache* cache = nullptr);

/// phi_A, phi_B for one channel.
std::pair<GaussianFactorPosterior, GaussianFactorPosterior>
forward_low_rank(const Model& model, const Matrix& img);

/// phi_S from the low-rank residual for one channel.
GaussianFactorPosterior forward_sparse(const Model& model, const Matrix& residual);

// --- backward passes (training) ---------------------------------------------

struct ModelGrads {
    nn::Trunk netA_trunk, netB_trunk, netS_trunk;
    nn::Linear netA_head, netB_head;
    nn::Conv2d netS_head;
};
ModelGrads zero_grads(const Model& model);

void backward_factor(const FactorNet& net, const ModelConfig& cfg, const FactorCache& cache,
                     const Matrix& d_mu, const Matrix& d_sig, nn::Trunk& g_trunk,
                     nn::Linear& g_head);
void backward_sparse_net(const SparseNet& net, const ModelConfig& cfg, const SparseCache& cache,
                         const Matrix& d_mu, const Matrix& d_sig, nn::Trunk& g_trunk,
                         nn::Conv2d& g_head, Matrix* d_residual);

// --- decomposition ----------------------------------------------------------

/// Everything inferred for one channel.
struct ChannelDecomposition {
    Posteriors post;
    Samples samples;
    Matrix L_hat; // A_hat * B_hat^T
    Matrix N_hat; // Y - L_hat - S_hat, exact by construction
    LeafState leaf;
};

struct DecompositionResult {
    std::vector<ChannelDecomposition> channels;
    LossBreakdown losses; // summed over channels, no supervision term
    std::uint64_t seed = 0;

    const ChannelDecomposition& ch(int c = 0) const { return channels.at(static_cast<size_t>(c)); }
};

/// Forward the full pipeline: low-rank posteriors, factor draws, sparse
/// posterior on the residual, noise by subtraction, leaf updates, losses.
DecompositionResult decompose(const Model& model, const ImageTensor& Y, const Hyperparams& hyper,
                              std::uint64_t seed);

// --- checkpoints -------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

} // namespace indeed
