#pragma once

#include "indeed/tasks_metrics.hpp"

#include <filesystem>

namespace indeed {

struct TrainConfig {
    int epochs = 80;
    int batch_size = 8;
    double lr = 1e-4;
    double lr_decay_factor = 0.5;
    int lr_decay_every = 25; // epochs
    Task task = Task::DEN;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class AdaptMode { S, L, LS };

struct AdaptConfig {
    AdaptMode mode = AdaptMode::S;
    double lr = 1e-6;
    int batch_size = 1;
    int max_steps = 20;
    int patience = 2;

    void validate() const;
};

struct TrainHistory {
    std::vector<LossBreakdown> epoch_means;
};

struct AdaptHistory {
    std::vector<double> objective; // per-step batch objective
    int steps_run = 0;
    bool early_stopped = false;
};

/// Minimize the task objective over the network parameters. The leaf state of
/// every example is recomputed per forward pass and enters the loss as a
/// constant. Optimizer: Adam with stepwise-decayed learning rate.
TrainHistory train(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                   const Hyperparams& hyper);

/// Unsupervised test-time adaptation on selected modules:
///   S  : minimize fid + sparse over the sparse module
///   L  : minimize fid + rank over both factor modules
///   LS : minimize fid + rank + sparse over all three
/// Frozen modules are never written. Stops early after `patience` consecutive
/// steps without improvement.
AdaptHistory adapt(Model& model, const std::vector<ImageTensor>& ood_images,
                   const AdaptConfig& cfg, const Hyperparams& hyper);

/// Clone, adapt on the single image, then decompose with the adapted clone.
/// The input model is not modified.
std::pair<DecompositionResult, Model> adapt_online(const Model& model, const ImageTensor& Y,
                                                   const AdaptConfig& cfg,
                                                   const Hyperparams& hyper,
                                                   std::uint64_t seed = 0);

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

} // namespace indeed
