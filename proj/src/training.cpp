#include "indeed/training.hpp"

#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace indeed {

void TrainConfig::validate() const {
    if (epochs <= 0 || batch_size <= 0 || lr_decay_every <= 0)
        throw std::invalid_argument("TrainConfig: counts must be positive");
    if (lr < 0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
        throw std::invalid_argument("TrainConfig: lr_decay_factor must be in (0,1]");
}

void AdaptConfig::validate() const {
    if (!(lr >= 0)) throw std::invalid_argument("AdaptConfig: lr must be >= 0");
    if (batch_size <= 0) throw std::invalid_argument("AdaptConfig: batch_size must be positive");
    if (max_steps < 0) throw std::invalid_argument("AdaptConfig: max_steps must be >= 0");
    if (patience <= 0) throw std::invalid_argument("AdaptConfig: patience must be positive");
}

namespace {

enum ModuleMask : unsigned { kTrainA = 1, kTrainB = 2, kTrainS = 4, kTrainAll = 7 };

struct TermFlags {
    bool sup = false;
    bool rank = true;
    bool sparse = true;
    bool orth = false;
};

/// Walk parameters and their gradient buffers in lockstep; tag carries the
/// owning module (kTrainA/B/S).
template <class Fn>
void visit_pairs(Model& m, ModelGrads& g, Fn&& fn) {
    auto trunk = [&](nn::Trunk& t, nn::Trunk& tg, unsigned tag) {
        fn(tag, t.stem.W, tg.stem.W);
        fn(tag, t.stem.b, tg.stem.b);
        fn(tag, t.stem_gn.gamma, tg.stem_gn.gamma);
        fn(tag, t.stem_gn.beta, tg.stem_gn.beta);
        for (size_t i = 0; i < t.blocks.size(); ++i) {
            fn(tag, t.blocks[i].conv.W, tg.blocks[i].conv.W);
            fn(tag, t.blocks[i].conv.b, tg.blocks[i].conv.b);
            fn(tag, t.blocks[i].gn.gamma, tg.blocks[i].gn.gamma);
            fn(tag, t.blocks[i].gn.beta, tg.blocks[i].gn.beta);
        }
    };
    trunk(m.netA.trunk, g.netA_trunk, kTrainA);
    fn(kTrainA, m.netA.head.W, g.netA_head.W);
    fn(kTrainA, m.netA.head.b, g.netA_head.b);
    trunk(m.netB.trunk, g.netB_trunk, kTrainB);
    fn(kTrainB, m.netB.head.W, g.netB_head.W);
    fn(kTrainB, m.netB.head.b, g.netB_head.b);
    trunk(m.netS.trunk, g.netS_trunk, kTrainS);
    fn(kTrainS, m.netS.head.W, g.netS_head.W);
    fn(kTrainS, m.netS.head.b, g.netS_head.b);
}

void accumulate_grads(ModelGrads& into, const ModelGrads& from) {
    auto add_trunk = [](nn::Trunk& a, const nn::Trunk& b) {
        a.stem.W += b.stem.W;
        a.stem.b += b.stem.b;
        a.stem_gn.gamma += b.stem_gn.gamma;
        a.stem_gn.beta += b.stem_gn.beta;
        for (size_t i = 0; i < a.blocks.size(); ++i) {
            a.blocks[i].conv.W += b.blocks[i].conv.W;
            a.blocks[i].conv.b += b.blocks[i].conv.b;
            a.blocks[i].gn.gamma += b.blocks[i].gn.gamma;
            a.blocks[i].gn.beta += b.blocks[i].gn.beta;
        }
    };
    add_trunk(into.netA_trunk, from.netA_trunk);
    add_trunk(into.netB_trunk, from.netB_trunk);
    add_trunk(into.netS_trunk, from.netS_trunk);
    into.netA_head.W += from.netA_head.W;
    into.netA_head.b += from.netA_head.b;
    into.netB_head.W += from.netB_head.W;
    into.netB_head.b += from.netB_head.b;
    into.netS_head.W += from.netS_head.W;
    into.netS_head.b += from.netS_head.b;
}

class Adam {
public:
    Adam(Model& model, ModelGrads& grads, unsigned mask) : mask_(mask) {
        visit_pairs(model, grads, [&](unsigned tag, Matrix& p, Matrix&) {
            if (!(tag & mask_)) return;
            m_.push_back(Matrix::Zero(p.rows(), p.cols()));
            v_.push_back(Matrix::Zero(p.rows(), p.cols()));
        });
    }

    void step(Model& model, ModelGrads& grads, double lr) {
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, t_);
        const double c2 = 1.0 - std::pow(b2, t_);
        size_t idx = 0;
        visit_pairs(model, grads, [&](unsigned tag, Matrix& p, Matrix& g) {
            if (!(tag & mask_)) return;
            Matrix& m = m_[idx];
            Matrix& v = v_[idx];
            ++idx;
            m = b1 * m + (1.0 - b1) * g;
            v = (b2 * v.array() + (1.0 - b2) * g.array().square()).matrix();
            p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        });
    }

private:
    unsigned mask_;
    std::vector<Matrix> m_, v_;
    int t_ = 0;
};

struct ItemOutcome {
    LossBreakdown lb;     // all term values, for reporting
    double objective = 0; // the differentiated subset
};

/// Forward + backward for one single-channel example. `grads` may be null for
/// evaluation only. Modules outside `mask` are read but never written; the
/// sparse trunk is still traversed backwards when factor modules need the
/// residual-path gradient.
ItemOutcome process_item(const Model& model, const Matrix& Y, const SupervisionTarget* target,
                         const Hyperparams& hyper, const TermFlags& flags, unsigned mask,
                         std::uint64_t sample_seed, ModelGrads* grads) {
    Rng rng(sample_seed);
    const ModelConfig& cfg = model.config;

    FactorCache cacheA, cacheB;
    SparseCache cacheS;
    Posteriors post;
    post.A = forward_factor(model.netA, cfg, Y, &cacheA);
    post.B = forward_factor(model.netB, cfg, Y, &cacheB);
    Samples s;
    s.A_hat = sample_factor(post.A, rng, &s.eta_A);
    s.B_hat = sample_factor(post.B, rng, &s.eta_B);
    const Matrix residual = Y - s.A_hat * s.B_hat.transpose();
    post.S = forward_sparse_net(model.netS, cfg, residual, &cacheS);
    s.S_hat = sample_factor(post.S, rng, &s.eta_S);

    const LeafState leaf = leaf_update_all(Y, post.A, post.B, post.S, s.A_hat, s.B_hat, s.S_hat,
                                           hyper);

    const Matrix lambda_mu = gamma_mean(leaf.lambda);
    const Matrix omega_mu = gamma_mean(leaf.omega);
    const Vector gamma_mu = gamma_mean(leaf.gamma).col(0);

    ItemOutcome out;
    Matrix dA = Matrix::Zero(s.A_hat.rows(), s.A_hat.cols());
    Matrix dB = Matrix::Zero(s.B_hat.rows(), s.B_hat.cols());
    Matrix dS = Matrix::Zero(s.S_hat.rows(), s.S_hat.cols());
    Matrix d_mu_A = Matrix::Zero(dA.rows(), dA.cols()), d_sig_A = d_mu_A;
    Matrix d_mu_B = Matrix::Zero(dB.rows(), dB.cols()), d_sig_B = d_mu_B;
    Matrix d_mu_S = Matrix::Zero(dS.rows(), dS.cols()), d_sig_S = d_mu_S;

    if (grads) {
        Matrix ta, tb, ts;
        out.lb.fid = loss_fid_grad(Y, s.A_hat, s.B_hat, s.S_hat, lambda_mu, ta, tb, ts);
        dA += ta;
        dB += tb;
        dS += ts;
        Matrix rma, rsa, rmb, rsb;
        out.lb.rank = loss_rank_grad(post.A, post.B, gamma_mu, rma, rsa, rmb, rsb);
        if (flags.rank) {
            d_mu_A += rma;
            d_sig_A += rsa;
            d_mu_B += rmb;
            d_sig_B += rsb;
        }
        Matrix sms, sss;
        out.lb.sparse = loss_sparse_grad(post.S, omega_mu, sms, sss);
        if (flags.sparse) {
            d_mu_S += sms;
            d_sig_S += sss;
        }
        out.lb.orth = loss_orth_grad(s.A_hat, s.B_hat, ta, tb);
        if (flags.orth && hyper.tau != 0.0) {
            dA += hyper.tau * ta;
            dB += hyper.tau * tb;
        }
        if (flags.sup && target) {
            const Matrix L_hat = s.A_hat * s.B_hat.transpose();
            Matrix dL, dSsup;
            out.lb.sup = target->task == Task::DEN
                             ? loss_sup_den_grad(L_hat, s.S_hat, target->U, hyper.sigma0, dL,
                                                 dSsup)
                             : loss_sup_uad_grad(L_hat, s.S_hat, target->U_N, target->U_A,
                                                 hyper.sigma0, dL, dSsup);
            dA += dL * s.B_hat;
            dB += dL.transpose() * s.A_hat;
            dS += dSsup;
        }
    } else {
        out.lb.fid = loss_fid(Y, s.A_hat, s.B_hat, s.S_hat, lambda_mu);
        out.lb.rank = loss_rank(post.A, post.B, gamma_mu);
        out.lb.sparse = loss_sparse(post.S, omega_mu);
        out.lb.orth = loss_orth(s.A_hat, s.B_hat);
        if (flags.sup && target) {
            const Matrix L_hat = s.A_hat * s.B_hat.transpose();
            out.lb.sup = target->task == Task::DEN
                             ? loss_sup_den(L_hat, s.S_hat, target->U, hyper.sigma0)
                             : loss_sup_uad(L_hat, s.S_hat, target->U_N, target->U_A,
                                            hyper.sigma0);
        }
    }

    out.lb.total = out.lb.fid + out.lb.sup + out.lb.rank + out.lb.sparse +
                   hyper.tau * out.lb.orth;
    out.objective = out.lb.fid + (flags.rank ? out.lb.rank : 0.0) +
                    (flags.sparse ? out.lb.sparse : 0.0) +
                    (flags.orth ? hyper.tau * out.lb.orth : 0.0) +
                    (flags.sup && target ? out.lb.sup : 0.0);

    if (!grads) return out;

    // reparameterization chain for the fid/orth/sup sample gradients
    d_mu_A += dA;
    d_sig_A += dA.cwiseProduct(s.eta_A);
    d_mu_B += dB;
    d_sig_B += dB.cwiseProduct(s.eta_B);
    d_mu_S += dS;
    d_sig_S += dS.cwiseProduct(s.eta_S);

    const bool need_dR = (mask & (kTrainA | kTrainB)) != 0;
    if ((mask & kTrainS) || need_dR) {
        Matrix dR;
        if (mask & kTrainS) {
            backward_sparse_net(model.netS, cfg, cacheS, d_mu_S, d_sig_S, grads->netS_trunk,
                                grads->netS_head, need_dR ? &dR : nullptr);
        } else {
            // frozen sparse module: traverse for the input gradient only
            nn::Trunk scratch_trunk = nn::zeros_like(model.netS.trunk);
            nn::Conv2d scratch_head = nn::zeros_like(model.netS.head);
            backward_sparse_net(model.netS, cfg, cacheS, d_mu_S, d_sig_S, scratch_trunk,
                                scratch_head, &dR);
        }
        if (need_dR) {
            // residual = Y - A_hat B_hat^T
            const Matrix dA_extra = -dR * s.B_hat;
            const Matrix dB_extra = -dR.transpose() * s.A_hat;
            d_mu_A += dA_extra;
            d_sig_A += dA_extra.cwiseProduct(s.eta_A);
            d_mu_B += dB_extra;
            d_sig_B += dB_extra.cwiseProduct(s.eta_B);
        }
    }
    if (mask & kTrainA)
        backward_factor(model.netA, cfg, cacheA, d_mu_A, d_sig_A, grads->netA_trunk,
                        grads->netA_head);
    if (mask & kTrainB)
        backward_factor(model.netB, cfg, cacheB, d_mu_B, d_sig_B, grads->netB_trunk,
                        grads->netB_head);
    return out;
}

void add_breakdown(LossBreakdown& a, const LossBreakdown& b) {
    a.fid += b.fid;
    a.rank += b.rank;
    a.sparse += b.sparse;
    a.orth += b.orth;
    a.sup += b.sup;
    a.total += b.total;
    a.l_gamma += b.l_gamma;
    a.l_omega += b.l_omega;
    a.l_lambda += b.l_lambda;
}

void scale_breakdown(LossBreakdown& a, double s) {
    a.fid *= s;
    a.rank *= s;
    a.sparse *= s;
    a.orth *= s;
    a.sup *= s;
    a.total *= s;
    a.l_gamma *= s;
    a.l_omega *= s;
    a.l_lambda *= s;
}

void scale_grads(ModelGrads& g, Model& shape_model, double s) {
    visit_pairs(shape_model, g, [&](unsigned, Matrix&, Matrix& gm) { gm *= s; });
}

const Matrix& single_channel(const ImageTensor& t, const char* who) {
    if (t.num_channels() != 1)
        throw std::invalid_argument(std::string(who) + ": expected single-channel images");
    return t.ch(0);
}

} // namespace

TrainHistory train(Model& model, const Dataset& dataset, const TrainConfig& cfg,
                   const Hyperparams& hyper) {
    cfg.validate();
    hyper.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    for (const auto& s : dataset)
        if (s.target.task != cfg.task)
            throw std::invalid_argument("train: dataset task does not match config task");

    const TermFlags flags{.sup = true, .rank = true, .sparse = true, .orth = true};
    ModelGrads grads = zero_grads(model);
    Adam adam(model, grads, kTrainAll);
    TrainHistory history;

    const size_t n = dataset.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(Rng::mix(cfg.seed, 0x51afULL));
    std::vector<ModelGrads> item_grads;
    std::vector<ItemOutcome> item_out(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) item_grads.push_back(zero_grads(model));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates from the seeded stream
        for (size_t i = n; i > 1; --i) {
            const size_t j = shuffle_rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        const double lr_now =
            cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);

        LossBreakdown epoch_acc;
        for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
            const size_t bs = std::min<size_t>(cfg.batch_size, n - start);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (std::int64_t b = 0; b < static_cast<std::int64_t>(bs); ++b) {
                const size_t di = order[start + static_cast<size_t>(b)];
                const auto& sample = dataset[di];
                const std::uint64_t sample_seed =
                    Rng::mix(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) | di);
                ModelGrads& ig = item_grads[static_cast<size_t>(b)];
                ig = zero_grads(model);
                item_out[static_cast<size_t>(b)] =
                    process_item(model, single_channel(sample.Y, "train"), &sample.target, hyper,
                                 flags, kTrainAll, sample_seed, &ig);
            }
            LossBreakdown batch_acc;
            ModelGrads batch_grads = zero_grads(model);
            for (size_t b = 0; b < bs; ++b) {
                add_breakdown(batch_acc, item_out[b].lb);
                accumulate_grads(batch_grads, item_grads[b]);
            }
            if (!std::isfinite(batch_acc.total))
                throw SolverDiverged("train: non-finite loss at epoch " + std::to_string(epoch));
            scale_grads(batch_grads, model, 1.0 / static_cast<double>(bs));
            adam.step(model, batch_grads, lr_now);
            add_breakdown(epoch_acc, batch_acc);
        }
        scale_breakdown(epoch_acc, 1.0 / static_cast<double>(n));
        history.epoch_means.push_back(epoch_acc);
    }
    return history;
}

AdaptHistory adapt(Model& model, const std::vector<ImageTensor>& ood_images,
                   const AdaptConfig& cfg, const Hyperparams& hyper) {
    cfg.validate();
    hyper.validate();
    if (ood_images.empty()) throw std::invalid_argument("adapt: empty dataset");

    TermFlags flags;
    unsigned mask = 0;
    switch (cfg.mode) {
        case AdaptMode::S:
            flags = {.sup = false, .rank = false, .sparse = true, .orth = false};
            mask = kTrainS;
            break;
        case AdaptMode::L:
            flags = {.sup = false, .rank = true, .sparse = false, .orth = false};
            mask = kTrainA | kTrainB;
            break;
        case AdaptMode::LS:
            flags = {.sup = false, .rank = true, .sparse = true, .orth = false};
            mask = kTrainAll;
            break;
    }

    AdaptHistory history;
    if (cfg.max_steps == 0) return history;

    ModelGrads grads = zero_grads(model);
    Adam adam(model, grads, mask);
    std::vector<ModelGrads> item_grads;
    std::vector<ItemOutcome> item_out(static_cast<size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) item_grads.push_back(zero_grads(model));

    double best = std::numeric_limits<double>::infinity();
    int stalled = 0;
    size_t cursor = 0;
    for (int step = 0; step < cfg.max_steps; ++step) {
        const size_t bs = std::min<size_t>(cfg.batch_size, ood_images.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (std::int64_t b = 0; b < static_cast<std::int64_t>(bs); ++b) {
            const size_t di = (cursor + static_cast<size_t>(b)) % ood_images.size();
            const std::uint64_t sample_seed =
                Rng::mix(0xadaULL, (static_cast<std::uint64_t>(step) << 32) | di);
            ModelGrads& ig = item_grads[static_cast<size_t>(b)];
            ig = zero_grads(model);
            item_out[static_cast<size_t>(b)] =
                process_item(model, single_channel(ood_images[di], "adapt"), nullptr, hyper,
                             flags, mask, sample_seed, &ig);
        }
        cursor = (cursor + bs) % ood_images.size();

        LossBreakdown batch_acc;
        ModelGrads batch_grads = zero_grads(model);
        double objective = 0.0;
        for (size_t b = 0; b < bs; ++b) {
            add_breakdown(batch_acc, item_out[b].lb);
            objective += item_out[b].objective;
            accumulate_grads(batch_grads, item_grads[b]);
        }
        objective /= static_cast<double>(bs);
        if (!std::isfinite(objective))
            throw SolverDiverged("adapt: non-finite objective at step " + std::to_string(step));
        scale_grads(batch_grads, model, 1.0 / static_cast<double>(bs));
        adam.step(model, batch_grads, cfg.lr);

        history.objective.push_back(objective);
        history.steps_run = step + 1;
        if (objective < best) {
            best = objective;
            stalled = 0;
        } else if (++stalled >= cfg.patience) {
            history.early_stopped = true;
            break;
        }
    }
    return history;
}

std::pair<DecompositionResult, Model> adapt_online(const Model& model, const ImageTensor& Y,
                                                   const AdaptConfig& cfg,
                                                   const Hyperparams& hyper, std::uint64_t seed) {
    Model clone = model;
    adapt(clone, {Y}, cfg, hyper);
    DecompositionResult res = decompose(clone, Y, hyper, seed);
    return {std::move(res), std::move(clone)};
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FileFormatError("write_history_csv: cannot open " + path.string());
    out << "epoch,fid,rank,sparse,orth,sup,total\n";
    for (size_t e = 0; e < history.epoch_means.size(); ++e) {
        const auto& lb = history.epoch_means[e];
        out << e << ',' << lb.fid << ',' << lb.rank << ',' << lb.sparse << ',' << lb.orth << ','
            << lb.sup << ',' << lb.total << '\n';
    }
}

} // namespace indeed
