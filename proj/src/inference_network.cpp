#include "indeed/inference_network.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace indeed {

using nlohmann::json;

void ModelConfig::validate() const {
    if (depth <= 0) throw std::invalid_argument("ModelConfig: depth must be positive");
    if (kernel <= 0 || kernel % 2 == 0)
        throw std::invalid_argument("ModelConfig: kernel must be odd and positive");
    if (channels <= 0) throw std::invalid_argument("ModelConfig: channels must be positive");
    if (groups <= 0 || channels % groups != 0)
        throw std::invalid_argument("ModelConfig: groups must divide channels");
    if (r0 <= 0) throw std::invalid_argument("ModelConfig: r0 must be positive");
    if (in_channels != 1)
        throw std::invalid_argument(
            "ModelConfig: in_channels must be 1; multi-channel images are decomposed "
            "channel-by-channel with shared weights");
}

ModelConfig paper_preset() {
    ModelConfig c;
    c.depth = 35;
    c.kernel = 3;
    c.channels = 32;
    c.groups = 8;
    c.r0 = 64;
    return c;
}

namespace {

constexpr double kHeadWeightScale = 0.01;
constexpr double kLogStdInit = -2.3025850929940457; // ln 0.1

FactorNet make_factor_net(const ModelConfig& cfg, bool pool_width, Rng& rng) {
    FactorNet net;
    net.trunk = nn::make_trunk(cfg.in_channels, cfg.channels, cfg.depth, cfg.kernel, cfg.groups,
                               rng);
    net.head = nn::make_linear(cfg.channels, 2 * cfg.r0, rng, kHeadWeightScale);
    net.head.b.block(cfg.r0, 0, cfg.r0, 1).setConstant(kLogStdInit);
    net.pool_width = pool_width;
    return net;
}

SparseNet make_sparse_net(const ModelConfig& cfg, Rng& rng) {
    SparseNet net;
    net.trunk = nn::make_trunk(cfg.in_channels, cfg.channels, cfg.depth, cfg.kernel, cfg.groups,
                               rng);
    net.head = nn::make_conv(cfg.channels, 2, cfg.kernel, rng, kHeadWeightScale);
    net.head.b(1, 0) = kLogStdInit;
    return net;
}

} // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Rng rngA(Rng::mix(seed, 0));
    Rng rngB(Rng::mix(seed, 1));
    Rng rngS(Rng::mix(seed, 2));
    m.netA = make_factor_net(config, /*pool_width=*/true, rngA);
    m.netB = make_factor_net(config, /*pool_width=*/false, rngB);
    m.netS = make_sparse_net(config, rngS);
    return m;
}

namespace {

template <class ModelT, class Fn>
void visit_impl(ModelT& model, Fn&& fn) {
    auto trunk = [&](auto& t, const std::string& prefix) {
        fn(prefix + ".stem.W", t.stem.W);
        fn(prefix + ".stem.b", t.stem.b);
        fn(prefix + ".stem_gn.gamma", t.stem_gn.gamma);
        fn(prefix + ".stem_gn.beta", t.stem_gn.beta);
        for (size_t i = 0; i < t.blocks.size(); ++i) {
            const std::string bp = prefix + ".block" + std::to_string(i);
            fn(bp + ".conv.W", t.blocks[i].conv.W);
            fn(bp + ".conv.b", t.blocks[i].conv.b);
            fn(bp + ".gn.gamma", t.blocks[i].gn.gamma);
            fn(bp + ".gn.beta", t.blocks[i].gn.beta);
        }
    };
    trunk(model.netA.trunk, "netA.trunk");
    fn("netA.head.W", model.netA.head.W);
    fn("netA.head.b", model.netA.head.b);
    trunk(model.netB.trunk, "netB.trunk");
    fn("netB.head.W", model.netB.head.W);
    fn("netB.head.b", model.netB.head.b);
    trunk(model.netS.trunk, "netS.trunk");
    fn("netS.head.W", model.netS.head.W);
    fn("netS.head.b", model.netS.head.b);
}

} // namespace

void visit_params(Model& model, const std::function<void(const std::string&, Matrix&)>& fn) {
    visit_impl(model, fn);
}

void visit_params(const Model& model,
                  const std::function<void(const std::string&, const Matrix&)>& fn) {
    visit_impl(model, fn);
}

std::size_t param_count(const Model& model) {
    std::size_t n = 0;
    visit_params(model, [&](const std::string&, const Matrix& m) {
        n += static_cast<std::size_t>(m.size());
    });
    return n;
}

GaussianFactorPosterior forward_factor(const FactorNet& net, const ModelConfig& cfg,
                                       const Matrix& img, FactorCache* cache) {
    FactorCache local;
    FactorCache& c = cache ? *cache : local;
    nn::FeatureMap x = nn::from_image(img);
    nn::FeatureMap feat = nn::trunk_forward(net.trunk, x, c.trunk);
    c.pooled = nn::mean_pool(feat, net.pool_width);
    c.head_out = nn::linear_forward(net.head, c.pooled);
    const Eigen::Index n = c.head_out.rows();
    Matrix mean = c.head_out.leftCols(cfg.r0);
    Matrix std = c.head_out.rightCols(cfg.r0).array().exp();
    (void)n;
    return GaussianFactorPosterior(std::move(mean), std::move(std));
}

GaussianFactorPosterior forward_sparse_net(const SparseNet& net, const ModelConfig& cfg,
                                           const Matrix& residual, SparseCache* cache) {
    SparseCache local;
    SparseCache& c = cache ? *cache : local;
    (void)cfg;
    nn::FeatureMap x = nn::from_image(residual);
    nn::FeatureMap feat = nn::trunk_forward(net.trunk, x, c.trunk);
    nn::FeatureMap head = nn::conv_forward(net.head, feat, c.head);
    c.head_out = head.data;
    Matrix mean = nn::to_image(head, 0);
    Matrix std = nn::to_image(head, 1).array().exp();
    return GaussianFactorPosterior(std::move(mean), std::move(std));
}

std::pair<GaussianFactorPosterior, GaussianFactorPosterior>
forward_low_rank(const Model& model, const Matrix& img) {
    if (img.rows() < model.config.r0 || img.cols() < model.config.r0)
        throw std::invalid_argument("forward_low_rank: image smaller than r0");
    return {forward_factor(model.netA, model.config, img),
            forward_factor(model.netB, model.config, img)};
}

GaussianFactorPosterior forward_sparse(const Model& model, const Matrix& residual) {
    return forward_sparse_net(model.netS, model.config, residual);
}

ModelGrads zero_grads(const Model& model) {
    ModelGrads g;
    g.netA_trunk = nn::zeros_like(model.netA.trunk);
    g.netB_trunk = nn::zeros_like(model.netB.trunk);
    g.netS_trunk = nn::zeros_like(model.netS.trunk);
    g.netA_head = nn::zeros_like(model.netA.head);
    g.netB_head = nn::zeros_like(model.netB.head);
    g.netS_head = nn::zeros_like(model.netS.head);
    return g;
}

void backward_factor(const FactorNet& net, const ModelConfig& cfg, const FactorCache& cache,
                     const Matrix& d_mu, const Matrix& d_sig, nn::Trunk& g_trunk,
                     nn::Linear& g_head) {
    const Eigen::Index n = cache.head_out.rows();
    Matrix d_head(n, 2 * cfg.r0);
    d_head.leftCols(cfg.r0) = d_mu;
    // std = exp(logstd) => d_logstd = d_sig .* std
    d_head.rightCols(cfg.r0) =
        d_sig.cwiseProduct(cache.head_out.rightCols(cfg.r0).array().exp().matrix());
    Matrix d_pooled;
    nn::linear_backward(net.head, cache.pooled, d_head, g_head, &d_pooled);
    nn::FeatureMap d_feat = nn::mean_pool_backward(
        d_pooled, net.pool_width, cache.trunk.out.h, cache.trunk.out.w, cfg.channels);
    nn::trunk_backward(net.trunk, cache.trunk, d_feat, g_trunk, nullptr);
}

void backward_sparse_net(const SparseNet& net, const ModelConfig& cfg, const SparseCache& cache,
                         const Matrix& d_mu, const Matrix& d_sig, nn::Trunk& g_trunk,
                         nn::Conv2d& g_head, Matrix* d_residual) {
    const Eigen::Index h = cache.trunk.out.h, w = cache.trunk.out.w;
    nn::FeatureMap d_head;
    d_head.h = h;
    d_head.w = w;
    d_head.data.resize(2, h * w);
    for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = 0; j < w; ++j) {
            d_head.data(0, i * w + j) = d_mu(i, j);
            d_head.data(1, i * w + j) =
                d_sig(i, j) * std::exp(cache.head_out(1, i * w + j));
        }
    }
    nn::FeatureMap d_feat;
    nn::conv_backward(net.head, cache.head, d_head, g_head, &d_feat);
    if (d_residual) {
        nn::FeatureMap d_in;
        nn::trunk_backward(net.trunk, cache.trunk, d_feat, g_trunk, &d_in);
        *d_residual = nn::to_image(d_in, 0);
    } else {
        nn::trunk_backward(net.trunk, cache.trunk, d_feat, g_trunk, nullptr);
    }
    (void)cfg;
}

DecompositionResult decompose(const Model& model, const ImageTensor& Y, const Hyperparams& hyper,
                              std::uint64_t seed) {
    if (Y.num_channels() == 0) throw std::invalid_argument("decompose: empty image");
    if (model.config.r0 != hyper.r0)
        throw std::invalid_argument("decompose: model r0 and hyper r0 disagree");
    DecompositionResult out;
    out.seed = seed;
    for (int c = 0; c < Y.num_channels(); ++c) {
        const Matrix& img = Y.ch(c);
        Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(c)));
        ChannelDecomposition cd;
        auto [phiA, phiB] = forward_low_rank(model, img);
        cd.post.A = std::move(phiA);
        cd.post.B = std::move(phiB);
        cd.samples.A_hat = sample_factor(cd.post.A, rng, &cd.samples.eta_A);
        cd.samples.B_hat = sample_factor(cd.post.B, rng, &cd.samples.eta_B);
        cd.L_hat = cd.samples.A_hat * cd.samples.B_hat.transpose();
        const Matrix residual = img - cd.L_hat;
        cd.post.S = forward_sparse(model, residual);
        cd.samples.S_hat = sample_factor(cd.post.S, rng, &cd.samples.eta_S);
        cd.N_hat = img - cd.L_hat - cd.samples.S_hat;
        cd.leaf = leaf_update_all(img, cd.post.A, cd.post.B, cd.post.S, cd.samples.A_hat,
                                  cd.samples.B_hat, cd.samples.S_hat, hyper);
        const LossBreakdown lb =
            loss_total(img, nullptr, cd.post, cd.samples, cd.leaf, hyper);
        out.losses.fid += lb.fid;
        out.losses.rank += lb.rank;
        out.losses.sparse += lb.sparse;
        out.losses.orth += lb.orth;
        out.losses.sup += lb.sup;
        out.losses.total += lb.total;
        out.losses.l_gamma += lb.l_gamma;
        out.losses.l_omega += lb.l_omega;
        out.losses.l_lambda += lb.l_lambda;
        out.channels.push_back(std::move(cd));
    }
    return out;
}

// --- checkpoint io ------------------------------------------------------------

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    json header;
    header["format_version"] = kCheckpointFormatVersion;
    header["model_version"] = model.version;
    header["config"] = {{"depth", model.config.depth},     {"kernel", model.config.kernel},
                        {"channels", model.config.channels}, {"groups", model.config.groups},
                        {"r0", model.config.r0},           {"in_channels", model.config.in_channels}};
    json tensors = json::array();
    visit_params(model, [&](const std::string& name, const Matrix& m) {
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    });
    header["tensors"] = tensors;
    const std::string head_str = header.dump();

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FileFormatError("save_checkpoint: cannot open " + tmp.string());
        out.write("INDEEDCK", 8);
        const std::uint64_t len = head_str.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(head_str.data(), static_cast<std::streamsize>(len));
        visit_params(model, [&](const std::string&, const Matrix& m) {
            out.write(reinterpret_cast<const char*>(m.data()),
                      static_cast<std::streamsize>(sizeof(double) * m.size()));
        });
        if (!out) throw FileFormatError("save_checkpoint: write failure on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileFormatError("load_checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "INDEEDCK", 8) != 0)
        throw FileFormatError("load_checkpoint: not a checkpoint file");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len == 0 || len > (1ull << 30))
        throw FileFormatError("load_checkpoint: corrupt header length");
    std::string head_str(len, '\0');
    in.read(head_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw FileFormatError("load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(head_str);
    } catch (const json::exception&) {
        throw FileFormatError("load_checkpoint: malformed header");
    }
    const int fmt = header.at("format_version").get<int>();
    if (fmt != kCheckpointFormatVersion)
        throw FileFormatError("load_checkpoint: unsupported checkpoint version " +
                              std::to_string(fmt));
    ModelConfig cfg;
    const auto& jc = header.at("config");
    cfg.depth = jc.at("depth").get<int>();
    cfg.kernel = jc.at("kernel").get<int>();
    cfg.channels = jc.at("channels").get<int>();
    cfg.groups = jc.at("groups").get<int>();
    cfg.r0 = jc.at("r0").get<int>();
    cfg.in_channels = jc.at("in_channels").get<int>();

    Model model = build_model(cfg, /*seed=*/0);
    model.version = header.at("model_version").get<int>();

    size_t idx = 0;
    const auto& tensors = header.at("tensors");
    bool ok = true;
    visit_params(model, [&](const std::string& name, Matrix& m) {
        if (!ok) return;
        if (idx >= tensors.size()) {
            ok = false;
            return;
        }
        const auto& t = tensors[idx++];
        if (t.at("name").get<std::string>() != name ||
            t.at("rows").get<Eigen::Index>() != m.rows() ||
            t.at("cols").get<Eigen::Index>() != m.cols()) {
            ok = false;
            return;
        }
        in.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
        if (!in) ok = false;
    });
    if (!ok || idx != tensors.size())
        throw FileFormatError("load_checkpoint: corrupt or truncated tensor data");
    // must be at EOF now
    char probe;
    in.read(&probe, 1);
    if (!in.eof()) throw FileFormatError("load_checkpoint: trailing bytes");
    return model;
}

} // namespace indeed
