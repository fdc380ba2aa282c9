#include "indeed/inference_network.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

#include <Eigen/SVD>
#include <fstream>

using namespace indeed;
using namespace indeed::testing;

TEST_SUITE_BEGIN("inference_network");

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.depth = 2;
    c.kernel = 3;
    c.channels = 8;
    c.groups = 4;
    c.r0 = 3;
    return c;
}

} // namespace

TEST_CASE("build_model determinism and validation") {
    const ModelConfig cfg = small_config();
    Model m1 = build_model(cfg, 42);
    Model m2 = build_model(cfg, 42);
    bool equal = true;
    visit_params(m1, [&](const std::string& name, const Matrix& p) {
        visit_params(m2, [&](const std::string& name2, const Matrix& p2) {
            if (name == name2 && !bitwise_equal(p, p2)) equal = false;
        });
    });
    CHECK(equal);

    Model m3 = build_model(cfg, 43);
    bool any_diff = false;
    std::vector<const Matrix*> p1, p3;
    visit_params(m1, [&](const std::string&, const Matrix& p) { p1.push_back(&p); });
    visit_params(m3, [&](const std::string&, const Matrix& p) { p3.push_back(&p); });
    for (size_t i = 0; i < p1.size(); ++i)
        if (!bitwise_equal(*p1[i], *p3[i])) any_diff = true;
    CHECK(any_diff);

    ModelConfig bad = cfg;
    bad.depth = 0;
    CHECK_THROWS_AS(build_model(bad, 0), std::invalid_argument);
    bad = cfg;
    bad.kernel = 4;
    CHECK_THROWS_AS(build_model(bad, 0), std::invalid_argument);
    bad = cfg;
    bad.groups = 3; // does not divide channels
    CHECK_THROWS_AS(build_model(bad, 0), std::invalid_argument);
}

TEST_CASE("parameter count matches the analytic formula") {
    ModelConfig cfg;
    cfg.depth = 8;
    cfg.channels = 32;
    cfg.kernel = 3;
    cfg.groups = 8;
    cfg.r0 = 8;
    const Model m = build_model(cfg, 0);
    const std::size_t C = cfg.channels, k = cfg.kernel, d = cfg.depth, r0 = cfg.r0;
    const std::size_t trunk = (C * k * k + C + 2 * C)          // stem conv + gn
                              + d * (C * C * k * k + C + 2 * C); // blocks
    const std::size_t factor = trunk + (2 * r0 * C + 2 * r0);    // + linear head
    const std::size_t sparse = trunk + (2 * C * k * k + 2);      // + conv head
    CHECK(param_count(m) == 2 * factor + sparse);
}

TEST_CASE("forward shapes and positivity") {
    const ModelConfig cfg = small_config();
    const Model m = build_model(cfg, 7);
    Rng rng(7);
    const Matrix img = random_matrix(rng, 10, 12, 0.0, 1.0);
    auto [phiA, phiB] = forward_low_rank(m, img);
    CHECK(phiA.mean.rows() == 10);
    CHECK(phiA.mean.cols() == cfg.r0);
    CHECK(phiB.mean.rows() == 12);
    CHECK(phiB.mean.cols() == cfg.r0);
    CHECK((phiA.std.array() > 0.0).all());
    CHECK((phiB.std.array() > 0.0).all());

    const GaussianFactorPosterior phiS = forward_sparse(m, img - Matrix::Constant(10, 12, 0.2));
    CHECK(phiS.mean.rows() == 10);
    CHECK(phiS.mean.cols() == 12);
    CHECK((phiS.std.array() > 0.0).all());

    // zero residual stays finite
    const GaussianFactorPosterior phi0 = forward_sparse(m, Matrix::Zero(10, 12));
    CHECK(phi0.mean.allFinite());
    CHECK(phi0.std.allFinite());
}

TEST_CASE("single-pixel probe changes the factor posterior") {
    const ModelConfig cfg = small_config();
    const Model m = build_model(cfg, 11);
    Rng rng(11);
    Matrix img = random_matrix(rng, 8, 8, 0.0, 1.0);
    auto [phiA1, phiB1] = forward_low_rank(m, img);
    img(3, 4) += 0.25;
    auto [phiA2, phiB2] = forward_low_rank(m, img);
    CHECK(!bitwise_equal(phiA1.mean, phiA2.mean));
}

TEST_CASE("decompose: additive identity, rank bound, determinism") {
    const ModelConfig cfg = small_config();
    const Model m = build_model(cfg, 5);
    Rng rng(5);
    const ImageTensor Y(random_matrix(rng, 9, 9, 0.0, 1.0));
    Hyperparams hyper;
    hyper.r0 = cfg.r0;

    const DecompositionResult d1 = decompose(m, Y, hyper, 123);
    const auto& c = d1.ch(0);
    CHECK((Y.ch(0) - (c.L_hat + c.samples.S_hat + c.N_hat)).cwiseAbs().maxCoeff() <= 1e-12);

    Eigen::JacobiSVD<Matrix> svd(c.L_hat);
    int rank = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > 1e-8 * svd.singularValues()(0)) ++rank;
    CHECK(rank <= cfg.r0);

    const DecompositionResult d2 = decompose(m, Y, hyper, 123);
    CHECK(bitwise_equal(d1.ch(0).L_hat, d2.ch(0).L_hat));
    CHECK(bitwise_equal(d1.ch(0).samples.S_hat, d2.ch(0).samples.S_hat));
    CHECK(d1.losses.total == d2.losses.total);

    const DecompositionResult d3 = decompose(m, Y, hyper, 124);
    CHECK(!bitwise_equal(d1.ch(0).samples.S_hat, d3.ch(0).samples.S_hat));
}

TEST_CASE("multi-channel decompose shares weights across channels") {
    const ModelConfig cfg = small_config();
    const Model m = build_model(cfg, 6);
    Rng rng(6);
    ImageTensor Y;
    Y.channels.push_back(random_matrix(rng, 8, 8, 0.0, 1.0));
    Y.channels.push_back(random_matrix(rng, 8, 8, 0.0, 1.0));
    Hyperparams hyper;
    hyper.r0 = cfg.r0;
    const DecompositionResult d = decompose(m, Y, hyper, 9);
    REQUIRE(d.channels.size() == 2);
    for (int c = 0; c < 2; ++c)
        CHECK((Y.ch(c) - (d.ch(c).L_hat + d.ch(c).samples.S_hat + d.ch(c).N_hat))
                  .cwiseAbs()
                  .maxCoeff() <= 1e-12);
}

TEST_CASE("checkpoint round-trip is bitwise and versioned") {
    const ModelConfig cfg = small_config();
    Model m = build_model(cfg, 99);
    const auto dir = std::filesystem::temp_directory_path() / "indeed_ckpt_test";
    std::filesystem::create_directories(dir);
    const auto p1 = dir / "m1.ckpt";
    const auto p2 = dir / "m2.ckpt";

    save_checkpoint(m, p1);
    Model loaded = load_checkpoint(p1);
    CHECK(loaded.config == m.config);
    std::vector<const Matrix*> pa, pb;
    visit_params(m, [&](const std::string&, const Matrix& p) { pa.push_back(&p); });
    visit_params(loaded, [&](const std::string&, const Matrix& p) { pb.push_back(&p); });
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(*pa[i], *pb[i]));

    // save -> load -> save: byte-identical files
    save_checkpoint(loaded, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);

    // truncated file -> corrupt error
    const auto p3 = dir / "trunc.ckpt";
    {
        std::ofstream out(p3, std::ios::binary);
        out.write(b1.data(), static_cast<std::streamsize>(b1.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(p3), FileFormatError);

    // unknown version -> explicit version error
    const auto p4 = dir / "badver.ckpt";
    {
        std::string copy = b1;
        const std::string needle = "\"format_version\":1";
        copy.replace(copy.find(needle), needle.size(), "\"format_version\":9");
        std::ofstream out(p4, std::ios::binary);
        out.write(copy.data(), static_cast<std::streamsize>(copy.size()));
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(p4),
                         doctest::Contains("unsupported checkpoint version"), FileFormatError);
}

TEST_SUITE_END();
