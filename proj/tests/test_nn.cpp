#include "indeed/nn.hpp"

#include "test_helpers.hpp"

#include <doctest.h>

using namespace indeed;
using namespace indeed::testing;
namespace nn = indeed::nn;

TEST_SUITE_BEGIN("nn");

namespace {

nn::FeatureMap random_map(Rng& rng, int c, int h, int w) {
    nn::FeatureMap f;
    f.h = h;
    f.w = w;
    f.data = random_matrix(rng, c, h * w);
    return f;
}

} // namespace

TEST_CASE("feature map round trip") {
    Rng rng(50);
    const Matrix img = random_matrix(rng, 5, 7);
    const nn::FeatureMap f = nn::from_image(img);
    CHECK(bitwise_equal(nn::to_image(f, 0), img));
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(51);
    nn::Conv2d conv = nn::make_conv(2, 3, 3, rng);
    const nn::FeatureMap x = random_map(rng, 2, 6, 5);
    const Matrix probe = random_matrix(rng, 3, 30); // fixed contraction to a scalar

    auto scalar_of_out = [&](const nn::Conv2d& p, const nn::FeatureMap& in) {
        nn::ConvCache cache;
        const nn::FeatureMap y = nn::conv_forward(p, in, cache);
        return (probe.array() * y.data.array()).sum();
    };

    nn::ConvCache cache;
    const nn::FeatureMap y = nn::conv_forward(conv, x, cache);
    nn::FeatureMap dy;
    dy.h = y.h;
    dy.w = y.w;
    dy.data = probe;
    nn::Conv2d grad = nn::zeros_like(conv);
    nn::FeatureMap dx;
    nn::conv_backward(conv, cache, dy, grad, &dx);

    auto fW = [&](const Matrix& W) {
        nn::Conv2d p = conv;
        p.W = W;
        return scalar_of_out(p, x);
    };
    auto fb = [&](const Matrix& b) {
        nn::Conv2d p = conv;
        p.b = b;
        return scalar_of_out(p, x);
    };
    auto fx = [&](const Matrix& data) {
        nn::FeatureMap in = x;
        in.data = data;
        return scalar_of_out(conv, in);
    };
    CHECK(grad_rel_err(grad.W, finite_diff(fW, conv.W)) < 1e-6);
    CHECK(grad_rel_err(grad.b, finite_diff(fb, conv.b)) < 1e-6);
    CHECK(grad_rel_err(dx.data, finite_diff(fx, x.data)) < 1e-6);
}

TEST_CASE("group norm gradients match finite differences") {
    Rng rng(52);
    nn::GroupNorm gn = nn::make_group_norm(4, 2);
    gn.gamma = random_matrix(rng, 4, 1, 0.5, 1.5);
    gn.beta = random_matrix(rng, 4, 1, -0.3, 0.3);
    const nn::FeatureMap x = random_map(rng, 4, 3, 3);
    const Matrix probe = random_matrix(rng, 4, 9);

    auto scalar_of_out = [&](const nn::GroupNorm& p, const nn::FeatureMap& in) {
        nn::GroupNormCache cache;
        const nn::FeatureMap y = nn::group_norm_forward(p, in, cache);
        return (probe.array() * y.data.array()).sum();
    };

    nn::GroupNormCache cache;
    nn::group_norm_forward(gn, x, cache);
    nn::FeatureMap dy;
    dy.h = 3;
    dy.w = 3;
    dy.data = probe;
    nn::GroupNorm grad = nn::zeros_like(gn);
    nn::FeatureMap dx;
    nn::group_norm_backward(gn, cache, dy, grad, dx);

    auto fg = [&](const Matrix& g) {
        nn::GroupNorm p = gn;
        p.gamma = g;
        return scalar_of_out(p, x);
    };
    auto fbeta = [&](const Matrix& b) {
        nn::GroupNorm p = gn;
        p.beta = b;
        return scalar_of_out(p, x);
    };
    auto fx = [&](const Matrix& data) {
        nn::FeatureMap in = x;
        in.data = data;
        return scalar_of_out(gn, in);
    };
    CHECK(grad_rel_err(grad.gamma, finite_diff(fg, gn.gamma)) < 1e-6);
    CHECK(grad_rel_err(grad.beta, finite_diff(fbeta, gn.beta)) < 1e-6);
    CHECK(grad_rel_err(dx.data, finite_diff(fx, x.data)) < 1e-5);
}

TEST_CASE("linear and pooling gradients match finite differences") {
    Rng rng(53);
    nn::Linear lin = nn::make_linear(4, 3, rng, 0.5);
    const Matrix x = random_matrix(rng, 6, 4);
    const Matrix probe = random_matrix(rng, 6, 3);

    const Matrix y = nn::linear_forward(lin, x);
    nn::Linear grad = nn::zeros_like(lin);
    Matrix dx;
    nn::linear_backward(lin, x, probe, grad, &dx);
    auto fW = [&](const Matrix& W) {
        nn::Linear p = lin;
        p.W = W;
        return (probe.array() * nn::linear_forward(p, x).array()).sum();
    };
    auto fx = [&](const Matrix& in) {
        return (probe.array() * nn::linear_forward(lin, in).array()).sum();
    };
    CHECK(grad_rel_err(grad.W, finite_diff(fW, lin.W)) < 1e-6);
    CHECK(grad_rel_err(dx, finite_diff(fx, x)) < 1e-6);

    // pooling, both axes
    const nn::FeatureMap fmap = random_map(rng, 3, 4, 5);
    for (const bool over_width : {true, false}) {
        const Matrix pooled = nn::mean_pool(fmap, over_width);
        const Matrix pprobe = random_matrix(rng, pooled.rows(), pooled.cols());
        const nn::FeatureMap dmap =
            nn::mean_pool_backward(pprobe, over_width, 4, 5, 3);
        auto fpool = [&](const Matrix& data) {
            nn::FeatureMap in = fmap;
            in.data = data;
            return (pprobe.array() * nn::mean_pool(in, over_width).array()).sum();
        };
        CHECK(grad_rel_err(dmap.data, finite_diff(fpool, fmap.data)) < 1e-6);
    }
}

TEST_CASE("residual trunk end-to-end gradient check") {
    Rng rng(54);
    nn::Trunk trunk = nn::make_trunk(1, 8, 2, 3, 4, rng);
    const nn::FeatureMap x = random_map(rng, 1, 5, 5);
    const Matrix probe = random_matrix(rng, 8, 25);

    auto scalar = [&](const nn::Trunk& p, const nn::FeatureMap& in) {
        nn::TrunkCache cache;
        const nn::FeatureMap y = nn::trunk_forward(p, in, cache);
        return (probe.array() * y.data.array()).sum();
    };

    nn::TrunkCache cache;
    nn::trunk_forward(trunk, x, cache);
    nn::FeatureMap dy;
    dy.h = 5;
    dy.w = 5;
    dy.data = probe;
    nn::Trunk grad = nn::zeros_like(trunk);
    nn::FeatureMap dx;
    nn::trunk_backward(trunk, cache, dy, grad, &dx);

    auto f_stemW = [&](const Matrix& W) {
        nn::Trunk p = trunk;
        p.stem.W = W;
        return scalar(p, x);
    };
    auto f_b1W = [&](const Matrix& W) {
        nn::Trunk p = trunk;
        p.blocks[1].conv.W = W;
        return scalar(p, x);
    };
    auto f_gn0 = [&](const Matrix& g) {
        nn::Trunk p = trunk;
        p.blocks[0].gn.gamma = g;
        return scalar(p, x);
    };
    auto f_x = [&](const Matrix& data) {
        nn::FeatureMap in = x;
        in.data = data;
        return scalar(trunk, in);
    };
    CHECK(grad_rel_err(grad.stem.W, finite_diff(f_stemW, trunk.stem.W)) < 1e-5);
    CHECK(grad_rel_err(grad.blocks[1].conv.W, finite_diff(f_b1W, trunk.blocks[1].conv.W)) <
          1e-5);
    CHECK(grad_rel_err(grad.blocks[0].gn.gamma, finite_diff(f_gn0, trunk.blocks[0].gn.gamma)) <
          1e-5);
    CHECK(grad_rel_err(dx.data, finite_diff(f_x, x.data)) < 1e-5);
}

TEST_SUITE_END();
