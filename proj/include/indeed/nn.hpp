#pragma once

#include "indeed/core.hpp"
#include "indeed/rng.hpp"

namespace indeed::nn {

/// Activation map: one row per channel, pixels flattened row-major (i*w + j).
struct FeatureMap {
    Matrix data; // C x (h*w)
    Eigen::Index h = 0, w = 0;

    Eigen::Index channels() const { return data.rows(); }
};

FeatureMap from_image(const Matrix& img);
Matrix to_image(const FeatureMap& f, Eigen::Index channel = 0);

// --- layers -----------------------------------------------------------------

struct Conv2d {
    Matrix W; // out_ch x (in_ch * k * k)
    Matrix b; // out_ch x 1
    int in_ch = 0, out_ch = 0, k = 1;
};

struct GroupNorm {
    Matrix gamma; // ch x 1
    Matrix beta;  // ch x 1
    int groups = 1;
};

struct Linear {
    Matrix W; // out x in
    Matrix b; // out x 1
};

struct ConvCache {
    Matrix cols; // (in_ch*k*k) x (h*w)
    Eigen::Index h = 0, w = 0;
};

struct GroupNormCache {
    Matrix xhat;     // normalized activations, ch x (h*w)
    Vector inv_std;  // per group
};

Conv2d make_conv(int in_ch, int out_ch, int k, Rng& rng, double weight_scale = -1.0);
GroupNorm make_group_norm(int ch, int groups);
Linear make_linear(int in, int out, Rng& rng, double weight_scale);

FeatureMap conv_forward(const Conv2d& p, const FeatureMap& x, ConvCache& cache);
/// Accumulates parameter gradients into `grad`; writes input gradient when dx != nullptr.
void conv_backward(const Conv2d& p, const ConvCache& cache, const FeatureMap& dy, Conv2d& grad,
                   FeatureMap* dx);

FeatureMap group_norm_forward(const GroupNorm& p, const FeatureMap& x, GroupNormCache& cache);
void group_norm_backward(const GroupNorm& p, const GroupNormCache& cache, const FeatureMap& dy,
                         GroupNorm& grad, FeatureMap& dx);

FeatureMap relu_forward(const FeatureMap& x);
FeatureMap relu_backward(const FeatureMap& out, const FeatureMap& dy);

/// Per-row features: (h x C) when pooling over width, (w x C) when over height.
Matrix mean_pool(const FeatureMap& x, bool over_width);
FeatureMap mean_pool_backward(const Matrix& dF, bool over_width, Eigen::Index h, Eigen::Index w,
                              Eigen::Index channels);

Matrix linear_forward(const Linear& p, const Matrix& x); // x: n x in -> n x out
void linear_backward(const Linear& p, const Matrix& x, const Matrix& dy, Linear& grad,
                     Matrix* dx);

// --- residual trunk ---------------------------------------------------------

/// block(x) = x + relu(gn(conv(x)))
struct ResBlock {
    Conv2d conv;
    GroupNorm gn;
};

struct Trunk {
    Conv2d stem;
    GroupNorm stem_gn;
    std::vector<ResBlock> blocks;
};

struct ResBlockCache {
    ConvCache conv;
    GroupNormCache gn;
    FeatureMap branch; // post-relu branch output
};

struct TrunkCache {
    ConvCache stem_conv;
    GroupNormCache stem_gn;
    FeatureMap stem_out; // post-relu
    std::vector<ResBlockCache> blocks;
    FeatureMap out;
};

Trunk make_trunk(int in_ch, int channels, int depth, int kernel, int groups, Rng& rng);
FeatureMap trunk_forward(const Trunk& p, const FeatureMap& x, TrunkCache& cache);
void trunk_backward(const Trunk& p, const TrunkCache& cache, const FeatureMap& dy, Trunk& grad,
                    FeatureMap* dx);

/// Allocate a zero structure with the same shapes, for gradient accumulation.
Conv2d zeros_like(const Conv2d& p);
GroupNorm zeros_like(const GroupNorm& p);
Linear zeros_like(const Linear& p);
Trunk zeros_like(const Trunk& p);

} // namespace indeed::nn
