#include "indeed/nn.hpp"

namespace indeed::nn {

FeatureMap from_image(const Matrix& img) {
    FeatureMap f;
    f.h = img.rows();
    f.w = img.cols();
    f.data.resize(1, f.h * f.w);
    for (Eigen::Index i = 0; i < f.h; ++i)
        for (Eigen::Index j = 0; j < f.w; ++j) f.data(0, i * f.w + j) = img(i, j);
    return f;
}

Matrix to_image(const FeatureMap& f, Eigen::Index channel) {
    Matrix img(f.h, f.w);
    for (Eigen::Index i = 0; i < f.h; ++i)
        for (Eigen::Index j = 0; j < f.w; ++j) img(i, j) = f.data(channel, i * f.w + j);
    return img;
}

Conv2d make_conv(int in_ch, int out_ch, int k, Rng& rng, double weight_scale) {
    Conv2d c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.k = k;
    const double scale =
        weight_scale > 0 ? weight_scale : std::sqrt(2.0 / (in_ch * k * k)); // He init
    c.W = scale * rng.normal_matrix(out_ch, in_ch * k * k);
    c.b = Matrix::Zero(out_ch, 1);
    return c;
}

GroupNorm make_group_norm(int ch, int groups) {
    GroupNorm g;
    g.groups = groups;
    g.gamma = Matrix::Ones(ch, 1);
    g.beta = Matrix::Zero(ch, 1);
    return g;
}

Linear make_linear(int in, int out, Rng& rng, double weight_scale) {
    Linear l;
    l.W = weight_scale * rng.normal_matrix(out, in);
    l.b = Matrix::Zero(out, 1);
    return l;
}

namespace {

Matrix im2col(const FeatureMap& x, int k) {
    const Eigen::Index h = x.h, w = x.w, C = x.channels();
    const int pad = k / 2;
    Matrix cols = Matrix::Zero(C * k * k, h * w);
    for (Eigen::Index c = 0; c < C; ++c) {
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
                const Eigen::Index row = c * k * k + di * k + dj;
                for (Eigen::Index i = 0; i < h; ++i) {
                    const Eigen::Index si = i + di - pad;
                    if (si < 0 || si >= h) continue;
                    const Eigen::Index j0 = std::max<Eigen::Index>(0, pad - dj);
                    const Eigen::Index j1 = std::min<Eigen::Index>(w, w + pad - dj);
                    if (j1 <= j0) continue;
                    cols.block(row, i * w + j0, 1, j1 - j0) =
                        x.data.block(c, si * w + j0 + dj - pad, 1, j1 - j0);
                }
            }
        }
    }
    return cols;
}

void col2im_accum(const Matrix& dcols, int k, FeatureMap& dx) {
    const Eigen::Index h = dx.h, w = dx.w, C = dx.channels();
    const int pad = k / 2;
    for (Eigen::Index c = 0; c < C; ++c) {
        for (int di = 0; di < k; ++di) {
            for (int dj = 0; dj < k; ++dj) {
                const Eigen::Index row = c * k * k + di * k + dj;
                for (Eigen::Index i = 0; i < h; ++i) {
                    const Eigen::Index si = i + di - pad;
                    if (si < 0 || si >= h) continue;
                    const Eigen::Index j0 = std::max<Eigen::Index>(0, pad - dj);
                    const Eigen::Index j1 = std::min<Eigen::Index>(w, w + pad - dj);
                    if (j1 <= j0) continue;
                    dx.data.block(c, si * w + j0 + dj - pad, 1, j1 - j0) +=
                        dcols.block(row, i * w + j0, 1, j1 - j0);
                }
            }
        }
    }
}

} // namespace

FeatureMap conv_forward(const Conv2d& p, const FeatureMap& x, ConvCache& cache) {
    cache.cols = im2col(x, p.k);
    cache.h = x.h;
    cache.w = x.w;
    FeatureMap y;
    y.h = x.h;
    y.w = x.w;
    y.data = p.W * cache.cols;
    y.data.colwise() += p.b.col(0);
    return y;
}

void conv_backward(const Conv2d& p, const ConvCache& cache, const FeatureMap& dy, Conv2d& grad,
                   FeatureMap* dx) {
    grad.W.noalias() += dy.data * cache.cols.transpose();
    grad.b.col(0).noalias() += dy.data.rowwise().sum();
    if (dx) {
        dx->h = cache.h;
        dx->w = cache.w;
        dx->data = Matrix::Zero(p.in_ch, cache.h * cache.w);
        const Matrix dcols = p.W.transpose() * dy.data;
        col2im_accum(dcols, p.k, *dx);
    }
}

FeatureMap group_norm_forward(const GroupNorm& p, const FeatureMap& x, GroupNormCache& cache) {
    constexpr double eps = 1e-5;
    const Eigen::Index C = x.channels();
    const Eigen::Index per = C / p.groups;
    FeatureMap y;
    y.h = x.h;
    y.w = x.w;
    y.data.resize(C, x.data.cols());
    cache.xhat.resize(C, x.data.cols());
    cache.inv_std.resize(p.groups);
    for (int g = 0; g < p.groups; ++g) {
        auto block = x.data.middleRows(g * per, per);
        const double mean = block.mean();
        const double var = (block.array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std(g) = inv;
        cache.xhat.middleRows(g * per, per) = ((block.array() - mean) * inv).matrix();
    }
    for (Eigen::Index c = 0; c < C; ++c)
        y.data.row(c) = p.gamma(c, 0) * cache.xhat.row(c).array() + p.beta(c, 0);
    return y;
}

void group_norm_backward(const GroupNorm& p, const GroupNormCache& cache, const FeatureMap& dy,
                         GroupNorm& grad, FeatureMap& dx) {
    const Eigen::Index C = cache.xhat.rows();
    const Eigen::Index per = C / p.groups;
    dx.h = dy.h;
    dx.w = dy.w;
    dx.data.resize(C, cache.xhat.cols());
    for (Eigen::Index c = 0; c < C; ++c) {
        grad.gamma(c, 0) += dy.data.row(c).dot(cache.xhat.row(c));
        grad.beta(c, 0) += dy.data.row(c).sum();
    }
    for (int g = 0; g < p.groups; ++g) {
        // dxhat = dy .* gamma_c; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat .* xhat))
        Matrix dxhat(per, cache.xhat.cols());
        for (Eigen::Index r = 0; r < per; ++r)
            dxhat.row(r) = dy.data.row(g * per + r) * p.gamma(g * per + r, 0);
        const auto xh = cache.xhat.middleRows(g * per, per);
        const double m1 = dxhat.mean();
        const double m2 = (dxhat.array() * xh.array()).mean();
        dx.data.middleRows(g * per, per) =
            (cache.inv_std(g) * (dxhat.array() - m1 - xh.array() * m2)).matrix();
    }
}

FeatureMap relu_forward(const FeatureMap& x) {
    FeatureMap y;
    y.h = x.h;
    y.w = x.w;
    y.data = x.data.cwiseMax(0.0);
    return y;
}

FeatureMap relu_backward(const FeatureMap& out, const FeatureMap& dy) {
    FeatureMap dx;
    dx.h = dy.h;
    dx.w = dy.w;
    dx.data = (out.data.array() > 0.0).select(dy.data, Matrix::Zero(dy.data.rows(), dy.data.cols()));
    return dx;
}

Matrix mean_pool(const FeatureMap& x, bool over_width) {
    const Eigen::Index C = x.channels();
    if (over_width) {
        Matrix F(x.h, C);
        for (Eigen::Index c = 0; c < C; ++c)
            for (Eigen::Index i = 0; i < x.h; ++i)
                F(i, c) = x.data.block(c, i * x.w, 1, x.w).mean();
        return F;
    }
    Matrix F(x.w, C);
    F.setZero();
    for (Eigen::Index c = 0; c < C; ++c)
        for (Eigen::Index i = 0; i < x.h; ++i)
            for (Eigen::Index j = 0; j < x.w; ++j) F(j, c) += x.data(c, i * x.w + j);
    F /= static_cast<double>(x.h);
    return F;
}

FeatureMap mean_pool_backward(const Matrix& dF, bool over_width, Eigen::Index h, Eigen::Index w,
                              Eigen::Index channels) {
    FeatureMap dx;
    dx.h = h;
    dx.w = w;
    dx.data.resize(channels, h * w);
    if (over_width) {
        for (Eigen::Index c = 0; c < channels; ++c)
            for (Eigen::Index i = 0; i < h; ++i)
                dx.data.block(c, i * w, 1, w).setConstant(dF(i, c) / static_cast<double>(w));
    } else {
        for (Eigen::Index c = 0; c < channels; ++c)
            for (Eigen::Index i = 0; i < h; ++i)
                for (Eigen::Index j = 0; j < w; ++j)
                    dx.data(c, i * w + j) = dF(j, c) / static_cast<double>(h);
    }
    return dx;
}

Matrix linear_forward(const Linear& p, const Matrix& x) {
    Matrix y = x * p.W.transpose();
    y.rowwise() += p.b.col(0).transpose();
    return y;
}

void linear_backward(const Linear& p, const Matrix& x, const Matrix& dy, Linear& grad,
                     Matrix* dx) {
    grad.W.noalias() += dy.transpose() * x;
    grad.b.col(0).noalias() += dy.colwise().sum().transpose();
    if (dx) *dx = dy * p.W;
}

Trunk make_trunk(int in_ch, int channels, int depth, int kernel, int groups, Rng& rng) {
    Trunk t;
    t.stem = make_conv(in_ch, channels, kernel, rng);
    t.stem_gn = make_group_norm(channels, groups);
    t.blocks.reserve(static_cast<size_t>(depth));
    for (int d = 0; d < depth; ++d) {
        ResBlock b;
        b.conv = make_conv(channels, channels, kernel, rng);
        b.gn = make_group_norm(channels, groups);
        t.blocks.push_back(std::move(b));
    }
    return t;
}

FeatureMap trunk_forward(const Trunk& p, const FeatureMap& x, TrunkCache& cache) {
    GroupNormCache gnc;
    FeatureMap a = conv_forward(p.stem, x, cache.stem_conv);
    a = group_norm_forward(p.stem_gn, a, cache.stem_gn);
    cache.stem_out = relu_forward(a);
    cache.blocks.resize(p.blocks.size());
    FeatureMap cur = cache.stem_out;
    for (size_t i = 0; i < p.blocks.size(); ++i) {
        auto& bc = cache.blocks[i];
        FeatureMap t = conv_forward(p.blocks[i].conv, cur, bc.conv);
        t = group_norm_forward(p.blocks[i].gn, t, bc.gn);
        bc.branch = relu_forward(t);
        cur.data += bc.branch.data;
    }
    cache.out = cur;
    return cur;
}

void trunk_backward(const Trunk& p, const TrunkCache& cache, const FeatureMap& dy, Trunk& grad,
                    FeatureMap* dx) {
    FeatureMap cur = dy;
    for (size_t i = p.blocks.size(); i-- > 0;) {
        const auto& bc = cache.blocks[i];
        FeatureMap dbranch = relu_backward(bc.branch, cur);
        FeatureMap dgn;
        group_norm_backward(p.blocks[i].gn, bc.gn, dbranch, grad.blocks[i].gn, dgn);
        FeatureMap dconv_in;
        conv_backward(p.blocks[i].conv, bc.conv, dgn, grad.blocks[i].conv, &dconv_in);
        cur.data += dconv_in.data; // identity path + branch path
    }
    FeatureMap dstem = relu_backward(cache.stem_out, cur);
    FeatureMap dgn;
    group_norm_backward(p.stem_gn, cache.stem_gn, dstem, grad.stem_gn, dgn);
    conv_backward(p.stem, cache.stem_conv, dgn, grad.stem, dx);
}

Conv2d zeros_like(const Conv2d& p) {
    Conv2d z = p;
    z.W.setZero();
    z.b.setZero();
    return z;
}

GroupNorm zeros_like(const GroupNorm& p) {
    GroupNorm z = p;
    z.gamma.setZero();
    z.beta.setZero();
    return z;
}

Linear zeros_like(const Linear& p) {
    Linear z = p;
    z.W.setZero();
    z.b.setZero();
    return z;
}

Trunk zeros_like(const Trunk& p) {
    Trunk z;
    z.stem = zeros_like(p.stem);
    z.stem_gn = zeros_like(p.stem_gn);
    z.blocks.reserve(p.blocks.size());
    for (const auto& b : p.blocks) z.blocks.push_back({zeros_like(b.conv), zeros_like(b.gn)});
    return z;
}

} // namespace indeed::nn
