#include "indeed/tasks_metrics.hpp"

#include "indeed/oracle_solver.hpp"
#include "indeed/special.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <numeric>

namespace indeed {

ImageTensor add_awgn(const ImageTensor& image, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw std::invalid_argument("add_awgn: sigma must be >= 0");
    ImageTensor out = image;
    Rng rng(seed);
    if (sigma == 0.0) return out;
    for (auto& ch : out.channels)
        ch += sigma * rng.normal_matrix(ch.rows(), ch.cols());
    return out;
}

Matrix add_awgn(const Matrix& image, double sigma, std::uint64_t seed) {
    ImageTensor t(image);
    return add_awgn(t, sigma, seed).ch(0);
}

void AnomalySpec::validate() const {
    if (count_min < 0 || count_max < count_min)
        throw std::invalid_argument("AnomalySpec: bad count range");
    if (intensity_max < intensity_min || intensity_min < 0.0 || intensity_max > 1.0)
        throw std::invalid_argument("AnomalySpec: intensity range must sit inside [0,1]");
    if (!(size_min > 0.0) || size_max < size_min || size_max > 1.0)
        throw std::invalid_argument("AnomalySpec: bad size range");
}

namespace {

using BoolArray = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Smoothly interpolated value noise over the patch, thresholded at its median.
BoolArray perlin_blob(int bh, int bw, Rng& rng) {
    constexpr int grid = 4;
    Matrix node = Matrix::Zero(grid + 1, grid + 1);
    for (int i = 0; i <= grid; ++i)
        for (int j = 0; j <= grid; ++j) node(i, j) = rng.uniform();
    Matrix field(bh, bw);
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    for (int i = 0; i < bh; ++i) {
        for (int j = 0; j < bw; ++j) {
            const double gi = static_cast<double>(i) / bh * grid;
            const double gj = static_cast<double>(j) / bw * grid;
            const int i0 = std::min(grid - 1, static_cast<int>(gi));
            const int j0 = std::min(grid - 1, static_cast<int>(gj));
            const double ti = fade(gi - i0), tj = fade(gj - j0);
            const double top = node(i0, j0) * (1 - tj) + node(i0, j0 + 1) * tj;
            const double bot = node(i0 + 1, j0) * (1 - tj) + node(i0 + 1, j0 + 1) * tj;
            field(i, j) = top * (1 - ti) + bot * ti;
        }
    }
    std::vector<double> vals(field.data(), field.data() + field.size());
    std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
    const double med = vals[vals.size() / 2];
    return field.array() > med;
}

} // namespace

AnomalyResult synthesize_anomaly(const Matrix& U_N, const AnomalySpec& spec) {
    spec.validate();
    const int h = static_cast<int>(U_N.rows());
    const int w = static_cast<int>(U_N.cols());
    Rng rng(spec.seed);

    AnomalyResult out;
    out.Y = U_N;
    const int count =
        spec.count_min +
        (spec.count_max > spec.count_min
             ? static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.count_max - spec.count_min + 1)))
             : 0);

    const double base = std::min(h, w);
    for (int k = 0; k < count; ++k) {
        const int bh = std::max(
            1, static_cast<int>(std::lround(base * rng.uniform(spec.size_min, spec.size_max))));
        const int bw = std::max(
            1, static_cast<int>(std::lround(base * rng.uniform(spec.size_min, spec.size_max))));
        const int ph = std::min(bh, h), pw = std::min(bw, w);
        const int i0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - ph + 1)));
        const int j0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - pw + 1)));

        BoolArray region(ph, pw);
        switch (spec.shape) {
            case AnomalyShape::Rectangle:
                region.setConstant(true);
                break;
            case AnomalyShape::Ellipse: {
                const double a = ph / 2.0, b = pw / 2.0;
                for (int i = 0; i < ph; ++i)
                    for (int j = 0; j < pw; ++j) {
                        const double di = (i + 0.5 - a) / a, dj = (j + 0.5 - b) / b;
                        region(i, j) = di * di + dj * dj <= 1.0;
                    }
                break;
            }
            case AnomalyShape::PerlinBlob:
                region = perlin_blob(ph, pw, rng);
                break;
        }

        // Sample a paste intensity; retry when it sits too close to the content.
        double v = rng.uniform(spec.intensity_min, spec.intensity_max);
        for (int tries = 0; tries < 8; ++tries) {
            double contrast = 0.0;
            int m = 0;
            for (int i = 0; i < ph; ++i)
                for (int j = 0; j < pw; ++j)
                    if (region(i, j)) {
                        contrast += std::abs(v - U_N(i0 + i, j0 + j));
                        ++m;
                    }
            if (m == 0 || contrast / m >= 0.15) break;
            v = rng.uniform(spec.intensity_min, spec.intensity_max);
        }

        for (int i = 0; i < ph; ++i)
            for (int j = 0; j < pw; ++j)
                if (region(i, j)) out.Y(i0 + i, j0 + j) = v;
    }

    out.U_A = out.Y - U_N;
    out.mask = out.U_A.array() != 0.0;
    out.Y = U_N + out.U_A; // additive identity exact by construction
    return out;
}

Matrix synthetic_clean_patch(int h, int w, std::uint64_t seed) {
    Rng rng(Rng::mix(seed, 0xc1ea9));
    const int rank = 1 + static_cast<int>(rng.below(4));
    const double density = 0.02 + 0.06 * rng.uniform();
    SyntheticLrs lrs = generate_synthetic_lrs(h, w, rank, density, 0.0, rng.raw());
    return (lrs.L_true + lrs.S_true).cwiseMax(0.0).cwiseMin(1.0);
}

Dataset make_denoise_dataset(int n, int h, int w, double sigma_min, double sigma_max,
                             std::uint64_t seed) {
    Dataset data;
    data.reserve(static_cast<size_t>(n));
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        TaskSample s;
        const Matrix clean = synthetic_clean_patch(h, w, rng.raw());
        s.noise_sigma = rng.uniform(sigma_min, sigma_max);
        s.Y = ImageTensor(add_awgn(clean, s.noise_sigma, rng.raw()));
        s.target.task = Task::DEN;
        s.target.U = clean;
        data.push_back(std::move(s));
    }
    return data;
}

Dataset make_uad_dataset(int n, int h, int w, const AnomalySpec& spec_template,
                         std::uint64_t seed) {
    spec_template.validate();
    Dataset data;
    data.reserve(static_cast<size_t>(n));
    Rng rng(seed);
    constexpr AnomalyShape kShapes[] = {AnomalyShape::Rectangle, AnomalyShape::Ellipse,
                                        AnomalyShape::PerlinBlob};
    for (int i = 0; i < n; ++i) {
        TaskSample s;
        const Matrix normal = synthetic_clean_patch(h, w, rng.raw());
        AnomalySpec spec = spec_template;
        spec.shape = kShapes[i % 3];
        spec.seed = rng.raw();
        AnomalyResult an = synthesize_anomaly(normal, spec);
        s.Y = ImageTensor(an.Y);
        s.target.task = Task::UAD;
        s.target.U_N = normal;
        s.target.U_A = an.U_A;
        s.mask = an.mask;
        data.push_back(std::move(s));
    }
    return data;
}

ImageTensor denoise_output(const DecompositionResult& result) {
    ImageTensor out;
    for (const auto& cd : result.channels)
        out.channels.push_back(
            (cd.L_hat + cd.samples.S_hat).cwiseMax(0.0).cwiseMin(1.0));
    return out;
}

Matrix gaussian_blur(const Matrix& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    Vector kernel(2 * radius + 1);
    for (int t = -radius; t <= radius; ++t)
        kernel(t + radius) = std::exp(-0.5 * t * t / (sigma * sigma));

    const Eigen::Index h = img.rows(), w = img.cols();
    Matrix tmp(h, w), out(h, w);
    for (Eigen::Index i = 0; i < h; ++i) {
        for (Eigen::Index j = 0; j < w; ++j) {
            double acc = 0.0, norm = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                const Eigen::Index jj = j + t;
                if (jj < 0 || jj >= w) continue;
                acc += kernel(t + radius) * img(i, jj);
                norm += kernel(t + radius);
            }
            tmp(i, j) = acc / norm;
        }
    }
    for (Eigen::Index j = 0; j < w; ++j) {
        for (Eigen::Index i = 0; i < h; ++i) {
            double acc = 0.0, norm = 0.0;
            for (int t = -radius; t <= radius; ++t) {
                const Eigen::Index ii = i + t;
                if (ii < 0 || ii >= h) continue;
                acc += kernel(t + radius) * tmp(ii, j);
                norm += kernel(t + radius);
            }
            out(i, j) = acc / norm;
        }
    }
    return out;
}

Matrix anomaly_map(const DecompositionResult& result, AnomalyScoreKind kind, double blur_sigma) {
    const Eigen::Index h = result.ch(0).post.S.mean.rows();
    const Eigen::Index w = result.ch(0).post.S.mean.cols();
    Matrix score = Matrix::Zero(h, w);
    for (const auto& cd : result.channels) {
        switch (kind) {
            case AnomalyScoreKind::AbsMu:
                score += cd.post.S.mean.cwiseAbs();
                break;
            case AnomalyScoreKind::SigmaWeighted:
                score += (cd.post.S.mean.array().abs() /
                          (cd.post.S.std.array() + 1e-12))
                             .matrix();
                break;
            case AnomalyScoreKind::OmegaBased:
                score += gamma_mean(cd.leaf.omega).array().inverse().matrix();
                break;
        }
    }
    score /= static_cast<double>(result.channels.size());
    score = gaussian_blur(score, blur_sigma);
    const double lo = score.minCoeff(), hi = score.maxCoeff();
    if (hi - lo < 1e-15) return Matrix::Zero(h, w);
    return ((score.array() - lo) / (hi - lo)).matrix();
}

double psnr(const Matrix& x, const Matrix& y, double data_range) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("psnr: shape mismatch");
    const double mse = (x - y).squaredNorm() / static_cast<double>(x.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(data_range * data_range / mse);
}

double psnr(const ImageTensor& x, const ImageTensor& y, double data_range) {
    if (x.num_channels() != y.num_channels())
        throw std::invalid_argument("psnr: channel mismatch");
    double sq = 0.0;
    Eigen::Index n = 0;
    for (int c = 0; c < x.num_channels(); ++c) {
        sq += (x.ch(c) - y.ch(c)).squaredNorm();
        n += x.ch(c).size();
    }
    const double mse = sq / static_cast<double>(n);
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

constexpr int kSsimWindow = 11;

Matrix ssim_window_kernel() {
    Matrix k(kSsimWindow, kSsimWindow);
    const double sigma = 1.5;
    const int r = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
            k(i + r, j + r) = std::exp(-0.5 * (i * i + j * j) / (sigma * sigma));
            sum += k(i + r, j + r);
        }
    return k / sum;
}

} // namespace

double ssim(const Matrix& x, const Matrix& y, double data_range) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("ssim: shape mismatch");
    if (x.rows() < kSsimWindow || x.cols() < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    static const Matrix kernel = ssim_window_kernel();
    const double c1 = std::pow(0.01 * data_range, 2);
    const double c2 = std::pow(0.03 * data_range, 2);
    const Eigen::Index h = x.rows(), w = x.cols();
    const int r = kSsimWindow / 2;
    double acc = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index i = r; i < h - r; ++i) {
        for (Eigen::Index j = r; j < w - r; ++j) {
            double mx = 0, my = 0;
            for (int a = -r; a <= r; ++a)
                for (int b = -r; b <= r; ++b) {
                    const double kw = kernel(a + r, b + r);
                    mx += kw * x(i + a, j + b);
                    my += kw * y(i + a, j + b);
                }
            double vx = 0, vy = 0, cov = 0;
            for (int a = -r; a <= r; ++a)
                for (int b = -r; b <= r; ++b) {
                    const double kw = kernel(a + r, b + r);
                    const double dx = x(i + a, j + b) - mx;
                    const double dy = y(i + a, j + b) - my;
                    vx += kw * dx * dx;
                    vy += kw * dy * dy;
                    cov += kw * dx * dy;
                }
            acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

double ssim(const ImageTensor& x, const ImageTensor& y, double data_range) {
    if (x.num_channels() != y.num_channels())
        throw std::invalid_argument("ssim: channel mismatch");
    double acc = 0.0;
    for (int c = 0; c < x.num_channels(); ++c) acc += ssim(x.ch(c), y.ch(c), data_range);
    return acc / x.num_channels();
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("auroc: size mismatch");
    const auto n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // midranks for ties
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    std::int64_t n_pos = 0, n_neg = 0;
    for (size_t k = 0; k < n; ++k) {
        if (labels[k] != 0) {
            rank_sum_pos += rank[k];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc: undefined for single-class labels");
    return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("average_precision: size mismatch");
    std::int64_t total_pos = 0;
    for (int l : labels) total_pos += (l != 0);
    if (total_pos == 0)
        throw std::invalid_argument("average_precision: undefined without positives");
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    std::int64_t tp = 0, seen = 0;
    double prev_recall = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (size_t k = i; k <= j; ++k) {
            tp += (labels[order[k]] != 0);
            ++seen;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return ap;
}

int rank_indicator(const GammaPosterior& gamma_post, double threshold, double confidence) {
    gamma_post.validate();
    if (!(threshold > 0.0)) throw std::invalid_argument("rank_indicator: threshold must be > 0");
    int n = 0;
    for (Eigen::Index j = 0; j < gamma_post.alpha.cols(); ++j)
        for (Eigen::Index i = 0; i < gamma_post.alpha.rows(); ++i) {
            // p(gamma^{-1} > threshold) = p(gamma < 1/threshold)
            const double p =
                gamma_cdf(gamma_post.alpha(i, j), gamma_post.beta(i, j), 1.0 / threshold);
            if (p > confidence) ++n;
        }
    return n;
}

OodSignature ood_signature(const DecompositionResult& result) {
    return {result.losses.rank, result.losses.sparse};
}

int estimate_rank_svd(const Matrix& image, double energy_tol) {
    Eigen::JacobiSVD<Matrix> svd(image);
    const Vector sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    const double cutoff = energy_tol * sv(0);
    int n = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff && sv(i) > 0.0) ++n;
    return n;
}

} // namespace indeed
