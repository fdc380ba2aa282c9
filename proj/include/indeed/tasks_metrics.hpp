#pragma once

#include "indeed/inference_network.hpp"

namespace indeed {

// --- synthetic data -----------------------------------------------------------

/// Additive Gaussian white noise at level sigma, deterministic per seed.
/// Deliberately not clipped.
ImageTensor add_awgn(const ImageTensor& image, double sigma, std::uint64_t seed);
Matrix add_awgn(const Matrix& image, double sigma, std::uint64_t seed);

enum class AnomalyShape { Rectangle, Ellipse, PerlinBlob };

struct AnomalySpec {
    int count_min = 1;
    int count_max = 3;
    AnomalyShape shape = AnomalyShape::Rectangle;
    double intensity_min = 0.0;
    double intensity_max = 1.0;
    double size_min = 0.10; // fraction of min(h, w)
    double size_max = 0.30;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Paste shaped patches of a sampled intensity onto U_N. The additive identity
/// Y = U_N + U_A holds exactly; the mask is the nonzero support of U_A.
struct AnomalyResult {
    Matrix Y;
    Matrix U_A;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
};
AnomalyResult synthesize_anomaly(const Matrix& U_N, const AnomalySpec& spec);

/// One labelled example for either task.
struct TaskSample {
    ImageTensor Y;
    SupervisionTarget target;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask; // UAD only
    double noise_sigma = 0.0;                                // DEN only
};
using Dataset = std::vector<TaskSample>;

/// Clean synthetic patch: clipped low-rank + sparse composition.
Matrix synthetic_clean_patch(int h, int w, std::uint64_t seed);

Dataset make_denoise_dataset(int n, int h, int w, double sigma_min, double sigma_max,
                             std::uint64_t seed);
Dataset make_uad_dataset(int n, int h, int w, const AnomalySpec& spec_template,
                         std::uint64_t seed);

// --- task outputs --------------------------------------------------------------

/// Recovery image clip(L + S, 0, 1).
ImageTensor denoise_output(const DecompositionResult& result);

enum class AnomalyScoreKind { AbsMu, SigmaWeighted, OmegaBased };

/// Min-max-normalized Gaussian-smoothed |mu_S| (default), in [0,1].
Matrix anomaly_map(const DecompositionResult& result,
                   AnomalyScoreKind kind = AnomalyScoreKind::AbsMu, double blur_sigma = 4.0);

/// Separable Gaussian blur with truncated, per-position renormalized kernel.
Matrix gaussian_blur(const Matrix& img, double sigma);

// --- metrics ---------------------------------------------------------------------

/// 10 log10(range^2 / MSE), capped at 100 dB for MSE below 1e-10.
double psnr(const Matrix& x, const Matrix& y, double data_range = 1.0);
double psnr(const ImageTensor& x, const ImageTensor& y, double data_range = 1.0);

/// Windowed SSIM, 11x11 Gaussian window sigma 1.5, k1 0.01, k2 0.03.
/// Multi-channel images are channel-averaged.
double ssim(const Matrix& x, const Matrix& y, double data_range = 1.0);
double ssim(const ImageTensor& x, const ImageTensor& y, double data_range = 1.0);

/// Rank statistic with midrank tie handling. Throws if labels are single-class.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Area under the precision-recall step curve. Throws without positives.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

/// Estimated rank: |{ i : p(gamma_i^{-1} > threshold) > confidence }|.
int rank_indicator(const GammaPosterior& gamma_post, double threshold,
                   double confidence = 0.95);

struct OodSignature {
    double l_rank = 0.0;
    double l_sparse = 0.0;
};
OodSignature ood_signature(const DecompositionResult& result);

/// Number of singular values above energy_tol * sigma_1.
int estimate_rank_svd(const Matrix& image, double energy_tol = 1e-3);

} // namespace indeed
