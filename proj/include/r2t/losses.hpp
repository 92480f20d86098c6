#pragma once

// Composite training loss
//   w1*Charbonnier + w2*(1 - MS-SSIM) + w3*LPIPS + w4*Sobel-L1 + w5*stats
// and the evaluation metrics PSNR, SSIM and LPIPS.
//
// Tensors are [N,1,H,W] (or a single [1,H,W] map) in [0,1]. Loss terms are
// differentiable scalar tensors averaged over the batch; metrics are doubles
// computed per image.

#include "r2t/lpips.hpp"

#include <limits>

namespace r2t {

struct LossWeights {
  double charbonnier = 1.0;
  double msssim = 0.4;
  double lpips = 0.3;
  double gradient = 0.1;
  double stats = 0.05;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  torch::Tensor total;  // differentiable
  double charbonnier = 0.0;
  double msssim_term = 0.0;
  double lpips_term = 0.0;
  double grad_term = 0.0;
  double stats_term = 0.0;
  double total_value = 0.0;
};

inline constexpr double kCharbonnierEps = 1e-3;

/// mean sqrt((pred - target)^2 + eps^2)
torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& target,
                          double eps = kCharbonnierEps);

struct SsimOptions {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Per-image (ssim, contrast-structure) means over the valid-window map.
struct SsimParts {
  torch::Tensor ssim;  // [N]
  torch::Tensor cs;    // [N]
};
SsimParts ssim_parts(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt = {});

/// Standard scale weights for 5-level MS-SSIM.
inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Number of dyadic scales usable on an image whose short side is
/// `min_side`: every scale must still fit one full window.
int64_t ms_ssim_levels(int64_t min_side, int64_t window = 11);

/// Per-image MS-SSIM [N]. Images shorter than the window use one scale with
/// the window shrunk to the largest odd size that fits (>= 3).
torch::Tensor ms_ssim(const torch::Tensor& pred, const torch::Tensor& target,
                      const SsimOptions& opt = {});
/// 1 - mean MS-SSIM
torch::Tensor msssim_term(const torch::Tensor& pred, const torch::Tensor& target);

/// Sobel x/y responses with reflect padding, [N,1,H,W] each.
std::pair<torch::Tensor, torch::Tensor> sobel(const torch::Tensor& x);
/// 0.5 * (mean|Gx(p) - Gx(t)| + mean|Gy(p) - Gy(t)|)
torch::Tensor grad_term(const torch::Tensor& pred, const torch::Tensor& target);
/// Batch mean of |mean(p) - mean(t)| + |std(p) - std(t)| (population std).
torch::Tensor stats_term(const torch::Tensor& pred, const torch::Tensor& target);
/// Batch-mean LPIPS distance.
torch::Tensor lpips_term(LpipsNet& net, const torch::Tensor& pred, const torch::Tensor& target);

/// Weighted sum of the five terms. `lpips` may be null only when the LPIPS
/// weight is zero.
LossBreakdown combined_loss(const torch::Tensor& pred, const torch::Tensor& target,
                            const LossWeights& weights, LpipsNet* lpips,
                            double eps = kCharbonnierEps);

// Metrics, single image pair each ---------------------------------------------

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// 10 log10(range^2 / MSE); +inf when MSE is 0.
double psnr(const torch::Tensor& pred, const torch::Tensor& target, double data_range = 1.0);
/// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), H,W >= 11.
double ssim(const torch::Tensor& pred, const torch::Tensor& target);
double lpips_metric(LpipsNet& net, const torch::Tensor& pred, const torch::Tensor& target);

}  // namespace r2t
