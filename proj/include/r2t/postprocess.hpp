#pragma once

// Prediction smoothing and false-colour rendering.

#include "r2t/core_types.hpp"

namespace r2t {

struct RenderConfig {
  double blur_sigma = 0.5;
  double norm_lo = 1.0;   // percentile
  double norm_hi = 99.0;  // percentile
  std::string colormap = "inferno";

  void validate() const;
};

/// Normalized taps exp(-d^2 / 2 sigma^2), d in [-r, r], r = ceil(4 sigma).
/// sigma 0 gives the single tap {1}.
std::vector<double> gaussian_kernel1d(double sigma);

/// Separable blur over the last two dims of a [..., H, W] tensor with reflect
/// padding (replicate when the image is narrower than the kernel radius).
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma);
ImageTensor gaussian_blur(const ImageTensor& image, double sigma);

/// Clip to the [lo, hi] percentiles and map them to [0, 1]. A degenerate
/// span yields 0.5 everywhere.
ImageTensor percentile_normalize(const ImageTensor& pred, double lo, double hi);

std::vector<std::string> colormap_names();
/// [256,3] float64 table in [0,1]; throws ConfigError for unknown names.
const torch::Tensor& colormap_table(const std::string& name);

/// Unit0To1 single-channel map -> Raw0To255 RGB by linear interpolation
/// between table entries.
ImageTensor render_colormap(const ImageTensor& unit, const std::string& name);

/// Blur, percentile-normalize and colour a predicted map in one go.
ImageTensor render_prediction(const ImageTensor& pred, const RenderConfig& cfg);

/// Side-by-side panels with a white 4-pixel gutter. All panels Raw0To255,
/// same height; single-channel panels are replicated to RGB.
ImageTensor make_triptych(const std::vector<ImageTensor>& panels);

}  // namespace r2t
