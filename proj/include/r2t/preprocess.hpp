#pragma once

// Deterministic RGB conditioning ahead of the network: letterbox to a square
// canvas, HSV saturation boost, per-channel percentile stretch, and [-1,1]
// normalization. Thermal targets share the letterbox geometry only.

#include "r2t/core_types.hpp"

namespace r2t {

struct PreprocessConfig {
  int64_t target_size = kModelImageSize;
  double saturation_factor = 1.3;
  double stretch_lo = 1.0;   // percentile
  double stretch_hi = 99.0;  // percentile

  void validate() const;
  /// Canonical "key=value;..." text; equal configs give equal strings.
  std::string canonical() const;
  /// 16 hex digits (FNV-1a 64 of canonical()).
  std::string hash() const;
  bool operator==(const PreprocessConfig&) const = default;
};

struct LetterboxGeometry {
  int64_t content_height = 0;
  int64_t content_width = 0;
  int64_t pad_top = 0;
  int64_t pad_left = 0;
  int64_t pad_bottom = 0;
  int64_t pad_right = 0;
};

LetterboxGeometry letterbox_geometry(int64_t height, int64_t width, int64_t target);

struct Letterboxed {
  ImageTensor image;
  torch::Tensor content_mask;  // [H,W] bool, true inside the resized content
  LetterboxGeometry geometry;
};

/// Bilinear resize by target/max(H,W), centered on a zero canvas (odd
/// remainders pad bottom/right). Works for any range tag.
Letterboxed letterbox(const ImageTensor& image, int64_t target);

/// Scales HSV saturation by `factor` (clipped to 1) keeping hue and value.
ImageTensor saturation_boost(const ImageTensor& rgb, double factor);

/// Per-channel affine stretch mapping the lo/hi percentiles to 0/255.
/// Percentiles use linear interpolation over pixels where `mask` is true
/// (all pixels when undefined). Channels whose percentile span is below one
/// intensity level pass through unchanged.
ImageTensor contrast_stretch(const ImageTensor& image, double lo, double hi,
                             const torch::Tensor& mask = {});

ImageTensor normalize_to_pm1(const ImageTensor& image);

/// letterbox -> saturation_boost -> contrast_stretch, still Raw0To255. This is
/// what the `preprocess` command stores on disk.
ImageTensor condition_rgb(const ImageTensor& rgb, const PreprocessConfig& cfg);

/// condition_rgb followed by normalize_to_pm1.
ImageTensor preprocess_pipeline(const ImageTensor& rgb, const PreprocessConfig& cfg);

/// Letterboxes a Unit0To1 (or Raw0To255, rescaled) thermal map to the target.
ImageTensor prepare_thermal(const ImageTensor& thermal, int64_t target);

/// Linear-interpolated percentile (numpy "linear") of a 1-D float tensor.
double percentile(const torch::Tensor& values, double pct);

}  // namespace r2t
