#include "r2t/preprocess.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace r2t {

namespace {

std::string shortest(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (target_size <= 0) throw ConfigError("preprocess target_size must be positive");
  if (!(saturation_factor > 0)) throw ConfigError("preprocess saturation_factor must be > 0");
  if (!(stretch_lo >= 0 && stretch_lo < stretch_hi && stretch_hi <= 100))
    throw ConfigError("preprocess stretch percentiles must satisfy 0 <= lo < hi <= 100");
}

std::string PreprocessConfig::canonical() const {
  return "size=" + std::to_string(target_size) + ";saturation=" + shortest(saturation_factor) +
         ";stretch_lo=" + shortest(stretch_lo) + ";stretch_hi=" + shortest(stretch_hi);
}

std::string PreprocessConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

LetterboxGeometry letterbox_geometry(int64_t height, int64_t width, int64_t target) {
  if (height <= 0 || width <= 0) throw ShapeError("letterbox input must be non-empty");
  if (target <= 0) throw ConfigError("letterbox target must be positive");
  const double scale = static_cast<double>(target) / static_cast<double>(std::max(height, width));
  LetterboxGeometry g;
  g.content_height = std::clamp<int64_t>(std::llround(height * scale), 1, target);
  g.content_width = std::clamp<int64_t>(std::llround(width * scale), 1, target);
  const int64_t pad_h = target - g.content_height;
  const int64_t pad_w = target - g.content_width;
  g.pad_top = pad_h / 2;
  g.pad_bottom = pad_h - g.pad_top;
  g.pad_left = pad_w / 2;
  g.pad_right = pad_w - g.pad_left;
  return g;
}

Letterboxed letterbox(const ImageTensor& image, int64_t target) {
  const auto g = letterbox_geometry(image.height(), image.width(), target);
  auto content = image.data();
  if (g.content_height != image.height() || g.content_width != image.width()) {
    namespace F = torch::nn::functional;
    content = F::interpolate(content.unsqueeze(0),
                             F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{g.content_height, g.content_width})
                                 .mode(torch::kBilinear)
                                 .align_corners(false))
                  .squeeze(0);
  }
  auto canvas = torch::zeros({image.channels(), target, target}, torch::kFloat32);
  using torch::indexing::Slice;
  canvas.index_put_({Slice(), Slice(g.pad_top, g.pad_top + g.content_height),
                     Slice(g.pad_left, g.pad_left + g.content_width)},
                    content);
  auto mask = torch::zeros({target, target}, torch::kBool);
  mask.index_put_({Slice(g.pad_top, g.pad_top + g.content_height),
                   Slice(g.pad_left, g.pad_left + g.content_width)},
                  true);
  return {ImageTensor::clamped(canvas, image.range()), mask, g};
}

ImageTensor saturation_boost(const ImageTensor& rgb, double factor) {
  if (rgb.channels() != 3) throw ShapeError("saturation_boost needs a 3-channel image");
  if (!(factor > 0)) throw ConfigError("saturation factor must be > 0");
  const auto x = rgb.data().to(torch::kFloat64);
  const auto value = std::get<0>(x.max(0, /*keepdim=*/true));
  const auto minimum = std::get<0>(x.min(0, /*keepdim=*/true));
  const auto chroma = value - minimum;
  const auto positive = value > 0;
  const auto sat = torch::where(positive, chroma / value.clamp_min(1e-12), torch::zeros_like(value));
  const auto boosted = (sat * factor).clamp(0.0, 1.0);
  // Moving every channel away from V by S'/S scales saturation and keeps hue
  // and value fixed.
  const auto ratio =
      torch::where(sat > 0, boosted / sat.clamp_min(1e-12), torch::ones_like(sat));
  const auto out = value - (value - x) * ratio;
  return ImageTensor::clamped(out.to(torch::kFloat32), rgb.range());
}

double percentile(const torch::Tensor& values, double pct) {
  auto flat = values.reshape({-1}).to(torch::kFloat64);
  const int64_t n = flat.numel();
  if (n == 0) throw std::invalid_argument("percentile of an empty set");
  auto sorted = std::get<0>(flat.sort());
  const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<int64_t>(std::floor(pos));
  const auto hi = std::min<int64_t>(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  const double a = sorted[lo].item<double>();
  const double b = sorted[hi].item<double>();
  return a + (b - a) * frac;
}

ImageTensor contrast_stretch(const ImageTensor& image, double lo, double hi,
                             const torch::Tensor& mask) {
  if (!(lo < hi)) throw ConfigError("contrast_stretch needs lo < hi");
  image.require(RangeTag::Raw0To255, "contrast_stretch");
  auto out = image.data().clone();
  for (int64_t c = 0; c < image.channels(); ++c) {
    auto channel = image.data()[c];
    auto sample = mask.defined() ? channel.masked_select(mask) : channel.reshape({-1});
    if (sample.numel() == 0) continue;
    const double p_lo = percentile(sample, lo);
    const double p_hi = percentile(sample, hi);
    if (p_hi - p_lo < 1.0) continue;
    out[c] = ((channel.to(torch::kFloat64) - p_lo) * (255.0 / (p_hi - p_lo)))
                 .clamp(0.0, 255.0)
                 .to(torch::kFloat32);
  }
  return ImageTensor(out, RangeTag::Raw0To255);
}

ImageTensor normalize_to_pm1(const ImageTensor& image) {
  image.require(RangeTag::Raw0To255, "normalize_to_pm1");
  return ImageTensor::clamped(image.data() / 127.5f - 1.0f, RangeTag::SignedPm1);
}

ImageTensor condition_rgb(const ImageTensor& rgb, const PreprocessConfig& cfg) {
  cfg.validate();
  rgb.require(RangeTag::Raw0To255, "preprocess");
  if (rgb.channels() != 3) throw ShapeError("preprocess expects a 3-channel RGB image");
  auto boxed = letterbox(rgb, cfg.target_size);
  auto saturated = saturation_boost(boxed.image, cfg.saturation_factor);
  return contrast_stretch(saturated, cfg.stretch_lo, cfg.stretch_hi, boxed.content_mask);
}

ImageTensor preprocess_pipeline(const ImageTensor& rgb, const PreprocessConfig& cfg) {
  return normalize_to_pm1(condition_rgb(rgb, cfg));
}

ImageTensor prepare_thermal(const ImageTensor& thermal, int64_t target) {
  if (thermal.channels() != 1) throw ShapeError("thermal map must be single-channel");
  ImageTensor unit = thermal;
  if (thermal.range() == RangeTag::Raw0To255)
    unit = ImageTensor(thermal.data() / 255.0f, RangeTag::Unit0To1);
  unit.require(RangeTag::Unit0To1, "prepare_thermal");
  return letterbox(unit, target).image;
}

}  // namespace r2t
