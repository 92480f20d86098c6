#include "r2t/postprocess.hpp"

#include "r2t/preprocess.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace r2t {

namespace detail {
// Generated at configure time from data/colormaps/*.csv.
struct EmbeddedColormap {
  const char* name;
  const char* csv;
};
extern const EmbeddedColormap kEmbeddedColormaps[];
extern const std::size_t kEmbeddedColormapCount;
}  // namespace detail

namespace F = torch::nn::functional;

void RenderConfig::validate() const {
  if (!(blur_sigma >= 0.0)) throw ConfigError("blur_sigma must be >= 0");
  if (!(norm_lo >= 0.0 && norm_lo < norm_hi && norm_hi <= 100.0))
    throw ConfigError("render percentiles must satisfy 0 <= lo < hi <= 100");
  colormap_table(colormap);
}

std::vector<double> gaussian_kernel1d(double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("blur sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  const auto radius = static_cast<int64_t>(std::ceil(4.0 * sigma));
  std::vector<double> k;
  double sum = 0.0;
  for (int64_t d = -radius; d <= radius; ++d) {
    k.push_back(std::exp(-static_cast<double>(d * d) / (2.0 * sigma * sigma)));
    sum += k.back();
  }
  for (auto& v : k) v /= sum;
  return k;
}

torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
  const auto taps = gaussian_kernel1d(sigma);
  if (taps.size() == 1) return x.clone();
  if (x.dim() < 2) throw ShapeError("gaussian_blur needs at least [H,W]");
  const auto sizes = x.sizes().vec();
  const int64_t h = sizes[sizes.size() - 2], w = sizes[sizes.size() - 1];
  const auto r = static_cast<int64_t>(taps.size() / 2);
  auto planes = x.reshape({-1, 1, h, w});
  auto pad = F::PadFuncOptions({r, r, r, r});
  if (r < h && r < w)
    pad.mode(torch::kReflect);
  else
    pad.mode(torch::kReplicate);
  auto padded = F::pad(planes.to(torch::kFloat64), pad);
  auto k = torch::tensor(taps, torch::kFloat64);
  auto out = F::conv2d(padded, k.view({1, 1, 1, -1}));
  out = F::conv2d(out, k.view({1, 1, -1, 1}));
  return out.to(x.scalar_type()).reshape(sizes);
}

ImageTensor gaussian_blur(const ImageTensor& image, double sigma) {
  // A normalized non-negative kernel cannot leave the input's range, so the
  // clamp only absorbs rounding.
  return ImageTensor::clamped(gaussian_blur(image.data(), sigma), image.range());
}

ImageTensor percentile_normalize(const ImageTensor& pred, double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("percentile_normalize needs lo < hi");
  const auto x = pred.data().to(torch::kFloat64);
  const double p_lo = percentile(x, lo);
  const double p_hi = percentile(x, hi);
  if (!(p_hi > p_lo))
    return ImageTensor(torch::full_like(pred.data(), 0.5f), RangeTag::Unit0To1);
  auto out = ((x.clamp(p_lo, p_hi) - p_lo) / (p_hi - p_lo)).to(torch::kFloat32);
  return ImageTensor::clamped(out, RangeTag::Unit0To1);
}

namespace {

torch::Tensor parse_table(const std::string& name, const char* csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
  }
  if (values.size() != 256 * 3)
    throw ConfigError("colormap '" + name + "' table must have 256 rgb rows");
  return torch::tensor(values, torch::kFloat64).view({256, 3});
}

const std::map<std::string, torch::Tensor>& tables() {
  static const auto* loaded = [] {
    auto* m = new std::map<std::string, torch::Tensor>();
    for (std::size_t i = 0; i < detail::kEmbeddedColormapCount; ++i) {
      const auto& e = detail::kEmbeddedColormaps[i];
      (*m)[e.name] = parse_table(e.name, e.csv);
    }
    return m;
  }();
  return *loaded;
}

}  // namespace

std::vector<std::string> colormap_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : tables()) names.push_back(name);
  return names;
}

const torch::Tensor& colormap_table(const std::string& name) {
  const auto& t = tables();
  auto it = t.find(name);
  if (it == t.end()) {
    std::string known;
    for (const auto& [n, _] : t) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown colormap '" + name + "' (available: " + known + ")");
  }
  return it->second;
}

ImageTensor render_colormap(const ImageTensor& unit, const std::string& name) {
  unit.require(RangeTag::Unit0To1, "render_colormap");
  if (unit.channels() != 1) throw ShapeError("render_colormap expects a single-channel map");
  const auto& table = colormap_table(name);
  auto pos = unit.data()[0].to(torch::kFloat64) * 255.0;
  // Inputs that sit on a table entry up to float rounding hit it exactly.
  auto snapped = pos.round();
  pos = torch::where((pos - snapped).abs() < 1e-4, snapped, pos);
  auto lo = pos.floor().clamp(0, 255).to(torch::kLong);
  auto hi = (lo + 1).clamp_max(255);
  auto frac = (pos - lo.to(torch::kFloat64)).unsqueeze(-1);
  auto c_lo = table.index({lo.flatten()}).view({unit.height(), unit.width(), 3});
  auto c_hi = table.index({hi.flatten()}).view({unit.height(), unit.width(), 3});
  auto rgb = (c_lo + (c_hi - c_lo) * frac) * 255.0;
  return ImageTensor::clamped(rgb.permute({2, 0, 1}).contiguous().to(torch::kFloat32),
                              RangeTag::Raw0To255);
}

ImageTensor render_prediction(const ImageTensor& pred, const RenderConfig& cfg) {
  cfg.validate();
  auto blurred = gaussian_blur(pred, cfg.blur_sigma);
  return render_colormap(percentile_normalize(blurred, cfg.norm_lo, cfg.norm_hi), cfg.colormap);
}

ImageTensor make_triptych(const std::vector<ImageTensor>& panels) {
  if (panels.empty()) throw ShapeError("make_triptych needs at least one panel");
  constexpr int64_t kGutter = 4;
  const int64_t h = panels.front().height();
  std::vector<torch::Tensor> parts;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const auto& p = panels[i];
    p.require(RangeTag::Raw0To255, "make_triptych");
    if (p.height() != h) throw ShapeError("triptych panels must share a height");
    if (i > 0) parts.push_back(torch::full({3, h, kGutter}, 255.0f));
    parts.push_back(p.channels() == 1 ? p.data().expand({3, h, p.width()}) : p.data());
  }
  return ImageTensor(torch::cat(parts, 2).contiguous(), RangeTag::Raw0To255);
}

}  // namespace r2t
