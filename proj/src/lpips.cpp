#include "r2t/lpips.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>

namespace r2t {

namespace F = torch::nn::functional;

namespace {

struct ConvSpec {
  int64_t in, out, kernel, stride, padding;
  int feature_index;  // position in torchvision's alexnet.features
};

// AlexNet feature trunk up to relu5.
constexpr ConvSpec kConvs[] = {
    {3, 64, 11, 4, 2, 0},   {64, 192, 5, 1, 2, 3},  {192, 384, 3, 1, 1, 6},
    {384, 256, 3, 1, 1, 8}, {256, 256, 3, 1, 1, 10},
};

// Average magnitude of the pretrained linear heads, per stage; the surrogate
// draws from [0, 2m] so its distances land on a similar scale.
constexpr double kLinMean[] = {0.04, 0.08, 0.10, 0.10, 0.08};

std::string conv_key(std::size_t i, const char* what) {
  return "features." + std::to_string(kConvs[i].feature_index) + "." + what;
}

std::string lin_key(std::size_t i) { return "lin" + std::to_string(i) + ".weight"; }

std::string weights_help() {
  return "LPIPS needs AlexNet + linear-head weights. Produce them with\n"
         "  python3 tools/export_lpips_weights.py --out lpips_alex.pt\n"
         "(downloads torchvision's AlexNet and the lpips v0.1 alex heads), then\n"
         "pass --lpips-weights lpips_alex.pt or set R2T_LPIPS_WEIGHTS. For offline\n"
         "smoke runs `r2t lpips-weights --surrogate --out F` writes a seeded\n"
         "stand-in backbone.";
}

torch::Tensor unit_to_backbone(const torch::Tensor& x, const torch::Tensor& shift,
                               const torch::Tensor& scale) {
  if (x.dim() != 4 || (x.size(1) != 1 && x.size(1) != 3))
    throw ShapeError("LPIPS expects [N,1,H,W] or [N,3,H,W], got " + c10::str(x.sizes()));
  auto rgb = x.size(1) == 1 ? x.expand({x.size(0), 3, x.size(2), x.size(3)}) : x;
  return (rgb * 2.0 - 1.0 - shift.to(x.dtype())) / scale.to(x.dtype());
}

torch::Tensor unit_normalize(const torch::Tensor& f) {
  // Clamping before the sqrt keeps the backward pass finite where every
  // channel is dead.
  auto norm = f.pow(2).sum(1, /*keepdim=*/true).clamp_min(1e-20).sqrt();
  return f / (norm + 1e-10);
}

}  // namespace

LpipsNetImpl::LpipsNetImpl() {
  for (std::size_t i = 0; i < std::size(kConvs); ++i) {
    const auto& s = kConvs[i];
    convs_.push_back(register_module(
        "conv" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(s.in, s.out, s.kernel)
                              .stride(s.stride)
                              .padding(s.padding))));
    lins_.push_back(register_module(
        "lin" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(s.out, 1, 1).bias(false))));
  }
  shift_ = register_buffer("shift", torch::tensor({-0.030, -0.088, -0.188}).view({1, 3, 1, 1}));
  scale_ = register_buffer("scale", torch::tensor({0.458, 0.448, 0.450}).view({1, 3, 1, 1}));
  torch::NoGradGuard no_grad;
  for (auto& p : parameters()) p.zero_();
}

torch::Tensor LpipsNetImpl::forward(const torch::Tensor& a, const torch::Tensor& b) {
  if (!a.sizes().equals(b.sizes()))
    throw ShapeError("LPIPS inputs differ in shape: " + c10::str(a.sizes()) + " vs " +
                     c10::str(b.sizes()));
  if (a.dim() == 4 && std::min(a.size(2), a.size(3)) < kMinSide)
    throw ShapeError("LPIPS needs H,W >= " + std::to_string(kMinSide) + ", got " +
                     c10::str(a.sizes()));
  auto x = unit_to_backbone(a, shift_, scale_);
  auto y = unit_to_backbone(b, shift_, scale_);
  const int64_t n = a.size(0);
  // Run both images through the trunk together.
  auto h = torch::cat({x, y}, 0);
  torch::Tensor total;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i == 1 || i == 2) h = F::max_pool2d(h, F::MaxPool2dFuncOptions(3).stride(2));
    h = torch::relu(convs_[i]->forward(h));
    auto d = (unit_normalize(h.narrow(0, 0, n)) - unit_normalize(h.narrow(0, n, n))).pow(2);
    auto layer = lins_[i]->forward(d).mean({1, 2, 3});
    total = total.defined() ? total + layer : layer;
  }
  return total;
}

std::vector<std::string> LpipsNetImpl::weight_names() {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < std::size(kConvs); ++i) {
    names.push_back(conv_key(i, "weight"));
    names.push_back(conv_key(i, "bias"));
  }
  for (std::size_t i = 0; i < std::size(kConvs); ++i) names.push_back(lin_key(i));
  return names;
}

void LpipsNetImpl::load_weights(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LpipsWeightsError("LPIPS weights not found at '" + path.string() + "'.\n" + weights_help());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  c10::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const std::exception& e) {
    throw LpipsWeightsError("cannot parse LPIPS weights '" + path.string() + "': " + e.what());
  }
  if (!value.isGenericDict())
    throw LpipsWeightsError("LPIPS weights '" + path.string() + "' is not a tensor dict");
  auto dict = value.toGenericDict();
  auto fetch = [&](const std::string& key, const torch::Tensor& dst) {
    auto it = dict.find(key);
    if (it == dict.end())
      throw LpipsWeightsError("LPIPS weights '" + path.string() + "' lack '" + key + "'.\n" +
                              weights_help());
    auto t = it->value().toTensor();
    if (!t.sizes().equals(dst.sizes()))
      throw LpipsWeightsError("LPIPS weight '" + key + "' has shape " + c10::str(t.sizes()) +
                              ", expected " + c10::str(dst.sizes()));
    dst.copy_(t.to(dst.dtype()));
  };
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    fetch(conv_key(i, "weight"), convs_[i]->weight);
    fetch(conv_key(i, "bias"), convs_[i]->bias);
    fetch(lin_key(i), lins_[i]->weight);
  }
}

void LpipsNetImpl::save_weights(const fs::path& path) const {
  c10::Dict<std::string, torch::Tensor> dict;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    dict.insert(conv_key(i, "weight"), convs_[i]->weight.detach().to(torch::kFloat32).contiguous());
    dict.insert(conv_key(i, "bias"), convs_[i]->bias.detach().to(torch::kFloat32).contiguous());
    dict.insert(lin_key(i), lins_[i]->weight.detach().to(torch::kFloat32).contiguous());
  }
  const auto bytes = torch::pickle_save(dict);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

void LpipsNetImpl::fill_surrogate(uint64_t seed) {
  // Everything is drawn on the host from a fixed-algorithm engine so the
  // surrogate is identical across platforms and libtorch versions.
  std::mt19937_64 rng(seed);
  auto uniform = [&rng] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
  auto normal = [&] {
    const double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  auto fill = [](const torch::Tensor& dst, auto&& draw) {
    std::vector<float> v(static_cast<std::size_t>(dst.numel()));
    for (auto& x : v) x = static_cast<float>(draw());
    dst.copy_(torch::from_blob(v.data(), dst.sizes(), torch::kFloat32));
  };
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const auto& s = kConvs[i];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(s.in * s.kernel * s.kernel));
    fill(convs_[i]->weight, [&] { return normal() * std_dev; });
    convs_[i]->bias.zero_();
    fill(lins_[i]->weight, [&] { return uniform() * 2.0 * kLinMean[i]; });
  }
}

LpipsNet load_lpips(const fs::path& path) {
  if (path.empty()) throw LpipsWeightsError("no LPIPS weights path given.\n" + weights_help());
  LpipsNet net;
  net->load_weights(path);
  net->eval();
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  return net;
}

LpipsNet make_surrogate_lpips(uint64_t seed) {
  LpipsNet net;
  net->fill_surrogate(seed);
  net->eval();
  for (auto& p : net->parameters()) p.set_requires_grad(false);
  return net;
}

fs::path lpips_weights_from_env() {
  const char* v = std::getenv("R2T_LPIPS_WEIGHTS");
  return v ? fs::path(v) : fs::path();
}

}  // namespace r2t
