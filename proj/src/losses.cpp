#include "r2t/losses.hpp"

#include <cmath>

namespace r2t {

namespace F = torch::nn::functional;

namespace {

torch::Tensor as_batch(const torch::Tensor& x, const char* where) {
  if (x.dim() == 3) return x.unsqueeze(0);
  if (x.dim() == 4) return x;
  throw ShapeError(std::string(where) + ": expected [N,C,H,W] or [C,H,W], got " +
                   c10::str(x.sizes()));
}

std::pair<torch::Tensor, torch::Tensor> batch_pair(const torch::Tensor& pred,
                                                   const torch::Tensor& target,
                                                   const char* where) {
  auto p = as_batch(pred, where);
  auto t = as_batch(target, where);
  if (!p.sizes().equals(t.sizes()))
    throw ShapeError(std::string(where) + ": pred " + c10::str(p.sizes()) + " vs target " +
                     c10::str(t.sizes()));
  return {p, t.to(p.dtype())};
}

torch::Tensor gaussian_1d(int64_t size, double sigma, torch::Dtype dtype) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = static_cast<double>(size - 1) / 2.0;
  double sum = 0.0;
  for (int64_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return torch::tensor(w, torch::kFloat64).to(dtype);
}

// Valid (unpadded) separable Gaussian filter, per channel.
torch::Tensor filter_valid(const torch::Tensor& x, const torch::Tensor& g) {
  const int64_t c = x.size(1);
  const int64_t k = g.size(0);
  auto row = g.view({1, 1, 1, k}).expand({c, 1, 1, k});
  auto col = g.view({1, 1, k, 1}).expand({c, 1, k, 1});
  auto h = F::conv2d(x, row, F::Conv2dFuncOptions().groups(c));
  return F::conv2d(h, col, F::Conv2dFuncOptions().groups(c));
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {charbonnier, msssim, lpips, gradient, stats})
    if (!(w >= 0.0)) throw ConfigError("loss weights must all be >= 0");
}

torch::Tensor charbonnier(const torch::Tensor& pred, const torch::Tensor& target, double eps) {
  auto [p, t] = batch_pair(pred, target, "charbonnier");
  return ((p - t).pow(2) + eps * eps).sqrt().mean();
}

SsimParts ssim_parts(const torch::Tensor& x, const torch::Tensor& y, const SsimOptions& opt) {
  auto g = gaussian_1d(opt.window, opt.sigma, x.scalar_type());
  const double c1 = std::pow(opt.k1 * opt.data_range, 2);
  const double c2 = std::pow(opt.k2 * opt.data_range, 2);
  auto mu_x = filter_valid(x, g);
  auto mu_y = filter_valid(y, g);
  auto mu_xx = mu_x * mu_x, mu_yy = mu_y * mu_y, mu_xy = mu_x * mu_y;
  auto s_xx = filter_valid(x * x, g) - mu_xx;
  auto s_yy = filter_valid(y * y, g) - mu_yy;
  auto s_xy = filter_valid(x * y, g) - mu_xy;
  auto cs_map = (2.0 * s_xy + c2) / (s_xx + s_yy + c2);
  auto ssim_map = (2.0 * mu_xy + c1) / (mu_xx + mu_yy + c1) * cs_map;
  return {ssim_map.flatten(1).mean(1), cs_map.flatten(1).mean(1)};
}

int64_t ms_ssim_levels(int64_t min_side, int64_t window) {
  int64_t levels = 0;
  for (int64_t side = min_side; levels < 5 && side >= window; side /= 2) ++levels;
  return levels;
}

torch::Tensor ms_ssim(const torch::Tensor& pred, const torch::Tensor& target,
                      const SsimOptions& opt) {
  auto [p, t] = batch_pair(pred, target, "ms_ssim");
  const int64_t min_side = std::min(p.size(2), p.size(3));
  if (min_side < 3)
    throw ShapeError("ms_ssim: image " + c10::str(p.sizes()) + " too small for any SSIM window");
  SsimOptions o = opt;
  int64_t levels = ms_ssim_levels(min_side, o.window);
  if (levels == 0) {
    o.window = min_side % 2 == 1 ? min_side : min_side - 1;
    levels = 1;
  }
  double weight_sum = 0.0;
  for (int64_t l = 0; l < levels; ++l) weight_sum += kMsSsimWeights[l];

  // A non-positive per-scale term zeroes the product. The power is taken of
  // a floored copy so its gradient stays finite; the mask carries no grad.
  constexpr double kFloor = 1e-8;
  torch::Tensor result;
  auto x = p, y = t;
  for (int64_t l = 0; l < levels; ++l) {
    const auto parts = ssim_parts(x, y, o);
    const double w = kMsSsimWeights[l] / weight_sum;
    const auto& term = l + 1 == levels ? parts.ssim : parts.cs;
    auto factor = term.clamp_min(kFloor).pow(w) * (term > 0).to(term.dtype());
    result = result.defined() ? result * factor : factor;
    if (l + 1 < levels) {
      x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2).stride(2));
      y = F::avg_pool2d(y, F::AvgPool2dFuncOptions(2).stride(2));
    }
  }
  return result;
}

torch::Tensor msssim_term(const torch::Tensor& pred, const torch::Tensor& target) {
  return 1.0 - ms_ssim(pred, target).mean();
}

std::pair<torch::Tensor, torch::Tensor> sobel(const torch::Tensor& x) {
  auto b = as_batch(x, "sobel");
  if (b.size(2) < 3 || b.size(3) < 3) throw ShapeError("sobel needs H,W >= 3");
  const int64_t c = b.size(1);
  auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, b.dtype()).view({1, 1, 3, 3});
  auto ky = kx.transpose(2, 3).contiguous();
  auto padded = F::pad(b, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
  auto opts = F::Conv2dFuncOptions().groups(c);
  return {F::conv2d(padded, kx.expand({c, 1, 3, 3}), opts),
          F::conv2d(padded, ky.expand({c, 1, 3, 3}), opts)};
}

torch::Tensor grad_term(const torch::Tensor& pred, const torch::Tensor& target) {
  auto [p, t] = batch_pair(pred, target, "grad_term");
  auto [px, py] = sobel(p);
  auto [tx, ty] = sobel(t);
  return 0.5 * ((px - tx).abs().mean() + (py - ty).abs().mean());
}

torch::Tensor stats_term(const torch::Tensor& pred, const torch::Tensor& target) {
  auto [p, t] = batch_pair(pred, target, "stats_term");
  auto pf = p.flatten(1), tf = t.flatten(1);
  auto pm = pf.mean(1), tm = tf.mean(1);
  // The tiny offset keeps d(std)/dx finite on constant images.
  auto ps = ((pf - pm.unsqueeze(1)).pow(2).mean(1) + 1e-12).sqrt();
  auto ts = ((tf - tm.unsqueeze(1)).pow(2).mean(1) + 1e-12).sqrt();
  return ((pm - tm).abs() + (ps - ts).abs()).mean();
}

torch::Tensor lpips_term(LpipsNet& net, const torch::Tensor& pred, const torch::Tensor& target) {
  auto [p, t] = batch_pair(pred, target, "lpips_term");
  return net->forward(p, t).mean();
}

LossBreakdown combined_loss(const torch::Tensor& pred, const torch::Tensor& target,
                            const LossWeights& weights, LpipsNet* lpips, double eps) {
  weights.validate();
  if (weights.lpips > 0.0 && !lpips)
    throw ConfigError("combined_loss: LPIPS weight is non-zero but no LPIPS network was given");
  auto [p, t] = batch_pair(pred, target, "combined_loss");
  auto charb = charbonnier(p, t, eps);
  auto ms = msssim_term(p, t);
  auto grad = grad_term(p, t);
  auto stats = stats_term(p, t);
  auto total = weights.charbonnier * charb + weights.msssim * ms + weights.gradient * grad +
               weights.stats * stats;
  LossBreakdown out;
  if (lpips) {
    auto lp = lpips_term(*lpips, p, t);
    total = total + weights.lpips * lp;
    out.lpips_term = lp.item<double>();
  }
  out.total = total;
  out.charbonnier = charb.item<double>();
  out.msssim_term = ms.item<double>();
  out.grad_term = grad.item<double>();
  out.stats_term = stats.item<double>();
  out.total_value = total.item<double>();
  return out;
}

double psnr(const torch::Tensor& pred, const torch::Tensor& target, double data_range) {
  auto [p, t] = batch_pair(pred.to(torch::kFloat64), target, "psnr");
  const double mse = (p - t).pow(2).mean().item<double>();
  if (mse == 0.0) return kInfinity;
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const torch::Tensor& pred, const torch::Tensor& target) {
  auto [p, t] = batch_pair(pred.to(torch::kFloat64), target, "ssim");
  if (p.size(2) < 11 || p.size(3) < 11)
    throw ShapeError("ssim needs H,W >= 11, got " + c10::str(p.sizes()));
  torch::NoGradGuard no_grad;
  return ssim_parts(p, t).ssim.mean().item<double>();
}

double lpips_metric(LpipsNet& net, const torch::Tensor& pred, const torch::Tensor& target) {
  torch::NoGradGuard no_grad;
  return lpips_term(net, pred, target).item<double>();
}

}  // namespace r2t
