#include "r2t/gan.hpp"

#include <cmath>

namespace r2t {

namespace F = torch::nn::functional;

namespace {

constexpr int64_t kPadding = 1;

struct LayerGeom {
  int64_t kernel, stride;
};

std::vector<LayerGeom> layer_stack(const PatchGANConfig& cfg) {
  std::vector<LayerGeom> out;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i)
    out.push_back({cfg.kernel, i + 1 < cfg.widths.size() ? 2 : 1});
  out.push_back({cfg.kernel, 1});  // 1-channel logit layer
  return out;
}

}  // namespace

void PatchGANConfig::validate() const {
  if (widths.size() < 2) throw ConfigError("PatchGAN needs at least two blocks");
  if (in_channels <= 0 || kernel <= 0) throw ConfigError("PatchGAN channels/kernel must be positive");
}

int64_t PatchGANConfig::receptive_field() const {
  int64_t field = 1, jump = 1;
  for (const auto& l : layer_stack(*this)) {
    field += (l.kernel - 1) * jump;
    jump *= l.stride;
  }
  return field;
}

int64_t PatchGANConfig::output_size(int64_t input_size) const {
  int64_t n = input_size;
  for (const auto& l : layer_stack(*this)) n = (n + 2 * kPadding - l.kernel) / l.stride + 1;
  return n;
}

int64_t PatchGANConfig::window_start(int64_t index) const {
  auto layers = layer_stack(*this);
  int64_t start = index;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) start = start * it->stride - kPadding;
  return start;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(PatchGANConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  net_ = torch::nn::Sequential();
  const auto layers = layer_stack(cfg_);
  int64_t ch = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    const bool first = i == 0;
    net_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, cfg_.widths[i], cfg_.kernel)
                                          .stride(layers[i].stride)
                                          .padding(kPadding)
                                          .bias(first)));
    if (!first) net_->push_back(torch::nn::BatchNorm2d(cfg_.widths[i]));
    net_->push_back(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)));
    ch = cfg_.widths[i];
  }
  net_->push_back(torch::nn::Conv2d(
      torch::nn::Conv2dOptions(ch, 1, cfg_.kernel).stride(1).padding(kPadding)));
  register_module("net", net_);

  torch::NoGradGuard no_grad;
  apply([](torch::nn::Module& m) {
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
      torch::nn::init::normal_(conv->weight, 0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* bn = m.as<torch::nn::BatchNorm2d>()) {
      torch::nn::init::normal_(bn->weight, 1.0, 0.02);
      bn->bias.zero_();
    }
  });
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& rgb, const torch::Tensor& thermal) {
  if (rgb.dim() != 4 || thermal.dim() != 4)
    throw ShapeError("discriminator expects [N,C,H,W] inputs");
  if (rgb.size(0) != thermal.size(0) || rgb.size(2) != thermal.size(2) ||
      rgb.size(3) != thermal.size(3))
    throw ShapeError("discriminator rgb " + c10::str(rgb.sizes()) + " and thermal " +
                     c10::str(thermal.sizes()) + " differ in batch or spatial size");
  if (rgb.size(1) + thermal.size(1) != cfg_.in_channels)
    throw ShapeError("discriminator expects " + std::to_string(cfg_.in_channels) +
                     " input channels in total");
  return net_->forward(torch::cat({rgb, thermal * 2.0 - 1.0}, 1));
}

GeneratorLoss generator_loss(const torch::Tensor& logits_on_fake, const torch::Tensor& fake,
                             const torch::Tensor& real, double lambda_l1) {
  if (lambda_l1 < 0) throw ConfigError("lambda_l1 must be >= 0");
  if (!fake.sizes().equals(real.sizes())) throw ShapeError("generator_loss: fake/real shape mismatch");
  GeneratorLoss out;
  out.adversarial = F::binary_cross_entropy_with_logits(logits_on_fake,
                                                        torch::ones_like(logits_on_fake));
  out.l1 = (fake - real).abs().mean();
  out.total = out.adversarial + lambda_l1 * out.l1;
  return out;
}

torch::Tensor discriminator_loss(const torch::Tensor& logits_real, const torch::Tensor& logits_fake) {
  if (!logits_real.sizes().equals(logits_fake.sizes()))
    throw ShapeError("discriminator_loss: logit maps differ in shape");
  auto real = F::binary_cross_entropy_with_logits(logits_real, torch::ones_like(logits_real));
  auto fake = F::binary_cross_entropy_with_logits(logits_fake, torch::zeros_like(logits_fake));
  return 0.5 * (real + fake);
}

namespace {

double finite_or_throw(const torch::Tensor& t, const char* what) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NonFiniteLossError(std::string(what) + " became non-finite");
  return v;
}

}  // namespace

GanStepLosses gan_train_step(const GanBatch& batch, ConditionalUNet& generator,
                             PatchDiscriminator& discriminator, torch::optim::Optimizer& gen_opt,
                             torch::optim::Optimizer* disc_opt, double lambda_l1) {
  GanStepLosses out;
  generator->train();
  discriminator->train(disc_opt != nullptr);
  auto fake = generator->forward(batch.rgb, batch.cond);

  if (disc_opt) {
    disc_opt->zero_grad();
    auto logits_real = discriminator->forward(batch.rgb, batch.thermal);
    auto logits_fake = discriminator->forward(batch.rgb, fake.detach());
    auto d_loss = discriminator_loss(logits_real, logits_fake);
    out.discriminator = finite_or_throw(d_loss, "discriminator loss");
    d_loss.backward();
    disc_opt->step();
  } else {
    torch::NoGradGuard no_grad;
    auto d_loss = discriminator_loss(discriminator->forward(batch.rgb, batch.thermal),
                                     discriminator->forward(batch.rgb, fake));
    out.discriminator = finite_or_throw(d_loss, "discriminator loss");
  }

  gen_opt.zero_grad();
  auto g = generator_loss(discriminator->forward(batch.rgb, fake), fake, batch.thermal, lambda_l1);
  out.generator_adversarial = finite_or_throw(g.adversarial, "generator adversarial loss");
  out.generator_l1 = finite_or_throw(g.l1, "generator L1 loss");
  out.generator_total = finite_or_throw(g.total, "generator loss");
  g.total.backward();
  gen_opt.step();
  // Discriminator grads from the generator pass must not leak into its next step.
  if (disc_opt) disc_opt->zero_grad();
  out.fake = fake.detach();
  return out;
}

}  // namespace r2t
