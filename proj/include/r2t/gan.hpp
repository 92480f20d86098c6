#pragma once

// Pix2Pix comparison variant: conditional PatchGAN discriminator over the
// channel-concatenated (RGB, thermal) pair and the adversarial + L1 objective.
// The generator is the same ConditionalUNet.

#include "r2t/model.hpp"

namespace r2t {

struct PatchGANConfig {
  int64_t in_channels = 4;  // 3 RGB + 1 thermal
  std::vector<int64_t> widths{64, 128, 256, 512};
  int64_t kernel = 4;

  void validate() const;
  /// Receptive field of one output logit, from the layer stack.
  int64_t receptive_field() const;
  /// Logit map side length for a square input of `input_size`.
  int64_t output_size(int64_t input_size) const;
  /// First input row/column seen by output logit `index`.
  int64_t window_start(int64_t index) const;
};

/// C64(s2) - C128(s2) - C256(s2) - C512(s1) - C1(s1), kernels 4, padding 1,
/// LeakyReLU(0.2), batch norm on the interior blocks.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(PatchGANConfig cfg = {});

  /// rgb: [N,3,H,W] in [-1,1]; thermal: [N,1,H,W] in [0,1] (mapped to [-1,1]
  /// internally). Returns raw logits [N,1,h,w].
  torch::Tensor forward(const torch::Tensor& rgb, const torch::Tensor& thermal);

  const PatchGANConfig& config() const { return cfg_; }

 private:
  PatchGANConfig cfg_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct GeneratorLoss {
  torch::Tensor adversarial;  // BCE(logits_fake, 1)
  torch::Tensor l1;           // mean |fake - real|
  torch::Tensor total;        // adversarial + lambda * l1
};

GeneratorLoss generator_loss(const torch::Tensor& logits_on_fake, const torch::Tensor& fake,
                             const torch::Tensor& real, double lambda_l1);

/// 0.5 * [BCE(real, 1) + BCE(fake, 0)]
torch::Tensor discriminator_loss(const torch::Tensor& logits_real,
                                 const torch::Tensor& logits_fake);

struct GanBatch {
  torch::Tensor rgb;      // [N,3,S,S] signed
  torch::Tensor thermal;  // [N,1,S,S] unit
  torch::Tensor cond;     // [N,15] standardized
};

struct GanStepLosses {
  double discriminator = 0.0;
  double generator_adversarial = 0.0;
  double generator_l1 = 0.0;
  double generator_total = 0.0;
  torch::Tensor fake;  // detached generator output from this step
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One discriminator update on (real, detached fake) followed by one
/// generator update. Pass a null discriminator optimizer to keep D frozen.
GanStepLosses gan_train_step(const GanBatch& batch, ConditionalUNet& generator,
                             PatchDiscriminator& discriminator, torch::optim::Optimizer& gen_opt,
                             torch::optim::Optimizer* disc_opt, double lambda_l1);

}  // namespace r2t
