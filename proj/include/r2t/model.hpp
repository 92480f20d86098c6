#pragma once

// Four-level conditional U-Net with a self-attention bottleneck and FiLM
// conditioning on the standardized metadata vector.
//
//   input [3,S,S] --Encoder1..4 / MaxPool--> [256,S/16,S/16]
//   Bottleneck conv block -> [512] -> SelfAttention2d -> FiLM(gamma, beta)
//   4 x (bilinear 2x, decoder: 1x1 reduce, concat skip, conv block)
//   Final 3x3 conv -> sigmoid -> [1,S,S]

#include "r2t/core_types.hpp"

#include <string>
#include <vector>

namespace r2t {

struct UNetConfig {
  int64_t in_channels = 3;
  int64_t out_channels = 1;
  std::vector<int64_t> encoder_widths{32, 64, 128, 256};
  int64_t bottleneck_width = 512;
  int64_t attention_heads = 4;
  int64_t cond_dim = 15;
  int64_t film_hidden = 128;
  int64_t input_size = kModelImageSize;
  int64_t norm_groups = 32;

  /// Same architecture on a smaller canvas (multiple of 16).
  static UNetConfig reduced(int64_t input_size);

  void validate() const;
  std::string to_json() const;
  static UNetConfig from_json(const std::string& text);
  bool operator==(const UNetConfig&) const = default;
};

/// One (input size, in-ch, output size, out-ch) row of the layer table.
struct LayerShape {
  std::string name;
  int64_t in_size = 0;
  int64_t in_channels = 0;
  int64_t out_size = 0;
  int64_t out_channels = 0;
  bool operator==(const LayerShape&) const = default;
};
using LayerTrace = std::vector<LayerShape>;

/// The layer table the model should reproduce for `cfg`.
LayerTrace expected_layer_table(const UNetConfig& cfg);

/// conv3x3 -> BN -> SiLU -> conv3x3 -> BN -> SiLU, spatial size preserved.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels() const { return in_; }
  int64_t out_channels() const { return out_; }

 private:
  int64_t in_, out_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Takes the upscaled features, halves their channels with a 1x1 conv,
/// concatenates the encoder skip ([reduced ; skip]) and runs a conv block.
class DecoderBlockImpl : public torch::nn::Module {
 public:
  DecoderBlockImpl(int64_t in_channels, int64_t skip_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& upscaled, const torch::Tensor& skip);

 private:
  torch::nn::Conv2d reduce_{nullptr};
  ConvBlock block_{nullptr};
};
TORCH_MODULE(DecoderBlock);

/// out = x + MHA(GroupNorm(x)) over the H*W flattened positions.
class SelfAttention2dImpl : public torch::nn::Module {
 public:
  SelfAttention2dImpl(int64_t channels, int64_t heads, int64_t groups);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::MultiheadAttention& attention() { return attn_; }

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::MultiheadAttention attn_{nullptr};
};
TORCH_MODULE(SelfAttention2d);

struct FilmParams {
  torch::Tensor gamma;  // [N,C]
  torch::Tensor beta;   // [N,C]
};

/// MLP cond_dim -> hidden (SiLU) -> 2*channels; first half is gamma, second
/// half beta. The output layer starts at weight 0, bias (1.., 0..) so the
/// modulation is the identity until trained.
class ConditionEmbedImpl : public torch::nn::Module {
 public:
  ConditionEmbedImpl(int64_t cond_dim, int64_t hidden, int64_t channels);
  FilmParams forward(const torch::Tensor& cond);
  void reset_to_identity();

  torch::nn::Linear& hidden_layer() { return fc1_; }
  torch::nn::Linear& output_layer() { return fc2_; }

 private:
  int64_t cond_dim_, channels_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ConditionEmbed);

/// out[n,c,:,:] = gamma[n,c] * h[n,c,:,:] + beta[n,c]
torch::Tensor film_modulate(const torch::Tensor& h, const FilmParams& params);

class ConditionalUNetImpl : public torch::nn::Module {
 public:
  explicit ConditionalUNetImpl(UNetConfig cfg = {});

  /// x: [N,3,S,S] in [-1,1]; cond: [N,cond_dim] standardized metadata.
  /// Returns [N,1,S,S] in (0,1). When `trace` is given each stage appends its
  /// shape row.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond,
                        LayerTrace* trace = nullptr);

  const UNetConfig& config() const { return cfg_; }
  ConditionEmbed& condition_embed() { return embed_; }
  SelfAttention2d& attention() { return attention_; }

 private:
  void check_input(const torch::Tensor& x, const torch::Tensor& cond) const;

  UNetConfig cfg_;
  std::vector<ConvBlock> encoders_;
  ConvBlock bottleneck_{nullptr};
  SelfAttention2d attention_{nullptr};
  ConditionEmbed embed_{nullptr};
  std::vector<DecoderBlock> decoders_;  // decoders_[0] is the deepest level
  torch::nn::Conv2d final_conv_{nullptr};
};
TORCH_MODULE(ConditionalUNet);

/// Kaiming-uniform conv weights, zero conv biases, unit/zero norm affine.
void initialize_weights(torch::nn::Module& module);

}  // namespace r2t
