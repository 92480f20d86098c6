#include "r2t/model.hpp"

#include "json.hpp"

namespace r2t {

namespace F = torch::nn::functional;
using nlohmann::json;

// Config ---------------------------------------------------------------------

UNetConfig UNetConfig::reduced(int64_t input_size) {
  UNetConfig cfg;
  cfg.input_size = input_size;
  cfg.validate();
  return cfg;
}

void UNetConfig::validate() const {
  if (encoder_widths.empty()) throw ConfigError("UNetConfig: encoder_widths is empty");
  for (std::size_t i = 1; i < encoder_widths.size(); ++i)
    if (encoder_widths[i] <= encoder_widths[i - 1])
      throw ConfigError("UNetConfig: encoder_widths must be strictly increasing");
  if (bottleneck_width != 2 * encoder_widths.back())
    throw ConfigError("UNetConfig: bottleneck_width must be twice the last encoder width");
  for (std::size_t i = 1; i < encoder_widths.size(); ++i)
    if (encoder_widths[i] != 2 * encoder_widths[i - 1])
      throw ConfigError("UNetConfig: encoder widths must double per level");
  const int64_t factor = int64_t{1} << encoder_widths.size();
  if (input_size <= 0 || input_size % factor != 0)
    throw ConfigError("UNetConfig: input_size " + std::to_string(input_size) +
                      " must be a positive multiple of " + std::to_string(factor));
  if (attention_heads <= 0 || bottleneck_width % attention_heads != 0)
    throw ConfigError("UNetConfig: bottleneck_width not divisible by attention_heads");
  if (norm_groups <= 0 || bottleneck_width % norm_groups != 0)
    throw ConfigError("UNetConfig: bottleneck_width not divisible by norm_groups");
  if (in_channels <= 0 || out_channels <= 0 || cond_dim <= 0 || film_hidden <= 0)
    throw ConfigError("UNetConfig: channel counts must be positive");
}

std::string UNetConfig::to_json() const {
  nlohmann::ordered_json j;
  j["in_channels"] = in_channels;
  j["out_channels"] = out_channels;
  j["encoder_widths"] = encoder_widths;
  j["bottleneck_width"] = bottleneck_width;
  j["attention_heads"] = attention_heads;
  j["cond_dim"] = cond_dim;
  j["film_hidden"] = film_hidden;
  j["input_size"] = input_size;
  j["norm_groups"] = norm_groups;
  return j.dump();
}

UNetConfig UNetConfig::from_json(const std::string& text) {
  const auto j = json::parse(text);
  UNetConfig c;
  c.in_channels = j.at("in_channels");
  c.out_channels = j.at("out_channels");
  c.encoder_widths = j.at("encoder_widths").get<std::vector<int64_t>>();
  c.bottleneck_width = j.at("bottleneck_width");
  c.attention_heads = j.at("attention_heads");
  c.cond_dim = j.at("cond_dim");
  c.film_hidden = j.at("film_hidden");
  c.input_size = j.at("input_size");
  c.norm_groups = j.value("norm_groups", int64_t{32});
  c.validate();
  return c;
}

LayerTrace expected_layer_table(const UNetConfig& cfg) {
  LayerTrace t;
  const auto levels = static_cast<int64_t>(cfg.encoder_widths.size());
  int64_t size = cfg.input_size;
  int64_t ch = cfg.in_channels;
  for (int64_t i = 0; i < levels; ++i) {
    const auto w = cfg.encoder_widths[i];
    t.push_back({"Encoder " + std::to_string(i + 1), size, ch, size, w});
    t.push_back({"Max Pool " + std::to_string(i + 1), size, w, size / 2, w});
    size /= 2;
    ch = w;
  }
  t.push_back({"Bottleneck", size, ch, size, cfg.bottleneck_width});
  ch = cfg.bottleneck_width;
  t.push_back({"SelfAttention2d (" + std::to_string(cfg.attention_heads) + " heads)", size, ch,
               size, ch});
  t.push_back({"FiLM conditioning", size, ch, size, ch});
  for (int64_t i = levels - 1; i >= 0; --i) {
    const auto level = std::to_string(i + 1);
    t.push_back({"Upscale " + level + " (Bilinear)", size, ch, size * 2, ch});
    size *= 2;
    t.push_back({"Decoder " + level, size, ch, size, cfg.encoder_widths[i]});
    ch = cfg.encoder_widths[i];
  }
  t.push_back({"Final Conv (Sigmoid)", size, ch, size, cfg.out_channels});
  return t;
}

// Blocks ---------------------------------------------------------------------

ConvBlockImpl::ConvBlockImpl(int64_t in_channels, int64_t out_channels)
    : in_(in_channels), out_(out_channels) {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_, out_, 3).padding(1).bias(false)));
  bn1_ = register_module("bn1", torch::nn::BatchNorm2d(out_));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_, out_, 3).padding(1).bias(false)));
  bn2_ = register_module("bn2", torch::nn::BatchNorm2d(out_));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  if (x.size(1) != in_)
    throw ShapeError("conv block expects " + std::to_string(in_) + " channels, got " +
                     std::to_string(x.size(1)));
  auto h = F::silu(bn1_(conv1_(x)));
  return F::silu(bn2_(conv2_(h)));
}

DecoderBlockImpl::DecoderBlockImpl(int64_t in_channels, int64_t skip_channels,
                                   int64_t out_channels) {
  reduce_ = register_module(
      "reduce", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, in_channels / 2, 1)));
  block_ = register_module("block", ConvBlock(in_channels / 2 + skip_channels, out_channels));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& upscaled, const torch::Tensor& skip) {
  auto reduced = reduce_(upscaled);
  if (!reduced.sizes().slice(2).equals(skip.sizes().slice(2)))
    throw ShapeError("decoder skip connection has mismatched spatial size");
  return block_(torch::cat({reduced, skip}, 1));
}

SelfAttention2dImpl::SelfAttention2dImpl(int64_t channels, int64_t heads, int64_t groups) {
  if (heads <= 0 || channels % heads != 0)
    throw ConfigError("self-attention channels " + std::to_string(channels) +
                      " not divisible by " + std::to_string(heads) + " heads");
  norm_ = register_module("norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(groups, channels)));
  attn_ = register_module(
      "attn", torch::nn::MultiheadAttention(torch::nn::MultiheadAttentionOptions(channels, heads)));
}

torch::Tensor SelfAttention2dImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto tokens = norm_(x).flatten(2).permute({2, 0, 1});  // [HW, N, C]
  auto attended = std::get<0>(attn_->forward(tokens, tokens, tokens, /*key_padding_mask=*/{},
                                             /*need_weights=*/false));
  return x + attended.permute({1, 2, 0}).reshape({n, c, h, w});
}

ConditionEmbedImpl::ConditionEmbedImpl(int64_t cond_dim, int64_t hidden, int64_t channels)
    : cond_dim_(cond_dim), channels_(channels) {
  fc1_ = register_module("fc1", torch::nn::Linear(cond_dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, 2 * channels));
  reset_to_identity();
}

void ConditionEmbedImpl::reset_to_identity() {
  torch::NoGradGuard no_grad;
  fc2_->weight.zero_();
  fc2_->bias.zero_();
  fc2_->bias.narrow(0, 0, channels_).fill_(1.0);
}

FilmParams ConditionEmbedImpl::forward(const torch::Tensor& cond) {
  if (cond.dim() != 2 || cond.size(1) != cond_dim_)
    throw ShapeError("condition vector must be [N," + std::to_string(cond_dim_) + "], got " +
                     c10::str(cond.sizes()));
  auto out = fc2_(F::silu(fc1_(cond)));
  return {out.narrow(1, 0, channels_), out.narrow(1, channels_, channels_)};
}

torch::Tensor film_modulate(const torch::Tensor& h, const FilmParams& p) {
  if (h.dim() != 4) throw ShapeError("film_modulate expects [N,C,H,W] features");
  if (p.gamma.dim() != 2 || p.beta.dim() != 2 || p.gamma.size(1) != h.size(1) ||
      p.beta.size(1) != h.size(1))
    throw ShapeError("FiLM parameter length " + std::to_string(p.gamma.size(-1)) +
                     " does not match " + std::to_string(h.size(1)) + " channels");
  if (p.gamma.size(0) != h.size(0) || p.beta.size(0) != h.size(0))
    throw ShapeError("FiLM batch size does not match features");
  return p.gamma.unsqueeze(-1).unsqueeze(-1) * h + p.beta.unsqueeze(-1).unsqueeze(-1);
}

// Network --------------------------------------------------------------------

void initialize_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  module.apply([](torch::nn::Module& m) {
    if (auto* conv = m.as<torch::nn::Conv2d>()) {
      torch::nn::init::kaiming_uniform_(conv->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* bn = m.as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    } else if (auto* gn = m.as<torch::nn::GroupNorm>()) {
      gn->weight.fill_(1.0);
      gn->bias.zero_();
    }
  });
}

ConditionalUNetImpl::ConditionalUNetImpl(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int64_t ch = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.encoder_widths.size(); ++i) {
    encoders_.push_back(register_module("encoder" + std::to_string(i + 1),
                                        ConvBlock(ch, cfg_.encoder_widths[i])));
    ch = cfg_.encoder_widths[i];
  }
  bottleneck_ = register_module("bottleneck", ConvBlock(ch, cfg_.bottleneck_width));
  attention_ = register_module(
      "attention",
      SelfAttention2d(cfg_.bottleneck_width, cfg_.attention_heads, cfg_.norm_groups));
  embed_ = register_module("film",
                           ConditionEmbed(cfg_.cond_dim, cfg_.film_hidden, cfg_.bottleneck_width));
  ch = cfg_.bottleneck_width;
  for (auto i = static_cast<int64_t>(cfg_.encoder_widths.size()) - 1; i >= 0; --i) {
    const auto w = cfg_.encoder_widths[i];
    decoders_.push_back(
        register_module("decoder" + std::to_string(i + 1), DecoderBlock(ch, w, w)));
    ch = w;
  }
  final_conv_ = register_module(
      "final_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, cfg_.out_channels, 3).padding(1)));
  initialize_weights(*this);
  embed_->reset_to_identity();
}

void ConditionalUNetImpl::check_input(const torch::Tensor& x, const torch::Tensor& cond) const {
  const auto first = expected_layer_table(cfg_).front().name;
  if (x.dim() != 4)
    throw ShapeError(first + ": expected [N," + std::to_string(cfg_.in_channels) + "," +
                     std::to_string(cfg_.input_size) + "," + std::to_string(cfg_.input_size) +
                     "] input, got " + c10::str(x.sizes()));
  if (x.size(1) != cfg_.in_channels || x.size(2) != cfg_.input_size ||
      x.size(3) != cfg_.input_size)
    throw ShapeError(first + ": expected input " + std::to_string(cfg_.input_size) + "x" +
                     std::to_string(cfg_.input_size) + " with " +
                     std::to_string(cfg_.in_channels) + " channels, got " + c10::str(x.sizes()));
  if (cond.dim() != 2 || cond.size(0) != x.size(0) || cond.size(1) != cfg_.cond_dim)
    throw ShapeError("FiLM conditioning: expected metadata [" + std::to_string(x.size(0)) + "," +
                     std::to_string(cfg_.cond_dim) + "], got " + c10::str(cond.sizes()));
}

torch::Tensor ConditionalUNetImpl::forward(const torch::Tensor& x, const torch::Tensor& cond,
                                           LayerTrace* trace) {
  check_input(x, cond);
  auto record = [trace](std::string name, const torch::Tensor& in, const torch::Tensor& out) {
    if (trace) trace->push_back({std::move(name), in.size(-1), in.size(1), out.size(-1), out.size(1)});
  };

  std::vector<torch::Tensor> skips;
  auto h = x;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    const auto level = std::to_string(i + 1);
    auto e = encoders_[i](h);
    record("Encoder " + level, h, e);
    skips.push_back(e);
    h = F::max_pool2d(e, F::MaxPool2dFuncOptions(2));
    record("Max Pool " + level, e, h);
  }

  auto b = bottleneck_(h);
  record("Bottleneck", h, b);
  auto a = attention_(b);
  record("SelfAttention2d (" + std::to_string(cfg_.attention_heads) + " heads)", b, a);
  auto m = film_modulate(a, embed_(cond.to(a.dtype())));
  record("FiLM conditioning", a, m);

  h = m;
  for (std::size_t k = 0; k < decoders_.size(); ++k) {
    const auto level = std::to_string(encoders_.size() - k);
    auto up = F::interpolate(h, F::InterpolateFuncOptions()
                                    .scale_factor(std::vector<double>{2.0, 2.0})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
    record("Upscale " + level + " (Bilinear)", h, up);
    auto d = decoders_[k](up, skips[skips.size() - 1 - k]);
    record("Decoder " + level, up, d);
    h = d;
  }
  auto out = torch::sigmoid(final_conv_(h));
  record("Final Conv (Sigmoid)", h, out);
  return out;
}

}  // namespace r2t
