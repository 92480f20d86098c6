#pragma once

// LPIPS perceptual distance with an AlexNet feature backbone and learned
// per-channel linear heads. Weights are loaded from a torch pickle dict with
// the keys listed by LpipsNetImpl::weight_names(); see
// tools/export_lpips_weights.py for producing that file from the pretrained
// torchvision + LPIPS checkpoints.

#include "r2t/core_types.hpp"

namespace r2t {

/// Missing or malformed backbone weights. what() carries download
/// instructions.
class LpipsWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LpipsNetImpl : public torch::nn::Module {
 public:
  /// Architecture only; parameters are zero until weights are loaded.
  LpipsNetImpl();

  /// a, b: [N,1,H,W] or [N,3,H,W] thermal-style maps in [0,1]. Single-channel
  /// input is replicated to three channels and mapped to [-1,1] before the
  /// backbone's own shift/scale. Returns per-image distances [N].
  torch::Tensor forward(const torch::Tensor& a, const torch::Tensor& b);

  /// Parameter keys in the weights file, in a stable order.
  static std::vector<std::string> weight_names();
  /// Smallest side the five feature stages accept.
  static constexpr int64_t kMinSide = 32;

  void load_weights(const fs::path& path);
  void save_weights(const fs::path& path) const;
  /// Fills the parameters from a seeded generator: He-normal backbone,
  /// non-negative linear heads. For tests and offline use when the pretrained
  /// weights are unavailable.
  void fill_surrogate(uint64_t seed);

 private:
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<torch::nn::Conv2d> lins_;
  torch::Tensor shift_, scale_;
};
TORCH_MODULE(LpipsNet);

/// Frozen, eval-mode network from `path`. Throws LpipsWeightsError when the
/// file is missing or incomplete.
LpipsNet load_lpips(const fs::path& path);

/// Frozen network with surrogate weights.
LpipsNet make_surrogate_lpips(uint64_t seed = 20240611);

/// Path from $R2T_LPIPS_WEIGHTS, or empty.
fs::path lpips_weights_from_env();

}  // namespace r2t
