#pragma once

// Fold checkpoints: generator (and optionally discriminator) weights plus
// everything needed to run the model on new data: architecture, preprocess
// config, and the fold's fitted standardizer.

#include "r2t/gan.hpp"
#include "r2t/metadata.hpp"
#include "r2t/preprocess.hpp"

namespace r2t {

inline constexpr std::string_view kCheckpointFormat = "r2t-ckpt-1";

enum class ModelKind { UNet, Pix2Pix };
std::string_view to_string(ModelKind kind);
/// "unet" or "pix2pix"; throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view text);

struct CheckpointMeta {
  ModelKind kind = ModelKind::UNet;
  UNetConfig unet;
  PreprocessConfig preprocess;
  Standardizer standardizer;
  int fold = 0;
  int epochs_completed = 0;
  std::string layout_version{kFeatureLayoutVersion};
  std::string code_version;
};

std::string preprocess_to_json(const PreprocessConfig& cfg);
PreprocessConfig preprocess_from_json(const std::string& text);

struct Checkpoint {
  CheckpointMeta meta;
  ConditionalUNet generator{nullptr};
  PatchDiscriminator discriminator{nullptr};  // set for pix2pix checkpoints
};

/// Atomic write (temporary file + rename).
void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, ConditionalUNet& generator,
                     PatchDiscriminator* discriminator = nullptr);

/// Throws IoError for unreadable files and ConfigError when the format or
/// feature layout differs from this build's.
Checkpoint load_checkpoint(const fs::path& path);

}  // namespace r2t
