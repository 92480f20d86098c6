#include "r2t/checkpoint.hpp"

#include "json.hpp"

namespace r2t {

using json = nlohmann::ordered_json;

std::string_view to_string(ModelKind kind) {
  return kind == ModelKind::UNet ? "unet" : "pix2pix";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "unet") return ModelKind::UNet;
  if (text == "pix2pix") return ModelKind::Pix2Pix;
  throw ConfigError("unknown model kind '" + std::string(text) + "' (expected unet or pix2pix)");
}

std::string preprocess_to_json(const PreprocessConfig& cfg) {
  json j;
  j["target_size"] = cfg.target_size;
  j["saturation_factor"] = cfg.saturation_factor;
  j["stretch_lo"] = cfg.stretch_lo;
  j["stretch_hi"] = cfg.stretch_hi;
  j["hash"] = cfg.hash();
  return j.dump();
}

PreprocessConfig preprocess_from_json(const std::string& text) {
  const auto j = json::parse(text);
  PreprocessConfig cfg;
  cfg.target_size = j.at("target_size");
  cfg.saturation_factor = j.at("saturation_factor");
  cfg.stretch_lo = j.at("stretch_lo");
  cfg.stretch_hi = j.at("stretch_hi");
  cfg.validate();
  if (j.contains("hash") && j["hash"] != cfg.hash())
    throw ConfigError("preprocess config hash " + j["hash"].get<std::string>() +
                      " does not match its fields (" + cfg.hash() + ")");
  return cfg;
}

namespace {

std::string meta_to_json(const CheckpointMeta& m) {
  json j;
  j["format"] = kCheckpointFormat;
  j["kind"] = to_string(m.kind);
  j["unet"] = json::parse(m.unet.to_json());
  j["preprocess"] = json::parse(preprocess_to_json(m.preprocess));
  j["standardizer"] = {{"mean", m.standardizer.mean()},
                       {"std", m.standardizer.stddev()},
                       {"fold", m.standardizer.fitted_on_fold()}};
  j["fold"] = m.fold;
  j["epochs_completed"] = m.epochs_completed;
  j["layout_version"] = m.layout_version;
  j["code_version"] = m.code_version;
  return j.dump();
}

CheckpointMeta meta_from_json(const std::string& text) {
  const auto j = json::parse(text);
  if (j.value("format", "") != kCheckpointFormat)
    throw ConfigError("checkpoint format '" + j.value("format", std::string("?")) +
                      "' is not " + std::string(kCheckpointFormat));
  CheckpointMeta m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  m.unet = UNetConfig::from_json(j.at("unet").dump());
  m.preprocess = preprocess_from_json(j.at("preprocess").dump());
  const auto& s = j.at("standardizer");
  m.standardizer = Standardizer(s.at("mean").get<std::array<double, kFeatureCount>>(),
                                s.at("std").get<std::array<double, kFeatureCount>>(),
                                s.at("fold").get<int>());
  m.fold = j.at("fold");
  m.epochs_completed = j.at("epochs_completed");
  m.layout_version = j.at("layout_version");
  m.code_version = j.value("code_version", "");
  if (m.layout_version != kFeatureLayoutVersion)
    throw ConfigError("checkpoint feature layout '" + m.layout_version + "' differs from '" +
                      std::string(kFeatureLayoutVersion) + "'");
  return m;
}

}  // namespace

void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, ConditionalUNet& generator,
                     PatchDiscriminator* discriminator) {
  torch::serialize::OutputArchive archive;
  archive.write("meta", c10::IValue(meta_to_json(meta)));
  torch::serialize::OutputArchive gen;
  generator->save(gen);
  archive.write("generator", gen);
  if (discriminator && *discriminator) {
    torch::serialize::OutputArchive disc;
    (*discriminator)->save(disc);
    archive.write("discriminator", disc);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  c10::IValue meta_value;
  if (!archive.try_read("meta", meta_value) || !meta_value.isString())
    throw ConfigError("checkpoint " + path.string() + " has no metadata record");
  Checkpoint ck;
  ck.meta = meta_from_json(meta_value.toStringRef());
  ck.generator = ConditionalUNet(ck.meta.unet);
  torch::serialize::InputArchive gen;
  archive.read("generator", gen);
  ck.generator->load(gen);
  ck.generator->eval();
  torch::serialize::InputArchive disc;
  if (ck.meta.kind == ModelKind::Pix2Pix && archive.try_read("discriminator", disc)) {
    ck.discriminator = PatchDiscriminator(PatchGANConfig{});
    ck.discriminator->load(disc);
    ck.discriminator->eval();
  }
  return ck;
}

}  // namespace r2t
