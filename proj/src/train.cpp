#include "r2t/train.hpp"

#include "r2t/image_io.hpp"

#include "json.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <charconv>
#include <cmath>
#include <numeric>
#include <set>

namespace r2t {

using json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double unit_draw(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t index_draw(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index_draw(rng, i)]);
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0))
    throw ConfigError(std::string("augment.") + name + " must be in [0,1]");
}

// Stream tags for derive_rng so epoch ordering and per-sample augmentation
// never share a sequence.
constexpr uint64_t kOrderStream = 0x6f72646572ULL;
constexpr uint64_t kAugmentStream = 0x6175676dULL;

}  // namespace

Rng derive_rng(std::initializer_list<uint64_t> key) {
  std::vector<uint32_t> words;
  for (uint64_t k : key) {
    words.push_back(static_cast<uint32_t>(k));
    words.push_back(static_cast<uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Augmentation ---------------------------------------------------------------

void AugmentConfig::validate() const {
  check_probability(hflip_p, "hflip_p");
  check_probability(vflip_p, "vflip_p");
  check_probability(rot90_p, "rot90_p");
  check_probability(brightness_p, "brightness_p");
  check_probability(noise_p, "noise_p");
  if (!(brightness_lo > 0 && brightness_lo <= brightness_hi))
    throw ConfigError("augment brightness range must satisfy 0 < lo <= hi");
  if (!(noise_sigma >= 0)) throw ConfigError("augment.noise_sigma must be >= 0");
}

AugmentDraw sample_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentDraw d;
  d.hflip = unit_draw(rng) < cfg.hflip_p;
  d.vflip = unit_draw(rng) < cfg.vflip_p;
  const bool rotate = unit_draw(rng) < cfg.rot90_p;
  const int quarter = 1 + static_cast<int>(index_draw(rng, 3));
  d.rot90 = rotate ? quarter : 0;
  d.brightness = unit_draw(rng) < cfg.brightness_p;
  const double factor = cfg.brightness_lo + (cfg.brightness_hi - cfg.brightness_lo) * unit_draw(rng);
  d.brightness_factor = d.brightness ? factor : 1.0;
  d.noise = unit_draw(rng) < cfg.noise_p;
  d.noise_seed = rng();
  return d;
}

AugmentedPair apply_augment(const torch::Tensor& rgb, const torch::Tensor& thermal,
                            const AugmentDraw& draw, const AugmentConfig& cfg) {
  if (rgb.dim() != 3 || thermal.dim() != 3 || !rgb.sizes().slice(1).equals(thermal.sizes().slice(1)))
    throw ShapeError("augment_pair needs [C,H,W] images of the same spatial size");
  auto geometric = [&](torch::Tensor x) {
    if (draw.hflip) x = x.flip({2});
    if (draw.vflip) x = x.flip({1});
    if (draw.rot90 != 0) x = torch::rot90(x, draw.rot90, {1, 2});
    return x.contiguous();
  };
  AugmentedPair out{geometric(rgb), geometric(thermal), draw};
  if (draw.brightness || draw.noise) {
    auto unit = (out.rgb + 1.0) * 0.5;
    if (draw.brightness) unit = unit * draw.brightness_factor;
    if (draw.noise) {
      auto gen = at::make_generator<at::CPUGeneratorImpl>(draw.noise_seed);
      unit = unit + cfg.noise_sigma * torch::randn(unit.sizes(), gen, unit.options());
    }
    out.rgb = (unit * 2.0 - 1.0).clamp(-1.0, 1.0);
  }
  return out;
}

AugmentedPair augment_pair(const torch::Tensor& rgb, const torch::Tensor& thermal,
                           const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(rgb, thermal, sample_augment(cfg, rng), cfg);
}

// Folds ----------------------------------------------------------------------

int FoldAssignment::fold_of(const std::string& group_id) const {
  auto it = fold_of_group.find(group_id);
  if (it == fold_of_group.end()) throw std::out_of_range("group '" + group_id + "' has no fold");
  return it->second;
}

FoldAssignment assign_folds(const std::vector<std::string>& group_ids, int k, uint64_t seed) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  std::set<std::string> unique;
  for (const auto& g : group_ids) {
    if (g.empty()) throw ConfigError("sample with an empty group_id cannot be assigned a fold");
    unique.insert(g);
  }
  if (unique.size() < static_cast<std::size_t>(k))
    throw ConfigError("fold assignment needs at least " + std::to_string(k) +
                      " distinct groups, found " + std::to_string(unique.size()));
  std::vector<std::string> groups(unique.begin(), unique.end());
  auto rng = derive_rng({seed, 0x666f6c64ULL});
  shuffle(groups, rng);
  FoldAssignment a;
  a.k = k;
  for (std::size_t i = 0; i < groups.size(); ++i)
    a.fold_of_group[groups[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return a;
}

FoldSplit split_fold(const std::vector<std::string>& group_ids, const FoldAssignment& a, int fold) {
  if (fold < 0 || fold >= a.k) throw std::out_of_range("fold index out of range");
  FoldSplit s;
  for (std::size_t i = 0; i < group_ids.size(); ++i)
    (a.fold_of(group_ids[i]) == fold ? s.val : s.train).push_back(i);
  return s;
}

// Config ---------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (finetune_epochs < 0) throw ConfigError("finetune_epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0) || !(finetune_lr > 0)) throw ConfigError("learning rates must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (run_folds < 0 || run_folds > folds) throw ConfigError("run_folds must be in [0, folds]");
  if (!(lambda_l1 >= 0)) throw ConfigError("lambda_l1 must be >= 0");
  if (!(charbonnier_eps >= 0)) throw ConfigError("charbonnier_eps must be >= 0");
  if (!(eval_blur_sigma >= 0)) throw ConfigError("eval_blur_sigma must be >= 0");
  preprocess.validate();
  loss_weights.validate();
  augment.validate();
  unet();
}

std::string TrainConfig::to_json() const {
  json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["finetune_epochs"] = finetune_epochs;
  j["finetune_lr"] = finetune_lr;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["folds"] = folds;
  j["run_folds"] = run_folds;
  j["model"] = to_string(model);
  j["lambda_l1"] = lambda_l1;
  j["charbonnier_eps"] = charbonnier_eps;
  j["eval_blur_sigma"] = eval_blur_sigma;
  j["preprocess"] = {{"target_size", preprocess.target_size},
                     {"saturation_factor", preprocess.saturation_factor},
                     {"stretch_lo", preprocess.stretch_lo},
                     {"stretch_hi", preprocess.stretch_hi}};
  j["loss_weights"] = {{"charbonnier", loss_weights.charbonnier},
                       {"msssim", loss_weights.msssim},
                       {"lpips", loss_weights.lpips},
                       {"gradient", loss_weights.gradient},
                       {"stats", loss_weights.stats}};
  j["augment"] = {{"hflip_p", augment.hflip_p},
                  {"vflip_p", augment.vflip_p},
                  {"rot90_p", augment.rot90_p},
                  {"brightness_p", augment.brightness_p},
                  {"brightness_lo", augment.brightness_lo},
                  {"brightness_hi", augment.brightness_hi},
                  {"noise_p", augment.noise_p},
                  {"noise_sigma", augment.noise_sigma}};
  j["lpips_weights"] = lpips_weights;
  return j.dump(2);
}

namespace {

template <typename T>
void take(const json& obj, const char* key, T& dst, std::set<std::string>& seen) {
  if (!obj.contains(key)) return;
  seen.insert(key);
  try {
    dst = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [key, _] : obj.items())
    if (!seen.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
}

}  // namespace

TrainConfig TrainConfig::from_json(const std::string& text, const TrainConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c = base;
  std::set<std::string> seen;
  take(j, "epochs", c.epochs, seen);
  take(j, "batch_size", c.batch_size, seen);
  take(j, "lr", c.lr, seen);
  take(j, "finetune_epochs", c.finetune_epochs, seen);
  take(j, "finetune_lr", c.finetune_lr, seen);
  take(j, "weight_decay", c.weight_decay, seen);
  take(j, "seed", c.seed, seen);
  take(j, "folds", c.folds, seen);
  take(j, "run_folds", c.run_folds, seen);
  take(j, "lambda_l1", c.lambda_l1, seen);
  take(j, "charbonnier_eps", c.charbonnier_eps, seen);
  take(j, "eval_blur_sigma", c.eval_blur_sigma, seen);
  take(j, "lpips_weights", c.lpips_weights, seen);
  if (j.contains("model")) {
    seen.insert("model");
    c.model = parse_model_kind(j["model"].get<std::string>());
  }
  if (j.contains("preprocess")) {
    seen.insert("preprocess");
    std::set<std::string> s;
    const auto& p = j["preprocess"];
    take(p, "target_size", c.preprocess.target_size, s);
    take(p, "saturation_factor", c.preprocess.saturation_factor, s);
    take(p, "stretch_lo", c.preprocess.stretch_lo, s);
    take(p, "stretch_hi", c.preprocess.stretch_hi, s);
    reject_unknown(p, s, "preprocess.");
  }
  if (j.contains("loss_weights")) {
    seen.insert("loss_weights");
    std::set<std::string> s;
    const auto& w = j["loss_weights"];
    take(w, "charbonnier", c.loss_weights.charbonnier, s);
    take(w, "msssim", c.loss_weights.msssim, s);
    take(w, "lpips", c.loss_weights.lpips, s);
    take(w, "gradient", c.loss_weights.gradient, s);
    take(w, "stats", c.loss_weights.stats, s);
    reject_unknown(w, s, "loss_weights.");
  }
  if (j.contains("augment")) {
    seen.insert("augment");
    std::set<std::string> s;
    const auto& a = j["augment"];
    take(a, "hflip_p", c.augment.hflip_p, s);
    take(a, "vflip_p", c.augment.vflip_p, s);
    take(a, "rot90_p", c.augment.rot90_p, s);
    take(a, "brightness_p", c.augment.brightness_p, s);
    take(a, "brightness_lo", c.augment.brightness_lo, s);
    take(a, "brightness_hi", c.augment.brightness_hi, s);
    take(a, "noise_p", c.augment.noise_p, s);
    take(a, "noise_sigma", c.augment.noise_sigma, s);
    reject_unknown(a, s, "augment.");
  }
  reject_unknown(j, seen, "");
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  return from_json(text, TrainConfig{});
}

double cosine_lr(double base, int epoch, int period) {
  if (period <= 0) throw ConfigError("cosine period must be positive");
  const double t = std::clamp(static_cast<double>(epoch) / period, 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(M_PI * t));
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  return epoch < cfg.epochs ? cosine_lr(cfg.lr, epoch, cfg.epochs) : cfg.finetune_lr;
}

// Data -----------------------------------------------------------------------

void preprocess_dataset(const fs::path& in_root, const fs::path& out_root,
                        const PreprocessConfig& cfg) {
  cfg.validate();
  auto samples = load_dataset(in_root);
  std::vector<PairedSample> out;
  for (auto& s : samples)
    out.push_back({s.sample_id, condition_rgb(s.rgb, cfg), prepare_thermal(s.thermal, cfg.target_size),
                   s.metadata, s.group_id});
  write_dataset(out_root, out);
  write_file_atomic(out_root / kPreprocessManifest, preprocess_to_json(cfg) + "\n");
}

std::vector<PreparedSample> prepare_samples(const std::vector<PairedSample>& samples,
                                            const PreprocessConfig& cfg) {
  std::vector<PreparedSample> out;
  for (const auto& s : samples) {
    PreparedSample p;
    p.sample_id = s.sample_id;
    p.group_id = s.group_id;
    p.rgb = preprocess_pipeline(s.rgb, cfg).data();
    p.thermal = prepare_thermal(s.thermal, cfg.target_size).data();
    try {
      p.features = build_feature_vector(s.metadata);
    } catch (const IngestError& e) {
      throw IngestError(e.field(), "sample " + s.sample_id + ": " + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<PreparedSample> load_prepared(const fs::path& root, const PreprocessConfig& cfg) {
  const auto manifest = root / kPreprocessManifest;
  auto samples = load_dataset(root);
  if (!fs::exists(manifest)) return prepare_samples(samples, cfg);

  const auto stored = preprocess_from_json(read_text_file(manifest));
  if (stored.hash() != cfg.hash())
    throw ConfigError("dataset " + root.string() + " was preprocessed with " + stored.canonical() +
                      " (hash " + stored.hash() + ") but the model expects " + cfg.canonical() +
                      " (hash " + cfg.hash() +
                      "); re-run preprocess or point at the raw dataset");
  std::vector<PreparedSample> out;
  for (const auto& s : samples) {
    if (s.rgb.height() != cfg.target_size || s.rgb.width() != cfg.target_size)
      throw ShapeError("preprocessed sample " + s.sample_id + " is not " +
                       std::to_string(cfg.target_size) + " px square");
    PreparedSample p;
    p.sample_id = s.sample_id;
    p.group_id = s.group_id;
    p.rgb = normalize_to_pm1(s.rgb).data();
    p.thermal = prepare_thermal(s.thermal, cfg.target_size).data();
    try {
      p.features = build_feature_vector(s.metadata);
    } catch (const IngestError& e) {
      throw IngestError(e.field(), "sample " + s.sample_id + ": " + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Training -------------------------------------------------------------------

std::string history_csv(const std::vector<HistoryRow>& rows, ModelKind kind) {
  const bool gan = kind == ModelKind::Pix2Pix;
  std::string out = "epoch,lr,total_loss,charbonnier,msssim_term,lpips_term,grad_term,stats_term";
  if (gan) out += ",d_loss,g_adversarial,g_l1";
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fmt(r.lr) + "," + fmt(r.total_loss) + "," +
           fmt(r.charbonnier) + "," + fmt(r.msssim_term) + "," + fmt(r.lpips_term) + "," +
           fmt(r.grad_term) + "," + fmt(r.stats_term);
    if (gan) out += "," + fmt(r.d_loss) + "," + fmt(r.g_adversarial) + "," + fmt(r.g_l1);
    out += "\n";
  }
  return out;
}

LossBreakdown unet_train_step(ConditionalUNet& model, torch::optim::Optimizer& opt,
                              const torch::Tensor& rgb, const torch::Tensor& thermal,
                              const torch::Tensor& cond, const LossWeights& weights,
                              LpipsNet* lpips, double eps) {
  model->train();
  auto pred = model->forward(rgb, cond);
  auto loss = combined_loss(pred, thermal, weights, lpips, eps);
  if (!std::isfinite(loss.total_value))
    throw NonFiniteLossError("composite loss became non-finite (" + fmt(loss.total_value) + ")");
  opt.zero_grad();
  loss.total.backward();
  opt.step();
  return loss;
}

namespace {

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups())
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // Batch norm cannot normalize a lone sample; fold it into its neighbour.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

FoldResult train_fold(const std::vector<PreparedSample>& train, int fold, const TrainConfig& cfg,
                      LpipsNet* lpips, const fs::path& fold_dir, const LogFn& log) {
  cfg.validate();
  if (train.empty())
    throw ConfigError("fold " + std::to_string(fold) + " has an empty training split");
  if (train.size() < 2)
    throw ConfigError("fold " + std::to_string(fold) + " needs at least two training samples");
  fs::create_directories(fold_dir);

  std::vector<MetadataVector> features;
  for (const auto& s : train) features.push_back(s.features);
  FoldResult result;
  result.fold = fold;
  result.standardizer = Standardizer::fit(features, fold);
  std::vector<MetadataVector> standardized;
  for (const auto& f : features) standardized.push_back(result.standardizer.apply(f));
  const auto cond_all = to_tensor(standardized);

  torch::manual_seed(cfg.seed * 1000003ULL + static_cast<uint64_t>(fold));
  ConditionalUNet model(cfg.unet());
  PatchDiscriminator disc{nullptr};
  const bool gan = cfg.model == ModelKind::Pix2Pix;
  auto opt_options = torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay);
  if (gan) opt_options.betas({0.5, 0.999});
  torch::optim::AdamW gen_opt(model->parameters(), opt_options);
  std::unique_ptr<torch::optim::AdamW> disc_opt;
  if (gan) {
    disc = PatchDiscriminator(PatchGANConfig{});
    disc_opt = std::make_unique<torch::optim::AdamW>(disc->parameters(), opt_options);
  }

  CheckpointMeta meta;
  meta.kind = cfg.model;
  meta.unet = cfg.unet();
  meta.preprocess = cfg.preprocess;
  meta.standardizer = result.standardizer;
  meta.fold = fold;
  meta.code_version = R2T_VERSION;
  result.checkpoint = fold_dir / "checkpoint.pt";

  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    set_lr(gen_opt, lr);
    if (disc_opt) set_lr(*disc_opt, lr);

    std::iota(order.begin(), order.end(), std::size_t{0});
    auto order_rng = derive_rng({cfg.seed, static_cast<uint64_t>(fold), static_cast<uint64_t>(epoch),
                                 kOrderStream});
    shuffle(order, order_rng);

    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    int steps = 0;
    std::size_t position = 0;
    for (const auto& batch : make_batches(order, cfg.batch_size)) {
      std::vector<torch::Tensor> rgbs, thermals;
      std::vector<int64_t> rows;
      for (std::size_t idx : batch) {
        auto rng = derive_rng({cfg.seed, static_cast<uint64_t>(fold), static_cast<uint64_t>(epoch),
                               kAugmentStream, position++});
        auto aug = augment_pair(train[idx].rgb, train[idx].thermal, cfg.augment, rng);
        rgbs.push_back(aug.rgb);
        thermals.push_back(aug.thermal);
        rows.push_back(static_cast<int64_t>(idx));
      }
      auto rgb = torch::stack(rgbs);
      auto thermal = torch::stack(thermals);
      auto cond = cond_all.index_select(0, torch::tensor(rows, torch::kLong));

      LossBreakdown br;
      if (gan) {
        auto s = gan_train_step({rgb, thermal, cond}, model, disc, gen_opt, disc_opt.get(),
                                cfg.lambda_l1);
        row.d_loss += s.discriminator;
        row.g_adversarial += s.generator_adversarial;
        row.g_l1 += s.generator_l1;
        torch::NoGradGuard no_grad;
        br = combined_loss(s.fake, thermal, cfg.loss_weights, lpips, cfg.charbonnier_eps);
      } else {
        br = unet_train_step(model, gen_opt, rgb, thermal, cond, cfg.loss_weights, lpips,
                             cfg.charbonnier_eps);
      }
      row.total_loss += br.total_value;
      row.charbonnier += br.charbonnier;
      row.msssim_term += br.msssim_term;
      row.lpips_term += br.lpips_term;
      row.grad_term += br.grad_term;
      row.stats_term += br.stats_term;
      ++steps;
    }
    for (double* v : {&row.total_loss, &row.charbonnier, &row.msssim_term, &row.lpips_term,
                      &row.grad_term, &row.stats_term, &row.d_loss, &row.g_adversarial, &row.g_l1})
      *v /= steps;
    result.history.push_back(row);

    meta.epochs_completed = epoch + 1;
    save_checkpoint(result.checkpoint, meta, model, gan ? &disc : nullptr);
    write_file_atomic(fold_dir / "history.csv", history_csv(result.history, cfg.model));
    if (log)
      log("fold " + std::to_string(fold) + " epoch " + std::to_string(epoch + 1) + "/" +
          std::to_string(cfg.total_epochs()) + " lr " + fmt(lr) + " loss " + fmt(row.total_loss));
  }
  return result;
}

// Evaluation -----------------------------------------------------------------

MetricReport score_predictions(const std::vector<std::string>& ids,
                               const std::vector<torch::Tensor>& preds,
                               const std::vector<torch::Tensor>& targets, LpipsNet& lpips,
                               double blur_sigma, int fold_id) {
  if (ids.size() != preds.size() || preds.size() != targets.size())
    throw std::invalid_argument("score_predictions: ids, preds and targets differ in length");
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto p = gaussian_blur(preds[i].to(torch::kFloat32), blur_sigma).clamp(0.0, 1.0).unsqueeze(0);
    auto t = targets[i].to(torch::kFloat32).unsqueeze(0);
    rows.push_back({ids[i], psnr(p, t), ssim(p, t), lpips_metric(lpips, p, t)});
  }
  return make_report(fold_id, std::move(rows));
}

std::vector<torch::Tensor> predict(Checkpoint& ck, const std::vector<PreparedSample>& samples) {
  torch::NoGradGuard no_grad;
  ck.generator->eval();
  const auto size = ck.meta.unet.input_size;
  std::vector<torch::Tensor> out;
  for (const auto& s : samples) {
    if (s.rgb.size(1) != size || s.rgb.size(2) != size)
      throw ShapeError("sample " + s.sample_id + " is " + std::to_string(s.rgb.size(1)) + "x" +
                       std::to_string(s.rgb.size(2)) + " but the checkpoint expects " +
                       std::to_string(size) + " px");
    const std::vector<MetadataVector> z{ck.meta.standardizer.apply(s.features)};
    out.push_back(ck.generator->forward(s.rgb.unsqueeze(0), to_tensor(z))[0]);
  }
  return out;
}

MetricReport evaluate(Checkpoint& ck, const std::vector<PreparedSample>& samples, LpipsNet& lpips,
                      double blur_sigma, std::vector<torch::Tensor>* preds_out) {
  auto preds = predict(ck, samples);
  std::vector<std::string> ids;
  std::vector<torch::Tensor> targets;
  for (const auto& s : samples) {
    ids.push_back(s.sample_id);
    targets.push_back(s.thermal);
  }
  auto report = score_predictions(ids, preds, targets, lpips, blur_sigma, ck.meta.fold);
  if (preds_out) *preds_out = std::move(preds);
  return report;
}

void write_evaluation(const fs::path& dir, const MetricReport& report,
                      const std::vector<PreparedSample>& samples,
                      const std::vector<torch::Tensor>& preds) {
  fs::create_directories(dir);
  write_report_csv(report, dir / "report.csv");
  write_report_json(report, dir / "report.json");
  for (std::size_t i = 0; i < samples.size() && i < preds.size(); ++i) {
    const auto& s = samples[i];
    write_image16(dir / "pred" / (s.sample_id + ".png"),
                  ImageTensor::clamped(preds[i].to(torch::kFloat32), RangeTag::Unit0To1));
    write_image(dir / "rgb" / (s.sample_id + ".png"), ImageTensor(s.rgb, RangeTag::SignedPm1));
    write_image(dir / "thermal" / (s.sample_id + ".png"), ImageTensor(s.thermal, RangeTag::Unit0To1));
  }
}

// Cross-validation -----------------------------------------------------------

namespace {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

std::string pm(const MeanStd& m, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", digits, m.mean, digits, m.std);
  return buf;
}

}  // namespace

CvAggregate aggregate_reports(const std::vector<MetricReport>& reports) {
  std::vector<double> p, s, l;
  for (const auto& r : reports) {
    p.push_back(r.fold_mean.psnr_db);
    s.push_back(r.fold_mean.ssim);
    l.push_back(r.fold_mean.lpips);
  }
  return {mean_std(p), mean_std(s), mean_std(l)};
}

std::string aggregate_table(const CvAggregate& agg, ModelKind kind) {
  const std::string name = kind == ModelKind::UNet ? "U-Net (FiLM)" : "Pix2Pix";
  return "model,psnr_db,ssim,lpips\n" + name + "," + pm(agg.psnr_db, 2) + "," + pm(agg.ssim, 4) +
         "," + pm(agg.lpips, 4) + "\n";
}

CvResult run_cross_validation(const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                              LpipsNet* lpips, const fs::path& run_dir, const LogFn& log) {
  cfg.validate();
  if (!lpips) throw ConfigError("cross-validation needs an LPIPS network for evaluation");
  std::vector<std::string> groups;
  for (const auto& s : data) groups.push_back(s.group_id);
  CvResult result;
  result.assignment = assign_folds(groups, cfg.folds, cfg.seed);

  json folds_json = json::object();
  for (const auto& [g, f] : result.assignment.fold_of_group) folds_json[g] = f;
  write_file_atomic(run_dir / "folds.json", folds_json.dump(2) + "\n");

  const int n_folds = cfg.run_folds > 0 ? cfg.run_folds : cfg.folds;
  for (int fold = 0; fold < n_folds; ++fold) {
    const auto split = split_fold(groups, result.assignment, fold);
    std::vector<PreparedSample> train, val;
    for (auto i : split.train) train.push_back(data[i]);
    for (auto i : split.val) val.push_back(data[i]);
    if (log)
      log("fold " + std::to_string(fold) + ": " + std::to_string(train.size()) + " train, " +
          std::to_string(val.size()) + " val samples");
    const auto fold_dir = run_dir / ("fold" + std::to_string(fold));
    auto fr = train_fold(train, fold, cfg, lpips, fold_dir, log);
    auto ck = load_checkpoint(fr.checkpoint);
    std::vector<torch::Tensor> preds;
    auto report = evaluate(ck, val, *lpips, cfg.eval_blur_sigma, &preds);
    write_evaluation(fold_dir / "eval", report, val, preds);
    write_report_csv(report, fold_dir / "report.csv");
    write_report_json(report, fold_dir / "report.json");
    result.folds.push_back(std::move(fr));
    result.reports.push_back(std::move(report));
  }

  result.aggregate = aggregate_reports(result.reports);
  write_file_atomic(run_dir / "aggregate.csv", aggregate_table(result.aggregate, cfg.model));
  json agg;
  agg["model"] = to_string(cfg.model);
  agg["folds"] = static_cast<int>(result.reports.size());
  auto put = [&](const char* key, const MeanStd& m) { agg[key] = {{"mean", m.mean}, {"std", m.std}}; };
  put("psnr_db", result.aggregate.psnr_db);
  put("ssim", result.aggregate.ssim);
  put("lpips", result.aggregate.lpips);
  json fold_means = json::array();
  for (const auto& r : result.reports)
    fold_means.push_back({{"fold", r.fold_id},
                          {"psnr_db", r.fold_mean.psnr_db},
                          {"ssim", r.fold_mean.ssim},
                          {"lpips", r.fold_mean.lpips}});
  agg["fold_means"] = fold_means;
  write_file_atomic(run_dir / "aggregate.json", agg.dump(2) + "\n");
  return result;
}

// Run manifest -----------------------------------------------------------------

std::string now_utc_iso8601() {
  return format_iso8601(std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

void write_manifest(const fs::path& path, const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["config"] = m.config_json.empty() ? json::object() : json::parse(m.config_json);
  j["seed"] = m.seed;
  j["layout_version"] = m.layout_version;
  j["preprocess_hash"] = m.preprocess_hash;
  j["code_version"] = m.code_version;
  j["started_utc"] = m.started_utc;
  j["finished_utc"] = m.finished_utc;
  j["outputs"] = m.outputs;
  j["status"] = m.status;
  write_file_atomic(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  const auto j = json::parse(read_text_file(path));
  RunManifest m;
  m.command = j.value("command", "");
  m.config_json = j.at("config").dump();
  m.seed = j.value("seed", uint64_t{0});
  m.layout_version = j.value("layout_version", "");
  m.preprocess_hash = j.value("preprocess_hash", "");
  m.code_version = j.value("code_version", "");
  m.started_utc = j.value("started_utc", "");
  m.finished_utc = j.value("finished_utc", "");
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.status = j.value("status", "");
  return m;
}

}  // namespace r2t
