#pragma once

// Training and evaluation: paired augmentation, flight-grouped k-fold
// assignment, the per-fold training loop (cosine main phase + constant-rate
// fine-tune), held-out evaluation and the cross-validation driver.

#include "r2t/checkpoint.hpp"
#include "r2t/losses.hpp"
#include "r2t/postprocess.hpp"

#include <functional>
#include <map>
#include <random>

namespace r2t {

using Rng = std::mt19937_64;

/// Independent stream for a tuple of identifiers (seed, fold, epoch, ...).
Rng derive_rng(std::initializer_list<uint64_t> key);

// Augmentation ---------------------------------------------------------------

struct AugmentConfig {
  double hflip_p = 0.5;
  double vflip_p = 0.3;
  double rot90_p = 0.25;
  double brightness_p = 0.4;
  double brightness_lo = 0.85;
  double brightness_hi = 1.15;
  double noise_p = 0.15;
  double noise_sigma = 0.02;  // in [0,1] intensity units

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // quarter turns counter-clockwise, 0 = none
  bool brightness = false;
  double brightness_factor = 1.0;
  bool noise = false;
  uint64_t noise_seed = 0;
};

/// Samples the transforms in a fixed order (hflip, vflip, rot90, brightness,
/// noise), always consuming the same number of draws.
AugmentDraw sample_augment(const AugmentConfig& cfg, Rng& rng);

struct AugmentedPair {
  torch::Tensor rgb;      // [3,H,W] signed
  torch::Tensor thermal;  // [1,H,W] unit
  AugmentDraw draw;
};

/// Geometric transforms hit both images identically; brightness and noise
/// touch the RGB only. Metadata is never altered.
AugmentedPair apply_augment(const torch::Tensor& rgb, const torch::Tensor& thermal,
                            const AugmentDraw& draw, const AugmentConfig& cfg);
AugmentedPair augment_pair(const torch::Tensor& rgb, const torch::Tensor& thermal,
                           const AugmentConfig& cfg, Rng& rng);

// Folds ----------------------------------------------------------------------

struct FoldAssignment {
  int k = 5;
  std::map<std::string, int> fold_of_group;
  int fold_of(const std::string& group_id) const;
};

/// Distinct groups shuffled with `seed`, then dealt round-robin.
FoldAssignment assign_folds(const std::vector<std::string>& group_ids, int k, uint64_t seed);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
FoldSplit split_fold(const std::vector<std::string>& group_ids, const FoldAssignment& a, int fold);

// Config ---------------------------------------------------------------------

struct TrainConfig {
  int epochs = 60;
  int batch_size = 4;
  double lr = 2e-4;
  int finetune_epochs = 15;
  double finetune_lr = 5e-5;
  double weight_decay = 1e-2;
  uint64_t seed = 7;
  int folds = 5;
  int run_folds = 0;  // train only the first N folds when > 0
  ModelKind model = ModelKind::UNet;
  double lambda_l1 = 100.0;
  double charbonnier_eps = kCharbonnierEps;
  double eval_blur_sigma = 0.5;
  PreprocessConfig preprocess;
  LossWeights loss_weights;
  AugmentConfig augment;
  std::string lpips_weights;  // empty: $R2T_LPIPS_WEIGHTS

  void validate() const;
  int total_epochs() const { return epochs + finetune_epochs; }
  UNetConfig unet() const { return UNetConfig::reduced(preprocess.target_size); }

  std::string to_json() const;
  /// Overrides the fields present in `text` on top of `base`; unknown keys
  /// are rejected.
  static TrainConfig from_json(const std::string& text, const TrainConfig& base);
  static TrainConfig from_json(const std::string& text);
};

/// Cosine annealing from `base` to 0 over `period` epochs.
double cosine_lr(double base, int epoch, int period);
/// Rate for any epoch of the schedule (main phase then fine-tune).
double scheduled_lr(const TrainConfig& cfg, int epoch);

// Data -----------------------------------------------------------------------

/// A sample ready for the network.
struct PreparedSample {
  std::string sample_id;
  std::string group_id;
  torch::Tensor rgb;      // [3,S,S] signed
  torch::Tensor thermal;  // [1,S,S] unit
  MetadataVector features;
};

inline constexpr std::string_view kPreprocessManifest = "preprocess.json";

/// Writes the conditioned dataset (RGB still 0..255 on disk) and the
/// preprocess manifest recording the config and its hash.
void preprocess_dataset(const fs::path& in_root, const fs::path& out_root,
                        const PreprocessConfig& cfg);

/// Loads `root` for a model expecting `cfg`. A preprocessed dataset must
/// carry the same config hash (ConfigError otherwise); a raw one is
/// preprocessed in memory.
std::vector<PreparedSample> load_prepared(const fs::path& root, const PreprocessConfig& cfg);
std::vector<PreparedSample> prepare_samples(const std::vector<PairedSample>& samples,
                                            const PreprocessConfig& cfg);

// Training -------------------------------------------------------------------

struct HistoryRow {
  int epoch = 0;
  double lr = 0.0;
  double total_loss = 0.0;
  double charbonnier = 0.0;
  double msssim_term = 0.0;
  double lpips_term = 0.0;
  double grad_term = 0.0;
  double stats_term = 0.0;
  // pix2pix only
  double d_loss = 0.0;
  double g_adversarial = 0.0;
  double g_l1 = 0.0;
};

std::string history_csv(const std::vector<HistoryRow>& rows, ModelKind kind);

using LogFn = std::function<void(const std::string&)>;

struct FoldResult {
  int fold = 0;
  fs::path checkpoint;
  std::vector<HistoryRow> history;
  Standardizer standardizer;
};

/// Trains one fold on `train`; writes checkpoint.pt and history.csv into
/// `fold_dir` after every epoch. A non-finite loss throws NonFiniteLossError
/// and leaves the previous epoch's checkpoint in place.
FoldResult train_fold(const std::vector<PreparedSample>& train, int fold, const TrainConfig& cfg,
                      LpipsNet* lpips, const fs::path& fold_dir, const LogFn& log = {});

/// One optimizer step of the composite loss on a batch; returns the
/// pre-update breakdown.
LossBreakdown unet_train_step(ConditionalUNet& model, torch::optim::Optimizer& opt,
                              const torch::Tensor& rgb, const torch::Tensor& thermal,
                              const torch::Tensor& cond, const LossWeights& weights,
                              LpipsNet* lpips, double eps = kCharbonnierEps);

// Evaluation -----------------------------------------------------------------

/// PSNR/SSIM/LPIPS of each prediction (blurred by `blur_sigma` first)
/// against its target.
MetricReport score_predictions(const std::vector<std::string>& ids,
                               const std::vector<torch::Tensor>& preds,
                               const std::vector<torch::Tensor>& targets, LpipsNet& lpips,
                               double blur_sigma, int fold_id);

/// Raw (unblurred) model outputs [1,S,S] for each sample, using the
/// checkpoint's standardizer.
std::vector<torch::Tensor> predict(Checkpoint& ck, const std::vector<PreparedSample>& samples);

MetricReport evaluate(Checkpoint& ck, const std::vector<PreparedSample>& samples, LpipsNet& lpips,
                      double blur_sigma, std::vector<torch::Tensor>* preds_out = nullptr);

/// report.csv, report.json, pred/<id>.png (16-bit), rgb/<id>.png and
/// thermal/<id>.png; the latter two feed `render`.
void write_evaluation(const fs::path& dir, const MetricReport& report,
                      const std::vector<PreparedSample>& samples,
                      const std::vector<torch::Tensor>& preds);

// Cross-validation -----------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample std over folds, 0 for one fold
};

struct CvAggregate {
  MeanStd psnr_db, ssim, lpips;
};

CvAggregate aggregate_reports(const std::vector<MetricReport>& reports);
/// "model,psnr_db,ssim,lpips" with "mean ± std" cells.
std::string aggregate_table(const CvAggregate& agg, ModelKind kind);

struct CvResult {
  FoldAssignment assignment;
  std::vector<FoldResult> folds;
  std::vector<MetricReport> reports;
  CvAggregate aggregate;
};

/// Trains and evaluates every fold under `run_dir/fold<k>/` and writes the
/// aggregate files.
CvResult run_cross_validation(const std::vector<PreparedSample>& data, const TrainConfig& cfg,
                              LpipsNet* lpips, const fs::path& run_dir, const LogFn& log = {});

// Run manifest -----------------------------------------------------------------

struct RunManifest {
  std::string command;
  std::string config_json;
  uint64_t seed = 0;
  std::string layout_version{kFeatureLayoutVersion};
  std::string preprocess_hash;
  std::string code_version;
  std::string started_utc;
  std::string finished_utc;  // empty while running
  std::vector<std::string> outputs;
  std::string status = "running";
};

void write_manifest(const fs::path& path, const RunManifest& m);
RunManifest read_manifest(const fs::path& path);
std::string now_utc_iso8601();

}  // namespace r2t
