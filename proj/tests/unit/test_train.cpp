#include "doctest_torch.hpp"
#include "support.hpp"

#include <cmath>
#include <set>

using namespace r2t;

namespace {

std::vector<std::string> grouped_ids(int groups, int per_group_max) {
  std::vector<std::string> ids;
  for (int g = 0; g < groups; ++g)
    for (int i = 0; i < 1 + g % per_group_max; ++i) ids.push_back("flight" + std::to_string(g));
  return ids;
}

std::vector<PreparedSample> tiny_samples(int n, int64_t size) {
  auto set = testing::make_overfit_set(size);
  std::vector<PreparedSample> out;
  for (int i = 0; i < n; ++i) {
    PreparedSample s;
    s.sample_id = "s" + std::to_string(i);
    s.group_id = "g" + std::to_string(i % 3);
    s.rgb = set.rgb[i % 8].clone();
    s.thermal = set.thermal[i % 8].clone();
    for (std::size_t k = 0; k < kFeatureCount; ++k) s.features[k] = std::sin(0.7 * i + k);
    s.features[kTemperature] = 10 + 3 * i;
    out.push_back(std::move(s));
  }
  return out;
}

TrainConfig tiny_config(int64_t size) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.finetune_epochs = 1;
  cfg.batch_size = 4;
  cfg.folds = 3;
  cfg.preprocess.target_size = size;
  return cfg;
}

}  // namespace

TEST_CASE("grouped folds never leak") {
  const auto ids = grouped_ids(17, 4);
  auto a = assign_folds(ids, 5, 7);
  CHECK(a.fold_of_group.size() == 17);
  std::map<int, int> groups_per_fold;
  for (const auto& [g, f] : a.fold_of_group) groups_per_fold[f]++;
  CHECK(groups_per_fold.size() == 5);
  for (const auto& [f, n] : groups_per_fold) CHECK((n == 3 || n == 4));

  std::vector<int> seen(ids.size(), 0);
  for (int fold = 0; fold < 5; ++fold) {
    auto split = split_fold(ids, a, fold);
    CHECK(split.train.size() + split.val.size() == ids.size());
    std::set<std::string> train_groups, val_groups;
    for (auto i : split.train) train_groups.insert(ids[i]);
    for (auto i : split.val) {
      val_groups.insert(ids[i]);
      seen[i]++;
    }
    for (const auto& g : val_groups) CHECK(train_groups.count(g) == 0);
  }
  for (int s : seen) CHECK(s == 1);

  CHECK(assign_folds(ids, 5, 7).fold_of_group == a.fold_of_group);
  CHECK_THROWS_AS(assign_folds(grouped_ids(4, 2), 5, 7), ConfigError);
  CHECK_THROWS_AS(assign_folds({"a", "", "b"}, 2, 7), ConfigError);
  CHECK_THROWS_AS(a.fold_of("nowhere"), std::out_of_range);
}

TEST_CASE("augmentation frequencies over 10000 draws") {
  AugmentConfig cfg;
  auto rng = derive_rng({7, 1});
  int hflip = 0, vflip = 0, rot = 0, bright = 0, noise = 0;
  std::map<int, int> quarters;
  double fmin = 10, fmax = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto d = sample_augment(cfg, rng);
    hflip += d.hflip;
    vflip += d.vflip;
    rot += d.rot90 != 0;
    if (d.rot90) quarters[d.rot90]++;
    bright += d.brightness;
    noise += d.noise;
    if (d.brightness) {
      fmin = std::min(fmin, d.brightness_factor);
      fmax = std::max(fmax, d.brightness_factor);
    } else {
      CHECK(d.brightness_factor == 1.0);
    }
  }
  CHECK(std::abs(hflip / double(n) - 0.5) <= 0.02);
  CHECK(std::abs(vflip / double(n) - 0.3) <= 0.02);
  CHECK(std::abs(rot / double(n) - 0.25) <= 0.02);
  CHECK(std::abs(bright / double(n) - 0.4) <= 0.02);
  CHECK(std::abs(noise / double(n) - 0.15) <= 0.02);
  CHECK(quarters.size() == 3);
  CHECK(fmin >= 0.85);
  CHECK(fmax <= 1.15);
}

TEST_CASE("geometric augmentation moves rgb and thermal together") {
  AugmentConfig cfg;
  auto rgb = torch::full({3, 9, 13}, -1.0f);
  auto th = torch::zeros({1, 9, 13});
  rgb.select(1, 2).select(1, 5).fill_(1.0f);
  th[0][2][5] = 1.0f;
  for (int h = 0; h < 2; ++h)
    for (int v = 0; v < 2; ++v)
      for (int r = 0; r < 4; ++r) {
        AugmentDraw d;
        d.hflip = h;
        d.vflip = v;
        d.rot90 = r;
        auto out = apply_augment(rgb, th, d, cfg);
        CHECK(out.rgb.sizes().slice(1) == out.thermal.sizes().slice(1));
        for (int c = 0; c < 3; ++c)
          CHECK(out.rgb[c].argmax().item<int64_t>() == out.thermal[0].argmax().item<int64_t>());
        CHECK(out.rgb.sum().item<float>() == rgb.sum().item<float>());
      }

  AugmentDraw photometric;
  photometric.brightness = true;
  photometric.brightness_factor = 1.1;
  photometric.noise = true;
  photometric.noise_seed = 5;
  auto img = torch::rand({3, 8, 8}) * 1.6 - 0.8;
  auto th2 = torch::rand({1, 8, 8});
  auto out = apply_augment(img, th2, photometric, cfg);
  CHECK(torch::equal(out.thermal, th2));
  CHECK_FALSE(torch::equal(out.rgb, img));
  CHECK(out.rgb.abs().max().item<float>() <= 1.0f);
  CHECK(torch::equal(apply_augment(img, th2, photometric, cfg).rgb, out.rgb));
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  CHECK(scheduled_lr(cfg, 0) == 2e-4);
  CHECK(scheduled_lr(cfg, 30) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(cfg, 59) <= 2e-6);
  CHECK(scheduled_lr(cfg, 59) > 0);
  for (int e = 1; e < 60; ++e) CHECK(scheduled_lr(cfg, e) < scheduled_lr(cfg, e - 1));
  for (int e = 60; e < 75; ++e) CHECK(scheduled_lr(cfg, e) == 5e-5);
  CHECK(cfg.total_epochs() == 75);
}

TEST_CASE("training config") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.loss_weights == LossWeights{1.0, 0.4, 0.3, 0.1, 0.05});
  auto back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  auto partial = TrainConfig::from_json(R"({"epochs": 3, "preprocess": {"target_size": 64}})");
  CHECK(partial.epochs == 3);
  CHECK(partial.preprocess.target_size == 64);
  CHECK(partial.batch_size == 4);
  CHECK(partial.unet().input_size == 64);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"epochs": 3, "epoch": 4})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"preprocess": {"target_size": 50}})"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"augment": {"hflip_p": 1.5}})"), ConfigError);
}

TEST_CASE("a short training run writes history and checkpoints") {
  testing::TempDir dir("trainfold");
  auto lpips = make_surrogate_lpips();
  auto cfg = tiny_config(32);
  auto data = tiny_samples(6, 32);
  std::vector<std::string> lines;
  auto fr = train_fold(data, 1, cfg, &lpips, dir.path(), [&](const std::string& s) { lines.push_back(s); });
  CHECK(fr.history.size() == 3);
  CHECK(fr.history[0].lr == 2e-4);
  CHECK(fr.history[2].lr == 5e-5);
  for (const auto& row : fr.history) {
    CHECK(std::isfinite(row.total_loss));
    CHECK(row.total_loss ==
          doctest::Approx(row.charbonnier + 0.4 * row.msssim_term + 0.3 * row.lpips_term +
                          0.1 * row.grad_term + 0.05 * row.stats_term)
              .epsilon(1e-6));
  }
  CHECK_FALSE(lines.empty());

  const auto csv = read_text_file(dir / "history.csv");
  CHECK(csv.rfind("epoch,lr,total_loss,charbonnier,msssim_term,lpips_term,grad_term,stats_term\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv == history_csv(fr.history, ModelKind::UNet));

  auto ck = load_checkpoint(dir / "checkpoint.pt");
  CHECK(ck.meta.epochs_completed == 3);
  CHECK(ck.meta.fold == 1);
  CHECK(ck.meta.standardizer.fitted_on_fold() == 1);
  CHECK(ck.meta.unet.input_size == 32);

  // The standardizer only sees the training samples it was given.
  std::vector<MetadataVector> feats;
  for (const auto& s : data) feats.push_back(s.features);
  auto expected = Standardizer::fit(feats, 1);
  for (std::size_t k = 0; k < kFeatureCount; ++k)
    CHECK(ck.meta.standardizer.mean()[k] == doctest::Approx(expected.mean()[k]).epsilon(1e-12));
}

TEST_CASE("pix2pix history carries the GAN columns") {
  testing::TempDir dir("p2p");
  auto lpips = make_surrogate_lpips();
  auto cfg = tiny_config(32);
  cfg.model = ModelKind::Pix2Pix;
  cfg.epochs = 1;
  cfg.finetune_epochs = 0;
  auto fr = train_fold(tiny_samples(4, 32), 0, cfg, &lpips, dir.path());
  CHECK(fr.history.size() == 1);
  CHECK(fr.history[0].d_loss > 0);
  CHECK(fr.history[0].g_l1 > 0);
  const auto csv = read_text_file(dir / "history.csv");
  CHECK(csv.find(",d_loss,g_adversarial,g_l1\n") != std::string::npos);
  auto ck = load_checkpoint(dir / "checkpoint.pt");
  CHECK(ck.meta.kind == ModelKind::Pix2Pix);
  CHECK(ck.discriminator);
}

TEST_CASE("scoring perfect predictions") {
  auto lpips = make_surrogate_lpips();
  std::vector<torch::Tensor> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(testing::pattern(i == 0 ? "a" : i == 1 ? "c" : "d", 48).unsqueeze(0));
  auto r = score_predictions({"x", "y", "z"}, maps, maps, lpips, 0.0, 4);
  CHECK(r.fold_id == 4);
  REQUIRE(r.per_sample.size() == 3);
  for (const auto& row : r.per_sample) {
    CHECK(row.psnr_db == kInfinity);
    CHECK(row.ssim == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row.lpips == 0.0);
  }
  auto blurred = score_predictions({"x"}, {maps[0]}, {maps[1]}, lpips, 0.5, 0);
  CHECK(std::isfinite(blurred.per_sample[0].psnr_db));
}

TEST_CASE("aggregation across folds") {
  std::vector<MetricReport> reps{make_report(0, {{"a", 10, 0.5, 0.3}}), make_report(1, {{"b", 14, 0.7, 0.1}})};
  auto agg = aggregate_reports(reps);
  CHECK(agg.psnr_db.mean == 12);
  CHECK(agg.psnr_db.std == doctest::Approx(std::sqrt(8.0)));
  CHECK(agg.ssim.mean == doctest::Approx(0.6));
  CHECK(aggregate_table(agg, ModelKind::UNet) ==
        "model,psnr_db,ssim,lpips\nU-Net (FiLM),12.00 ± 2.83,0.6000 ± 0.1414,0.2000 ± 0.1414\n");
}

TEST_CASE("preprocessed datasets are tied to their config") {
  testing::TempDir dir("prep");
  auto raw = testing::write_raw_dataset(dir / "src", {6, 3, 40, 30, 3});
  // Build the dataset layout directly from the raw pairs.
  std::vector<PairedSample> samples;
  FixtureWeatherSource weather(raw.fixture_dir);
  std::istringstream in(read_text_file(raw.pairs_csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> c;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    auto rgb = torch::rand({3, 30, 40}) * 255;
    auto th = torch::rand({1, 30, 40});
    samples.push_back({c[0], ImageTensor(rgb, RangeTag::Raw0To255), ImageTensor(th, RangeTag::Unit0To1),
                       fetch_weather(weather, std::stod(c[2]), std::stod(c[3]), parse_iso8601(c[4])), c[1]});
  }
  write_dataset(dir / "raw", samples);

  PreprocessConfig cfg;
  cfg.target_size = 32;
  preprocess_dataset(dir / "raw", dir / "pre", cfg);
  CHECK(fs::exists(dir / "pre" / std::string(kPreprocessManifest)));
  auto from_pre = load_prepared(dir / "pre", cfg);
  auto from_raw = load_prepared(dir / "raw", cfg);
  REQUIRE(from_pre.size() == 6);
  REQUIRE(from_raw.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(from_pre[i].rgb.sizes() == torch::IntArrayRef({3, 32, 32}));
    // On-disk values are rounded to 8 bits.
    CHECK((from_pre[i].rgb - from_raw[i].rgb).abs().max().item<float>() <= 1.0f / 127.5f + 1e-6f);
    CHECK(from_pre[i].features == from_raw[i].features);
  }
  PreprocessConfig other = cfg;
  other.target_size = 64;
  CHECK_THROWS_AS(load_prepared(dir / "pre", other), ConfigError);
}

TEST_CASE("run manifests round-trip") {
  testing::TempDir dir("manifest");
  RunManifest m;
  m.command = "train";
  m.config_json = TrainConfig{}.to_json();
  m.seed = 7;
  m.preprocess_hash = PreprocessConfig{}.hash();
  m.code_version = "test";
  m.started_utc = now_utc_iso8601();
  m.outputs = {"fold0"};
  write_manifest(dir / "manifest.json", m);
  auto back = read_manifest(dir / "manifest.json");
  CHECK(back.command == "train");
  CHECK(back.seed == 7);
  CHECK(back.layout_version == kFeatureLayoutVersion);
  CHECK(back.preprocess_hash == m.preprocess_hash);
  CHECK(back.outputs == m.outputs);
  CHECK(back.status == "running");
}
