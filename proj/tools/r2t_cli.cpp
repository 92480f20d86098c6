// r2t: RGB-to-thermal pipeline entry point.
//
//   r2t ingest      pairs.csv + weather lookups -> dataset directory
//   r2t preprocess  raw dataset -> conditioned 384 px dataset
//   r2t train / cv  grouped k-fold training + evaluation
//   r2t evaluate    checkpoint x dataset -> MetricReport
//   r2t infer       one RGB image + metadata -> thermal map + rendering
//   r2t render      evaluation directory -> triptychs
//   r2t lpips-weights  write or check LPIPS backbone weights

#include "r2t/image_io.hpp"
#include "r2t/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <iostream>
#include <set>
#include <sstream>

namespace {

using namespace r2t;
using json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitUsage = 2;

void log_line(const std::string& msg) { std::cerr << "[r2t] " << msg << "\n"; }

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::pair<double, double> parse_pair(const std::string& text, const char* what) {
  auto parts = split_commas(text);
  if (parts.size() != 2) throw ConfigError(std::string(what) + " expects 'lo,hi', got '" + text + "'");
  return {std::stod(parts[0]), std::stod(parts[1])};
}

LpipsNet resolve_lpips(const std::string& flag, const std::string& from_config) {
  fs::path path = !flag.empty() ? fs::path(flag)
                  : !from_config.empty() ? fs::path(from_config)
                                         : lpips_weights_from_env();
  return load_lpips(path);
}

// ingest ----------------------------------------------------------------------

struct IngestArgs {
  std::string pairs, out, weather_mode = "fixture", fixture_dir, record_dir;
};

// pairs.csv: sample_id,group_id,latitude,longitude,timestamp_iso8601,rgb,thermal
// (image paths relative to the csv's directory).
int cmd_ingest(const IngestArgs& a) {
  const fs::path pairs_path(a.pairs);
  std::istringstream in(read_text_file(pairs_path));
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sample_id,group_id,latitude,longitude,timestamp_iso8601,rgb,thermal")
    throw ConfigError("pairs csv header must be "
                      "sample_id,group_id,latitude,longitude,timestamp_iso8601,rgb,thermal");

  std::unique_ptr<WeatherSource> source;
  if (parse_weather_mode(a.weather_mode) == WeatherMode::Fixture) {
    if (a.fixture_dir.empty()) throw ConfigError("--weather-mode fixture needs --fixture-dir");
    source = std::make_unique<FixtureWeatherSource>(a.fixture_dir);
  } else {
    OpenMeteoOptions opt;
    if (!a.record_dir.empty()) opt.record_dir = fs::path(a.record_dir);
    source = std::make_unique<OpenMeteoWeatherSource>(opt);
  }

  const fs::path out(a.out);
  std::map<std::string, MetadataRow> done;
  if (fs::exists(out / "metadata.csv"))
    for (auto& row : read_metadata_csv(out / "metadata.csv"))
      if (fs::exists(rgb_path(out, row.sample_id)) && fs::exists(thermal_path(out, row.sample_id)))
        done[row.sample_id] = row;

  std::vector<std::string> failed;
  int added = 0;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c = split_commas(line);
    const std::string id = c.empty() ? "line " + std::to_string(line_no) : c[0];
    try {
      if (c.size() != 7) throw ConfigError("expected 7 columns, got " + std::to_string(c.size()));
      if (done.count(id)) continue;
      const auto base = pairs_path.parent_path();
      const fs::path rgb_file = base / c[5], thermal_file = base / c[6];
      if (!fs::exists(rgb_file)) throw IoError("missing rgb file " + rgb_file.string());
      if (!fs::exists(thermal_file)) throw IoError("missing thermal file " + thermal_file.string());
      auto rgb = read_image(rgb_file, ColorMode::Rgb);
      auto th = read_image(thermal_file, ColorMode::Gray);
      ImageTensor thermal(th.data() / 255.0f, RangeTag::Unit0To1);
      auto record = fetch_weather(*source, std::stod(c[2]), std::stod(c[3]), parse_iso8601(c[4]));
      PairedSample sample{id, rgb, thermal, record, c[1]};
      auto problems = validate_sample(sample);
      if (!problems.empty()) {
        std::string msg;
        for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
        throw ConfigError(msg);
      }
      write_image(rgb_path(out, id), rgb);
      write_image(thermal_path(out, id), thermal);
      done[id] = MetadataRow{id, c[1], record};
      ++added;
    } catch (const std::exception& e) {
      failed.push_back(id);
      std::cerr << "ingest: sample " << id << ": " << e.what() << "\n";
    }
  }
  std::vector<MetadataRow> rows;
  for (auto& [_, row] : done) rows.push_back(row);
  const auto csv = out / "metadata.csv";
  // Leave a completed ingest byte-identical when nothing new arrived.
  if (added > 0 || !fs::exists(csv)) write_metadata_csv(csv, rows);
  log_line("ingest: " + std::to_string(added) + " added, " + std::to_string(rows.size()) +
           " total, " + std::to_string(failed.size()) + " failed");
  if (!failed.empty()) {
    std::string ids;
    for (const auto& f : failed) ids += (ids.empty() ? "" : ",") + f;
    std::cerr << "ingest: failed samples: " << ids << "\n";
    return kExitPartial;
  }
  return kExitOk;
}

// preprocess --------------------------------------------------------------------

int cmd_preprocess(const std::string& in, const std::string& out, const PreprocessConfig& cfg) {
  preprocess_dataset(in, out, cfg);
  log_line("preprocess: wrote " + out + " (" + cfg.canonical() + ", hash " + cfg.hash() + ")");
  return kExitOk;
}

// train / cv --------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, config, lpips;
  std::optional<std::string> model;
  std::optional<int> folds, run_folds, epochs, finetune_epochs, batch_size, size;
  std::optional<uint64_t> seed;
  std::optional<double> lr, finetune_lr;
};

TrainConfig resolve_config(const TrainArgs& a, bool all_folds) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = TrainConfig::from_json(read_text_file(a.config), cfg);
  if (a.model) cfg.model = parse_model_kind(*a.model);
  if (a.folds) cfg.folds = *a.folds;
  if (a.run_folds) cfg.run_folds = *a.run_folds;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.finetune_epochs) cfg.finetune_epochs = *a.finetune_epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.size) cfg.preprocess.target_size = *a.size;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr) cfg.lr = *a.lr;
  if (a.finetune_lr) cfg.finetune_lr = *a.finetune_lr;
  if (!a.lpips.empty()) cfg.lpips_weights = a.lpips;
  if (all_folds) cfg.run_folds = 0;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a, bool all_folds, const std::string& name) {
  const auto cfg = resolve_config(a, all_folds);
  log_line(name + ": effective config (flag > file > default):\n" + cfg.to_json());
  const fs::path run_dir(a.out);
  fs::create_directories(run_dir);

  RunManifest m;
  m.command = name;
  m.config_json = cfg.to_json();
  m.seed = cfg.seed;
  m.preprocess_hash = cfg.preprocess.hash();
  m.code_version = R2T_VERSION;
  m.started_utc = now_utc_iso8601();
  m.outputs = {"config.json", "folds.json", "aggregate.csv", "aggregate.json"};
  write_manifest(run_dir / "manifest.json", m);
  write_file_atomic(run_dir / "config.json", cfg.to_json() + "\n");

  auto lpips = resolve_lpips("", cfg.lpips_weights);
  auto data = load_prepared(a.data, cfg.preprocess);
  log_line(name + ": " + std::to_string(data.size()) + " samples from " + a.data);
  try {
    auto result = run_cross_validation(data, cfg, &lpips, run_dir, log_line);
    for (const auto& f : result.folds) m.outputs.push_back("fold" + std::to_string(f.fold));
    m.status = "completed";
    std::cout << aggregate_table(result.aggregate, cfg.model);
  } catch (...) {
    m.status = "failed";
    m.finished_utc = now_utc_iso8601();
    write_manifest(run_dir / "manifest.json", m);
    throw;
  }
  m.finished_utc = now_utc_iso8601();
  write_manifest(run_dir / "manifest.json", m);
  return kExitOk;
}

// evaluate ------------------------------------------------------------------------

int cmd_evaluate(const std::string& checkpoint, const std::string& data, const std::string& out,
                 double blur, const std::string& lpips_flag) {
  auto ck = load_checkpoint(checkpoint);
  auto lpips = resolve_lpips(lpips_flag, "");
  auto samples = load_prepared(data, ck.meta.preprocess);
  std::vector<torch::Tensor> preds;
  auto report = evaluate(ck, samples, lpips, blur, &preds);
  write_evaluation(out, report, samples, preds);

  RunManifest m;
  m.command = "evaluate";
  m.config_json = json{{"checkpoint", checkpoint}, {"data", data}, {"blur_sigma", blur}}.dump();
  m.preprocess_hash = ck.meta.preprocess.hash();
  m.code_version = R2T_VERSION;
  m.started_utc = m.finished_utc = now_utc_iso8601();
  m.outputs = {"report.csv", "report.json", "pred", "rgb", "thermal"};
  m.status = "completed";
  write_manifest(fs::path(out) / "manifest.json", m);

  std::printf("samples %zu  psnr %.4f dB  ssim %.4f  lpips %.4f\n", report.per_sample.size(),
              report.fold_mean.psnr_db, report.fold_mean.ssim, report.fold_mean.lpips);
  return kExitOk;
}

// infer ---------------------------------------------------------------------------

MetadataRecord record_from_json(const json& j) {
  MetadataRecord r;
  auto num = [&](const char* key, double& dst) {
    if (j.contains(key) && !j[key].is_null()) dst = j[key].get<double>();
  };
  num("latitude", r.latitude);
  num("longitude", r.longitude);
  if (!j.contains("timestamp_iso8601")) throw IngestError("timestamp_iso8601", "metadata lacks timestamp_iso8601");
  r.timestamp = parse_iso8601(j["timestamp_iso8601"].get<std::string>());
  num("temperature_c", r.temperature_c);
  num("relative_humidity_pct", r.relative_humidity_pct);
  num("wind_speed_ms", r.wind_speed_ms);
  num("wind_direction_deg", r.wind_direction_deg);
  num("solar_radiation_wm2", r.solar_radiation_wm2);
  num("cloud_cover_pct", r.cloud_cover_pct);
  return r;
}

int cmd_infer(const std::string& checkpoint, const std::string& rgb_file, const std::string& meta_file,
              const std::string& out, const RenderConfig& render) {
  auto ck = load_checkpoint(checkpoint);
  const auto record = record_from_json(json::parse(read_text_file(meta_file)));
  PreparedSample s;
  s.sample_id = fs::path(rgb_file).stem().string();
  s.rgb = preprocess_pipeline(read_image(rgb_file, ColorMode::Rgb), ck.meta.preprocess).data();
  s.features = build_feature_vector(record);
  auto pred = predict(ck, {s}).front();
  const fs::path dir(out);
  ImageTensor unit = ImageTensor::clamped(pred, RangeTag::Unit0To1);
  write_image16(dir / "thermal.png", gaussian_blur(unit, render.blur_sigma));
  write_image(dir / "render.png", render_prediction(unit, render));
  log_line("infer: wrote " + (dir / "thermal.png").string() + " and " + (dir / "render.png").string());
  return kExitOk;
}

// render --------------------------------------------------------------------------

int cmd_render(const std::string& in, const std::string& out, const RenderConfig& cfg) {
  cfg.validate();
  const fs::path root(in);
  if (!fs::is_directory(root / "pred"))
    throw IoError(in + " has no pred/ directory (expected the output of `r2t evaluate`)");
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(root / "pred"))
    if (e.path().extension() == ".png") preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  RenderConfig gt_cfg = cfg;
  gt_cfg.blur_sigma = 0.0;
  std::vector<std::string> failed;
  for (const auto& p : preds) {
    const auto id = p.stem().string();
    try {
      auto pred = read_image(p, ColorMode::Gray);
      ImageTensor pred_unit(pred.data() / 255.0f, RangeTag::Unit0To1);
      std::vector<ImageTensor> panels;
      if (fs::exists(root / "rgb" / (id + ".png")))
        panels.push_back(read_image(root / "rgb" / (id + ".png"), ColorMode::Rgb));
      panels.push_back(render_prediction(pred_unit, cfg));
      if (fs::exists(root / "thermal" / (id + ".png"))) {
        auto gt = read_image(root / "thermal" / (id + ".png"), ColorMode::Gray);
        panels.push_back(render_prediction(ImageTensor(gt.data() / 255.0f, RangeTag::Unit0To1), gt_cfg));
      }
      write_image(fs::path(out) / (id + ".png"), make_triptych(panels));
    } catch (const std::exception& e) {
      failed.push_back(id);
      std::cerr << "render: " << id << ": " << e.what() << "\n";
    }
  }
  log_line("render: " + std::to_string(preds.size() - failed.size()) + " triptychs in " + out);
  return failed.empty() ? kExitOk : kExitPartial;
}

// lpips-weights -------------------------------------------------------------------

int cmd_lpips_weights(bool surrogate, uint64_t seed, const std::string& out, const std::string& check) {
  if (!check.empty()) {
    auto net = load_lpips(check);
    auto a = torch::linspace(0, 1, 64).view({1, 1, 1, 64}).expand({1, 1, 64, 64}).contiguous();
    std::printf("ok: d(x-ramp, mirrored x-ramp) = %.6f\n", lpips_metric(net, a, a.flip({3})));
    return kExitOk;
  }
  if (!surrogate) throw ConfigError("lpips-weights needs --surrogate (with --out) or --check FILE");
  if (out.empty()) throw ConfigError("lpips-weights --surrogate needs --out");
  make_surrogate_lpips(seed)->save_weights(out);
  log_line("wrote surrogate LPIPS weights (seed " + std::to_string(seed) + ") to " + out);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RGB-to-thermal translation pipeline"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print code version and feature layout as JSON");

  // ingest
  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build a dataset directory with weather metadata");
  c_ingest->add_option("--pairs", ingest.pairs,
                       "CSV: sample_id,group_id,latitude,longitude,timestamp_iso8601,rgb,thermal")
      ->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--out", ingest.out, "Dataset directory to create or extend")->required();
  c_ingest->add_option("--weather-mode", ingest.weather_mode, "fixture or live")
      ->check(CLI::IsMember({"fixture", "live"}));
  c_ingest->add_option("--fixture-dir", ingest.fixture_dir, "Recorded weather fixtures");
  c_ingest->add_option("--record-fixtures", ingest.record_dir, "Live mode: also save fixtures here");

  // preprocess
  std::string pp_in, pp_out, pp_stretch = "1,99";
  PreprocessConfig pp_cfg;
  auto* c_pre = app.add_subcommand("preprocess", "Letterbox, saturation boost and contrast stretch");
  c_pre->add_option("--in", pp_in, "Raw dataset directory")->required()->check(CLI::ExistingDirectory);
  c_pre->add_option("--out", pp_out, "Output dataset directory")->required();
  c_pre->add_option("--size", pp_cfg.target_size, "Square canvas size")->capture_default_str();
  c_pre->add_option("--saturation", pp_cfg.saturation_factor, "HSV saturation factor")->capture_default_str();
  c_pre->add_option("--stretch", pp_stretch, "Percentiles lo,hi")->capture_default_str();

  // train / cv
  TrainArgs targs;
  auto add_train_options = [&](CLI::App* c) {
    c->add_option("--data", targs.data, "Dataset directory (raw or preprocessed)")
        ->required()->check(CLI::ExistingDirectory);
    c->add_option("--out", targs.out, "Run directory")->required();
    c->add_option("--config", targs.config, "JSON training config")->check(CLI::ExistingFile);
    c->add_option("--model", targs.model, "unet or pix2pix")->check(CLI::IsMember({"unet", "pix2pix"}));
    c->add_option("--folds", targs.folds, "Number of cross-validation folds");
    c->add_option("--seed", targs.seed, "Random seed");
    c->add_option("--epochs", targs.epochs, "Main-phase epochs");
    c->add_option("--finetune-epochs", targs.finetune_epochs, "Fine-tune epochs");
    c->add_option("--batch-size", targs.batch_size, "Batch size");
    c->add_option("--lr", targs.lr, "Initial learning rate");
    c->add_option("--finetune-lr", targs.finetune_lr, "Fine-tune learning rate");
    c->add_option("--size", targs.size, "Model input size (multiple of 16)");
    c->add_option("--lpips-weights", targs.lpips, "LPIPS weights file");
  };
  auto* c_train = app.add_subcommand("train", "Train (and evaluate) grouped cross-validation folds");
  add_train_options(c_train);
  c_train->add_option("--run-folds", targs.run_folds, "Only train the first N folds");
  auto* c_cv = app.add_subcommand("cv", "Full k-fold cross-validation (every fold)");
  add_train_options(c_cv);

  // evaluate
  std::string ev_ck, ev_data, ev_out, ev_lpips;
  double ev_blur = 0.5;
  auto* c_eval = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  c_eval->add_option("--checkpoint", ev_ck, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--out", ev_out, "Output directory")->required();
  c_eval->add_option("--blur", ev_blur, "Gaussian sigma applied before scoring")->capture_default_str();
  c_eval->add_option("--lpips-weights", ev_lpips, "LPIPS weights file");

  // infer
  std::string in_ck, in_rgb, in_meta, in_out;
  RenderConfig in_render;
  auto* c_infer = app.add_subcommand("infer", "Predict a thermal map for one RGB image");
  c_infer->add_option("--checkpoint", in_ck, "Checkpoint file")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--rgb", in_rgb, "RGB image")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--meta", in_meta, "Metadata JSON (metadata.csv field names)")
      ->required()->check(CLI::ExistingFile);
  c_infer->add_option("--out", in_out, "Output directory")->required();
  c_infer->add_option("--sigma", in_render.blur_sigma, "Blur sigma")->capture_default_str();
  c_infer->add_option("--cmap", in_render.colormap, "Colormap")->capture_default_str();

  // render
  std::string r_in, r_out, r_norm = "1,99";
  RenderConfig r_cfg;
  auto* c_render = app.add_subcommand("render", "Triptychs from an evaluation directory");
  c_render->add_option("--in", r_in, "Evaluation directory")->required()->check(CLI::ExistingDirectory);
  c_render->add_option("--out", r_out, "Output directory")->required();
  c_render->add_option("--sigma", r_cfg.blur_sigma, "Blur sigma")->capture_default_str();
  c_render->add_option("--norm", r_norm, "Percentiles lo,hi")->capture_default_str();
  c_render->add_option("--cmap", r_cfg.colormap, "Colormap")->capture_default_str();

  // lpips-weights
  bool lw_surrogate = false;
  uint64_t lw_seed = 20240611;
  std::string lw_out, lw_check;
  auto* c_lw = app.add_subcommand("lpips-weights", "Write surrogate LPIPS weights or check a file");
  c_lw->add_flag("--surrogate", lw_surrogate, "Write seeded stand-in weights");
  c_lw->add_option("--seed", lw_seed, "Surrogate seed")->capture_default_str();
  c_lw->add_option("--out", lw_out, "Output file");
  c_lw->add_option("--check", lw_check, "Load a weights file and run one distance")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help and friends exit 0; anything else is a usage error.
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  if (version) {
    std::cout << json{{"version", R2T_VERSION}, {"layout_version", kFeatureLayoutVersion}}.dump() << "\n";
    return kExitOk;
  }
  try {
    if (*c_ingest) return cmd_ingest(ingest);
    if (*c_pre) {
      std::tie(pp_cfg.stretch_lo, pp_cfg.stretch_hi) = parse_pair(pp_stretch, "--stretch");
      return cmd_preprocess(pp_in, pp_out, pp_cfg);
    }
    if (*c_train) return cmd_train(targs, false, "train");
    if (*c_cv) return cmd_train(targs, true, "cv");
    if (*c_eval) return cmd_evaluate(ev_ck, ev_data, ev_out, ev_blur, ev_lpips);
    if (*c_infer) return cmd_infer(in_ck, in_rgb, in_meta, in_out, in_render);
    if (*c_render) {
      std::tie(r_cfg.norm_lo, r_cfg.norm_hi) = parse_pair(r_norm, "--norm");
      return cmd_render(r_in, r_out, r_cfg);
    }
    if (*c_lw) return cmd_lpips_weights(lw_surrogate, lw_seed, lw_out, lw_check);
    std::cout << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LpipsWeightsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPartial;
  }
}
