#pragma once

// Shared domain types for the RGB-to-thermal pipeline: range-tagged image
// tensors, per-sample metadata, paired samples and metric reports, plus the
// on-disk dataset layout every other module reads and writes.

#include <torch/torch.h>

#include <chrono>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace r2t {

namespace fs = std::filesystem;

using UtcTime = std::chrono::sys_seconds;

// Errors ---------------------------------------------------------------------

/// Raised when a tensor violates its declared range tag or shape contract.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Image tensors ----------------------------------------------------------------

enum class RangeTag { Raw0To255, Unit0To1, SignedPm1 };

std::string_view to_string(RangeTag tag);
std::pair<float, float> range_bounds(RangeTag tag);

/// A float32 [C,H,W] image whose values are guaranteed to lie inside the
/// interval named by its range tag. C is 1 or 3. Treat the wrapped tensor as
/// read-only; every operation in this library returns a new ImageTensor.
class ImageTensor {
 public:
  /// Validates shape and value range; throws ContractError / ShapeError.
  ImageTensor(torch::Tensor data, RangeTag tag);

  /// Clamps into the tag's interval before validating. Use only where the
  /// operation itself defines clipping (e.g. after an affine stretch).
  static ImageTensor clamped(torch::Tensor data, RangeTag tag);

  const torch::Tensor& data() const { return data_; }
  RangeTag range() const { return tag_; }
  int64_t channels() const { return data_.size(0); }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

  /// Throws ContractError naming `where` if this tensor is not tagged `tag`.
  void require(RangeTag tag, std::string_view where) const;

 private:
  torch::Tensor data_;
  RangeTag tag_;
};

// Metadata -------------------------------------------------------------------

/// Per-image acquisition record. Numeric fields use NaN for "not provided";
/// consumers that need a field report it by name.
struct MetadataRecord {
  double latitude = std::numeric_limits<double>::quiet_NaN();
  double longitude = std::numeric_limits<double>::quiet_NaN();
  UtcTime timestamp{};
  double temperature_c = std::numeric_limits<double>::quiet_NaN();
  double relative_humidity_pct = std::numeric_limits<double>::quiet_NaN();
  double wind_speed_ms = std::numeric_limits<double>::quiet_NaN();
  double wind_direction_deg = std::numeric_limits<double>::quiet_NaN();
  double solar_radiation_wm2 = std::numeric_limits<double>::quiet_NaN();
  double cloud_cover_pct = std::numeric_limits<double>::quiet_NaN();

  bool operator==(const MetadataRecord& other) const;
};

/// Range violations of a record, one message per offending field.
std::vector<std::string> validate_metadata(const MetadataRecord& record);

std::string format_iso8601(UtcTime t);
/// Accepts "YYYY-MM-DDTHH:MM[:SS][Z]"; throws std::invalid_argument.
UtcTime parse_iso8601(std::string_view text);

// Samples --------------------------------------------------------------------

struct PairedSample {
  std::string sample_id;
  ImageTensor rgb;      // C=3
  ImageTensor thermal;  // C=1, Unit0To1
  MetadataRecord metadata;
  std::string group_id;
};

inline constexpr int64_t kModelImageSize = 384;

/// Reports every broken invariant of a sample; never throws. Pass
/// `expected_size` once preprocessing has run to also pin the spatial size.
std::vector<std::string> validate_sample(const PairedSample& sample,
                                         std::optional<int64_t> expected_size = std::nullopt);

// Metrics --------------------------------------------------------------------

struct MetricRow {
  std::string sample_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double lpips = 0.0;
};

struct MetricMeans {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double lpips = 0.0;
};

struct MetricReport {
  int fold_id = 0;
  std::vector<MetricRow> per_sample;
  MetricMeans fold_mean;
};

/// Builds a report whose fold_mean is the arithmetic mean of `rows`.
MetricReport make_report(int fold_id, std::vector<MetricRow> rows);

void write_report_csv(const MetricReport& report, const fs::path& path);
void write_report_json(const MetricReport& report, const fs::path& path);
MetricReport read_report_csv(const fs::path& path, int fold_id);

// Dataset layout -------------------------------------------------------------
//
//   <root>/rgb/<id>.png
//   <root>/thermal/<id>.png
//   <root>/metadata.csv

inline constexpr std::string_view kMetadataCsvHeader =
    "sample_id,group_id,latitude,longitude,timestamp_iso8601,temperature_c,"
    "relative_humidity_pct,wind_speed_ms,wind_direction_deg,solar_radiation_wm2,"
    "cloud_cover_pct";

struct MetadataRow {
  std::string sample_id;
  std::string group_id;
  MetadataRecord record;
};

std::vector<MetadataRow> read_metadata_csv(const fs::path& path);
/// Rows are written in the order given.
void write_metadata_csv(const fs::path& path, const std::vector<MetadataRow>& rows);
std::string format_metadata_row(const MetadataRow& row);

fs::path rgb_path(const fs::path& root, std::string_view sample_id);
fs::path thermal_path(const fs::path& root, std::string_view sample_id);

/// Loads every row of metadata.csv with its images; RGB as Raw0To255 and
/// thermal as Unit0To1.
std::vector<PairedSample> load_dataset(const fs::path& root);
/// Writes images as 8-bit PNG and the rows to metadata.csv (sorted by id).
void write_dataset(const fs::path& root, const std::vector<PairedSample>& samples);

/// Writes `text` to `path` through a temporary sibling and a rename.
void write_file_atomic(const fs::path& path, std::string_view text);
std::string read_text_file(const fs::path& path);

}  // namespace r2t
