#pragma once

// Conditioning features: the 15-slot metadata vector, fold-local
// standardization, and weather lookup (recorded fixtures or Open-Meteo).

#include "r2t/core_types.hpp"

#include <array>
#include <memory>
#include <span>

namespace r2t {

inline constexpr std::size_t kFeatureCount = 15;
inline constexpr std::string_view kFeatureLayoutVersion = "meta15-v1";

enum FeatureSlot : std::size_t {
  kLatitude = 0,
  kLongitude,
  kTemperature,
  kRelativeHumidity,
  kWindSpeed,
  kWindDirSin,
  kWindDirCos,
  kSolarRadiation,
  kCloudCover,
  kTimeOfDaySin,
  kTimeOfDayCos,
  kDayOfYearSin,
  kDayOfYearCos,
  kSolarElevationProxy,  // time_cos * doy_cos
  kIsDaylight,           // solar_radiation > 10 W/m^2
};

std::string_view feature_name(std::size_t slot);

struct MetadataVector {
  std::array<double, kFeatureCount> values{};
  std::string layout_version{kFeatureLayoutVersion};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  bool operator==(const MetadataVector&) const = default;
};

/// Missing or unusable metadata field; the message names the field.
class IngestError : public std::runtime_error {
 public:
  IngestError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct CyclicPair {
  double sin = 0.0;
  double cos = 1.0;
};

/// Angle 2*pi*t/86400 with t seconds since local midnight (UTC + offset).
CyclicPair encode_time_of_day(UtcTime t, std::chrono::minutes utc_offset = {});
/// Throws std::out_of_range for directions outside [0,360).
CyclicPair encode_wind_direction(double degrees);
/// Angle 2*pi*(ordinal_day - 1)/365.25 on the local calendar date.
CyclicPair encode_day_of_year(UtcTime t, std::chrono::minutes utc_offset = {});

MetadataVector build_feature_vector(const MetadataRecord& record,
                                    std::chrono::minutes utc_offset = {});

/// Per-slot z-scoring fitted on one training fold.
class Standardizer {
 public:
  static constexpr double kMinStd = 1e-6;

  Standardizer() = default;
  Standardizer(std::array<double, kFeatureCount> mean, std::array<double, kFeatureCount> stddev,
               int fitted_on_fold);

  /// Population mean/std per slot; std clamped below at kMinStd. Needs at
  /// least two vectors.
  static Standardizer fit(std::span<const MetadataVector> vectors, int fold);

  MetadataVector apply(const MetadataVector& v) const;
  MetadataVector invert(const MetadataVector& z) const;

  const std::array<double, kFeatureCount>& mean() const { return mean_; }
  const std::array<double, kFeatureCount>& stddev() const { return std_; }
  int fitted_on_fold() const { return fold_; }
  bool fitted() const { return fold_ >= 0; }

 private:
  std::array<double, kFeatureCount> mean_{};
  std::array<double, kFeatureCount> std_{};
  int fold_ = -1;
};

/// [N,15] float tensor of the given vectors.
torch::Tensor to_tensor(std::span<const MetadataVector> vectors);

// Weather --------------------------------------------------------------------

struct WeatherObservation {
  double temperature_c = 0.0;
  double relative_humidity_pct = 0.0;
  double wind_speed_ms = 0.0;
  double wind_direction_deg = 0.0;
  double solar_radiation_wm2 = 0.0;
  double cloud_cover_pct = 0.0;
  bool operator==(const WeatherObservation&) const = default;
};

class FetchError : public std::runtime_error {
 public:
  FetchError(const std::string& what, bool retryable)
      : std::runtime_error(what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class FixtureMissError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class WeatherParseError : public std::runtime_error {
 public:
  WeatherParseError(const std::string& what, std::string raw)
      : std::runtime_error(what), raw_(std::move(raw)) {}
  const std::string& raw_payload() const { return raw_; }

 private:
  std::string raw_;
};

/// Fixture key: "<lat 2dp>_<lon 2dp>_<YYYY-MM-DDTHH>" at the nearest UTC hour.
std::string fixture_key(double lat, double lon, UtcTime t);
UtcTime nearest_hour(UtcTime t);

/// Parses an Open-Meteo hourly payload and returns the row whose hour is
/// nearest to `t`. Throws WeatherParseError carrying the raw text.
WeatherObservation select_nearest_hour(std::string_view payload, UtcTime t);

WeatherObservation read_weather_fixture(const fs::path& file);
void write_weather_fixture(const fs::path& file, const WeatherObservation& obs);

class WeatherSource {
 public:
  virtual ~WeatherSource() = default;
  virtual WeatherObservation fetch(double lat, double lon, UtcTime t) const = 0;
};

/// Reads `<dir>/<fixture_key>.json`; throws FixtureMissError when absent.
class FixtureWeatherSource final : public WeatherSource {
 public:
  explicit FixtureWeatherSource(fs::path dir) : dir_(std::move(dir)) {}
  WeatherObservation fetch(double lat, double lon, UtcTime t) const override;

 private:
  fs::path dir_;
};

struct OpenMeteoOptions {
  std::string host = "archive-api.open-meteo.com";
  std::string path = "/v1/archive";
  int max_attempts = 3;
  int timeout_seconds = 20;
  /// When set, every successful lookup is also written as a fixture here.
  std::optional<fs::path> record_dir;
};

/// Live hourly lookups against the Open-Meteo archive endpoint.
class OpenMeteoWeatherSource final : public WeatherSource {
 public:
  explicit OpenMeteoWeatherSource(OpenMeteoOptions options = {}) : options_(std::move(options)) {}
  WeatherObservation fetch(double lat, double lon, UtcTime t) const override;

  /// Query string (without host) for the day window around `t`.
  static std::string request_target(const OpenMeteoOptions& options, double lat, double lon,
                                    UtcTime t);

 private:
  OpenMeteoOptions options_;
};

enum class WeatherMode { Live, Fixture };
WeatherMode parse_weather_mode(std::string_view text);

/// Record at (lat, lon, t) with the six weather fields taken from `source`.
MetadataRecord fetch_weather(const WeatherSource& source, double lat, double lon, UtcTime t);

}  // namespace r2t
