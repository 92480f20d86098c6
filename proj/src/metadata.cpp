#include "r2t/metadata.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace r2t {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDaylightThresholdWm2 = 10.0;
constexpr double kDaysPerYear = 365.25;

std::chrono::sys_seconds to_local(UtcTime t, std::chrono::minutes offset) { return t + offset; }

}  // namespace

std::string_view feature_name(std::size_t slot) {
  static constexpr std::array<std::string_view, kFeatureCount> names = {
      "latitude",        "longitude",       "temperature",     "relative_humidity",
      "wind_speed",      "wind_dir_sin",    "wind_dir_cos",    "solar_radiation",
      "cloud_cover",     "time_of_day_sin", "time_of_day_cos", "day_of_year_sin",
      "day_of_year_cos", "solar_elevation_proxy", "is_daylight"};
  return slot < kFeatureCount ? names[slot] : "?";
}

CyclicPair encode_time_of_day(UtcTime t, std::chrono::minutes utc_offset) {
  using namespace std::chrono;
  const auto local = to_local(t, utc_offset);
  const auto since_midnight = local - floor<days>(local);
  const double angle = kTwoPi * static_cast<double>(since_midnight.count()) / 86400.0;
  return {std::sin(angle), std::cos(angle)};
}

CyclicPair encode_wind_direction(double degrees) {
  if (!(degrees >= 0.0 && degrees < 360.0))
    throw std::out_of_range("wind_direction " + std::to_string(degrees) + " outside [0,360)");
  const double angle = degrees * std::numbers::pi / 180.0;
  return {std::sin(angle), std::cos(angle)};
}

CyclicPair encode_day_of_year(UtcTime t, std::chrono::minutes utc_offset) {
  using namespace std::chrono;
  const auto local_day = floor<days>(to_local(t, utc_offset));
  const year_month_day ymd{local_day};
  const auto jan1 = sys_days{ymd.year() / January / 1};
  const double ordinal0 = static_cast<double>((local_day - jan1).count());
  const double angle = kTwoPi * ordinal0 / kDaysPerYear;
  return {std::sin(angle), std::cos(angle)};
}

MetadataVector build_feature_vector(const MetadataRecord& r, std::chrono::minutes utc_offset) {
  auto need = [](double v, const char* field) {
    if (std::isnan(v)) throw IngestError(field, std::string("metadata field '") + field + "' is missing");
    return v;
  };
  MetadataVector v;
  v[kLatitude] = need(r.latitude, "latitude");
  v[kLongitude] = need(r.longitude, "longitude");
  v[kTemperature] = need(r.temperature_c, "temperature_c");
  v[kRelativeHumidity] = need(r.relative_humidity_pct, "relative_humidity_pct");
  v[kWindSpeed] = need(r.wind_speed_ms, "wind_speed_ms");
  const double wind_dir = need(r.wind_direction_deg, "wind_direction_deg");
  v[kSolarRadiation] = need(r.solar_radiation_wm2, "solar_radiation_wm2");
  v[kCloudCover] = need(r.cloud_cover_pct, "cloud_cover_pct");

  if (auto problems = validate_metadata(r); !problems.empty())
    throw IngestError(problems.front().substr(0, problems.front().find(' ')), problems.front());

  const auto wind = encode_wind_direction(wind_dir);
  v[kWindDirSin] = wind.sin;
  v[kWindDirCos] = wind.cos;
  const auto tod = encode_time_of_day(r.timestamp, utc_offset);
  v[kTimeOfDaySin] = tod.sin;
  v[kTimeOfDayCos] = tod.cos;
  const auto doy = encode_day_of_year(r.timestamp, utc_offset);
  v[kDayOfYearSin] = doy.sin;
  v[kDayOfYearCos] = doy.cos;
  v[kSolarElevationProxy] = tod.cos * doy.cos;
  v[kIsDaylight] = r.solar_radiation_wm2 > kDaylightThresholdWm2 ? 1.0 : 0.0;
  return v;
}

// Standardizer ---------------------------------------------------------------

Standardizer::Standardizer(std::array<double, kFeatureCount> mean,
                           std::array<double, kFeatureCount> stddev, int fitted_on_fold)
    : mean_(mean), std_(stddev), fold_(fitted_on_fold) {
  for (auto& s : std_) s = std::max(s, kMinStd);
}

Standardizer Standardizer::fit(std::span<const MetadataVector> vectors, int fold) {
  if (vectors.size() < 2)
    throw std::invalid_argument("standardizer needs at least 2 vectors, got " +
                                std::to_string(vectors.size()));
  std::array<double, kFeatureCount> mean{}, var{};
  const double n = static_cast<double>(vectors.size());
  // Welford per slot.
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const double x = vectors[k][i];
      const double delta = x - mean[i];
      mean[i] += delta / static_cast<double>(k + 1);
      var[i] += delta * (x - mean[i]);
    }
  }
  std::array<double, kFeatureCount> sd{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) sd[i] = std::sqrt(var[i] / n);
  return Standardizer(mean, sd, fold);
}

MetadataVector Standardizer::apply(const MetadataVector& v) const {
  if (!fitted()) throw std::logic_error("standardizer applied before fitting");
  MetadataVector z = v;
  for (std::size_t i = 0; i < kFeatureCount; ++i) z[i] = (v[i] - mean_[i]) / std_[i];
  return z;
}

MetadataVector Standardizer::invert(const MetadataVector& z) const {
  MetadataVector v = z;
  for (std::size_t i = 0; i < kFeatureCount; ++i) v[i] = z[i] * std_[i] + mean_[i];
  return v;
}

torch::Tensor to_tensor(std::span<const MetadataVector> vectors) {
  auto t = torch::empty({static_cast<int64_t>(vectors.size()), static_cast<int64_t>(kFeatureCount)},
                        torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (std::size_t k = 0; k < vectors.size(); ++k)
    for (std::size_t i = 0; i < kFeatureCount; ++i) acc[k][i] = vectors[k][i];
  return t.to(torch::kFloat32);
}

// Weather --------------------------------------------------------------------

UtcTime nearest_hour(UtcTime t) {
  return std::chrono::round<std::chrono::hours>(t);
}

std::string fixture_key(double lat, double lon, UtcTime t) {
  const auto iso = format_iso8601(nearest_hour(t));  // YYYY-MM-DDTHH:00:00Z
  char buf[96];
  // +0.0 folds -0.00 into 0.00 so both spellings share one key.
  std::snprintf(buf, sizeof buf, "%.2f_%.2f_%s", std::round(lat * 100.0) / 100.0 + 0.0,
                std::round(lon * 100.0) / 100.0 + 0.0, iso.substr(0, 13).c_str());
  return buf;
}

namespace {

using nlohmann::json;

WeatherObservation observation_from_json(const json& j) {
  WeatherObservation o;
  o.temperature_c = j.at("temperature_c").get<double>();
  o.relative_humidity_pct = j.at("relative_humidity_pct").get<double>();
  o.wind_speed_ms = j.at("wind_speed_ms").get<double>();
  o.wind_direction_deg = j.at("wind_direction_deg").get<double>();
  o.solar_radiation_wm2 = j.at("solar_radiation_wm2").get<double>();
  o.cloud_cover_pct = j.at("cloud_cover_pct").get<double>();
  return o;
}

// Open-Meteo hourly variable -> observation field.
constexpr std::array<std::pair<const char*, double WeatherObservation::*>, 6> kHourlyFields = {{
    {"temperature_2m", &WeatherObservation::temperature_c},
    {"relative_humidity_2m", &WeatherObservation::relative_humidity_pct},
    {"wind_speed_10m", &WeatherObservation::wind_speed_ms},
    {"wind_direction_10m", &WeatherObservation::wind_direction_deg},
    {"shortwave_radiation", &WeatherObservation::solar_radiation_wm2},
    {"cloud_cover", &WeatherObservation::cloud_cover_pct},
}};

}  // namespace

WeatherObservation select_nearest_hour(std::string_view payload, UtcTime t) {
  const std::string raw(payload);
  json doc;
  try {
    doc = json::parse(raw);
  } catch (const json::exception& e) {
    throw WeatherParseError(std::string("weather payload is not JSON: ") + e.what(), raw);
  }
  try {
    const auto& hourly = doc.at("hourly");
    const auto& times = hourly.at("time");
    if (!times.is_array() || times.empty()) throw WeatherParseError("hourly.time is empty", raw);
    std::size_t best = 0;
    auto best_gap = std::chrono::seconds::max();
    for (std::size_t i = 0; i < times.size(); ++i) {
      // Open-Meteo emits "YYYY-MM-DDTHH:MM" in the requested (GMT) zone.
      const UtcTime ti = parse_iso8601(times[i].get<std::string>());
      const auto gap = ti > t ? ti - t : t - ti;
      if (gap < best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    WeatherObservation o;
    for (const auto& [name, field] : kHourlyFields) {
      const auto& column = hourly.at(name);
      if (best >= column.size() || column[best].is_null())
        throw WeatherParseError(std::string("hourly.") + name + " has no value for " +
                                    times[best].get<std::string>(),
                                raw);
      o.*field = column[best].get<double>();
    }
    o.wind_direction_deg = std::fmod(o.wind_direction_deg, 360.0);  // API reports north as 360
    return o;
  } catch (const json::exception& e) {
    throw WeatherParseError(std::string("unexpected weather payload: ") + e.what(), raw);
  } catch (const std::invalid_argument& e) {
    throw WeatherParseError(std::string("bad timestamp in weather payload: ") + e.what(), raw);
  }
}

WeatherObservation read_weather_fixture(const fs::path& file) {
  const std::string raw = read_text_file(file);
  try {
    return observation_from_json(json::parse(raw));
  } catch (const json::exception& e) {
    throw WeatherParseError("malformed fixture " + file.string() + ": " + e.what(), raw);
  }
}

void write_weather_fixture(const fs::path& file, const WeatherObservation& o) {
  nlohmann::ordered_json j;
  j["temperature_c"] = o.temperature_c;
  j["relative_humidity_pct"] = o.relative_humidity_pct;
  j["wind_speed_ms"] = o.wind_speed_ms;
  j["wind_direction_deg"] = o.wind_direction_deg;
  j["solar_radiation_wm2"] = o.solar_radiation_wm2;
  j["cloud_cover_pct"] = o.cloud_cover_pct;
  write_file_atomic(file, j.dump(2) + "\n");
}

WeatherObservation FixtureWeatherSource::fetch(double lat, double lon, UtcTime t) const {
  const auto file = dir_ / (fixture_key(lat, lon, t) + ".json");
  if (!fs::exists(file)) throw FixtureMissError("no weather fixture " + file.string());
  return read_weather_fixture(file);
}

std::string OpenMeteoWeatherSource::request_target(const OpenMeteoOptions& options, double lat,
                                                   double lon, UtcTime t) {
  using namespace std::chrono;
  // One day either side so the nearest hour is present across midnight.
  const auto day = floor<days>(t);
  const auto start = format_iso8601(day - days{1}).substr(0, 10);
  const auto end = format_iso8601(day + days{1}).substr(0, 10);
  std::string hourly;
  for (const auto& [name, field] : kHourlyFields) {
    if (!hourly.empty()) hourly += ',';
    hourly += name;
  }
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s?latitude=%.4f&longitude=%.4f&start_date=%s&end_date=%s&hourly=%s"
                "&wind_speed_unit=ms&timezone=GMT",
                options.path.c_str(), lat, lon, start.c_str(), end.c_str(), hourly.c_str());
  return buf;
}

WeatherObservation OpenMeteoWeatherSource::fetch(double lat, double lon, UtcTime t) const {
  httplib::SSLClient client(options_.host);
  client.set_connection_timeout(options_.timeout_seconds, 0);
  client.set_read_timeout(options_.timeout_seconds, 0);
  const auto target = request_target(options_, lat, lon, t);

  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt < std::max(1, options_.max_attempts); ++attempt) {
    auto res = client.Get(target);
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw FetchError("Open-Meteo returned HTTP " + std::to_string(res->status) + ": " + res->body,
                       false);
    auto obs = select_nearest_hour(res->body, t);
    if (options_.record_dir)
      write_weather_fixture(*options_.record_dir / (fixture_key(lat, lon, t) + ".json"), obs);
    return obs;
  }
  throw FetchError("Open-Meteo request failed after " + std::to_string(options_.max_attempts) +
                       " attempts (" + last_error + ")",
                   true);
}

WeatherMode parse_weather_mode(std::string_view text) {
  if (text == "live") return WeatherMode::Live;
  if (text == "fixture") return WeatherMode::Fixture;
  throw ConfigError("unknown weather mode '" + std::string(text) + "' (expected live|fixture)");
}

MetadataRecord fetch_weather(const WeatherSource& source, double lat, double lon, UtcTime t) {
  const auto obs = source.fetch(lat, lon, t);
  MetadataRecord r;
  r.latitude = lat;
  r.longitude = lon;
  r.timestamp = t;
  r.temperature_c = obs.temperature_c;
  r.relative_humidity_pct = obs.relative_humidity_pct;
  r.wind_speed_ms = obs.wind_speed_ms;
  r.wind_direction_deg = obs.wind_direction_deg;
  r.solar_radiation_wm2 = obs.solar_radiation_wm2;
  r.cloud_cover_pct = obs.cloud_cover_pct;
  return r;
}

}  // namespace r2t
