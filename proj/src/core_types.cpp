#include "r2t/core_types.hpp"

#include "r2t/image_io.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace r2t {

std::string_view to_string(RangeTag tag) {
  switch (tag) {
    case RangeTag::Raw0To255: return "raw_0_255";
    case RangeTag::Unit0To1: return "unit_0_1";
    case RangeTag::SignedPm1: return "signed_pm1";
  }
  return "?";
}

std::pair<float, float> range_bounds(RangeTag tag) {
  switch (tag) {
    case RangeTag::Raw0To255: return {0.0f, 255.0f};
    case RangeTag::Unit0To1: return {0.0f, 1.0f};
    case RangeTag::SignedPm1: return {-1.0f, 1.0f};
  }
  return {0.0f, 0.0f};
}

ImageTensor::ImageTensor(torch::Tensor data, RangeTag tag) : tag_(tag) {
  if (!data.defined() || data.dim() != 3)
    throw ShapeError("ImageTensor expects a [C,H,W] tensor");
  const auto c = data.size(0);
  if (c != 1 && c != 3)
    throw ShapeError("ImageTensor channel count must be 1 or 3, got " + std::to_string(c));
  if (data.size(1) <= 0 || data.size(2) <= 0) throw ShapeError("ImageTensor has an empty axis");
  data_ = data.to(torch::kFloat32).contiguous();
  const auto [lo, hi] = range_bounds(tag);
  const float mn = data_.min().item<float>();
  const float mx = data_.max().item<float>();
  if (!(mn >= lo) || !(mx <= hi)) {
    std::ostringstream msg;
    msg << "values [" << mn << ", " << mx << "] outside " << to_string(tag) << " interval [" << lo
        << ", " << hi << "]";
    throw ContractError(msg.str());
  }
}

ImageTensor ImageTensor::clamped(torch::Tensor data, RangeTag tag) {
  const auto [lo, hi] = range_bounds(tag);
  return ImageTensor(data.to(torch::kFloat32).clamp(lo, hi), tag);
}

void ImageTensor::require(RangeTag tag, std::string_view where) const {
  if (tag_ != tag) {
    throw ContractError(std::string(where) + ": expected " + std::string(to_string(tag)) +
                        " tensor, got " + std::string(to_string(tag_)));
  }
}

// Metadata -------------------------------------------------------------------

namespace {

bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

bool MetadataRecord::operator==(const MetadataRecord& o) const {
  return same_number(latitude, o.latitude) && same_number(longitude, o.longitude) &&
         timestamp == o.timestamp && same_number(temperature_c, o.temperature_c) &&
         same_number(relative_humidity_pct, o.relative_humidity_pct) &&
         same_number(wind_speed_ms, o.wind_speed_ms) &&
         same_number(wind_direction_deg, o.wind_direction_deg) &&
         same_number(solar_radiation_wm2, o.solar_radiation_wm2) &&
         same_number(cloud_cover_pct, o.cloud_cover_pct);
}

std::vector<std::string> validate_metadata(const MetadataRecord& r) {
  std::vector<std::string> out;
  auto check = [&](double v, bool ok, const char* msg) {
    if (!std::isnan(v) && !ok) out.emplace_back(msg);
  };
  check(r.relative_humidity_pct, r.relative_humidity_pct >= 0 && r.relative_humidity_pct <= 100,
        "relative_humidity out of [0,100]");
  check(r.cloud_cover_pct, r.cloud_cover_pct >= 0 && r.cloud_cover_pct <= 100,
        "cloud_cover out of [0,100]");
  check(r.wind_direction_deg, r.wind_direction_deg >= 0 && r.wind_direction_deg < 360,
        "wind_direction out of [0,360)");
  check(r.wind_speed_ms, r.wind_speed_ms >= 0, "wind_speed negative");
  check(r.solar_radiation_wm2, r.solar_radiation_wm2 >= 0, "solar_radiation negative");
  check(r.latitude, r.latitude >= -90 && r.latitude <= 90, "latitude out of [-90,90]");
  check(r.longitude, r.longitude >= -180 && r.longitude <= 180, "longitude out of [-180,180]");
  return out;
}

std::string format_iso8601(UtcTime t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

UtcTime parse_iso8601(std::string_view text) {
  using namespace std::chrono;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  const std::string str(text);
  int n = std::sscanf(str.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
  if (n < 5) n = std::sscanf(str.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h, &mi, &s);
  if (n < 5) throw std::invalid_argument("malformed timestamp '" + str + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59)
    throw std::invalid_argument("timestamp out of range '" + str + "'");
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s};
}

// Samples --------------------------------------------------------------------

std::vector<std::string> validate_sample(const PairedSample& s,
                                         std::optional<int64_t> expected_size) {
  std::vector<std::string> out;
  if (s.sample_id.empty()) out.emplace_back("sample_id empty");
  if (s.sample_id.find_first_of(",\n/\\") != std::string::npos)
    out.emplace_back("sample_id contains a reserved character");
  if (s.group_id.empty()) out.emplace_back("group_id empty");
  if (s.rgb.channels() != 3) out.emplace_back("rgb channel count != 3");
  if (s.thermal.channels() != 1) out.emplace_back("thermal channel count != 1");
  if (s.thermal.range() != RangeTag::Unit0To1) out.emplace_back("thermal range tag != unit_0_1");
  if (s.rgb.height() != s.thermal.height() || s.rgb.width() != s.thermal.width())
    out.emplace_back("thermal size mismatch");
  if (expected_size) {
    if (s.rgb.height() != *expected_size || s.rgb.width() != *expected_size)
      out.emplace_back("rgb size != " + std::to_string(*expected_size));
  }
  for (auto& m : validate_metadata(s.metadata)) out.push_back(std::move(m));
  return out;
}

// Metrics --------------------------------------------------------------------

MetricReport make_report(int fold_id, std::vector<MetricRow> rows) {
  MetricReport r;
  r.fold_id = fold_id;
  r.per_sample = std::move(rows);
  if (!r.per_sample.empty()) {
    const double n = static_cast<double>(r.per_sample.size());
    for (const auto& row : r.per_sample) {
      r.fold_mean.psnr_db += row.psnr_db;
      r.fold_mean.ssim += row.ssim;
      r.fold_mean.lpips += row.lpips;
    }
    r.fold_mean.psnr_db /= n;
    r.fold_mean.ssim /= n;
    r.fold_mean.lpips /= n;
  }
  return r;
}

namespace {

std::string fmt_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "";
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s.empty() || s == "nan") return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return fmt_double(v);
}

}  // namespace

void write_report_csv(const MetricReport& report, const fs::path& path) {
  std::ostringstream out;
  out << "sample_id,psnr_db,ssim,lpips\n";
  for (const auto& r : report.per_sample)
    out << r.sample_id << ',' << fmt_double(r.psnr_db) << ',' << fmt_double(r.ssim) << ','
        << fmt_double(r.lpips) << '\n';
  write_file_atomic(path, out.str());
}

void write_report_json(const MetricReport& report, const fs::path& path) {
  nlohmann::ordered_json j;
  j["fold_id"] = report.fold_id;
  j["num_samples"] = report.per_sample.size();
  j["fold_mean"] = {{"psnr_db", json_number(report.fold_mean.psnr_db)},
                    {"ssim", json_number(report.fold_mean.ssim)},
                    {"lpips", json_number(report.fold_mean.lpips)}};
  write_file_atomic(path, j.dump(2) + "\n");
}

MetricReport read_report_csv(const fs::path& path, int fold_id) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "sample_id,psnr_db,ssim,lpips") throw IoError("unexpected report header in " + path.string());
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != 4) throw IoError("malformed report row in " + path.string());
    rows.push_back({cells[0], parse_double(cells[1]), parse_double(cells[2]), parse_double(cells[3])});
  }
  return make_report(fold_id, std::move(rows));
}

// Dataset layout -------------------------------------------------------------

std::string format_metadata_row(const MetadataRow& row) {
  const auto& r = row.record;
  std::ostringstream out;
  out << row.sample_id << ',' << row.group_id << ',' << fmt_double(r.latitude) << ','
      << fmt_double(r.longitude) << ',' << format_iso8601(r.timestamp) << ','
      << fmt_double(r.temperature_c) << ',' << fmt_double(r.relative_humidity_pct) << ','
      << fmt_double(r.wind_speed_ms) << ',' << fmt_double(r.wind_direction_deg) << ','
      << fmt_double(r.solar_radiation_wm2) << ',' << fmt_double(r.cloud_cover_pct);
  return out.str();
}

std::vector<MetadataRow> read_metadata_csv(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetadataCsvHeader) throw IoError("unexpected metadata.csv header in " + path.string());

  std::vector<MetadataRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto c = split_csv(line);
    if (c.size() != 11)
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 11 columns, got " +
                    std::to_string(c.size()));
    try {
      MetadataRow row;
      row.sample_id = c[0];
      row.group_id = c[1];
      row.record.latitude = parse_double(c[2]);
      row.record.longitude = parse_double(c[3]);
      row.record.timestamp = parse_iso8601(c[4]);
      row.record.temperature_c = parse_double(c[5]);
      row.record.relative_humidity_pct = parse_double(c[6]);
      row.record.wind_speed_ms = parse_double(c[7]);
      row.record.wind_direction_deg = parse_double(c[8]);
      row.record.solar_radiation_wm2 = parse_double(c[9]);
      row.record.cloud_cover_pct = parse_double(c[10]);
      rows.push_back(std::move(row));
    } catch (const std::invalid_argument& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_metadata_csv(const fs::path& path, const std::vector<MetadataRow>& rows) {
  std::string text(kMetadataCsvHeader);
  text += '\n';
  for (const auto& r : rows) text += format_metadata_row(r) + '\n';
  write_file_atomic(path, text);
}

fs::path rgb_path(const fs::path& root, std::string_view id) {
  return root / "rgb" / (std::string(id) + ".png");
}

fs::path thermal_path(const fs::path& root, std::string_view id) {
  return root / "thermal" / (std::string(id) + ".png");
}

std::vector<PairedSample> load_dataset(const fs::path& root) {
  std::vector<PairedSample> out;
  for (auto& row : read_metadata_csv(root / "metadata.csv")) {
    auto rgb = read_image(rgb_path(root, row.sample_id), ColorMode::Rgb);
    auto th = read_image(thermal_path(root, row.sample_id), ColorMode::Gray);
    ImageTensor thermal(th.data() / 255.0f, RangeTag::Unit0To1);
    out.push_back(PairedSample{row.sample_id, std::move(rgb), std::move(thermal), row.record,
                               row.group_id});
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<PairedSample>& samples) {
  std::vector<MetadataRow> rows;
  for (const auto& s : samples) {
    write_image(rgb_path(root, s.sample_id), s.rgb);
    write_image(thermal_path(root, s.sample_id), s.thermal);
    rows.push_back({s.sample_id, s.group_id, s.metadata});
  }
  std::sort(rows.begin(), rows.end(),
            [](const MetadataRow& a, const MetadataRow& b) { return a.sample_id < b.sample_id; });
  write_metadata_csv(root / "metadata.csv", rows);
}

void write_file_atomic(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace r2t
