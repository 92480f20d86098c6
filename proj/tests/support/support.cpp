#include "support.hpp"

#include "r2t/image_io.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>

namespace r2t::testing {

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  const auto base = fs::temp_directory_path();
  for (;;) {
    auto candidate = base / ("r2t-" + tag + "-" + std::to_string(::getpid()) + "-" +
                             std::to_string(rd() % 1000000));
    if (fs::create_directories(candidate)) {
      path_ = candidate;
      break;
    }
  }
}

TempDir::~TempDir() {
  if (std::getenv("R2T_KEEP_TEST_DIRS")) return;
  std::error_code ec;
  fs::remove_all(path_, ec);
}

torch::Tensor pattern(const std::string& name, int64_t n) {
  auto out = torch::empty({n, n}, torch::kFloat32);
  auto acc = out.accessor<float, 2>();
  const double dn = static_cast<double>(n);
  auto a = [&](double x, double y) {
    return 0.5 + 0.4 * std::sin(0.3 * x + 0.2 * y) * std::cos(0.15 * x * y / dn);
  };
  auto b = [](double x, double y) {
    const double v = (x * 7 + y * 13) * 0.6180339887;
    return v - std::floor(v);
  };
  for (int64_t yi = 0; yi < n; ++yi)
    for (int64_t xi = 0; xi < n; ++xi) {
      const double x = static_cast<double>(xi), y = static_cast<double>(yi);
      double v;
      if (name == "a") {
        v = a(x, y);
      } else if (name == "b") {
        v = b(x, y);
      } else if (name == "c") {
        v = 0.5 + 0.3 * std::sin(0.21 * x) * std::sin(0.17 * y) + 0.1 * std::cos(0.05 * (x + 2 * y));
      } else if (name == "d") {
        v = std::clamp(a(x, y) + 0.15 * (b(x, y) - 0.5), 0.0, 1.0);
      } else if (name == "checker") {
        v = 0.1 + 0.8 * static_cast<double>((xi / 8 + yi / 8) % 2);
      } else if (name == "ramp") {
        v = x / (dn - 1);
      } else {
        throw std::invalid_argument("unknown pattern " + name);
      }
      acc[yi][xi] = static_cast<float>(v);
    }
  return out;
}

Plane to_plane(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kFloat64).contiguous();
  while (d.dim() > 2) d = d.squeeze(0);
  Plane p;
  p.h = d.size(0);
  p.w = d.size(1);
  p.v.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  return p;
}

double ref_charbonnier(const Plane& p, const Plane& t, double eps) {
  double s = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) {
    const double d = p.v[i] - t.v[i];
    s += std::sqrt(d * d + eps * eps);
  }
  return s / static_cast<double>(p.v.size());
}

double ref_psnr(const Plane& p, const Plane& t) {
  double s = 0;
  for (std::size_t i = 0; i < p.v.size(); ++i) s += (p.v[i] - t.v[i]) * (p.v[i] - t.v[i]);
  const double mse = s / static_cast<double>(p.v.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10 * std::log10(1.0 / mse);
}

double ref_ssim(const Plane& p, const Plane& t) {
  constexpr int kWin = 11;
  double g[kWin], gsum = 0;
  for (int k = 0; k < kWin; ++k) {
    g[k] = std::exp(-(k - 5) * (k - 5) / (2 * 1.5 * 1.5));
    gsum += g[k];
  }
  for (double& v : g) v /= gsum;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int64_t count = 0;
  for (int64_t i = 0; i + kWin <= p.h; ++i)
    for (int64_t j = 0; j + kWin <= p.w; ++j) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int u = 0; u < kWin; ++u)
        for (int v = 0; v < kWin; ++v) {
          const double w = g[u] * g[v];
          const double a = p.at(i + u, j + v), b = t.at(i + u, j + v);
          mx += w * a;
          my += w * b;
          xx += w * a * a;
          yy += w * b * b;
          xy += w * a * b;
        }
      const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sx + sy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

namespace {

int64_t mirror(int64_t i, int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

void sobel_at(const Plane& p, int64_t y, int64_t x, double& gx, double& gy) {
  static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  gx = gy = 0;
  for (int u = -1; u <= 1; ++u)
    for (int v = -1; v <= 1; ++v) {
      const double s = p.at(mirror(y + u, p.h), mirror(x + v, p.w));
      gx += kx[u + 1][v + 1] * s;
      gy += kx[v + 1][u + 1] * s;
    }
}

}  // namespace

double ref_grad_term(const Plane& p, const Plane& t) {
  double sx = 0, sy = 0;
  for (int64_t y = 0; y < p.h; ++y)
    for (int64_t x = 0; x < p.w; ++x) {
      double px, py, tx, ty;
      sobel_at(p, y, x, px, py);
      sobel_at(t, y, x, tx, ty);
      sx += std::abs(px - tx);
      sy += std::abs(py - ty);
    }
  const double n = static_cast<double>(p.h * p.w);
  return 0.5 * (sx / n + sy / n);
}

double ref_stats_term(const Plane& p, const Plane& t) {
  auto moments = [](const Plane& q) {
    double m = 0;
    for (double v : q.v) m += v;
    m /= static_cast<double>(q.v.size());
    double var = 0;
    for (double v : q.v) var += (v - m) * (v - m);
    return std::pair{m, std::sqrt(var / static_cast<double>(q.v.size()))};
  };
  const auto [mp, sp] = moments(p);
  const auto [mt, st] = moments(t);
  return std::abs(mp - mt) + std::abs(sp - st);
}

Rgb ref_saturate(Rgb in, double factor) {
  const double r = in.r / 255, g = in.g / 255, b = in.b / 255;
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double v = mx, c = mx - mn;
  double s = mx > 0 ? c / mx : 0;
  double h = 0;
  if (c > 0) {
    if (mx == r)
      h = std::fmod((g - b) / c + 6, 6);
    else if (mx == g)
      h = (b - r) / c + 2;
    else
      h = (r - g) / c + 4;
  }
  s = std::min(1.0, s * factor);
  const double cc = v * s;
  const double xx = cc * (1 - std::abs(std::fmod(h, 2) - 1));
  const double m = v - cc;
  double r1 = 0, g1 = 0, b1 = 0;
  switch (static_cast<int>(std::floor(h)) % 6) {
    case 0: r1 = cc, g1 = xx; break;
    case 1: r1 = xx, g1 = cc; break;
    case 2: g1 = cc, b1 = xx; break;
    case 3: g1 = xx, b1 = cc; break;
    case 4: r1 = xx, b1 = cc; break;
    default: r1 = cc, b1 = xx; break;
  }
  return {(r1 + m) * 255, (g1 + m) * 255, (b1 + m) * 255};
}

RawDataset write_raw_dataset(const fs::path& dir, const RawDatasetSpec& spec) {
  RawDataset out;
  out.fixture_dir = dir / "fixtures";
  out.pairs_csv = dir / "pairs.csv";
  fs::create_directories(dir / "raw");
  fs::create_directories(out.fixture_dir);

  const int64_t h = spec.height, w = spec.width;
  auto yy = torch::linspace(0, 1, h).view({h, 1}).expand({h, w});
  auto xx = torch::linspace(0, 1, w).view({1, w}).expand({h, w});
  std::mt19937_64 rng(spec.seed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  std::string csv = "sample_id,group_id,latitude,longitude,timestamp_iso8601,rgb,thermal\n";
  for (int i = 0; i < spec.pairs; ++i) {
    const int group = i % spec.groups;
    char id[32], gid[32];
    std::snprintf(id, sizeof id, "s%03d", i);
    std::snprintf(gid, sizeof gid, "flight%02d", group);
    const double lat = 42.30 + 0.01 * group, lon = -83.00 - 0.01 * group;
    const auto t = parse_iso8601("2023-06-1" + std::to_string(group % 10) + "T00:00:00Z") +
                   std::chrono::hours(8 + i / spec.groups);
    const double temp = 5 + 30 * unit();

    const double fx = 1 + 3 * unit(), fy = 1 + 3 * unit(), ph = 6.28 * unit();
    auto r = 0.5 + 0.45 * torch::sin(2 * M_PI * fx * xx + ph) * torch::cos(2 * M_PI * fy * yy);
    auto g = (0.3 + 0.6 * (xx * unit() + yy * (1 - unit()))).clamp(0, 1);
    auto b = 0.5 + 0.4 * torch::cos(2 * M_PI * (xx + yy) * (1 + 2 * unit()));
    auto rgb = torch::stack({r, g, b}) * 255;
    auto thermal = (0.15 + 0.5 * (temp / 40) * r + 0.25 * g).clamp(0, 1).unsqueeze(0);

    const std::string rgb_rel = std::string("raw/") + id + "_rgb.png";
    const std::string th_rel = std::string("raw/") + id + "_thermal.png";
    write_image(dir / rgb_rel, ImageTensor::clamped(rgb, RangeTag::Raw0To255));
    write_image(dir / th_rel, ImageTensor::clamped(thermal * 255, RangeTag::Raw0To255));

    WeatherObservation obs;
    obs.temperature_c = temp;
    obs.relative_humidity_pct = 30 + 50 * unit();
    obs.wind_speed_ms = 8 * unit();
    obs.wind_direction_deg = 359.0 * unit();
    obs.solar_radiation_wm2 = 900 * unit();
    obs.cloud_cover_pct = 100 * unit();
    write_weather_fixture(out.fixture_dir / (fixture_key(lat, lon, t) + ".json"), obs);

    char row[256];
    std::snprintf(row, sizeof row, "%s,%s,%.2f,%.2f,%s,%s,%s\n", id, gid, lat, lon,
                  format_iso8601(t).c_str(), rgb_rel.c_str(), th_rel.c_str());
    csv += row;
    out.ids.emplace_back(id);
  }
  write_file_atomic(out.pairs_csv, csv);
  return out;
}

OverfitSet make_overfit_set(int64_t s) {
  auto yy = torch::linspace(0, 1, s).view({s, 1}).expand({s, s});
  auto xx = torch::linspace(0, 1, s).view({1, s}).expand({s, s});
  std::vector<torch::Tensor> rgbs, ths, conds;
  for (int k = 0; k < 4; ++k) {
    const double fx = 1 + k, fy = 2 + (k % 2);
    auto a = 0.5 + 0.5 * torch::sin(2 * M_PI * (fx * xx + 0.3 * k)) * torch::cos(2 * M_PI * fy * yy);
    auto b = (xx * (k + 1) / 4.0 + yy * (3 - k) / 4.0).clamp(0, 1);
    auto c = 0.5 + 0.5 * torch::cos(2 * M_PI * (xx + yy) * (k + 1));
    auto rgb = torch::stack({a, b, c}) * 2 - 1;
    auto cold = (0.15 + 0.3 * a * b).unsqueeze(0);
    for (int hot = 0; hot < 2; ++hot) {
      rgbs.push_back(rgb);
      ths.push_back(hot ? 1 - cold : cold);
      auto z = torch::zeros({static_cast<int64_t>(kFeatureCount)});
      z[kTemperature] = hot ? 1.0 : -1.0;
      conds.push_back(z);
    }
  }
  return {torch::stack(rgbs), torch::stack(ths), torch::stack(conds)};
}

std::string cli_path() { return R2T_CLI_PATH; }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "'" + cli_path() + "' " + args + " >> '" + log.string() + "' 2>&1";
  {
    std::ofstream(log, std::ios::app) << "$ r2t " << args << "\n";
  }
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

}  // namespace r2t::testing
