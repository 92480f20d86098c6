#pragma once

// Helpers shared by the unit tests and the acceptance runner: scratch
// directories, closed-form test images, scalar reference implementations of
// the loss terms, and a synthetic raw dataset on disk.

#include "r2t/train.hpp"

#include <string>
#include <vector>

namespace r2t::testing {

/// Fresh directory under the system temp dir, removed on destruction unless
/// R2T_KEEP_TEST_DIRS is set.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

/// n x n float32 map evaluated in double precision, y and x integer pixel
/// coordinates:
///   "a"       0.5 + 0.4 sin(0.3x + 0.2y) cos(0.15 x y / n)
///   "b"       frac((7x + 13y) * 0.6180339887)
///   "c"       0.5 + 0.3 sin(0.21x) sin(0.17y) + 0.1 cos(0.05(x + 2y))
///   "d"       clip(a + 0.15 (b - 0.5), 0, 1)
///   "checker" 0.1 + 0.8 * ((x/8 + y/8) mod 2)
///   "ramp"    x / (n - 1)
torch::Tensor pattern(const std::string& name, int64_t n);

// Scalar oracles over double buffers -------------------------------------------

struct Plane {
  int64_t h = 0, w = 0;
  std::vector<double> v;
  double at(int64_t y, int64_t x) const { return v[static_cast<std::size_t>(y * w + x)]; }
};

/// [H,W], [1,H,W] or [1,1,H,W] tensor to a plane.
Plane to_plane(const torch::Tensor& t);

double ref_charbonnier(const Plane& p, const Plane& t, double eps);
double ref_psnr(const Plane& p, const Plane& t);
/// Direct 2-D 11x11 Gaussian window (sigma 1.5) sums at every valid position.
double ref_ssim(const Plane& p, const Plane& t);
/// 0.5 (mean|Gx p - Gx t| + mean|Gy p - Gy t|), mirror padding, 3x3 Sobel.
double ref_grad_term(const Plane& p, const Plane& t);
/// |mean p - mean t| + |std p - std t| with the population std.
double ref_stats_term(const Plane& p, const Plane& t);

struct Rgb {
  double r, g, b;
};
/// RGB (0..255) -> HSV -> scale S -> RGB using the sector formulas.
Rgb ref_saturate(Rgb in, double factor);

// Data -------------------------------------------------------------------------

struct RawDatasetSpec {
  int pairs = 20;
  int groups = 5;
  int64_t width = 96;
  int64_t height = 72;
  uint64_t seed = 11;
};

struct RawDataset {
  fs::path pairs_csv;    // sample_id,group_id,latitude,longitude,timestamp_iso8601,rgb,thermal
  fs::path fixture_dir;  // one weather fixture per sample
  std::vector<std::string> ids;
};

/// Writes PNG pairs, pairs.csv and weather fixtures under `dir`. Thermal
/// brightness follows the RGB content and the fixture temperature.
RawDataset write_raw_dataset(const fs::path& dir, const RawDatasetSpec& spec);

/// Eight pairs at size s: four scenes x two temperatures. The standardized
/// temperature slot is -1 or +1 (other slots 0) and the hot copy of each
/// scene has the inverted thermal map.
struct OverfitSet {
  torch::Tensor rgb;      // [8,3,s,s] signed
  torch::Tensor thermal;  // [8,1,s,s] unit
  torch::Tensor cond;     // [8,15]
};
OverfitSet make_overfit_set(int64_t s);

/// Runs the r2t executable with `args`, output appended to `log`. Returns the
/// exit status.
int run_cli(const std::string& args, const fs::path& log);
std::string cli_path();

}  // namespace r2t::testing
