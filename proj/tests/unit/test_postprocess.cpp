#include "doctest_torch.hpp"
#include "support.hpp"

#include <cmath>

using namespace r2t;

namespace {

ImageTensor unit(const torch::Tensor& t) { return ImageTensor(t, RangeTag::Unit0To1); }

}  // namespace

TEST_CASE("Gaussian kernel") {
  auto k = gaussian_kernel1d(0.5);
  REQUIRE(k.size() == 5);  // radius ceil(4 * 0.5) = 2
  double raw[5], sum = 0;
  for (int d = -2; d <= 2; ++d) sum += raw[d + 2] = std::exp(-d * d / (2 * 0.25));
  for (int i = 0; i < 5; ++i) CHECK(k[i] == doctest::Approx(raw[i] / sum).epsilon(1e-15));
  CHECK(gaussian_kernel1d(0.0) == std::vector<double>{1.0});
  CHECK(gaussian_kernel1d(1.2).size() == 11);
}

TEST_CASE("blur of an impulse is the normalized kernel") {
  auto img = torch::zeros({1, 9, 9});
  img[0][4][4] = 1.0f;
  auto out = gaussian_blur(img, 0.5);
  auto k = gaussian_kernel1d(0.5);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool in = std::abs(y - 4) <= 2 && std::abs(x - 4) <= 2;
      const double expected = in ? k[y - 2] * k[x - 2] : 0.0;
      CHECK(out[0][y][x].item<double>() == doctest::Approx(expected).epsilon(1e-6).scale(1e-6));
    }
  CHECK(out.sum().item<double>() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(torch::equal(gaussian_blur(img, 0.0), img));
}

TEST_CASE("blur fixed points") {
  auto c = torch::full({1, 12, 7}, 0.37f);
  CHECK(torch::allclose(gaussian_blur(c, 0.5), c, 0, 1e-6));
  CHECK(torch::allclose(gaussian_blur(c, 3.0), c, 0, 1e-6));  // radius wider than the image
  auto blurred = gaussian_blur(unit(torch::rand({1, 16, 16})), 0.5);
  CHECK(blurred.range() == RangeTag::Unit0To1);
}

TEST_CASE("percentile normalization") {
  auto ramp = torch::linspace(0.2, 0.6, 100).view({1, 10, 10});
  auto n = percentile_normalize(unit(ramp), 1, 99).data();
  CHECK(n.min().item<float>() == 0.0f);
  CHECK(n.max().item<float>() == 1.0f);
  auto flat = n.flatten();
  CHECK((flat.slice(0, 1) - flat.slice(0, 0, -1)).min().item<float>() >= 0.0f);
  auto degenerate = percentile_normalize(unit(torch::full({1, 4, 4}, 0.3f)), 1, 99).data();
  CHECK((degenerate == 0.5f).all().item<bool>());
}

TEST_CASE("colormap tables") {
  auto names = colormap_names();
  for (const char* n : {"inferno", "magma", "viridis"})
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
  CHECK_THROWS_AS(colormap_table("jet"), ConfigError);

  const auto& inferno = colormap_table("inferno");
  CHECK(inferno.sizes() == torch::IntArrayRef({256, 3}));
  // Entries 0, 127, 128 and 255 of matplotlib's inferno.
  const double pins[4][4] = {{0, 0.001462, 0.000466, 0.013866},
                             {127, 0.729909, 0.212759, 0.333861},
                             {128, 0.735683, 0.215906, 0.330245},
                             {255, 0.988362, 0.998364, 0.644924}};
  for (const auto& p : pins) {
    const int idx = static_cast<int>(p[0]);
    for (int ch = 0; ch < 3; ++ch) CHECK(inferno[idx][ch].item<double>() == doctest::Approx(p[ch + 1]).epsilon(1e-6));
    auto px = render_colormap(unit(torch::full({1, 1, 1}, static_cast<float>(idx / 255.0))), "inferno");
    CHECK(px.range() == RangeTag::Raw0To255);
    for (int ch = 0; ch < 3; ++ch)
      CHECK(px.data()[ch][0][0].item<double>() == doctest::Approx(255 * p[ch + 1]).epsilon(1e-4));
  }

  // Halfway between entries 127 and 128 interpolates linearly.
  auto mid = render_colormap(unit(torch::full({1, 1, 1}, 127.5f / 255.0f)), "inferno");
  CHECK(mid.data()[0][0][0].item<double>() ==
        doctest::Approx(255 * 0.5 * (0.729909 + 0.735683)).epsilon(1e-4));
  CHECK_THROWS(render_colormap(unit(torch::zeros({3, 2, 2})), "inferno"));
}

TEST_CASE("rendering and triptychs") {
  auto pred = unit(torch::rand({1, 24, 24}));
  RenderConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto r = render_prediction(pred, cfg);
  CHECK(r.data().sizes() == torch::IntArrayRef({3, 24, 24}));
  RenderConfig bad = cfg;
  bad.norm_lo = 99;
  bad.norm_hi = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto rgb = ImageTensor(torch::zeros({3, 24, 30}), RangeTag::Raw0To255);
  auto gray = ImageTensor(torch::full({1, 24, 10}, 40.0f), RangeTag::Raw0To255);
  auto t = make_triptych({rgb, r, gray});
  CHECK(t.data().sizes() == torch::IntArrayRef({3, 24, 30 + 4 + 24 + 4 + 10}));
  CHECK((t.data().slice(2, 30, 34) == 255.0f).all().item<bool>());
  CHECK((t.data().slice(2, 62, 72) == 40.0f).all().item<bool>());
  CHECK_THROWS(make_triptych({rgb, ImageTensor(torch::zeros({3, 20, 5}), RangeTag::Raw0To255)}));
}
