#include "doctest_torch.hpp"
#include "support.hpp"

using namespace r2t;

namespace {

ImageTensor raw(const torch::Tensor& t) { return ImageTensor(t, RangeTag::Raw0To255); }

/// Saturated colour bars with a brightness ramp, 0..255.
torch::Tensor test_card(int64_t h, int64_t w) {
  auto x = torch::linspace(0, 1, w).view({1, w}).expand({h, w});
  auto y = torch::linspace(0, 1, h).view({h, 1}).expand({h, w});
  auto r = (x < 0.33).to(torch::kFloat32) * (0.6 + 0.4 * y);
  auto g = ((x >= 0.33) & (x < 0.66)).to(torch::kFloat32) * (0.3 + 0.5 * y) + 0.1;
  auto b = (x >= 0.66).to(torch::kFloat32) * (0.2 + 0.7 * y) + 0.05 * x;
  return (torch::stack({r, g, b}) * 255).clamp(0, 255);
}

}  // namespace

TEST_CASE("letterbox geometry") {
  SUBCASE("square input is untouched") {
    auto g = letterbox_geometry(384, 384, 384);
    CHECK(g.content_height == 384);
    CHECK(g.pad_top + g.pad_bottom + g.pad_left + g.pad_right == 0);
    auto img = raw(torch::rand({3, 384, 384}) * 255);
    auto lb = letterbox(img, 384);
    CHECK(torch::allclose(lb.image.data(), img.data(), 0, 1e-3));
    CHECK(lb.content_mask.all().item<bool>());
  }
  SUBCASE("landscape 640x480 gets 48 rows top and bottom") {
    auto g = letterbox_geometry(480, 640, 384);
    CHECK(g.content_width == 384);
    CHECK(g.content_height == 288);
    CHECK(g.pad_top == 48);
    CHECK(g.pad_bottom == 48);
    CHECK(g.pad_left == 0);

    auto lb = letterbox(raw(torch::full({3, 480, 640}, 200.0f)), 384);
    const auto& d = lb.image.data();
    CHECK(d.size(1) == 384);
    CHECK(d.size(2) == 384);
    CHECK(d.slice(1, 0, 48).abs().max().item<float>() == 0.0f);
    CHECK(d.slice(1, 336, 384).abs().max().item<float>() == 0.0f);
    CHECK(torch::allclose(d.slice(1, 48, 336), torch::full({3, 288, 384}, 200.0f), 0, 1e-3));
    CHECK(lb.content_mask.sum().item<int64_t>() == 288 * 384);
  }
  SUBCASE("portrait 100x50 gets 96 columns left and right") {
    auto g = letterbox_geometry(100, 50, 384);
    CHECK(g.content_height == 384);
    CHECK(g.content_width == 192);
    CHECK(g.pad_left == 96);
    CHECK(g.pad_right == 96);
  }
  SUBCASE("odd remainder goes bottom/right; aspect kept within a pixel") {
    auto g = letterbox_geometry(101, 200, 384);
    CHECK(g.pad_top + g.content_height + g.pad_bottom == 384);
    CHECK(g.pad_bottom - g.pad_top == (384 - g.content_height) % 2);
    CHECK(std::abs(g.content_height - 384.0 * 101 / 200) <= 1.0);
  }
}

TEST_CASE("saturation boost") {
  SUBCASE("hand-computed pixel") {
    auto px = torch::tensor({200.0f, 100.0f, 100.0f}).view({3, 1, 1});
    auto out = saturation_boost(raw(px), 1.3).data();
    // H = 0, S = 0.5 -> 0.65, V = 200: G = B = 200 (1 - 0.65) = 70.
    CHECK(out[0].item<float>() == doctest::Approx(200).epsilon(1e-5));
    CHECK(out[1].item<float>() == doctest::Approx(70).epsilon(1e-5));
    CHECK(out[2].item<float>() == doctest::Approx(70).epsilon(1e-5));
  }
  SUBCASE("agrees with an explicit RGB-HSV-RGB route") {
    torch::manual_seed(5);
    auto img = torch::rand({3, 12, 12}) * 255;
    for (double f : {0.5, 1.3, 2.5}) {
      auto out = saturation_boost(raw(img), f).data();
      auto a = img.accessor<float, 3>();
      auto o = out.accessor<float, 3>();
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) {
          auto ref = testing::ref_saturate({a[0][y][x], a[1][y][x], a[2][y][x]}, f);
          CHECK(o[0][y][x] == doctest::Approx(ref.r).epsilon(1e-4));
          CHECK(o[1][y][x] == doctest::Approx(ref.g).epsilon(1e-4));
          CHECK(o[2][y][x] == doctest::Approx(ref.b).epsilon(1e-4));
        }
    }
  }
  SUBCASE("fixed points") {
    auto img = torch::rand({3, 8, 8}) * 255;
    auto same = saturation_boost(raw(img), 1.0).data();
    CHECK((same - img).abs().max().item<float>() <= 1.0f);
    auto gray = torch::rand({1, 8, 8}).expand({3, 8, 8}).contiguous() * 255;
    CHECK(torch::allclose(saturation_boost(raw(gray), 1.7).data(), gray, 0, 1e-3));
    auto constant = torch::full({3, 6, 6}, 90.0f);
    CHECK(torch::equal(saturation_boost(raw(constant), 1.3).data(), constant));
  }
  SUBCASE("single-channel input is a shape error") {
    CHECK_THROWS_AS(saturation_boost(raw(torch::zeros({1, 4, 4})), 1.3), ShapeError);
  }
}

TEST_CASE("percentile stretch") {
  SUBCASE("constant channel passes through") {
    auto img = torch::full({3, 10, 10}, 37.0f);
    CHECK(torch::equal(contrast_stretch(raw(img), 1, 99).data(), img));
  }
  SUBCASE("channel already spanning 0..255") {
    auto img = torch::cat({torch::zeros({1, 10, 5}), torch::full({1, 10, 5}, 255.0f)}, 2);
    CHECK(torch::allclose(contrast_stretch(raw(img), 1, 99).data(), img, 0, 1e-4));
  }
  SUBCASE("linear ramp 50..150 over 10000 pixels") {
    auto ramp = torch::linspace(50, 150, 10000, torch::kFloat64);
    // numpy-linear percentiles of an evenly spaced ramp: 50 + 100 * q.
    const double p1 = 50 + 100 * 0.01, p99 = 50 + 100 * 0.99;
    CHECK(percentile(ramp, 1) == doctest::Approx(p1).epsilon(1e-12));
    CHECK(percentile(ramp, 99) == doctest::Approx(p99).epsilon(1e-12));
    auto img = ramp.to(torch::kFloat32).view({1, 100, 100});
    auto out = contrast_stretch(raw(img), 1, 99).data().flatten().to(torch::kFloat64);
    auto expected = ((ramp.to(torch::kFloat32).to(torch::kFloat64) - p1) * 255 / (p99 - p1)).clamp(0, 255);
    CHECK((out - expected).abs().max().item<double>() < 1e-3);
    CHECK(out[0].item<double>() == 0.0);
    CHECK(out[9999].item<double>() == 255.0);
  }
  SUBCASE("monotone per channel") {
    auto img = torch::rand({3, 20, 20}) * 255;
    auto out = contrast_stretch(raw(img), 1, 99).data();
    for (int c = 0; c < 3; ++c) {
      auto order = img[c].flatten().argsort();
      auto sorted = out[c].flatten().index_select(0, order);
      CHECK((sorted.slice(0, 1) - sorted.slice(0, 0, -1)).min().item<float>() >= 0.0f);
    }
  }
  SUBCASE("masked pixels do not move the percentiles") {
    auto img = torch::linspace(10, 200, 400).view({1, 20, 20});
    auto padded = img.clone();
    padded.slice(1, 0, 5).zero_();
    auto mask = torch::ones({20, 20}, torch::kBool);
    mask.slice(0, 0, 5).fill_(false);
    auto masked = contrast_stretch(raw(padded), 1, 99, mask).data();
    auto content_only = contrast_stretch(raw(img.slice(1, 5, 20).contiguous()), 1, 99).data();
    CHECK(torch::allclose(masked.slice(1, 5, 20), content_only, 0, 1e-4));
  }
}

TEST_CASE("normalization to [-1,1]") {
  auto out = normalize_to_pm1(raw(torch::tensor({0.0f, 127.5f, 255.0f}).view({1, 1, 3}))).data();
  CHECK(out[0][0][0].item<float>() == -1.0f);
  CHECK(out[0][0][1].item<float>() == 0.0f);
  CHECK(out[0][0][2].item<float>() == 1.0f);
  CHECK(normalize_to_pm1(raw(torch::zeros({3, 2, 2}))).range() == RangeTag::SignedPm1);
}

TEST_CASE("pipeline") {
  PreprocessConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  PreprocessConfig bad = cfg;
  bad.stretch_lo = 99;
  bad.stretch_hi = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  PreprocessConfig other = cfg;
  other.saturation_factor = 1.4;
  CHECK(cfg.hash() == PreprocessConfig{}.hash());
  CHECK(cfg.hash() != other.hash());
  CHECK(cfg.hash().size() == 16);

  auto card = raw(test_card(240, 320));
  auto out = preprocess_pipeline(card, cfg);
  CHECK(out.range() == RangeTag::SignedPm1);
  CHECK(out.data().sizes() == torch::IntArrayRef({3, 384, 384}));
  CHECK(out.data().min().item<float>() >= -1.0f);
  CHECK(out.data().max().item<float>() <= 1.0f);
  CHECK(torch::equal(out.data(), preprocess_pipeline(card, cfg).data()));

  // Stage order: letterbox -> saturation -> stretch (content pixels only).
  auto lb = letterbox(card, 384);
  auto manual = contrast_stretch(saturation_boost(lb.image, 1.3), 1, 99, lb.content_mask);
  CHECK(torch::allclose(condition_rgb(card, cfg).data(), manual.data(), 0, 1e-4));
  auto swapped = saturation_boost(contrast_stretch(lb.image, 1, 99, lb.content_mask), 1.3);
  CHECK((swapped.data() - manual.data()).abs().max().item<float>() > 1.0f);

  // A gray square only sees the stretch and the normalization.
  auto gray = torch::linspace(40, 180, 384).view({1, 1, 384}).expand({3, 384, 384}).contiguous();
  auto g_out = preprocess_pipeline(raw(gray), cfg).data();
  auto expected = normalize_to_pm1(contrast_stretch(raw(gray), 1, 99)).data();
  CHECK(torch::allclose(g_out, expected, 0, 1e-4));

  // Thermal maps share the letterbox geometry and stay in [0,1].
  auto th = prepare_thermal(ImageTensor(torch::full({1, 480, 640}, 0.75f), RangeTag::Unit0To1), 384);
  CHECK(th.range() == RangeTag::Unit0To1);
  CHECK(th.data()[0][10][100].item<float>() == 0.0f);
  CHECK(th.data()[0][200][100].item<float>() == doctest::Approx(0.75));
}
