#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "waterformer/color_space.hpp"
#include "waterformer/errors.hpp"

using namespace waterformer;

TEST_SUITE("color_space") {
  TEST_CASE("pure red maps to the first matrix column") {
    ImageRGB red(1, 1);
    red.at(0, 0, 0) = 1.0;
    const ImageYIQ yiq = rgb_to_yiq(red);
    CHECK(yiq.y.at(0, 0) == 0.299);
    CHECK(yiq.i.at(0, 0) == 0.596);
    CHECK(yiq.q.at(0, 0) == 0.211);
  }

  TEST_CASE("white has unit luma and no chroma") {
    const ImageYIQ yiq = rgb_to_yiq(ImageRGB(2, 3, 1.0));
    for (double v : yiq.y.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    for (double v : yiq.i.values) CHECK(std::abs(v) < 1e-15);
    for (double v : yiq.q.values) CHECK(std::abs(v) < 1e-15);
  }

  TEST_CASE("inverse matrix is the inverse") {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += kYiqToRgb[r][k] * kRgbToYiq[k][c];
        CHECK(s == doctest::Approx(r == c ? 1.0 : 0.0).epsilon(1e-14));
      }
  }

  TEST_CASE("round trip stays within 1e-12") {
    std::mt19937_64 rng(3);
    for (int n = 0; n < 20; ++n) {
      const ImageRGB img = wft::random_image(7, 5, rng);
      const auto back = yiq_to_rgb(rgb_to_yiq(img));
      CHECK(back.excursion < 1e-12);
      for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.image.pixels()[i] - img.pixels()[i]) < 1e-12);
    }
  }

  TEST_CASE("out-of-gamut YIQ is clamped and reported") {
    ImageYIQ yiq{Plane(1, 1, 1.0), Plane(1, 1, 0.5), Plane(1, 1, 0.0)};
    const auto rgb = yiq_to_rgb(yiq);
    CHECK(rgb.excursion == doctest::Approx(0.956170685404145037 * 0.5));
    CHECK(rgb.image.is_valid());
  }

  TEST_CASE("mismatched planes are rejected") {
    ImageYIQ yiq{Plane(2, 2), Plane(2, 3), Plane(2, 2)};
    CHECK_THROWS_AS(yiq_to_rgb(yiq), DimensionError);
  }

  TEST_CASE("channel stats") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    const ChannelStats s = channel_stats(v);
    CHECK(s.mean == 2.5);
    CHECK(s.variance == doctest::Approx(1.25));
    CHECK_THROWS_AS(channel_stats({}), DimensionError);
  }
}
