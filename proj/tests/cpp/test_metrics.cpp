#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "waterformer/color_space.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/metrics.hpp"

using namespace waterformer;

namespace {

double luma(const ImageRGB& img, int y, int x) {
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

// Window-by-window SSIM with an explicit 11x11 Gaussian weight grid.
double naive_ssim(const ImageRGB& a, const ImageRGB& b) {
  double w[11][11];
  double total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
      total += w[i][j];
    }
  const double c1 = 0.0001, c2 = 0.0009;
  double acc = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + 11 <= a.height(); ++y0)
    for (int x0 = 0; x0 + 11 <= a.width(); ++x0) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += w[i][j] / total * luma(a, y0 + i, x0 + j);
          my += w[i][j] / total * luma(b, y0 + i, x0 + j);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double dx = luma(a, y0 + i, x0 + j) - mx, dy = luma(b, y0 + i, x0 + j) - my;
          vx += w[i][j] / total * dx * dx;
          vy += w[i][j] / total * dy * dy;
          cxy += w[i][j] / total * dx * dy;
        }
      acc += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / count;
}

double naive_psnr(const ImageRGB& a, const ImageRGB& b) {
  long double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += std::pow(a.pixels()[i] - b.pixels()[i], 2);
  return 10.0 * std::log10(1.0 / static_cast<double>(se / a.size()));
}

double naive_nrmse(const ImageRGB& gt, const ImageRGB& pred) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    num += std::pow(pred.pixels()[i] - gt.pixels()[i], 2);
    den += gt.pixels()[i] * gt.pixels()[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("full-reference metrics match direct implementations") {
    std::mt19937_64 rng(8);
    for (int n = 0; n < 10; ++n) {
      const auto a = wft::random_image(32, 32, rng);
      auto b = a;
      std::normal_distribution<double> noise(0.0, 0.05 * (n + 1));
      for (double& v : b.pixels()) v = std::clamp(v + noise(rng), 0.0, 1.0);
      CHECK(std::abs(ssim(a, b) - naive_ssim(a, b)) <= 1e-10);
      CHECK(std::abs(psnr(a, b) - naive_psnr(a, b)) <= 1e-10);
      CHECK(std::abs(nrmse(a, b) - naive_nrmse(a, b)) <= 1e-12);
    }
  }

  TEST_CASE("psnr of a uniform 0.1 offset is 20 dB") {
    std::mt19937_64 rng(9);
    const auto a = wft::random_image(16, 16, rng, 0.0, 0.9);
    auto b = a;
    for (double& v : b.pixels()) v += 0.1;
    CHECK(std::abs(psnr(a, b) - 20.0) <= 1e-9);
  }

  TEST_CASE("identical images") {
    std::mt19937_64 rng(10);
    const auto a = wft::random_image(20, 24, rng);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, a, {true}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(psnr(a, a) == kInfinitePsnr);
    CHECK(nrmse(a, a) == 0.0);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(ssim(ImageRGB(10, 20), ImageRGB(10, 20)), DimensionError);
    CHECK_THROWS_AS(psnr(ImageRGB(4, 4), ImageRGB(4, 5)), DimensionError);
    CHECK_THROWS_AS(nrmse(ImageRGB(4, 4, 0.0), ImageRGB(4, 4, 0.5)), DomainError);
    CHECK_THROWS_AS(nrmse(ImageRGB(4, 4, 0.3), ImageRGB(4, 4, 0.5), NrmseNormalization::MinMax), DomainError);
  }

  TEST_CASE("minmax nrmse") {
    ImageRGB gt(2, 2, 0.0);
    gt.at(0, 0, 0) = 1.0;
    ImageRGB pred = gt;
    for (double& v : pred.pixels()) v += 0.2;
    CHECK(nrmse(gt, pred, NrmseNormalization::MinMax) == doctest::Approx(0.2));
  }

  TEST_CASE("no-reference metrics respond to colour and contrast") {
    std::mt19937_64 rng(11);
    const auto vivid = wft::random_image(64, 64, rng);
    ImageRGB gray(64, 64);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        for (int c = 0; c < 3; ++c) gray.at(y, x, c) = luma(vivid, y, x);
    const auto tv = uciqe_terms(vivid), tg = uciqe_terms(gray);
    CHECK(tg.chroma_std < 1e-6);
    CHECK(tg.saturation_mean < 1e-6);
    CHECK(tv.score > tg.score);
    CHECK(tv.score == doctest::Approx(0.4680 * tv.chroma_std + 0.2745 * tv.luminance_contrast +
                                      0.2576 * tv.saturation_mean));
    const auto uv = uiqm_terms(vivid), ug = uiqm_terms(gray);
    CHECK(std::abs(ug.colorfulness) < 1e-9);
    CHECK(uv.colorfulness > 0.0);
    CHECK(uv.score == doctest::Approx(0.0282 * uv.colorfulness + 0.2953 * uv.sharpness + 3.5753 * uv.contrast));
    const ImageRGB flat(64, 64, 0.5);
    CHECK(std::isfinite(uiqm(flat)));
    CHECK(std::isfinite(uciqe(flat)));
    CHECK(uiqm(flat) < uiqm(vivid));
  }

  TEST_CASE("report aggregation and csv") {
    MetricReport r;
    r.add({"a", 0.5, 20.0, 0.1, std::nullopt, std::nullopt});
    r.add({"b", 1.0, kInfinitePsnr, 0.0, std::nullopt, std::nullopt});
    r.add({"c", std::nullopt, std::nullopt, std::nullopt, 0.4, 3.0});
    const MetricRow mean = r.aggregate();
    CHECK(*mean.ssim == 0.75);
    CHECK(*mean.uciqe == 0.4);
    CHECK(r.counts().ssim == 2);
    CHECK(r.counts().uiqm == 1);
    const std::string csv = r.to_csv();
    CHECK(csv.rfind("id,ssim,psnr,nrmse,uciqe,uiqm\n", 0) == 0);
    CHECK(csv.find("b,1.000000,inf,0.000000,,\n") != std::string::npos);
    CHECK(csv.find("c,,,,0.400000,3.000000\n") != std::string::npos);
    CHECK(csv.find("\nmean,") != std::string::npos);
  }

  TEST_CASE("no-reference evaluation fills only those columns") {
    std::mt19937_64 rng(12);
    const MetricRow row = evaluate_single("x", wft::random_image(16, 16, rng));
    CHECK_FALSE(row.ssim.has_value());
    CHECK_FALSE(row.psnr.has_value());
    CHECK(row.uciqe.has_value());
    CHECK(row.uiqm.has_value());
    const auto a = wft::random_image(16, 16, rng);
    const MetricRow pair = evaluate_pair("y", a, a, false);
    CHECK(*pair.ssim == doctest::Approx(1.0));
    CHECK(*pair.psnr == kInfinitePsnr);
    CHECK(*pair.nrmse == 0.0);
    CHECK_FALSE(pair.uiqm.has_value());
  }
}
