#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "waterformer/color_space.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/losses.hpp"
#include "waterformer/tensor_image.hpp"

using namespace waterformer;

namespace {

double naive_chroma(const ImageRGB& gt, const ImageRGB& pred, const ChromaConfig& cfg) {
  const ImageYIQ a = rgb_to_yiq(gt), b = rgb_to_yiq(pred);
  const int k = cfg.window;
  double acc = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + k <= gt.height(); y0 += cfg.stride)
    for (int x0 = 0; x0 + k <= gt.width(); x0 += cfg.stride) {
      std::vector<double> ai, bi, aq, bq;
      for (int y = y0; y < y0 + k; ++y)
        for (int x = x0; x < x0 + k; ++x) {
          ai.push_back(a.i.at(y, x));
          bi.push_back(b.i.at(y, x));
          aq.push_back(a.q.at(y, x));
          bq.push_back(b.q.at(y, x));
        }
      double si = chroma_similarity(ai, bi, cfg.c1, cfg.covariance_weight);
      double sq = chroma_similarity(aq, bq, cfg.c2, cfg.covariance_weight);
      if (cfg.clip_similarity) {
        si = std::clamp(si, 0.0, 1.0);
        sq = std::clamp(sq, 0.0, 1.0);
      }
      acc += 1.0 - si * sq;
      ++count;
    }
  return acc / count;
}

double naive_sobel(const ImageRGB& gt, const ImageRGB& pred) {
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  double acc = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 1; y + 1 < gt.height(); ++y)
      for (int x = 1; x + 1 < gt.width(); ++x) {
        double gx = 0, gy = 0;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) {
            const double d = pred.at(y + i - 1, x + j - 1, c) - gt.at(y + i - 1, x + j - 1, c);
            gx += kx[i][j] * d;
            gy += ky[i][j] * d;
          }
        acc += std::abs(gx) + std::abs(gy);
      }
  return acc / (3.0 * (gt.height() - 2) * (gt.width() - 2));
}

// Norm-wise relative error of the analytic gradient against central differences.
template <typename F>
double fd_error(const Tensor<double>& gt, Tensor<double> pred, F loss, double h = 1e-6) {
  const Tensor<double> analytic = loss(gt, pred, true).grad;
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double keep = pred[i];
    pred[i] = keep + h;
    const double up = loss(gt, pred, false).value;
    pred[i] = keep - h;
    const double down = loss(gt, pred, false).value;
    pred[i] = keep;
    const double numeric = (up - down) / (2 * h);
    diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
    ref2 += numeric * numeric;
  }
  return std::sqrt(diff2 / ref2);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("l1 values") {
    CHECK(l1_loss(ImageRGB(4, 4, 1.0), ImageRGB(4, 4, 0.5)) == 0.5);
    std::mt19937_64 rng(1);
    const auto a = wft::random_image(5, 6, rng), b = wft::random_image(5, 6, rng);
    CHECK(l1_loss(a, a) == 0.0);
    CHECK(l1_loss(a, b) == l1_loss(b, a));
    CHECK_THROWS_AS(l1_loss(a, ImageRGB(5, 5)), DimensionError);
  }

  TEST_CASE("chroma similarity values") {
    const std::vector<double> g{0.1, -0.1, 0.1, -0.1};
    const std::vector<double> neg{-0.1, 0.1, -0.1, 0.1};
    CHECK(chroma_similarity(g, g, 0.001) == 1.0);
    const std::vector<double> flat_a{0.3, 0.3}, flat_b{0.7, 0.7};
    CHECK(chroma_similarity(flat_a, flat_b, 0.001) == 1.0);
    CHECK(chroma_similarity(g, neg, 0.001) == doctest::Approx((-0.02 + 0.001) / (0.02 + 0.001)).epsilon(1e-14));
    // Without the factor of two the same windows give -0.42857 and identical ones stay near 1/2.
    CHECK(chroma_similarity(g, neg, 0.001, 1.0) == doctest::Approx(-0.428571428571).epsilon(1e-10));
    CHECK(chroma_similarity(g, g, 0.001, 1.0) == doctest::Approx(0.011 / 0.021).epsilon(1e-12));
  }

  TEST_CASE("window positions") {
    CHECK(window_positions(17, 15, 1) == 3);
    CHECK(window_positions(18, 15, 2) == 2);
    CHECK(window_positions(14, 15, 1) == 0);
  }

  TEST_CASE("chroma loss matches the sliding-window oracle") {
    std::mt19937_64 rng(2);
    for (auto cfg : {ChromaConfig{}, ChromaConfig{5, 2, 0.001, 0.002, false}, ChromaConfig{7, 3, 0.01, 0.01, true},
                     ChromaConfig{9, 1, 0.001, 0.001, false, 1.0}}) {
      const auto a = wft::random_image(17, 19, rng), b = wft::random_image(17, 19, rng);
      CHECK(chroma_loss(a, b, cfg) == doctest::Approx(naive_chroma(a, b, cfg)).epsilon(1e-10));
    }
    const auto a = wft::random_image(17, 17, rng);
    CHECK(std::abs(chroma_loss(a, a)) < 1e-12);
    CHECK_THROWS_AS(chroma_loss(ImageRGB(10, 20), ImageRGB(10, 20)), DimensionError);
  }

  TEST_CASE("chroma loss is symmetric and ignores a chroma offset") {
    std::mt19937_64 rng(3);
    const auto a = wft::random_image(16, 16, rng, 0.2, 0.8), b = wft::random_image(16, 16, rng, 0.2, 0.8);
    CHECK(chroma_loss(a, b) == doctest::Approx(chroma_loss(b, a)).epsilon(1e-12));
    ImageRGB shifted = a;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        shifted.at(y, x, 0) += 0.05;
        shifted.at(y, x, 2) -= 0.05;
      }
    CHECK(chroma_loss(shifted, b) == doctest::Approx(chroma_loss(a, b)).epsilon(1e-10));
  }

  TEST_CASE("sobel loss matches the direct definition") {
    std::mt19937_64 rng(4);
    const auto a = wft::random_image(9, 11, rng), b = wft::random_image(9, 11, rng);
    CHECK(sobel_color_loss(a, b) == doctest::Approx(naive_sobel(a, b)).epsilon(1e-12));
    CHECK(sobel_color_loss(a, b) == doctest::Approx(sobel_color_loss(b, a)).epsilon(1e-12));
    ImageRGB brighter = b;
    for (double& v : brighter.pixels()) v = v * 0.5 + 0.25;
    ImageRGB offset = brighter;
    for (double& v : offset.pixels()) v += 0.1;
    CHECK(sobel_color_loss(a, offset) == doctest::Approx(sobel_color_loss(a, brighter)).epsilon(1e-12));
  }

  TEST_CASE("analytic gradients match finite differences") {
    std::mt19937_64 rng(5);
    const auto gt = to_tensor<double>(wft::random_image(18, 18, rng));
    const auto pred = to_tensor<double>(wft::random_image(18, 18, rng));
    CHECK(fd_error(gt, pred, [](auto& g, auto& p, bool want) { return l1_loss(g, p, want); }) <= 1e-6);
    CHECK(fd_error(gt, pred, [](auto& g, auto& p, bool want) { return chroma_loss(g, p, ChromaConfig{}, want); }) <=
          1e-6);
    CHECK(fd_error(gt, pred, [](auto& g, auto& p, bool want) { return sobel_color_loss(g, p, want); }) <= 1e-6);
    const ChromaConfig strided{5, 3, 0.001, 0.001, false};
    CHECK(fd_error(gt, pred, [&](auto& g, auto& p, bool want) { return chroma_loss(g, p, strided, want); }) <= 1e-6);
    const ChromaConfig plain{15, 1, 0.001, 0.001, false, 1.0};
    CHECK(fd_error(gt, pred, [&](auto& g, auto& p, bool want) { return chroma_loss(g, p, plain, want); }) <= 1e-6);
  }

  TEST_CASE("parts recombine with the default weights") {
    std::mt19937_64 rng(6);
    const auto a = wft::random_image(16, 16, rng), b = wft::random_image(16, 16, rng);
    const auto t = total_loss(a, b);
    CHECK(t.total == doctest::Approx(3 * t.parts.l1 + t.parts.chroma + 3 * t.parts.sobel).epsilon(1e-14));
    CHECK(t.parts.l1 == l1_loss(a, b));
    CHECK(t.parts.chroma == doctest::Approx(chroma_loss(a, b)).epsilon(1e-14));
    CHECK(t.parts.sobel == doctest::Approx(sobel_color_loss(a, b)).epsilon(1e-14));
  }

  TEST_CASE("zero weights drop terms from the gradient") {
    std::mt19937_64 rng(7);
    const auto gt = to_tensor<double>(wft::random_image(16, 16, rng));
    const auto pred = to_tensor<double>(wft::random_image(16, 16, rng));
    const auto only_l1 = total_loss(gt, pred, LossWeights{3, 0, 0});
    const auto l1 = l1_loss(gt, pred);
    for (std::size_t i = 0; i < l1.grad.numel(); ++i) CHECK(only_l1.grad[i] == doctest::Approx(3 * l1.grad[i]));
    CHECK(only_l1.parts.chroma > 0.0);
  }

  TEST_CASE("invalid settings") {
    CHECK_THROWS_AS((LossWeights{-1, 1, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((ChromaConfig{0, 1, 0.001, 0.001, false}.validate()), ConfigError);
    CHECK_THROWS_AS((ChromaConfig{15, 1, 0.0, 0.001, false}.validate()), ConfigError);
    CHECK_THROWS_AS((ChromaConfig{15, 1, 0.001, 0.001, false, 0.0}.validate()), ConfigError);
  }
}
