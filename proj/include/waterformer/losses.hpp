#pragma once

#include <span>

#include "waterformer/image.hpp"
#include "waterformer/tensor.hpp"

namespace waterformer {

struct LossWeights {
  double l1 = 3.0;
  double chroma = 1.0;
  double sobel = 3.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline constexpr double kChromaCovarianceWeight = 2.0;

struct ChromaConfig {
  int window = 15;
  int stride = 1;
  double c1 = 0.001;  // I channel stabilizer
  double c2 = 0.001;  // Q channel stabilizer
  // Clamp each similarity to [0,1] before forming the loss. Off by default.
  bool clip_similarity = false;
  // Numerator weight on the covariance. 2 makes identical windows score 1;
  // 1 is the form without the factor, which peaks at 1/2.
  double covariance_weight = kChromaCovarianceWeight;

  void validate() const;
  friend bool operator==(const ChromaConfig&, const ChromaConfig&) = default;
};

// Loss value plus dLoss/dpred (3 x h x w). `grad` is empty when not requested.
template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;
};

struct LossParts {
  double l1 = 0.0;
  double chroma = 0.0;
  double sobel = 0.0;
};

template <typename T>
struct TotalLoss {
  double total = 0.0;
  LossParts parts;
  Tensor<T> grad;
};

// (w * cov(gt, pred) + c) / (var(gt) + var(pred) + c), population statistics.
double chroma_similarity(std::span<const double> gt, std::span<const double> pred, double c,
                         double covariance_weight = kChromaCovarianceWeight);

// Number of valid window positions along one axis.
int window_positions(int extent, int window, int stride);

template <typename T>
LossResult<T> l1_loss(const Tensor<T>& gt, const Tensor<T>& pred, bool want_grad = true);

template <typename T>
LossResult<T> chroma_loss(const Tensor<T>& gt, const Tensor<T>& pred, const ChromaConfig& cfg = {},
                          bool want_grad = true);

template <typename T>
LossResult<T> sobel_color_loss(const Tensor<T>& gt, const Tensor<T>& pred, bool want_grad = true);

template <typename T>
TotalLoss<T> total_loss(const Tensor<T>& gt, const Tensor<T>& pred, const LossWeights& weights = {},
                        const ChromaConfig& cfg = {}, bool want_grad = true);

// Value-only conveniences on images.
double l1_loss(const ImageRGB& gt, const ImageRGB& pred);
double chroma_loss(const ImageRGB& gt, const ImageRGB& pred, const ChromaConfig& cfg = {});
double sobel_color_loss(const ImageRGB& gt, const ImageRGB& pred);
TotalLoss<double> total_loss(const ImageRGB& gt, const ImageRGB& pred, const LossWeights& weights = {},
                             const ChromaConfig& cfg = {});

}  // namespace waterformer
