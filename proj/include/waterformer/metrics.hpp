#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "waterformer/image.hpp"

namespace waterformer {

// Reported by psnr() for identical images.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE) with unit peak.
double psnr(const ImageRGB& gt, const ImageRGB& pred);

struct SsimOptions {
  // Average SSIM over R, G, B instead of computing it on luma.
  bool per_channel = false;
};

// Single-scale SSIM: 11x11 Gaussian (sigma 1.5), K1 = 0.01, K2 = 0.03, valid
// windows, mean pooled. Requires h, w >= 11.
double ssim(const ImageRGB& gt, const ImageRGB& pred, SsimOptions options = {});

enum class NrmseNormalization { Frobenius, MinMax };

// Frobenius: ||pred - gt|| / ||gt||. MinMax: RMSE / (max(gt) - min(gt)).
double nrmse(const ImageRGB& gt, const ImageRGB& pred, NrmseNormalization norm = NrmseNormalization::Frobenius);

struct UciqeTerms {
  double chroma_std = 0.0;
  double luminance_contrast = 0.0;
  double saturation_mean = 0.0;
  double score = 0.0;
};

struct UiqmTerms {
  double colorfulness = 0.0;  // UICM
  double sharpness = 0.0;     // UISM
  double contrast = 0.0;      // UIConM
  double score = 0.0;
};

UciqeTerms uciqe_terms(const ImageRGB& img);
UiqmTerms uiqm_terms(const ImageRGB& img);
double uciqe(const ImageRGB& img);
double uiqm(const ImageRGB& img);

struct MetricRow {
  std::string id;
  std::optional<double> ssim;
  std::optional<double> psnr;
  std::optional<double> nrmse;
  std::optional<double> uciqe;
  std::optional<double> uiqm;
};

struct MetricCounts {
  int ssim = 0;
  int psnr = 0;
  int nrmse = 0;
  int uciqe = 0;
  int uiqm = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void add(MetricRow row) { rows.push_back(std::move(row)); }
  // Arithmetic mean of every metric present in at least one row.
  MetricRow aggregate() const;
  MetricCounts counts() const;

  // Columns: id,ssim,psnr,nrmse,uciqe,uiqm. Absent values are empty cells;
  // infinite PSNR is written as "inf". Last row is the "mean" aggregate.
  std::string to_csv() const;
  std::string summary() const;
};

// Full-reference metrics (and optionally no-reference ones) for one pair.
MetricRow evaluate_pair(const std::string& id, const ImageRGB& gt, const ImageRGB& pred, bool with_no_reference);
MetricRow evaluate_single(const std::string& id, const ImageRGB& img);

}  // namespace waterformer
