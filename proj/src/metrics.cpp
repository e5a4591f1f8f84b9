#include "waterformer/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include "waterformer/color_space.hpp"
#include "waterformer/errors.hpp"

namespace waterformer {
namespace {

// UCIQE linear combination (Yang & Sowmya, 2015).
constexpr double kUciqeChroma = 0.4680;
constexpr double kUciqeContrast = 0.2745;
constexpr double kUciqeSaturation = 0.2576;

// UIQM linear combination (Panetta, Gao & Agaian, 2016).
constexpr double kUiqmColorfulness = 0.0282;
constexpr double kUiqmSharpness = 0.2953;
constexpr double kUiqmContrast = 3.5753;

constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

constexpr int kUiqmBlock = 10;
constexpr double kUiqmTrim = 0.1;

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> g{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-(d * d) / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Separable valid-mode Gaussian filter.
Plane gaussian_valid(const Plane& p) {
  static const auto taps = gaussian_taps();
  const int oh = p.height - kSsimWindow + 1;
  const int ow = p.width - kSsimWindow + 1;
  Plane rows(p.height, ow);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * p.at(y, x + k);
      rows.at(y, x) = acc;
    }
  Plane out(oh, ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += taps[k] * rows.at(y + k, x);
      out.at(y, x) = acc;
    }
  return out;
}

double ssim_plane(const Plane& a, const Plane& b) {
  const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  Plane aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    aa.values[i] = a.values[i] * a.values[i];
    bb.values[i] = b.values[i] * b.values[i];
    ab.values[i] = a.values[i] * b.values[i];
  }
  const Plane ma = gaussian_valid(a), mb = gaussian_valid(b);
  const Plane saa = gaussian_valid(aa), sbb = gaussian_valid(bb), sab = gaussian_valid(ab);
  double acc = 0.0;
  for (std::size_t i = 0; i < ma.values.size(); ++i) {
    const double mx = ma.values[i];
    const double my = mb.values[i];
    const double vx = saa.values[i] - mx * mx;
    const double vy = sbb.values[i] - my * my;
    const double cxy = sab.values[i] - mx * my;
    acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(ma.values.size());
}

Plane channel_plane(const ImageRGB& img, int c) {
  Plane p(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) p.at(y, x) = img.at(y, x, c);
  return p;
}

double srgb_to_linear(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }

double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

// sRGB (D65) -> CIELab with L in [0,100].
std::array<double, 3> to_lab(double r, double g, double b) {
  r = srgb_to_linear(r);
  g = srgb_to_linear(g);
  b = srgb_to_linear(b);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  const double fx = lab_f(x), fy = lab_f(y), fz = lab_f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double percentile_sorted(const std::vector<double>& sorted, double fraction) {
  const auto idx = static_cast<std::size_t>(static_cast<double>(sorted.size()) * fraction);
  return sorted[std::min(idx, sorted.size() - 1)];
}

// Alpha-trimmed mean and the spread about it.
std::pair<double, double> trimmed_stats(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  const auto lo = static_cast<std::size_t>(std::ceil(kUiqmTrim * static_cast<double>(n)));
  const auto hi = static_cast<std::size_t>(std::floor(kUiqmTrim * static_cast<double>(n)));
  double mean = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = lo; i + hi < n; ++i, ++kept) mean += v[i];
  mean = kept ? mean / static_cast<double>(kept) : 0.0;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, var / static_cast<double>(n)};
}

// Edge-repeating reflection ("d c b a | a b c d").
int symmetric_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

Plane sobel_magnitude(const Plane& p) {
  Plane mag(p.height, p.width);
  double peak = 0.0;
  auto px = [&](int y, int x) { return p.at(symmetric_index(y, p.height), symmetric_index(x, p.width)); };
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) {
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      mag.at(y, x) = std::hypot(gx, gy);
      peak = std::max(peak, mag.at(y, x));
    }
  if (peak > 0.0)
    for (double& v : mag.values) v *= 255.0 / peak;
  return mag;
}

struct BlockGrid {
  int size;
  int rows;
  int cols;
};

BlockGrid block_grid(int h, int w) {
  const int size = std::min({kUiqmBlock, h, w});
  return {size, h / size, w / size};
}

// Measure of enhancement: (2 / blocks) * sum log(max / min).
double eme(const Plane& p) {
  const BlockGrid g = block_grid(p.height, p.width);
  double acc = 0.0;
  for (int by = 0; by < g.rows; ++by)
    for (int bx = 0; bx < g.cols; ++bx) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (int y = 0; y < g.size; ++y)
        for (int x = 0; x < g.size; ++x) {
          const double v = p.at(by * g.size + y, bx * g.size + x);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      if (lo > 0.0 && hi > 0.0) acc += std::log(hi / lo);
    }
  return 2.0 / (static_cast<double>(g.rows) * g.cols) * acc;
}

// Block contrast term: -(1 / blocks) * sum r log r with r = (max - min) / (max + min).
double log_amee(const std::array<Plane, 3>& rgb) {
  const BlockGrid g = block_grid(rgb[0].height, rgb[0].width);
  double acc = 0.0;
  for (int by = 0; by < g.rows; ++by)
    for (int bx = 0; bx < g.cols; ++bx) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& p : rgb)
        for (int y = 0; y < g.size; ++y)
          for (int x = 0; x < g.size; ++x) {
            const double v = p.at(by * g.size + y, bx * g.size + x);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
      const double top = hi - lo;
      const double bottom = hi + lo;
      if (top > 0.0 && bottom > 0.0) acc += (top / bottom) * std::log(top / bottom);
    }
  return -acc / (static_cast<double>(g.rows) * g.cols);
}

void format_cell(std::ostringstream& out, const std::optional<double>& v) {
  out << ',';
  if (!v) return;
  if (std::isinf(*v)) {
    out << (*v > 0 ? "inf" : "-inf");
    return;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  out << buf;
}

}  // namespace

double psnr(const ImageRGB& gt, const ImageRGB& pred) {
  require_same_shape(gt, pred, "psnr");
  double mse = 0.0;
  const auto a = gt.pixels();
  const auto b = pred.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageRGB& gt, const ImageRGB& pred, SsimOptions options) {
  require_same_shape(gt, pred, "ssim");
  if (gt.height() < kSsimWindow || gt.width() < kSsimWindow) {
    throw DimensionError("ssim: image must be at least 11x11");
  }
  if (options.per_channel) {
    double acc = 0.0;
    for (int c = 0; c < 3; ++c) acc += ssim_plane(channel_plane(gt, c), channel_plane(pred, c));
    return acc / 3.0;
  }
  return ssim_plane(rgb_to_yiq(gt).y, rgb_to_yiq(pred).y);
}

double nrmse(const ImageRGB& gt, const ImageRGB& pred, NrmseNormalization norm) {
  require_same_shape(gt, pred, "nrmse");
  const auto a = gt.pixels();
  const auto b = pred.pixels();
  double err = 0.0;
  double energy = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err += (a[i] - b[i]) * (a[i] - b[i]);
    energy += a[i] * a[i];
  }
  if (norm == NrmseNormalization::Frobenius) {
    if (energy == 0.0) throw DomainError("nrmse: reference image has zero norm");
    return std::sqrt(err / energy);
  }
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  if (*hi == *lo) throw DomainError("nrmse: reference image has zero range");
  return std::sqrt(err / static_cast<double>(a.size())) / (*hi - *lo);
}

UciqeTerms uciqe_terms(const ImageRGB& img) {
  const std::size_t n = img.pixel_count();
  std::vector<double> lum(n), chroma(n);
  double sat_sum = 0.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const auto lab = to_lab(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      const std::size_t i = static_cast<std::size_t>(y) * img.width() + x;
      lum[i] = std::clamp(lab[0] / 100.0, 0.0, 1.0);
      chroma[i] = std::hypot(lab[1], lab[2]) / 100.0;
      const double mag = std::hypot(chroma[i], lum[i]);
      sat_sum += mag > 0.0 ? chroma[i] / mag : 0.0;
    }
  UciqeTerms t;
  double mean = 0.0;
  for (double c : chroma) mean += c;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double c : chroma) var += (c - mean) * (c - mean);
  t.chroma_std = std::sqrt(var / static_cast<double>(n));
  std::sort(lum.begin(), lum.end());
  t.luminance_contrast = percentile_sorted(lum, 0.99) - percentile_sorted(lum, 0.01);
  t.saturation_mean = sat_sum / static_cast<double>(n);
  t.score = kUciqeChroma * t.chroma_std + kUciqeContrast * t.luminance_contrast + kUciqeSaturation * t.saturation_mean;
  return t;
}

UiqmTerms uiqm_terms(const ImageRGB& img) {
  const std::size_t n = img.pixel_count();
  std::array<Plane, 3> rgb;
  for (int c = 0; c < 3; ++c) {
    rgb[c] = channel_plane(img, c);
    for (double& v : rgb[c].values) v *= 255.0;
  }
  std::vector<double> rg(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    rg[i] = rgb[0].values[i] - rgb[1].values[i];
    yb[i] = 0.5 * (rgb[0].values[i] + rgb[1].values[i]) - rgb[2].values[i];
  }
  const auto [mu_rg, var_rg] = trimmed_stats(rg);
  const auto [mu_yb, var_yb] = trimmed_stats(yb);
  UiqmTerms t;
  t.colorfulness = -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) + 0.1586 * std::sqrt(var_rg + var_yb);

  constexpr std::array<double, 3> kLuma{0.299, 0.587, 0.114};
  for (int c = 0; c < 3; ++c) {
    Plane edges = sobel_magnitude(rgb[c]);
    for (std::size_t i = 0; i < n; ++i) edges.values[i] *= rgb[c].values[i];
    t.sharpness += kLuma[c] * eme(edges);
  }
  t.contrast = log_amee(rgb);
  t.score = kUiqmColorfulness * t.colorfulness + kUiqmSharpness * t.sharpness + kUiqmContrast * t.contrast;
  return t;
}

double uciqe(const ImageRGB& img) { return uciqe_terms(img).score; }
double uiqm(const ImageRGB& img) { return uiqm_terms(img).score; }

MetricRow MetricReport::aggregate() const {
  MetricRow mean;
  mean.id = "mean";
  auto average = [&](std::optional<double> MetricRow::*field) -> std::optional<double> {
    double acc = 0.0;
    int count = 0;
    for (const auto& r : rows)
      if (r.*field) {
        acc += *(r.*field);
        ++count;
      }
    if (count == 0) return std::nullopt;
    return acc / count;
  };
  mean.ssim = average(&MetricRow::ssim);
  mean.psnr = average(&MetricRow::psnr);
  mean.nrmse = average(&MetricRow::nrmse);
  mean.uciqe = average(&MetricRow::uciqe);
  mean.uiqm = average(&MetricRow::uiqm);
  return mean;
}

MetricCounts MetricReport::counts() const {
  MetricCounts c;
  for (const auto& r : rows) {
    c.ssim += r.ssim.has_value();
    c.psnr += r.psnr.has_value();
    c.nrmse += r.nrmse.has_value();
    c.uciqe += r.uciqe.has_value();
    c.uiqm += r.uiqm.has_value();
  }
  return c;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "id,ssim,psnr,nrmse,uciqe,uiqm\n";
  auto emit = [&](const MetricRow& r) {
    out << r.id;
    format_cell(out, r.ssim);
    format_cell(out, r.psnr);
    format_cell(out, r.nrmse);
    format_cell(out, r.uciqe);
    format_cell(out, r.uiqm);
    out << '\n';
  };
  for (const auto& r : rows) emit(r);
  if (!rows.empty()) emit(aggregate());
  return out.str();
}

std::string MetricReport::summary() const {
  const MetricRow mean = aggregate();
  const MetricCounts c = counts();
  std::ostringstream out;
  out << rows.size() << " image(s)\n";
  auto line = [&](const char* name, const std::optional<double>& v, int count) {
    if (!v) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %-6s mean %.4f over %d\n", name, *v, count);
    out << buf;
  };
  line("SSIM", mean.ssim, c.ssim);
  line("PSNR", mean.psnr, c.psnr);
  line("NRMSE", mean.nrmse, c.nrmse);
  line("UCIQE", mean.uciqe, c.uciqe);
  line("UIQM", mean.uiqm, c.uiqm);
  return out.str();
}

MetricRow evaluate_pair(const std::string& id, const ImageRGB& gt, const ImageRGB& pred, bool with_no_reference) {
  MetricRow r;
  r.id = id;
  r.ssim = ssim(gt, pred);
  r.psnr = psnr(gt, pred);
  r.nrmse = nrmse(gt, pred);
  if (with_no_reference) {
    r.uciqe = uciqe(pred);
    r.uiqm = uiqm(pred);
  }
  return r;
}

MetricRow evaluate_single(const std::string& id, const ImageRGB& img) {
  MetricRow r;
  r.id = id;
  r.uciqe = uciqe(img);
  r.uiqm = uiqm(img);
  return r;
}

}  // namespace waterformer
