#include "waterformer/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "waterformer/color_space.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/tensor_image.hpp"

namespace waterformer {
namespace {

template <typename T>
void require_rgb_pair(const Tensor<T>& gt, const Tensor<T>& pred, const char* what) {
  if (gt.channels() != 3) throw DimensionError(std::string(what) + ": expected 3-channel images");
  pred.require_shape(gt.shape(), what);
}

// Summed-area table with a zero border: s(y+1, x+1) = sum over [0..y] x [0..x].
class IntegralImage {
 public:
  IntegralImage(const std::vector<double>& v, int h, int w) : h_(h), w_(w), s_((h + 1) * static_cast<std::size_t>(w + 1)) {
    for (int y = 0; y < h; ++y) {
      double row = 0.0;
      for (int x = 0; x < w; ++x) {
        row += v[static_cast<std::size_t>(y) * w + x];
        at(y + 1, x + 1) = at(y, x + 1) + row;
      }
    }
  }
  // Sum over rows [y0, y1) and cols [x0, x1), clipped to the image.
  double box(int y0, int x0, int y1, int x1) const {
    y0 = std::max(y0, 0);
    x0 = std::max(x0, 0);
    y1 = std::min(y1, h_);
    x1 = std::min(x1, w_);
    if (y0 >= y1 || x0 >= x1) return 0.0;
    return at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
  }

 private:
  double& at(int y, int x) { return s_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  double at(int y, int x) const { return s_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  int h_;
  int w_;
  std::vector<double> s_;
};

struct ChromaPlanes {
  std::vector<double> gt;
  std::vector<double> pred;
};

// Projects the I (row 1) or Q (row 2) chroma of both images, centred on
// each plane's global mean to keep the moment sums well conditioned.
template <typename T>
ChromaPlanes chroma_planes(const Tensor<T>& gt, const Tensor<T>& pred, int row) {
  const std::size_t plane = gt.shape().plane();
  ChromaPlanes out{std::vector<double>(plane), std::vector<double>(plane)};
  const auto& m = kRgbToYiq[row];
  auto project = [&](const Tensor<T>& img, std::vector<double>& dst) {
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = m[0] * img.channel(0)[i] + m[1] * img.channel(1)[i] + m[2] * img.channel(2)[i];
      mean += dst[i];
    }
    mean /= static_cast<double>(plane);
    for (double& v : dst) v -= mean;
  };
  project(gt, out.gt);
  project(pred, out.pred);
  return out;
}

struct WindowSimilarity {
  // Indexed by window position (row-major over positions).
  std::vector<double> s;
  std::vector<double> denom;
  std::vector<double> mean_gt;
  std::vector<double> mean_pred;
};

WindowSimilarity window_similarity(const ChromaPlanes& planes, int h, int w, const ChromaConfig& cfg, double c) {
  const int k = cfg.window;
  const int ny = window_positions(h, k, cfg.stride);
  const int nx = window_positions(w, k, cfg.stride);
  const std::size_t count = static_cast<std::size_t>(ny) * nx;
  std::vector<double> gg(planes.gt.size()), pp(planes.gt.size()), gp(planes.gt.size());
  for (std::size_t i = 0; i < gg.size(); ++i) {
    gg[i] = planes.gt[i] * planes.gt[i];
    pp[i] = planes.pred[i] * planes.pred[i];
    gp[i] = planes.gt[i] * planes.pred[i];
  }
  const IntegralImage sg(planes.gt, h, w), sp(planes.pred, h, w), sgg(gg, h, w), spp(pp, h, w), sgp(gp, h, w);
  WindowSimilarity ws{std::vector<double>(count), std::vector<double>(count), std::vector<double>(count),
                      std::vector<double>(count)};
  const double n = static_cast<double>(k) * k;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const int y0 = iy * cfg.stride;
      const int x0 = ix * cfg.stride;
      const double mg = sg.box(y0, x0, y0 + k, x0 + k) / n;
      const double mp = sp.box(y0, x0, y0 + k, x0 + k) / n;
      const double vg = sgg.box(y0, x0, y0 + k, x0 + k) / n - mg * mg;
      const double vp = spp.box(y0, x0, y0 + k, x0 + k) / n - mp * mp;
      const double cov = sgp.box(y0, x0, y0 + k, x0 + k) / n - mg * mp;
      const std::size_t idx = static_cast<std::size_t>(iy) * nx + ix;
      ws.denom[idx] = vg + vp + c;
      ws.s[idx] = (cfg.covariance_weight * cov + c) / ws.denom[idx];
      ws.mean_gt[idx] = mg;
      ws.mean_pred[idx] = mp;
    }
  }
  return ws;
}

// dL/dpred_chroma for one chroma channel given dL/dS per window.
std::vector<double> chroma_channel_grad(const ChromaPlanes& planes, const WindowSimilarity& ws,
                                        const std::vector<double>& dl_ds, int h, int w, const ChromaConfig& cfg) {
  const int k = cfg.window;
  const int nx = window_positions(w, k, cfg.stride);
  const int ny = window_positions(h, k, cfg.stride);
  const double n = static_cast<double>(k) * k;
  const double kappa = cfg.covariance_weight;
  // Per-window coefficients scattered onto their top-left pixel.
  std::vector<double> a1(static_cast<std::size_t>(h) * w, 0.0), a2(a1.size(), 0.0), a3(a1.size(), 0.0);
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const std::size_t idx = static_cast<std::size_t>(iy) * nx + ix;
      const double a = dl_ds[idx] / (n * ws.denom[idx]);
      const std::size_t pix = static_cast<std::size_t>(iy * cfg.stride) * w + ix * cfg.stride;
      a1[pix] = a;
      a2[pix] = a * ws.s[idx];
      a3[pix] = a * (kappa * ws.mean_gt[idx] - 2.0 * ws.s[idx] * ws.mean_pred[idx]);
    }
  }
  const IntegralImage s1(a1, h, w), s2(a2, h, w), s3(a3, h, w);
  std::vector<double> grad(a1.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Windows covering (y, x) start in [y-k+1, y] x [x-k+1, x].
      const double b1 = s1.box(y - k + 1, x - k + 1, y + 1, x + 1);
      const double b2 = s2.box(y - k + 1, x - k + 1, y + 1, x + 1);
      const double b3 = s3.box(y - k + 1, x - k + 1, y + 1, x + 1);
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      grad[i] = kappa * planes.gt[i] * b1 - 2.0 * planes.pred[i] * b2 - b3;
    }
  }
  return grad;
}

constexpr std::array<std::array<int, 3>, 3> kSobelX{{{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}}};
constexpr std::array<std::array<int, 3>, 3> kSobelY{{{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}}};

template <typename T>
double sobel_response(const T* plane, int w, int y, int x, const std::array<std::array<int, 3>, 3>& k) {
  double acc = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) acc += k[i][j] * static_cast<double>(plane[static_cast<std::size_t>(y + i - 1) * w + x + j - 1]);
  return acc;
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

void LossWeights::validate() const {
  if (l1 < 0.0 || chroma < 0.0 || sobel < 0.0) throw ConfigError("loss weights must be non-negative");
}

void ChromaConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw ConfigError("chroma window must be odd and >= 3");
  if (stride < 1) throw ConfigError("chroma stride must be >= 1");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("chroma constants must be positive");
  if (!(covariance_weight > 0.0)) throw ConfigError("chroma covariance weight must be positive");
}

int window_positions(int extent, int window, int stride) {
  if (extent < window) return 0;
  return (extent - window) / stride + 1;
}

double chroma_similarity(std::span<const double> gt, std::span<const double> pred, double c,
                         double covariance_weight) {
  if (gt.size() != pred.size() || gt.empty()) throw DimensionError("chroma_similarity: windows must be equal and nonempty");
  const double n = static_cast<double>(gt.size());
  double mg = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    mg += gt[i];
    mp += pred[i];
  }
  mg /= n;
  mp /= n;
  double vg = 0.0, vp = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    vg += (gt[i] - mg) * (gt[i] - mg);
    vp += (pred[i] - mp) * (pred[i] - mp);
    cov += (gt[i] - mg) * (pred[i] - mp);
  }
  return (covariance_weight * cov / n + c) / (vg / n + vp / n + c);
}

template <typename T>
LossResult<T> l1_loss(const Tensor<T>& gt, const Tensor<T>& pred, bool want_grad) {
  require_rgb_pair(gt, pred, "l1_loss");
  LossResult<T> r;
  const double n = static_cast<double>(gt.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.numel(); ++i) acc += std::abs(static_cast<double>(gt[i]) - static_cast<double>(pred[i]));
  r.value = acc / n;
  if (want_grad) {
    r.grad = Tensor<T>(gt.shape());
    for (std::size_t i = 0; i < gt.numel(); ++i)
      r.grad[i] = static_cast<T>(sign(static_cast<double>(pred[i]) - static_cast<double>(gt[i])) / n);
  }
  return r;
}

template <typename T>
LossResult<T> chroma_loss(const Tensor<T>& gt, const Tensor<T>& pred, const ChromaConfig& cfg, bool want_grad) {
  require_rgb_pair(gt, pred, "chroma_loss");
  cfg.validate();
  const int h = gt.height();
  const int w = gt.width();
  if (h < cfg.window || w < cfg.window) {
    throw DimensionError("chroma_loss: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than window " +
                         std::to_string(cfg.window));
  }
  const ChromaPlanes pi = chroma_planes(gt, pred, 1);
  const ChromaPlanes pq = chroma_planes(gt, pred, 2);
  WindowSimilarity si = window_similarity(pi, h, w, cfg, cfg.c1);
  WindowSimilarity sq = window_similarity(pq, h, w, cfg, cfg.c2);
  const std::size_t count = si.s.size();

  // Clipped similarities have zero derivative.
  std::vector<double> live_i(count, 1.0), live_q(count, 1.0);
  if (cfg.clip_similarity) {
    for (std::size_t i = 0; i < count; ++i) {
      if (si.s[i] < 0.0 || si.s[i] > 1.0) live_i[i] = 0.0;
      if (sq.s[i] < 0.0 || sq.s[i] > 1.0) live_q[i] = 0.0;
      si.s[i] = std::clamp(si.s[i], 0.0, 1.0);
      sq.s[i] = std::clamp(sq.s[i], 0.0, 1.0);
    }
  }

  LossResult<T> r;
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) acc += 1.0 - si.s[i] * sq.s[i];
  r.value = acc / static_cast<double>(count);
  if (!want_grad) return r;

  std::vector<double> dl_dsi(count), dl_dsq(count);
  for (std::size_t i = 0; i < count; ++i) {
    dl_dsi[i] = -sq.s[i] * live_i[i] / static_cast<double>(count);
    dl_dsq[i] = -si.s[i] * live_q[i] / static_cast<double>(count);
  }
  // Clipping must not alter the raw-S coefficients used by the derivative.
  if (cfg.clip_similarity) {
    si = window_similarity(pi, h, w, cfg, cfg.c1);
    sq = window_similarity(pq, h, w, cfg, cfg.c2);
  }
  const std::vector<double> gi = chroma_channel_grad(pi, si, dl_dsi, h, w, cfg);
  const std::vector<double> gq = chroma_channel_grad(pq, sq, dl_dsq, h, w, cfg);
  r.grad = Tensor<T>(gt.shape());
  const std::size_t plane = gt.shape().plane();
  for (int c = 0; c < 3; ++c) {
    T* dst = r.grad.channel(c);
    const double wi = kRgbToYiq[1][c];
    const double wq = kRgbToYiq[2][c];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(wi * gi[i] + wq * gq[i]);
  }
  return r;
}

template <typename T>
LossResult<T> sobel_color_loss(const Tensor<T>& gt, const Tensor<T>& pred, bool want_grad) {
  require_rgb_pair(gt, pred, "sobel_color_loss");
  const int h = gt.height();
  const int w = gt.width();
  if (h < 3 || w < 3) throw DimensionError("sobel_color_loss: images must be at least 3x3");
  const double interior = static_cast<double>(h - 2) * (w - 2);
  const double norm = 3.0 * interior;
  LossResult<T> r;
  if (want_grad) r.grad = Tensor<T>(gt.shape());
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    const T* g = gt.channel(c);
    const T* p = pred.channel(c);
    T* dp = want_grad ? r.grad.channel(c) : nullptr;
    for (const auto* kernel : {&kSobelX, &kSobelY}) {
      for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
          const double diff = sobel_response(p, w, y, x, *kernel) - sobel_response(g, w, y, x, *kernel);
          acc += std::abs(diff);
          if (!dp) continue;
          const double s = sign(diff) / norm;
          if (s == 0.0) continue;
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              dp[static_cast<std::size_t>(y + i - 1) * w + x + j - 1] += static_cast<T>((*kernel)[i][j] * s);
        }
      }
    }
  }
  r.value = acc / norm;
  return r;
}

template <typename T>
TotalLoss<T> total_loss(const Tensor<T>& gt, const Tensor<T>& pred, const LossWeights& weights,
                        const ChromaConfig& cfg, bool want_grad) {
  weights.validate();
  TotalLoss<T> out;
  auto l1 = l1_loss(gt, pred, want_grad);
  out.parts.l1 = l1.value;
  if (want_grad) {
    out.grad = Tensor<T>(gt.shape());
    for (std::size_t i = 0; i < l1.grad.numel(); ++i) out.grad[i] = static_cast<T>(weights.l1) * l1.grad[i];
  }
  // Terms with zero weight are still reported for logging but contribute no gradient.
  auto chroma = chroma_loss(gt, pred, cfg, want_grad && weights.chroma != 0.0);
  out.parts.chroma = chroma.value;
  if (want_grad && weights.chroma != 0.0)
    for (std::size_t i = 0; i < chroma.grad.numel(); ++i) out.grad[i] += static_cast<T>(weights.chroma) * chroma.grad[i];
  auto sobel = sobel_color_loss(gt, pred, want_grad && weights.sobel != 0.0);
  out.parts.sobel = sobel.value;
  if (want_grad && weights.sobel != 0.0)
    for (std::size_t i = 0; i < sobel.grad.numel(); ++i) out.grad[i] += static_cast<T>(weights.sobel) * sobel.grad[i];
  out.total = weights.l1 * out.parts.l1 + weights.chroma * out.parts.chroma + weights.sobel * out.parts.sobel;
  return out;
}

double l1_loss(const ImageRGB& gt, const ImageRGB& pred) {
  require_same_shape(gt, pred, "l1_loss");
  return l1_loss(to_tensor<double>(gt), to_tensor<double>(pred), false).value;
}

double chroma_loss(const ImageRGB& gt, const ImageRGB& pred, const ChromaConfig& cfg) {
  require_same_shape(gt, pred, "chroma_loss");
  return chroma_loss(to_tensor<double>(gt), to_tensor<double>(pred), cfg, false).value;
}

double sobel_color_loss(const ImageRGB& gt, const ImageRGB& pred) {
  require_same_shape(gt, pred, "sobel_color_loss");
  return sobel_color_loss(to_tensor<double>(gt), to_tensor<double>(pred), false).value;
}

TotalLoss<double> total_loss(const ImageRGB& gt, const ImageRGB& pred, const LossWeights& weights,
                             const ChromaConfig& cfg) {
  require_same_shape(gt, pred, "total_loss");
  return total_loss(to_tensor<double>(gt), to_tensor<double>(pred), weights, cfg, false);
}

#define WATERFORMER_INSTANTIATE_LOSSES(T)                                                                 \
  template LossResult<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&, bool);                           \
  template LossResult<T> chroma_loss<T>(const Tensor<T>&, const Tensor<T>&, const ChromaConfig&, bool);  \
  template LossResult<T> sobel_color_loss<T>(const Tensor<T>&, const Tensor<T>&, bool);                  \
  template TotalLoss<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossWeights&,            \
                                      const ChromaConfig&, bool);

WATERFORMER_INSTANTIATE_LOSSES(float)
WATERFORMER_INSTANTIATE_LOSSES(double)

}  // namespace waterformer
