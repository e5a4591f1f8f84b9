#include "waterformer/color_space.hpp"

#include <algorithm>

#include "waterformer/errors.hpp"

namespace waterformer {

ImageYIQ rgb_to_yiq(const ImageRGB& img) {
  const int h = img.height();
  const int w = img.width();
  ImageYIQ out{Plane(h, w), Plane(h, w), Plane(h, w)};
  const auto& m = kRgbToYiq;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = img.at(y, x, 0);
      const double g = img.at(y, x, 1);
      const double b = img.at(y, x, 2);
      out.y.at(y, x) = m[0][0] * r + m[0][1] * g + m[0][2] * b;
      out.i.at(y, x) = m[1][0] * r + m[1][1] * g + m[1][2] * b;
      out.q.at(y, x) = m[2][0] * r + m[2][1] * g + m[2][2] * b;
    }
  }
  return out;
}

YiqToRgbResult yiq_to_rgb(const ImageYIQ& img) {
  const int h = img.height();
  const int w = img.width();
  if (img.i.height != h || img.q.height != h || img.i.width != w || img.q.width != w) {
    throw DimensionError("yiq_to_rgb: Y, I, Q planes differ in size");
  }
  ImageRGB out(h, w);
  const auto& m = kYiqToRgb;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double yy = img.y.at(y, x);
      const double ii = img.i.at(y, x);
      const double qq = img.q.at(y, x);
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = m[c][0] * yy + m[c][1] * ii + m[c][2] * qq;
      }
    }
  }
  YiqToRgbResult result;
  result.excursion = out.clamp();
  result.image = std::move(out);
  return result;
}

ChannelStats channel_stats(std::span<const double> channel) {
  if (channel.empty()) throw DimensionError("channel_stats: empty channel");
  const double n = static_cast<double>(channel.size());
  double sum = 0.0;
  for (double v : channel) sum += v;
  const double mean = sum / n;
  double sq = 0.0;
  for (double v : channel) sq += (v - mean) * (v - mean);
  return {mean, sq / n};
}

}  // namespace waterformer
