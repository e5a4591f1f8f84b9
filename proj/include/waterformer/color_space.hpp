#pragma once

#include <array>
#include <span>

#include "waterformer/image.hpp"

namespace waterformer {

// NTSC luma/chroma planes. Chroma is left unclamped so losses see raw values.
struct ImageYIQ {
  Plane y;
  Plane i;
  Plane q;

  int height() const { return y.height; }
  int width() const { return y.width; }
};

// Forward RGB -> YIQ matrix, rows Y, I, Q.
inline constexpr std::array<std::array<double, 3>, 3> kRgbToYiq{{
    {0.299, 0.587, 0.114},
    {0.596, -0.274, -0.322},
    {0.211, -0.523, 0.312},
}};

// Exact inverse of kRgbToYiq, precomputed in extended precision.
inline constexpr std::array<std::array<double, 3>, 3> kYiqToRgb{{
    {1.0, 0.956170685404145037, 0.621432566346585583},
    {1.0, -0.272688602330106265, -0.646813237020173773},
    {1.0, -1.10374408217602622, 1.70062309467730628},
}};

ImageYIQ rgb_to_yiq(const ImageRGB& img);

struct YiqToRgbResult {
  ImageRGB image;
  // Largest pre-clamp distance outside [0,1].
  double excursion = 0.0;
};

YiqToRgbResult yiq_to_rgb(const ImageYIQ& img);

struct ChannelStats {
  double mean = 0.0;
  double variance = 0.0;
};

// Population mean and variance (divide by N).
ChannelStats channel_stats(std::span<const double> channel);

}  // namespace waterformer
