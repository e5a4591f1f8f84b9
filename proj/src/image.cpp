#include "waterformer/image.hpp"

#include <algorithm>
#include <string>

#include "waterformer/errors.hpp"

namespace waterformer {

ImageRGB::ImageRGB(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw DimensionError("ImageRGB: dimensions must be positive, got " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
  pixels_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

ImageRGB::ImageRGB(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height < 1 || width < 1 || pixels_.size() != static_cast<std::size_t>(height) * width * 3) {
    throw DimensionError("ImageRGB: pixel buffer does not match " + std::to_string(height) + "x" +
                         std::to_string(width) + "x3");
  }
}

bool ImageRGB::is_valid() const {
  if (pixels_.empty()) return false;
  return std::all_of(pixels_.begin(), pixels_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

double ImageRGB::range_excursion() const {
  double worst = 0.0;
  for (double v : pixels_) {
    worst = std::max({worst, -v, v - 1.0});
  }
  return worst;
}

double ImageRGB::clamp() {
  const double excursion = range_excursion();
  for (double& v : pixels_) v = std::clamp(v, 0.0, 1.0);
  return excursion;
}

void require_same_shape(const ImageRGB& a, const ImageRGB& b, const char* what) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()));
  }
}

}  // namespace waterformer
