#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace waterformer {

// An h x w RGB image with interleaved components in [0,1].
class ImageRGB {
 public:
  ImageRGB() = default;
  ImageRGB(int height, int width, double fill = 0.0);
  ImageRGB(int height, int width, std::vector<double> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  double at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

  std::span<double> pixels() { return pixels_; }
  std::span<const double> pixels() const { return pixels_; }

  // True when every component lies in [0,1] and the image is nonempty.
  bool is_valid() const;
  // Largest distance of any component outside [0,1]; zero for valid images.
  double range_excursion() const;
  // Clamps in place and returns the excursion that was removed.
  double clamp();

  bool same_shape(const ImageRGB& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const ImageRGB&, const ImageRGB&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

// A single h x w real-valued plane, row-major.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// Throws DimensionError when shapes differ; `what` names the operation.
void require_same_shape(const ImageRGB& a, const ImageRGB& b, const char* what);

}  // namespace waterformer
