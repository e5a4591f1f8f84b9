#pragma once

#include "waterformer/image.hpp"
#include "waterformer/tensor.hpp"

namespace waterformer {

// Interleaved h x w x 3 image -> planar 3 x h x w tensor.
template <typename T>
Tensor<T> to_tensor(const ImageRGB& img) {
  Tensor<T> out(3, img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<T>(img.at(y, x, c));
  return out;
}

// Planar 3 x h x w tensor -> image, clamped to [0,1].
template <typename T>
ImageRGB to_image(const Tensor<T>& t) {
  if (t.channels() != 3) throw DimensionError("to_image: expected 3 channels, got " + to_string(t.shape()));
  ImageRGB img(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<double>(t.at(c, y, x));
  img.clamp();
  return img;
}

}  // namespace waterformer
