#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "waterformer/autograd.hpp"
#include "waterformer/image.hpp"
#include "waterformer/tensor.hpp"

namespace wft {

using waterformer::ImageRGB;
using waterformer::Parameter;
using waterformer::Shape;
using waterformer::Tensor;
using waterformer::Var;

inline ImageRGB random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ImageRGB img(h, w);
  for (double& v : img.pixels()) v = u(rng);
  return img;
}

template <typename T = double>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// Compares reverse-mode gradients of <f(), probe> against central differences
// for every element of every parameter (or `max_per_param` evenly spaced ones).
// Returns the norm-wise relative error ||analytic - numeric|| / ||numeric||.
inline double grad_check(const std::vector<Parameter<double>*>& params, const std::function<Var<double>()>& f,
                         std::uint64_t seed = 1, double h = 1e-6, std::size_t max_per_param = 0) {
  for (auto* p : params) p->zero_grad();
  std::mt19937_64 rng(seed);
  Var<double> out = f();
  const Tensor<double> probe = random_tensor(out->shape(), rng);
  waterformer::backward(out, probe);
  double diff2 = 0.0;
  double ref2 = 0.0;
  waterformer::NoGradGuard guard;
  for (auto* p : params) {
    const std::size_t n = p->value.numel();
    const std::size_t step = (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t i = 0; i < n; i += step) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = dot(f()->value, probe);
      p->value[i] = keep - h;
      const double down = dot(f()->value, probe);
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff2 += (p->grad[i] - numeric) * (p->grad[i] - numeric);
      ref2 += numeric * numeric;
    }
  }
  return std::sqrt(diff2 / std::max(ref2, 1e-300));
}

}  // namespace wft
