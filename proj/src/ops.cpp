#include "waterformer/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

namespace waterformer::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
bool needs_grad(const Var<T>& v) {
  return v && v->requires_grad;
}

template <typename T>
void require_same(const Var<T>& a, const Var<T>& b, const char* what) {
  a->value.require_shape(b->shape(), what);
}

template <typename T>
void require_channel_vector(const Var<T>& s, int channels, const char* what) {
  if (!(s->shape() == Shape{channels, 1, 1})) {
    throw DimensionError(std::string(what) + ": expected per-channel vector of " + std::to_string(channels) +
                         ", got " + to_string(s->shape()));
  }
}

// Reflect-pads one plane into `dst` of size (h + 2p) x (w + 2p).
template <typename T>
void pad_plane(const T* src, int h, int w, int p, T* dst) {
  const int pw = w + 2 * p;
  for (int y = 0; y < h + 2 * p; ++y) {
    const T* row = src + static_cast<std::size_t>(reflect_index(y - p, h)) * w;
    T* out = dst + static_cast<std::size_t>(y) * pw;
    for (int x = 0; x < p; ++x) out[x] = row[reflect_index(x - p, w)];
    std::copy(row, row + w, out + p);
    for (int x = w + p; x < pw; ++x) out[x] = row[reflect_index(x - p, w)];
  }
}

// Adjoint of pad_plane: folds the padded gradient back onto the source plane.
template <typename T>
void fold_plane(const T* padded, int h, int w, int p, T* dst) {
  const int pw = w + 2 * p;
  for (int y = 0; y < h + 2 * p; ++y) {
    T* row = dst + static_cast<std::size_t>(reflect_index(y - p, h)) * w;
    const T* in = padded + static_cast<std::size_t>(y) * pw;
    for (int x = 0; x < p; ++x) row[reflect_index(x - p, w)] += in[x];
    for (int x = 0; x < w; ++x) row[x] += in[x + p];
    for (int x = w + p; x < pw; ++x) row[reflect_index(x - p, w)] += in[x];
  }
}

template <typename T>
void softmax_rows(RowMat<T>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const T peak = row.maxCoeff();
    row = (row.array() - peak).exp();
    row /= row.sum();
  }
}

// dS = P * (dP - rowsum(dP * P))
template <typename T>
RowMat<T> softmax_backward(const RowMat<T>& p, const RowMat<T>& dp) {
  RowMat<T> ds = p.cwiseProduct(dp);
  const ColVec<T> dots = ds.rowwise().sum();
  ds -= p.cwiseProduct(dots.replicate(1, p.cols()));
  return ds;
}

template <typename T>
void record_map(std::vector<AttentionMap>& into, int heads, const RowMat<T>& p, bool new_map) {
  if (new_map || into.empty()) {
    AttentionMap map;
    map.heads = heads;
    map.rows = static_cast<int>(p.rows());
    map.cols = static_cast<int>(p.cols());
    map.weights.reserve(static_cast<std::size_t>(heads) * p.rows() * p.cols());
    into.push_back(std::move(map));
  }
  auto& w = into.back().weights;
  for (Eigen::Index r = 0; r < p.rows(); ++r)
    for (Eigen::Index c = 0; c < p.cols(); ++c) w.push_back(static_cast<double>(p(r, c)));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "add");
  Tensor<T> out = a->value;
  out += b->value;
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (int i = 0; i < 2; ++i)
      if (needs_grad(n.parents[i])) n.parents[i]->grad_buffer() += n.grad;
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "sub");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (needs_grad(n.parents[0])) n.parents[0]->grad_buffer() += n.grad;
    if (needs_grad(n.parents[1])) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "mul");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    if (needs_grad(n.parents[0])) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (needs_grad(n.parents[1])) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  require_same(a, b, "maximum");
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a->value[i], b->value[i]);
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.parents[0]->value;
    const auto& bv = n.parents[1]->value;
    // Ties route to the first operand.
    if (needs_grad(n.parents[0])) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (av[i] >= bv[i]) g[i] += n.grad[i];
    }
    if (needs_grad(n.parents[1])) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (av[i] < bv[i]) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(x->value[i], T(0));
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (xv[i] > T(0)) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-x->value[i]));
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * n.value[i] * (T(1) - n.value[i]);
  });
}

template <typename T>
Var<T> one_minus(const Var<T>& x) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) - x->value[i];
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
  });
}

template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const Shape shape = x->shape();
  require_channel_vector(s, shape.c, "scale_channels");
  Tensor<T> out(shape);
  const std::size_t plane = shape.plane();
  for (int c = 0; c < shape.c; ++c) {
    const T k = s->value[c];
    const T* src = x->value.channel(c);
    T* dst = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * k;
  }
  return make_result<T>(std::move(out), {x, s}, [plane](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    const auto& sv = n.parents[1]->value;
    const int channels = xv.channels();
    if (needs_grad(n.parents[0])) {
      auto& g = n.parents[0]->grad_buffer();
      for (int c = 0; c < channels; ++c) {
        T* dst = g.channel(c);
        const T* dy = n.grad.channel(c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += dy[i] * sv[c];
      }
    }
    if (needs_grad(n.parents[1])) {
      auto& g = n.parents[1]->grad_buffer();
      for (int c = 0; c < channels; ++c) {
        const T* dy = n.grad.channel(c);
        const T* src = xv.channel(c);
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i] * src[i];
        g[c] += acc;
      }
    }
  });
}

template <typename T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const Shape shape = x->shape();
  require_channel_vector(w, shape.c, "channel_affine weight");
  require_channel_vector(b, shape.c, "channel_affine bias");
  Tensor<T> out(shape);
  const std::size_t plane = shape.plane();
  for (int c = 0; c < shape.c; ++c) {
    const T* src = x->value.channel(c);
    T* dst = out.channel(c);
    const T k = w->value[c];
    const T o = b->value[c];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * k + o;
  }
  return make_result<T>(std::move(out), {x, w, b}, [plane](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    const int channels = xv.channels();
    for (int c = 0; c < channels; ++c) {
      const T* dy = n.grad.channel(c);
      if (needs_grad(n.parents[0])) {
        T* dst = n.parents[0]->grad_buffer().channel(c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += dy[i] * wv[c];
      }
      if (needs_grad(n.parents[1])) {
        const T* src = xv.channel(c);
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i] * src[i];
        n.parents[1]->grad_buffer()[c] += acc;
      }
      if (needs_grad(n.parents[2])) {
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i];
        n.parents[2]->grad_buffer()[c] += acc;
      }
    }
  });
}

template <typename T>
Var<T> broadcast_affine(const Var<T>& t, const Var<T>& w, const Var<T>& b) {
  if (t->shape().c != 1) throw DimensionError("broadcast_affine: source must have one channel");
  const int channels = w->shape().c;
  require_channel_vector(w, channels, "broadcast_affine weight");
  require_channel_vector(b, channels, "broadcast_affine bias");
  const Shape shape{channels, t->shape().h, t->shape().w};
  Tensor<T> out(shape);
  const std::size_t plane = shape.plane();
  const T* src = t->value.data();
  for (int c = 0; c < channels; ++c) {
    T* dst = out.channel(c);
    const T k = w->value[c];
    const T o = b->value[c];
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * k + o;
  }
  return make_result<T>(std::move(out), {t, w, b}, [plane, channels](Node<T>& n) {
    const auto& tv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    for (int c = 0; c < channels; ++c) {
      const T* dy = n.grad.channel(c);
      if (needs_grad(n.parents[0])) {
        T* dst = n.parents[0]->grad_buffer().data();
        for (std::size_t i = 0; i < plane; ++i) dst[i] += dy[i] * wv[c];
      }
      if (needs_grad(n.parents[1])) {
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i] * tv[i];
        n.parents[1]->grad_buffer()[c] += acc;
      }
      if (needs_grad(n.parents[2])) {
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += dy[i];
        n.parents[2]->grad_buffer()[c] += acc;
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel, int stride, int pad) {
  const Shape in = x->shape();
  const Shape ws = weight->shape();
  const int cout = ws.c;
  if (ws.h != in.c || ws.w != kernel * kernel) {
    throw DimensionError("conv2d: weight " + to_string(ws) + " incompatible with input " + to_string(in) +
                         " and kernel " + std::to_string(kernel));
  }
  if (bias) require_channel_vector(bias, cout, "conv2d bias");
  const int hp = in.h + 2 * pad;
  const int wp = in.w + 2 * pad;
  if (hp < kernel || wp < kernel) throw DimensionError("conv2d: input smaller than kernel");
  const int hout = (hp - kernel) / stride + 1;
  const int wout = (wp - kernel) / stride + 1;
  const Eigen::Index nout = static_cast<Eigen::Index>(hout) * wout;
  const Eigen::Index patch = static_cast<Eigen::Index>(in.c) * kernel * kernel;
  const bool pointwise = kernel == 1 && stride == 1 && pad == 0;

  // Column buffer: (in * k * k) x (hout * wout).
  auto cols = std::make_shared<AlignedVector<T>>();
  if (!pointwise) {
    cols->resize(static_cast<std::size_t>(patch) * nout);
    for (int ci = 0; ci < in.c; ++ci) {
      const T* src = x->value.channel(ci);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          T* row = cols->data() + ((static_cast<std::size_t>(ci) * kernel + ky) * kernel + kx) * nout;
          for (int oy = 0; oy < hout; ++oy) {
            const int sy = reflect_index(oy * stride + ky - pad, in.h);
            const T* srow = src + static_cast<std::size_t>(sy) * in.w;
            for (int ox = 0; ox < wout; ++ox) {
              row[static_cast<std::size_t>(oy) * wout + ox] = srow[reflect_index(ox * stride + kx - pad, in.w)];
            }
          }
        }
      }
    }
  }
  const T* col_data = pointwise ? x->value.data() : cols->data();

  Tensor<T> out(cout, hout, wout);
  {
    ConstMatMap<T> w(weight->value.data(), cout, patch);
    ConstMatMap<T> c(col_data, patch, nout);
    MatMap<T> y(out.data(), cout, nout);
    y.noalias() = w * c;
    if (bias) {
      for (int co = 0; co < cout; ++co) y.row(co).array() += bias->value[co];
    }
  }

  return make_result<T>(std::move(out), {x, weight, bias},
                        [=](Node<T>& n) {
                          ConstMatMap<T> dy(n.grad.data(), cout, nout);
                          const T* cdata = pointwise ? n.parents[0]->value.data() : cols->data();
                          ConstMatMap<T> c(cdata, patch, nout);
                          if (needs_grad(n.parents[1])) {
                            MatMap<T> dw(n.parents[1]->grad_buffer().data(), cout, patch);
                            dw.noalias() += dy * c.transpose();
                          }
                          if (needs_grad(n.parents[2])) {
                            auto& db = n.parents[2]->grad_buffer();
                            for (int co = 0; co < cout; ++co) db[co] += dy.row(co).sum();
                          }
                          if (needs_grad(n.parents[0])) {
                            ConstMatMap<T> w(n.parents[1]->value.data(), cout, patch);
                            auto& dx = n.parents[0]->grad_buffer();
                            if (pointwise) {
                              MatMap<T> dxm(dx.data(), patch, nout);
                              dxm.noalias() += w.transpose() * dy;
                            } else {
                              RowMat<T> dcol = w.transpose() * dy;
                              for (int ci = 0; ci < in.c; ++ci) {
                                T* dst = dx.channel(ci);
                                for (int ky = 0; ky < kernel; ++ky) {
                                  for (int kx = 0; kx < kernel; ++kx) {
                                    const T* row = dcol.data() + ((static_cast<std::size_t>(ci) * kernel + ky) * kernel + kx) * nout;
                                    for (int oy = 0; oy < hout; ++oy) {
                                      const int sy = reflect_index(oy * stride + ky - pad, in.h);
                                      T* drow = dst + static_cast<std::size_t>(sy) * in.w;
                                      for (int ox = 0; ox < wout; ++ox) {
                                        drow[reflect_index(ox * stride + kx - pad, in.w)] +=
                                            row[static_cast<std::size_t>(oy) * wout + ox];
                                      }
                                    }
                                  }
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel) {
  const Shape shape = x->shape();
  if (kernel % 2 != 1) throw ConfigError("depthwise_conv2d: kernel must be odd");
  if (!(weight->shape() == Shape{shape.c, 1, kernel * kernel})) {
    throw DimensionError("depthwise_conv2d: weight " + to_string(weight->shape()) + " incompatible with input " +
                         to_string(shape));
  }
  if (bias) require_channel_vector(bias, shape.c, "depthwise_conv2d bias");
  const int p = kernel / 2;
  const int hp = shape.h + 2 * p;
  const int wp = shape.w + 2 * p;
  Tensor<T> out(shape);
  std::vector<T> padded(static_cast<std::size_t>(hp) * wp);
  for (int c = 0; c < shape.c; ++c) {
    pad_plane(x->value.channel(c), shape.h, shape.w, p, padded.data());
    T* dst = out.channel(c);
    std::fill(dst, dst + shape.plane(), bias ? bias->value[c] : T(0));
    const T* wk = weight->value.channel(c);
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T k = wk[ky * kernel + kx];
        for (int y = 0; y < shape.h; ++y) {
          const T* src = padded.data() + static_cast<std::size_t>(y + ky) * wp + kx;
          T* drow = dst + static_cast<std::size_t>(y) * shape.w;
          for (int xx = 0; xx < shape.w; ++xx) drow[xx] += k * src[xx];
        }
      }
    }
  }
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    std::vector<T> pad_buf(static_cast<std::size_t>(hp) * wp);
    std::vector<T> dpad(static_cast<std::size_t>(hp) * wp);
    for (int c = 0; c < shape.c; ++c) {
      const T* dy = n.grad.channel(c);
      if (needs_grad(n.parents[2])) {
        T acc = 0;
        for (std::size_t i = 0; i < shape.plane(); ++i) acc += dy[i];
        n.parents[2]->grad_buffer()[c] += acc;
      }
      const T* wk = wv.channel(c);
      if (needs_grad(n.parents[1])) {
        pad_plane(xv.channel(c), shape.h, shape.w, p, pad_buf.data());
        T* dw = n.parents[1]->grad_buffer().channel(c);
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            T acc = 0;
            for (int y = 0; y < shape.h; ++y) {
              const T* src = pad_buf.data() + static_cast<std::size_t>(y + ky) * wp + kx;
              const T* drow = dy + static_cast<std::size_t>(y) * shape.w;
              for (int xx = 0; xx < shape.w; ++xx) acc += drow[xx] * src[xx];
            }
            dw[ky * kernel + kx] += acc;
          }
        }
      }
      if (needs_grad(n.parents[0])) {
        std::fill(dpad.begin(), dpad.end(), T(0));
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const T k = wk[ky * kernel + kx];
            for (int y = 0; y < shape.h; ++y) {
              T* dst = dpad.data() + static_cast<std::size_t>(y + ky) * wp + kx;
              const T* drow = dy + static_cast<std::size_t>(y) * shape.w;
              for (int xx = 0; xx < shape.w; ++xx) dst[xx] += k * drow[xx];
            }
          }
        }
        fold_plane(dpad.data(), shape.h, shape.w, p, n.parents[0]->grad_buffer().channel(c));
      }
    }
  });
}

template <typename T>
Var<T> pad_reflect(const Var<T>& x, int top, int bottom, int left, int right) {
  const Shape in = x->shape();
  if (top == 0 && bottom == 0 && left == 0 && right == 0) return x;
  const Shape shape{in.c, in.h + top + bottom, in.w + left + right};
  Tensor<T> out(shape);
  for (int c = 0; c < in.c; ++c) {
    const T* src = x->value.channel(c);
    T* dst = out.channel(c);
    for (int y = 0; y < shape.h; ++y) {
      const T* row = src + static_cast<std::size_t>(reflect_index(y - top, in.h)) * in.w;
      for (int xx = 0; xx < shape.w; ++xx) dst[static_cast<std::size_t>(y) * shape.w + xx] = row[reflect_index(xx - left, in.w)];
    }
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (int c = 0; c < in.c; ++c) {
      T* dst = g.channel(c);
      const T* dy = n.grad.channel(c);
      for (int y = 0; y < shape.h; ++y) {
        T* row = dst + static_cast<std::size_t>(reflect_index(y - top, in.h)) * in.w;
        for (int xx = 0; xx < shape.w; ++xx) row[reflect_index(xx - left, in.w)] += dy[static_cast<std::size_t>(y) * shape.w + xx];
      }
    }
  });
}

template <typename T>
Var<T> crop(const Var<T>& x, int top, int left, int height, int width) {
  const Shape in = x->shape();
  if (top == 0 && left == 0 && height == in.h && width == in.w) return x;
  if (top < 0 || left < 0 || top + height > in.h || left + width > in.w || height < 1 || width < 1) {
    throw DimensionError("crop: window outside " + to_string(in));
  }
  Tensor<T> out(in.c, height, width);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(x->value.channel(c) + static_cast<std::size_t>(y + top) * in.w + left, width,
                  out.channel(c) + static_cast<std::size_t>(y) * width);
  return make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (int c = 0; c < in.c; ++c)
      for (int y = 0; y < height; ++y) {
        T* dst = g.channel(c) + static_cast<std::size_t>(y + top) * in.w + left;
        const T* src = n.grad.channel(c) + static_cast<std::size_t>(y) * width;
        for (int xx = 0; xx < width; ++xx) dst[xx] += src[xx];
      }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int start, int count) {
  const Shape in = x->shape();
  if (start < 0 || count < 1 || start + count > in.c) throw DimensionError("slice_channels: range outside " + to_string(in));
  Tensor<T> out(count, in.h, in.w);
  std::copy_n(x->value.channel(start), out.numel(), out.data());
  return make_result<T>(std::move(out), {x}, [start](Node<T>& n) {
    T* dst = n.parents[0]->grad_buffer().channel(start);
    for (std::size_t i = 0; i < n.grad.numel(); ++i) dst[i] += n.grad[i];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a->shape();
  const Shape sb = b->shape();
  if (sa.h != sb.h || sa.w != sb.w) throw DimensionError("concat_channels: spatial mismatch");
  Tensor<T> out(sa.c + sb.c, sa.h, sa.w);
  std::copy_n(a->value.data(), a->value.numel(), out.data());
  std::copy_n(b->value.data(), b->value.numel(), out.channel(sa.c));
  return make_result<T>(std::move(out), {a, b}, [sa](Node<T>& n) {
    if (needs_grad(n.parents[0])) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (needs_grad(n.parents[1])) {
      auto& g = n.parents[1]->grad_buffer();
      const T* src = n.grad.channel(sa.c);
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += src[i];
    }
  });
}

template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int factor) {
  const Shape in = x->shape();
  const int rr = factor * factor;
  if (in.c % rr != 0) {
    throw DimensionError("pixel_shuffle: " + std::to_string(in.c) + " channels not divisible by " + std::to_string(rr));
  }
  const Shape shape{in.c / rr, in.h * factor, in.w * factor};
  Tensor<T> out(shape);
  for (int c = 0; c < shape.c; ++c)
    for (int i = 0; i < factor; ++i)
      for (int j = 0; j < factor; ++j) {
        const T* src = x->value.channel(c * rr + i * factor + j);
        for (int y = 0; y < in.h; ++y)
          for (int xx = 0; xx < in.w; ++xx) out.at(c, y * factor + i, xx * factor + j) = src[static_cast<std::size_t>(y) * in.w + xx];
      }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (int c = 0; c < shape.c; ++c)
      for (int i = 0; i < factor; ++i)
        for (int j = 0; j < factor; ++j) {
          T* dst = g.channel(c * rr + i * factor + j);
          for (int y = 0; y < in.h; ++y)
            for (int xx = 0; xx < in.w; ++xx)
              dst[static_cast<std::size_t>(y) * in.w + xx] += n.grad.at(c, y * factor + i, xx * factor + j);
        }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape in = x->shape();
  Tensor<T> out(in.c, 1, 1);
  const std::size_t plane = in.plane();
  for (int c = 0; c < in.c; ++c) {
    const T* src = x->value.channel(c);
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[c] = acc / static_cast<T>(plane);
  }
  return make_result<T>(std::move(out), {x}, [plane](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (int c = 0; c < g.channels(); ++c) {
      const T v = n.grad[c] / static_cast<T>(plane);
      T* dst = g.channel(c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
    }
  });
}

namespace {

// Per-location mean and sqrt(var + eps) over channels.
template <typename T>
void location_moments(const Tensor<T>& x, double eps, std::vector<T>& mean, std::vector<T>& stdev) {
  const int channels = x.channels();
  const std::size_t plane = x.shape().plane();
  mean.assign(plane, T(0));
  stdev.assign(plane, T(0));
  for (int c = 0; c < channels; ++c) {
    const T* src = x.channel(c);
    for (std::size_t i = 0; i < plane; ++i) mean[i] += src[i];
  }
  for (auto& m : mean) m /= static_cast<T>(channels);
  for (int c = 0; c < channels; ++c) {
    const T* src = x.channel(c);
    for (std::size_t i = 0; i < plane; ++i) {
      const T d = src[i] - mean[i];
      stdev[i] += d * d;
    }
  }
  for (auto& s : stdev) s = std::sqrt(s / static_cast<T>(channels) + static_cast<T>(eps));
}

}  // namespace

template <typename T>
Var<T> channel_normalize(const Var<T>& x, double eps) {
  const Shape shape = x->shape();
  std::vector<T> mean;
  auto stdev = std::make_shared<std::vector<T>>();
  location_moments(x->value, eps, mean, *stdev);
  Tensor<T> out(shape);
  const std::size_t plane = shape.plane();
  for (int c = 0; c < shape.c; ++c) {
    const T* src = x->value.channel(c);
    T* dst = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean[i]) / (*stdev)[i];
  }
  return make_result<T>(std::move(out), {x}, [stdev, plane](Node<T>& n) {
    const int channels = n.value.channels();
    std::vector<T> mean_dy(plane, T(0));
    std::vector<T> mean_dyy(plane, T(0));
    for (int c = 0; c < channels; ++c) {
      const T* dy = n.grad.channel(c);
      const T* y = n.value.channel(c);
      for (std::size_t i = 0; i < plane; ++i) {
        mean_dy[i] += dy[i];
        mean_dyy[i] += dy[i] * y[i];
      }
    }
    const T inv_c = T(1) / static_cast<T>(channels);
    auto& g = n.parents[0]->grad_buffer();
    for (int c = 0; c < channels; ++c) {
      const T* dy = n.grad.channel(c);
      const T* y = n.value.channel(c);
      T* dst = g.channel(c);
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] += (dy[i] - mean_dy[i] * inv_c - y[i] * mean_dyy[i] * inv_c) / (*stdev)[i];
      }
    }
  });
}

template <typename T>
Var<T> location_mean(const Var<T>& x) {
  const Shape shape = x->shape();
  std::vector<T> mean;
  std::vector<T> stdev;
  location_moments(x->value, 0.0, mean, stdev);
  Tensor<T> out(1, shape.h, shape.w);
  std::copy(mean.begin(), mean.end(), out.data());
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto& g = n.parents[0]->grad_buffer();
    const int channels = g.channels();
    const std::size_t plane = g.shape().plane();
    const T inv_c = T(1) / static_cast<T>(channels);
    for (int c = 0; c < channels; ++c) {
      T* dst = g.channel(c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] += n.grad[i] * inv_c;
    }
  });
}

template <typename T>
Var<T> location_std(const Var<T>& x, double eps) {
  const Shape shape = x->shape();
  auto mean = std::make_shared<std::vector<T>>();
  std::vector<T> stdev;
  location_moments(x->value, eps, *mean, stdev);
  Tensor<T> out(1, shape.h, shape.w);
  std::copy(stdev.begin(), stdev.end(), out.data());
  return make_result<T>(std::move(out), {x}, [mean](Node<T>& n) {
    const auto& xv = n.parents[0]->value;
    auto& g = n.parents[0]->grad_buffer();
    const int channels = g.channels();
    const std::size_t plane = g.shape().plane();
    const T inv_c = T(1) / static_cast<T>(channels);
    for (int c = 0; c < channels; ++c) {
      const T* src = xv.channel(c);
      T* dst = g.channel(c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] += n.grad[i] * (src[i] - (*mean)[i]) * inv_c / n.value[i];
    }
  });
}

template <typename T>
Var<T> window_attention(const Var<T>& qkv, int heads, int window_h, int window_w, AttentionProbe* probe) {
  const Shape in = qkv->shape();
  if (in.c % 3 != 0) throw DimensionError("window_attention: qkv channels must be a multiple of 3");
  const int channels = in.c / 3;
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("window_attention: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (in.h % window_h != 0 || in.w % window_w != 0) {
    throw DimensionError("window_attention: " + to_string(in) + " not a multiple of the window");
  }
  const int dim = channels / heads;
  const int tokens = window_h * window_w;
  const int wins_y = in.h / window_h;
  const int wins_x = in.w / window_w;
  const T scale = T(1) / std::sqrt(static_cast<T>(dim));
  const std::size_t block = static_cast<std::size_t>(tokens) * tokens;
  auto probs = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(wins_y) * wins_x * heads * block);

  // Gathers one head of one window into (tokens x dim).
  auto gather = [=](const Tensor<T>& src, int channel0, int wy, int wx, RowMat<T>& m) {
    for (int j = 0; j < dim; ++j) {
      const T* plane = src.channel(channel0 + j);
      for (int ty = 0; ty < window_h; ++ty) {
        const T* row = plane + static_cast<std::size_t>(wy * window_h + ty) * in.w + wx * window_w;
        for (int tx = 0; tx < window_w; ++tx) m(ty * window_w + tx, j) = row[tx];
      }
    }
  };
  auto scatter_add = [=](Tensor<T>& dst, int channel0, int wy, int wx, const RowMat<T>& m) {
    for (int j = 0; j < dim; ++j) {
      T* plane = dst.channel(channel0 + j);
      for (int ty = 0; ty < window_h; ++ty) {
        T* row = plane + static_cast<std::size_t>(wy * window_h + ty) * dst.width() + wx * window_w;
        for (int tx = 0; tx < window_w; ++tx) row[tx] += m(ty * window_w + tx, j);
      }
    }
  };

  Tensor<T> out(channels, in.h, in.w);
  RowMat<T> q(tokens, dim), k(tokens, dim), v(tokens, dim), s(tokens, tokens), o(tokens, dim);
  std::size_t slot = 0;
  for (int wy = 0; wy < wins_y; ++wy) {
    for (int wx = 0; wx < wins_x; ++wx) {
      for (int h = 0; h < heads; ++h, ++slot) {
        gather(qkv->value, h * dim, wy, wx, q);
        gather(qkv->value, channels + h * dim, wy, wx, k);
        gather(qkv->value, 2 * channels + h * dim, wy, wx, v);
        s.noalias() = (q * k.transpose()) * scale;
        softmax_rows(s);
        std::copy_n(s.data(), block, probs->data() + slot * block);
        o.noalias() = s * v;
        scatter_add(out, h * dim, wy, wx, o);
        if (probe) record_map(probe->spatial, heads, s, h == 0);
      }
    }
  }

  return make_result<T>(std::move(out), {qkv}, [=](Node<T>& n) {
    const auto& src = n.parents[0]->value;
    auto& g = n.parents[0]->grad_buffer();
    RowMat<T> q(tokens, dim), k(tokens, dim), v(tokens, dim), dout(tokens, dim), p(tokens, tokens);
    RowMat<T> dq(tokens, dim), dk(tokens, dim), dv(tokens, dim);
    std::size_t slot = 0;
    for (int wy = 0; wy < wins_y; ++wy) {
      for (int wx = 0; wx < wins_x; ++wx) {
        for (int h = 0; h < heads; ++h, ++slot) {
          gather(src, h * dim, wy, wx, q);
          gather(src, channels + h * dim, wy, wx, k);
          gather(src, 2 * channels + h * dim, wy, wx, v);
          gather(n.grad, h * dim, wy, wx, dout);
          std::copy_n(probs->data() + slot * block, block, p.data());
          dv.noalias() = p.transpose() * dout;
          RowMat<T> dp = dout * v.transpose();
          RowMat<T> ds = softmax_backward<T>(p, dp);
          ds *= scale;
          dq.noalias() = ds * k;
          dk.noalias() = ds.transpose() * q;
          scatter_add(g, h * dim, wy, wx, dq);
          scatter_add(g, channels + h * dim, wy, wx, dk);
          scatter_add(g, 2 * channels + h * dim, wy, wx, dv);
        }
      }
    }
  });
}

template <typename T>
Var<T> channel_attention(const Var<T>& qkv, const Var<T>& gamma, int heads, bool qk_norm, AttentionProbe* probe) {
  const Shape in = qkv->shape();
  if (in.c % 3 != 0) throw DimensionError("channel_attention: qkv channels must be a multiple of 3");
  const int channels = in.c / 3;
  if (heads < 1 || channels % heads != 0) {
    throw ConfigError("channel_attention: " + std::to_string(channels) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  require_channel_vector(gamma, heads, "channel_attention gamma");
  const int dim = channels / heads;
  const Eigen::Index n = static_cast<Eigen::Index>(in.h) * in.w;
  constexpr T kNormFloor = T(1e-12);

  struct Saved {
    std::vector<RowMat<T>> p;
    std::vector<RowMat<T>> qn;
    std::vector<RowMat<T>> kn;
    std::vector<ColVec<T>> q_norm;
    std::vector<ColVec<T>> k_norm;
  };
  auto saved = std::make_shared<Saved>();

  auto normalize = [&](const ConstMatMap<T>& m, RowMat<T>& unit, ColVec<T>& norms) {
    norms.resize(m.rows());
    unit = m;
    if (!qk_norm) {
      norms.setOnes();
      return;
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      norms[r] = std::max(m.row(r).norm(), kNormFloor);
      unit.row(r) /= norms[r];
    }
  };

  Tensor<T> out(channels, in.h, in.w);
  for (int h = 0; h < heads; ++h) {
    ConstMatMap<T> q(qkv->value.channel(h * dim), dim, n);
    ConstMatMap<T> k(qkv->value.channel(channels + h * dim), dim, n);
    ConstMatMap<T> v(qkv->value.channel(2 * channels + h * dim), dim, n);
    RowMat<T> qn, kn;
    ColVec<T> nq, nk;
    normalize(q, qn, nq);
    normalize(k, kn, nk);
    RowMat<T> s = (qn * kn.transpose()) / gamma->value[h];
    softmax_rows(s);
    MatMap<T> o(out.channel(h * dim), dim, n);
    o.noalias() = s * v;
    if (probe) record_map(probe->channel, heads, s, h == 0);
    saved->p.push_back(std::move(s));
    saved->qn.push_back(std::move(qn));
    saved->kn.push_back(std::move(kn));
    saved->q_norm.push_back(std::move(nq));
    saved->k_norm.push_back(std::move(nk));
  }

  return make_result<T>(std::move(out), {qkv, gamma}, [=](Node<T>& node) {
    const auto& src = node.parents[0]->value;
    const bool want_x = needs_grad(node.parents[0]);
    const bool want_gamma = needs_grad(node.parents[1]);
    for (int h = 0; h < heads; ++h) {
      const T g = node.parents[1]->value[h];
      const RowMat<T>& p = saved->p[h];
      ConstMatMap<T> v(src.channel(2 * channels + h * dim), dim, n);
      ConstMatMap<T> dout(node.grad.channel(h * dim), dim, n);
      RowMat<T> dp = dout * v.transpose();
      RowMat<T> ds = softmax_backward<T>(p, dp);
      if (want_gamma) {
        // s = raw / g  =>  d/dg = -sum(ds * raw) / g^2 = -sum(ds * logits) / g
        const RowMat<T> logits = (saved->qn[h] * saved->kn[h].transpose()) / g;
        node.parents[1]->grad_buffer()[h] += -(ds.cwiseProduct(logits)).sum() / g;
      }
      if (!want_x) continue;
      auto& grad = node.parents[0]->grad_buffer();
      MatMap<T> dv(grad.channel(2 * channels + h * dim), dim, n);
      dv.noalias() += p.transpose() * dout;
      RowMat<T> dqn = (ds * saved->kn[h]) / g;
      RowMat<T> dkn = (ds.transpose() * saved->qn[h]) / g;
      MatMap<T> dq(grad.channel(h * dim), dim, n);
      MatMap<T> dk(grad.channel(channels + h * dim), dim, n);
      if (!qk_norm) {
        dq += dqn;
        dk += dkn;
        continue;
      }
      for (int r = 0; r < dim; ++r) {
        const auto& qr = saved->qn[h].row(r);
        const auto& kr = saved->kn[h].row(r);
        const T qdot = qr.dot(dqn.row(r));
        const T kdot = kr.dot(dkn.row(r));
        dq.row(r) += (dqn.row(r) - qr * qdot) / saved->q_norm[h][r];
        dk.row(r) += (dkn.row(r) - kr * kdot) / saved->k_norm[h][r];
      }
    }
  });
}

#define WATERFORMER_INSTANTIATE_OPS(T)                                                                \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> maximum<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> relu<T>(const Var<T>&);                                                            \
  template Var<T> sigmoid<T>(const Var<T>&);                                                         \
  template Var<T> one_minus<T>(const Var<T>&);                                                       \
  template Var<T> scale_channels<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> channel_affine<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> broadcast_affine<T>(const Var<T>&, const Var<T>&, const Var<T>&);                  \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int);             \
  template Var<T> depthwise_conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int);             \
  template Var<T> pad_reflect<T>(const Var<T>&, int, int, int, int);                                 \
  template Var<T> crop<T>(const Var<T>&, int, int, int, int);                                        \
  template Var<T> slice_channels<T>(const Var<T>&, int, int);                                        \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> pixel_shuffle<T>(const Var<T>&, int);                                              \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                                 \
  template Var<T> channel_normalize<T>(const Var<T>&, double);                                       \
  template Var<T> location_mean<T>(const Var<T>&);                                                   \
  template Var<T> location_std<T>(const Var<T>&, double);                                            \
  template Var<T> window_attention<T>(const Var<T>&, int, int, int, AttentionProbe*);                \
  template Var<T> channel_attention<T>(const Var<T>&, const Var<T>&, int, bool, AttentionProbe*);

WATERFORMER_INSTANTIATE_OPS(float)
WATERFORMER_INSTANTIATE_OPS(double)

}  // namespace waterformer::ops
