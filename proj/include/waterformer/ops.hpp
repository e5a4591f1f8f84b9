#pragma once

#include <vector>

#include "waterformer/autograd.hpp"

// Differentiable tensor operations on (c x h x w) feature maps.
namespace waterformer::ops {

// Softmax weights captured during a forward pass for inspection.
struct AttentionMap {
  int heads = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;  // heads x rows x cols
};

struct AttentionProbe {
  std::vector<AttentionMap> spatial;
  std::vector<AttentionMap> channel;
};

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> maximum(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> one_minus(const Var<T>& x);

// x[c] * s[c], s shaped (c x 1 x 1).
template <typename T> Var<T> scale_channels(const Var<T>& x, const Var<T>& s);
// x[c] * w[c] + b[c].
template <typename T> Var<T> channel_affine(const Var<T>& x, const Var<T>& w, const Var<T>& b);
// Expands a single-channel map t to c channels: w[c] * t + b[c].
template <typename T> Var<T> broadcast_affine(const Var<T>& t, const Var<T>& w, const Var<T>& b);

// Dense convolution. Weight is (out, in, k*k); bias is (out, 1, 1) or null.
// `pad` applies reflection padding on every side before a valid convolution.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel, int stride, int pad);

// Per-channel k x k convolution with reflection "same" padding. Weight is (c, 1, k*k).
template <typename T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int kernel);

template <typename T> Var<T> pad_reflect(const Var<T>& x, int top, int bottom, int left, int right);
template <typename T> Var<T> crop(const Var<T>& x, int top, int left, int height, int width);
template <typename T> Var<T> slice_channels(const Var<T>& x, int start, int count);
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
// (c*r*r, h, w) -> (c, h*r, w*r).
template <typename T> Var<T> pixel_shuffle(const Var<T>& x, int factor);
template <typename T> Var<T> global_avg_pool(const Var<T>& x);

// Per-location statistics over the channel axis.
template <typename T> Var<T> channel_normalize(const Var<T>& x, double eps);
template <typename T> Var<T> location_mean(const Var<T>& x);
template <typename T> Var<T> location_std(const Var<T>& x, double eps);

// Multi-head self-attention inside non-overlapping windows. `qkv` stacks
// Q, K, V along channels (3c x h x w); h and w must be multiples of the window.
template <typename T>
Var<T> window_attention(const Var<T>& qkv, int heads, int window_h, int window_w, AttentionProbe* probe = nullptr);

// Transposed (channel x channel) attention per head: softmax(Q K^T / gamma) V.
// `gamma` holds one scale per head (heads x 1 x 1).
template <typename T>
Var<T> channel_attention(const Var<T>& qkv, const Var<T>& gamma, int heads, bool qk_norm,
                         AttentionProbe* probe = nullptr);

}  // namespace waterformer::ops
