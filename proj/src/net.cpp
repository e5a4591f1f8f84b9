#include "waterformer/net.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "waterformer/errors.hpp"
#include "waterformer/keyvalue.hpp"
#include "waterformer/physics.hpp"
#include "waterformer/tensor_image.hpp"

namespace waterformer {
namespace {

constexpr std::array<std::pair<FusionKind, std::string_view>, 4> kFusionNames{
    {{FusionKind::Cfb, "cfb"}, {FusionKind::Sk, "sk"}, {FusionKind::Concat, "concat"}, {FusionKind::Add, "add"}}};
constexpr std::array<std::pair<ReconKind, std::string_view>, 3> kReconNames{
    {{ReconKind::UwSoft, "uw_soft"}, {ReconKind::Soft, "soft"}, {ReconKind::GlobalResidual, "global_residual"}}};
constexpr std::array<std::pair<MlpActivation, std::string_view>, 2> kActivationNames{
    {{MlpActivation::FRelu, "frelu"}, {MlpActivation::Relu, "relu"}}};

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
  for (const auto& [k, n] : table)
    if (k == e) return n;
  return "?";
}

template <typename E, std::size_t N>
E parse_named(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view name, const char* what) {
  for (const auto& [k, n] : table)
    if (n == name) return k;
  std::string options;
  for (const auto& [k, n] : table) options += (options.empty() ? "" : ", ") + std::string(n);
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(name) + "' (expected one of " + options + ")");
}

template <typename T>
bool needs_grad(const Var<T>& v) {
  return v && v->requires_grad;
}

constexpr int kSkHiddenDivisor = 8;
constexpr int kSkHiddenMin = 4;

int sk_hidden(int channels) { return std::max(channels / kSkHiddenDivisor, kSkHiddenMin); }

// Effective window along one axis and the padded extent it tiles.
std::pair<int, int> window_tiling(int extent, int window) {
  const int w = std::min(window, extent);
  return {w, (extent + w - 1) / w * w};
}

}  // namespace

std::string_view fusion_kind_name(FusionKind kind) { return name_of(kFusionNames, kind); }
std::string_view recon_kind_name(ReconKind kind) { return name_of(kReconNames, kind); }
std::string_view mlp_activation_name(MlpActivation act) { return name_of(kActivationNames, act); }
FusionKind parse_fusion_kind(std::string_view name) { return parse_named(kFusionNames, name, "fusion kind"); }
ReconKind parse_recon_kind(std::string_view name) { return parse_named(kReconNames, name, "reconstruction kind"); }
MlpActivation parse_mlp_activation(std::string_view name) {
  return parse_named(kActivationNames, name, "MLP activation");
}

std::string slot_name(int slot) {
  static constexpr std::array<const char*, kStageSlots> kNames{"enc1", "enc2", "bottleneck", "dec2", "dec1"};
  return kNames.at(static_cast<std::size_t>(slot));
}

int mlp_hidden(int channels, double ratio) { return static_cast<int>(std::lround(channels * ratio)); }

ConvFootprint conv_footprint(int in, int out, int kernel, bool bias, int out_h, int out_w) {
  ConvFootprint f;
  const std::size_t weights = static_cast<std::size_t>(in) * out * kernel * kernel;
  f.params = weights + (bias ? static_cast<std::size_t>(out) : 0);
  f.macs = static_cast<std::uint64_t>(weights) * static_cast<std::uint64_t>(out_h) * out_w;
  return f;
}

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::reference() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.stage_widths = {4, 8, 16};
  c.stage_depths = {0, 0, 0};
  c.decoder_depths = {0, 0};
  c.heads = {1, 1, 1};
  c.use_crb = false;
  c.use_cfb = false;
  return c;
}

void ModelConfig::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (stage_widths[i] < 1) throw ConfigError("stage widths must be positive");
    if (stage_depths[i] < 0) throw ConfigError("stage depths must be non-negative");
    if (heads[i] < 1) throw ConfigError("head counts must be positive");
    if (stage_widths[i] % heads[i] != 0) {
      throw ConfigError("stage width " + std::to_string(stage_widths[i]) + " not divisible by " +
                        std::to_string(heads[i]) + " heads");
    }
  }
  if (!(stage_widths[0] < stage_widths[1] && stage_widths[1] < stage_widths[2])) {
    throw ConfigError("stage widths must strictly increase down the encoder");
  }
  if (decoder_depths[0] < 0 || decoder_depths[1] < 0) throw ConfigError("decoder depths must be non-negative");
  if (window_size < 1) throw ConfigError("window size must be positive");
  if (!(mlp_ratio >= 1.0)) throw ConfigError("mlp ratio must be at least 1");
  if (fusion_kind == FusionKind::Cfb && !use_cfb) throw ConfigError("fusion kind cfb requires use_cfb");
}

int ModelConfig::head_channels() const {
  switch (recon_kind) {
    case ReconKind::UwSoft:
      return 6;
    case ReconKind::Soft:
      return 4;
    case ReconKind::GlobalResidual:
      return 3;
  }
  return 6;
}

int ModelConfig::width_at_slot(int slot) const {
  static constexpr std::array<int, kStageSlots> kLevel{0, 1, 2, 1, 0};
  return stage_widths[static_cast<std::size_t>(kLevel.at(static_cast<std::size_t>(slot)))];
}

int ModelConfig::heads_at_slot(int slot) const {
  static constexpr std::array<int, kStageSlots> kLevel{0, 1, 2, 1, 0};
  return heads[static_cast<std::size_t>(kLevel.at(static_cast<std::size_t>(slot)))];
}

std::string ModelConfig::serialize() const {
  std::ostringstream out;
  auto ints = [&](const char* key, const auto& arr) {
    out << key << " =";
    for (int v : arr) out << ' ' << v;
    out << '\n';
  };
  ints("stage_widths", stage_widths);
  ints("stage_depths", stage_depths);
  ints("decoder_depths", decoder_depths);
  ints("heads", heads);
  out << "window_size = " << window_size << '\n';
  out << "mlp_ratio = " << kv::format_double(mlp_ratio) << '\n';
  out << "use_crb = " << (use_crb ? "true" : "false") << '\n';
  out << "use_cfb = " << (use_cfb ? "true" : "false") << '\n';
  out << "fusion_kind = " << fusion_kind_name(fusion_kind) << '\n';
  out << "recon_kind = " << recon_kind_name(recon_kind) << '\n';
  out << "mlp_activation = " << mlp_activation_name(mlp_activation) << '\n';
  out << "crb_slots =";
  for (bool b : crb_slots) out << ' ' << (b ? 1 : 0);
  out << '\n';
  out << "qk_norm = " << (qk_norm ? "true" : "false") << '\n';
  return out.str();
}

bool ModelConfig::set(std::string_view key, std::string_view value) {
  if (key == "stage_widths") {
    stage_widths = kv::to_int_array<3>(key, value);
  } else if (key == "stage_depths") {
    stage_depths = kv::to_int_array<3>(key, value);
  } else if (key == "decoder_depths") {
    decoder_depths = kv::to_int_array<2>(key, value);
  } else if (key == "heads") {
    heads = kv::to_int_array<3>(key, value);
  } else if (key == "window_size") {
    window_size = kv::to_int(key, value);
  } else if (key == "mlp_ratio") {
    mlp_ratio = kv::to_double(key, value);
  } else if (key == "use_crb") {
    use_crb = kv::to_bool(key, value);
  } else if (key == "use_cfb") {
    use_cfb = kv::to_bool(key, value);
  } else if (key == "fusion_kind") {
    fusion_kind = parse_fusion_kind(kv::trim(value));
  } else if (key == "recon_kind") {
    recon_kind = parse_recon_kind(kv::trim(value));
  } else if (key == "mlp_activation") {
    mlp_activation = parse_mlp_activation(kv::trim(value));
  } else if (key == "crb_slots") {
    const auto flags = kv::to_int_array<kStageSlots>(key, value);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i] != 0 && flags[i] != 1) throw ConfigError("crb_slots entries must be 0 or 1");
      crb_slots[i] = flags[i] == 1;
    }
  } else if (key == "qk_norm") {
    qk_norm = kv::to_bool(key, value);
  } else {
    return false;
  }
  return true;
}

ModelConfig ModelConfig::parse(std::string_view text) {
  ModelConfig c;
  for (const auto& e : kv::parse(text, "model config")) {
    if (!c.set(e.key, e.value)) throw ConfigError("model config: unknown key '" + e.key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Construction

template <typename T>
Parameter<T>& WaterFormer<T>::add_param(const std::string& name, Shape shape) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  index_.emplace(name, params_.size());
  params_.emplace_back(name, Tensor<T>(shape));
  return params_.back();
}

template <typename T>
void WaterFormer<T>::init_conv(const std::string& name, int out, int in, int kernel, bool bias) {
  auto& w = add_param(name + ".weight", Shape{out, in, kernel * kernel});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in) * kernel * kernel);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : w.value.values()) v = static_cast<T>(dist(init_rng_));
  if (bias) add_param(name + ".bias", Shape{out, 1, 1});
}

template <typename T>
void WaterFormer<T>::init_rln(const std::string& prefix, int channels) {
  add_param(prefix + ".weight", Shape{channels, 1, 1}).value.fill(T(1));
  add_param(prefix + ".bias", Shape{channels, 1, 1});
  std::normal_distribution<double> dist(0.0, 0.02);
  for (const char* meta : {".meta1", ".meta2"}) {
    auto& w = add_param(prefix + meta + ".weight", Shape{channels, 1, 1});
    for (auto& v : w.value.values()) v = static_cast<T>(std::clamp(dist(init_rng_), -0.04, 0.04));
    auto& b = add_param(prefix + meta + ".bias", Shape{channels, 1, 1});
    if (std::string_view(meta) == ".meta1") b.value.fill(T(1));
  }
}

template <typename T>
void WaterFormer<T>::init_mlp(const std::string& prefix, int channels) {
  const int hidden = mlp_hidden(channels, config_.mlp_ratio);
  init_conv(prefix + ".fc1", hidden, channels, 1, true);
  if (config_.mlp_activation == MlpActivation::FRelu) init_conv(prefix + ".funnel", hidden, 1, 3, true);
  init_conv(prefix + ".fc2", channels, hidden, 1, true);
}

template <typename T>
void WaterFormer<T>::init_attention_block(const std::string& prefix, int channels) {
  init_rln(prefix + ".norm", channels);
  init_conv(prefix + ".qkv", 3 * channels, channels, 1, true);
  init_conv(prefix + ".proj", channels, channels, 1, true);
  init_mlp(prefix + ".mlp", channels);
}

template <typename T>
void WaterFormer<T>::init_crb(const std::string& prefix, int channels, int heads) {
  init_rln(prefix + ".norm", channels);
  init_conv(prefix + ".qkv", 3 * channels, channels, 1, true);
  init_conv(prefix + ".qkv_dw", 3 * channels, 1, 3, true);
  init_conv(prefix + ".v_conv", channels, 1, 3, true);
  auto& gamma = add_param(prefix + ".gamma", Shape{heads, 1, 1});
  gamma.value.fill(static_cast<T>(std::sqrt(static_cast<double>(channels / heads))));
  init_conv(prefix + ".proj", channels, channels, 1, true);
  init_mlp(prefix + ".mlp", channels);
}

template <typename T>
void WaterFormer<T>::init_fusion(const std::string& prefix, int channels) {
  switch (config_.fusion()) {
    case FusionKind::Cfb:
      init_conv(prefix + ".pconv", channels, channels, 1, true);
      init_conv(prefix + ".dconv", channels, 1, 3, true);
      break;
    case FusionKind::Sk:
      init_conv(prefix + ".mlp1", sk_hidden(channels), channels, 1, false);
      init_conv(prefix + ".mlp2", 2 * channels, sk_hidden(channels), 1, false);
      break;
    case FusionKind::Concat:
      init_conv(prefix + ".proj", channels, 2 * channels, 1, true);
      break;
    case FusionKind::Add:
      break;
  }
}

template <typename T>
WaterFormer<T>::WaterFormer(ModelConfig config, std::uint64_t seed) : config_(config), init_rng_(seed) {
  config_.validate();
  const auto& w = config_.stage_widths;
  init_conv("embed", w[0], 3, 3, true);
  const std::array<int, kStageSlots> depths{config_.stage_depths[0], config_.stage_depths[1], config_.stage_depths[2],
                                            config_.decoder_depths[0], config_.decoder_depths[1]};
  auto init_stage = [&](int slot) {
    const int c = config_.width_at_slot(slot);
    for (int i = 0; i < depths[static_cast<std::size_t>(slot)]; ++i) {
      init_attention_block(slot_name(slot) + ".block" + std::to_string(i), c);
    }
    if (config_.crb_at_slot(slot)) init_crb(slot_name(slot) + ".crb", c, config_.heads_at_slot(slot));
  };
  init_stage(0);
  init_conv("down1", w[1], w[0], 2, true);
  init_stage(1);
  init_conv("down2", w[2], w[1], 2, true);
  init_stage(2);
  init_conv("up2", 4 * w[1], w[2], 1, true);
  init_fusion("fuse2", w[1]);
  init_stage(3);
  init_conv("up1", 4 * w[0], w[1], 1, true);
  init_fusion("fuse1", w[0]);
  init_stage(4);
  // The head starts at zero so the network begins as the identity map.
  add_param("head.weight", Shape{config_.head_channels(), w[0], 9});
  add_param("head.bias", Shape{config_.head_channels(), 1, 1});
}

template <typename T>
Parameter<T>& WaterFormer<T>::parameter(std::string_view name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named " + std::string(name));
  return params_[it->second];
}

template <typename T>
const Parameter<T>& WaterFormer<T>::parameter(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named " + std::string(name));
  return params_[it->second];
}

template <typename T>
void WaterFormer<T>::zero_grad() {
  for (auto& prm : params_) prm.zero_grad();
}

template <typename T>
std::size_t WaterFormer<T>::count_params() const {
  std::size_t n = 0;
  for (const auto& prm : params_) n += prm.value.numel();
  return n;
}

template <typename T>
std::uint64_t WaterFormer<T>::count_macs(int height, int width) const {
  const auto& cfg = config_;
  const int h0 = (height + 3) / 4 * 4;
  const int w0 = (width + 3) / 4 * 4;
  const std::array<int, kStageSlots> depths{cfg.stage_depths[0], cfg.stage_depths[1], cfg.stage_depths[2],
                                            cfg.decoder_depths[0], cfg.decoder_depths[1]};
  const std::array<int, kStageSlots> scale{1, 2, 4, 2, 1};
  std::uint64_t macs = 0;
  auto conv = [&](int in, int out, int k, int h, int w) { macs += conv_footprint(in, out, k, false, h, w).macs; };
  auto rln = [&](int c, int h, int w) { macs += 2ULL * c * h * w; };
  auto mlp = [&](int c, int h, int w) {
    const int hidden = mlp_hidden(c, cfg.mlp_ratio);
    conv(c, hidden, 1, h, w);
    if (cfg.mlp_activation == MlpActivation::FRelu) conv(1, hidden, 3, h, w);
    conv(hidden, c, 1, h, w);
  };

  conv(3, cfg.stage_widths[0], 3, h0, w0);
  for (int slot = 0; slot < kStageSlots; ++slot) {
    const int c = cfg.width_at_slot(slot);
    const int h = h0 / scale[static_cast<std::size_t>(slot)];
    const int w = w0 / scale[static_cast<std::size_t>(slot)];
    for (int i = 0; i < depths[static_cast<std::size_t>(slot)]; ++i) {
      rln(c, h, w);
      conv(c, 3 * c, 1, h, w);
      const auto [wh, ph] = window_tiling(h, cfg.window_size);
      const auto [ww, pw] = window_tiling(w, cfg.window_size);
      macs += 2ULL * static_cast<std::uint64_t>(wh) * ww * c * ph * pw;
      conv(c, c, 1, h, w);
      mlp(c, h, w);
    }
    if (cfg.crb_at_slot(slot)) {
      const int dim = c / cfg.heads_at_slot(slot);
      rln(c, h, w);
      conv(c, 3 * c, 1, h, w);
      conv(1, 3 * c, 3, h, w);
      conv(1, c, 3, h, w);
      macs += 2ULL * c * dim * h * w;
      conv(c, c, 1, h, w);
      mlp(c, h, w);
    }
    // Sampling and fusion that follow this slot.
    if (slot == 0 || slot == 1) conv(c, cfg.stage_widths[static_cast<std::size_t>(slot + 1)], 2, h / 2, w / 2);
    if (slot == 2 || slot == 3) {
      const int target = cfg.width_at_slot(slot + 1);
      conv(c, 4 * target, 1, h, w);
      const int fh = 2 * h;
      const int fw = 2 * w;
      switch (cfg.fusion()) {
        case FusionKind::Cfb:
          conv(target, target, 1, fh, fw);
          conv(1, target, 3, fh, fw);
          break;
        case FusionKind::Sk:
          conv(target, sk_hidden(target), 1, 1, 1);
          conv(sk_hidden(target), 2 * target, 1, 1, 1);
          break;
        case FusionKind::Concat:
          conv(2 * target, target, 1, fh, fw);
          break;
        case FusionKind::Add:
          break;
      }
    }
  }
  conv(cfg.stage_widths[0], cfg.head_channels(), 3, h0, w0);
  return macs;
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
Var<T> WaterFormer<T>::p(const std::string& name) {
  return waterformer::parameter(parameter(name));
}

template <typename T>
Var<T> WaterFormer<T>::conv(const Var<T>& x, const std::string& name, int kernel, int stride, int pad) {
  const auto it = index_.find(name + ".bias");
  Var<T> bias = it == index_.end() ? nullptr : waterformer::parameter(params_[it->second]);
  return ops::conv2d(x, p(name + ".weight"), bias, kernel, stride, pad);
}

template <typename T>
Var<T> WaterFormer<T>::dwconv(const Var<T>& x, const std::string& name, int kernel) {
  return ops::depthwise_conv2d(x, p(name + ".weight"), p(name + ".bias"), kernel);
}

template <typename T>
RlnOutput<T> WaterFormer<T>::rln(const Var<T>& x, const std::string& prefix) {
  RlnOutput<T> r;
  r.standardized = ops::channel_normalize(x, kRlnEps);
  r.normalized = ops::channel_affine(r.standardized, p(prefix + ".weight"), p(prefix + ".bias"));
  r.rescale = ops::broadcast_affine(ops::location_std(x, kRlnEps), p(prefix + ".meta1.weight"),
                                    p(prefix + ".meta1.bias"));
  r.rebias = ops::broadcast_affine(ops::location_mean(x), p(prefix + ".meta2.weight"), p(prefix + ".meta2.bias"));
  return r;
}

template <typename T>
Var<T> WaterFormer<T>::mlp(const Var<T>& x, const std::string& prefix) {
  Var<T> h = conv(x, prefix + ".fc1", 1, 1, 0);
  if (config_.mlp_activation == MlpActivation::FRelu) {
    h = ops::maximum(h, dwconv(h, prefix + ".funnel", 3));
  } else {
    h = ops::relu(h);
  }
  return conv(h, prefix + ".fc2", 1, 1, 0);
}

template <typename T>
Var<T> WaterFormer<T>::attention_block(const Var<T>& x, const std::string& prefix, int heads, ForwardTrace* trace) {
  const RlnOutput<T> r = rln(x, prefix + ".norm");
  Var<T> qkv = conv(r.normalized, prefix + ".qkv", 1, 1, 0);
  const int h = x->shape().h;
  const int w = x->shape().w;
  const auto [wh, ph] = window_tiling(h, config_.window_size);
  const auto [ww, pw] = window_tiling(w, config_.window_size);
  if (ph != h || pw != w) qkv = ops::pad_reflect(qkv, 0, ph - h, 0, pw - w);
  Var<T> a = ops::window_attention(qkv, heads, wh, ww, trace ? &trace->attention : nullptr);
  if (ph != h || pw != w) a = ops::crop(a, 0, 0, h, w);
  a = conv(a, prefix + ".proj", 1, 1, 0);
  a = ops::add(ops::mul(a, r.rescale), r.rebias);
  Var<T> y = ops::add(x, a);
  return ops::add(y, mlp(y, prefix + ".mlp"));
}

template <typename T>
Var<T> WaterFormer<T>::crb(const Var<T>& x, const std::string& prefix, int heads, ForwardTrace* trace) {
  const int c = x->shape().c;
  if (c % heads != 0) {
    throw ConfigError("CRB: " + std::to_string(c) + " channels not divisible by " + std::to_string(heads) + " heads");
  }
  const RlnOutput<T> r = rln(x, prefix + ".norm");
  Var<T> qkv = dwconv(conv(r.normalized, prefix + ".qkv", 1, 1, 0), prefix + ".qkv_dw", 3);
  Var<T> v = dwconv(ops::slice_channels(qkv, 2 * c, c), prefix + ".v_conv", 3);
  qkv = ops::concat_channels(ops::slice_channels(qkv, 0, 2 * c), v);
  Var<T> a = ops::channel_attention(qkv, p(prefix + ".gamma"), heads, config_.qk_norm,
                                    trace ? &trace->attention : nullptr);
  a = conv(a, prefix + ".proj", 1, 1, 0);
  a = ops::add(ops::mul(a, r.rescale), r.rebias);
  Var<T> y = ops::add(x, a);
  return ops::add(y, mlp(y, prefix + ".mlp"));
}

template <typename T>
Var<T> WaterFormer<T>::fuse(const Var<T>& up, const Var<T>& skip, const std::string& prefix, ForwardTrace* trace) {
  up->value.require_shape(skip->shape(), "fusion");
  const int c = up->shape().c;
  auto record = [&](const Var<T>& alpha1) {
    if (!trace) return;
    std::vector<double> a1, a2;
    for (int i = 0; i < c; ++i) {
      const double v = static_cast<double>(alpha1->value[static_cast<std::size_t>(i)]);
      a1.push_back(v);
      a2.push_back(1.0 - v);
    }
    trace->fusion_alpha1.push_back(std::move(a1));
    trace->fusion_alpha2.push_back(std::move(a2));
  };
  switch (config_.fusion()) {
    case FusionKind::Cfb: {
      // Two-way softmax over GAP descriptors, written as a sigmoid of their difference.
      Var<T> alpha1 = ops::sigmoid(ops::sub(ops::global_avg_pool(up), ops::global_avg_pool(skip)));
      record(alpha1);
      Var<T> y = ops::add(ops::scale_channels(up, alpha1), ops::scale_channels(skip, ops::one_minus(alpha1)));
      return ops::add(y, dwconv(conv(y, prefix + ".pconv", 1, 1, 0), prefix + ".dconv", 3));
    }
    case FusionKind::Sk: {
      Var<T> s = ops::global_avg_pool(ops::add(up, skip));
      Var<T> logits = conv(ops::relu(conv(s, prefix + ".mlp1", 1, 1, 0)), prefix + ".mlp2", 1, 1, 0);
      Var<T> alpha1 = ops::sigmoid(ops::sub(ops::slice_channels(logits, 0, c), ops::slice_channels(logits, c, c)));
      record(alpha1);
      return ops::add(ops::scale_channels(up, alpha1), ops::scale_channels(skip, ops::one_minus(alpha1)));
    }
    case FusionKind::Concat:
      return conv(ops::concat_channels(up, skip), prefix + ".proj", 1, 1, 0);
    case FusionKind::Add:
      return ops::add(up, skip);
  }
  return ops::add(up, skip);
}

template <typename T>
Var<T> WaterFormer<T>::downsample(const Var<T>& x, const std::string& prefix) {
  if (x->shape().h % 2 != 0 || x->shape().w % 2 != 0) {
    throw DimensionError("downsample: spatial size " + to_string(x->shape()) + " is not even");
  }
  return conv(x, prefix, 2, 2, 0);
}

template <typename T>
Var<T> WaterFormer<T>::upsample(const Var<T>& x, const std::string& prefix) {
  const int out = parameter(prefix + ".weight").value.shape().c;
  if (out % 4 != 0) throw ConfigError("upsample: expansion to " + std::to_string(out) + " channels not divisible by 4");
  return ops::pixel_shuffle(conv(x, prefix, 1, 1, 0), 2);
}

template <typename T>
Var<T> WaterFormer<T>::stage(const Var<T>& x, int slot, int depth, ForwardTrace* trace) {
  Var<T> y = x;
  const int heads = config_.heads_at_slot(slot);
  for (int i = 0; i < depth; ++i) {
    y = attention_block(y, slot_name(slot) + ".block" + std::to_string(i), heads, trace);
  }
  if (config_.crb_at_slot(slot)) y = crb(y, slot_name(slot) + ".crb", heads, trace);
#ifndef NDEBUG
  if (!y->value.all_finite()) throw TrainingError("non-finite activation after stage " + slot_name(slot));
#endif
  return y;
}

template <typename T>
Var<T> WaterFormer<T>::reconstruct(const Var<T>& input, const Var<T>& head) {
  Var<T> o = head;
  switch (config_.recon_kind) {
    case ReconKind::GlobalResidual:
      return ops::add(input, head);
    case ReconKind::Soft: {
      // One shared K plane for all three channels.
      Var<T> k = ops::slice_channels(head, 0, 1);
      o = ops::concat_channels(ops::concat_channels(ops::concat_channels(k, k), k), ops::slice_channels(head, 1, 3));
      break;
    }
    case ReconKind::UwSoft:
      break;
  }
  return make_result<T>(soft_reconstruct(input->value, o->value), {input, o}, [](Node<T>& node) {
    const auto& u = node.parents[0];
    const auto& k = node.parents[1];
    soft_reconstruct_backward(u->value, k->value, node.grad, needs_grad(u) ? &u->grad_buffer() : nullptr,
                              needs_grad(k) ? &k->grad_buffer() : nullptr);
  });
}

template <typename T>
Var<T> WaterFormer<T>::forward(const Tensor<T>& input, ForwardTrace* trace) {
  if (input.channels() != 3 || input.height() < 1 || input.width() < 1) {
    throw DimensionError("forward: expected a 3 x h x w input, got " + to_string(input.shape()));
  }
  const int h = input.height();
  const int w = input.width();
  const int pad_h = (4 - h % 4) % 4;
  const int pad_w = (4 - w % 4) % 4;
  Var<T> u = constant(input);
  if (pad_h || pad_w) u = ops::pad_reflect(u, 0, pad_h, 0, pad_w);

  const auto& d = config_.stage_depths;
  const auto& dd = config_.decoder_depths;
  Var<T> x = conv(u, "embed", 3, 1, 1);
  Var<T> e1 = stage(x, 0, d[0], trace);
  Var<T> e2 = stage(downsample(e1, "down1"), 1, d[1], trace);
  Var<T> b = stage(downsample(e2, "down2"), 2, d[2], trace);
  Var<T> d2 = stage(fuse(upsample(b, "up2"), e2, "fuse2", trace), 3, dd[0], trace);
  Var<T> d1 = stage(fuse(upsample(d2, "up1"), e1, "fuse1", trace), 4, dd[1], trace);
  Var<T> out = reconstruct(u, conv(d1, "head", 3, 1, 1));
  if (pad_h || pad_w) out = ops::crop(out, 0, 0, h, w);
  return out;
}

template <typename T>
ImageRGB WaterFormer<T>::enhance(const ImageRGB& input) {
  NoGradGuard guard;
  return to_image(forward(to_tensor<T>(input))->value);
}

template class WaterFormer<float>;
template class WaterFormer<double>;

}  // namespace waterformer
