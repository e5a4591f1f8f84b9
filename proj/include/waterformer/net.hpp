#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "waterformer/autograd.hpp"
#include "waterformer/image.hpp"
#include "waterformer/ops.hpp"

namespace waterformer {

enum class FusionKind { Cfb, Sk, Concat, Add };
enum class ReconKind { UwSoft, Soft, GlobalResidual };
enum class MlpActivation { FRelu, Relu };

std::string_view fusion_kind_name(FusionKind kind);
std::string_view recon_kind_name(ReconKind kind);
std::string_view mlp_activation_name(MlpActivation act);
FusionKind parse_fusion_kind(std::string_view name);
ReconKind parse_recon_kind(std::string_view name);
MlpActivation parse_mlp_activation(std::string_view name);

// Stage slots along the U: enc1, enc2, bottleneck, dec2, dec1.
inline constexpr int kStageSlots = 5;

struct ModelConfig {
  std::array<int, 3> stage_widths{24, 48, 96};
  std::array<int, 3> stage_depths{2, 2, 2};
  std::array<int, 2> decoder_depths{2, 2};  // dec2 (middle width), dec1 (first width)
  std::array<int, 3> heads{2, 4, 8};
  int window_size = 8;
  double mlp_ratio = 2.0;
  bool use_crb = true;
  bool use_cfb = true;
  // Skip fusion used when use_cfb is off; "cfb" here is the same as use_cfb.
  FusionKind fusion_kind = FusionKind::Add;
  ReconKind recon_kind = ReconKind::UwSoft;
  MlpActivation mlp_activation = MlpActivation::FRelu;
  // Which stage slots end with a CRB when use_crb is set.
  std::array<bool, kStageSlots> crb_slots{true, true, true, true, true};
  bool qk_norm = true;

  static ModelConfig reference();
  // Depth-free network: embedding, two downsamples, two upsamples, head.
  static ModelConfig toy();

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  int head_channels() const;
  int width_at_slot(int slot) const;
  int heads_at_slot(int slot) const;
  FusionKind fusion() const { return use_cfb ? FusionKind::Cfb : fusion_kind; }
  bool crb_at_slot(int slot) const { return use_crb && crb_slots[static_cast<std::size_t>(slot)]; }

  // key = value lines, parseable by parse().
  std::string serialize() const;
  static ModelConfig parse(std::string_view text);
  // Applies one key; false when the key is not a model setting. Throws
  // ConfigError on a malformed value.
  bool set(std::string_view key, std::string_view value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Values recorded during a forward pass for inspection and tests.
struct ForwardTrace {
  ops::AttentionProbe attention;
  // One entry per fusion: alpha1 per channel (alpha2 = 1 - alpha1).
  std::vector<std::vector<double>> fusion_alpha1;
  std::vector<std::vector<double>> fusion_alpha2;
};

// Rescale layer normalization over the channel axis at each location.
template <typename T>
struct RlnOutput {
  Var<T> normalized;    // after the learned weight and bias
  Var<T> standardized;  // before them: zero mean, unit variance per location
  Var<T> rescale;       // meta1(std), used to restore statistics
  Var<T> rebias;        // meta2(mean)
};

inline constexpr double kRlnEps = 1e-5;

template <typename T>
class WaterFormer {
 public:
  explicit WaterFormer(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  std::deque<Parameter<T>>& parameters() { return params_; }
  const std::deque<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;

  void zero_grad();
  std::size_t count_params() const;
  std::uint64_t count_macs(int height, int width) const;

  // Raw (unclamped) output for a 3 x h x w input. Inputs whose sides are not
  // multiples of 4 are reflect-padded and the result cropped back.
  Var<T> forward(const Tensor<T>& input, ForwardTrace* trace = nullptr);
  // Inference convenience: no graph, clamped result.
  ImageRGB enhance(const ImageRGB& input);

  // Building blocks, exposed for tests. `prefix` names the parameter group.
  RlnOutput<T> rln(const Var<T>& x, const std::string& prefix);
  Var<T> attention_block(const Var<T>& x, const std::string& prefix, int heads, ForwardTrace* trace);
  Var<T> mlp(const Var<T>& x, const std::string& prefix);
  Var<T> crb(const Var<T>& x, const std::string& prefix, int heads, ForwardTrace* trace);
  Var<T> fuse(const Var<T>& up, const Var<T>& skip, const std::string& prefix, ForwardTrace* trace);
  Var<T> downsample(const Var<T>& x, const std::string& prefix);
  Var<T> upsample(const Var<T>& x, const std::string& prefix);

 private:
  Parameter<T>& add_param(const std::string& name, Shape shape);
  void init_conv(const std::string& name, int out, int in, int kernel, bool bias);
  void init_rln(const std::string& prefix, int channels);
  void init_attention_block(const std::string& prefix, int channels);
  void init_mlp(const std::string& prefix, int channels);
  void init_crb(const std::string& prefix, int channels, int heads);
  void init_fusion(const std::string& prefix, int channels);
  Var<T> p(const std::string& name);
  Var<T> conv(const Var<T>& x, const std::string& name, int kernel, int stride, int pad);
  Var<T> dwconv(const Var<T>& x, const std::string& name, int kernel);
  Var<T> stage(const Var<T>& x, int slot, int depth, ForwardTrace* trace);
  Var<T> reconstruct(const Var<T>& input, const Var<T>& head);

  ModelConfig config_;
  std::mt19937_64 init_rng_;
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

std::string slot_name(int slot);
int mlp_hidden(int channels, double ratio);

// Closed-form footprint of a k x k convolution at an output resolution.
struct ConvFootprint {
  std::size_t params = 0;
  std::uint64_t macs = 0;
};
ConvFootprint conv_footprint(int in, int out, int kernel, bool bias, int out_h, int out_w);

}  // namespace waterformer
