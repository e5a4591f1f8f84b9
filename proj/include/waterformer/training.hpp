#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "waterformer/data.hpp"
#include "waterformer/losses.hpp"
#include "waterformer/metrics.hpp"
#include "waterformer/net.hpp"

namespace waterformer {

// Ablation variants: Base..V5 add CRB, CFB, chroma and Sobel losses in turn;
// the rest swap one component of V5.
enum class Variant { Base, V1, V2, V3, V4, V5, ReluMlp, ReconPlain, ReconSoft, SkFusion };

inline constexpr std::array<Variant, 10> kAllVariants{Variant::Base,    Variant::V1,         Variant::V2,
                                                      Variant::V3,      Variant::V4,         Variant::V5,
                                                      Variant::ReluMlp, Variant::ReconPlain, Variant::ReconSoft,
                                                      Variant::SkFusion};

std::string_view variant_name(Variant v);
// Throws ConfigError listing the known names.
Variant parse_variant(std::string_view name);

struct VariantSpec {
  ModelConfig model;
  LossWeights weights;
};

VariantSpec variant_spec(Variant v);

// On/off pattern of the four Base..V5 components plus the swap knobs.
struct VariantFlags {
  bool crb = false;
  bool cfb = false;
  bool chroma = false;
  bool sobel = false;
  MlpActivation activation = MlpActivation::FRelu;
  ReconKind recon = ReconKind::UwSoft;
  FusionKind fusion = FusionKind::Cfb;

  friend bool operator==(const VariantFlags&, const VariantFlags&) = default;
};
VariantFlags flags_of(const ModelConfig& model, const LossWeights& weights);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double lr0 = 0.001;
  int decay_every = 50;
  double decay_factor = 0.5;
  std::uint64_t seed = 0;
  Variant variant = Variant::V5;
  ModelConfig model;
  LossWeights weights;
  ChromaConfig chroma;
  int image_size = 64;
  Interpolation interpolation = Interpolation::Bilinear;
  bool augment = true;
  double grad_clip = 0.0;  // global-norm threshold; 0 disables
  int max_steps = 0;       // stop early after this many steps; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // Model and loss weights taken from the variant registry.
  static TrainConfig for_variant(Variant v);

  void validate() const;
  // Applies one key; false when unknown. "variant" resets model and weights.
  bool set(std::string_view key, std::string_view value);
  std::string serialize() const;
  // "variant" is applied first so the remaining keys override it.
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// lr0 * decay_factor^floor(epoch / decay_every).
double lr_at(int epoch, const TrainConfig& cfg);

struct LossRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double total = 0.0;
  LossParts parts;
  double lr = 0.0;

  friend bool operator==(const LossRecord& a, const LossRecord& b) {
    return a.step == b.step && a.epoch == b.epoch && a.total == b.total && a.parts.l1 == b.parts.l1 &&
           a.parts.chroma == b.parts.chroma && a.parts.sobel == b.parts.sobel && a.lr == b.lr;
  }
};

struct EpochSummary {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_l1;
  std::optional<double> val_psnr;
};

struct TrainState {
  TrainConfig config;
  WaterFormer<float> model;
  std::vector<Tensor<float>> m;  // first moments, one per parameter
  std::vector<Tensor<float>> v;  // second moments
  int epoch = 0;
  std::int64_t step = 0;
  std::mt19937_64 rng;  // augmentation draws
  std::vector<LossRecord> history;
  double best_val_psnr = -std::numeric_limits<double>::infinity();

  explicit TrainState(const TrainConfig& cfg);
};

struct StepResult {
  double total = 0.0;
  LossParts parts;
  double grad_norm = 0.0;
};

// One optimizer step on `batch` (gradients averaged over the batch). Throws
// TrainingError on a non-finite loss with the loss parts and gradient norms.
StepResult train_step(TrainState& state, const std::vector<PairedSample>& batch, double lr);

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
  // Written whenever validation PSNR improves; empty disables.
  std::filesystem::path best_checkpoint;
  // Written at the end of every epoch; empty disables.
  std::filesystem::path last_checkpoint;
};

// Runs epochs state.epoch .. config.epochs - 1 (or until max_steps).
std::vector<EpochSummary> train(TrainState& state, const std::vector<PairedSample>& train_set,
                                const std::vector<PairedSample>& val_set, const TrainHooks& hooks = {});

// Mean PSNR and l1 of the model on a set, no augmentation.
struct EvalSummary {
  double psnr = 0.0;
  double l1 = 0.0;
};
EvalSummary evaluate_model(WaterFormer<float>& model, const std::vector<PairedSample>& samples);

// Checkpoint archive "WFK1": config echo, parameters keyed by name, Adam
// moments, counters, RNG state, loss history, CRC-32 trailer.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
// Throws IntegrityError (bad magic, truncation, checksum) or
// IncompatibleError (version or parameter layout mismatch).
TrainState load_checkpoint(const std::filesystem::path& path);

// "step,total,l1,chroma,sobel,lr" with one row per record.
std::string loss_curve_csv(const std::vector<LossRecord>& history);

struct VariantReport {
  Variant variant = Variant::V5;
  VariantFlags flags;
  MetricReport metrics;  // held-out split
  std::vector<LossRecord> history;
  double mean_ssim = 0.0;
  double mean_psnr = 0.0;
  std::size_t params = 0;

  // Final 10-step mean below the initial 10-step mean, all losses finite.
  bool loss_decreasing() const;
};

struct AblationOptions {
  TrainConfig base;  // schedule, size and seed shared by every variant
  Split eval_split = Split::Test;
  std::function<void(Variant, const LossRecord&)> on_step;
};

VariantReport run_variant(Variant v, const std::vector<PairedSample>& train_set,
                          const std::vector<PairedSample>& eval_set, const AblationOptions& options);

// Rows: variant, CRB, CFB, chroma, Sobel (w/o or check), SSIM, PSNR.
std::string ablation_table(const std::vector<VariantReport>& reports);
std::string ablation_csv(const std::vector<VariantReport>& reports);

}  // namespace waterformer
