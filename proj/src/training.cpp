#include "waterformer/training.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "waterformer/errors.hpp"
#include "waterformer/keyvalue.hpp"
#include "waterformer/tensor_image.hpp"

namespace waterformer {
namespace fs = std::filesystem;
namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 10> kVariantNames{{{Variant::Base, "base"},
                                                                              {Variant::V1, "v1"},
                                                                              {Variant::V2, "v2"},
                                                                              {Variant::V3, "v3"},
                                                                              {Variant::V4, "v4"},
                                                                              {Variant::V5, "v5"},
                                                                              {Variant::ReluMlp, "relu_mlp"},
                                                                              {Variant::ReconPlain, "recon_plain"},
                                                                              {Variant::ReconSoft, "recon_soft"},
                                                                              {Variant::SkFusion, "skfusion"}}};

constexpr char kMagic[4] = {'W', 'F', 'K', '1'};
constexpr int kTrendWindow = 10;

double squared_norm(const Tensor<float>& t) {
  double s = 0.0;
  for (float g : t.values()) s += static_cast<double>(g) * g;
  return s;
}

std::string describe_gradients(const WaterFormer<float>& model) {
  std::vector<std::pair<double, std::string>> norms;
  for (const auto& p : model.parameters()) norms.emplace_back(std::sqrt(squared_norm(p.grad)), p.name);
  std::sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) {
    const bool an = std::isfinite(a.first), bn = std::isfinite(b.first);
    if (an != bn) return !an;
    return a.first > b.first;
  });
  std::ostringstream out;
  for (std::size_t i = 0; i < std::min<std::size_t>(norms.size(), 8); ++i) {
    out << "\n  grad norm " << norms[i].second << " = " << norms[i].first;
  }
  return out.str();
}

// Little-endian byte buffer for the checkpoint archive.
class Writer {
 public:
  template <typename V>
  void pod(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    raw(s.data(), s.size());
  }
  void floats(const Tensor<float>& t) { raw(t.data(), t.numel() * sizeof(float)); }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size) : data_(data), size_(size) {}

  template <typename V>
  V pod() {
    V v;
    raw(&v, sizeof(V));
    return v;
  }
  void raw(void* out, std::size_t n) {
    if (n > size_ - pos_) throw IntegrityError("checkpoint truncated");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > size_ - pos_) throw IntegrityError("checkpoint truncated");
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  void floats(Tensor<float>& t) { raw(t.data(), t.numel() * sizeof(float)); }
  bool done() const { return pos_ == size_; }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1U << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string fmt(double v, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& [k, n] : kVariantNames)
    if (k == v) return n;
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [k, n] : kVariantNames)
    if (n == name) return k;
  std::string known;
  for (const auto& [k, n] : kVariantNames) known += (known.empty() ? "" : ", ") + std::string(n);
  throw ConfigError("unknown variant '" + std::string(name) + "' (known: " + known + ")");
}

VariantSpec variant_spec(Variant v) {
  VariantSpec s;
  s.model = ModelConfig::reference();
  s.weights = LossWeights{};
  auto strip = [&](bool crb, bool cfb, bool chroma, bool sobel) {
    s.model.use_crb = crb;
    s.model.use_cfb = cfb;
    s.weights.chroma = chroma ? LossWeights{}.chroma : 0.0;
    s.weights.sobel = sobel ? LossWeights{}.sobel : 0.0;
  };
  switch (v) {
    case Variant::Base:
      strip(false, false, false, false);
      break;
    case Variant::V1:
      strip(true, false, false, false);
      break;
    case Variant::V2:
      strip(true, true, false, false);
      break;
    case Variant::V3:
      strip(true, true, true, false);
      break;
    case Variant::V4:
      strip(true, true, false, true);
      break;
    case Variant::V5:
      break;
    case Variant::ReluMlp:
      s.model.mlp_activation = MlpActivation::Relu;
      break;
    case Variant::ReconPlain:
      s.model.recon_kind = ReconKind::GlobalResidual;
      break;
    case Variant::ReconSoft:
      s.model.recon_kind = ReconKind::Soft;
      break;
    case Variant::SkFusion:
      s.model.use_cfb = false;
      s.model.fusion_kind = FusionKind::Sk;
      break;
  }
  return s;
}

VariantFlags flags_of(const ModelConfig& model, const LossWeights& weights) {
  VariantFlags f;
  f.crb = model.use_crb;
  f.cfb = model.use_cfb;
  f.chroma = weights.chroma > 0.0;
  f.sobel = weights.sobel > 0.0;
  f.activation = model.mlp_activation;
  f.recon = model.recon_kind;
  f.fusion = model.fusion();
  return f;
}

// ---------------------------------------------------------------------------
// TrainConfig

TrainConfig TrainConfig::for_variant(Variant v) {
  TrainConfig c;
  const VariantSpec s = variant_spec(v);
  c.variant = v;
  c.model = s.model;
  c.weights = s.weights;
  return c;
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (decay_every < 1) throw ConfigError("decay_every must be at least 1");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must lie in (0, 1]");
  if (image_size < 0) throw ConfigError("image_size must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  model.validate();
  weights.validate();
  chroma.validate();
}

bool TrainConfig::set(std::string_view key, std::string_view value) {
  if (key == "variant") {
    const Variant v = parse_variant(kv::trim(value));
    const VariantSpec s = variant_spec(v);
    variant = v;
    model = s.model;
    weights = s.weights;
  } else if (key == "epochs") {
    epochs = kv::to_int(key, value);
  } else if (key == "batch_size") {
    batch_size = kv::to_int(key, value);
  } else if (key == "lr0" || key == "lr") {
    lr0 = kv::to_double(key, value);
  } else if (key == "decay_every") {
    decay_every = kv::to_int(key, value);
  } else if (key == "decay_factor") {
    decay_factor = kv::to_double(key, value);
  } else if (key == "seed") {
    seed = kv::to_uint64(key, value);
  } else if (key == "weight_l1") {
    weights.l1 = kv::to_double(key, value);
  } else if (key == "weight_chroma") {
    weights.chroma = kv::to_double(key, value);
  } else if (key == "weight_sobel") {
    weights.sobel = kv::to_double(key, value);
  } else if (key == "chroma_window") {
    chroma.window = kv::to_int(key, value);
  } else if (key == "chroma_stride") {
    chroma.stride = kv::to_int(key, value);
  } else if (key == "chroma_c1") {
    chroma.c1 = kv::to_double(key, value);
  } else if (key == "chroma_c2") {
    chroma.c2 = kv::to_double(key, value);
  } else if (key == "chroma_cov_weight") {
    chroma.covariance_weight = kv::to_double(key, value);
  } else if (key == "chroma_clip") {
    chroma.clip_similarity = kv::to_bool(key, value);
  } else if (key == "image_size") {
    image_size = kv::to_int(key, value);
  } else if (key == "interpolation") {
    interpolation = parse_interpolation(kv::trim(value));
  } else if (key == "augment") {
    augment = kv::to_bool(key, value);
  } else if (key == "grad_clip") {
    grad_clip = kv::to_double(key, value);
  } else if (key == "max_steps") {
    max_steps = kv::to_int(key, value);
  } else if (key == "beta1") {
    beta1 = kv::to_double(key, value);
  } else if (key == "beta2") {
    beta2 = kv::to_double(key, value);
  } else if (key == "adam_eps") {
    adam_eps = kv::to_double(key, value);
  } else {
    return model.set(key, value);
  }
  return true;
}

std::string TrainConfig::serialize() const {
  std::ostringstream out;
  auto num = [&](const char* k, double v) { out << k << " = " << kv::format_double(v) << '\n'; };
  out << "variant = " << variant_name(variant) << '\n';
  out << "epochs = " << epochs << '\n';
  out << "batch_size = " << batch_size << '\n';
  num("lr0", lr0);
  out << "decay_every = " << decay_every << '\n';
  num("decay_factor", decay_factor);
  out << "seed = " << seed << '\n';
  num("weight_l1", weights.l1);
  num("weight_chroma", weights.chroma);
  num("weight_sobel", weights.sobel);
  out << "chroma_window = " << chroma.window << '\n';
  out << "chroma_stride = " << chroma.stride << '\n';
  num("chroma_c1", chroma.c1);
  num("chroma_c2", chroma.c2);
  num("chroma_cov_weight", chroma.covariance_weight);
  out << "chroma_clip = " << (chroma.clip_similarity ? "true" : "false") << '\n';
  out << "image_size = " << image_size << '\n';
  out << "interpolation = "
      << (interpolation == Interpolation::Bilinear ? "bilinear"
          : interpolation == Interpolation::Area   ? "area"
                                                   : "nearest")
      << '\n';
  out << "augment = " << (augment ? "true" : "false") << '\n';
  num("grad_clip", grad_clip);
  out << "max_steps = " << max_steps << '\n';
  num("beta1", beta1);
  num("beta2", beta2);
  num("adam_eps", adam_eps);
  out << model.serialize();
  return out.str();
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  const auto entries = kv::parse(text, "training config");
  for (const auto& e : entries)
    if (e.key == "variant") c.set(e.key, e.value);
  for (const auto& e : entries) {
    if (e.key == "variant") continue;
    if (!c.set(e.key, e.value)) {
      throw ConfigError("training config line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_at: epoch must be non-negative");
  return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

// ---------------------------------------------------------------------------
// Optimization

TrainState::TrainState(const TrainConfig& cfg)
    : config(cfg), model(cfg.model, derive_seed(cfg.seed, 0x1417, 0)), rng(derive_seed(cfg.seed, 0xa46, 0)) {
  config.validate();
  for (const auto& p : model.parameters()) {
    m.emplace_back(p.value.shape());
    v.emplace_back(p.value.shape());
  }
}

StepResult train_step(TrainState& state, const std::vector<PairedSample>& batch, double lr) {
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  const TrainConfig& cfg = state.config;
  state.model.zero_grad();
  StepResult r;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    const Tensor<float> input = to_tensor<float>(sample.degraded);
    const Tensor<float> gt = to_tensor<float>(sample.reference);
    const Var<float> out = state.model.forward(input);
    TotalLoss<float> loss = total_loss(gt, out->value, cfg.weights, cfg.chroma, true);
    if (!std::isfinite(loss.total)) {
      throw TrainingError("non-finite loss at step " + std::to_string(state.step + 1) + " on " + sample.id +
                          ": total=" + std::to_string(loss.total) + " l1=" + std::to_string(loss.parts.l1) +
                          " chroma=" + std::to_string(loss.parts.chroma) + " sobel=" +
                          std::to_string(loss.parts.sobel) + describe_gradients(state.model));
    }
    for (float& g : loss.grad.values()) g = static_cast<float>(g * inv);
    backward(out, loss.grad);
    r.total += loss.total * inv;
    r.parts.l1 += loss.parts.l1 * inv;
    r.parts.chroma += loss.parts.chroma * inv;
    r.parts.sobel += loss.parts.sobel * inv;
  }

  double sq = 0.0;
  for (const auto& p : state.model.parameters()) sq += squared_norm(p.grad);
  r.grad_norm = std::sqrt(sq);
  if (!std::isfinite(r.grad_norm)) {
    throw TrainingError("non-finite gradient at step " + std::to_string(state.step + 1) + ": total=" +
                        std::to_string(r.total) + describe_gradients(state.model));
  }
  float clip_scale = 1.0f;
  if (cfg.grad_clip > 0.0 && r.grad_norm > cfg.grad_clip) {
    clip_scale = static_cast<float>(cfg.grad_clip / r.grad_norm);
  }

  ++state.step;
  const auto t = static_cast<double>(state.step);
  const auto b1 = static_cast<float>(cfg.beta1);
  const auto b2 = static_cast<float>(cfg.beta2);
  const auto c1 = static_cast<float>(1.0 - std::pow(cfg.beta1, t));
  const auto c2 = static_cast<float>(1.0 - std::pow(cfg.beta2, t));
  const auto eps = static_cast<float>(cfg.adam_eps);
  const auto step_lr = static_cast<float>(lr);
  auto& params = state.model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    float* w = p.value.data();
    const float* g = p.grad.data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (std::size_t j = 0; j < p.value.numel(); ++j) {
      const float gj = g[j] * clip_scale;
      m[j] = b1 * m[j] + (1.0f - b1) * gj;
      v[j] = b2 * v[j] + (1.0f - b2) * gj * gj;
      const float mhat = m[j] / c1;
      const float vhat = v[j] / c2;
      w[j] -= step_lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return r;
}

EvalSummary evaluate_model(WaterFormer<float>& model, const std::vector<PairedSample>& samples) {
  EvalSummary s;
  if (samples.empty()) return s;
  NoGradGuard guard;
  for (const auto& sample : samples) {
    const Var<float> out = model.forward(to_tensor<float>(sample.degraded));
    s.l1 += l1_loss(to_tensor<float>(sample.reference), out->value, false).value;
    s.psnr += psnr(sample.reference, to_image(out->value));
  }
  s.l1 /= static_cast<double>(samples.size());
  s.psnr /= static_cast<double>(samples.size());
  return s;
}

std::vector<EpochSummary> train(TrainState& state, const std::vector<PairedSample>& train_set,
                                const std::vector<PairedSample>& val_set, const TrainHooks& hooks) {
  if (train_set.empty()) throw TrainingError("train: empty training set");
  const TrainConfig& cfg = state.config;
  std::vector<EpochSummary> summaries;
  const std::size_t n = train_set.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  bool stop = false;
  while (state.epoch < cfg.epochs && !stop) {
    const auto order = epoch_order(n, state.epoch, cfg.seed);
    const double lr = lr_at(state.epoch, cfg);
    EpochSummary summary;
    summary.epoch = state.epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::vector<PairedSample> batch;
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
        const PairedSample& s = train_set[order[i]];
        batch.push_back(cfg.augment ? augment(s, state.rng) : s);
      }
      const StepResult r = train_step(state, batch, lr);
      LossRecord rec{state.step, state.epoch, r.total, r.parts, lr};
      state.history.push_back(rec);
      summary.train_loss += r.total;
      ++batches;
      if (hooks.on_step) hooks.on_step(rec);
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) {
        stop = true;
        break;
      }
    }
    summary.train_loss /= static_cast<double>(batches);
    if (stop && batches * bs < n) {
      summaries.push_back(summary);
      if (hooks.on_epoch) hooks.on_epoch(summary);
      break;
    }
    if (!val_set.empty()) {
      const EvalSummary e = evaluate_model(state.model, val_set);
      summary.val_l1 = e.l1;
      summary.val_psnr = e.psnr;
    }
    ++state.epoch;
    if (summary.val_psnr && *summary.val_psnr > state.best_val_psnr) {
      state.best_val_psnr = *summary.val_psnr;
      if (!hooks.best_checkpoint.empty()) save_checkpoint(state, hooks.best_checkpoint);
    }
    if (!hooks.last_checkpoint.empty()) save_checkpoint(state, hooks.last_checkpoint);
    summaries.push_back(summary);
    if (hooks.on_epoch) hooks.on_epoch(summary);
  }
  return summaries;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TrainState& state, const fs::path& path) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(state.config.serialize());
  w.pod<std::int32_t>(state.epoch);
  w.pod<std::int64_t>(state.step);
  w.pod<double>(state.best_val_psnr);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  const auto& params = state.model.parameters();
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    w.str(p.name);
    w.pod<std::int32_t>(p.value.shape().c);
    w.pod<std::int32_t>(p.value.shape().h);
    w.pod<std::int32_t>(p.value.shape().w);
    w.floats(p.value);
    w.floats(state.m[i]);
    w.floats(state.v[i]);
  }
  w.pod<std::uint64_t>(state.history.size());
  for (const auto& r : state.history) {
    w.pod<std::int64_t>(r.step);
    w.pod<std::int32_t>(r.epoch);
    w.pod<double>(r.total);
    w.pod<double>(r.parts.l1);
    w.pod<double>(r.parts.chroma);
    w.pod<double>(r.parts.sobel);
    w.pod<double>(r.lr);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc_of(bytes.data(), bytes.size());
  w.pod<std::uint32_t>(crc);

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IngestionError("cannot write checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

TrainState load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IntegrityError(path.string() + " is not a WFK1 checkpoint (bad magic)");
  }
  if (bytes.size() < sizeof kMagic + 2 * sizeof(std::uint32_t)) throw IntegrityError("checkpoint truncated");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version != kCheckpointVersion) {
    throw IncompatibleError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != crc_of(bytes.data(), body)) throw IntegrityError("checkpoint checksum mismatch (truncated or corrupt)");

  Reader r(bytes.data(), body);
  char magic[4];
  r.raw(magic, sizeof magic);
  r.pod<std::uint32_t>();
  TrainConfig cfg;
  try {
    cfg = TrainConfig::parse(r.str());
  } catch (const ConfigError& e) {
    throw IncompatibleError(std::string("checkpoint configuration not understood: ") + e.what());
  }
  TrainState state(cfg);
  state.epoch = r.pod<std::int32_t>();
  state.step = r.pod<std::int64_t>();
  state.best_val_psnr = r.pod<double>();
  std::istringstream rng(r.str());
  rng >> state.rng;
  if (!rng) throw IntegrityError("checkpoint RNG state unreadable");
  auto& params = state.model.parameters();
  const auto count = r.pod<std::uint32_t>();
  if (count != params.size()) {
    throw IncompatibleError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                            std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const std::string name = r.str();
    Shape s;
    s.c = r.pod<std::int32_t>();
    s.h = r.pod<std::int32_t>();
    s.w = r.pod<std::int32_t>();
    if (name != p.name || !(s == p.value.shape())) {
      throw IncompatibleError("checkpoint parameter " + name + " (" + to_string(s) + ") does not match model " +
                              p.name + " (" + to_string(p.value.shape()) + ")");
    }
    r.floats(p.value);
    r.floats(state.m[i]);
    r.floats(state.v[i]);
  }
  const auto hist = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < hist; ++i) {
    LossRecord rec;
    rec.step = r.pod<std::int64_t>();
    rec.epoch = r.pod<std::int32_t>();
    rec.total = r.pod<double>();
    rec.parts.l1 = r.pod<double>();
    rec.parts.chroma = r.pod<double>();
    rec.parts.sobel = r.pod<double>();
    rec.lr = r.pod<double>();
    state.history.push_back(rec);
  }
  if (!r.done()) throw IntegrityError("checkpoint has trailing bytes");
  return state;
}

std::string loss_curve_csv(const std::vector<LossRecord>& history) {
  std::ostringstream out;
  out << "step,total,l1,chroma,sobel,lr\n";
  out << std::setprecision(9);
  for (const auto& r : history) {
    out << r.step << ',' << r.total << ',' << r.parts.l1 << ',' << r.parts.chroma << ',' << r.parts.sobel << ','
        << r.lr << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Ablation

bool VariantReport::loss_decreasing() const {
  if (history.size() < 2 * static_cast<std::size_t>(kTrendWindow)) return false;
  double head = 0.0, tail = 0.0;
  for (const auto& r : history)
    if (!std::isfinite(r.total)) return false;
  for (int i = 0; i < kTrendWindow; ++i) {
    head += history[static_cast<std::size_t>(i)].total;
    tail += history[history.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  return tail < head;
}

VariantReport run_variant(Variant v, const std::vector<PairedSample>& train_set,
                          const std::vector<PairedSample>& eval_set, const AblationOptions& options) {
  TrainConfig cfg = options.base;
  const VariantSpec spec = variant_spec(v);
  cfg.variant = v;
  cfg.model = spec.model;
  cfg.weights = spec.weights;
  TrainState state(cfg);
  TrainHooks hooks;
  if (options.on_step) hooks.on_step = [&](const LossRecord& r) { options.on_step(v, r); };
  train(state, train_set, {}, hooks);

  VariantReport report;
  report.variant = v;
  report.flags = flags_of(cfg.model, cfg.weights);
  report.history = state.history;
  report.params = state.model.count_params();
  for (const auto& s : eval_set) {
    report.metrics.add(evaluate_pair(s.id, s.reference, state.model.enhance(s.degraded), false));
  }
  const MetricRow mean = report.metrics.aggregate();
  report.mean_ssim = mean.ssim.value_or(0.0);
  report.mean_psnr = mean.psnr.value_or(0.0);
  return report;
}

std::string ablation_table(const std::vector<VariantReport>& reports) {
  auto mark = [](bool on) { return on ? "yes" : "w/o"; };
  std::ostringstream out;
  out << std::left << std::setw(12) << "variant" << std::setw(5) << "CRB" << std::setw(5) << "CFB" << std::setw(8)
      << "Lchroma" << std::setw(8) << "LSobel" << std::setw(7) << "MLP" << std::setw(17) << "recon" << std::setw(8)
      << "fusion" << std::setw(8) << "SSIM" << "PSNR\n";
  for (const auto& r : reports) {
    out << std::left << std::setw(12) << variant_name(r.variant) << std::setw(5) << mark(r.flags.crb) << std::setw(5)
        << mark(r.flags.cfb) << std::setw(8) << mark(r.flags.chroma) << std::setw(8) << mark(r.flags.sobel)
        << std::setw(7) << mlp_activation_name(r.flags.activation) << std::setw(17) << recon_kind_name(r.flags.recon)
        << std::setw(8) << fusion_kind_name(r.flags.fusion) << std::setw(8) << fmt(r.mean_ssim, 4)
        << fmt(r.mean_psnr, 2) << '\n';
  }
  return out.str();
}

std::string ablation_csv(const std::vector<VariantReport>& reports) {
  std::ostringstream out;
  out << "variant,crb,cfb,chroma,sobel,mlp,recon,fusion,ssim,psnr\n";
  for (const auto& r : reports) {
    out << variant_name(r.variant) << ',' << r.flags.crb << ',' << r.flags.cfb << ',' << r.flags.chroma << ','
        << r.flags.sobel << ',' << mlp_activation_name(r.flags.activation) << ',' << recon_kind_name(r.flags.recon)
        << ',' << fusion_kind_name(r.flags.fusion) << ',' << fmt(r.mean_ssim, 6) << ',' << fmt(r.mean_psnr, 6)
        << '\n';
  }
  return out.str();
}

}  // namespace waterformer
