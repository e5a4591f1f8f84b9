// Command-line entry point: synthesize, train, enhance, evaluate, ablate, inspect.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "waterformer/data.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/keyvalue.hpp"
#include "waterformer/metrics.hpp"
#include "waterformer/net.hpp"
#include "waterformer/training.hpp"

namespace fs = std::filesystem;
using namespace waterformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IngestionError("cannot write " + path.string());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Flags shared by train and ablate; unset ones leave the config untouched.
struct TrainFlags {
  std::string config;
  std::optional<std::string> variant;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<int> image_size;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_steps;
  bool no_augment = false;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app, bool with_variant) {
    app->add_option("--config", config, "Training config file (key = value lines)");
    if (with_variant) app->add_option("--variant", variant, "Model/loss variant (base, v1..v5, relu_mlp, recon_plain, recon_soft, skfusion)");
    app->add_option("--epochs", epochs, "Number of epochs");
    app->add_option("--batch-size", batch_size, "Images per optimizer step");
    app->add_option("--lr", lr, "Initial learning rate");
    app->add_option("--image-size", image_size, "Square training size in pixels (0 keeps native size)");
    app->add_option("--seed", seed, "Seed for initialization, ordering and augmentation (default 0)");
    app->add_option("--max-steps", max_steps, "Stop after this many optimizer steps (0 = no limit)");
    app->add_flag("--no-augment", no_augment, "Disable random flips and rotations");
    app->add_option("--set", overrides, "Override any config key, as key=value (repeatable)");
  }

  TrainConfig resolve() const {
    TrainConfig cfg = config.empty() ? TrainConfig{} : TrainConfig::load(config);
    if (variant) cfg.set("variant", *variant);
    for (const auto& kvp : overrides) {
      const auto eq = kvp.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kvp + "'");
      const std::string key = kv::trim(kvp.substr(0, eq));
      if (!cfg.set(key, kvp.substr(eq + 1))) throw UsageError("--set: unknown config key '" + key + "'");
    }
    if (epochs) cfg.epochs = *epochs;
    if (batch_size) cfg.batch_size = *batch_size;
    if (lr) cfg.lr0 = *lr;
    if (image_size) cfg.image_size = *image_size;
    if (seed) cfg.seed = *seed;
    if (max_steps) cfg.max_steps = *max_steps;
    if (no_augment) cfg.augment = false;
    cfg.validate();
    return cfg;
  }
};

LoadOptions load_options(const TrainConfig& cfg) { return {cfg.image_size, cfg.interpolation}; }

// --- synthesize -------------------------------------------------------------

struct SynthesizeArgs {
  std::string clean_dir;
  std::string out_dir;
  std::string types = "I,3";
  double depth_min = 0.5;
  double depth_max = 5.0;
  int count = 0;
  std::uint64_t seed = 0;
  std::string water_table;
  int generate_clean = 0;
  int scene_size = 128;
};

int run_synthesize(const SynthesizeArgs& a) {
  SynthesisOptions o;
  o.types.clear();
  for (const auto& t : kv::split(a.types, ',')) o.types.push_back(parse_water_type(t));
  o.depth_min = a.depth_min;
  o.depth_max = a.depth_max;
  o.count = a.count;
  o.seed = a.seed;
  if (!a.water_table.empty()) o.table = WaterTypeTable::load(a.water_table);
  if (a.generate_clean > 0) {
    write_clean_scenes(a.clean_dir, a.generate_clean, a.scene_size, a.scene_size, a.seed);
    std::cerr << "wrote " << a.generate_clean << " procedural clean scenes to " << a.clean_dir << '\n';
  }
  const DatasetManifest m = build_synthetic_corpus(a.clean_dir, a.out_dir, o);
  std::cout << "manifest " << (fs::path(a.out_dir) / "manifest.txt").string() << '\n'
            << "entries " << m.entries.size() << " (train " << m.count(Split::Train) << ", val "
            << m.count(Split::Val) << ", test " << m.count(Split::Test) << ")\n";
  return kExitOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  TrainFlags flags;
  std::string data;
  std::string out_dir;
  std::string resume;
  bool init_only = false;
};

int run_train(const TrainArgs& a) {
  const fs::path out(a.out_dir);
  fs::create_directories(out);
  TrainState state = a.resume.empty() ? TrainState(a.flags.resolve()) : load_checkpoint(a.resume);
  if (!a.resume.empty()) {
    // Schedule flags may extend a resumed run; the architecture stays fixed.
    const TrainConfig requested = a.flags.resolve();
    if (!(requested.model == state.config.model)) {
      throw IncompatibleError("resume: configured model differs from the checkpoint's model");
    }
    state.config.epochs = requested.epochs;
    state.config.max_steps = requested.max_steps;
  }
  write_file(out / "config.txt", state.config.serialize());
  std::cerr << "model " << variant_name(state.config.variant) << ": " << state.model.count_params() << " params, "
            << state.model.count_macs(256, 256) << " MACs at 256x256\n";
  if (a.init_only) {
    save_checkpoint(state, out / "last.wfk");
    std::cout << "checkpoint " << (out / "last.wfk").string() << '\n';
    return kExitOk;
  }
  if (a.data.empty()) throw UsageError("train: --data is required unless --init-only is given");
  const DatasetManifest manifest = DatasetManifest::load(a.data);
  const auto opts = load_options(state.config);
  const auto train_set = load_split(manifest, Split::Train, opts);
  const auto val_set = load_split(manifest, Split::Val, opts);
  if (train_set.empty()) throw IngestionError("manifest " + a.data + " has no train entries");
  std::cerr << "train " << train_set.size() << " pairs, val " << val_set.size() << " pairs\n";

  TrainHooks hooks;
  hooks.best_checkpoint = out / "best.wfk";
  hooks.last_checkpoint = out / "last.wfk";
  hooks.on_epoch = [&](const EpochSummary& s) {
    std::cerr << "epoch " << s.epoch << " loss " << s.train_loss;
    if (s.val_psnr) std::cerr << " val_l1 " << *s.val_l1 << " val_psnr " << *s.val_psnr;
    std::cerr << '\n';
  };
  const auto t0 = std::chrono::steady_clock::now();
  train(state, train_set, val_set, hooks);
  if (state.history.empty() || state.epoch == 0) save_checkpoint(state, out / "last.wfk");
  write_file(out / "loss_curve.csv", loss_curve_csv(state.history));
  std::cout << "steps " << state.step << " epochs " << state.epoch << " time " << seconds_since(t0) << " s\n";
  if (std::isfinite(state.best_val_psnr)) std::cout << "best val psnr " << state.best_val_psnr << '\n';
  return kExitOk;
}

// --- enhance ----------------------------------------------------------------

struct EnhanceArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
};

int run_enhance(const EnhanceArgs& a) {
  TrainState state = load_checkpoint(a.checkpoint);
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.input)) {
    inputs = list_images(a.input);
  } else if (fs::is_regular_file(a.input)) {
    inputs.push_back(a.input);
  } else {
    throw IngestionError("input not found: " + a.input);
  }
  if (inputs.empty()) throw IngestionError("no PNG/JPEG images in " + a.input);
  fs::create_directories(a.output);
  std::cout << "model " << state.model.count_params() << " params, " << state.model.count_macs(256, 256)
            << " MACs at 256x256\n";
  for (const auto& in : inputs) {
    const ImageRGB img = load_image(in);
    const auto t0 = std::chrono::steady_clock::now();
    const ImageRGB out = state.model.enhance(img);
    const double dt = seconds_since(t0);
    const fs::path dst = fs::path(a.output) / (in.stem().string() + ".png");
    save_png(dst, out);
    char line[256];
    std::snprintf(line, sizeof line, "%s %dx%d %.3f s\n", in.filename().string().c_str(), img.width(), img.height(),
                  dt);
    std::cout << line;
  }
  return kExitOk;
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string pred;
  std::string ref;
  bool no_ref = false;
  std::string output;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.ref.empty() == !a.no_ref) throw UsageError("evaluate: give exactly one of --ref or --no-ref");
  const auto preds = list_images(a.pred);
  if (preds.empty()) throw IngestionError("no PNG/JPEG images in " + a.pred);
  MetricReport report;
  if (a.no_ref) {
    for (const auto& p : preds) report.add(evaluate_single(p.stem().string(), load_image(p)));
  } else {
    const auto refs = list_images(a.ref);
    if (refs.empty()) throw IngestionError("no PNG/JPEG images in " + a.ref);
    std::map<std::string, fs::path> by_stem;
    for (const auto& r : refs) by_stem[r.stem().string()] = r;
    std::set<std::string> pred_stems;
    std::vector<std::string> orphans;
    for (const auto& p : preds) {
      pred_stems.insert(p.stem().string());
      if (!by_stem.count(p.stem().string())) orphans.push_back("pred:" + p.filename().string());
    }
    for (const auto& [stem, r] : by_stem)
      if (!pred_stems.count(stem)) orphans.push_back("ref:" + r.filename().string());
    if (!orphans.empty()) {
      std::string msg = "unmatched basenames:";
      for (const auto& o : orphans) msg += " " + o;
      throw IngestionError(msg);
    }
    for (const auto& p : preds) {
      const ImageRGB pred = load_image(p);
      const ImageRGB ref = load_image(by_stem.at(p.stem().string()));
      report.add(evaluate_pair(p.stem().string(), ref, pred, true));
    }
  }
  const std::string csv = report.to_csv();
  std::cout << csv;
  const fs::path out = a.output.empty() ? fs::path(a.pred) / "metrics.csv" : fs::path(a.output);
  write_file(out, csv);
  std::cerr << report.summary() << "report " << out.string() << '\n';
  return kExitOk;
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  TrainFlags flags;
  std::string variants = "base,v1,v2,v3,v4,v5";
  std::string data;
  std::string out_dir;
};

int run_ablate(const AblateArgs& a) {
  std::vector<Variant> variants;
  for (const auto& name : kv::split(a.variants, ',')) {
    try {
      variants.push_back(parse_variant(name));
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  const TrainConfig base = a.flags.resolve();
  const DatasetManifest manifest = DatasetManifest::load(a.data);
  const auto train_set = load_split(manifest, Split::Train, load_options(base));
  const auto test_set = load_split(manifest, Split::Test, load_options(base));
  if (train_set.empty() || test_set.empty()) throw IngestionError("manifest needs train and test entries");
  AblationOptions opts;
  opts.base = base;
  std::vector<VariantReport> reports;
  for (Variant v : variants) {
    const auto t0 = std::chrono::steady_clock::now();
    reports.push_back(run_variant(v, train_set, test_set, opts));
    std::cerr << variant_name(v) << " done in " << seconds_since(t0) << " s, loss "
              << (reports.back().loss_decreasing() ? "decreasing" : "not decreasing") << '\n';
    if (!a.out_dir.empty()) {
      write_file(fs::path(a.out_dir) / ("loss_" + std::string(variant_name(v)) + ".csv"),
                 loss_curve_csv(reports.back().history));
    }
  }
  std::cout << ablation_table(reports);
  if (!a.out_dir.empty()) write_file(fs::path(a.out_dir) / "ablation.csv", ablation_csv(reports));
  return kExitOk;
}

// --- inspect ----------------------------------------------------------------

struct InspectArgs {
  std::string checkpoint;
  std::string config;
  std::optional<std::string> variant;
  int size = 256;
  bool list_params = false;
};

int run_inspect(const InspectArgs& a) {
  std::optional<TrainState> state;
  TrainConfig cfg;
  if (!a.checkpoint.empty()) {
    state.emplace(load_checkpoint(a.checkpoint));
    cfg = state->config;
  } else {
    if (!a.config.empty()) cfg = TrainConfig::load(a.config);
    if (a.variant) cfg.set("variant", *a.variant);
    cfg.validate();
  }
  const WaterFormer<float> fresh(cfg.model);
  const WaterFormer<float>& model = state ? state->model : fresh;
  std::cout << cfg.serialize();
  std::cout << "params = " << model.count_params() << '\n';
  std::cout << "macs_at_" << a.size << " = " << model.count_macs(a.size, a.size) << '\n';
  if (state) {
    std::cout << "epoch = " << state->epoch << "\nstep = " << state->step << "\nhistory = " << state->history.size()
              << '\n';
  }
  if (a.list_params) {
    for (const auto& p : model.parameters()) std::cout << p.name << ' ' << to_string(p.value.shape()) << '\n';
  }
  return kExitOk;
}

int classify(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
  if (dynamic_cast<const IngestionError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
      dynamic_cast<const IncompatibleError*>(&e) || dynamic_cast<const DimensionError*>(&e)) {
    return kExitData;
  }
  return kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WaterFormer underwater image enhancement"};
  app.require_subcommand(1);

  SynthesizeArgs syn;
  auto* s = app.add_subcommand("synthesize", "Build a paired corpus by degrading clean images with water types");
  s->add_option("--clean-dir", syn.clean_dir, "Directory of clean PNG/JPEG images")->required();
  s->add_option("--out-dir", syn.out_dir, "Output corpus directory")->required();
  s->add_option("--types", syn.types, "Comma-separated water types (I, IA, IB, II, III, 1, 3, 5, 7, 9)");
  s->add_option("--depth-min", syn.depth_min, "Minimum scene depth in metres");
  s->add_option("--depth-max", syn.depth_max, "Maximum scene depth in metres");
  s->add_option("--count", syn.count, "Number of clean images to use (0 = all)");
  s->add_option("--seed", syn.seed, "Seed for depths and splits (default 0)");
  s->add_option("--water-table", syn.water_table, "Water type coefficient file (default: built-in table)");
  s->add_option("--generate-clean", syn.generate_clean, "First write this many procedural scenes into --clean-dir");
  s->add_option("--scene-size", syn.scene_size, "Side length of generated scenes");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a manifest");
  tr.flags.add_to(t, true);
  t->add_option("--data", tr.data, "Dataset manifest");
  t->add_option("--out-dir", tr.out_dir, "Directory for checkpoints, config echo and loss curve")->required();
  t->add_option("--resume", tr.resume, "Continue from a checkpoint");
  t->add_flag("--init-only", tr.init_only, "Write the freshly initialized model as last.wfk and stop");

  EnhanceArgs en;
  auto* e = app.add_subcommand("enhance", "Enhance images with a trained checkpoint");
  e->add_option("--checkpoint", en.checkpoint, "Checkpoint file")->required();
  e->add_option("--input", en.input, "Input image or directory")->required();
  e->add_option("--output", en.output, "Output directory for PNGs")->required();

  EvaluateArgs ev;
  auto* v = app.add_subcommand("evaluate", "Score predictions with SSIM, PSNR, NRMSE, UCIQE, UIQM");
  v->add_option("--pred", ev.pred, "Directory of predicted images")->required();
  v->add_option("--ref", ev.ref, "Directory of reference images with matching basenames");
  v->add_flag("--no-ref", ev.no_ref, "Only no-reference metrics (UCIQE, UIQM)");
  v->add_option("--output", ev.output, "Report CSV path (default <pred>/metrics.csv)");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and compare ablation variants");
  ab.flags.add_to(b, false);
  b->add_option("--variants", ab.variants, "Comma-separated variants");
  b->add_option("--data", ab.data, "Dataset manifest")->required();
  b->add_option("--out-dir", ab.out_dir, "Directory for the report CSV and loss curves");

  InspectArgs in;
  auto* i = app.add_subcommand("inspect", "Show configuration, parameter count and MACs");
  i->add_option("--checkpoint", in.checkpoint, "Checkpoint file");
  i->add_option("--config", in.config, "Training config file");
  i->add_option("--variant", in.variant, "Variant to describe");
  i->add_option("--size", in.size, "Square resolution for the MAC count");
  i->add_flag("--params", in.list_params, "List every parameter with its shape");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*s) return run_synthesize(syn);
    if (*t) return run_train(tr);
    if (*e) return run_enhance(en);
    if (*v) return run_evaluate(ev);
    if (*b) return run_ablate(ab);
    if (*i) return run_inspect(in);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return classify(err);
  }
  return kExitUsage;
}
