#include "waterformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <set>
#include <sstream>

#include "waterformer/errors.hpp"
#include "waterformer/keyvalue.hpp"

namespace waterformer {
namespace fs = std::filesystem;
namespace {

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IngestionError("cannot write " + path.string());
}

cv::Mat to_mat(const ImageRGB& img) {
  cv::Mat m(img.height(), img.width(), CV_64FC3);
  std::copy(img.pixels().begin(), img.pixels().end(), m.ptr<double>());
  return m;
}

ImageRGB from_mat(const cv::Mat& m) {
  ImageRGB img(m.rows, m.cols);
  const cv::Mat c = m.isContinuous() ? m : m.clone();
  std::copy(c.ptr<double>(), c.ptr<double>() + img.size(), img.pixels().begin());
  return img;
}

}  // namespace

Interpolation parse_interpolation(std::string_view name) {
  if (name == "bilinear") return Interpolation::Bilinear;
  if (name == "area") return Interpolation::Area;
  if (name == "nearest") return Interpolation::Nearest;
  throw ConfigError("unknown interpolation '" + std::string(name) + "' (expected bilinear, area or nearest)");
}

ImageRGB load_image(const fs::path& path) {
  if (!fs::exists(path)) throw IngestionError("missing image file " + path.string());
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IngestionError("cannot decode image " + path.string());
  if (raw.depth() != CV_8U) throw IngestionError("not an 8-bit image: " + path.string());
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1:
      cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB);
      break;
    case 3:
      cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
      break;
    case 4:
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      break;
    default:
      throw IngestionError("unsupported channel count in " + path.string());
  }
  ImageRGB img(rgb.rows, rgb.cols);
  auto px = img.pixels();
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int i = 0; i < rgb.cols * 3; ++i) px[static_cast<std::size_t>(y) * rgb.cols * 3 + i] = row[i] / 255.0;
  }
  return img;
}

ImageRGB quantize8(const ImageRGB& img) {
  ImageRGB out = img;
  for (double& v : out.pixels()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

void save_png(const fs::path& path, const ImageRGB& img) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::round(std::clamp(img.at(y, x, c), 0.0, 1.0) * 255.0);
        row[x * 3 + (2 - c)] = static_cast<std::uint8_t>(v);
      }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw IngestionError("cannot write image " + path.string());
}

ImageRGB resize(const ImageRGB& img, int height, int width, Interpolation interp) {
  if (height < 1 || width < 1) throw DimensionError("resize: target size must be positive");
  if (img.height() == height && img.width() == width) return img;
  int flag = cv::INTER_LINEAR;
  if (interp == Interpolation::Area) flag = cv::INTER_AREA;
  if (interp == Interpolation::Nearest) flag = cv::INTER_NEAREST;
  cv::Mat out;
  cv::resize(to_mat(img), out, cv::Size(width, height), 0, 0, flag);
  ImageRGB r = from_mat(out);
  r.clamp();
  return r;
}

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestionError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw IngestionError("unknown split tag '" + std::string(name) + "'");
}

std::string ManifestEntry::id() const { return fs::path(degraded).stem().string(); }

std::vector<ManifestEntry> DatasetManifest::split(Split which) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == which) out.push_back(e);
  return out;
}

std::size_t DatasetManifest::count(Split which) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == which; }));
}

std::string DatasetManifest::serialize() const {
  std::ostringstream out;
  out << "# seed = " << seed << '\n';
  for (const auto& e : entries) out << e.degraded << ',' << e.reference << ',' << split_name(e.split) << '\n';
  return out.str();
}

DatasetManifest DatasetManifest::parse(std::string_view text, const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = kv::trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto eq = t.find('=');
      if (eq != std::string::npos && kv::trim(t.substr(1, eq - 1)) == "seed") {
        m.seed = kv::to_uint64("manifest seed", t.substr(eq + 1));
      }
      continue;
    }
    const auto fields = kv::split(t, ',');
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw IngestionError("manifest line " + std::to_string(line_no) + ": expected 'degraded,reference,split'");
    }
    m.entries.push_back({fields[0], fields[1], parse_split(fields[2])});
  }
  m.validate();
  return m;
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  return parse(read_text(path), path.has_parent_path() ? path.parent_path() : fs::path("."));
}

void DatasetManifest::save(const fs::path& path) const { write_text(path, serialize()); }

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id()).second) throw IngestionError("manifest: duplicate id " + e.id());
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer applied to a running combination.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

}  // namespace

std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<Split> out(n, Split::Train);
  if (n < 3) return out;
  const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n))));
  const auto order = permutation(n, derive_seed(seed, n, 0x5b1));
  for (std::size_t i = 0; i < held; ++i) out[order[i]] = Split::Val;
  for (std::size_t i = held; i < 2 * held; ++i) out[order[i]] = Split::Test;
  return out;
}

PairedSample load_pair(const DatasetManifest& manifest, const ManifestEntry& entry, const LoadOptions& options) {
  PairedSample s;
  s.id = entry.id();
  s.degraded = load_image(manifest.root / entry.degraded);
  s.reference = load_image(manifest.root / entry.reference);
  if (options.size > 0) {
    s.degraded = resize(s.degraded, options.size, options.size, options.interpolation);
    s.reference = resize(s.reference, options.size, options.size, options.interpolation);
  } else if (!s.degraded.same_shape(s.reference)) {
    throw IngestionError("pair " + s.id + ": degraded and reference sizes differ");
  }
  return s;
}

std::vector<PairedSample> load_split(const DatasetManifest& manifest, Split which, const LoadOptions& options) {
  std::vector<PairedSample> out;
  for (const auto& e : manifest.split(which)) out.push_back(load_pair(manifest, e, options));
  return out;
}

AugmentDraw draw_augment(std::mt19937_64& rng) {
  AugmentDraw d;
  d.hflip = (rng() & 1U) != 0;
  d.vflip = (rng() & 1U) != 0;
  d.rot90 = static_cast<int>(rng() % 4);
  return d;
}

ImageRGB apply_augment(const ImageRGB& img, const AugmentDraw& draw) {
  ImageRGB cur = img;
  if (draw.hflip || draw.vflip) {
    ImageRGB out(cur.height(), cur.width());
    for (int y = 0; y < cur.height(); ++y)
      for (int x = 0; x < cur.width(); ++x) {
        const int sy = draw.vflip ? cur.height() - 1 - y : y;
        const int sx = draw.hflip ? cur.width() - 1 - x : x;
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = cur.at(sy, sx, c);
      }
    cur = std::move(out);
  }
  for (int k = 0; k < draw.rot90; ++k) {
    // Counter-clockwise quarter turn.
    ImageRGB out(cur.width(), cur.height());
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = cur.at(x, cur.width() - 1 - y, c);
    cur = std::move(out);
  }
  return cur;
}

PairedSample augment(const PairedSample& sample, std::mt19937_64& rng) {
  const AugmentDraw d = draw_augment(rng);
  return {apply_augment(sample.degraded, d), apply_augment(sample.reference, d), sample.id};
}

std::vector<std::size_t> epoch_order(std::size_t n, int epoch, std::uint64_t seed) {
  return permutation(n, derive_seed(seed, static_cast<std::uint64_t>(epoch), n));
}

ImageRGB generate_clean_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto color = [&] { return std::array<double, 3>{unit_draw(rng), unit_draw(rng), unit_draw(rng)}; };
  ImageRGB img(height, width);
  const auto top = color();
  const auto bottom = color();
  const double angle = unit_draw(rng) * 2.0 * std::numbers::pi;
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = 0.5 + 0.5 * (ca * (x / double(width) - 0.5) + sa * (y / double(height) - 0.5)) * 1.4;
      const double t = std::clamp(u, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = top[c] * (1 - t) + bottom[c] * t;
    }

  const int shapes = 4 + static_cast<int>(rng() % 6);
  for (int s = 0; s < shapes; ++s) {
    const auto col = color();
    const double cx = unit_draw(rng) * width, cy = unit_draw(rng) * height;
    const double rx = (0.08 + 0.25 * unit_draw(rng)) * width, ry = (0.08 + 0.25 * unit_draw(rng)) * height;
    const bool ellipse = (rng() & 1U) != 0;
    const double soft = 1.5;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        const double d = ellipse ? std::sqrt(dx * dx + dy * dy) : std::max(std::abs(dx), std::abs(dy));
        const double edge = (1.0 - d) * std::min(rx, ry) / soft;
        const double a = std::clamp(edge, 0.0, 1.0);
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = img.at(y, x, c) * (1 - a) + col[c] * a;
      }
  }

  const double fx = 2.0 + 10.0 * unit_draw(rng), fy = 2.0 + 10.0 * unit_draw(rng);
  const double amp = 0.04 + 0.06 * unit_draw(rng);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double tex = amp * std::sin(2 * std::numbers::pi * (fx * x / width + fy * y / height));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(img.at(y, x, c) + tex, 0.0, 1.0);
    }
  return img;
}

Plane SyntheticParams::depth_map(int height, int width) const {
  Plane d(height, width);
  for (int y = 0; y < height; ++y) {
    const double t = height > 1 ? static_cast<double>(y) / (height - 1) : 0.0;
    const double v = profile == DepthProfile::Constant ? depth_top : depth_top + (depth_bottom - depth_top) * t;
    for (int x = 0; x < width; ++x) d.at(y, x) = v;
  }
  return d;
}

DegradationParams SyntheticParams::degradation(int height, int width, const WaterTypeTable& table) const {
  return make_water_type(type, depth_map(height, width), table);
}

std::string SyntheticParams::serialize() const {
  std::ostringstream out;
  out << "water_type = " << water_type_name(type) << '\n';
  out << "profile = " << (profile == DepthProfile::Constant ? "constant" : "gradient") << '\n';
  out << "depth_top = " << kv::format_double(depth_top) << '\n';
  out << "depth_bottom = " << kv::format_double(depth_bottom) << '\n';
  return out.str();
}

SyntheticParams SyntheticParams::parse(std::string_view text) {
  SyntheticParams p;
  for (const auto& e : kv::parse(text, "synthetic params")) {
    if (e.key == "water_type") {
      p.type = parse_water_type(e.value);
    } else if (e.key == "profile") {
      if (e.value == "constant") {
        p.profile = DepthProfile::Constant;
      } else if (e.value == "gradient") {
        p.profile = DepthProfile::Gradient;
      } else {
        throw ConfigError("synthetic params: unknown depth profile '" + e.value + "'");
      }
    } else if (e.key == "depth_top") {
      p.depth_top = kv::to_double(e.key, e.value);
    } else if (e.key == "depth_bottom") {
      p.depth_bottom = kv::to_double(e.key, e.value);
    } else {
      throw ConfigError("synthetic params: unknown key '" + e.key + "'");
    }
  }
  return p;
}

SyntheticParams SyntheticParams::load(const fs::path& path) { return parse(read_text(path)); }

fs::path params_path(const DatasetManifest& manifest, const ManifestEntry& entry) {
  return manifest.root / "params" / (entry.id() + ".txt");
}

void write_clean_scenes(const fs::path& dir, int count, int height, int width, std::uint64_t seed) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clean_%04d.png", i);
    save_png(dir / name, generate_clean_scene(height, width, derive_seed(seed, static_cast<std::uint64_t>(i), 0xc1ea)));
  }
}

DatasetManifest build_synthetic_corpus(const fs::path& clean_dir, const fs::path& out_dir,
                                       const SynthesisOptions& options) {
  if (options.types.empty()) throw ConfigError("synthesize: at least one water type is required");
  if (!(options.depth_min > 0.0 && options.depth_min <= options.depth_max)) {
    throw ConfigError("synthesize: depth range must satisfy 0 < min <= max");
  }
  auto clean = list_images(clean_dir);
  if (clean.empty()) throw IngestionError("no PNG/JPEG images in " + clean_dir.string());
  if (options.count > 0) {
    if (static_cast<std::size_t>(options.count) > clean.size()) {
      throw IngestionError("requested " + std::to_string(options.count) + " clean images but " + clean_dir.string() +
                           " holds " + std::to_string(clean.size()));
    }
    clean.resize(static_cast<std::size_t>(options.count));
  }

  fs::create_directories(out_dir / "degraded");
  fs::create_directories(out_dir / "reference");
  fs::create_directories(out_dir / "params");
  DatasetManifest m;
  m.root = out_dir;
  m.seed = options.seed;
  // Splits are assigned per clean scene so no scene content crosses splits.
  const auto splits = assign_splits(clean.size(), options.seed);
  std::mt19937_64 rng(derive_seed(options.seed, 0x5e7, 0));
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const ImageRGB ref = load_image(clean[i]);
    for (WaterType type : options.types) {
      SyntheticParams p;
      p.type = type;
      p.profile = (rng() & 1U) != 0 ? DepthProfile::Gradient : DepthProfile::Constant;
      const double span = options.depth_max - options.depth_min;
      p.depth_top = options.depth_min + span * unit_draw(rng);
      p.depth_bottom = p.profile == DepthProfile::Constant ? p.depth_top : options.depth_min + span * unit_draw(rng);
      const RangedImage degraded = degrade(ref, p.degradation(ref.height(), ref.width(), options.table));
      const std::string id = clean[i].stem().string() + "_" + std::string(water_type_name(type));
      const std::string deg_rel = "degraded/" + id + ".png";
      const std::string ref_rel = "reference/" + id + ".png";
      save_png(out_dir / deg_rel, degraded.image);
      save_png(out_dir / ref_rel, ref);
      write_text(out_dir / "params" / (id + ".txt"), p.serialize());
      m.entries.push_back({deg_rel, ref_rel, splits[i]});
    }
  }
  m.validate();
  m.save(out_dir / "manifest.txt");
  return m;
}

}  // namespace waterformer
