#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "waterformer/image.hpp"
#include "waterformer/physics.hpp"

namespace waterformer {

enum class Interpolation { Bilinear, Area, Nearest };
Interpolation parse_interpolation(std::string_view name);

// Decodes an 8-bit PNG/JPEG into [0,1] RGB. Throws IngestionError.
ImageRGB load_image(const std::filesystem::path& path);
// Writes an 8-bit PNG (values rounded to the nearest level).
void save_png(const std::filesystem::path& path, const ImageRGB& img);
// Rounds to 8-bit levels, as a PNG round trip would.
ImageRGB quantize8(const ImageRGB& img);
// Same-size requests return the input unchanged.
ImageRGB resize(const ImageRGB& img, int height, int width, Interpolation interp = Interpolation::Bilinear);

bool is_image_file(const std::filesystem::path& path);
// Image files directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

struct PairedSample {
  ImageRGB degraded;
  ImageRGB reference;
  std::string id;
};

enum class Split { Train, Val, Test };
std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct ManifestEntry {
  std::string degraded;   // relative to the manifest root
  std::string reference;  // relative to the manifest root
  Split split = Split::Train;

  // Degraded file stem; unique within a manifest.
  std::string id() const;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;

  std::vector<ManifestEntry> split(Split which) const;
  std::size_t count(Split which) const;

  // One "degraded,reference,split" line per entry after a "# seed = N" header.
  std::string serialize() const;
  static DatasetManifest parse(std::string_view text, const std::filesystem::path& root);
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  // Throws IngestionError on duplicate ids.
  void validate() const;
};

// 80/10/10 train/val/test split tags for n items, shuffled by seed. Every
// split is nonempty once n >= 3.
std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed);

struct LoadOptions {
  int size = 64;  // square training size; 0 keeps native resolution
  Interpolation interpolation = Interpolation::Bilinear;
};

PairedSample load_pair(const DatasetManifest& manifest, const ManifestEntry& entry, const LoadOptions& options = {});
std::vector<PairedSample> load_split(const DatasetManifest& manifest, Split which, const LoadOptions& options = {});

struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int rot90 = 0;  // counter-clockwise quarter turns, 0..3

  bool identity() const { return !hflip && !vflip && rot90 == 0; }
};

AugmentDraw draw_augment(std::mt19937_64& rng);
ImageRGB apply_augment(const ImageRGB& img, const AugmentDraw& draw);
// Draws once and applies the same transform to both images.
PairedSample augment(const PairedSample& sample, std::mt19937_64& rng);

// Training order for one epoch: a permutation of [0, n) that depends only on
// (n, epoch, seed).
std::vector<std::size_t> epoch_order(std::size_t n, int epoch, std::uint64_t seed);

// Mixes several integers into one 64-bit seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

// Random smooth scene with shapes and texture, standing in for a clean photo.
ImageRGB generate_clean_scene(int height, int width, std::uint64_t seed);

enum class DepthProfile { Constant, Gradient };

// Ground truth stored next to each synthetic pair.
struct SyntheticParams {
  WaterType type = WaterType::I;
  DepthProfile profile = DepthProfile::Constant;
  double depth_top = 1.0;
  double depth_bottom = 1.0;

  Plane depth_map(int height, int width) const;
  DegradationParams degradation(int height, int width, const WaterTypeTable& table = WaterTypeTable::builtin()) const;
  std::string serialize() const;
  static SyntheticParams parse(std::string_view text);
  static SyntheticParams load(const std::filesystem::path& path);
};

struct SynthesisOptions {
  std::vector<WaterType> types{WaterType::I, WaterType::Coastal3};
  double depth_min = 0.5;
  double depth_max = 5.0;
  int count = 0;  // clean images to use; 0 means all
  std::uint64_t seed = 0;
  WaterTypeTable table = WaterTypeTable::builtin();
};

// Degrades each clean image once per requested water type and writes
// degraded/, reference/, params/ and manifest.txt under out_dir.
DatasetManifest build_synthetic_corpus(const std::filesystem::path& clean_dir, const std::filesystem::path& out_dir,
                                       const SynthesisOptions& options);

// Writes `count` procedural scenes as clean_XXXX.png.
void write_clean_scenes(const std::filesystem::path& dir, int count, int height, int width, std::uint64_t seed);

// Side-file path for the ground truth of a manifest entry.
std::filesystem::path params_path(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace waterformer
