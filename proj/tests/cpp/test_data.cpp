#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "helpers.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/data.hpp"
#include "waterformer/physics.hpp"

using namespace waterformer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wf_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("png round trip is exact on 8-bit levels") {
    std::mt19937_64 rng(1);
    const ImageRGB img = quantize8(wft::random_image(7, 9, rng));
    const fs::path dir = scratch("png");
    save_png(dir / "a.png", img);
    const ImageRGB back = load_image(dir / "a.png");
    REQUIRE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) < 1e-12);
    CHECK(is_image_file(dir / "a.png"));
    CHECK(is_image_file("x.JPG"));
    CHECK_FALSE(is_image_file("x.txt"));
  }

  TEST_CASE("undecodable and missing files are ingestion errors") {
    const fs::path dir = scratch("bad");
    std::ofstream(dir / "bad.png") << "not an image";
    CHECK_THROWS_AS(load_image(dir / "bad.png"), IngestionError);
    CHECK_THROWS_AS(load_image(dir / "missing.png"), IngestionError);
  }

  TEST_CASE("resize") {
    std::mt19937_64 rng(2);
    const ImageRGB img = wft::random_image(8, 8, rng);
    CHECK(resize(img, 8, 8) == img);
    const ImageRGB small = resize(img, 4, 6);
    CHECK(small.height() == 4);
    CHECK(small.width() == 6);
    CHECK(small.is_valid());
    const ImageRGB flat = resize(ImageRGB(5, 5, 0.25), 9, 3, Interpolation::Area);
    for (double v : flat.pixels()) CHECK(v == doctest::Approx(0.25));
  }

  TEST_CASE("split assignment") {
    const auto s = assign_splits(40, 0);
    CHECK(std::count(s.begin(), s.end(), Split::Val) == 4);
    CHECK(std::count(s.begin(), s.end(), Split::Test) == 4);
    CHECK(std::count(s.begin(), s.end(), Split::Train) == 32);
    CHECK(assign_splits(40, 0) == s);
    CHECK(assign_splits(40, 1) != s);
    const auto three = assign_splits(3, 5);
    CHECK(std::set<Split>(three.begin(), three.end()).size() == 3);
  }

  TEST_CASE("manifest text round trip and duplicate ids") {
    DatasetManifest m;
    m.seed = 7;
    m.entries = {{"degraded/a.png", "reference/a.png", Split::Train}, {"degraded/b.png", "reference/b.png", Split::Test}};
    const DatasetManifest back = DatasetManifest::parse(m.serialize(), "/tmp");
    CHECK(back.seed == 7);
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[1].split == Split::Test);
    CHECK(back.entries[1].id() == "b");
    CHECK(back.count(Split::Train) == 1);
    m.entries.push_back({"other/a.png", "reference/c.png", Split::Val});
    CHECK_THROWS_AS(m.validate(), IngestionError);
    CHECK_THROWS_AS(DatasetManifest::parse("a.png,b.png\n", "/tmp"), IngestionError);
    CHECK_THROWS_AS(DatasetManifest::parse("a.png,b.png,holdout\n", "/tmp"), IngestionError);
  }

  TEST_CASE("augmentation draws apply the same transform to both images") {
    std::mt19937_64 rng(3);
    PairedSample s{wft::random_image(5, 7, rng), wft::random_image(5, 7, rng), "x"};
    s.reference = s.degraded;
    std::mt19937_64 a(9), b(9);
    for (int i = 0; i < 20; ++i) {
      const PairedSample out = augment(s, a);
      CHECK(out.degraded == out.reference);
      const AugmentDraw d = draw_augment(b);
      CHECK(apply_augment(s.degraded, d) == out.degraded);
      if (d.rot90 % 2) CHECK(out.degraded.height() == 7);
    }
  }

  TEST_CASE("rotation and flips") {
    ImageRGB img(2, 3);
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) img.at(y, x, 0) = y * 3 + x;
    const ImageRGB r = apply_augment(img, {false, false, 1});
    REQUIRE(r.height() == 3);
    // Counter-clockwise: the top row becomes the left column read bottom-up.
    CHECK(r.at(0, 0, 0) == 2);
    CHECK(r.at(2, 0, 0) == 0);
    CHECK(r.at(2, 1, 0) == 3);
    CHECK(apply_augment(apply_augment(img, {false, false, 2}), {false, false, 2}) == img);
    CHECK(apply_augment(apply_augment(img, {true, false, 0}), {true, false, 0}) == img);
    CHECK(apply_augment(img, {true, true, 0}) == apply_augment(img, {false, false, 2}));
  }

  TEST_CASE("epoch order is a seeded permutation") {
    const auto o = epoch_order(10, 0, 1);
    std::vector<std::size_t> sorted = o;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
    CHECK(epoch_order(10, 0, 1) == o);
    CHECK(epoch_order(10, 1, 1) != o);
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  }

  TEST_CASE("procedural scenes are deterministic and valid") {
    const ImageRGB a = generate_clean_scene(32, 24, 5);
    CHECK(a.is_valid());
    CHECK(a == generate_clean_scene(32, 24, 5));
    CHECK_FALSE(a == generate_clean_scene(32, 24, 6));
  }

  TEST_CASE("synthetic corpus stores recoverable pairs") {
    const fs::path root = scratch("corpus");
    write_clean_scenes(root / "clean", 10, 24, 24, 0);
    SynthesisOptions o;
    o.types = {WaterType::I, WaterType::Coastal5};
    const DatasetManifest m = build_synthetic_corpus(root / "clean", root / "out", o);
    CHECK(m.entries.size() == 20);
    CHECK(m.count(Split::Val) == 2);
    CHECK(m.count(Split::Test) == 2);
    // Both water types of a scene share one split.
    for (std::size_t i = 0; i < m.entries.size(); i += 2) CHECK(m.entries[i].split == m.entries[i + 1].split);
    const DatasetManifest loaded = DatasetManifest::load(root / "out" / "manifest.txt");
    CHECK(loaded.serialize() == m.serialize());
    for (const auto& e : loaded.entries) {
      const PairedSample s = load_pair(loaded, e, {0, Interpolation::Bilinear});
      const SyntheticParams p = SyntheticParams::load(params_path(loaded, e));
      CHECK(p.depth_top >= 0.5);
      CHECK(p.depth_bottom <= 5.0);
      const DegradationParams d = p.degradation(s.reference.height(), s.reference.width());
      const ImageRGB exact = degrade(s.reference, d).image;
      CHECK(quantize8(exact) == s.degraded);
      const ImageRGB back = recover_analytic(exact, d).image;
      double worst = 0;
      for (std::size_t i = 0; i < back.size(); ++i)
        worst = std::max(worst, std::abs(back.pixels()[i] - s.reference.pixels()[i]));
      CHECK(worst <= 1e-6);
    }
    const auto train = load_split(loaded, Split::Train, {16, Interpolation::Bilinear});
    CHECK(train.size() == 16);
    CHECK(train[0].degraded.height() == 16);
  }

  TEST_CASE("synthesis input errors") {
    const fs::path root = scratch("empty");
    fs::create_directories(root / "clean");
    CHECK_THROWS_AS(build_synthetic_corpus(root / "clean", root / "out", {}), IngestionError);
    CHECK_THROWS_AS(build_synthetic_corpus(root / "missing", root / "out", {}), IngestionError);
    SynthesisOptions o;
    o.types.clear();
    CHECK_THROWS_AS(build_synthetic_corpus(root / "clean", root / "out", o), ConfigError);
  }

  TEST_CASE("synthetic params text round trip") {
    SyntheticParams p;
    p.type = WaterType::Coastal7;
    p.profile = DepthProfile::Gradient;
    p.depth_top = 0.75;
    p.depth_bottom = 3.5;
    const SyntheticParams q = SyntheticParams::parse(p.serialize());
    CHECK(q.type == p.type);
    CHECK(q.profile == p.profile);
    CHECK(q.depth_top == p.depth_top);
    CHECK(q.depth_bottom == p.depth_bottom);
    const Plane d = q.depth_map(5, 2);
    CHECK(d.at(0, 0) == 0.75);
    CHECK(d.at(4, 1) == 3.5);
  }
}
