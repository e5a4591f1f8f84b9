#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/net.hpp"
#include "waterformer/tensor_image.hpp"

using namespace waterformer;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.stage_widths = {4, 8, 16};
  c.stage_depths = {1, 1, 1};
  c.decoder_depths = {1, 1};
  c.heads = {1, 2, 2};
  c.window_size = 4;
  return c;
}

template <typename T>
void randomize(WaterFormer<T>& model, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : model.parameters())
    for (auto& v : p.value.values()) v += static_cast<T>(u(rng));
}

std::vector<Parameter<double>*> all_params(WaterFormer<double>& model) {
  std::vector<Parameter<double>*> out;
  for (auto& p : model.parameters()) out.push_back(&p);
  return out;
}

}  // namespace

TEST_SUITE("net") {
  TEST_CASE("output shape matches input, including sides not divisible by 4") {
    WaterFormer<float> model(small_config(), 1);
    randomize(model, 2);
    std::mt19937_64 rng(3);
    for (auto [h, w] : {std::pair{16, 16}, std::pair{18, 13}, std::pair{5, 7}}) {
      const auto x = wft::random_tensor<float>({3, h, w}, rng, 0.0, 1.0);
      NoGradGuard guard;
      CHECK(model.forward(x)->shape() == Shape{3, h, w});
    }
  }

  TEST_CASE("fresh reference model is the identity") {
    WaterFormer<float> model(ModelConfig::reference(), 0);
    std::mt19937_64 rng(4);
    for (int side : {64, 250}) {
      const auto x = wft::random_tensor<float>({3, side, side}, rng, 0.0, 1.0);
      NoGradGuard guard;
      CHECK(model.forward(x)->value == x);
    }
  }

  TEST_CASE("rln standardizes each location and restores statistics") {
    WaterFormer<double> model(small_config(), 5);
    std::mt19937_64 rng(6);
    const auto x = wft::random_tensor({8, 6, 5}, rng, -2.0, 3.0);
    const RlnOutput<double> r = model.rln(constant(x), "enc2.block0.norm");
    const auto& s = r.standardized->value;
    for (int y = 0; y < 6; ++y)
      for (int xx = 0; xx < 5; ++xx) {
        double m = 0, v = 0;
        for (int c = 0; c < 8; ++c) m += s.at(c, y, xx);
        m /= 8;
        for (int c = 0; c < 8; ++c) v += (s.at(c, y, xx) - m) * (s.at(c, y, xx) - m);
        v /= 8;
        CHECK(std::abs(m) < 1e-12);
        CHECK(std::abs(v - 1.0) < 1e-4);
      }
    CHECK(r.normalized->value == s);
    CHECK(r.rescale->shape() == x.shape());
    CHECK(r.rebias->shape() == x.shape());
  }

  TEST_CASE("rln gradients") {
    WaterFormer<double> model(small_config(), 7);
    randomize(model, 8);
    std::mt19937_64 rng(9);
    Parameter<double> x("x", wft::random_tensor({8, 3, 4}, rng));
    auto params = std::vector<Parameter<double>*>{&x};
    for (const char* n : {".weight", ".bias", ".meta1.weight", ".meta1.bias", ".meta2.weight", ".meta2.bias"})
      params.push_back(&model.parameter(std::string("enc2.block0.norm") + n));
    auto f = [&] {
      const auto r = model.rln(parameter(x), "enc2.block0.norm");
      return ops::add(ops::mul(r.normalized, r.rescale), r.rebias);
    };
    CHECK(wft::grad_check(params, f) < 1e-6);
  }

  TEST_CASE("mlp with a zero funnel reduces to relu") {
    WaterFormer<double> frelu(small_config(), 10);
    ModelConfig rc = small_config();
    rc.mlp_activation = MlpActivation::Relu;
    WaterFormer<double> relu(rc, 10);
    for (auto& p : relu.parameters()) frelu.parameter(p.name).value = p.value;
    frelu.parameter("enc2.block0.mlp.funnel.weight").value.fill(0.0);
    frelu.parameter("enc2.block0.mlp.funnel.bias").value.fill(0.0);
    std::mt19937_64 rng(11);
    const auto x = constant(wft::random_tensor({8, 4, 4}, rng));
    CHECK(frelu.mlp(x, "enc2.block0.mlp")->value == relu.mlp(x, "enc2.block0.mlp")->value);
  }

  TEST_CASE("block gradients") {
    WaterFormer<double> model(small_config(), 12);
    randomize(model, 13);
    std::mt19937_64 rng(14);
    Parameter<double> x("x", wft::random_tensor({8, 4, 4}, rng));
    auto with = [&](const std::string& prefix) {
      std::vector<Parameter<double>*> ps{&x};
      for (auto& p : model.parameters())
        if (p.name.rfind(prefix, 0) == 0) ps.push_back(&p);
      return ps;
    };
    CHECK(wft::grad_check(with("enc2.block0.mlp"), [&] { return model.mlp(parameter(x), "enc2.block0.mlp"); }) < 1e-6);
    CHECK(wft::grad_check(with("enc2.block0"), [&] {
            return model.attention_block(parameter(x), "enc2.block0", 2, nullptr);
          }) < 1e-6);
    CHECK(wft::grad_check(with("enc2.crb"), [&] { return model.crb(parameter(x), "enc2.crb", 2, nullptr); }) < 1e-6);
    Parameter<double> s("s", wft::random_tensor({4, 8, 8}, rng));
    Parameter<double> u("u", wft::random_tensor({4, 8, 8}, rng));
    auto fp = with("fuse1");
    fp.push_back(&s);
    fp.push_back(&u);
    CHECK(wft::grad_check(fp, [&] { return model.fuse(parameter(u), parameter(s), "fuse1", nullptr); }) < 1e-6);
  }

  TEST_CASE("whole network gradients match finite differences") {
    WaterFormer<double> model(small_config(), 15);
    randomize(model, 16, 0.2);
    std::mt19937_64 rng(17);
    const auto x = wft::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
    const double err = wft::grad_check(all_params(model), [&] { return model.forward(x); }, 18, 1e-6, 3);
    CHECK(err < 1e-5);
  }

  TEST_CASE("channel attention maps are channel by channel regardless of resolution") {
    WaterFormer<float> model(ModelConfig::reference(), 0);
    std::mt19937_64 rng(19);
    for (auto [h, w] : {std::pair{16, 16}, std::pair{24, 40}}) {
      ForwardTrace trace;
      NoGradGuard guard;
      model.forward(wft::random_tensor<float>({3, h, w}, rng, 0.0, 1.0), &trace);
      REQUIRE(trace.attention.channel.size() == 5);
      const int expect[5] = {12, 12, 12, 12, 12};
      for (int s = 0; s < 5; ++s) {
        CHECK(trace.attention.channel[s].rows == expect[s]);
        CHECK(trace.attention.channel[s].cols == expect[s]);
      }
      for (const auto& m : trace.attention.spatial) {
        for (std::size_t r = 0; r < m.weights.size() / m.cols; ++r) {
          double sum = 0;
          for (int c = 0; c < m.cols; ++c) sum += m.weights[r * m.cols + c];
          CHECK(std::abs(sum - 1.0) < 1e-5);
        }
      }
    }
  }

  TEST_CASE("cfb weights are complementary and even for identical inputs") {
    WaterFormer<double> model(small_config(), 20);
    randomize(model, 21);
    std::mt19937_64 rng(22);
    const auto a = constant(wft::random_tensor({4, 6, 6}, rng));
    const auto b = constant(wft::random_tensor({4, 6, 6}, rng, 0.0, 2.0));
    ForwardTrace trace;
    model.fuse(a, b, "fuse1", &trace);
    model.fuse(a, a, "fuse1", &trace);
    REQUIRE(trace.fusion_alpha1.size() == 2);
    for (std::size_t c = 0; c < 4; ++c) {
      CHECK(std::abs(trace.fusion_alpha1[0][c] + trace.fusion_alpha2[0][c] - 1.0) < 1e-12);
      CHECK(trace.fusion_alpha1[1][c] == 0.5);
      CHECK(trace.fusion_alpha2[1][c] == 0.5);
    }
  }

  TEST_CASE("toy footprint matches closed-form arithmetic") {
    const ModelConfig toy = ModelConfig::toy();
    WaterFormer<float> model(toy);
    // embed 3->4 (3x3), down 4->8, 8->16 (2x2), up 16->32, 8->16 (1x1), head 4->6 (3x3), all with bias.
    const std::size_t params = (3 * 4 * 9 + 4) + (4 * 8 * 4 + 8) + (8 * 16 * 4 + 16) + (16 * 32 + 32) +
                               (8 * 16 + 16) + (4 * 6 * 9 + 6);
    CHECK(params == 1686);
    CHECK(model.count_params() == params);
    const std::uint64_t macs = 3ull * 4 * 9 * 256 * 256 + 4ull * 8 * 4 * 128 * 128 + 8ull * 16 * 4 * 64 * 64 +
                               16ull * 32 * 64 * 64 + 8ull * 16 * 128 * 128 + 4ull * 6 * 9 * 256 * 256;
    CHECK(model.count_macs(256, 256) == macs);
    const auto two = conv_footprint(3, 4, 3, true, 8, 8);
    CHECK(two.params == 112);
    CHECK(two.macs == 108ull * 64);
  }

  TEST_CASE("parameter count equals the stored tensors") {
    for (const ModelConfig& cfg : {ModelConfig::reference(), small_config(), ModelConfig::toy()}) {
      WaterFormer<float> model(cfg);
      std::size_t n = 0;
      for (const auto& p : model.parameters()) n += p.value.numel();
      CHECK(model.count_params() == n);
    }
  }

  TEST_CASE("reference footprint bracket") {
    WaterFormer<float> model(ModelConfig::reference());
    CHECK(model.count_params() >= 200000);
    CHECK(model.count_params() <= 500000);
    CHECK(model.count_macs(256, 256) >= 4000000000ull);
    CHECK(model.count_macs(256, 256) <= 12000000000ull);
  }

  TEST_CASE("same seed gives the same model") {
    WaterFormer<float> a(ModelConfig::reference(), 42), b(ModelConfig::reference(), 42), c(ModelConfig::reference(), 43);
    bool all_same = true, any_diff = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      all_same = all_same && a.parameters()[i].value == b.parameters()[i].value;
      any_diff = any_diff || !(a.parameters()[i].value == c.parameters()[i].value);
    }
    CHECK(all_same);
    CHECK(any_diff);
  }

  TEST_CASE("initialization conventions") {
    WaterFormer<float> model(ModelConfig::reference(), 0);
    for (float v : model.parameter("head.weight").value.values()) CHECK(v == 0.0f);
    for (float v : model.parameter("enc1.block0.norm.meta1.bias").value.values()) CHECK(v == 1.0f);
    for (float v : model.parameter("enc1.block0.norm.meta2.bias").value.values()) CHECK(v == 0.0f);
    CHECK(model.parameter("bottleneck.crb.gamma").value[0] == doctest::Approx(std::sqrt(96.0 / 8)));
    CHECK_THROWS(model.parameter("no.such.param"));
  }

  TEST_CASE("swap variants build and run") {
    std::mt19937_64 rng(23);
    const auto x = wft::random_tensor<float>({3, 12, 12}, rng, 0.0, 1.0);
    for (ReconKind r : {ReconKind::UwSoft, ReconKind::Soft, ReconKind::GlobalResidual})
      for (FusionKind f : {FusionKind::Cfb, FusionKind::Sk, FusionKind::Concat, FusionKind::Add}) {
        ModelConfig c = small_config();
        c.recon_kind = r;
        c.use_cfb = f == FusionKind::Cfb;
        c.fusion_kind = f == FusionKind::Cfb ? FusionKind::Add : f;
        WaterFormer<float> model(c, 1);
        NoGradGuard guard;
        CHECK(model.forward(x)->value == x);
        randomize(model, 2);
        CHECK(model.forward(x)->value.all_finite());
      }
  }

  TEST_CASE("config text round trip and validation") {
    ModelConfig c = small_config();
    c.recon_kind = ReconKind::Soft;
    c.crb_slots = {true, false, true, false, true};
    CHECK(ModelConfig::parse(c.serialize()) == c);
    ModelConfig bad = ModelConfig::reference();
    bad.stage_widths = {24, 24, 96};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = ModelConfig::reference();
    bad.heads = {5, 4, 8};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(parse_fusion_kind("mean"), ConfigError);
    CHECK(parse_recon_kind(recon_kind_name(ReconKind::GlobalResidual)) == ReconKind::GlobalResidual);
  }

  TEST_CASE("enhance clamps and keeps size") {
    WaterFormer<float> model(small_config(), 3);
    randomize(model, 4, 1.0);
    std::mt19937_64 rng(24);
    const ImageRGB out = model.enhance(wft::random_image(10, 14, rng));
    CHECK(out.height() == 10);
    CHECK(out.width() == 14);
    CHECK(out.is_valid());
  }
}
