#include "waterformer/physics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "waterformer/errors.hpp"
#include "waterformer/tensor_image.hpp"

namespace waterformer {
namespace {

struct NamedType {
  WaterType type;
  std::string_view name;
};

constexpr std::array<NamedType, 10> kNames{{{WaterType::I, "I"},
                                            {WaterType::IA, "IA"},
                                            {WaterType::IB, "IB"},
                                            {WaterType::II, "II"},
                                            {WaterType::III, "III"},
                                            {WaterType::Coastal1, "1"},
                                            {WaterType::Coastal3, "3"},
                                            {WaterType::Coastal5, "5"},
                                            {WaterType::Coastal7, "7"},
                                            {WaterType::Coastal9, "9"}}};

void require_params_shape(const ImageRGB& img, const DegradationParams& params, const char* what) {
  require_same_shape(img, params.transmission, what);
}

}  // namespace

std::string_view water_type_name(WaterType type) {
  for (const auto& n : kNames)
    if (n.type == type) return n.name;
  return "?";
}

WaterType parse_water_type(std::string_view name) {
  for (const auto& n : kNames)
    if (n.name == name) return n.type;
  throw ConfigError("unknown water type '" + std::string(name) + "' (expected one of I, IA, IB, II, III, 1, 3, 5, 7, 9)");
}

bool is_open_sea(WaterType type) {
  return type == WaterType::I || type == WaterType::IA || type == WaterType::IB || type == WaterType::II ||
         type == WaterType::III;
}

std::array<double, 3> WaterTypeCoefficients::attenuation() const {
  return {-std::log(residual[0]), -std::log(residual[1]), -std::log(residual[2])};
}

WaterTypeTable WaterTypeTable::builtin() {
  // Per-metre residual energy ratios follow the Jerlov classes used for
  // UWCNN-style synthesis; background colours drift from blue (open sea)
  // to green/yellow (turbid coast). Treat as configuration.
  WaterTypeTable t;
  t.entries_[WaterType::I] = {{0.85, 0.961, 0.982}, {0.08, 0.45, 0.70}};
  t.entries_[WaterType::IA] = {{0.84, 0.955, 0.975}, {0.09, 0.47, 0.69}};
  t.entries_[WaterType::IB] = {{0.83, 0.95, 0.968}, {0.10, 0.49, 0.68}};
  t.entries_[WaterType::II] = {{0.80, 0.925, 0.94}, {0.12, 0.52, 0.64}};
  t.entries_[WaterType::III] = {{0.75, 0.885, 0.89}, {0.14, 0.56, 0.60}};
  t.entries_[WaterType::Coastal1] = {{0.75, 0.885, 0.875}, {0.16, 0.58, 0.55}};
  t.entries_[WaterType::Coastal3] = {{0.71, 0.82, 0.80}, {0.18, 0.60, 0.48}};
  t.entries_[WaterType::Coastal5] = {{0.67, 0.73, 0.67}, {0.22, 0.60, 0.38}};
  t.entries_[WaterType::Coastal7] = {{0.62, 0.61, 0.50}, {0.28, 0.55, 0.25}};
  t.entries_[WaterType::Coastal9] = {{0.55, 0.46, 0.29}, {0.33, 0.48, 0.15}};
  return t;
}

WaterTypeTable WaterTypeTable::parse(std::string_view text) {
  WaterTypeTable t;
  std::map<WaterType, int> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    const auto dot = line.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("water type table line " + std::to_string(line_no) + ": expected '<type>.<field> = r g b'");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const WaterType type = parse_water_type(trim(line.substr(0, dot)));
    const std::string field = trim(line.substr(dot + 1, eq - dot - 1));
    std::istringstream values(line.substr(eq + 1));
    std::array<double, 3> v{};
    if (!(values >> v[0] >> v[1] >> v[2])) {
      throw ConfigError("water type table line " + std::to_string(line_no) + ": expected three numbers");
    }
    auto& entry = t.entries_[type];
    if (field == "residual") {
      for (double r : v)
        if (!(r > 0.0 && r <= 1.0)) throw ConfigError("water type residual must lie in (0,1]");
      entry.residual = v;
      seen[type] |= 1;
    } else if (field == "background") {
      for (double a : v)
        if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("water type background must lie in [0,1]");
      entry.background = v;
      seen[type] |= 2;
    } else {
      throw ConfigError("water type table line " + std::to_string(line_no) + ": unknown field '" + field + "'");
    }
  }
  for (WaterType type : kAllWaterTypes) {
    if (seen[type] != 3) {
      throw ConfigError("water type table: incomplete entry for type " + std::string(water_type_name(type)));
    }
  }
  return t;
}

WaterTypeTable WaterTypeTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read water type table " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string WaterTypeTable::serialize() const {
  std::string out;
  out += "# Per-metre residual energy ratio (R G B); attenuation is -ln(residual).\n";
  out += "# Background light (R G B) in [0,1].\n";
  auto triple = [](const std::array<double, 3>& v) {
    std::string s;
    for (double x : v) {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof buf, x);
      s += ' ';
      s.append(buf, res.ptr);
    }
    return s;
  };
  for (WaterType type : kAllWaterTypes) {
    const auto& e = at(type);
    out += std::string(water_type_name(type)) + ".residual =" + triple(e.residual) + '\n';
    out += std::string(water_type_name(type)) + ".background =" + triple(e.background) + '\n';
  }
  return out;
}

const WaterTypeCoefficients& WaterTypeTable::at(WaterType type) const {
  const auto it = entries_.find(type);
  if (it == entries_.end()) throw ConfigError("water type table has no entry for " + std::string(water_type_name(type)));
  return it->second;
}

Tensor<double> ReconVars::stacked() const {
  Tensor<double> o(6, k.height(), k.width());
  std::copy_n(k.data(), k.numel(), o.data());
  std::copy_n(b.data(), b.numel(), o.channel(3));
  return o;
}

RangedImage degrade(const ImageRGB& clean, const DegradationParams& params) {
  require_params_shape(clean, params, "degrade");
  ImageRGB out(clean.height(), clean.width());
  for (int y = 0; y < clean.height(); ++y)
    for (int x = 0; x < clean.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double t = params.transmission.at(y, x, c);
        out.at(y, x, c) = clean.at(y, x, c) * t + params.background_light[c] * (1.0 - t);
      }
  RangedImage r;
  r.excursion = out.clamp();
  r.image = std::move(out);
  return r;
}

RangedImage recover_analytic(const ImageRGB& degraded, const DegradationParams& params, double t_min) {
  require_params_shape(degraded, params, "recover_analytic");
  const auto px = params.transmission.pixels();
  const double lowest = *std::min_element(px.begin(), px.end());
  if (lowest < t_min) {
    throw DomainError("recover_analytic: transmission minimum " + std::to_string(lowest) + " is below t_min " +
                      std::to_string(t_min));
  }
  ImageRGB out(degraded.height(), degraded.width());
  for (int y = 0; y < degraded.height(); ++y)
    for (int x = 0; x < degraded.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const double inv = 1.0 / params.transmission.at(y, x, c);
        const double u = degraded.at(y, x, c);
        out.at(y, x, c) = u * (inv - 1.0) + params.background_light[c] * (1.0 - inv) + u;
      }
  RangedImage r;
  r.excursion = out.clamp();
  r.image = std::move(out);
  return r;
}

ReconVars recon_vars_from(const DegradationParams& params, double t_min) {
  const int h = params.height();
  const int w = params.width();
  ReconVars v{Tensor<double>(3, h, w), Tensor<double>(3, h, w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double t = params.transmission.at(y, x, c);
        if (t < t_min) throw DomainError("recon_vars_from: transmission below t_min");
        const double k = 1.0 / t - 1.0;
        v.k.at(c, y, x) = k;
        v.b.at(c, y, x) = params.background_light[c] * k;
      }
  return v;
}

template <typename T>
Tensor<T> soft_reconstruct(const Tensor<T>& input, const Tensor<T>& o) {
  const Shape s = input.shape();
  if (s.c != 3) throw DimensionError("soft_reconstruct: input must have 3 channels");
  o.require_shape(Shape{6, s.h, s.w}, "soft_reconstruct prediction");
  Tensor<T> out(s);
  const std::size_t plane = s.plane();
  for (int c = 0; c < 3; ++c) {
    const T* u = input.channel(c);
    const T* k = o.channel(c);
    const T* b = o.channel(c + 3);
    T* dst = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = u[i] * k[i] - b[i] + u[i];
  }
  return out;
}

template <typename T>
void soft_reconstruct_backward(const Tensor<T>& input, const Tensor<T>& o, const Tensor<T>& grad_out,
                               Tensor<T>* grad_input, Tensor<T>* grad_o) {
  const Shape s = input.shape();
  grad_out.require_shape(s, "soft_reconstruct_backward");
  const std::size_t plane = s.plane();
  for (int c = 0; c < 3; ++c) {
    const T* u = input.channel(c);
    const T* k = o.channel(c);
    const T* g = grad_out.channel(c);
    if (grad_input) {
      T* du = grad_input->channel(c);
      for (std::size_t i = 0; i < plane; ++i) du[i] += g[i] * (k[i] + T(1));
    }
    if (grad_o) {
      T* dk = grad_o->channel(c);
      T* db = grad_o->channel(c + 3);
      for (std::size_t i = 0; i < plane; ++i) {
        dk[i] += g[i] * u[i];
        db[i] -= g[i];
      }
    }
  }
}

template Tensor<float> soft_reconstruct<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> soft_reconstruct<double>(const Tensor<double>&, const Tensor<double>&);
template void soft_reconstruct_backward<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                               Tensor<float>*, Tensor<float>*);
template void soft_reconstruct_backward<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                                Tensor<double>*, Tensor<double>*);

RangedImage soft_reconstruct(const ImageRGB& input, const Tensor<double>& o) {
  const Tensor<double> raw = soft_reconstruct(to_tensor<double>(input), o);
  ImageRGB img(input.height(), input.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = raw.at(c, y, x);
  RangedImage r;
  r.excursion = img.clamp();
  r.image = std::move(img);
  return r;
}

DegradationParams make_water_type(WaterType type, const Plane& depth, const WaterTypeTable& table) {
  if (depth.height < 1 || depth.width < 1) throw DimensionError("make_water_type: empty depth map");
  const auto& coeffs = table.at(type);
  const auto beta = coeffs.attenuation();
  DegradationParams p;
  p.background_light = coeffs.background;
  p.transmission = ImageRGB(depth.height, depth.width);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const double d = depth.at(y, x);
      if (d < 0.0) throw DomainError("make_water_type: negative depth");
      for (int c = 0; c < 3; ++c) p.transmission.at(y, x, c) = std::exp(-beta[c] * d);
    }
  return p;
}

DegradationParams make_water_type(WaterType type, double depth, int height, int width, const WaterTypeTable& table) {
  return make_water_type(type, Plane(height, width, depth), table);
}

}  // namespace waterformer
