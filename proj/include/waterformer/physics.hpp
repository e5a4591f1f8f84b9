#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "waterformer/image.hpp"
#include "waterformer/tensor.hpp"

namespace waterformer {

// Jerlov water classes: I..III open ocean, 1..9 coastal.
enum class WaterType { I, IA, IB, II, III, Coastal1, Coastal3, Coastal5, Coastal7, Coastal9 };

inline constexpr std::array<WaterType, 10> kAllWaterTypes{
    WaterType::I,        WaterType::IA,       WaterType::IB,       WaterType::II,       WaterType::III,
    WaterType::Coastal1, WaterType::Coastal3, WaterType::Coastal5, WaterType::Coastal7, WaterType::Coastal9};

std::string_view water_type_name(WaterType type);
// Accepts "I", "IA", "IB", "II", "III", "1", "3", "5", "7", "9". Throws ConfigError otherwise.
WaterType parse_water_type(std::string_view name);
bool is_open_sea(WaterType type);

struct WaterTypeCoefficients {
  // Fraction of light surviving one metre, per R, G, B channel.
  std::array<double, 3> residual{};
  // Veiling light colour.
  std::array<double, 3> background{};

  // Attenuation beta = -ln(residual), per metre.
  std::array<double, 3> attenuation() const;
};

class WaterTypeTable {
 public:
  // Built-in coefficients; mirrors data/water_types.cfg.
  static WaterTypeTable builtin();
  // Parses `<type>.residual = r g b` and `<type>.background = r g b` lines.
  static WaterTypeTable parse(std::string_view text);
  static WaterTypeTable load(const std::string& path);

  std::string serialize() const;
  const WaterTypeCoefficients& at(WaterType type) const;

 private:
  std::map<WaterType, WaterTypeCoefficients> entries_;
};

struct DegradationParams {
  std::array<double, 3> background_light{};
  // h x w x 3 transmission, every component in (0,1].
  ImageRGB transmission;

  int height() const { return transmission.height(); }
  int width() const { return transmission.width(); }
};

// K = 1/T - 1 and B = A * K, both 3 x h x w.
struct ReconVars {
  Tensor<double> k;
  Tensor<double> b;

  // Stacks into the 6-channel head layout [K_R, K_G, K_B, B_R, B_G, B_B].
  Tensor<double> stacked() const;
};

struct RangedImage {
  ImageRGB image;
  // Largest pre-clamp distance outside [0,1].
  double excursion = 0.0;
};

inline constexpr double kDefaultMinTransmission = 0.05;

// U = I*T + A*(1-T).
RangedImage degrade(const ImageRGB& clean, const DegradationParams& params);

// I = U*(1/T - 1) + A*(1 - 1/T) + U. Throws DomainError if any T < t_min.
RangedImage recover_analytic(const ImageRGB& degraded, const DegradationParams& params,
                             double t_min = kDefaultMinTransmission);

ReconVars recon_vars_from(const DegradationParams& params, double t_min = kDefaultMinTransmission);

// out = U*K - B + U with O = [K | B] channel-stacked (6 x h x w). Raw, unclamped.
template <typename T>
Tensor<T> soft_reconstruct(const Tensor<T>& input, const Tensor<T>& o);

// Adjoint of soft_reconstruct. Either output pointer may be null.
template <typename T>
void soft_reconstruct_backward(const Tensor<T>& input, const Tensor<T>& o, const Tensor<T>& grad_out,
                               Tensor<T>* grad_input, Tensor<T>* grad_o);

// Image-level convenience wrapper; clamps the result and reports the excursion.
RangedImage soft_reconstruct(const ImageRGB& input, const Tensor<double>& o);

// T = exp(-beta * d) per channel with the type's background light.
DegradationParams make_water_type(WaterType type, const Plane& depth,
                                  const WaterTypeTable& table = WaterTypeTable::builtin());
DegradationParams make_water_type(WaterType type, double depth, int height, int width,
                                  const WaterTypeTable& table = WaterTypeTable::builtin());

}  // namespace waterformer
