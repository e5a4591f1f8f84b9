#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "waterformer/color_space.hpp"
#include "waterformer/errors.hpp"
#include "waterformer/metrics.hpp"
#include "waterformer/net.hpp"
#include "waterformer/physics.hpp"
#include "waterformer/training.hpp"

namespace py = pybind11;
using namespace waterformer;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageRGB to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an h x w x 3 array");
  const auto h = static_cast<int>(a.shape(0));
  const auto w = static_cast<int>(a.shape(1));
  std::vector<double> px(a.data(), a.data() + a.size());
  return ImageRGB(h, w, std::move(px));
}

Array to_array(const ImageRGB& img) {
  Array out({img.height(), img.width(), 3});
  std::memcpy(out.mutable_data(), img.pixels().data(), img.size() * sizeof(double));
  return out;
}

ImageRGB planes_to_image(const ImageYIQ& yiq) {
  ImageRGB img(yiq.height(), yiq.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      img.at(y, x, 0) = yiq.y.at(y, x);
      img.at(y, x, 1) = yiq.i.at(y, x);
      img.at(y, x, 2) = yiq.q.at(y, x);
    }
  return img;
}

ImageYIQ image_to_planes(const ImageRGB& img) {
  ImageYIQ yiq{Plane(img.height(), img.width()), Plane(img.height(), img.width()), Plane(img.height(), img.width())};
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      yiq.y.at(y, x) = img.at(y, x, 0);
      yiq.i.at(y, x) = img.at(y, x, 1);
      yiq.q.at(y, x) = img.at(y, x, 2);
    }
  return yiq;
}

DegradationParams params_of(const Array& transmission, std::array<double, 3> background) {
  return {background, to_image(transmission)};
}

class Model {
 public:
  Model(const std::string& variant, std::uint64_t seed)
      : net_(TrainConfig::for_variant(parse_variant(variant)).model, seed) {}
  explicit Model(WaterFormer<float> net) : net_(std::move(net)) {}

  static Model load(const std::string& path) { return Model(load_checkpoint(path).model); }

  Array enhance(const Array& img) {
    ImageRGB input = to_image(img);
    ImageRGB out;
    {
      py::gil_scoped_release release;
      out = net_.enhance(input);
    }
    return to_array(out);
  }
  std::size_t params() const { return net_.count_params(); }
  std::uint64_t macs(int h, int w) const { return net_.count_macs(h, w); }
  std::string config() const { return net_.config().serialize(); }

 private:
  WaterFormer<float> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "WaterFormer underwater image enhancement";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IngestionError>(m, "IngestionError", PyExc_OSError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_OSError);
  py::register_exception<IncompatibleError>(m, "IncompatibleError", PyExc_OSError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("rgb_to_yiq", [](const Array& rgb) { return to_array(planes_to_image(rgb_to_yiq(to_image(rgb)))); },
        py::arg("rgb"), "h x w x 3 RGB in [0,1] to YIQ planes stacked as h x w x 3.");
  m.def(
      "yiq_to_rgb",
      [](const Array& yiq) {
        const YiqToRgbResult r = yiq_to_rgb(image_to_planes(to_image(yiq)));
        return py::make_tuple(to_array(r.image), r.excursion);
      },
      py::arg("yiq"), "Returns (clamped rgb, excursion).");

  m.def(
      "degrade",
      [](const Array& clean, const Array& transmission, std::array<double, 3> background) {
        const RangedImage r = degrade(to_image(clean), params_of(transmission, background));
        return py::make_tuple(to_array(r.image), r.excursion);
      },
      py::arg("clean"), py::arg("transmission"), py::arg("background"));
  m.def(
      "recover",
      [](const Array& degraded, const Array& transmission, std::array<double, 3> background, double t_min) {
        return to_array(recover_analytic(to_image(degraded), params_of(transmission, background), t_min).image);
      },
      py::arg("degraded"), py::arg("transmission"), py::arg("background"),
      py::arg("t_min") = kDefaultMinTransmission);
  m.def(
      "water_type",
      [](const std::string& name, double depth, int height, int width) {
        const DegradationParams p = make_water_type(parse_water_type(name), depth, height, width);
        return py::make_tuple(to_array(p.transmission), p.background_light);
      },
      py::arg("name"), py::arg("depth"), py::arg("height"), py::arg("width"),
      "Returns (transmission h x w x 3, background light).");

  m.def("psnr", [](const Array& gt, const Array& pred) { return psnr(to_image(gt), to_image(pred)); }, py::arg("gt"),
        py::arg("pred"));
  m.def("ssim", [](const Array& gt, const Array& pred) { return ssim(to_image(gt), to_image(pred)); }, py::arg("gt"),
        py::arg("pred"));
  m.def(
      "nrmse",
      [](const Array& gt, const Array& pred, bool minmax) {
        return nrmse(to_image(gt), to_image(pred),
                     minmax ? NrmseNormalization::MinMax : NrmseNormalization::Frobenius);
      },
      py::arg("gt"), py::arg("pred"), py::arg("minmax") = false);
  m.def("uciqe", [](const Array& img) { return uciqe(to_image(img)); }, py::arg("img"));
  m.def("uiqm", [](const Array& img) { return uiqm(to_image(img)); }, py::arg("img"));

  m.def(
      "lr_at", [](int epoch) { return lr_at(epoch, TrainConfig{}); }, py::arg("epoch"),
      "Learning rate of the default schedule at an epoch.");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("variant") = "v5", py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("path"))
      .def("enhance", &Model::enhance, py::arg("img"))
      .def_property_readonly("params", &Model::params)
      .def("macs", &Model::macs, py::arg("height") = 256, py::arg("width") = 256)
      .def_property_readonly("config", &Model::config);
}
