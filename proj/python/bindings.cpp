#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "uet/distill.hpp"
#include "uet/gradcheck_suite.hpp"
#include "uet/model.hpp"
#include "uet/train.hpp"
#include "uet/uncertainty.hpp"

namespace py = pybind11;
using namespace uet;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(static_cast<size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape[static_cast<size_t>(i)] = static_cast<int>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(shape, std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

FeaturePyramid to_pyramid(const std::vector<py::array_t<double>>& arrays) {
  FeaturePyramid f;
  f.reserve(arrays.size());
  for (const auto& a : arrays) f.push_back(to_tensor(a));
  return f;
}

std::vector<py::array_t<double>> from_pyramid(const FeaturePyramid& f) {
  std::vector<py::array_t<double>> out;
  out.reserve(f.size());
  for (const Tensor& t : f) out.push_back(to_array(t));
  return out;
}

RatioStrategy strategy_from(const std::string& s) {
  if (s == "fixed") return RatioStrategy::fixed_a;
  if (s == "arithmetic") return RatioStrategy::arithmetic_b;
  if (s == "epoch_growing") return RatioStrategy::epoch_growing_c;
  throw ConfigError("unknown ratio strategy: " + s);
}

ExtractKind extract_from(const std::string& s) {
  if (s == "identity") return ExtractKind::identity;
  if (s == "pearson_norm") return ExtractKind::pearson_norm;
  if (s == "attention") return ExtractKind::attention;
  throw ConfigError("unknown extraction kind: " + s);
}

DistanceKind distance_from(const std::string& s) {
  if (s == "l2") return DistanceKind::l2;
  if (s == "pearson") return DistanceKind::pearson;
  if (s == "ssim") return DistanceKind::ssim;
  throw ConfigError("unknown distance kind: " + s);
}

}  // namespace

PYBIND11_MODULE(_uet, m) {
  m.doc() = "feature distillation with teacher-knowledge uncertainty";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "schedule_ratios",
      [](const std::string& strategy, int n, int epoch, double base, double step,
         double epoch_growth, double clamp_max) {
        RatioSchedule s;
        s.strategy = strategy_from(strategy);
        s.n = n;
        s.base = base;
        s.step = step;
        s.epoch_growth = epoch_growth;
        s.clamp_max = clamp_max;
        return schedule_ratios(s, epoch);
      },
      py::arg("strategy"), py::arg("n"), py::arg("epoch") = 0, py::arg("base") = 0.05,
      py::arg("step") = 0.05, py::arg("epoch_growth") = 0.025, py::arg("clamp_max") = 0.95,
      "per-pass dropout ratios for one epoch");

  m.def(
      "estimate_uncertainty",
      [](const std::vector<py::array_t<double>>& pyramid, const std::vector<double>& ratios,
         uint64_t seed, bool residual) {
        FeaturePyramid f = to_pyramid(pyramid);
        Rng rng(seed);
        auto est = uet::estimate_uncertainty(f, ratios, rng);
        return from_pyramid(combine_residual(est, f, residual));
      },
      py::arg("pyramid"), py::arg("ratios"), py::arg("seed") = 0, py::arg("residual") = true,
      "MC-dropout uncertainty estimate, optionally combined with the source");

  m.def(
      "extract",
      [](const std::string& kind, const std::vector<py::array_t<double>>& pyramid) {
        return from_pyramid(extract(extract_from(kind), to_pyramid(pyramid)));
      },
      py::arg("kind"), py::arg("pyramid"),
      "knowledge extraction: identity, pearson_norm or attention");

  m.def(
      "distance",
      [](const std::string& kind, const std::vector<py::array_t<double>>& a,
         const std::vector<py::array_t<double>>& b) {
        return distance(distance_from(kind), to_pyramid(a), to_pyramid(b)).item();
      },
      py::arg("kind"), py::arg("a"), py::arg("b"),
      "transfer distance between two pyramids: l2, pearson or ssim");

  m.def(
      "gradcheck",
      [](uint64_t seed) {
        py::list out;
        for (const auto& c : run_gradcheck_suite(seed))
          out.append(py::make_tuple(c.name, c.max_err, c.pass));
        return out;
      },
      py::arg("seed") = 7, "finite-difference audit of every differentiable op");

  py::class_<DetNet>(m, "DetNet")
      .def(py::init([](int width, int depth, const std::string& role, uint64_t seed) {
             PyramidSpec spec;
             Rng rng(seed);
             return build_detnet(spec, width, depth,
                                 role == "teacher" ? Role::teacher : Role::student, rng);
           }),
           py::arg("width"), py::arg("depth"), py::arg("role") = "teacher", py::arg("seed") = 0)
      .def("pyramid",
           [](const DetNet& net, const py::array_t<double>& image) {
             return from_pyramid(net.forward_pyramid(to_tensor(image)));
           },
           py::arg("image"), "multi-scale feature pyramid for one image")
      .def("logits",
           [](const DetNet& net, const py::array_t<double>& image) {
             return from_pyramid(net.forward_head(net.forward_pyramid(to_tensor(image))));
           },
           py::arg("image"), "per-scale class logits for one image")
      .def("digest", &DetNet::digest)
      .def_readonly("width", &DetNet::width)
      .def_readonly("depth", &DetNet::depth);

  m.def(
      "uet_loss",
      [](const DetNet& teacher, const DetNet& student, const py::array_t<double>& image,
         const std::string& extraction, const std::string& dist, int n,
         const std::string& strategy, bool residual, uint64_t seed, int epoch) {
        DistillConfig cfg;
        cfg.n = n;
        cfg.source = n == 0 ? KnowledgeSource::none : KnowledgeSource::teacher;
        cfg.schedule.strategy = strategy_from(strategy);
        cfg.schedule.n = n > 0 ? n : cfg.schedule.n;
        cfg.extraction = extract_from(extraction);
        cfg.distance = distance_from(dist);
        cfg.residual = residual;
        validate(cfg);

        DetNet frozen_t = teacher;
        frozen_t.set_requires_grad(false);
        DetNet frozen_s = student;
        frozen_s.set_requires_grad(false);
        Tensor img = to_tensor(image);
        FeaturePyramid f_t = frozen_t.forward_pyramid(img);
        FeaturePyramid f_s = frozen_s.forward_pyramid(img);
        Rng rng(seed);
        Rng adapter_rng = rng.fork(1);
        Adapter adapter = make_adapter(static_cast<int>(f_t.size()),
                                       frozen_s.pyramid_channels(),
                                       frozen_t.pyramid_channels(), adapter_rng);
        if (cfg.source == KnowledgeSource::none) return kd_loss_et(f_t, f_s, adapter, cfg).item();
        return kd_loss_uet(f_t, f_s, adapter, cfg, rng, epoch).item();
      },
      py::arg("teacher"), py::arg("student"), py::arg("image"),
      py::arg("extraction") = "identity", py::arg("distance") = "l2", py::arg("n") = 5,
      py::arg("strategy") = "arithmetic", py::arg("residual") = true, py::arg("seed") = 0,
      py::arg("epoch") = 0,
      "distillation loss between a frozen teacher and student on one image "
      "(identity-initialized adapter; n=0 selects the plain extraction-transfer path)");
}
