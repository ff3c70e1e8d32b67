#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fddlab/cli/commands.hpp"
#include "fddlab/diffusion/kbin.hpp"
#include "fddlab/errors.hpp"
#include "fddlab/eval/metrics.hpp"
#include "fddlab/numerics/fdt1.hpp"
#include "fddlab/worldgen/world.hpp"

namespace py = pybind11;
using namespace fddlab;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

Array to_numpy(const num::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.ptr(), t.ptr() + t.numel(), out.mutable_data());
  return out;
}

num::Tensor from_numpy(const Array& a) {
  num::Shape shape(a.shape(), a.shape() + a.ndim());
  return num::Tensor::from(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

cli::RunConfig config_for(const std::string& path, py::object seed) {
  cli::RunConfig cfg = path.empty() ? cli::RunConfig{} : cli::load_config(path);
  if (!seed.is_none()) cfg.seed = seed.cast<std::uint64_t>();
  return cfg;
}

// Runs a command with the GIL released and returns its log.
template <class F>
std::string logged(F&& f) {
  std::ostringstream log;
  {
    py::gil_scoped_release release;
    f(log);
  }
  return log.str();
}

py::dict means(const eval::MetricsReport& r) {
  py::dict d;
  d["edit_fidelity_db"] = r.edit_fidelity_db;
  d["temporal_consistency"] = r.temporal_consistency;
  d["directional_agreement"] = r.directional_agreement;
  d["unchanged_region_mse"] = r.unchanged_region_mse;
  d["items"] = r.items.size();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fddlab core bindings";

  py::register_exception<MissingDependency>(m, "MissingDependency", PyExc_FileNotFoundError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<diffusion::NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("T", &diffusion::NoiseSchedule::T)
      .def_readonly("zero_terminal", &diffusion::NoiseSchedule::zero_terminal)
      .def_readonly("alpha_bar", &diffusion::NoiseSchedule::alpha_bar)
      .def_readonly("beta", &diffusion::NoiseSchedule::beta)
      .def("snr", &diffusion::NoiseSchedule::snr);
  m.def(
      "make_schedule",
      [](int T, const std::string& kind, bool zero_terminal) {
        return diffusion::make_schedule(T, diffusion::parse_schedule_kind(kind), zero_terminal);
      },
      py::arg("T"), py::arg("kind") = "linear", py::arg("zero_terminal") = true);
  m.def(
      "kbin_timesteps",
      [](int k, int T, std::uint64_t seed) {
        num::Rng rng(seed);
        return diffusion::kbin_timesteps(k, T, rng).steps;
      },
      py::arg("k"), py::arg("T"), py::arg("seed") = 0);
  m.def("kbin_valid", &diffusion::kbin_valid, py::arg("steps"), py::arg("T"));

  m.def(
      "random_scene",
      [](std::uint64_t seed, int H, int W, int F) {
        num::Rng rng(seed);
        const auto s = worldgen::sample_scene(H, W, F, rng);
        return py::make_tuple(to_numpy(worldgen::render(s)), worldgen::describe(worldgen::caption(s)));
      },
      py::arg("seed"), py::arg("H") = 16, py::arg("W") = 16, py::arg("F") = 4,
      "Renders a random scene: ([F,3,H,W] array in [-1,1], caption).");
  m.def("read_fdt1", [](const std::filesystem::path& p) { return to_numpy(num::read_fdt1(p)); });
  m.def("write_fdt1", [](const std::filesystem::path& p, const Array& a) { num::write_fdt1(p, from_numpy(a)); });
  m.def("psnr", [](const Array& a, const Array& b) { return eval::psnr(from_numpy(a), from_numpy(b)); });

  m.def(
      "config_hash", [](const std::string& path, py::object seed) { return cli::config_hash(config_for(path, seed)); },
      py::arg("config") = "", py::arg("seed") = py::none());
  m.def(
      "resolved_config",
      [](const std::string& path, py::object seed) { return cli::resolved_text(config_for(path, seed)); },
      py::arg("config") = "", py::arg("seed") = py::none());

  auto stage = [&m](const char* name, void (*fn)(const cli::RunConfig&, const cli::Layout&, std::ostream&)) {
    m.def(
        name,
        [fn](const std::string& out, const std::string& config, py::object seed) {
          const auto cfg = config_for(config, seed);
          return logged([&](std::ostream& log) { fn(cfg, cli::Layout{out}, log); });
        },
        py::arg("out"), py::arg("config") = "", py::arg("seed") = py::none());
  };
  stage("gen_data", &cli::gen_data);
  stage("pretrain_backbone", &cli::pretrain_backbone);
  stage("train_edit", &cli::train_edit);
  stage("train_video", &cli::train_video);

  m.def(
      "align",
      [](const std::string& out, const std::string& preset, const std::string& config, py::object seed) {
        const auto cfg = config_for(config, seed);
        const auto p = fdd::parse_preset(preset);
        return logged([&](std::ostream& log) { cli::align(cfg, cli::Layout{out}, p, log); });
      },
      py::arg("out"), py::arg("preset") = "full", py::arg("config") = "", py::arg("seed") = py::none());
  m.def(
      "evaluate",
      [](const std::string& out, const std::string& run, const std::string& config, py::object seed) {
        const auto cfg = config_for(config, seed);
        eval::MetricsReport r;
        logged([&](std::ostream& log) { r = cli::evaluate(cfg, cli::Layout{out}, run, log); });
        return means(r);
      },
      py::arg("out"), py::arg("run") = "full", py::arg("config") = "", py::arg("seed") = py::none(),
      "Scores fdd/<run> and returns the mean metrics.");
  m.def(
      "compare",
      [](const std::string& out, const std::string& a, const std::string& b) {
        std::vector<eval::MetricComparison> rows;
        logged([&](std::ostream& log) { rows = cli::compare(cli::Layout{out}, a, b, log); });
        py::list result;
        for (const auto& c : rows) {
          py::dict d;
          d["metric"] = c.metric;
          d["mean_a"] = c.mean_a;
          d["mean_b"] = c.mean_b;
          d["delta"] = c.delta;
          d["win_rate_b"] = c.win_rate;
          d["items"] = c.items;
          result.append(d);
        }
        return result;
      },
      py::arg("out"), py::arg("a"), py::arg("b"));
  m.def("selftest", [] {
    bool ok = false;
    const std::string text = logged([&](std::ostream& log) { ok = cli::selftest(log); });
    return py::make_tuple(ok, text);
  });
}
