#include "commands.hpp"
#include "korol/dct.hpp"
#include "korol/errors.hpp"
#include "korol/koopman.hpp"
#include "korol/lifting.hpp"
#include "korol/model_io.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace korol;

namespace {

py::array_t<double> frames_array(const std::vector<ImageStack>& frames) {
  if (frames.empty()) return py::array_t<double>(std::vector<py::ssize_t>{0, 0, 0, 0});
  const auto& f = frames.front();
  py::array_t<double> out({static_cast<py::ssize_t>(frames.size()), static_cast<py::ssize_t>(f.channels),
                           static_cast<py::ssize_t>(f.height), static_cast<py::ssize_t>(f.width)});
  double* dst = out.mutable_data();
  for (const auto& fr : frames) dst = std::copy(fr.data.begin(), fr.data.end(), dst);
  return out;
}

py::dict trajectory_dict(const Trajectory& t) {
  py::dict d;
  d["task"] = std::string(task_name(t.task));
  d["seed"] = t.seed;
  d["robot"] = Mat(t.robot);
  d["object"] = Mat(t.object);
  d["frames"] = frames_array(t.frames);
  return d;
}

Propagation parse_mode(const std::string& s) {
  if (s == "lifted") return Propagation::kLifted;
  if (s == "relift") return Propagation::kRelift;
  throw ConfigError("propagation must be \"lifted\" or \"relift\"");
}

}  // namespace

PYBIND11_MODULE(_korol, m) {
  m.doc() = "Koopman rollout feature learning core";

  auto base = py::register_exception<Error>(m, "KorolError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<RankDeficientError>(m, "RankDeficientError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("lift_dim", [](int n, int mo) { return lift_dim(n, mo).dim(); }, py::arg("n"), py::arg("m"));
  m.def(
      "lift", [](const Vec& xr, const Vec& xo) { return lift(lift_dim(static_cast<int>(xr.size()), static_cast<int>(xo.size())), xr, xo); },
      py::arg("robot"), py::arg("object"));
  m.def(
      "unlift", [](const Vec& phi, int n, int mo) { return unlift(lift_dim(n, mo), phi); }, py::arg("observable"),
      py::arg("n"), py::arg("m"));

  m.def("dct2", &dct2, py::arg("channel"));
  m.def("idct2", &idct2, py::arg("coeffs"));

  py::class_<KoopmanModel>(m, "KoopmanModel")
      .def_property_readonly("K", [](const KoopmanModel& k) { return k.K; })
      .def_property_readonly("n", [](const KoopmanModel& k) { return k.spec.n(); })
      .def_property_readonly("m", [](const KoopmanModel& k) { return k.spec.m(); })
      .def_readonly("ridge", &KoopmanModel::ridge)
      .def(
          "rollout",
          [](const KoopmanModel& k, const Vec& xr, const Vec& xo, int steps, const std::string& mode) {
            const auto r = rollout(k, {xr, xo}, steps, parse_mode(mode));
            Mat robot(static_cast<Eigen::Index>(r.states.size()), k.spec.n());
            for (std::size_t t = 0; t < r.states.size(); ++t) robot.row(static_cast<Eigen::Index>(t)) = r.states[t].robot.transpose();
            return py::make_tuple(robot, r.diverged);
          },
          py::arg("robot"), py::arg("object"), py::arg("steps"), py::arg("mode") = "lifted");

  m.def(
      "fit",
      [](const std::vector<std::pair<Mat, Mat>>& sequences, double ridge) {
        if (sequences.empty()) throw DataError("fit: no sequences");
        const auto n = static_cast<int>(sequences.front().first.cols());
        const auto mo = static_cast<int>(sequences.front().second.cols());
        StatePairAccumulator acc(lift_dim(n, mo));
        for (const auto& [r, o] : sequences) {
          if (r.rows() != o.rows()) throw DimensionError("fit: robot and object lengths differ");
          StateSequence seq;
          for (Eigen::Index t = 0; t < r.rows(); ++t) seq.push_back({r.row(t).transpose(), o.row(t).transpose()});
          acc.accumulate(seq);
        }
        return fit(acc, ridge);
      },
      py::arg("sequences"), py::arg("ridge") = kDefaultRidge,
      "Fit K from a list of (robot[T,n], object[T,m]) state sequences.");

  m.def(
      "gen_demo", [](const std::string& task, std::uint64_t seed) { return trajectory_dict(gen_demo(make_task(parse_task(task)), seed)); },
      py::arg("task"), py::arg("seed"));
  m.def(
      "read_trajectory", [](const std::filesystem::path& p) { return trajectory_dict(read_trajectory(p)); },
      py::arg("path"));

  m.def(
      "gen_demos",
      [](const std::string& task, int count, std::uint64_t seed, const std::filesystem::path& out) {
        return cli::cmd_gen_demos(parse_task(task), count, seed, out);
      },
      py::arg("task"), py::arg("count"), py::arg("seed"), py::arg("out"));

  m.def(
      "train",
      [](std::vector<std::filesystem::path> data, const std::filesystem::path& out, std::optional<std::filesystem::path> config,
         std::optional<std::uint64_t> seed, bool oracle_features) {
        cli::TrainArgs a;
        a.data = std::move(data);
        a.out = out;
        if (config) a.config = *config;
        a.seed = seed;
        a.oracle_features = oracle_features;
        py::gil_scoped_release release;
        return model_checksum(cli::cmd_train(a));
      },
      py::arg("data"), py::arg("out"), py::arg("config") = py::none(), py::arg("seed") = py::none(),
      py::arg("oracle_features") = false, "Train and write a model file; returns its checksum.");

  m.def(
      "evaluate",
      [](const std::filesystem::path& model, std::optional<std::string> task, int episodes, std::uint64_t seed,
         bool closed_loop) {
        cli::EvalArgs a;
        a.model = model;
        if (task) a.task = parse_task(*task);
        a.episodes = episodes;
        a.seed = seed;
        a.closed_loop = closed_loop;
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = cli::cmd_eval(a);
        }
        py::dict d;
        d["success_rate"] = r.success_rate;
        d["successes"] = r.successes;
        d["episodes"] = r.episodes;
        d["diverged"] = r.diverged;
        return d;
      },
      py::arg("model"), py::arg("task") = py::none(), py::arg("episodes") = 200, py::arg("seed") = 0,
      py::arg("closed_loop") = false);

  m.def(
      "model_checksum", [](const std::filesystem::path& p) { return model_checksum(load_model(p)); }, py::arg("path"));
  m.def(
      "load_koopman", [](const std::filesystem::path& p) { return load_model(p).model; }, py::arg("path"));
  m.def("parse_config", [](const std::string& text) { return cli::config_to_json(cli::parse_config(text)); },
        py::arg("json_text"), "Validate a training config and return it with defaults filled in.");
}
