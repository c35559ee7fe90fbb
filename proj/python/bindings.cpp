#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "spg/checkpoint.hpp"
#include "spg/errors.hpp"
#include "spg/runner.hpp"

namespace py = pybind11;
using namespace spg;

namespace {

/// Accuracy matrix as a dense T x T array; entries above the diagonal are NaN.
Matrix to_dense(const AccuracyMatrix& a) {
  const int T = a.tasks();
  Matrix m = Matrix::Constant(T, T, std::numeric_limits<double>::quiet_NaN());
  for (int j = 1; j <= T; ++j)
    for (int i = 1; i <= j; ++i)
      if (a.has(i, j)) m(i - 1, j - 1) = a.at(i, j);
  return m;
}

AccuracyMatrix from_dense(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError(-1, "accuracy matrix must be square");
  AccuracyMatrix a(static_cast<int>(m.rows()));
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i <= j; ++i) a.set(static_cast<int>(i + 1), static_cast<int>(j + 1), m(i, j));
  return a;
}

py::dict split_dict(const Split& s) {
  py::dict d;
  d["inputs"] = s.inputs;
  d["labels"] = s.labels;
  return d;
}

py::list stream_list(const TaskStream& s) {
  py::list out;
  for (const auto& t : s.tasks) {
    py::dict d;
    d["task_id"] = t.task_id;
    d["num_classes"] = t.num_classes;
    d["train"] = split_dict(t.train);
    d["val"] = split_dict(t.val);
    d["test"] = split_dict(t.test);
    out.append(d);
  }
  return out;
}

py::dict run_dict(const RunResult& r) {
  py::dict d;
  d["method"] = r.method.name();
  d["accuracy"] = to_dense(r.accuracy);
  d["avg_accuracy"] = avg_accuracy(r.accuracy);
  const auto bwt = backward_transfer(r.accuracy);
  d["bwt"] = bwt ? py::cast(*bwt) : py::none();
  py::list blocked;
  for (const auto& b : r.blocked_history) blocked.append(b.total);
  d["blocked"] = blocked;
  py::list importance;
  if (!r.importance_history.empty())
    for (const auto& v : r.importance_history.back().per_layer) importance.append(v);
  d["importance"] = importance;
  d["extractor_params"] = r.params.extractor;
  return d;
}

TaskStream build_stream(const std::string& kind, int n_tasks, int classes, Index dim, int samples, std::uint64_t seed,
                        double drift) {
  if (kind == "dissimilar") return gen_dissimilar_stream(n_tasks, classes, dim, samples, seed);
  if (kind == "similar") return gen_similar_stream(n_tasks, classes, dim, samples, seed, drift);
  throw InvalidArgument("stream kind must be 'dissimilar' or 'similar'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Soft-masked gradient continual learning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IdxError>(m, "IdxError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  m.def("layer_normalize", &layer_normalize, py::arg("gradient"));
  m.def("raw_importance", &raw_importance, py::arg("gradient"));

  m.def("avg_accuracy", [](const Matrix& a) { return avg_accuracy(from_dense(a)); }, py::arg("accuracy"));
  m.def(
      "forward_transfer",
      [](const Matrix& a, const std::vector<double>& ref) { return forward_transfer(from_dense(a), ref); },
      py::arg("accuracy"), py::arg("reference"));
  m.def(
      "backward_transfer", [](const Matrix& a) { return backward_transfer(from_dense(a)); }, py::arg("accuracy"));

  m.def(
      "make_stream",
      [](const std::string& kind, int n_tasks, int classes, Index dim, int samples, std::uint64_t seed, double drift) {
        return stream_list(build_stream(kind, n_tasks, classes, dim, samples, seed, drift));
      },
      py::arg("kind") = "dissimilar", py::arg("n_tasks") = 5, py::arg("classes_per_task") = 2, py::arg("dim") = 16,
      py::arg("samples_per_class") = 400, py::arg("seed") = 0, py::arg("drift") = 0.2);

  m.def(
      "load_idx",
      [](const std::filesystem::path& images, const std::filesystem::path& labels) {
        IdxData d = load_idx(images, labels);
        return py::make_tuple(d.inputs, d.labels);
      },
      py::arg("images"), py::arg("labels"));

  m.def(
      "run_continual",
      [](const std::string& method, const std::string& kind, int n_tasks, int classes, Index dim, int samples,
         std::uint64_t seed, std::vector<Index> hidden, double lr, int epochs, Index batch_size, int patience) {
        const TaskStream stream = build_stream(kind, n_tasks, classes, dim, samples, seed, 0.2);
        TrainConfig c;
        c.lr = lr;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.patience = patience;
        c.seed = seed;
        RunOptions o;
        o.hidden = std::move(hidden);
        py::gil_scoped_release release;
        RunResult r = run_continual(stream, Method::parse(method), c, o);
        py::gil_scoped_acquire acquire;
        return run_dict(r);
      },
      py::arg("method"), py::arg("kind") = "dissimilar", py::arg("n_tasks") = 5, py::arg("classes_per_task") = 2,
      py::arg("dim") = 16, py::arg("samples_per_class") = 400, py::arg("seed") = 0,
      py::arg("hidden") = std::vector<Index>{8, 8}, py::arg("lr") = 0.6, py::arg("epochs") = 100,
      py::arg("batch_size") = 64, py::arg("patience") = 20);

  m.def(
      "cli",
      [](const std::string& command, const std::filesystem::path& config, std::optional<std::filesystem::path> out,
         std::optional<std::vector<std::uint64_t>> seeds, std::optional<int> threads) {
        CliOptions o{config, std::move(out), std::move(seeds), threads};
        std::ostringstream log;
        int code;
        {
          py::gil_scoped_release release;
          if (command == "run")
            code = cmd_run(o, log);
          else if (command == "prune")
            code = cmd_prune(o, log);
          else if (command == "probe")
            code = cmd_probe(o, log);
          else
            code = kExitConfig;
        }
        if (code == kExitConfig && command != "run" && command != "prune" && command != "probe")
          log << "unknown command '" << command << "'\n";
        return py::make_tuple(code, log.str());
      },
      py::arg("command"), py::arg("config"), py::arg("out") = py::none(), py::arg("seeds") = py::none(),
      py::arg("threads") = py::none());
}
