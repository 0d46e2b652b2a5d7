#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "qgk/config.hpp"
#include "qgk/dataset.hpp"
#include "qgk/koopman.hpp"
#include "qgk/pod.hpp"
#include "qgk/report_io.hpp"
#include "qgk/rollout.hpp"
#include "qgk/training.hpp"

namespace py = pybind11;
using namespace qgk;

namespace {

py::array_t<float> payload_array(const Dataset& d) {
  py::array_t<float> out({static_cast<py::ssize_t>(d.n_snapshots), static_cast<py::ssize_t>(d.n_channels),
                          static_cast<py::ssize_t>(d.ny), static_cast<py::ssize_t>(d.nx)});
  std::copy(d.payload.begin(), d.payload.end(), out.mutable_data());
  return out;
}

void set_payload(Dataset& d, py::array_t<float, py::array::c_style | py::array::forcecast> a) {
  if (a.ndim() != 4) throw std::invalid_argument("payload must have shape (T, C, ny, nx)");
  d.n_snapshots = static_cast<std::uint32_t>(a.shape(0));
  d.n_channels = static_cast<std::uint32_t>(a.shape(1));
  d.ny = static_cast<std::uint32_t>(a.shape(2));
  d.nx = static_cast<std::uint32_t>(a.shape(3));
  d.payload.assign(a.data(), a.data() + a.size());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-layer QG solver, POD latent space and continuous-time Koopman operators";

  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<QGParams>(m, "QGParams")
      .def(py::init<>())
      .def_readwrite("nx", &QGParams::nx)
      .def_readwrite("ny", &QGParams::ny)
      .def_readwrite("L", &QGParams::L)
      .def_readwrite("dt", &QGParams::dt)
      .def_readwrite("beta", &QGParams::beta)
      .def_readwrite("r_ek", &QGParams::r_ek)
      .def_readwrite("U1", &QGParams::U1)
      .def_readwrite("U2", &QGParams::U2)
      .def_readwrite("H1", &QGParams::H1)
      .def_readwrite("H2", &QGParams::H2)
      .def_readwrite("delta", &QGParams::delta)
      .def_readwrite("kd2", &QGParams::kd2)
      .def_readonly("F1", &QGParams::F1)
      .def_readonly("F2", &QGParams::F2)
      .def_readwrite("ssd_cutoff_frac", &QGParams::ssd_cutoff_frac)
      .def_readwrite("ssd_strength", &QGParams::ssd_strength)
      .def_readwrite("ssd_order", &QGParams::ssd_order)
      .def("derive", [](QGParams& p) { p.derive(); return p; })
      .def("validate", &QGParams::validate);

  py::class_<DatasetOptions>(m, "DatasetOptions")
      .def(py::init<>())
      .def_readwrite("spinup_days", &DatasetOptions::spinup_days)
      .def_readwrite("run_days", &DatasetOptions::run_days)
      .def_readwrite("subsample", &DatasetOptions::subsample)
      .def_readwrite("out_resolution", &DatasetOptions::out_resolution)
      .def_readwrite("seed", &DatasetOptions::seed);

  py::class_<NormalizationStats>(m, "NormalizationStats")
      .def(py::init<>())
      .def_readwrite("mean", &NormalizationStats::mean)
      .def_readwrite("std", &NormalizationStats::std);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readonly("n_snapshots", &Dataset::n_snapshots)
      .def_readonly("n_channels", &Dataset::n_channels)
      .def_readonly("ny", &Dataset::ny)
      .def_readonly("nx", &Dataset::nx)
      .def_readwrite("dt_snapshot_seconds", &Dataset::dt_snapshot_seconds)
      .def_readwrite("stats", &Dataset::stats)
      .def_property("payload", &payload_array, &set_payload, "Normalised snapshots, shape (T, C, ny, nx)")
      .def("snapshot", &Dataset::snapshot_vector, py::arg("index"))
      .def("state_dim", &Dataset::state_dim);

  m.def("generate_dataset", [](const QGParams& p, const DatasetOptions& o) {
    py::gil_scoped_release release;
    return generate_dataset(p, o);
  }, py::arg("params"), py::arg("options"));
  m.def("expected_snapshots", &expected_snapshots, py::arg("params"), py::arg("options"));
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("dataset"), py::arg("path"));

  py::class_<PODBasis>(m, "PODBasis")
      .def(py::init<>())
      .def_readonly("modes", &PODBasis::modes)
      .def_readonly("singular_values", &PODBasis::singular_values)
      .def_readonly("stats", &PODBasis::stats)
      .def_property_readonly("d", &PODBasis::d)
      .def_property_readonly("state_dim", &PODBasis::state_dim)
      .def_property_readonly("shape", [](const PODBasis& b) {
        return py::make_tuple(b.shape.channels, b.shape.ny, b.shape.nx);
      })
      .def("encode", [](const PODBasis& b, const Vector& x, std::optional<Vector> prev) {
        return encode(b, x, prev);
      }, py::arg("x"), py::arg("prev") = py::none())
      .def("decode", [](const PODBasis& b, const Vector& z) { return decode(b, z); }, py::arg("z"));

  m.def("fit_pod", [](const Dataset& d, int dim, std::size_t n_train) { return fit_pod(d, dim, n_train); },
        py::arg("dataset"), py::arg("d"), py::arg("n_train"));
  m.def("read_basis", &read_basis, py::arg("path"));
  m.def("write_basis", &write_basis, py::arg("basis"), py::arg("path"));

  py::class_<KoopmanOperator>(m, "KoopmanOperator")
      .def(py::init<>())
      .def(py::init([](const Matrix& W, const Matrix& D) { return KoopmanOperator{W, D}; }), py::arg("W"),
           py::arg("D"))
      .def_readwrite("W", &KoopmanOperator::W)
      .def_readwrite("D", &KoopmanOperator::D)
      .def_property_readonly("d", &KoopmanOperator::d)
      .def("K", &KoopmanOperator::K);
  m.def("read_operator", &read_operator, py::arg("path"));
  m.def("write_operator", &write_operator, py::arg("op"), py::arg("path"));

  m.def("assemble", &assemble, py::arg("W"), py::arg("D"));
  m.def("matrix_exp", py::overload_cast<const Matrix&, double>(&matrix_exp), py::arg("K"), py::arg("tau") = 1.0);
  m.def("rk4_step", &rk4_step, py::arg("K"), py::arg("z"), py::arg("h"));
  m.def("spectrum", [](const Matrix& K) {
    const OperatorSpectrum s = spectrum(K);
    return py::make_tuple(s.eigenvalues, s.spectral_abscissa);
  }, py::arg("K"), "Eigenvalues (sorted) and spectral abscissa");
  m.def("stabilize", py::overload_cast<const Matrix&, double>(&stabilize), py::arg("K"), py::arg("margin"));

  py::class_<CtdmdResult>(m, "CtdmdResult")
      .def_readonly("W", &CtdmdResult::W)
      .def_readonly("D", &CtdmdResult::D)
      .def_readonly("A", &CtdmdResult::A)
      .def_readonly("ridge", &CtdmdResult::ridge)
      .def_readonly("used_fallback", &CtdmdResult::used_fallback)
      .def_readonly("note", &CtdmdResult::note);
  m.def("fit_ctdmd", &fit_ctdmd, py::arg("trajectories"), py::arg("dt") = 1.0, py::arg("ridge") = 0.0);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("rollout_len", &TrainConfig::rollout_len)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("stabilize_margin", &TrainConfig::stabilize_margin)
      .def_readwrite("holdout_fraction", &TrainConfig::holdout_fraction)
      .def_readwrite("ridge", &TrainConfig::ridge)
      .def_readwrite("threads", &TrainConfig::threads);

  py::class_<LossWeights>(m, "LossWeights")
      .def(py::init<>())
      .def_readwrite("w_pred", &LossWeights::w_pred)
      .def_readwrite("w_latent", &LossWeights::w_latent)
      .def_readwrite("w_phys", &LossWeights::w_phys)
      .def_readwrite("grad_mask_strength", &LossWeights::grad_mask_strength)
      .def_readwrite("repulsion_scale", &LossWeights::repulsion_scale)
      .def_readwrite("repulsion_bandwidth", &LossWeights::repulsion_bandwidth);

  m.def("train", [](const Dataset& data, const PODBasis& basis, const TrainConfig& cfg, const LossWeights& w) {
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(data, basis, cfg, w);
    }
    py::list log;
    for (const auto& e : r.log) log.append(py::module_::import("json").attr("loads")(epoch_record_json(e)));
    return py::make_tuple(r.best_op, log, r.initial);
  }, py::arg("dataset"), py::arg("basis"), py::arg("config") = TrainConfig{}, py::arg("weights") = LossWeights{},
        "Returns (operator with the lowest holdout loss, per-epoch log, CT-DMD initial operator)");

  m.def("evaluate_rollout_json",
        [](const KoopmanOperator& op, const PODBasis& basis, const Dataset& data, const QGParams& physics,
           std::size_t horizon, const std::string& mode, double dt_query, std::size_t start, std::size_t max_lag) {
          RolloutOptions o;
          o.horizon = horizon;
          o.mode = parse_mode(mode);
          o.dt_query = dt_query;
          o.start = start;
          o.max_lag = max_lag;
          RolloutReport rep;
          {
            py::gil_scoped_release release;
            rep = evaluate_rollout(op, basis, data, physics, o);
          }
          return report_to_json(rep, "");
        },
        py::arg("op"), py::arg("basis"), py::arg("dataset"), py::arg("physics"), py::arg("horizon"),
        py::arg("mode") = "matrix_exp", py::arg("dt_query") = 1.0, py::arg("start") = 1, py::arg("max_lag") = 100);

  m.def("default_config_yaml", [] {
    RunConfig c;
    return to_yaml(c.finalize());
  });
  m.def("normalize_config_yaml", [](const std::string& text) { return to_yaml(from_yaml(text).finalize()); },
        py::arg("text"), "Parse, validate and re-emit a configuration");
}
