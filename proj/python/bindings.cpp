// Python bindings. Configs cross the boundary as JSON text; the Python package
// wraps that in dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "vslnet/cli.hpp"
#include "vslnet/config.hpp"
#include "vslnet/errors.hpp"
#include "vslnet/evaluation.hpp"
#include "vslnet/synthetic.hpp"
#include "vslnet/training.hpp"

namespace py = pybind11;
using namespace vslnet;

namespace {

ModelConfig model_config(const std::string& json_text) {
  return model_config_from_json(nlohmann::json::parse(json_text));
}

py::dict moment_dict(const PredictedMoment& m) {
  py::dict d;
  d["start_index"] = m.start_index;
  d["end_index"] = m.end_index;
  d["start_time"] = m.start_time;
  d["end_time"] = m.end_time;
  d["probability"] = m.probability;
  d["scale"] = m.scale;
  return d;
}

struct PyModel {
  std::shared_ptr<Model> model;
};

}  // namespace

PYBIND11_MODULE(_vslnet, m) {
  m.doc() = "Span-based video moment localization";

  py::object base = py::reinterpret_steal<py::object>(
      PyErr_NewException("vslnet._vslnet.VslnetError", PyExc_RuntimeError, nullptr));
  m.attr("VslnetError") = base;
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

  m.def("time_to_span", &time_to_span, py::arg("tau"), py::arg("duration"), py::arg("n"));
  m.def("span_to_time", &span_to_time, py::arg("index"), py::arg("duration"), py::arg("n"));
  m.def(
      "highlight_labels",
      [](std::size_t s, std::size_t e, std::size_t n, double alpha) {
        auto y = build_highlight_labels(s, e, n, alpha);
        return std::vector<int>(y.begin(), y.end());
      },
      py::arg("start"), py::arg("end"), py::arg("n"), py::arg("alpha"));
  m.def(
      "nil_labels",
      [](std::size_t s, std::size_t e, std::size_t n, std::size_t l) {
        auto y = build_nil_labels(s, e, split_segments(n, l));
        return std::vector<int>(y.begin(), y.end());
      },
      py::arg("start"), py::arg("end"), py::arg("n"), py::arg("segment_length"));
  m.def(
      "locate_span",
      [](const std::vector<double>& ps, const std::vector<double>& pe) {
        return moment_dict(locate_span(ps, pe));
      },
      py::arg("start_probs"), py::arg("end_probs"));
  m.def(
      "iou", [](double a0, double a1, double b0, double b1) { return iou({a0, a1}, {b0, b1}); },
      py::arg("a_start"), py::arg("a_end"), py::arg("b_start"), py::arg("b_end"));

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out_dir, const std::string& config_json) {
        const auto c = synthetic_config_from_json(nlohmann::json::parse(config_json));
        return generate_synthetic_dataset(c, out_dir).size();
      },
      py::arg("out_dir"), py::arg("config_json") = "{}");

  py::class_<Dataset, std::shared_ptr<Dataset>>(m, "Dataset")
      .def_static(
          "load", [](const std::filesystem::path& p) { return std::make_shared<Dataset>(load_dataset(p)); },
          py::arg("path"))
      .def("__len__", [](const Dataset& d) { return d.annotations.size(); })
      .def_property_readonly("feature_dim", [](const Dataset& d) { return d.descriptor.feature_dim; })
      .def_property_readonly("embedding_dim", [](const Dataset& d) { return d.embeddings.dim(); })
      .def(
          "ids",
          [](const Dataset& d, const std::string& split) {
            std::vector<std::string> ids;
            for (const auto* a : d.split(split)) ids.push_back(a->id);
            return ids;
          },
          py::arg("split"))
      .def(
          "annotation",
          [](const Dataset& d, const std::string& id) {
            for (const auto& a : d.annotations) {
              if (a.id != id) continue;
              py::dict r;
              r["id"] = a.id;
              r["video_id"] = a.video_id;
              r["duration"] = a.duration;
              r["start"] = a.start;
              r["end"] = a.end;
              r["query"] = a.query;
              r["split"] = a.split;
              return r;
            }
            throw DataError("no annotation with id " + id);
          },
          py::arg("id"));

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& config_json) {
             return PyModel{std::make_shared<Model>(model_config(config_json))};
           }),
           py::arg("config_json"))
      .def_static(
          "load",
          [](const std::filesystem::path& ckpt, const std::string& config_json) {
            return PyModel{std::shared_ptr<Model>(load_model(ckpt, model_config(config_json)))};
          },
          py::arg("checkpoint"), py::arg("config_json"))
      .def_property_readonly("config_json",
                             [](const PyModel& p) { return to_json(p.model->config()).dump(); })
      .def_property_readonly("num_parameters",
                             [](const PyModel& p) { return p.model->params().total_elements(); })
      .def(
          "forward",
          [](const PyModel& p, const Dataset& ds, const std::string& id) {
            const auto& cfg = p.model->config();
            for (const auto& a : ds.annotations) {
              if (a.id != id) continue;
              const auto sample = prepare_sample(ds, a, cfg.labels());
              NoGradGuard no_grad;
              const auto out = p.model->forward(make_input(sample, cfg.dtype), ForwardContext{});
              py::list scales;
              for (std::size_t i = 0; i < out.scales.size(); ++i) {
                py::dict s;
                s["segment_length"] = out.scales[i].segment_length;
                s["start_probs"] = out.start_probs(i);
                s["end_probs"] = out.end_probs(i);
                if (cfg.variant != Variant::kBase) s["highlight"] = out.highlight_scores(i);
                if (cfg.variant == Variant::kNetL) s["nil"] = out.nil_scores(i);
                scales.append(s);
              }
              return scales;
            }
            throw DataError("no annotation with id " + id);
          },
          py::arg("dataset"), py::arg("id"))
      .def(
          "predict",
          [](const PyModel& p, const Dataset& ds, const std::string& split,
             const std::string& strategy) {
            py::list out;
            for (const auto& pr : predict(*p.model, ds, split, parse_strategy(strategy))) {
              auto d = moment_dict(pr.moment);
              d["id"] = pr.id;
              out.append(d);
            }
            return out;
          },
          py::arg("dataset"), py::arg("split") = "test", py::arg("strategy") = "pm");

  m.def(
      "train",
      [](const Dataset& ds, const std::string& model_json, const std::string& train_json,
         const std::filesystem::path& output_dir) {
        auto mc = model_config(model_json);
        // Input widths come from the data, as in the CLI.
        mc.video_dim = ds.descriptor.feature_dim;
        mc.query_dim = ds.embeddings.dim();
        const auto tc = train_config_from_json(nlohmann::json::parse(train_json));
        TrainOptions o;
        o.output_dir = output_dir;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(ds, mc, tc, o);
        }
        nlohmann::ordered_json summary;
        summary["best_epoch"] = r.best_epoch;
        summary["best_val_miou"] = r.best_miou;
        summary["stopped_early"] = r.stopped_early;
        summary["history"] = nlohmann::ordered_json::array();
        for (const auto& e : r.history) summary["history"].push_back(e.to_json());
        return py::make_tuple(PyModel{std::shared_ptr<Model>(std::move(r.model))}, summary.dump());
      },
      py::arg("dataset"), py::arg("model_json"), py::arg("train_json"),
      py::arg("output_dir") = std::filesystem::path());

  m.def(
      "evaluate",
      [](const py::list& predictions, const Dataset& ds, const std::string& split) {
        std::vector<Prediction> preds;
        for (const auto& item : predictions) {
          const auto d = item.cast<py::dict>();
          Prediction p;
          p.id = d["id"].cast<std::string>();
          p.moment.start_time = d["start_time"].cast<double>();
          p.moment.end_time = d["end_time"].cast<double>();
          preds.push_back(p);
        }
        std::vector<MomentAnnotation> truth;
        for (const auto* a : ds.split(split)) truth.push_back(*a);
        return report_to_json(evaluate(preds, truth)).dump();
      },
      py::arg("predictions"), py::arg("dataset"), py::arg("split") = "test");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"vslnet"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
