#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "textbcs/errors.hpp"
#include "textbcs/evalkit.hpp"
#include "textbcs/evidential.hpp"
#include "textbcs/objective.hpp"
#include "textbcs/text.hpp"
#include "textbcs/trainer.hpp"

namespace py = pybind11;
using namespace textbcs;
using nlohmann::json;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
json from_py(const py::object& o) { return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

ExperimentConfig make_config(const py::dict& overrides) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : overrides) kv[k.cast<std::string>()] = from_py(py::reinterpret_borrow<py::object>(v)).dump();
  return config_from_overrides(kv);
}

Tensor from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

LabelMap labels_from(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw std::invalid_argument("labels must be [N,H,W]");
  LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Text-guided evidential segmentation core";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);

  m.def("default_config", [] { return to_py(ExperimentConfig{}.to_json()); });
  m.def("make_config", [](const py::dict& o) { return to_py(make_config(o).to_json()); }, py::arg("overrides") = py::dict());
  m.def("load_config", [](const std::string& path, const std::map<std::string, std::string>& o) {
    return to_py(load_config(path, o).to_json());
  }, py::arg("path"), py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("config_hash", [](const py::dict& o) { return make_config(o).hash(); }, py::arg("overrides") = py::dict());

  m.def("render_prompt", [](const std::string& loc, const std::string& shape, const std::string& size, int count) {
    return synth::render_prompt({synth::parse_location(loc), synth::parse_shape(shape), synth::parse_size(size), count});
  }, py::arg("location"), py::arg("shape"), py::arg("size"), py::arg("count"));
  m.def("tokenize", [](const std::string& prompt, int length) {
    const auto t = text::tokenize(prompt, length, text::Vocabulary::prompt_vocabulary());
    return py::make_tuple(t.ids, std::vector<int>(t.valid.begin(), t.valid.end()));
  }, py::arg("prompt"), py::arg("length") = 12);
  m.def("vocabulary", [] { return to_py(text::Vocabulary::prompt_vocabulary().to_json()); });

  m.def("generate_dataset", [](const std::string& out, int n_groups, int per_group, const py::dict& o) {
    const auto man = synth::generate_dataset(make_config(o), n_groups, per_group, out);
    return static_cast<int>(man.records.size());
  }, py::arg("out_dir"), py::arg("n_groups"), py::arg("samples_per_group"), py::arg("overrides") = py::dict());

  m.def("train", [](const std::string& data, const std::string& out, const py::dict& o) {
    const ExperimentConfig cfg = make_config(o);
    const synth::DatasetManifest manifest = synth::load_manifest(data);
    nlohmann::json state;
    {
      py::gil_scoped_release release;
      state = train::train(cfg, manifest, out, {false, {}}).state.to_json(true);
    }
    return to_py(state);
  }, py::arg("data_dir"), py::arg("out_dir"), py::arg("overrides") = py::dict());
  m.def("evaluate", [](const std::string& ckpt, const std::string& data, const std::string& split) {
    auto ck = train::load_checkpoint(ckpt);
    const synth::SplitData d(synth::load_manifest(data), synth::parse_split(split));
    return to_py(train::evaluate(*ck.model, d).to_json());
  }, py::arg("checkpoint"), py::arg("data_dir"), py::arg("split") = "test");

  m.def("dice_metric", [](const std::vector<int>& pred, const std::vector<int>& gt, int c) {
    const auto s = metrics::dice_metric(pred, gt, c);
    return py::make_tuple(s.per_class, s.mean);
  });
  m.def("miou_metric", [](const std::vector<int>& pred, const std::vector<int>& gt, int c) {
    const auto s = metrics::miou_metric(pred, gt, c);
    return py::make_tuple(s.per_class, s.mean);
  });
  m.def("paired_t_test", [](const std::vector<double>& a, const std::vector<double>& b, bool greater) {
    return to_py(evalkit::paired_t_test(a, b, greater ? evalkit::Alternative::kGreater : evalkit::Alternative::kTwoSided)
                     .to_json());
  }, py::arg("a"), py::arg("b"), py::arg("greater") = false);

  m.def("dirichlet_stats", [](const py::array_t<double>& evidence) {
    const auto out = evidential::dirichlet_stats(from_array(evidence));
    py::dict d;
    d["alpha"] = to_array(out.alpha);
    d["belief"] = to_array(out.belief);
    d["uncertainty"] = to_array(out.uncertainty);
    d["expected_prob"] = to_array(out.expected_prob);
    return d;
  });
  m.def("ice_loss", [](const py::array_t<double>& alpha, const py::array_t<int>& labels) {
    return evidential::ice_loss(from_array(alpha), labels_from(labels));
  });
  m.def("kl_to_uniform", [](const py::array_t<double>& alpha, const py::array_t<int>& labels) {
    return evidential::kl_to_uniform(from_array(alpha), labels_from(labels));
  });
  m.def("dice_loss", [](const py::array_t<double>& probs, const py::array_t<int>& labels) {
    const auto r = objective::dice_loss(from_array(probs), labels_from(labels));
    return py::make_tuple(r.value, to_array(r.grad));
  });
  m.def("lambda2_schedule", &objective::lambda2_schedule, py::arg("epoch"), py::arg("lambda2_max") = 5e-7,
        py::arg("warmup_epochs") = 100);
}
