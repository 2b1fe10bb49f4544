#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "pfsa/attention.hpp"
#include "pfsa/cam.hpp"
#include "pfsa/checkpoint.hpp"
#include "pfsa/cli.hpp"
#include "pfsa/dataset.hpp"
#include "pfsa/errors.hpp"
#include "pfsa/gradcheck.hpp"
#include "pfsa/retrieval.hpp"

namespace py = pybind11;
using namespace pfsa;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<ImageMeta> to_meta(const std::vector<std::pair<int, int>>& pairs) {
  std::vector<ImageMeta> meta;
  for (auto [id, cam] : pairs) meta.push_back({id, cam});
  return meta;
}

py::dict ranking_dict(const RankingResult& r) {
  py::dict d;
  d["cmc"] = r.cmc;
  d["map"] = r.map;
  py::dict ap;
  for (const auto& q : r.per_query_ap) ap[py::int_(q.query)] = q.ap;
  d["per_query_ap"] = ap;
  d["skipped"] = r.skipped_queries;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pfsa, m) {
  m.doc() = "Parameter-free spatial attention: layers, CAMs, retrieval metrics and toy data";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

  m.def("attention_map", [](const Array& f) { return to_array(attention_map(to_tensor(f)).weights); }, py::arg("f"),
        "Softmax over positions of the channel sum of a C×H×W map.");
  m.def(
      "sa_forward",
      [](const Array& f) {
        const auto r = sa_forward(to_tensor(f));
        return py::make_tuple(to_array(r.out), to_array(r.map.weights));
      },
      py::arg("f"), "Returns (F, p).");
  m.def(
      "sa_backward",
      [](const Array& f, const Array& grad_out) {
        return to_array(sa_backward(sa_forward(to_tensor(f)).tape, to_tensor(grad_out)));
      },
      py::arg("f"), py::arg("grad_out"));
  m.def("sa_jacobian", [](const Array& f) { return to_array(sa_jacobian(to_tensor(f))); }, py::arg("f"));
  m.def(
      "gap",
      [](const Array& f, const std::string& mode) {
        if (mode != "mean" && mode != "sum") throw ConfigError("gap mode must be 'mean' or 'sum'");
        return to_array(gap_forward(to_tensor(f), mode == "sum" ? PoolMode::sum : PoolMode::mean).out);
      },
      py::arg("f"), py::arg("mode") = "mean");
  m.def(
      "stripe_pool",
      [](const Array& f, std::size_t parts) {
        std::vector<Array> out;
        for (const auto& p : stripe_pool(to_tensor(f), parts).parts) out.push_back(to_array(p));
        return out;
      },
      py::arg("f"), py::arg("parts"));

  m.def(
      "cam_gap", [](const Array& f, const Array& w) { return to_array(cam_gap(to_tensor(f), to_tensor(w).data()).values); },
      py::arg("f"), py::arg("w"));
  m.def(
      "cam_sa", [](const Array& f, const Array& w) { return to_array(cam_sa(to_tensor(f), to_tensor(w).data()).values); },
      py::arg("f"), py::arg("w"));
  m.def(
      "cam_full_fc",
      [](const Array& f, const Array& w) { return to_array(cam_full_fc(to_tensor(f), to_tensor(w)).values); },
      py::arg("f"), py::arg("position_weights"));
  m.def(
      "heatmap_levels",
      [](const Array& values) {
        const auto levels = heatmap_levels(to_tensor(values));
        py::array_t<std::uint8_t> out({values.shape(0), values.shape(1)});
        std::copy(levels.begin(), levels.end(), out.mutable_data());
        return out;
      },
      py::arg("values"));

  m.def(
      "evaluate_protocol",
      [](const Array& dist, const std::vector<std::pair<int, int>>& query, const std::vector<std::pair<int, int>>& gallery,
         std::size_t max_rank) {
        const auto q = to_meta(query), g = to_meta(gallery);
        return ranking_dict(evaluate_protocol(to_tensor(dist), q, g, max_rank));
      },
      py::arg("dist"), py::arg("query"), py::arg("gallery"), py::arg("max_rank") = 10,
      "query and gallery are lists of (identity, camera).");

  m.def(
      "generate_toy",
      [](std::size_t num_identities, std::size_t num_train_identities, std::size_t images_per_identity_per_camera,
         std::size_t image_height, std::size_t image_width, std::uint64_t seed) {
        ToySpec spec;
        spec.num_identities = num_identities;
        spec.num_train_identities = num_train_identities;
        spec.images_per_identity_per_camera = images_per_identity_per_camera;
        spec.image_height = image_height;
        spec.image_width = image_width;
        spec.seed = seed;
        py::list out;
        for (const auto& s : generate_toy(spec)) {
          py::dict d;
          d["image"] = to_array(s.image);
          d["identity"] = s.identity;
          d["camera"] = s.camera;
          d["split"] = std::string(split_name(s.split));
          d["index"] = s.index;
          out.append(d);
        }
        return out;
      },
      py::arg("num_identities") = 40, py::arg("num_train_identities") = 20,
      py::arg("images_per_identity_per_camera") = 4, py::arg("image_height") = 64, py::arg("image_width") = 32,
      py::arg("seed") = 0);

  m.def("read_ppm", [](const std::filesystem::path& p) { return to_array(read_ppm(p)); }, py::arg("path"));
  m.def("write_ppm", [](const Array& img, const std::filesystem::path& p) { write_ppm(to_tensor(img), p); },
        py::arg("image"), py::arg("path"));
  m.def(
      "read_checkpoint",
      [](const std::filesystem::path& p) {
        py::dict d;
        for (const auto& [name, t] : read_checkpoint(p)) d[py::str(name)] = to_array(t);
        return d;
      },
      py::arg("path"));
  m.def(
      "write_checkpoint",
      [](const std::map<std::string, Array>& params, const std::filesystem::path& p) {
        Params converted;
        for (const auto& [name, a] : params) converted.emplace(name, to_tensor(a));
        write_checkpoint(converted, p);
      },
      py::arg("params"), py::arg("path"));

  m.def(
      "gradcheck",
      [](std::size_t trials, std::uint64_t seed, const std::string& inject_fault) {
        GradcheckOptions options;
        options.trials = trials;
        options.seed = seed;
        options.inject_fault = inject_fault;
        py::list out;
        for (const auto& e : run_gradcheck(options)) {
          py::dict d;
          d["layer"] = e.layer;
          d["max_error"] = e.max_error;
          d["threshold"] = e.threshold;
          d["passed"] = e.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("trials") = 10, py::arg("seed") = 1, py::arg("inject_fault") = "");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"pfsa"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
