#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "vtcd/backend.hpp"
#include "vtcd/cli.hpp"
#include "vtcd/concepts.hpp"
#include "vtcd/json_io.hpp"
#include "vtcd/rosetta.hpp"
#include "vtcd/tubelets.hpp"
#include "vtcd/wire.hpp"

namespace py = pybind11;
using namespace vtcd;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

FeatureVolume volume_from_array(const FloatArray& a) {
  if (a.ndim() != 4) throw Error(ErrorCode::kInvalidArgument, "volume array must be C x T x H x W");
  FeatureVolume v("", SiteId{}, a.shape(0), Dims3{a.shape(1), a.shape(2), a.shape(3)});
  std::copy(a.data(), a.data() + a.size(), v.data.begin());
  return v;
}

FloatArray volume_to_array(const FeatureVolume& v) {
  FloatArray a({v.channels, v.dims.t, v.dims.h, v.dims.w});
  std::copy(v.data.begin(), v.data.end(), a.mutable_data());
  return a;
}

std::pair<Dims3, Grid> grid_from_array(const ByteArray& a) {
  if (a.ndim() != 3) throw Error(ErrorCode::kInvalidArgument, "mask array must be T x H x W");
  Dims3 d{a.shape(0), a.shape(1), a.shape(2)};
  Grid g(a.data(), a.data() + a.size());
  for (auto& v : g) v = v ? 1 : 0;
  return {d, g};
}

ByteArray grid_to_array(const Dims3& d, const Grid& g) {
  ByteArray a({d.t, d.h, d.w});
  std::copy(g.begin(), g.end(), a.mutable_data());
  return a;
}

Eigen::MatrixXd matrix_from_array(const DoubleArray& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kInvalidArgument, "data must be a 2-d array");
  Eigen::MatrixXd m(a.shape(0), a.shape(1));
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    for (py::ssize_t j = 0; j < a.shape(1); ++j) m(i, j) = a.at(i, j);
  return m;
}

DoubleArray matrix_to_array(const Eigen::MatrixXd& m) {
  DoubleArray a({m.rows(), m.cols()});
  auto out = a.mutable_unchecked<2>();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
  return a;
}

class ToyModel {
 public:
  ToyModel(const std::string& weights_json, const std::string& manifest_path) {
    const Json wj = Json::parse(weights_json);
    auto [config, weights] = toy_from_json(wj);
    const auto manifest = VideoSetManifest::read(manifest_path);
    auto videos = std::make_shared<VideoStore>();
    for (const auto& id : manifest.video_ids) (*videos)[id] = manifest.load_input(id);
    toy_ = std::make_unique<ToyTransformer>(config, std::move(weights), videos, wj.value("model_id", "toy"));
  }

  std::string model_id() const { return toy_->model_id(); }
  std::vector<std::int64_t> grid() const { return {toy_->grid().t, toy_->grid().h, toy_->grid().w}; }

  std::string sites() const {
    Json out = Json::array();
    for (const auto& s : toy_->list_sites()) out.push_back(site_to_json(s));
    return out.dump();
  }

  double evaluate(const std::string& forward_json) const {
    return toy_->evaluate(wire::parse_forward(Json::parse(forward_json)));
  }

  std::pair<std::vector<double>, std::vector<double>> forward(const std::string& forward_json) const {
    const auto req = wire::parse_forward(Json::parse(forward_json));
    const auto p = toy_->forward(req.video_id, req.masks);
    return {p.logits, p.dense};
  }

  FloatArray site_features(const std::string& video_id, const std::string& site_json) const {
    return volume_to_array(toy_->site_features(video_id, site_from_json(Json::parse(site_json))));
  }

  std::string handle(const std::string& message_json) const {
    return wire::handle_message(*toy_, Json::parse(message_json), toy_->config().in_channels).dump();
  }

 private:
  std::unique_ptr<ToyTransformer> toy_;
};

}  // namespace

PYBIND11_MODULE(_vtcd, m) {
  m.doc() = "Native bindings for the vtcd concept discovery engine";
  static py::exception<Error> error(m, "VtcdError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.attr("PROTOCOL_VERSION") = wire::kProtocolVersion;
  m.attr("VOLUME_FORMAT_VERSION") = kVolumeFormatVersion;

  m.def("read_volume", [](const std::string& path) { return volume_to_array(read_volume(path)); }, py::arg("path"));
  m.def("write_volume", [](const FloatArray& a, const std::string& path) { write_volume(volume_from_array(a), path); },
        py::arg("array"), py::arg("path"));

  m.def(
      "encode_rle",
      [](const ByteArray& a) {
        auto [d, g] = grid_from_array(a);
        return encode_rle("", d, g).runs;
      },
      py::arg("grid"));
  m.def(
      "decode_rle",
      [](const std::vector<std::uint32_t>& runs, const std::array<std::int64_t, 3>& dims) {
        const Dims3 d{dims[0], dims[1], dims[2]};
        return grid_to_array(d, decode_rle(BinaryMask{"", d, runs}));
      },
      py::arg("runs"), py::arg("dims"));

  m.def(
      "slic_segment",
      [](const FloatArray& a, int n_segments, double compactness, int max_iters, double min_size_fraction) {
        SlicParams p{n_segments, compactness, max_iters, min_size_fraction};
        const auto v = volume_from_array(a);
        const auto masks = slic_segment(v, p);
        std::vector<int> labels(v.dims.cells(), -1);
        for (std::size_t i = 0; i < masks.size(); ++i) {
          const auto g = decode_rle(masks[i]);
          for (std::size_t c = 0; c < g.size(); ++c)
            if (g[c]) labels[c] = static_cast<int>(i);
        }
        py::array_t<int> out({v.dims.t, v.dims.h, v.dims.w});
        std::copy(labels.begin(), labels.end(), out.mutable_data());
        return out;
      },
      py::arg("volume"), py::arg("n_segments") = 12, py::arg("compactness") = 0.1, py::arg("max_iters") = 10,
      py::arg("min_size_fraction") = 0.05);

  m.def(
      "cnmf",
      [](const DoubleArray& data, int q, std::uint64_t seed, int max_iters, double tol) {
        CnmfOptions o;
        o.seed = seed;
        o.max_iters = max_iters;
        o.tol = tol;
        const auto r = cnmf(matrix_from_array(data), q, o);
        py::dict out;
        out["weights"] = matrix_to_array(r.weights);
        out["assignments"] = matrix_to_array(r.assignments);
        out["centroids"] = matrix_to_array(r.centroids);
        out["objective_trace"] = r.objective_trace;
        out["iterations"] = r.iterations;
        return out;
      },
      py::arg("data"), py::arg("q"), py::arg("seed") = 0, py::arg("max_iters") = 500, py::arg("tol") = 1e-5);
  m.def(
      "select_cluster_count",
      [](const DoubleArray& data, int q_min, int q_max, std::uint64_t seed) {
        CnmfOptions o;
        o.seed = seed;
        const auto s = select_cluster_count(matrix_from_array(data), q_min, q_max, o);
        return py::make_tuple(s.q, s.degenerate, s.silhouettes);
      },
      py::arg("data"), py::arg("q_min") = 2, py::arg("q_max") = 10, py::arg("seed") = 0);

  m.def(
      "r_score",
      [](const std::vector<std::vector<ByteArray>>& supports) {
        std::vector<std::vector<BinaryMask>> masks;
        Dims3 dims;
        for (const auto& concept_masks : supports) {
          std::vector<BinaryMask> row;
          for (std::size_t v = 0; v < concept_masks.size(); ++v) {
            auto [d, g] = grid_from_array(concept_masks[v]);
            dims = d;
            row.push_back(encode_rle("v" + std::to_string(v), d, g));
          }
          masks.push_back(std::move(row));
        }
        return r_score(masks, dims);
      },
      py::arg("supports"));

  m.def(
      "materialize_toy",
      [](const std::string& text) {
        Json j = Json::parse(text);
        auto [config, weights] = toy_from_json(j);
        Json out = toy_to_json(config, weights);
        out["model_id"] = j.value("model_id", "toy");
        return out.dump();
      },
      py::arg("toy_json"));

  py::class_<ToyModel>(m, "ToyModel")
      .def(py::init<const std::string&, const std::string&>(), py::arg("weights_json"), py::arg("manifest_path"))
      .def_property_readonly("model_id", &ToyModel::model_id)
      .def_property_readonly("grid", &ToyModel::grid)
      .def("sites_json", &ToyModel::sites)
      .def("evaluate_json", &ToyModel::evaluate, py::arg("forward_json"))
      .def("forward_json", &ToyModel::forward, py::arg("forward_json"))
      .def("site_features_json", &ToyModel::site_features, py::arg("video_id"), py::arg("site_json"))
      .def("handle_json", &ToyModel::handle, py::arg("message_json"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
