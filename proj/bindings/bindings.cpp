// Python module exposing the training harness, inference, and metrics.
// Tensors cross the boundary as contiguous float64 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "tdcnet/common.hpp"
#include "tdcnet/data.hpp"
#include "tdcnet/harness.hpp"
#include "tdcnet/metrics.hpp"
#include "tdcnet/model.hpp"
#include "tdcnet/serialize.hpp"
#include "tdcnet/tensor.hpp"

namespace py = pybind11;
using namespace tdc;

namespace {

using DoubleArray =
    py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DoubleArray& a, const std::string& name) {
  if (a.ndim() < 1 || a.ndim() > 4) {
    throw ShapeError(name + ": expected 1 to 4 dimensions, got " +
                     std::to_string(a.ndim()));
  }
  Shape shape(a.ndim());
  for (int i = 0; i < a.ndim(); ++i) shape[i] = static_cast<int>(a.shape(i));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(shape, std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.values().data(),
              t.values().size() * sizeof(double));
  return out;
}

// Drops leading size-1 batch and channel dims so depth maps come back (H, W).
py::array_t<double> to_array_hw(const Tensor& t) {
  Shape s = t.shape();
  while (s.size() > 2 && s.front() == 1) s.erase(s.begin());
  std::vector<py::ssize_t> shape(s.begin(), s.end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.values().data(),
              t.values().size() * sizeof(double));
  return out;
}

// Accepts (H, W) or (1, H, W) and returns a (1, H, W) tensor.
Tensor to_map_tensor(const DoubleArray& a, const std::string& name) {
  Tensor t = to_tensor(a, name);
  if (t.dim() == 2) return reshape(t, {1, t.size(0), t.size(1)});
  if (t.dim() == 3 && t.size(0) == 1) return t;
  throw ShapeError(name + ": expected (H, W) or (1, H, W)");
}

py::array_t<double> py_predict(const std::string& ckpt_dir,
                               const std::string& sample_dir,
                               const std::string& out_dir) {
  ModelConfig mc = load_checkpoint_config(ckpt_dir);
  DepthPrediction p = [&] {
    py::gil_scoped_release release;
    return predict(ckpt_dir, sample_dir, out_dir);
  }();
  return to_array_hw(mc.composite_raw ? p.composited : p.depth);
}

py::array_t<double> py_complete_depth(const std::string& ckpt_dir,
                                      const DoubleArray& rgb,
                                      const DoubleArray& raw_depth) {
  RgbdSample s;
  s.rgb = to_tensor(rgb, "rgb");
  if (s.rgb.dim() != 3 || s.rgb.size(0) != 3) {
    throw ShapeError("rgb: expected (3, H, W)");
  }
  s.raw_depth = to_map_tensor(raw_depth, "raw_depth");
  int h = s.rgb.size(1);
  int w = s.rgb.size(2);
  if (s.raw_depth.size(1) != h || s.raw_depth.size(2) != w) {
    throw ShapeError("raw_depth does not match the rgb resolution");
  }
  s.gt_depth = Tensor::zeros({1, h, w});
  s.mask = Tensor::zeros({1, h, w});
  s.valid = Tensor::zeros({1, h, w});
  s.id = "inference";

  ModelConfig mc = load_checkpoint_config(ckpt_dir);
  if (h != mc.input_h || w != mc.input_w) {
    throw ConfigError("input is " + std::to_string(h) + "x" +
                      std::to_string(w) + " but the checkpoint expects " +
                      std::to_string(mc.input_h) + "x" +
                      std::to_string(mc.input_w));
  }
  Tensor out = [&] {
    py::gil_scoped_release release;
    auto model = load_checkpoint(ckpt_dir);
    model->set_training(false);
    Batch b = make_batch({s}, mc.max_depth);
    NoGradGuard guard;
    DepthPrediction p = model->forward(b);
    return mc.composite_raw ? p.composited : p.depth;
  }();
  return to_array_hw(out);
}

py::dict py_load_sample(const std::string& split_dir, const std::string& id) {
  RgbdSample s = load_sample(split_dir, id);
  py::dict d;
  d["rgb"] = to_array(s.rgb);
  d["raw_depth"] = to_array_hw(s.raw_depth);
  d["gt_depth"] = to_array_hw(s.gt_depth);
  d["mask"] = to_array_hw(s.mask);
  d["valid"] = to_array_hw(s.valid);
  d["id"] = s.id;
  return d;
}

std::vector<std::string> py_make_toy(const std::string& out_dir, int n,
                                     uint64_t seed, int height, int width,
                                     const std::string& split,
                                     const std::string& corruption) {
  if (n <= 0) throw ConfigError("make_toy: n must be positive");
  std::string split_dir = out_dir + "/" + split;
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    ToySceneConfig tc;
    tc.height = height;
    tc.width = width;
    tc.seed = seed + static_cast<uint64_t>(i);
    tc.corruption = corruption;
    RgbdSample s = generate_toy_scene(tc);
    write_sample(split_dir, s);
    ids.push_back(s.id);
  }
  write_manifest(split_dir, ids);
  return ids;
}

int64_t py_param_count(const ModelConfig& cfg) {
  validate_config(cfg);
  Rng rng(0);
  TdcNet net(cfg, rng);
  int64_t total = 0;
  for (const auto& [name, p] : net.named_parameters()) {
    total += static_cast<int64_t>(p.values().size());
  }
  return total;
}

}  // namespace

PYBIND11_MODULE(_tdcnet, m) {
  m.doc() = "Dual-branch depth completion for transparent objects";
  m.attr("__version__") = "0.1.0";

  auto exc_error = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", exc_error);
  py::register_exception<ShapeError>(m, "ShapeError", exc_error);
  py::register_exception<DataError>(m, "DataError", exc_error);
  py::register_exception<NumericError>(m, "NumericError", exc_error);
  py::register_exception<EmptyRegionError>(m, "EmptyRegionError", exc_error);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("c", &ModelConfig::c)
      .def_readwrite("input_h", &ModelConfig::input_h)
      .def_readwrite("input_w", &ModelConfig::input_w)
      .def_readwrite("branch_a", &ModelConfig::branch_a)
      .def_readwrite("branch_b", &ModelConfig::branch_b)
      .def_readwrite("input_a", &ModelConfig::input_a)
      .def_readwrite("input_b", &ModelConfig::input_b)
      .def_readwrite("fusion", &ModelConfig::fusion)
      .def_readwrite("composite_raw", &ModelConfig::composite_raw)
      .def_readwrite("norm", &ModelConfig::norm)
      .def_readwrite("window", &ModelConfig::window)
      .def_readwrite("heads", &ModelConfig::heads)
      .def_readwrite("depths", &ModelConfig::depths)
      .def_readwrite("mlp_ratio", &ModelConfig::mlp_ratio)
      .def_readwrite("reduction", &ModelConfig::reduction)
      .def_readwrite("max_depth", &ModelConfig::max_depth)
      .def_readwrite("linear_output", &ModelConfig::linear_output)
      .def("__repr__",
           [](const ModelConfig& cfg) { return model_config_json(cfg); });

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("data_dir", &TrainConfig::data_dir)
      .def_readwrite("train_split", &TrainConfig::train_split)
      .def_readwrite("out_dir", &TrainConfig::out_dir)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("lr_decay_factor", &TrainConfig::lr_decay_factor)
      .def_readwrite("lr_decay_every", &TrainConfig::lr_decay_every)
      .def_readwrite("alpha", &TrainConfig::alpha)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("full_image_loss", &TrainConfig::full_image_loss)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("val_fraction", &TrainConfig::val_fraction)
      .def_readwrite("val_every", &TrainConfig::val_every)
      .def_readwrite("aug", &TrainConfig::aug)
      .def_readwrite("model", &TrainConfig::model)
      .def("__repr__",
           [](const TrainConfig& cfg) { return train_config_json(cfg); });

  py::class_<MetricsReport>(m, "MetricsReport")
      .def(py::init<>())
      .def_readwrite("rmse", &MetricsReport::rmse)
      .def_readwrite("rel", &MetricsReport::rel)
      .def_readwrite("mae", &MetricsReport::mae)
      .def_readwrite("delta_105", &MetricsReport::delta_105)
      .def_readwrite("delta_110", &MetricsReport::delta_110)
      .def_readwrite("delta_125", &MetricsReport::delta_125)
      .def_readwrite("n_pixels", &MetricsReport::n_pixels)
      .def_readwrite("n_samples", &MetricsReport::n_samples)
      .def("__repr__", [](const MetricsReport& r) {
        std::ostringstream os;
        os << "MetricsReport(rmse=" << r.rmse << ", rel=" << r.rel
           << ", mae=" << r.mae << ", delta_105=" << r.delta_105
           << ", delta_110=" << r.delta_110 << ", delta_125=" << r.delta_125
           << ", n_pixels=" << r.n_pixels << ", n_samples=" << r.n_samples
           << ")";
        return os.str();
      });

  py::class_<EpochRecord>(m, "EpochRecord")
      .def(py::init<>())
      .def_readwrite("epoch", &EpochRecord::epoch)
      .def_readwrite("depth_loss", &EpochRecord::depth_loss)
      .def_readwrite("smooth_loss", &EpochRecord::smooth_loss)
      .def_readwrite("total_loss", &EpochRecord::total_loss)
      .def_readwrite("beta", &EpochRecord::beta)
      .def_readwrite("lr", &EpochRecord::lr)
      .def_readwrite("wall_seconds", &EpochRecord::wall_seconds)
      .def_readwrite("has_val", &EpochRecord::has_val)
      .def_readwrite("val", &EpochRecord::val)
      .def("__repr__",
           [](const EpochRecord& r) { return epoch_record_json(r); });

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("last_dir", &TrainResult::last_dir)
      .def_readonly("best_dir", &TrainResult::best_dir)
      .def_readonly("log", &TrainResult::log);

  m.def("validate_config", &validate_config, py::arg("config"));
  m.def("validate_train_config", &validate_train_config, py::arg("config"));
  m.def("param_count", &py_param_count, py::arg("config"));
  m.def("train_config_json", &train_config_json, py::arg("config"));
  m.def("train_config_from_json", &train_config_from_json, py::arg("text"));
  m.def("read_run_log", &read_run_log, py::arg("path"));
  m.def("run_logs_equal", &run_logs_equal, py::arg("a"), py::arg("b"),
        py::arg("tol") = 0.0);

  m.def(
      "train",
      [](const TrainConfig& cfg, const std::string& resume_dir) {
        py::gil_scoped_release release;
        return train(cfg, resume_dir);
      },
      py::arg("config"), py::arg("resume_dir") = "");

  m.def(
      "evaluate",
      [](const std::string& ckpt_dir, const std::string& data_dir,
         const std::string& split, const std::string& error_map_dir,
         bool per_image) {
        py::gil_scoped_release release;
        return evaluate(ckpt_dir, data_dir, split, error_map_dir, per_image);
      },
      py::arg("ckpt_dir"), py::arg("data_dir"), py::arg("split") = "test",
      py::arg("error_map_dir") = "", py::arg("per_image") = false);

  m.def("predict", &py_predict, py::arg("ckpt_dir"), py::arg("sample_dir"),
        py::arg("out_dir"));
  m.def("complete_depth", &py_complete_depth, py::arg("ckpt_dir"),
        py::arg("rgb"), py::arg("raw_depth"));
  m.def("load_sample", &py_load_sample, py::arg("split_dir"), py::arg("id"));
  m.def("make_toy", &py_make_toy, py::arg("out_dir"), py::arg("n") = 8,
        py::arg("seed") = 0, py::arg("height") = 64, py::arg("width") = 64,
        py::arg("split") = "train", py::arg("corruption") = "zero");

  m.def(
      "compute_metrics",
      [](const DoubleArray& pred, const DoubleArray& gt,
         const DoubleArray& region, const std::string& sample_id) {
        return compute_metrics(to_tensor(pred, "pred"), to_tensor(gt, "gt"),
                               to_tensor(region, "region"), sample_id);
      },
      py::arg("pred"), py::arg("gt"), py::arg("region"),
      py::arg("sample_id") = "");
}
