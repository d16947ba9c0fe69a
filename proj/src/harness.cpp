#include "tdcnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "json.hpp"
#include "tdcnet/common.hpp"
#include "tdcnet/image.hpp"
#include "tdcnet/objective.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tdc {

namespace {

uint64_t fnv1a_str(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

double wall_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["rmse"] = r.rmse;
  j["rel"] = r.rel;
  j["mae"] = r.mae;
  j["delta_105"] = r.delta_105;
  j["delta_110"] = r.delta_110;
  j["delta_125"] = r.delta_125;
  j["n_pixels"] = r.n_pixels;
  j["n_samples"] = r.n_samples;
  return j;
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.rmse = j.at("rmse").get<double>();
  r.rel = j.at("rel").get<double>();
  r.mae = j.at("mae").get<double>();
  r.delta_105 = j.at("delta_105").get<double>();
  r.delta_110 = j.at("delta_110").get<double>();
  r.delta_125 = j.at("delta_125").get<double>();
  r.n_pixels = j.at("n_pixels").get<int64_t>();
  r.n_samples = j.at("n_samples").get<int64_t>();
  return r;
}

std::vector<RgbdSample> load_split(const std::string& data_dir,
                                   const std::string& split,
                                   const ModelConfig& cfg) {
  std::string split_dir = (fs::path(data_dir) / split).string();
  std::vector<std::string> ids = read_manifest(split_dir);
  if (ids.empty()) throw DataError("no samples in " + split_dir);
  std::vector<RgbdSample> samples;
  samples.reserve(ids.size());
  for (const std::string& id : ids) {
    RgbdSample s = load_sample(split_dir, id);
    if (s.height() != cfg.input_h || s.width() != cfg.input_w)
      throw ConfigError("sample " + id + " is " + std::to_string(s.height()) +
                        "x" + std::to_string(s.width()) +
                        " but the model expects " +
                        std::to_string(cfg.input_h) + "x" +
                        std::to_string(cfg.input_w));
    samples.push_back(std::move(s));
  }
  return samples;
}

void append_log_line(const std::string& path, const EpochRecord& r,
                     bool truncate) {
  std::ofstream out(path, truncate ? std::ios::trunc : std::ios::app);
  if (!out) throw DataError("cannot write " + path);
  out << epoch_record_json(r) << "\n";
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("data_dir is required");
  if (cfg.out_dir.empty()) throw ConfigError("out_dir is required");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.lr <= 0.0) throw ConfigError("lr must be positive");
  if (cfg.lr_decay_factor <= 0.0)
    throw ConfigError("lr_decay_factor must be positive");
  if (cfg.lr_decay_every < 1)
    throw ConfigError("lr_decay_every must be >= 1");
  if (cfg.alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
    throw ConfigError("val_fraction must be in [0, 1)");
  if (cfg.val_every < 1) throw ConfigError("val_every must be >= 1");
  parse_aug_flags(cfg.aug);
  validate_config(cfg.model);
}

double scheduled_lr(const TrainConfig& cfg, int epoch0) {
  return cfg.lr * std::pow(cfg.lr_decay_factor, epoch0 / cfg.lr_decay_every);
}

std::string train_config_json(const TrainConfig& cfg) {
  json j;
  j["data_dir"] = cfg.data_dir;
  j["train_split"] = cfg.train_split;
  j["out_dir"] = cfg.out_dir;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["lr_decay_factor"] = cfg.lr_decay_factor;
  j["lr_decay_every"] = cfg.lr_decay_every;
  j["alpha"] = cfg.alpha;
  j["weight_decay"] = cfg.weight_decay;
  j["clip_norm"] = cfg.clip_norm;
  j["full_image_loss"] = cfg.full_image_loss;
  j["seed"] = cfg.seed;
  j["val_fraction"] = cfg.val_fraction;
  j["val_every"] = cfg.val_every;
  j["aug"] = cfg.aug;
  j["c"] = cfg.model.c;
  j["input_h"] = cfg.model.input_h;
  j["input_w"] = cfg.model.input_w;
  j["branch_a"] = cfg.model.branch_a;
  j["branch_b"] = cfg.model.branch_b;
  j["input_a"] = cfg.model.input_a;
  j["input_b"] = cfg.model.input_b;
  j["fusion"] = cfg.model.fusion;
  j["composite_raw"] = cfg.model.composite_raw;
  j["norm"] = cfg.model.norm;
  j["window"] = cfg.model.window;
  j["heads"] = cfg.model.heads;
  j["depths"] = cfg.model.depths;
  j["mlp_ratio"] = cfg.model.mlp_ratio;
  j["reduction"] = cfg.model.reduction;
  j["max_depth"] = cfg.model.max_depth;
  j["linear_output"] = cfg.model.linear_output;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config json: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a json object");

  TrainConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "data_dir") cfg.data_dir = value.get<std::string>();
      else if (key == "train_split") cfg.train_split = value.get<std::string>();
      else if (key == "out_dir") cfg.out_dir = value.get<std::string>();
      else if (key == "epochs") cfg.epochs = value.get<int>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "lr_decay_factor")
        cfg.lr_decay_factor = value.get<double>();
      else if (key == "lr_decay_every") cfg.lr_decay_every = value.get<int>();
      else if (key == "alpha") cfg.alpha = value.get<double>();
      else if (key == "weight_decay") cfg.weight_decay = value.get<double>();
      else if (key == "clip_norm") cfg.clip_norm = value.get<double>();
      else if (key == "full_image_loss")
        cfg.full_image_loss = value.get<bool>();
      else if (key == "seed") cfg.seed = value.get<uint64_t>();
      else if (key == "val_fraction") cfg.val_fraction = value.get<double>();
      else if (key == "val_every") cfg.val_every = value.get<int>();
      else if (key == "aug") cfg.aug = value.get<std::vector<std::string>>();
      else if (key == "c") cfg.model.c = value.get<int>();
      else if (key == "input_h") cfg.model.input_h = value.get<int>();
      else if (key == "input_w") cfg.model.input_w = value.get<int>();
      else if (key == "branch_a")
        cfg.model.branch_a = value.get<std::string>();
      else if (key == "branch_b")
        cfg.model.branch_b = value.get<std::string>();
      else if (key == "input_a") cfg.model.input_a = value.get<std::string>();
      else if (key == "input_b") cfg.model.input_b = value.get<std::string>();
      else if (key == "fusion") cfg.model.fusion = value.get<std::string>();
      else if (key == "composite_raw")
        cfg.model.composite_raw = value.get<bool>();
      else if (key == "norm") cfg.model.norm = value.get<std::string>();
      else if (key == "window") cfg.model.window = value.get<int>();
      else if (key == "heads")
        cfg.model.heads = value.get<std::array<int, 4>>();
      else if (key == "depths")
        cfg.model.depths = value.get<std::array<int, 4>>();
      else if (key == "mlp_ratio") cfg.model.mlp_ratio = value.get<double>();
      else if (key == "reduction") cfg.model.reduction = value.get<int>();
      else if (key == "max_depth") cfg.model.max_depth = value.get<double>();
      else if (key == "linear_output")
        cfg.model.linear_output = value.get<bool>();
      else
        throw ConfigError("unknown train config key: " + key);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config json: ") + e.what());
  }
  return cfg;
}

bool is_val_id(const std::string& id, uint64_t seed, double val_fraction) {
  uint64_t h = Rng::mix(fnv1a_str(id), seed);
  return static_cast<double>(h % 10000) < val_fraction * 10000.0;
}

std::string epoch_record_json(const EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["depth_loss"] = r.depth_loss;
  j["smooth_loss"] = r.smooth_loss;
  j["total_loss"] = r.total_loss;
  j["beta"] = r.beta;
  j["lr"] = r.lr;
  j["wall_seconds"] = r.wall_seconds;
  if (r.has_val) j["val"] = report_to_json(r.val);
  return j.dump();
}

EpochRecord epoch_record_from_json(const std::string& line) {
  EpochRecord r;
  try {
    json j = json::parse(line);
    r.epoch = j.at("epoch").get<int>();
    r.depth_loss = j.at("depth_loss").get<double>();
    r.smooth_loss = j.at("smooth_loss").get<double>();
    r.total_loss = j.at("total_loss").get<double>();
    r.beta = j.at("beta").get<double>();
    r.lr = j.at("lr").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    if (j.contains("val")) {
      r.has_val = true;
      r.val = report_from_json(j["val"]);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("bad run log line: ") + e.what());
  }
  return r;
}

RunLog read_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  RunLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    log.push_back(epoch_record_from_json(line));
  }
  return log;
}

bool run_logs_equal(const RunLog& a, const RunLog& b, double tol) {
  if (a.size() != b.size()) return false;
  auto close = [tol](double x, double y) { return std::abs(x - y) <= tol; };
  for (size_t i = 0; i < a.size(); ++i) {
    const EpochRecord &ra = a[i], &rb = b[i];
    if (ra.epoch != rb.epoch || ra.has_val != rb.has_val) return false;
    if (!close(ra.depth_loss, rb.depth_loss) ||
        !close(ra.smooth_loss, rb.smooth_loss) ||
        !close(ra.total_loss, rb.total_loss) || !close(ra.beta, rb.beta) ||
        !close(ra.lr, rb.lr))
      return false;
    if (ra.has_val) {
      if (!close(ra.val.rmse, rb.val.rmse) || !close(ra.val.rel, rb.val.rel) ||
          !close(ra.val.mae, rb.val.mae) ||
          !close(ra.val.delta_105, rb.val.delta_105) ||
          !close(ra.val.delta_110, rb.val.delta_110) ||
          !close(ra.val.delta_125, rb.val.delta_125) ||
          ra.val.n_pixels != rb.val.n_pixels ||
          ra.val.n_samples != rb.val.n_samples)
        return false;
    }
  }
  return true;
}

MetricsReport evaluate_model(TdcNet& model,
                             const std::vector<RgbdSample>& samples,
                             const std::string& error_map_dir,
                             bool per_image) {
  NoGradGuard ng;
  model.set_training(false);
  if (!error_map_dir.empty()) fs::create_directories(error_map_dir);
  double max_depth = model.config().max_depth;
  MetricsAccumulator acc;
  std::vector<MetricsReport> per_sample;
  for (const RgbdSample& s : samples) {
    Batch batch = make_batch({s}, max_depth);
    Tensor region = loss_region(batch);
    DepthPrediction pred = model.forward(batch);
    try {
      if (per_image)
        per_sample.push_back(
            compute_metrics(pred.depth, batch.gt_depth, region, s.id));
      else
        acc.add(pred.depth, batch.gt_depth, region, s.id);
    } catch (const EmptyRegionError&) {
      continue;  // nothing measurable in this sample
    }
    if (!error_map_dir.empty()) {
      Tensor em = error_map(pred.depth, batch.gt_depth, region, s.id);
      save_png_rgb((fs::path(error_map_dir) / (s.id + "_error.png")).string(),
                   em);
    }
  }
  if (per_image) {
    if (per_sample.empty())
      throw EmptyRegionError("no sample had a measurable region");
    return average_reports(per_sample);
  }
  if (acc.samples() == 0)
    throw EmptyRegionError("no sample had a measurable region");
  return acc.report();
}

MetricsReport evaluate(const std::string& ckpt_dir, const std::string& data_dir,
                       const std::string& split,
                       const std::string& error_map_dir, bool per_image) {
  std::unique_ptr<TdcNet> model = load_checkpoint(ckpt_dir);
  std::vector<RgbdSample> samples =
      load_split(data_dir, split, model->config());
  return evaluate_model(*model, samples, error_map_dir, per_image);
}

DepthPrediction predict(const std::string& ckpt_dir,
                        const std::string& sample_dir,
                        const std::string& out_dir) {
  std::unique_ptr<TdcNet> model = load_checkpoint(ckpt_dir);
  fs::path p = fs::path(sample_dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();  // tolerate trailing slash
  std::string id = p.filename().string();
  std::string split_dir = p.parent_path().string();
  RgbdSample s = load_sample(split_dir, id);
  const ModelConfig& cfg = model->config();
  if (s.height() != cfg.input_h || s.width() != cfg.input_w)
    throw ConfigError("sample " + id + " is " + std::to_string(s.height()) +
                      "x" + std::to_string(s.width()) +
                      " but the model expects " + std::to_string(cfg.input_h) +
                      "x" + std::to_string(cfg.input_w));

  NoGradGuard ng;
  model->set_training(false);
  Batch batch = make_batch({s}, cfg.max_depth);
  DepthPrediction pred = model->forward(batch);

  fs::create_directories(out_dir);
  Tensor out = cfg.composite_raw ? pred.composited : pred.depth;
  save_png_depth((fs::path(out_dir) / "depth.png").string(), select0(out, 0));
  Tensor region = loss_region(batch);
  Tensor em = error_map(pred.depth, batch.gt_depth, region, s.id);
  save_png_rgb((fs::path(out_dir) / "error_map.png").string(), em);
  return pred;
}

TrainResult train(const TrainConfig& cfg, const std::string& resume_dir,
                  const EpochCallback& on_epoch) {
  validate_train_config(cfg);
  AugFlags aug = parse_aug_flags(cfg.aug);
  bool augmenting = aug.hflip || aug.vflip || aug.rot90 || aug.rot_small ||
                    aug.depth_noise || aug.rgb_noise;

  std::string split_dir =
      (fs::path(cfg.data_dir) / cfg.train_split).string();
  std::vector<std::string> ids = read_manifest(split_dir);
  if (ids.empty()) throw DataError("no samples in " + split_dir);

  std::vector<int> train_idx, val_idx;
  std::vector<RgbdSample> samples;
  samples.reserve(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) {
    RgbdSample s = load_sample(split_dir, ids[i]);
    if (s.height() != cfg.model.input_h || s.width() != cfg.model.input_w)
      throw ConfigError("sample " + ids[i] + " is " +
                        std::to_string(s.height()) + "x" +
                        std::to_string(s.width()) +
                        " but the model expects " +
                        std::to_string(cfg.model.input_h) + "x" +
                        std::to_string(cfg.model.input_w));
    samples.push_back(std::move(s));
    if (is_val_id(ids[i], cfg.seed, cfg.val_fraction))
      val_idx.push_back(static_cast<int>(i));
    else
      train_idx.push_back(static_cast<int>(i));
  }
  if (train_idx.empty())
    throw DataError("hash split left no training samples; lower val_fraction");
  // Tiny datasets can hash everything into the training side; validate on
  // the training samples then so best-checkpoint selection still works.
  std::vector<RgbdSample> val_samples;
  for (int i : val_idx) val_samples.push_back(samples[static_cast<size_t>(i)]);
  if (val_samples.empty())
    for (int i : train_idx)
      val_samples.push_back(samples[static_cast<size_t>(i)]);

  std::unique_ptr<TdcNet> model;
  TrainState state;
  state.loss.alpha = cfg.alpha;
  state.loss.beta = cfg.alpha;
  if (!resume_dir.empty()) {
    model = load_checkpoint(resume_dir);
    if (model_config_json(model->config()) != model_config_json(cfg.model))
      throw ConfigError("checkpoint " + resume_dir +
                        " was trained with a different model config");
  } else {
    Rng init_rng(Rng::mix(cfg.seed, 0xa11ceull));
    model = std::make_unique<TdcNet>(cfg.model, init_rng);
  }
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(model->named_parameters(), ocfg);
  if (!resume_dir.empty()) load_train_state(resume_dir, opt, state);

  fs::create_directories(cfg.out_dir);
  std::string log_path = (fs::path(cfg.out_dir) / "runlog.jsonl").string();
  RunLog log;
  if (!resume_dir.empty() && fs::exists(log_path)) {
    log = read_run_log(log_path);
    if (static_cast<int>(log.size()) > state.epoch)
      log.resize(static_cast<size_t>(state.epoch));
  }
  {  // rewrite what we keep; a fresh run starts the file empty
    std::ofstream out(log_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + log_path);
    for (const EpochRecord& r : log) out << epoch_record_json(r) << "\n";
  }

  std::string last_dir = (fs::path(cfg.out_dir) / "ckpt_last").string();
  std::string best_dir = (fs::path(cfg.out_dir) / "ckpt_best").string();
  bool have_best = state.best_val_rmse >= 0.0;

  for (int epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    double lr = scheduled_lr(cfg, epoch - 1);
    opt.set_lr(lr);
    model->set_training(true);

    std::vector<int> order = train_idx;
    Rng shuffle_rng(Rng::mix(Rng::mix(cfg.seed, 0x0bdeedull),
                             static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double sum_d = 0.0, sum_s = 0.0, sum_t = 0.0;
    int n_batches = 0;
    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      size_t end = std::min(order.size(), at + cfg.batch_size);
      std::vector<RgbdSample> chunk;
      std::string chunk_ids;
      for (size_t k = at; k < end; ++k) {
        int i = order[k];
        const RgbdSample& s = samples[static_cast<size_t>(i)];
        chunk.push_back(
            augmenting
                ? augment(s,
                          Rng::mix(Rng::mix(cfg.seed,
                                            static_cast<uint64_t>(epoch)),
                                   static_cast<uint64_t>(i)),
                          aug)
                : s);
        chunk_ids += (chunk_ids.empty() ? "" : ", ") + s.id;
      }
      Batch batch = make_batch(chunk, cfg.model.max_depth);
      Tensor region = loss_region(batch, cfg.full_image_loss);

      model->zero_grad();
      DepthPrediction pred = model->forward(batch);
      Tensor ld, ls, total;
      try {
        ld = depth_loss(pred.depth, batch.gt_depth, region);
        ls = smooth_loss(pred.depth, batch.gt_depth, region);
      } catch (const EmptyRegionError&) {
        continue;  // skip batches with nothing to supervise
      }
      total = add(ld, mul_scalar(ls, state.loss.beta));
      double tv = total.values()[0];
      if (!std::isfinite(tv))
        throw NumericError("non-finite loss at epoch " +
                           std::to_string(epoch) + " batch " +
                           std::to_string(n_batches) + " (" + chunk_ids + ")");
      total.backward();
      if (cfg.clip_norm > 0.0)
        clip_grad_norm(model->parameters(), cfg.clip_norm);
      opt.step();
      ++state.step;
      sum_d += ld.values()[0];
      sum_s += ls.values()[0];
      sum_t += tv;
      ++n_batches;
    }
    if (n_batches == 0)
      throw DataError("every batch in epoch " + std::to_string(epoch) +
                      " had an empty supervision region");

    double mean_s = sum_s / n_batches;
    state.loss = update_weight(state.loss, mean_s);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.depth_loss = sum_d / n_batches;
    rec.smooth_loss = mean_s;
    rec.total_loss = sum_t / n_batches;
    rec.beta = state.loss.beta;
    rec.lr = lr;

    bool improved = false;
    if (epoch % cfg.val_every == 0 || epoch == cfg.epochs) {
      rec.has_val = true;
      rec.val = evaluate_model(*model, val_samples);
      if (!have_best || rec.val.rmse < state.best_val_rmse) {
        state.best_val_rmse = rec.val.rmse;
        have_best = true;
        improved = true;
      }
    }

    rec.wall_seconds = wall_since(t0);
    state.epoch = epoch;
    log.push_back(rec);
    append_log_line(log_path, rec, false);
    if (on_epoch) on_epoch(rec);
    save_checkpoint(last_dir, *model, &opt, &state);
    if (improved) save_checkpoint(best_dir, *model, &opt, &state);
  }

  if (!fs::exists(last_dir))  // resume already past cfg.epochs
    save_checkpoint(last_dir, *model, &opt, &state);
  TrainResult result;
  result.last_dir = last_dir;
  result.best_dir = have_best && fs::exists(best_dir) ? best_dir : "";
  result.log = log;
  return result;
}

}  // namespace tdc
