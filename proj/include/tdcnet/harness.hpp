#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tdcnet/data.hpp"
#include "tdcnet/metrics.hpp"
#include "tdcnet/model.hpp"
#include "tdcnet/serialize.hpp"

namespace tdc {

struct TrainConfig {
  std::string data_dir;
  std::string train_split = "train";
  std::string out_dir = "run";
  int epochs = 40;
  int batch_size = 16;
  double lr = 1e-3;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 15;
  double alpha = 0.1;
  double weight_decay = 1e-4;
  double clip_norm = 0.0;  // 0 disables clipping
  bool full_image_loss = false;
  uint64_t seed = 0;
  double val_fraction = 0.1;
  int val_every = 1;  // epochs between validation passes
  std::vector<std::string> aug;
  ModelConfig model;
};

void validate_train_config(const TrainConfig& cfg);

// Flat json: model fields sit beside the loop fields, all keys optional,
// unknown keys rejected. The writer emits every field.
std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// lr * factor^(epoch0 / every), epoch0 counted from zero.
double scheduled_lr(const TrainConfig& cfg, int epoch0);

// Stable hash split: the id's membership never depends on manifest order.
bool is_val_id(const std::string& id, uint64_t seed, double val_fraction);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double depth_loss = 0.0;   // epoch mean
  double smooth_loss = 0.0;  // epoch mean
  double total_loss = 0.0;   // epoch mean, weighted with the beta in force
  double beta = 0.0;         // weight entering the next epoch
  double lr = 0.0;           // rate used during this epoch
  double wall_seconds = 0.0;
  bool has_val = false;
  MetricsReport val;
};

using RunLog = std::vector<EpochRecord>;

std::string epoch_record_json(const EpochRecord& r);
EpochRecord epoch_record_from_json(const std::string& line);
RunLog read_run_log(const std::string& path);

// Field-wise comparison that ignores wall time.
bool run_logs_equal(const RunLog& a, const RunLog& b, double tol = 0.0);

struct TrainResult {
  std::string last_dir;
  std::string best_dir;  // empty until a validation pass has run
  RunLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs the training loop, writing runlog.jsonl plus ckpt_last / ckpt_best
// under cfg.out_dir. resume_dir restarts from a previous ckpt_last.
TrainResult train(const TrainConfig& cfg, const std::string& resume_dir = "",
                  const EpochCallback& on_epoch = {});

// No-gradient metrics over samples; puts the model in eval mode and leaves
// it there. Samples without a measurable region are skipped. per_image
// averages per-sample reports instead of pooling pixels. With error_map_dir
// set, writes <id>_error.png per sample.
MetricsReport evaluate_model(TdcNet& model,
                             const std::vector<RgbdSample>& samples,
                             const std::string& error_map_dir = "",
                             bool per_image = false);

MetricsReport evaluate(const std::string& ckpt_dir, const std::string& data_dir,
                       const std::string& split,
                       const std::string& error_map_dir = "",
                       bool per_image = false);

// Single-sample inference; writes depth.png (16-bit, mm) and error_map.png
// into out_dir. sample_dir is a `<split>/<id>` directory.
DepthPrediction predict(const std::string& ckpt_dir,
                        const std::string& sample_dir,
                        const std::string& out_dir);

}  // namespace tdc
