#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tdcnet/model.hpp"
#include "tdcnet/nn.hpp"
#include "tdcnet/objective.hpp"

namespace tdc {

// Training progress carried across restarts.
struct TrainState {
  int epoch = 0;                // completed epochs
  int64_t step = 0;             // optimizer steps taken
  double best_val_rmse = -1.0;  // -1 = no validation pass recorded yet
  LossState loss;
};

using NamedBlobs = std::vector<std::pair<std::string, const std::vector<double>*>>;

// Flat container of named f64 arrays; magic "TDCK", version 1.
void save_blobs(const std::string& path, const NamedBlobs& blobs);
std::map<std::string, std::vector<double>> load_blobs(const std::string& path);

// FNV-1a over names and raw values, order-sensitive.
std::string fnv1a_hex(const NamedBlobs& blobs);

// A checkpoint is a directory: weights.bin holds parameters, norm running
// stats ("buffer." prefix), and optimizer moments ("optim." prefix);
// model.json records the config, parameter count, max depth, and a content
// hash of the parameters; train_state.json is written when state is given.
void save_checkpoint(const std::string& dir, const TdcNet& model,
                     const AdamW* opt = nullptr,
                     const TrainState* state = nullptr);

ModelConfig load_checkpoint_config(const std::string& dir);

// Rebuilds the network from model.json and fills every parameter and buffer
// from weights.bin, verifying the content hash.
std::unique_ptr<TdcNet> load_checkpoint(const std::string& dir);

// Restores optimizer moments, step count, and training progress. The
// optimizer must wrap the parameters of a model loaded from the same dir.
void load_train_state(const std::string& dir, AdamW& opt, TrainState& state);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace tdc
