#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tdcnet/ops.hpp"
#include "tdcnet/rng.hpp"
#include "tdcnet/tensor.hpp"

namespace tdc {

// Base for layers with learnable state. Parameters are Tensor handles (shared
// storage), buffers are plain double vectors owned by the concrete module.
// Children are raw pointers to member modules; modules are not copyable.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void named_parameters(const std::string& prefix,
                        std::vector<std::pair<std::string, Tensor>>& out) const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void named_buffers(
      const std::string& prefix,
      std::vector<std::pair<std::string, std::vector<double>*>>& out) const;
  std::vector<std::pair<std::string, std::vector<double>*>> named_buffers() const;

  int64_t num_params() const;
  void zero_grad();
  void set_training(bool training);
  bool training() const { return training_; }

 protected:
  Tensor register_param(const std::string& name, Tensor t);
  void register_buffer(const std::string& name, std::vector<double>* v);
  void register_child(const std::string& name, Module* m);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, std::vector<double>*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  bool training_ = true;
};

// ---- initializers ----

void init_kaiming_normal(Tensor& w, int64_t fan, Rng& rng);
void init_trunc_normal(Tensor& w, double stddev, Rng& rng);
void init_zeros(Tensor& w);
void init_ones(Tensor& w);

// ---- layers ----

class Conv2d : public Module {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, int groups,
         bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;
  Tensor bias;
  int stride_, padding_, groups_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta;
  mutable std::vector<double> running_mean, running_var;
  double momentum_, eps_;
};

class GroupNorm : public Module {
 public:
  GroupNorm(int groups, int channels, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta;
  int groups_;
  double eps_;
};

// 2-D feature normalization selected by name: "batch" or "group" (groups of
// 8, capped at the channel count).
class Norm2d : public Module {
 public:
  Norm2d(const std::string& kind, int channels);
  Tensor forward(const Tensor& x) const;

 private:
  std::unique_ptr<BatchNorm2d> bn_;
  std::unique_ptr<GroupNorm> gn_;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(int dim, double eps = 1e-5);
  Tensor forward(const Tensor& x) const;

  Tensor gamma, beta;
  double eps_;
};

class Linear : public Module {
 public:
  Linear(int in_features, int out_features, bool bias, Rng& rng);
  Tensor forward(const Tensor& x) const;

  Tensor weight;  // (out, in)
  Tensor bias;
  int in_, out_;
};

// ---- optimizer ----

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with decoupled weight decay. First/second moment buffers are keyed by
// parameter name so they can round-trip through checkpoints.
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }

  // (name.m / name.v) -> buffer, for serialization.
  std::vector<std::pair<std::string, std::vector<double>*>> state_buffers();

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  AdamWConfig cfg_;
  double lr_;
  int64_t t_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

}  // namespace tdc
