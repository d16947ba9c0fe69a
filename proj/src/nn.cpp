#include "tdcnet/nn.hpp"

#include <cmath>
#include <memory>

namespace tdc {

void Module::named_parameters(
    const std::string& prefix,
    std::vector<std::pair<std::string, Tensor>>& out) const {
  for (const auto& [name, t] : params_)
    out.emplace_back(prefix.empty() ? name : prefix + "." + name, t);
  for (const auto& [name, child] : children_)
    child->named_parameters(prefix.empty() ? name : prefix + "." + name, out);
}

std::vector<std::pair<std::string, Tensor>> Module::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  named_parameters("", out);
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void Module::named_buffers(
    const std::string& prefix,
    std::vector<std::pair<std::string, std::vector<double>*>>& out) const {
  for (const auto& [name, v] : buffers_)
    out.emplace_back(prefix.empty() ? name : prefix + "." + name, v);
  for (const auto& [name, child] : children_)
    child->named_buffers(prefix.empty() ? name : prefix + "." + name, out);
}

std::vector<std::pair<std::string, std::vector<double>*>> Module::named_buffers()
    const {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  named_buffers("", out);
  return out;
}

int64_t Module::num_params() const {
  int64_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void Module::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

void Module::set_training(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->set_training(training);
}

Tensor Module::register_param(const std::string& name, Tensor t) {
  t.set_requires_grad(true);
  params_.emplace_back(name, t);
  return t;
}

void Module::register_buffer(const std::string& name, std::vector<double>* v) {
  buffers_.emplace_back(name, v);
}

void Module::register_child(const std::string& name, Module* m) {
  children_.emplace_back(name, m);
}

void init_kaiming_normal(Tensor& w, int64_t fan, Rng& rng) {
  double stddev = std::sqrt(2.0 / static_cast<double>(fan));
  for (auto& v : w.values()) v = rng.normal() * stddev;
}

void init_trunc_normal(Tensor& w, double stddev, Rng& rng) {
  for (auto& v : w.values()) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    v = z * stddev;
  }
}

void init_zeros(Tensor& w) { std::fill(w.values().begin(), w.values().end(), 0.0); }
void init_ones(Tensor& w) { std::fill(w.values().begin(), w.values().end(), 1.0); }

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding,
               int groups, bool with_bias, Rng& rng)
    : stride_(stride), padding_(padding), groups_(groups) {
  weight = register_param(
      "weight", Tensor::zeros({out_ch, in_ch / groups, kernel, kernel}));
  int64_t fan_out =
      static_cast<int64_t>(kernel) * kernel * out_ch / groups;
  init_kaiming_normal(weight, fan_out, rng);
  if (with_bias) {
    bias = register_param("bias", Tensor::zeros({out_ch}));
  }
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, stride_, padding_, groups_);
}

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : momentum_(momentum), eps_(eps) {
  gamma = register_param("weight", Tensor::full({channels}, 1.0));
  beta = register_param("bias", Tensor::zeros({channels}));
  running_mean.assign(static_cast<size_t>(channels), 0.0);
  running_var.assign(static_cast<size_t>(channels), 1.0);
  register_buffer("running_mean", &running_mean);
  register_buffer("running_var", &running_var);
}

Tensor BatchNorm2d::forward(const Tensor& x) const {
  return batchnorm2d(x, gamma, beta, running_mean, running_var, training(),
                     momentum_, eps_);
}

GroupNorm::GroupNorm(int groups, int channels, double eps)
    : groups_(groups), eps_(eps) {
  gamma = register_param("weight", Tensor::full({channels}, 1.0));
  beta = register_param("bias", Tensor::zeros({channels}));
}

Tensor GroupNorm::forward(const Tensor& x) const {
  return groupnorm(x, gamma, beta, groups_, eps_);
}

Norm2d::Norm2d(const std::string& kind, int channels) {
  if (kind == "batch") {
    bn_ = std::make_unique<BatchNorm2d>(channels);
    register_child("norm", bn_.get());
  } else if (kind == "group") {
    int groups = channels % 8 == 0 ? 8 : 1;
    gn_ = std::make_unique<GroupNorm>(groups, channels);
    register_child("norm", gn_.get());
  } else {
    throw ConfigError("unknown norm kind: " + kind);
  }
}

Tensor Norm2d::forward(const Tensor& x) const {
  return bn_ ? bn_->forward(x) : gn_->forward(x);
}

LayerNorm::LayerNorm(int dim, double eps) : eps_(eps) {
  gamma = register_param("weight", Tensor::full({dim}, 1.0));
  beta = register_param("bias", Tensor::zeros({dim}));
}

Tensor LayerNorm::forward(const Tensor& x) const {
  return layernorm_lastdim(x, gamma, beta, eps_);
}

Linear::Linear(int in_features, int out_features, bool with_bias, Rng& rng)
    : in_(in_features), out_(out_features) {
  weight = register_param("weight", Tensor::zeros({out_features, in_features}));
  init_trunc_normal(weight, 0.02, rng);
  if (with_bias) {
    bias = register_param("bias", Tensor::zeros({out_features}));
  }
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.size(x.dim() - 1) != in_)
    throw ShapeError("linear expects last dim " + std::to_string(in_) +
                     ", got " + shape_str(x.shape()));
  Shape os = x.shape();
  os.back() = out_;
  int64_t p = x.numel() / in_;
  Tensor flat = reshape(x, {static_cast<int>(p), in_});
  Tensor y = matmul(flat, weight, /*transpose_b=*/true);
  if (bias.defined()) y = add(y, bias);
  return reshape(y, os);
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params,
             AdamWConfig cfg)
    : cfg_(cfg), lr_(cfg.lr) {
  for (auto& [name, t] : params) {
    Slot s;
    s.name = name;
    s.param = t;
    s.m.assign(static_cast<size_t>(t.numel()), 0.0);
    s.v.assign(static_cast<size_t>(t.numel()), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    double* p = s.param.data();
    const double* g = s.param.grad_data();
    int64_t n = s.param.numel();
    for (int64_t i = 0; i < n; ++i) {
      s.m[static_cast<size_t>(i)] =
          cfg_.beta1 * s.m[static_cast<size_t>(i)] + (1.0 - cfg_.beta1) * g[i];
      s.v[static_cast<size_t>(i)] = cfg_.beta2 * s.v[static_cast<size_t>(i)] +
                                    (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = s.m[static_cast<size_t>(i)] / bc1;
      double vhat = s.v[static_cast<size_t>(i)] / bc2;
      p[i] -= lr_ * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                     cfg_.weight_decay * p[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

std::vector<std::pair<std::string, std::vector<double>*>> AdamW::state_buffers() {
  std::vector<std::pair<std::string, std::vector<double>*>> out;
  for (auto& s : slots_) {
    out.emplace_back(s.name + ".m", &s.m);
    out.emplace_back(s.name + ".v", &s.v);
  }
  return out;
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& t : params) {
    if (!t.has_grad()) continue;
    Tensor g = t.grad();
    for (double v : g.values()) sq += v * v;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (Tensor t : params) {
      if (!t.has_grad()) continue;
      double* g = t.grad_data();
      for (int64_t i = 0; i < t.numel(); ++i) g[i] *= scale;
    }
  }
  return norm;
}

}  // namespace tdc
