#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tdcnet/common.hpp"

namespace tdc {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized on first accumulation
  bool requires_grad = false;
  // Graph edges toward inputs. backward_fn reads this->grad and accumulates
  // into parents' grad buffers.
  std::vector<TensorImplPtr> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

bool grad_enabled();

// Disables graph recording in its scope (inference / data plumbing).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major double tensor with reverse-mode autodiff. Value-semantic
// handle over shared storage; ops build a DAG when grad mode is on and any
// input requires grad.
class Tensor {
 public:
  Tensor() = default;

  static Tensor empty(Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_data(Shape shape, std::vector<double> v);
  static Tensor scalar(double v) { return full({1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim() const { return static_cast<int>(impl_->shape.size()); }
  int size(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }
  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  double* grad_data() {
    impl_->ensure_grad();
    return impl_->grad.data();
  }
  Tensor grad() const;  // copy of the grad buffer (zeros if untouched)
  void zero_grad() {
    if (impl_ && !impl_->grad.empty()) impl_->grad.assign(impl_->grad.size(), 0.0);
  }

  // Reverse pass from a scalar. Frees the graph as it goes.
  void backward();

  const TensorImplPtr& impl() const { return impl_; }

  // Detached copy of the values (no graph, no grad requirement).
  Tensor detach_copy() const;

 private:
  TensorImplPtr impl_;
};

// Registers `out` as an op node. Must be called at most once per tensor and
// only when grad mode is enabled and some input requires grad.
void attach_node(Tensor& out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn);

bool any_requires_grad(const std::vector<Tensor>& ts);

// ---- basic elementwise / shape ops (numpy-style broadcasting on binaries) --

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sqrt_t(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sum_all(const Tensor& x);   // -> shape {1}
Tensor mean_all(const Tensor& x);  // -> shape {1}

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
// Index along dim 0, dropping it: (D0, ...) -> (...)
Tensor select0(const Tensor& x, int index);
Tensor concat_channels(const Tensor& a, const Tensor& b);      // dim 1 of NCHW
Tensor slice_channels(const Tensor& x, int c0, int c1);        // [c0, c1)

// Batched matmul on the last two dims; leading dims must match exactly.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

}  // namespace tdc
