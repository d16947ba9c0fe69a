#include "tdcnet/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace tdc {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Strides of `s` aligned to the (longer) broadcast shape `out`; 0 where the
// dimension is broadcast.
std::vector<int64_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> native = row_strides(s);
  std::vector<int64_t> st(out.size(), 0);
  size_t off = out.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i) {
    if (s[i] == out[i + off]) {
      st[i + off] = native[i];
    } else if (s[i] == 1) {
      st[i + off] = 0;
    } else {
      throw ShapeError("cannot broadcast " + shape_str(s) + " to " +
                       shape_str(out));
    }
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every element of the broadcast
// output, in row-major order.
template <class F>
void broadcast_iterate(const Shape& out, const Shape& as, const Shape& bs,
                       F&& f) {
  int nd = static_cast<int>(out.size());
  if (nd == 0) {
    f(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int64_t> sa = aligned_strides(as, out);
  std::vector<int64_t> sb = aligned_strides(bs, out);
  int64_t total = shape_numel(out);
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t io = 0; io < total; ++io) {
    f(io, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      size_t du = static_cast<size_t>(d);
      idx[du]++;
      ia += sa[du];
      ib += sb[du];
      if (idx[du] < out[du]) break;
      ia -= sa[du] * out[du];
      ib -= sb[du] * out[du];
      idx[du] = 0;
    }
  }
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::empty(os);
  double* o = out.data();
  const double* pa = a.data();
  const double* pb = b.data();
  auto fwd = [&](int64_t io, int64_t ia, int64_t ib) {
    switch (op) {
      case BinOp::Add: o[io] = pa[ia] + pb[ib]; break;
      case BinOp::Sub: o[io] = pa[ia] - pb[ib]; break;
      case BinOp::Mul: o[io] = pa[ia] * pb[ib]; break;
      case BinOp::Div: o[io] = pa[ia] / pb[ib]; break;
    }
  };
  if (same_shape(a.shape(), b.shape())) {
    int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) fwd(i, i, i);
  } else {
    broadcast_iterate(os, a.shape(), b.shape(), fwd);
  }
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    Tensor ac = a, bc = b;
    TensorImpl* on = out.impl().get();
    attach_node(out, {a, b}, [ac, bc, on, op]() mutable {
      const double* go = on->grad.data();
      bool need_a = ac.requires_grad();
      bool need_b = bc.requires_grad();
      double* ga = need_a ? ac.grad_data() : nullptr;
      double* gb = need_b ? bc.grad_data() : nullptr;
      const double* pa = ac.data();
      const double* pb = bc.data();
      auto bwd = [&](int64_t io, int64_t ia, int64_t ib) {
        double g = go[io];
        switch (op) {
          case BinOp::Add:
            if (need_a) ga[ia] += g;
            if (need_b) gb[ib] += g;
            break;
          case BinOp::Sub:
            if (need_a) ga[ia] += g;
            if (need_b) gb[ib] -= g;
            break;
          case BinOp::Mul:
            if (need_a) ga[ia] += g * pb[ib];
            if (need_b) gb[ib] += g * pa[ia];
            break;
          case BinOp::Div: {
            double inv = 1.0 / pb[ib];
            if (need_a) ga[ia] += g * inv;
            if (need_b) gb[ib] -= g * pa[ia] * inv * inv;
            break;
          }
        }
      };
      if (same_shape(ac.shape(), bc.shape())) {
        int64_t n = static_cast<int64_t>(on->values.size());
        for (int64_t i = 0; i < n; ++i) bwd(i, i, i);
      } else {
        broadcast_iterate(on->shape, ac.shape(), bc.shape(), bwd);
      }
    });
  }
  return out;
}

// Elementwise unary op: fwd(x) -> y, dydx(x, y) -> local derivative.
template <class Fwd, class Dydx>
Tensor unary_op(const Tensor& x, Fwd fwd, Dydx dydx) {
  Tensor out = Tensor::empty(x.shape());
  int64_t n = x.numel();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, dydx]() mutable {
      const double* go = on->grad.data();
      const double* px = xc.data();
      const double* py = on->values.data();
      double* gx = xc.grad_data();
      int64_t n = static_cast<int64_t>(on->values.size());
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i] * dydx(px[i], py[i]);
    });
  }
  return out;
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ", ";
    r += std::to_string(s[i]);
  }
  r += ")";
  return r;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::empty(Shape shape) {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values.resize(static_cast<size_t>(shape_numel(t.impl_->shape)));
  return t;
}

Tensor Tensor::zeros(Shape shape) { return empty(std::move(shape)); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = empty(std::move(shape));
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), v);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> v) {
  if (static_cast<int64_t>(v.size()) != shape_numel(shape))
    throw ShapeError("from_data: " + std::to_string(v.size()) +
                     " values for shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(v);
  return t;
}

double Tensor::item() const {
  if (!impl_ || impl_->values.size() != 1)
    throw ShapeError("item() requires a single-element tensor");
  return impl_->values[0];
}

Tensor Tensor::grad() const {
  Tensor g = Tensor::zeros(impl_->shape);
  if (!impl_->grad.empty()) g.impl_->values = impl_->grad;
  return g;
}

Tensor Tensor::detach_copy() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->values = impl_->values;
  return t;
}

void Tensor::backward() {
  if (!impl_) throw Error("backward() on undefined tensor");
  if (impl_->values.size() != 1)
    throw ShapeError("backward() requires a scalar output");
  if (!impl_->requires_grad)
    throw Error("backward() on a tensor that does not require grad");

  // Post-order DFS; `order` holds owning pointers so freeing edges during the
  // reverse sweep cannot destroy nodes that still need their backward_fn run.
  std::vector<TensorImplPtr> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImplPtr node;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_, 0});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImplPtr p = f.node->parents[f.next++];
      if (p->backward_fn && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back({std::move(p), 0});
      }
    } else {
      order.push_back(std::move(f.node));
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* n = it->get();
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn();
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }
}

void attach_node(Tensor& out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward_fn) {
  const TensorImplPtr& impl = out.impl();
  impl->requires_grad = true;
  impl->parents.reserve(inputs.size());
  for (const Tensor& t : inputs) impl->parents.push_back(t.impl());
  impl->backward_fn = std::move(backward_fn);
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
  for (const Tensor& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t n = std::max(a.size(), b.size());
  Shape out(n);
  for (size_t i = 0; i < n; ++i) {
    int da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    int db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x + s; },
      [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, [s](double x) { return x * s; },
      [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  return unary_op(
      x,
      [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sqrt_t(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(
      x, [=](double v) { return std::min(std::max(v, lo), hi); },
      [=](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::empty({1});
  const double* px = x.data();
  int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  out.data()[0] = acc;
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on]() mutable {
      double g = on->grad[0];
      double* gx = xc.grad_data();
      int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all of empty tensor");
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " to " +
                     shape_str(shape) + " changes element count");
  Tensor out = Tensor::from_data(std::move(shape), x.values());
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      int64_t n = xc.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  int nd = x.dim();
  if (static_cast<int>(dims.size()) != nd)
    throw ShapeError("permute order size mismatch");
  std::vector<bool> seen(static_cast<size_t>(nd), false);
  Shape os(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    int d = dims[static_cast<size_t>(i)];
    if (d < 0 || d >= nd || seen[static_cast<size_t>(d)])
      throw ShapeError("invalid permute order");
    seen[static_cast<size_t>(d)] = true;
    os[static_cast<size_t>(i)] = x.size(d);
  }
  std::vector<int64_t> sx = row_strides(x.shape());
  // stride of output dim i walks input dim dims[i]
  std::vector<int64_t> step(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i)
    step[static_cast<size_t>(i)] = sx[static_cast<size_t>(dims[static_cast<size_t>(i)])];

  Tensor out = Tensor::empty(os);
  int64_t total = out.numel();
  const double* px = x.data();
  double* po = out.data();
  std::vector<int> idx(static_cast<size_t>(nd), 0);
  int64_t ix = 0;
  for (int64_t io = 0; io < total; ++io) {
    po[io] = px[ix];
    for (int d = nd - 1; d >= 0; --d) {
      size_t du = static_cast<size_t>(d);
      idx[du]++;
      ix += step[du];
      if (idx[du] < os[du]) break;
      ix -= step[du] * os[du];
      idx[du] = 0;
    }
  }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    Shape os_copy = os;
    attach_node(out, {x}, [xc, on, step, os_copy]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      int nd = static_cast<int>(os_copy.size());
      int64_t total = static_cast<int64_t>(on->values.size());
      std::vector<int> idx(static_cast<size_t>(nd), 0);
      int64_t ix = 0;
      for (int64_t io = 0; io < total; ++io) {
        gx[ix] += go[io];
        for (int d = nd - 1; d >= 0; --d) {
          size_t du = static_cast<size_t>(d);
          idx[du]++;
          ix += step[du];
          if (idx[du] < os_copy[du]) break;
          ix -= step[du] * os_copy[du];
          idx[du] = 0;
        }
      }
    });
  }
  return out;
}

Tensor select0(const Tensor& x, int index) {
  if (x.dim() < 1) throw ShapeError("select0 needs at least 1 dim");
  int d0 = x.size(0);
  if (index < 0 || index >= d0) throw ShapeError("select0 index out of range");
  Shape os(x.shape().begin() + 1, x.shape().end());
  int64_t chunk = shape_numel(os);
  Tensor out = Tensor::empty(os);
  std::copy_n(x.data() + static_cast<int64_t>(index) * chunk, chunk, out.data());
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, index, chunk]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data() + static_cast<int64_t>(index) * chunk;
      for (int64_t i = 0; i < chunk; ++i) gx[i] += go[i];
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.dim() != 4 || b.dim() != 4)
    throw ShapeError("concat_channels expects NCHW tensors");
  if (a.size(0) != b.size(0) || a.size(2) != b.size(2) || a.size(3) != b.size(3))
    throw ShapeError("concat_channels: non-channel dims differ: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  int B = a.size(0), Ca = a.size(1), Cb = b.size(1), H = a.size(2), W = a.size(3);
  Tensor out = Tensor::empty({B, Ca + Cb, H, W});
  int64_t hw = static_cast<int64_t>(H) * W;
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int n = 0; n < B; ++n) {
    std::copy_n(pa + n * Ca * hw, Ca * hw, po + n * (Ca + Cb) * hw);
    std::copy_n(pb + n * Cb * hw, Cb * hw, po + n * (Ca + Cb) * hw + Ca * hw);
  }
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    Tensor ac = a, bc = b;
    TensorImpl* on = out.impl().get();
    attach_node(out, {a, b}, [ac, bc, on, B, Ca, Cb, hw]() mutable {
      const double* go = on->grad.data();
      double* ga = ac.requires_grad() ? ac.grad_data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
      for (int n = 0; n < B; ++n) {
        const double* gn = go + n * (Ca + Cb) * hw;
        if (ga)
          for (int64_t i = 0; i < Ca * hw; ++i) ga[n * Ca * hw + i] += gn[i];
        if (gb)
          for (int64_t i = 0; i < Cb * hw; ++i)
            gb[n * Cb * hw + i] += gn[Ca * hw + i];
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int c0, int c1) {
  if (x.dim() != 4) throw ShapeError("slice_channels expects NCHW");
  int B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + ", " +
                     std::to_string(c1) + ") for C=" + std::to_string(C));
  int Cs = c1 - c0;
  int64_t hw = static_cast<int64_t>(H) * W;
  Tensor out = Tensor::empty({B, Cs, H, W});
  const double* px = x.data();
  double* po = out.data();
  for (int n = 0; n < B; ++n)
    std::copy_n(px + (static_cast<int64_t>(n) * C + c0) * hw, Cs * hw,
                po + static_cast<int64_t>(n) * Cs * hw);
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, B, C, c0, Cs, hw]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      for (int n = 0; n < B; ++n) {
        double* gn = gx + (static_cast<int64_t>(n) * C + c0) * hw;
        const double* gsrc = go + static_cast<int64_t>(n) * Cs * hw;
        for (int64_t i = 0; i < Cs * hw; ++i) gn[i] += gsrc[i];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.dim() < 2 || b.dim() < 2)
    throw ShapeError("matmul needs at least 2 dims");
  if (a.dim() != b.dim())
    throw ShapeError("matmul rank mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  int nd = a.dim();
  for (int i = 0; i < nd - 2; ++i)
    if (a.size(i) != b.size(i))
      throw ShapeError("matmul batch dims differ: " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
  int M = a.size(nd - 2), K = a.size(nd - 1);
  int Kb = transpose_b ? b.size(nd - 1) : b.size(nd - 2);
  int N = transpose_b ? b.size(nd - 2) : b.size(nd - 1);
  if (K != Kb)
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  int64_t batch = 1;
  Shape os;
  for (int i = 0; i < nd - 2; ++i) {
    batch *= a.size(i);
    os.push_back(a.size(i));
  }
  os.push_back(M);
  os.push_back(N);
  Tensor out = Tensor::empty(os);
  int64_t sa = static_cast<int64_t>(M) * K;
  int64_t sb = static_cast<int64_t>(transpose_b ? N : K) *
               (transpose_b ? K : N);
  int64_t so = static_cast<int64_t>(M) * N;
  for (int64_t i = 0; i < batch; ++i) {
    ConstMatMap A(a.data() + i * sa, M, K);
    MatMap O(out.data() + i * so, M, N);
    if (transpose_b) {
      ConstMatMap B(b.data() + i * sb, N, K);
      O.noalias() = A * B.transpose();
    } else {
      ConstMatMap B(b.data() + i * sb, K, N);
      O.noalias() = A * B;
    }
  }
  if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
    Tensor ac = a, bc = b;
    TensorImpl* on = out.impl().get();
    attach_node(out, {a, b},
                [ac, bc, on, batch, M, N, K, sa, sb, so, transpose_b]() mutable {
      bool need_a = ac.requires_grad();
      bool need_b = bc.requires_grad();
      double* ga = need_a ? ac.grad_data() : nullptr;
      double* gb = need_b ? bc.grad_data() : nullptr;
      for (int64_t i = 0; i < batch; ++i) {
        ConstMatMap GO(on->grad.data() + i * so, M, N);
        ConstMatMap A(ac.data() + i * sa, M, K);
        if (transpose_b) {
          ConstMatMap B(bc.data() + i * sb, N, K);
          if (need_a) MatMap(ga + i * sa, M, K).noalias() += GO * B;
          if (need_b) MatMap(gb + i * sb, N, K).noalias() += GO.transpose() * A;
        } else {
          ConstMatMap B(bc.data() + i * sb, K, N);
          if (need_a) MatMap(ga + i * sa, M, K).noalias() += GO * B.transpose();
          if (need_b) MatMap(gb + i * sb, K, N).noalias() += A.transpose() * GO;
        }
      }
    });
  }
  return out;
}

}  // namespace tdc
