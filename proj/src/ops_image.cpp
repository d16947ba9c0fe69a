#include <vector>

#include "tdcnet/ops.hpp"

namespace tdc {

Tensor channel_max(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("channel_max expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out = Tensor::empty({b, 1, h, w});
  std::vector<int> argmax(static_cast<size_t>(b) * hw);
  const double* px = x.data();
  double* po = out.data();
  for (int n = 0; n < b; ++n)
    for (int64_t i = 0; i < hw; ++i) {
      const double* base = px + static_cast<int64_t>(n) * c * hw + i;
      double best = base[0];
      int arg = 0;
      for (int ch = 1; ch < c; ++ch) {
        double v = base[ch * hw];
        if (v > best) {
          best = v;
          arg = ch;
        }
      }
      po[n * hw + i] = best;
      argmax[static_cast<size_t>(n * hw + i)] = arg;
    }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, b, hw, argmax]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      int c = xc.size(1);
      (void)c;
      for (int n = 0; n < b; ++n)
        for (int64_t i = 0; i < hw; ++i) {
          int arg = argmax[static_cast<size_t>(n * hw + i)];
          gx[(static_cast<int64_t>(n) * xc.size(1) + arg) * hw + i] +=
              go[n * hw + i];
        }
    });
  }
  return out;
}

Tensor channel_mean(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("channel_mean expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  int64_t hw = static_cast<int64_t>(h) * w;
  Tensor out = Tensor::empty({b, 1, h, w});
  const double* px = x.data();
  double* po = out.data();
  for (int n = 0; n < b; ++n)
    for (int64_t i = 0; i < hw; ++i) {
      const double* base = px + static_cast<int64_t>(n) * c * hw + i;
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) acc += base[ch * hw];
      po[n * hw + i] = acc / c;
    }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, b, c, hw]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      double inv = 1.0 / c;
      for (int n = 0; n < b; ++n)
        for (int64_t i = 0; i < hw; ++i) {
          double g = go[n * hw + i] * inv;
          double* base = gx + static_cast<int64_t>(n) * c * hw + i;
          for (int ch = 0; ch < c; ++ch) base[ch * hw] += g;
        }
    });
  }
  return out;
}

Tensor channel_shuffle2(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("channel_shuffle2 expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (c % 2 != 0) throw ShapeError("channel_shuffle2 needs an even channel count");
  Tensor t = reshape(x, {b, 2, c / 2, h, w});
  t = permute(t, {0, 2, 1, 3, 4});
  return reshape(t, {b, c, h, w});
}

Tensor channel_duplicate2(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("channel_duplicate2 expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  Tensor pair = Tensor::full({1, 1, 2, 1, 1}, 1.0);
  Tensor t = mul(reshape(x, {b, c, 1, h, w}), pair);
  return reshape(t, {b, 2 * c, h, w});
}

std::pair<Tensor, Tensor> spatial_gradients(const Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1)
    throw ShapeError("spatial_gradients expects (B, 1, H, W)");
  int b = x.size(0), h = x.size(2), w = x.size(3);
  if (h < 2 || w < 2) throw ShapeError("spatial_gradients needs H, W >= 2");
  int64_t hw = static_cast<int64_t>(h) * w;
  Tensor dx = Tensor::empty(x.shape());
  Tensor dy = Tensor::empty(x.shape());
  const double* px = x.data();
  double* pdx = dx.data();
  double* pdy = dy.data();
  for (int n = 0; n < b; ++n) {
    const double* plane = px + n * hw;
    double* gx = pdx + n * hw;
    double* gy = pdy + n * hw;
    for (int i = 0; i < h; ++i) {
      const double* row = plane + static_cast<int64_t>(i) * w;
      double* gxr = gx + static_cast<int64_t>(i) * w;
      gxr[0] = row[1] - row[0];
      for (int j = 1; j < w - 1; ++j) gxr[j] = 0.5 * (row[j + 1] - row[j - 1]);
      gxr[w - 1] = row[w - 1] - row[w - 2];
    }
    for (int j = 0; j < w; ++j) {
      gy[j] = plane[w + j] - plane[j];
      for (int i = 1; i < h - 1; ++i)
        gy[static_cast<int64_t>(i) * w + j] =
            0.5 * (plane[static_cast<int64_t>(i + 1) * w + j] -
                   plane[static_cast<int64_t>(i - 1) * w + j]);
      gy[static_cast<int64_t>(h - 1) * w + j] =
          plane[static_cast<int64_t>(h - 1) * w + j] -
          plane[static_cast<int64_t>(h - 2) * w + j];
    }
  }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    {
      TensorImpl* on = dx.impl().get();
      attach_node(dx, {x}, [xc, on, b, h, w, hw]() mutable {
        const double* go = on->grad.data();
        double* gx = xc.grad_data();
        for (int n = 0; n < b; ++n)
          for (int i = 0; i < h; ++i) {
            const double* g = go + n * hw + static_cast<int64_t>(i) * w;
            double* dst = gx + n * hw + static_cast<int64_t>(i) * w;
            dst[1] += g[0];
            dst[0] -= g[0];
            for (int j = 1; j < w - 1; ++j) {
              dst[j + 1] += 0.5 * g[j];
              dst[j - 1] -= 0.5 * g[j];
            }
            dst[w - 1] += g[w - 1];
            dst[w - 2] -= g[w - 1];
          }
      });
    }
    {
      TensorImpl* on = dy.impl().get();
      attach_node(dy, {x}, [xc, on, b, h, w, hw]() mutable {
        const double* go = on->grad.data();
        double* gx = xc.grad_data();
        for (int n = 0; n < b; ++n)
          for (int j = 0; j < w; ++j) {
            const double* g = go + n * hw + j;
            double* dst = gx + n * hw + j;
            dst[w] += g[0];
            dst[0] -= g[0];
            for (int i = 1; i < h - 1; ++i) {
              dst[static_cast<int64_t>(i + 1) * w] +=
                  0.5 * g[static_cast<int64_t>(i) * w];
              dst[static_cast<int64_t>(i - 1) * w] -=
                  0.5 * g[static_cast<int64_t>(i) * w];
            }
            dst[static_cast<int64_t>(h - 1) * w] +=
                g[static_cast<int64_t>(h - 1) * w];
            dst[static_cast<int64_t>(h - 2) * w] -=
                g[static_cast<int64_t>(h - 1) * w];
          }
      });
    }
  }
  return {dx, dy};
}

Tensor normals_from_depth(const Tensor& depth) {
  auto [dx, dy] = spatial_gradients(depth);
  Tensor denom = sqrt_t(add_scalar(add(mul(dx, dx), mul(dy, dy)), 1.0));
  Tensor nx = div(neg(dx), denom);
  Tensor ny = div(neg(dy), denom);
  Tensor nz = div(Tensor::full(denom.shape(), 1.0), denom);
  return concat_channels(concat_channels(nx, ny), nz);
}

}  // namespace tdc
