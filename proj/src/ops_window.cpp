#include <vector>

#include "tdcnet/ops.hpp"

namespace tdc {

Tensor roll2d(const Tensor& x, int shift_h, int shift_w) {
  if (x.dim() != 4) throw ShapeError("roll2d expects (B, H, W, C)");
  int b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  auto modp = [](int v, int m) { return ((v % m) + m) % m; };
  int sh = modp(shift_h, h), sw = modp(shift_w, w);
  Tensor out = Tensor::empty(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int n = 0; n < b; ++n)
    for (int i = 0; i < h; ++i) {
      int si = modp(i - sh, h);
      for (int j = 0; j < w; ++j) {
        int sj = modp(j - sw, w);
        const double* src = px + ((static_cast<int64_t>(n) * h + si) * w + sj) * c;
        double* dst = po + ((static_cast<int64_t>(n) * h + i) * w + j) * c;
        std::copy_n(src, c, dst);
      }
    }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, b, h, w, c, sh, sw, modp]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      for (int n = 0; n < b; ++n)
        for (int i = 0; i < h; ++i) {
          int si = modp(i - sh, h);
          for (int j = 0; j < w; ++j) {
            int sj = modp(j - sw, w);
            const double* g = go + ((static_cast<int64_t>(n) * h + i) * w + j) * c;
            double* dst = gx + ((static_cast<int64_t>(n) * h + si) * w + sj) * c;
            for (int k = 0; k < c; ++k) dst[k] += g[k];
          }
        }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
  if (table.dim() != 2) throw ShapeError("gather_rows expects a 2-D table");
  int r = table.size(0), c = table.size(1);
  for (int i : idx)
    if (i < 0 || i >= r) throw ShapeError("gather_rows: index out of range");
  int m = static_cast<int>(idx.size());
  Tensor out = Tensor::empty({m, c});
  const double* pt = table.data();
  double* po = out.data();
  for (int i = 0; i < m; ++i)
    std::copy_n(pt + static_cast<int64_t>(idx[static_cast<size_t>(i)]) * c, c,
                po + static_cast<int64_t>(i) * c);
  if (grad_enabled() && table.requires_grad()) {
    Tensor tc = table;
    TensorImpl* on = out.impl().get();
    attach_node(out, {table}, [tc, on, idx, m, c]() mutable {
      const double* go = on->grad.data();
      double* gt = tc.grad_data();
      for (int i = 0; i < m; ++i) {
        double* dst = gt + static_cast<int64_t>(idx[static_cast<size_t>(i)]) * c;
        const double* g = go + static_cast<int64_t>(i) * c;
        for (int k = 0; k < c; ++k) dst[k] += g[k];
      }
    });
  }
  return out;
}

Tensor nchw_to_tokens(const Tensor& x) {
  if (x.dim() != 4) throw ShapeError("nchw_to_tokens expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  return reshape(permute(x, {0, 2, 3, 1}), {b, h * w, c});
}

Tensor tokens_to_nchw(const Tensor& x, int h, int w) {
  if (x.dim() != 3) throw ShapeError("tokens_to_nchw expects (B, T, C)");
  int b = x.size(0), c = x.size(2);
  if (x.size(1) != h * w)
    throw ShapeError("tokens_to_nchw: token count does not match h*w");
  return permute(reshape(x, {b, h, w, c}), {0, 3, 1, 2});
}

Tensor window_partition(const Tensor& x, int win) {
  if (x.dim() != 4) throw ShapeError("window_partition expects (B, H, W, C)");
  int b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  if (win < 1 || h % win != 0 || w % win != 0)
    throw ShapeError("window_partition: " + shape_str(x.shape()) +
                     " not divisible by window " + std::to_string(win));
  int nh = h / win, nw = w / win;
  Tensor t = reshape(x, {b, nh, win, nw, win, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {b * nh * nw, win * win, c});
}

Tensor window_reverse(const Tensor& x, int win, int b, int h, int w) {
  if (x.dim() != 3) throw ShapeError("window_reverse expects (B*nWin, T, C)");
  int nh = h / win, nw = w / win;
  int c = x.size(2);
  if (x.size(0) != b * nh * nw || x.size(1) != win * win)
    throw ShapeError("window_reverse: shape mismatch");
  Tensor t = reshape(x, {b, nh, nw, win, win, c});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {b, h, w, c});
}

Tensor make_shift_mask(int h, int w, int win, int shift, double fill) {
  NoGradGuard ng;
  int nh = h / win, nw = w / win;
  int t = win * win;
  // Region id per pixel after the cyclic shift, as in shifted window
  // attention: three bands per axis.
  std::vector<int> region(static_cast<size_t>(h) * w);
  auto band = [&](int i, int len) {
    if (i < len - win) return 0;
    if (i < len - shift) return 1;
    return 2;
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      region[static_cast<size_t>(i) * w + j] = band(i, h) * 3 + band(j, w);

  Tensor mask = Tensor::zeros({nh * nw, t, t});
  double* pm = mask.data();
  for (int wi = 0; wi < nh; ++wi)
    for (int wj = 0; wj < nw; ++wj) {
      std::vector<int> ids(static_cast<size_t>(t));
      for (int a = 0; a < win; ++a)
        for (int bcol = 0; bcol < win; ++bcol)
          ids[static_cast<size_t>(a) * win + bcol] =
              region[static_cast<size_t>(wi * win + a) * w + (wj * win + bcol)];
      double* block = pm + static_cast<int64_t>(wi * nw + wj) * t * t;
      for (int a = 0; a < t; ++a)
        for (int bb = 0; bb < t; ++bb)
          block[a * t + bb] =
              ids[static_cast<size_t>(a)] == ids[static_cast<size_t>(bb)] ? 0.0
                                                                          : fill;
    }
  return mask;
}

std::vector<int> relative_position_index(int win) {
  int t = win * win;
  std::vector<int> idx(static_cast<size_t>(t) * t);
  for (int i = 0; i < t; ++i) {
    int yi = i / win, xi = i % win;
    for (int j = 0; j < t; ++j) {
      int yj = j / win, xj = j % win;
      int dy = yi - yj + win - 1;
      int dx = xi - xj + win - 1;
      idx[static_cast<size_t>(i) * t + j] = dy * (2 * win - 1) + dx;
    }
  }
  return idx;
}

}  // namespace tdc
