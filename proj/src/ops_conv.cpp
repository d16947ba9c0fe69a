#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tdcnet/ops.hpp"

namespace tdc {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

// x points at one (C, H, W) group slice; col is (C*kh*kw, Ho*Wo).
void im2col(const double* x, int c_in, int h, int w, int kh, int kw, int stride,
            int pad, int ho, int wo, double* col) {
  int64_t p = static_cast<int64_t>(ho) * wo;
  int64_t k = 0;
  for (int c = 0; c < c_in; ++c) {
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj, ++k) {
        double* dst = col + k * p;
        for (int oi = 0; oi < ho; ++oi) {
          int ii = oi * stride - pad + di;
          double* row = dst + static_cast<int64_t>(oi) * wo;
          if (ii < 0 || ii >= h) {
            std::fill_n(row, wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<int64_t>(c) * h + ii) * w;
          for (int oj = 0; oj < wo; ++oj) {
            int jj = oj * stride - pad + dj;
            row[oj] = (jj >= 0 && jj < w) ? src[jj] : 0.0;
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds col back into the (C, H, W) slice at gx.
void col2im_add(const double* col, int c_in, int h, int w, int kh, int kw,
                int stride, int pad, int ho, int wo, double* gx) {
  int64_t p = static_cast<int64_t>(ho) * wo;
  int64_t k = 0;
  for (int c = 0; c < c_in; ++c) {
    for (int di = 0; di < kh; ++di) {
      for (int dj = 0; dj < kw; ++dj, ++k) {
        const double* src = col + k * p;
        for (int oi = 0; oi < ho; ++oi) {
          int ii = oi * stride - pad + di;
          if (ii < 0 || ii >= h) continue;
          double* row = gx + (static_cast<int64_t>(c) * h + ii) * w;
          const double* s = src + static_cast<int64_t>(oi) * wo;
          for (int oj = 0; oj < wo; ++oj) {
            int jj = oj * stride - pad + dj;
            if (jj >= 0 && jj < w) row[jj] += s[oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding, int groups) {
  if (x.dim() != 4 || w.dim() != 4)
    throw ShapeError("conv2d expects 4-D input and weight");
  int b = x.size(0), c_in = x.size(1), h = x.size(2), wd = x.size(3);
  int c_out = w.size(0), cig = w.size(1), kh = w.size(2), kw = w.size(3);
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0)
    throw ShapeError("conv2d: channels not divisible by groups");
  if (cig != c_in / groups)
    throw ShapeError("conv2d: weight expects " + std::to_string(cig * groups) +
                     " input channels, got " + std::to_string(c_in));
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != c_out))
    throw ShapeError("conv2d: bias shape mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  int ho = (h + 2 * padding - kh) / stride + 1;
  int wo = (wd + 2 * padding - kw) / stride + 1;
  if (ho < 1 || wo < 1)
    throw ShapeError("conv2d: kernel larger than padded input");

  int cog = c_out / groups;
  int64_t k = static_cast<int64_t>(cig) * kh * kw;
  int64_t p = static_cast<int64_t>(ho) * wo;
  bool identity_col = (kh == 1 && kw == 1 && stride == 1 && padding == 0);

  Tensor out = Tensor::empty({b, c_out, ho, wo});
  std::vector<double> col;
  if (!identity_col) col.resize(static_cast<size_t>(k * p));
  for (int n = 0; n < b; ++n) {
    for (int g = 0; g < groups; ++g) {
      const double* xg =
          x.data() + (static_cast<int64_t>(n) * c_in + g * cig) * h * wd;
      const double* colp = xg;
      if (!identity_col) {
        im2col(xg, cig, h, wd, kh, kw, stride, padding, ho, wo, col.data());
        colp = col.data();
      }
      ConstMatMap wm(w.data() + static_cast<int64_t>(g) * cog * k, cog, k);
      ConstMatMap cm(colp, k, p);
      MatMap om(out.data() + (static_cast<int64_t>(n) * c_out + g * cog) * p,
                cog, p);
      om.noalias() = wm * cm;
    }
  }
  if (bias.defined()) {
    double* po = out.data();
    const double* pb = bias.data();
    for (int n = 0; n < b; ++n)
      for (int c = 0; c < c_out; ++c) {
        double bv = pb[c];
        double* row = po + (static_cast<int64_t>(n) * c_out + c) * p;
        for (int64_t i = 0; i < p; ++i) row[i] += bv;
      }
  }

  std::vector<Tensor> inputs = {x, w};
  if (bias.defined()) inputs.push_back(bias);
  if (grad_enabled() && any_requires_grad(inputs)) {
    Tensor xc = x, wc = w, bc = bias;
    TensorImpl* on = out.impl().get();
    attach_node(out, inputs,
                [xc, wc, bc, on, b, c_in, c_out, h, wd, kh, kw, stride, padding,
                 groups, cig, cog, k, p, ho, wo, identity_col]() mutable {
      bool need_x = xc.requires_grad();
      bool need_w = wc.requires_grad();
      bool need_b = bc.defined() && bc.requires_grad();
      double* gx = need_x ? xc.grad_data() : nullptr;
      double* gw = need_w ? wc.grad_data() : nullptr;
      const double* go = on->grad.data();
      std::vector<double> col, gcol;
      if (!identity_col) {
        if (need_w) col.resize(static_cast<size_t>(k * p));
        if (need_x) gcol.resize(static_cast<size_t>(k * p));
      }
      for (int n = 0; n < b; ++n) {
        for (int g = 0; g < groups; ++g) {
          ConstMatMap gom(go + (static_cast<int64_t>(n) * c_out + g * cog) * p,
                          cog, p);
          int64_t xoff = (static_cast<int64_t>(n) * c_in + g * cig) * h * wd;
          if (need_w) {
            const double* colp = xc.data() + xoff;
            if (!identity_col) {
              im2col(xc.data() + xoff, cig, h, wd, kh, kw, stride, padding, ho,
                     wo, col.data());
              colp = col.data();
            }
            ConstMatMap cm(colp, k, p);
            MatMap gwm(gw + static_cast<int64_t>(g) * cog * k, cog, k);
            gwm.noalias() += gom * cm.transpose();
          }
          if (need_x) {
            ConstMatMap wm(wc.data() + static_cast<int64_t>(g) * cog * k, cog,
                           k);
            if (identity_col) {
              MatMap gxm(gx + xoff, k, p);
              gxm.noalias() += wm.transpose() * gom;
            } else {
              MatMap gcm(gcol.data(), k, p);
              gcm.noalias() = wm.transpose() * gom;
              col2im_add(gcol.data(), cig, h, wd, kh, kw, stride, padding, ho,
                         wo, gx + xoff);
            }
          }
        }
      }
      if (need_b) {
        double* gb = bc.grad_data();
        for (int n = 0; n < b; ++n)
          for (int c = 0; c < c_out; ++c) {
            const double* row = go + (static_cast<int64_t>(n) * c_out + c) * p;
            double acc = 0.0;
            for (int64_t i = 0; i < p; ++i) acc += row[i];
            gb[c] += acc;
          }
      }
    });
  }
  return out;
}

Tensor adaptive_avg_pool2d(const Tensor& x, int oh, int ow) {
  if (x.dim() != 4) throw ShapeError("adaptive_avg_pool2d expects NCHW");
  if (oh < 1 || ow < 1) throw ShapeError("adaptive_avg_pool2d: bad output size");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (oh > h || ow > w)
    throw ShapeError("adaptive_avg_pool2d cannot upsample " +
                     shape_str(x.shape()));
  std::vector<int> r0(static_cast<size_t>(oh)), r1(static_cast<size_t>(oh));
  std::vector<int> c0(static_cast<size_t>(ow)), c1(static_cast<size_t>(ow));
  for (int i = 0; i < oh; ++i) {
    r0[static_cast<size_t>(i)] = (i * h) / oh;
    r1[static_cast<size_t>(i)] = ((i + 1) * h + oh - 1) / oh;
  }
  for (int j = 0; j < ow; ++j) {
    c0[static_cast<size_t>(j)] = (j * w) / ow;
    c1[static_cast<size_t>(j)] = ((j + 1) * w + ow - 1) / ow;
  }
  Tensor out = Tensor::empty({b, c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(b) * c; ++nc) {
    const double* plane = px + nc * h * w;
    double* oplane = po + nc * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (int ii = r0[static_cast<size_t>(i)]; ii < r1[static_cast<size_t>(i)]; ++ii)
          for (int jj = c0[static_cast<size_t>(j)]; jj < c1[static_cast<size_t>(j)]; ++jj)
            acc += plane[ii * w + jj];
        int cnt = (r1[static_cast<size_t>(i)] - r0[static_cast<size_t>(i)]) *
                  (c1[static_cast<size_t>(j)] - c0[static_cast<size_t>(j)]);
        oplane[i * ow + j] = acc / cnt;
      }
  }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, b, c, h, w, oh, ow, r0, r1, c0, c1]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      for (int64_t nc = 0; nc < static_cast<int64_t>(b) * c; ++nc) {
        double* gplane = gx + nc * h * w;
        const double* goplane = go + nc * oh * ow;
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            int cnt = (r1[static_cast<size_t>(i)] - r0[static_cast<size_t>(i)]) *
                      (c1[static_cast<size_t>(j)] - c0[static_cast<size_t>(j)]);
            double g = goplane[i * ow + j] / cnt;
            for (int ii = r0[static_cast<size_t>(i)]; ii < r1[static_cast<size_t>(i)]; ++ii)
              for (int jj = c0[static_cast<size_t>(j)]; jj < c1[static_cast<size_t>(j)]; ++jj)
                gplane[ii * w + jj] += g;
          }
      }
    });
  }
  return out;
}

Tensor bilinear_upsample(const Tensor& x, int oh, int ow) {
  if (x.dim() != 4) throw ShapeError("bilinear_upsample expects NCHW");
  if (oh < 1 || ow < 1) throw ShapeError("bilinear_upsample: bad output size");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  std::vector<int> y0(static_cast<size_t>(oh)), y1(static_cast<size_t>(oh));
  std::vector<double> fy(static_cast<size_t>(oh));
  std::vector<int> x0(static_cast<size_t>(ow)), x1(static_cast<size_t>(ow));
  std::vector<double> fx(static_cast<size_t>(ow));
  for (int i = 0; i < oh; ++i) {
    double sy = (i + 0.5) * static_cast<double>(h) / oh - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
    int lo = static_cast<int>(sy);
    y0[static_cast<size_t>(i)] = lo;
    y1[static_cast<size_t>(i)] = std::min(lo + 1, h - 1);
    fy[static_cast<size_t>(i)] = sy - lo;
  }
  for (int j = 0; j < ow; ++j) {
    double sx = (j + 0.5) * static_cast<double>(w) / ow - 0.5;
    sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
    int lo = static_cast<int>(sx);
    x0[static_cast<size_t>(j)] = lo;
    x1[static_cast<size_t>(j)] = std::min(lo + 1, w - 1);
    fx[static_cast<size_t>(j)] = sx - lo;
  }
  Tensor out = Tensor::empty({b, c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(b) * c; ++nc) {
    const double* plane = px + nc * h * w;
    double* oplane = po + nc * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const double* r0 = plane + y0[static_cast<size_t>(i)] * w;
      const double* r1 = plane + y1[static_cast<size_t>(i)] * w;
      double wy = fy[static_cast<size_t>(i)];
      for (int j = 0; j < ow; ++j) {
        double wx = fx[static_cast<size_t>(j)];
        int a = x0[static_cast<size_t>(j)], bb = x1[static_cast<size_t>(j)];
        double top = r0[a] * (1.0 - wx) + r0[bb] * wx;
        double bot = r1[a] * (1.0 - wx) + r1[bb] * wx;
        oplane[i * ow + j] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x},
                [xc, on, b, c, h, w, oh, ow, y0, y1, fy, x0, x1, fx]() mutable {
      const double* go = on->grad.data();
      double* gx = xc.grad_data();
      for (int64_t nc = 0; nc < static_cast<int64_t>(b) * c; ++nc) {
        double* gplane = gx + nc * h * w;
        const double* goplane = go + nc * oh * ow;
        for (int i = 0; i < oh; ++i) {
          double wy = fy[static_cast<size_t>(i)];
          double* g0 = gplane + y0[static_cast<size_t>(i)] * w;
          double* g1 = gplane + y1[static_cast<size_t>(i)] * w;
          for (int j = 0; j < ow; ++j) {
            double wx = fx[static_cast<size_t>(j)];
            int a = x0[static_cast<size_t>(j)], bb = x1[static_cast<size_t>(j)];
            double g = goplane[i * ow + j];
            g0[a] += g * (1.0 - wy) * (1.0 - wx);
            g0[bb] += g * (1.0 - wy) * wx;
            g1[a] += g * wy * (1.0 - wx);
            g1[bb] += g * wy * wx;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace tdc
