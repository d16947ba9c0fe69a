#include <algorithm>
#include <cmath>
#include <vector>

#include "tdcnet/ops.hpp"

namespace tdc {

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   std::vector<double>& running_mean,
                   std::vector<double>& running_var, bool training,
                   double momentum, double eps) {
  if (x.dim() != 4) throw ShapeError("batchnorm2d expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (gamma.numel() != c || beta.numel() != c ||
      static_cast<int>(running_mean.size()) != c ||
      static_cast<int>(running_var.size()) != c)
    throw ShapeError("batchnorm2d: parameter size mismatch");
  int64_t m = static_cast<int64_t>(b) * h * w;
  int64_t hw = static_cast<int64_t>(h) * w;

  std::vector<double> mu(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
  if (training) {
    const double* px = x.data();
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (int n = 0; n < b; ++n) {
        const double* plane = px + (static_cast<int64_t>(n) * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          s += plane[i];
          s2 += plane[i] * plane[i];
        }
      }
      double mean = s / m;
      double var = s2 / m - mean * mean;
      var = std::max(var, 0.0);
      mu[static_cast<size_t>(ch)] = mean;
      invstd[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
      double var_unbiased = m > 1 ? var * m / (m - 1) : var;
      running_mean[static_cast<size_t>(ch)] =
          (1.0 - momentum) * running_mean[static_cast<size_t>(ch)] + momentum * mean;
      running_var[static_cast<size_t>(ch)] =
          (1.0 - momentum) * running_var[static_cast<size_t>(ch)] +
          momentum * var_unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[static_cast<size_t>(ch)] = running_mean[static_cast<size_t>(ch)];
      invstd[static_cast<size_t>(ch)] =
          1.0 / std::sqrt(running_var[static_cast<size_t>(ch)] + eps);
    }
  }

  Tensor out = Tensor::empty(x.shape());
  {
    const double* px = x.data();
    double* po = out.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int n = 0; n < b; ++n)
      for (int ch = 0; ch < c; ++ch) {
        double mean = mu[static_cast<size_t>(ch)];
        double is = invstd[static_cast<size_t>(ch)];
        double g = pg[ch], bt = pb[ch];
        const double* xp = px + (static_cast<int64_t>(n) * c + ch) * hw;
        double* op = po + (static_cast<int64_t>(n) * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i) op[i] = g * (xp[i] - mean) * is + bt;
      }
  }

  if (grad_enabled() && (x.requires_grad() || gamma.requires_grad() ||
                         beta.requires_grad())) {
    Tensor xc = x, gc = gamma, bc = beta;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x, gamma, beta},
                [xc, gc, bc, on, b, c, hw, m, mu, invstd, training]() mutable {
      const double* go = on->grad.data();
      const double* px = xc.data();
      const double* pg = gc.data();
      bool need_x = xc.requires_grad();
      double* gx = need_x ? xc.grad_data() : nullptr;
      double* gg = gc.requires_grad() ? gc.grad_data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
      for (int ch = 0; ch < c; ++ch) {
        double mean = mu[static_cast<size_t>(ch)];
        double is = invstd[static_cast<size_t>(ch)];
        double gam = pg[ch];
        double sum_go = 0.0, sum_go_xhat = 0.0;
        for (int n = 0; n < b; ++n) {
          const double* xp = px + (static_cast<int64_t>(n) * c + ch) * hw;
          const double* gp = go + (static_cast<int64_t>(n) * c + ch) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_go += gp[i];
            sum_go_xhat += gp[i] * (xp[i] - mean) * is;
          }
        }
        if (gg) gg[ch] += sum_go_xhat;
        if (gb) gb[ch] += sum_go;
        if (!need_x) continue;
        if (training) {
          double inv_m = 1.0 / static_cast<double>(m);
          for (int n = 0; n < b; ++n) {
            const double* xp = px + (static_cast<int64_t>(n) * c + ch) * hw;
            const double* gp = go + (static_cast<int64_t>(n) * c + ch) * hw;
            double* gxp = gx + (static_cast<int64_t>(n) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              double xhat = (xp[i] - mean) * is;
              gxp[i] += gam * is *
                        (gp[i] - inv_m * sum_go - inv_m * xhat * sum_go_xhat);
            }
          }
        } else {
          double scale = gam * is;
          for (int n = 0; n < b; ++n) {
            const double* gp = go + (static_cast<int64_t>(n) * c + ch) * hw;
            double* gxp = gx + (static_cast<int64_t>(n) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) gxp[i] += scale * gp[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor groupnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 int groups, double eps) {
  if (x.dim() != 4) throw ShapeError("groupnorm expects NCHW");
  int b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (groups < 1 || c % groups != 0)
    throw ShapeError("groupnorm: channels not divisible by groups");
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("groupnorm: parameter size mismatch");
  int cg = c / groups;
  int64_t hw = static_cast<int64_t>(h) * w;
  int64_t l = static_cast<int64_t>(cg) * hw;

  std::vector<double> mu(static_cast<size_t>(b) * groups);
  std::vector<double> invstd(static_cast<size_t>(b) * groups);
  const double* px = x.data();
  for (int n = 0; n < b; ++n)
    for (int g = 0; g < groups; ++g) {
      const double* base = px + (static_cast<int64_t>(n) * c + g * cg) * hw;
      double s = 0.0, s2 = 0.0;
      for (int64_t i = 0; i < l; ++i) {
        s += base[i];
        s2 += base[i] * base[i];
      }
      double mean = s / l;
      double var = std::max(s2 / l - mean * mean, 0.0);
      mu[static_cast<size_t>(n) * groups + g] = mean;
      invstd[static_cast<size_t>(n) * groups + g] = 1.0 / std::sqrt(var + eps);
    }

  Tensor out = Tensor::empty(x.shape());
  {
    double* po = out.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int n = 0; n < b; ++n)
      for (int ch = 0; ch < c; ++ch) {
        int g = ch / cg;
        double mean = mu[static_cast<size_t>(n) * groups + g];
        double is = invstd[static_cast<size_t>(n) * groups + g];
        const double* xp = px + (static_cast<int64_t>(n) * c + ch) * hw;
        double* op = po + (static_cast<int64_t>(n) * c + ch) * hw;
        for (int64_t i = 0; i < hw; ++i)
          op[i] = pg[ch] * (xp[i] - mean) * is + pb[ch];
      }
  }

  if (grad_enabled() && (x.requires_grad() || gamma.requires_grad() ||
                         beta.requires_grad())) {
    Tensor xc = x, gc = gamma, bc = beta;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x, gamma, beta},
                [xc, gc, bc, on, b, c, cg, groups, hw, l, mu, invstd]() mutable {
      const double* go = on->grad.data();
      const double* px = xc.data();
      const double* pg = gc.data();
      bool need_x = xc.requires_grad();
      double* gx = need_x ? xc.grad_data() : nullptr;
      double* gg = gc.requires_grad() ? gc.grad_data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
      for (int n = 0; n < b; ++n)
        for (int g = 0; g < groups; ++g) {
          double mean = mu[static_cast<size_t>(n) * groups + g];
          double is = invstd[static_cast<size_t>(n) * groups + g];
          double s1 = 0.0, s2 = 0.0;  // sums of dxhat and dxhat*xhat
          for (int k = 0; k < cg; ++k) {
            int ch = g * cg + k;
            const double* xp = px + (static_cast<int64_t>(n) * c + ch) * hw;
            const double* gp = go + (static_cast<int64_t>(n) * c + ch) * hw;
            double g_ch = 0.0, gx_ch = 0.0;
            for (int64_t i = 0; i < hw; ++i) {
              double xhat = (xp[i] - mean) * is;
              double dxhat = gp[i] * pg[ch];
              s1 += dxhat;
              s2 += dxhat * xhat;
              g_ch += gp[i];
              gx_ch += gp[i] * xhat;
            }
            if (gb) gb[ch] += g_ch;
            if (gg) gg[ch] += gx_ch;
          }
          if (!need_x) continue;
          double inv_l = 1.0 / static_cast<double>(l);
          for (int k = 0; k < cg; ++k) {
            int ch = g * cg + k;
            const double* xp = px + (static_cast<int64_t>(n) * c + ch) * hw;
            const double* gp = go + (static_cast<int64_t>(n) * c + ch) * hw;
            double* gxp = gx + (static_cast<int64_t>(n) * c + ch) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              double xhat = (xp[i] - mean) * is;
              double dxhat = gp[i] * pg[ch];
              gxp[i] += is * (dxhat - inv_l * s1 - inv_l * xhat * s2);
            }
          }
        }
    });
  }
  return out;
}

Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps) {
  if (x.dim() < 1) throw ShapeError("layernorm_lastdim needs at least 1 dim");
  int d = x.size(x.dim() - 1);
  if (gamma.numel() != d || beta.numel() != d)
    throw ShapeError("layernorm_lastdim: parameter size mismatch");
  int64_t rows = x.numel() / d;

  std::vector<double> mu(static_cast<size_t>(rows)),
      invstd(static_cast<size_t>(rows));
  const double* px = x.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < d; ++i) {
      s += row[i];
      s2 += row[i] * row[i];
    }
    double mean = s / d;
    double var = std::max(s2 / d - mean * mean, 0.0);
    mu[static_cast<size_t>(r)] = mean;
    invstd[static_cast<size_t>(r)] = 1.0 / std::sqrt(var + eps);
  }

  Tensor out = Tensor::empty(x.shape());
  {
    double* po = out.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* row = px + r * d;
      double* orow = po + r * d;
      double mean = mu[static_cast<size_t>(r)], is = invstd[static_cast<size_t>(r)];
      for (int i = 0; i < d; ++i)
        orow[i] = pg[i] * (row[i] - mean) * is + pb[i];
    }
  }

  if (grad_enabled() && (x.requires_grad() || gamma.requires_grad() ||
                         beta.requires_grad())) {
    Tensor xc = x, gc = gamma, bc = beta;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x, gamma, beta},
                [xc, gc, bc, on, rows, d, mu, invstd]() mutable {
      const double* go = on->grad.data();
      const double* px = xc.data();
      const double* pg = gc.data();
      bool need_x = xc.requires_grad();
      double* gx = need_x ? xc.grad_data() : nullptr;
      double* gg = gc.requires_grad() ? gc.grad_data() : nullptr;
      double* gb = bc.requires_grad() ? bc.grad_data() : nullptr;
      for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        const double* grow = go + r * d;
        double mean = mu[static_cast<size_t>(r)], is = invstd[static_cast<size_t>(r)];
        double s1 = 0.0, s2 = 0.0;
        for (int i = 0; i < d; ++i) {
          double xhat = (row[i] - mean) * is;
          double dxhat = grow[i] * pg[i];
          s1 += dxhat;
          s2 += dxhat * xhat;
          if (gg) gg[i] += grow[i] * xhat;
          if (gb) gb[i] += grow[i];
        }
        if (!need_x) continue;
        double inv_d = 1.0 / d;
        double* gxrow = gx + r * d;
        for (int i = 0; i < d; ++i) {
          double xhat = (row[i] - mean) * is;
          double dxhat = grow[i] * pg[i];
          gxrow[i] += is * (dxhat - inv_d * s1 - inv_d * xhat * s2);
        }
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.dim() < 1) throw ShapeError("softmax_lastdim needs at least 1 dim");
  int d = x.size(x.dim() - 1);
  int64_t rows = x.numel() / d;
  Tensor out = Tensor::empty(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = px + r * d;
    double* orow = po + r * d;
    double mx = row[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      orow[i] = std::exp(row[i] - mx);
      s += orow[i];
    }
    double inv = 1.0 / s;
    for (int i = 0; i < d; ++i) orow[i] *= inv;
  }
  if (grad_enabled() && x.requires_grad()) {
    Tensor xc = x;
    TensorImpl* on = out.impl().get();
    attach_node(out, {x}, [xc, on, rows, d]() mutable {
      const double* go = on->grad.data();
      const double* py = on->values.data();
      double* gx = xc.grad_data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = py + r * d;
        const double* g = go + r * d;
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += g[i] * y[i];
        double* gxr = gx + r * d;
        for (int i = 0; i < d; ++i) gxr[i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

}  // namespace tdc
