#pragma once

#include <utility>
#include <vector>

#include "tdcnet/tensor.hpp"

namespace tdc {

// ---- convolution / pooling / resampling (NCHW) ----

// Grouped 2D convolution, im2col + GEMM. w is (Cout, Cin/groups, kh, kw),
// bias (Cout) or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding, int groups = 1);

// Output bin i covers input rows [floor(i*H/oh), ceil((i+1)*H/oh)).
Tensor adaptive_avg_pool2d(const Tensor& x, int oh, int ow);

// align_corners=false sampling, edge-clamped.
Tensor bilinear_upsample(const Tensor& x, int oh, int ow);

// ---- normalization / softmax ----

// Training mode normalizes with batch stats over (N, H, W) per channel and
// updates running buffers in place: run = (1-momentum)*run + momentum*batch
// (unbiased variance for the running update). Eval mode uses the buffers.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   std::vector<double>& running_mean,
                   std::vector<double>& running_var, bool training,
                   double momentum, double eps);

Tensor groupnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 int groups, double eps);

// Normalizes over the last dim. gamma/beta are 1-D of that size.
Tensor layernorm_lastdim(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps);

Tensor softmax_lastdim(const Tensor& x);

// ---- window attention helpers ----

// torch.roll semantics on dims (1, 2) of a (B, H, W, C) tensor.
Tensor roll2d(const Tensor& x, int shift_h, int shift_w);

// out[m] = table[idx[m]]; table is (R, C), idx values in [0, R).
Tensor gather_rows(const Tensor& table, const std::vector<int>& idx);

// (B, C, H, W) -> (B, H*W, C) and back.
Tensor nchw_to_tokens(const Tensor& x);
Tensor tokens_to_nchw(const Tensor& x, int h, int w);

// (B, H, W, C) -> (B*nWin, win*win, C), row-major window order.
Tensor window_partition(const Tensor& x, int win);
Tensor window_reverse(const Tensor& x, int win, int b, int h, int w);

// Additive attention mask for shifted windows: 0 within a region, `fill`
// across regions. Shape (nWin, T, T), T = win*win. Constant, no graph.
Tensor make_shift_mask(int h, int w, int win, int shift, double fill);

// Relative position index table for a win*win window: idx[(i*T)+j] in
// [0, (2*win-1)^2).
std::vector<int> relative_position_index(int win);

// ---- channel ops ----

Tensor channel_max(const Tensor& x);   // (B,C,H,W) -> (B,1,H,W)
Tensor channel_mean(const Tensor& x);  // (B,C,H,W) -> (B,1,H,W)

// Interleaves two halves: groups=2 channel shuffle on (B, 2G, H, W).
Tensor channel_shuffle2(const Tensor& x);

// j -> (2j, 2j+1): (B, C, H, W) -> (B, 2C, H, W).
Tensor channel_duplicate2(const Tensor& x);

// ---- image-derived quantities ----

// Central differences inside, one-sided at borders, unit pixel spacing.
// x is (B, 1, H, W) with H, W >= 2; returns (d/dx, d/dy).
std::pair<Tensor, Tensor> spatial_gradients(const Tensor& x);

// Unit surface normals from a depth map: normalize((-dz/dx, -dz/dy, 1)).
// (B, 1, H, W) -> (B, 3, H, W).
Tensor normals_from_depth(const Tensor& depth);

}  // namespace tdc
