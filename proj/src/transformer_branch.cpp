#include "tdcnet/transformer_branch.hpp"

#include <cmath>

#include "tdcnet/common.hpp"
#include "tdcnet/ops.hpp"

namespace tdc {

WindowAttention::WindowAttention(int dim, int heads, int window, int shift,
                                 Rng& rng)
    : dim_(dim), heads_(heads), window_(window), shift_(shift) {
  if (dim % heads != 0)
    throw ConfigError("attention dim " + std::to_string(dim) +
                      " not divisible by heads " + std::to_string(heads));
  q_ = std::make_unique<Linear>(dim, dim, true, rng);
  k_ = std::make_unique<Linear>(dim, dim, true, rng);
  v_ = std::make_unique<Linear>(dim, dim, true, rng);
  proj_ = std::make_unique<Linear>(dim, dim, true, rng);
  register_child("q", q_.get());
  register_child("k", k_.get());
  register_child("v", v_.get());
  register_child("proj", proj_.get());

  int span = 2 * window - 1;
  rel_pos_table_ = Tensor::zeros({span * span, heads});
  init_trunc_normal(rel_pos_table_, 0.02, rng);
  rel_pos_table_ = register_param("rel_pos_table", rel_pos_table_);
  rel_index_ = relative_position_index(window);
}

Tensor WindowAttention::forward(const Tensor& x, const Tensor& shift_mask,
                                AttnProbe* probe) const {
  int b = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  int t = window_ * window_;
  int hd = dim_ / heads_;
  double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor shifted = shift_ > 0 ? roll2d(x, -shift_, -shift_) : x;
  Tensor win = window_partition(shifted, window_);  // (B*nW, T, C)
  int bn = win.shape()[0];

  auto split_heads = [&](const Tensor& tkn) {
    return permute(reshape(tkn, {bn, t, heads_, hd}), {0, 2, 1, 3});
  };
  Tensor q = split_heads(mul_scalar(q_->forward(win), scale));
  Tensor k = split_heads(k_->forward(win));
  Tensor v = split_heads(v_->forward(win));

  Tensor attn = matmul(q, k, true);  // (B*nW, heads, T, T)

  Tensor bias = gather_rows(rel_pos_table_, rel_index_);  // (T*T, heads)
  bias = reshape(permute(reshape(bias, {t, t, heads_}), {2, 0, 1}),
                 {1, heads_, t, t});
  attn = add(attn, bias);

  if (shift_mask.defined()) {
    int nw = shift_mask.shape()[0];
    attn = reshape(attn, {bn / nw, nw, heads_, t, t});
    attn = add(attn, reshape(shift_mask, {1, nw, 1, t, t}));
    attn = reshape(attn, {bn, heads_, t, t});
  }

  attn = softmax_lastdim(attn);
  if (probe) probe->attention.push_back(attn.detach_copy());

  Tensor out = matmul(attn, v);  // (B*nW, heads, T, hd)
  out = reshape(permute(out, {0, 2, 1, 3}), {bn, t, dim_});
  out = proj_->forward(out);
  out = window_reverse(out, window_, b, h, w);
  return shift_ > 0 ? roll2d(out, shift_, shift_) : out;
}

SwinBlock::SwinBlock(int dim, int heads, int window, int shift,
                     double mlp_ratio, Rng& rng) {
  norm1_ = std::make_unique<LayerNorm>(dim);
  norm2_ = std::make_unique<LayerNorm>(dim);
  attn_ = std::make_unique<WindowAttention>(dim, heads, window, shift, rng);
  int hidden = static_cast<int>(dim * mlp_ratio);
  mlp_fc1_ = std::make_unique<Linear>(dim, hidden, true, rng);
  mlp_fc2_ = std::make_unique<Linear>(hidden, dim, true, rng);
  register_child("norm1", norm1_.get());
  register_child("attn", attn_.get());
  register_child("norm2", norm2_.get());
  register_child("mlp_fc1", mlp_fc1_.get());
  register_child("mlp_fc2", mlp_fc2_.get());
}

Tensor SwinBlock::forward(const Tensor& x, const Tensor& shift_mask,
                          AttnProbe* probe) const {
  Tensor h = add(x, attn_->forward(norm1_->forward(x), shift_mask, probe));
  Tensor m = mlp_fc2_->forward(gelu(mlp_fc1_->forward(norm2_->forward(h))));
  return add(h, m);
}

PatchMerging::PatchMerging(int dim, Rng& rng) {
  norm_ = std::make_unique<LayerNorm>(4 * dim);
  reduce_ = std::make_unique<Linear>(4 * dim, 2 * dim, false, rng);
  register_child("norm", norm_.get());
  register_child("reduce", reduce_.get());
}

Tensor PatchMerging::forward(const Tensor& x) const {
  int b = x.shape()[0], h = x.shape()[1], w = x.shape()[2], c = x.shape()[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("patch merging needs even spatial dims");
  Tensor y = reshape(x, {b, h / 2, 2, w / 2, 2, c});
  y = permute(y, {0, 1, 3, 2, 4, 5});
  y = reshape(y, {b, h / 2, w / 2, 4 * c});
  return reduce_->forward(norm_->forward(y));
}

TransformerBranch::TransformerBranch(int in_ch, int base_channels,
                                     const WindowAttnConfig& cfg, Rng& rng)
    : c_(base_channels), cfg_(cfg) {
  if (cfg.window < 2) throw ConfigError("window size must be >= 2");
  patch_embed_ = std::make_unique<Conv2d>(in_ch, c_, 2, 2, 0, 1, true, rng);
  embed_norm_ = std::make_unique<LayerNorm>(c_);
  register_child("patch_embed", patch_embed_.get());
  register_child("embed_norm", embed_norm_.get());

  for (int s = 0; s < 4; ++s) {
    int dim = c_ << s;
    if (cfg.depths_per_stage[s] < 1)
      throw ConfigError("stage depth must be >= 1");
    for (int d = 0; d < cfg.depths_per_stage[s]; ++d) {
      int shift = (d % 2 == 1) ? cfg.window / 2 : 0;
      blocks_.push_back(std::make_unique<SwinBlock>(
          dim, cfg.heads_per_stage[s], cfg.window, shift, cfg.mlp_ratio, rng));
      register_child(
          "stage" + std::to_string(s + 1) + ".block" + std::to_string(d + 1),
          blocks_.back().get());
    }
    out_norms_.push_back(std::make_unique<LayerNorm>(dim));
    register_child("out_norm" + std::to_string(s + 1),
                   out_norms_.back().get());
    if (s < 3) {
      merges_.push_back(std::make_unique<PatchMerging>(dim, rng));
      register_child("merge" + std::to_string(s + 1), merges_.back().get());
    }
  }
}

FeaturePyramid TransformerBranch::forward(const Tensor& x,
                                          AttnProbe* probe) const {
  if (x.shape().size() != 4) throw ShapeError("expected (B,C,H,W) input");
  int h = x.shape()[2], w = x.shape()[3];
  if (h % 16 != 0 || w % 16 != 0)
    throw ShapeError("input spatial dims must be divisible by 16");
  // Deepest stage sits at 1/16 resolution and must tile into whole windows.
  if ((h / 16) % cfg_.window != 0 || (w / 16) % cfg_.window != 0)
    throw ConfigError("window " + std::to_string(cfg_.window) +
                      " does not tile input " + std::to_string(h) + "x" +
                      std::to_string(w));

  Tensor t = permute(patch_embed_->forward(x), {0, 2, 3, 1});  // (B,H/2,W/2,C)
  t = embed_norm_->forward(t);

  FeaturePyramid pyramid;
  int block_at = 0;
  int shift = cfg_.window / 2;
  for (int s = 0; s < 4; ++s) {
    Tensor mask;
    {
      NoGradGuard ng;
      mask = make_shift_mask(t.shape()[1], t.shape()[2], cfg_.window, shift,
                             -100.0);
    }
    for (int d = 0; d < cfg_.depths_per_stage[s]; ++d, ++block_at) {
      const auto& blk = blocks_[block_at];
      t = blk->forward(t, blk->shift() > 0 ? mask : Tensor(), probe);
    }
    pyramid.push_back(permute(out_norms_[s]->forward(t), {0, 3, 1, 2}));
    if (s < 3) t = merges_[s]->forward(t);
  }
  check_pyramid_shapes(pyramid, c_);
  return pyramid;
}

}  // namespace tdc
