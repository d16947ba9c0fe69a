#pragma once

#include <array>
#include <memory>
#include <vector>

#include "tdcnet/cnn_branch.hpp"
#include "tdcnet/nn.hpp"

namespace tdc {

struct WindowAttnConfig {
  int window = 4;
  std::array<int, 4> heads_per_stage = {1, 2, 4, 8};
  std::array<int, 4> depths_per_stage = {2, 2, 2, 2};
  double mlp_ratio = 4.0;
};

// Captures post-softmax attention maps, one entry per attention layer
// executed, each (B*nWin, heads, T, T).
struct AttnProbe {
  std::vector<Tensor> attention;
};

// Multi-head self-attention within (optionally shifted) windows, with
// relative position bias. Operates on (B, H, W, C) feature maps.
class WindowAttention : public Module {
 public:
  WindowAttention(int dim, int heads, int window, int shift, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& shift_mask,
                 AttnProbe* probe) const;

  int shift() const { return shift_; }

 private:
  int dim_, heads_, window_, shift_;
  std::unique_ptr<Linear> q_, k_, v_, proj_;
  Tensor rel_pos_table_;  // ((2w-1)^2, heads)
  std::vector<int> rel_index_;
};

class SwinBlock : public Module {
 public:
  SwinBlock(int dim, int heads, int window, int shift, double mlp_ratio,
            Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& shift_mask,
                 AttnProbe* probe) const;

  int shift() const { return attn_->shift(); }

 private:
  std::unique_ptr<LayerNorm> norm1_, norm2_;
  std::unique_ptr<WindowAttention> attn_;
  std::unique_ptr<Linear> mlp_fc1_, mlp_fc2_;
};

// 2x2 spatial concat + layer norm + linear 4c -> 2c.
class PatchMerging : public Module {
 public:
  PatchMerging(int dim, Rng& rng);
  Tensor forward(const Tensor& x) const;  // (B,H,W,C) -> (B,H/2,W/2,2C)

 private:
  std::unique_ptr<LayerNorm> norm_;
  std::unique_ptr<Linear> reduce_;
};

// Four-stage window-attention encoder over the RGB-D stack, shape-aligned to
// CnnBranch: stage i emits (B, C*2^i, H/2^(i+1), W/2^(i+1)).
class TransformerBranch : public Module {
 public:
  TransformerBranch(int in_ch, int base_channels, const WindowAttnConfig& cfg,
                    Rng& rng);
  FeaturePyramid forward(const Tensor& x, AttnProbe* probe = nullptr) const;

  const WindowAttnConfig& config() const { return cfg_; }

 private:
  int c_;
  WindowAttnConfig cfg_;
  std::unique_ptr<Conv2d> patch_embed_;
  std::unique_ptr<LayerNorm> embed_norm_;
  std::vector<std::unique_ptr<SwinBlock>> blocks_;      // flattened stages
  std::vector<std::unique_ptr<PatchMerging>> merges_;   // 3 between stages
  std::vector<std::unique_ptr<LayerNorm>> out_norms_;   // per-stage emit norm
};

}  // namespace tdc
