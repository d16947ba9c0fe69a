#pragma once

#include <memory>
#include <vector>

#include "tdcnet/cnn_branch.hpp"
#include "tdcnet/nn.hpp"

namespace tdc {

// Element-wise sum of shape-aligned branch features.
Tensor dual_add(const Tensor& f_cnn, const Tensor& f_trans);

// 7x7 conv over the channel-wise max/avg maps; raw scores, no squashing.
class SpatialAttention : public Module {
 public:
  explicit SpatialAttention(Rng& rng);
  Tensor forward(const Tensor& x) const;  // (B,ch,h,w) -> (B,1,h,w)

 private:
  std::unique_ptr<Conv2d> conv_;
};

// Squeeze-excite style bottleneck on the global average; raw scores.
class ChannelAttention : public Module {
 public:
  ChannelAttention(int channels, int reduction, Rng& rng);
  Tensor forward(const Tensor& x) const;  // (B,ch,h,w) -> (B,ch,1,1)

 private:
  std::unique_ptr<Conv2d> fc1_, fc2_;
};

// Optional peek at MFFM internals, filled when requested.
struct MffmTrace {
  Tensor gate;   // W after sigmoid, (B,ch,h,w)
  Tensor blend;  // W*f_current + (1-W)*align before the 1x1 projections
};

// Multi-scale fusion: aligns the previous (larger, half-channel) fused map
// by pooling + channel replication, gates it against the current level with
// combined spatial/channel attention, and projects the two paths.
class Mffm : public Module {
 public:
  Mffm(int channels, int reduction, Rng& rng);
  Tensor forward(const Tensor& f_current, const Tensor& f_prev,
                 MffmTrace* trace = nullptr) const;

  bool use_skip = true;

 private:
  int ch_;
  std::unique_ptr<SpatialAttention> sa_;
  std::unique_ptr<ChannelAttention> ca_;
  std::unique_ptr<Conv2d> gconv_, proj_high_, proj_low_;
};

// Applies dual_add per level and chains MFFM across levels 2..4;
// level 1 passes through untouched.
class FusionStack : public Module {
 public:
  FusionStack(int base_channels, int reduction, Rng& rng);
  FeaturePyramid forward(const FeaturePyramid& cnn, const FeaturePyramid& trans,
                         std::vector<MffmTrace>* traces = nullptr) const;

  Mffm& level(int i) { return *mffms_.at(i); }  // i in 0..2 for levels 2..4

 private:
  int c_;
  std::vector<std::unique_ptr<Mffm>> mffms_;
};

}  // namespace tdc
