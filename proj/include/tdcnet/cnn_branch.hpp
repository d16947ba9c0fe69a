#pragma once

#include <memory>
#include <vector>

#include "tdcnet/nn.hpp"

namespace tdc {

// Four-level feature stack; level i (0-based) is (B, C*2^i, H/2^(i+1), W/2^(i+1)).
using FeaturePyramid = std::vector<Tensor>;

void check_pyramid_shapes(const FeaturePyramid& p, int base_channels);

// Two 3x3 convs with norm/ReLU and an additive skip; stride-2 variants
// project the skip with a 1x1 conv.
class BasicBlock : public Module {
 public:
  BasicBlock(int in_ch, int out_ch, int stride, const std::string& norm,
             Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  std::unique_ptr<Conv2d> conv1_, conv2_, down_conv_;
  std::unique_ptr<Norm2d> norm1_, norm2_, down_norm_;
};

// ResNet18-style encoder over the raw depth map. Stage 1 is a stride-2 7x7
// stem plus two stride-1 blocks (no max-pool, landing exactly at H/2);
// stages 2-4 start with a stride-2 block. Channels run C, 2C, 4C, 8C.
class CnnBranch : public Module {
 public:
  CnnBranch(int in_ch, int base_channels, const std::string& norm, Rng& rng);
  FeaturePyramid forward(const Tensor& x) const;

  int base_channels() const { return c_; }

 private:
  int c_;
  std::unique_ptr<Conv2d> stem_conv_;
  std::unique_ptr<Norm2d> stem_norm_;
  std::vector<std::unique_ptr<BasicBlock>> blocks_;  // 2 per stage
};

}  // namespace tdc
