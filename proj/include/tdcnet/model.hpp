#pragma once

#include <array>
#include <memory>
#include <string>

#include "tdcnet/cnn_branch.hpp"
#include "tdcnet/data.hpp"
#include "tdcnet/fusion.hpp"
#include "tdcnet/nn.hpp"
#include "tdcnet/transformer_branch.hpp"

namespace tdc {

struct ModelConfig {
  int c = 24;
  int input_h = 240;
  int input_w = 320;
  std::string branch_a = "cnn";   // cnn | swin
  std::string branch_b = "swin";  // cnn | swin
  std::string input_a = "depth";  // depth | rgb | rgbd
  std::string input_b = "rgbd";
  std::string fusion = "mffm";  // mffm | ffm_stub | none
  bool composite_raw = false;
  std::string norm = "batch";  // batch | group
  int window = 0;              // 0 picks the largest divisor of (H/16, W/16) <= 7
  std::array<int, 4> heads = {1, 2, 4, 8};
  std::array<int, 4> depths = {2, 2, 2, 2};
  double mlp_ratio = 4.0;
  int reduction = 4;
  double max_depth = 10.0;
  bool linear_output = false;
};

// Throws ConfigError on any invalid field combination.
void validate_config(const ModelConfig& cfg);
// Concrete window size for the transformer stages (resolves window == 0).
int resolve_window(const ModelConfig& cfg);

struct DepthPrediction {
  Tensor depth;       // (B,1,H,W) meters
  Tensor composited;  // defined only when composite_raw is set
};

// Wraps either encoder style behind one pyramid interface.
class Encoder {
 public:
  Encoder(const std::string& kind, int in_ch, const ModelConfig& cfg,
          Rng& rng);
  FeaturePyramid forward(const Tensor& x, AttnProbe* probe) const;
  Module& module();

 private:
  std::unique_ptr<CnnBranch> cnn_;
  std::unique_ptr<TransformerBranch> swin_;
};

// [3x3 conv + norm + ReLU] x2, halving the channel count.
class DecodeBlock : public Module {
 public:
  DecodeBlock(int in_ch, int out_ch, const std::string& norm, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  std::unique_ptr<Conv2d> conv1_, conv2_;
  std::unique_ptr<Norm2d> norm1_, norm2_;
};

// Dual-branch encoder, fused pyramid, and a U-style decoder that upsamples
// back to full resolution with projected skip sums.
class TdcNet : public Module {
 public:
  TdcNet(const ModelConfig& cfg, Rng& rng);

  DepthPrediction forward(const Batch& batch, AttnProbe* probe = nullptr) const;
  // Raw pyramid access for inspection; order: branch a, branch b.
  std::pair<FeaturePyramid, FeaturePyramid> encode(const Batch& batch) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  Tensor select_input(const Batch& batch, const std::string& which) const;
  FeaturePyramid fuse(const FeaturePyramid& a, const FeaturePyramid& b) const;

  ModelConfig cfg_;
  std::unique_ptr<Encoder> branch_a_, branch_b_;
  std::unique_ptr<FusionStack> fusion_;
  std::vector<std::unique_ptr<DecodeBlock>> decode_;  // 8C->4C, 4C->2C, 2C->C
  std::vector<std::unique_ptr<Conv2d>> skip_;         // 1x1 per skip level
  std::unique_ptr<Conv2d> head_;                      // 1x1 C->1
};

int64_t count_params(const ModelConfig& cfg);

}  // namespace tdc
