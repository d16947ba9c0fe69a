#pragma once

#include <string>
#include <vector>

#include "tdcnet/rng.hpp"
#include "tdcnet/tensor.hpp"

namespace tdc {

// One RGB-D sample. rgb is (3, H, W) in [0,1]; depth maps are (1, H, W) in
// meters with 0 = missing; mask marks transparent-object pixels; valid marks
// trustworthy ground truth. Metrics and losses use (mask AND valid).
struct RgbdSample {
  Tensor rgb;
  Tensor raw_depth;
  Tensor gt_depth;
  Tensor mask;
  Tensor valid;
  std::string id;

  int height() const { return rgb.size(1); }
  int width() const { return rgb.size(2); }
};

// Stacked samples. rgbd is (B, 4, H, W): RGB plus raw depth normalized by
// max_depth; channel 3 is bit-identical to raw_depth / max_depth.
struct Batch {
  Tensor rgbd;
  Tensor raw_depth;
  Tensor gt_depth;
  Tensor mask;
  Tensor valid;

  int size() const { return rgbd.size(0); }
};

struct ToySceneConfig {
  int height = 64;
  int width = 64;
  int n_objects = 4;
  double depth_near = 0.5;
  double depth_far = 2.0;
  std::string corruption = "zero";  // zero | background | noisy-background
  uint64_t seed = 0;
};

struct LoadOptions {
  int target_height = 0;  // 0 = keep native resolution
  int target_width = 0;
  double max_depth = 10.0;
};

struct AugFlags {
  bool hflip = false;
  bool vflip = false;
  bool rot90 = false;
  bool rot_small = false;
  bool depth_noise = false;
  bool rgb_noise = false;
  double depth_sigma = 0.005;
  double rgb_sigma = 0.02;
};

AugFlags parse_aug_flags(const std::vector<std::string>& names);

// split_dir is `<root>/<split>`; the sample lives in `<split_dir>/<id>/`.
RgbdSample load_sample(const std::string& split_dir, const std::string& id,
                       const LoadOptions& opts = {});
void write_sample(const std::string& split_dir, const RgbdSample& sample);

std::vector<std::string> read_manifest(const std::string& split_dir);
void write_manifest(const std::string& split_dir,
                    const std::vector<std::string>& ids);

RgbdSample generate_toy_scene(const ToySceneConfig& cfg);

// Deterministic in (sample, seed, flags). Geometric transforms hit every map
// identically; depth noise only perturbs raw_depth where it is nonzero.
RgbdSample augment(const RgbdSample& sample, uint64_t seed,
                   const AugFlags& flags);

Batch make_batch(const std::vector<RgbdSample>& samples, double max_depth);

}  // namespace tdc
