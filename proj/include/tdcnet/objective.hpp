#pragma once

#include <vector>

#include "tdcnet/data.hpp"
#include "tdcnet/tensor.hpp"

namespace tdc {

// Auxiliary-weight schedule driven by the ratio of the last two epoch-mean
// smooth losses: once the ratio settles under the threshold the weight drops
// to a tenth of alpha. Re-evaluated every epoch, no latching.
struct LossState {
  double alpha = 0.1;
  double beta = 0.1;  // current weight, starts at alpha
  double threshold = 1.05;
  std::vector<double> history;  // last two epoch means, oldest first
};

// Pure: feeds one epoch-mean smooth loss and returns the advanced state.
LossState update_weight(LossState state, double epoch_mean_smooth_loss);

// Supervision region: mask AND valid by default, the valid map alone when
// full_image is set. Result carries no gradient.
Tensor loss_region(const Batch& batch, bool full_image = false);

// Mean squared depth error over region pixels.
Tensor depth_loss(const Tensor& pred, const Tensor& gt, const Tensor& region);

// Unit normals from image-plane depth gradients: normalize((-du, -dv, 1)).
Tensor surface_normals(const Tensor& depth);

// Mean over region of 1 - cos(angle between pred and gt normals); in [0,2].
Tensor smooth_loss(const Tensor& pred, const Tensor& gt, const Tensor& region);

// depth_loss + beta * smooth_loss with beta taken from the state. Fixed
// weighting is the same call with a state whose beta never leaves alpha.
Tensor total_loss(const Tensor& pred, const Tensor& gt, const Tensor& region,
                  const LossState& state);

}  // namespace tdc
