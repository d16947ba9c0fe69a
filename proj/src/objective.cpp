#include "tdcnet/objective.hpp"

#include <cmath>

#include "tdcnet/common.hpp"
#include "tdcnet/ops.hpp"

namespace tdc {

namespace {

double region_count(const Tensor& region) {
  double n = 0.0;
  for (double v : region.values()) n += v;
  return n;
}

void check_pair(const Tensor& pred, const Tensor& gt, const Tensor& region) {
  if (pred.shape() != gt.shape() || pred.shape() != region.shape())
    throw ShapeError("loss inputs must share one shape, got " +
                     shape_str(pred.shape()) + " / " + shape_str(gt.shape()) +
                     " / " + shape_str(region.shape()));
  if (pred.dim() != 4 || pred.size(1) != 1)
    throw ShapeError("losses expect (B,1,H,W) depth maps");
}

// Mean of x over the region's nonzero pixels.
Tensor region_mean(const Tensor& x, const Tensor& region, double n) {
  return mul_scalar(sum_all(mul(x, region)), 1.0 / n);
}

}  // namespace

LossState update_weight(LossState state, double epoch_mean_smooth_loss) {
  state.history.push_back(epoch_mean_smooth_loss);
  if (state.history.size() > 2)
    state.history.erase(state.history.begin(),
                        state.history.end() - 2);
  if (state.history.size() < 2) {
    state.beta = state.alpha;
    return state;
  }
  double prev = state.history[0], last = state.history[1];
  if (last <= 1e-12) {
    state.beta = 0.1 * state.alpha;  // fully converged
    return state;
  }
  double ratio = prev / last;
  state.beta = std::abs(ratio) < state.threshold ? 0.1 * state.alpha
                                                 : state.alpha;
  return state;
}

Tensor loss_region(const Batch& batch, bool full_image) {
  NoGradGuard ng;
  if (full_image) return batch.valid.detach_copy();
  return mul(batch.mask, batch.valid);
}

Tensor depth_loss(const Tensor& pred, const Tensor& gt,
                  const Tensor& region) {
  check_pair(pred, gt, region);
  double n = region_count(region);
  if (n <= 0.0) throw EmptyRegionError("depth_loss: empty region");
  Tensor err = sub(pred, gt);
  return region_mean(mul(err, err), region, n);
}

Tensor surface_normals(const Tensor& depth) { return normals_from_depth(depth); }

Tensor smooth_loss(const Tensor& pred, const Tensor& gt,
                   const Tensor& region) {
  check_pair(pred, gt, region);
  double n = region_count(region);
  if (n <= 0.0) throw EmptyRegionError("smooth_loss: empty region");
  Tensor vp = surface_normals(pred);
  Tensor vg = surface_normals(gt);
  Tensor prod = mul(vp, vg);
  Tensor cos = add(add(slice_channels(prod, 0, 1), slice_channels(prod, 1, 2)),
                   slice_channels(prod, 2, 3));
  return region_mean(add_scalar(neg(cos), 1.0), region, n);
}

Tensor total_loss(const Tensor& pred, const Tensor& gt, const Tensor& region,
                  const LossState& state) {
  return add(depth_loss(pred, gt, region),
             mul_scalar(smooth_loss(pred, gt, region), state.beta));
}

}  // namespace tdc
