#include "tdcnet/fusion.hpp"

#include "tdcnet/common.hpp"
#include "tdcnet/ops.hpp"

namespace tdc {

Tensor dual_add(const Tensor& f_cnn, const Tensor& f_trans) {
  if (f_cnn.shape() != f_trans.shape())
    throw ShapeError("dual_add requires identical shapes, got " +
                     shape_str(f_cnn.shape()) + " vs " +
                     shape_str(f_trans.shape()));
  return add(f_cnn, f_trans);
}

SpatialAttention::SpatialAttention(Rng& rng) {
  conv_ = std::make_unique<Conv2d>(2, 1, 7, 1, 3, 1, true, rng);
  register_child("conv", conv_.get());
}

Tensor SpatialAttention::forward(const Tensor& x) const {
  return conv_->forward(concat_channels(channel_max(x), channel_mean(x)));
}

ChannelAttention::ChannelAttention(int channels, int reduction, Rng& rng) {
  if (reduction < 1 || channels % reduction != 0)
    throw ConfigError("channel attention: " + std::to_string(channels) +
                      " channels not divisible by reduction " +
                      std::to_string(reduction));
  fc1_ = std::make_unique<Conv2d>(channels, channels / reduction, 1, 1, 0, 1,
                                  true, rng);
  fc2_ = std::make_unique<Conv2d>(channels / reduction, channels, 1, 1, 0, 1,
                                  true, rng);
  register_child("fc1", fc1_.get());
  register_child("fc2", fc2_.get());
}

Tensor ChannelAttention::forward(const Tensor& x) const {
  Tensor pooled = adaptive_avg_pool2d(x, 1, 1);
  return fc2_->forward(relu(fc1_->forward(pooled)));
}

Mffm::Mffm(int channels, int reduction, Rng& rng) : ch_(channels) {
  if (channels % 2 != 0)
    throw ConfigError("mffm needs an even channel count, got " +
                      std::to_string(channels));
  sa_ = std::make_unique<SpatialAttention>(rng);
  ca_ = std::make_unique<ChannelAttention>(channels, reduction, rng);
  gconv_ = std::make_unique<Conv2d>(2 * channels, channels, 7, 1, 3, channels,
                                    true, rng);
  proj_high_ = std::make_unique<Conv2d>(channels, channels, 1, 1, 0, 1, true,
                                        rng);
  proj_low_ = std::make_unique<Conv2d>(channels, channels, 1, 1, 0, 1, true,
                                       rng);
  register_child("sa", sa_.get());
  register_child("ca", ca_.get());
  register_child("gconv", gconv_.get());
  register_child("proj_high", proj_high_.get());
  register_child("proj_low", proj_low_.get());
}

Tensor Mffm::forward(const Tensor& f_current, const Tensor& f_prev,
                     MffmTrace* trace) const {
  const Shape& cur = f_current.shape();
  const Shape& prev = f_prev.shape();
  if (cur.size() != 4 || prev.size() != 4)
    throw ShapeError("mffm expects NCHW maps");
  if (cur[1] != ch_)
    throw ShapeError("mffm built for " + std::to_string(ch_) +
                     " channels, got " + shape_str(cur));
  if (prev[0] != cur[0] || prev[1] * 2 != cur[1] || prev[2] != cur[2] * 2 ||
      prev[3] != cur[3] * 2)
    throw ShapeError("mffm alignment mismatch: " + shape_str(cur) + " vs " +
                     shape_str(prev));

  Tensor align =
      channel_duplicate2(adaptive_avg_pool2d(f_prev, cur[2], cur[3]));
  Tensor x = add(f_current, align);
  Tensor scores = add(sa_->forward(x), ca_->forward(x));
  Tensor shuffled = channel_shuffle2(concat_channels(scores, x));
  Tensor gate = sigmoid(gconv_->forward(shuffled));

  Tensor high = mul(gate, f_current);
  Tensor low = mul(add_scalar(neg(gate), 1.0), align);
  if (trace) {
    trace->gate = gate.detach_copy();
    trace->blend = add(high, low).detach_copy();
  }
  Tensor out = add(proj_high_->forward(high), proj_low_->forward(low));
  return use_skip ? add(out, x) : out;
}

FusionStack::FusionStack(int base_channels, int reduction, Rng& rng)
    : c_(base_channels) {
  for (int i = 1; i < 4; ++i) {
    mffms_.push_back(std::make_unique<Mffm>(c_ << i, reduction, rng));
    register_child("mffm" + std::to_string(i + 1), mffms_.back().get());
  }
}

FeaturePyramid FusionStack::forward(const FeaturePyramid& cnn,
                                    const FeaturePyramid& trans,
                                    std::vector<MffmTrace>* traces) const {
  if (cnn.size() != 4 || trans.size() != 4)
    throw ShapeError("fuse_pyramid expects 4-level pyramids");
  FeaturePyramid fused;
  fused.push_back(dual_add(cnn[0], trans[0]));
  for (int i = 1; i < 4; ++i) {
    Tensor f_add = dual_add(cnn[i], trans[i]);
    MffmTrace* t = nullptr;
    if (traces) {
      traces->emplace_back();
      t = &traces->back();
    }
    fused.push_back(mffms_[i - 1]->forward(f_add, fused[i - 1], t));
  }
  check_pyramid_shapes(fused, c_);
  return fused;
}

}  // namespace tdc
