#include "tdcnet/cnn_branch.hpp"

namespace tdc {

void check_pyramid_shapes(const FeaturePyramid& p, int base_channels) {
  if (p.size() != 4) throw ShapeError("feature pyramid must have 4 levels");
  int b = p[0].size(0);
  int h2 = p[0].size(2), w2 = p[0].size(3);
  for (int i = 0; i < 4; ++i) {
    Shape expect = {b, base_channels << i, h2 >> i, w2 >> i};
    if (p[static_cast<size_t>(i)].shape() != expect)
      throw ShapeError("pyramid level " + std::to_string(i + 1) +
                       " has shape " +
                       shape_str(p[static_cast<size_t>(i)].shape()) +
                       ", expected " + shape_str(expect));
  }
}

BasicBlock::BasicBlock(int in_ch, int out_ch, int stride,
                       const std::string& norm, Rng& rng) {
  conv1_ = std::make_unique<Conv2d>(in_ch, out_ch, 3, stride, 1, 1, false, rng);
  norm1_ = std::make_unique<Norm2d>(norm, out_ch);
  conv2_ = std::make_unique<Conv2d>(out_ch, out_ch, 3, 1, 1, 1, false, rng);
  norm2_ = std::make_unique<Norm2d>(norm, out_ch);
  register_child("conv1", conv1_.get());
  register_child("norm1", norm1_.get());
  register_child("conv2", conv2_.get());
  register_child("norm2", norm2_.get());
  if (stride != 1 || in_ch != out_ch) {
    down_conv_ =
        std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, 1, false, rng);
    down_norm_ = std::make_unique<Norm2d>(norm, out_ch);
    register_child("down_conv", down_conv_.get());
    register_child("down_norm", down_norm_.get());
  }
}

Tensor BasicBlock::forward(const Tensor& x) const {
  Tensor y = relu(norm1_->forward(conv1_->forward(x)));
  y = norm2_->forward(conv2_->forward(y));
  Tensor skip = down_conv_ ? down_norm_->forward(down_conv_->forward(x)) : x;
  return relu(add(y, skip));
}

CnnBranch::CnnBranch(int in_ch, int base_channels, const std::string& norm,
                     Rng& rng)
    : c_(base_channels) {
  stem_conv_ = std::make_unique<Conv2d>(in_ch, c_, 7, 2, 3, 1, false, rng);
  stem_norm_ = std::make_unique<Norm2d>(norm, c_);
  register_child("stem_conv", stem_conv_.get());
  register_child("stem_norm", stem_norm_.get());
  for (int stage = 0; stage < 4; ++stage) {
    int in = stage == 0 ? c_ : c_ << (stage - 1);
    int out = c_ << stage;
    int stride = stage == 0 ? 1 : 2;
    blocks_.push_back(std::make_unique<BasicBlock>(in, out, stride, norm, rng));
    blocks_.push_back(std::make_unique<BasicBlock>(out, out, 1, norm, rng));
    register_child("stage" + std::to_string(stage + 1) + ".block1",
                   blocks_[static_cast<size_t>(2 * stage)].get());
    register_child("stage" + std::to_string(stage + 1) + ".block2",
                   blocks_[static_cast<size_t>(2 * stage + 1)].get());
  }
}

FeaturePyramid CnnBranch::forward(const Tensor& x) const {
  if (x.dim() != 4) throw ShapeError("cnn branch expects NCHW input");
  if (x.size(2) % 16 != 0 || x.size(3) % 16 != 0)
    throw ShapeError("cnn branch input H and W must be divisible by 16, got " +
                     shape_str(x.shape()));
  Tensor y = relu(stem_norm_->forward(stem_conv_->forward(x)));
  FeaturePyramid levels;
  for (int stage = 0; stage < 4; ++stage) {
    y = blocks_[static_cast<size_t>(2 * stage)]->forward(y);
    y = blocks_[static_cast<size_t>(2 * stage + 1)]->forward(y);
    levels.push_back(y);
  }
  check_pyramid_shapes(levels, c_);
  return levels;
}

}  // namespace tdc
