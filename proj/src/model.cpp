#include "tdcnet/model.hpp"

#include <algorithm>

#include "tdcnet/common.hpp"
#include "tdcnet/ops.hpp"

namespace tdc {

namespace {

int input_channels(const std::string& which) {
  if (which == "depth") return 1;
  if (which == "rgb") return 3;
  if (which == "rgbd") return 4;
  throw ConfigError("unknown input selection '" + which + "'");
}

bool uses_swin(const ModelConfig& cfg) {
  return cfg.branch_a == "swin" || cfg.branch_b == "swin";
}

}  // namespace

void validate_config(const ModelConfig& cfg) {
  if (cfg.input_h <= 0 || cfg.input_w <= 0 || cfg.input_h % 16 != 0 ||
      cfg.input_w % 16 != 0)
    throw ConfigError("input size must be positive and divisible by 16");
  if (cfg.c < 1) throw ConfigError("base channel count must be >= 1");
  for (const std::string& b : {cfg.branch_a, cfg.branch_b})
    if (b != "cnn" && b != "swin")
      throw ConfigError("unknown branch kind '" + b + "'");
  input_channels(cfg.input_a);
  input_channels(cfg.input_b);
  if (cfg.fusion != "mffm" && cfg.fusion != "ffm_stub" && cfg.fusion != "none")
    throw ConfigError("unknown fusion variant '" + cfg.fusion + "'");
  if (cfg.norm != "batch" && cfg.norm != "group")
    throw ConfigError("unknown norm kind '" + cfg.norm + "'");
  if (cfg.max_depth <= 0.0) throw ConfigError("max_depth must be positive");
  if (cfg.mlp_ratio <= 0.0) throw ConfigError("mlp_ratio must be positive");
  if (cfg.reduction < 1) throw ConfigError("reduction must be >= 1");
  if (cfg.fusion == "mffm" && (2 * cfg.c) % cfg.reduction != 0)
    throw ConfigError("2*C must be divisible by the attention reduction");
  if (uses_swin(cfg)) {
    for (int s = 0; s < 4; ++s) {
      if (cfg.depths[s] < 1) throw ConfigError("stage depth must be >= 1");
      if (cfg.heads[s] < 1 || (cfg.c << s) % cfg.heads[s] != 0)
        throw ConfigError("stage " + std::to_string(s + 1) + " dim " +
                          std::to_string(cfg.c << s) +
                          " not divisible by heads " +
                          std::to_string(cfg.heads[s]));
    }
    resolve_window(cfg);
  }
}

int resolve_window(const ModelConfig& cfg) {
  int th = cfg.input_h / 16, tw = cfg.input_w / 16;
  if (cfg.window != 0) {
    if (cfg.window < 2 || th % cfg.window != 0 || tw % cfg.window != 0)
      throw ConfigError("window " + std::to_string(cfg.window) +
                        " does not tile the deepest stage (" +
                        std::to_string(th) + "x" + std::to_string(tw) + ")");
    return cfg.window;
  }
  for (int w = 7; w >= 2; --w)
    if (th % w == 0 && tw % w == 0) return w;
  throw ConfigError("no window in [2,7] tiles the deepest stage (" +
                    std::to_string(th) + "x" + std::to_string(tw) + ")");
}

Encoder::Encoder(const std::string& kind, int in_ch, const ModelConfig& cfg,
                 Rng& rng) {
  if (kind == "cnn") {
    cnn_ = std::make_unique<CnnBranch>(in_ch, cfg.c, cfg.norm, rng);
  } else {
    WindowAttnConfig wcfg;
    wcfg.window = resolve_window(cfg);
    wcfg.heads_per_stage = cfg.heads;
    wcfg.depths_per_stage = cfg.depths;
    wcfg.mlp_ratio = cfg.mlp_ratio;
    swin_ = std::make_unique<TransformerBranch>(in_ch, cfg.c, wcfg, rng);
  }
}

FeaturePyramid Encoder::forward(const Tensor& x, AttnProbe* probe) const {
  return cnn_ ? cnn_->forward(x) : swin_->forward(x, probe);
}

Module& Encoder::module() {
  return cnn_ ? static_cast<Module&>(*cnn_) : static_cast<Module&>(*swin_);
}

DecodeBlock::DecodeBlock(int in_ch, int out_ch, const std::string& norm,
                         Rng& rng) {
  conv1_ = std::make_unique<Conv2d>(in_ch, out_ch, 3, 1, 1, 1, false, rng);
  norm1_ = std::make_unique<Norm2d>(norm, out_ch);
  conv2_ = std::make_unique<Conv2d>(out_ch, out_ch, 3, 1, 1, 1, false, rng);
  norm2_ = std::make_unique<Norm2d>(norm, out_ch);
  register_child("conv1", conv1_.get());
  register_child("norm1", norm1_.get());
  register_child("conv2", conv2_.get());
  register_child("norm2", norm2_.get());
}

Tensor DecodeBlock::forward(const Tensor& x) const {
  Tensor h = relu(norm1_->forward(conv1_->forward(x)));
  return relu(norm2_->forward(conv2_->forward(h)));
}

TdcNet::TdcNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate_config(cfg_);
  branch_a_ = std::make_unique<Encoder>(cfg.branch_a,
                                        input_channels(cfg.input_a), cfg, rng);
  branch_b_ = std::make_unique<Encoder>(cfg.branch_b,
                                        input_channels(cfg.input_b), cfg, rng);
  register_child("branch_a", &branch_a_->module());
  register_child("branch_b", &branch_b_->module());

  if (cfg.fusion == "mffm") {
    fusion_ = std::make_unique<FusionStack>(cfg.c, cfg.reduction, rng);
    register_child("fusion", fusion_.get());
  }

  int c = cfg.c;
  int dec_in[3] = {8 * c, 4 * c, 2 * c};
  for (int i = 0; i < 3; ++i) {
    decode_.push_back(std::make_unique<DecodeBlock>(dec_in[i], dec_in[i] / 2,
                                                    cfg.norm, rng));
    register_child("decode" + std::to_string(4 - i), decode_.back().get());
    skip_.push_back(std::make_unique<Conv2d>(dec_in[i] / 2, dec_in[i] / 2, 1,
                                             1, 0, 1, true, rng));
    register_child("skip" + std::to_string(3 - i), skip_.back().get());
  }
  head_ = std::make_unique<Conv2d>(c, 1, 1, 1, 0, 1, true, rng);
  // Fan-based init on a C->1 conv leaves the sigmoid saturated; a near-zero
  // head starts every prediction at max_depth/2 where the output slope is
  // largest while keeping a live gradient path into the decoder.
  init_trunc_normal(head_->weight, 0.01, rng);
  register_child("head", head_.get());
}

Tensor TdcNet::select_input(const Batch& batch, const std::string& which) const {
  if (which == "depth") return slice_channels(batch.rgbd, 3, 4);
  if (which == "rgb") return slice_channels(batch.rgbd, 0, 3);
  return batch.rgbd;
}

FeaturePyramid TdcNet::fuse(const FeaturePyramid& a,
                            const FeaturePyramid& b) const {
  if (cfg_.fusion == "mffm") return fusion_->forward(a, b);

  FeaturePyramid fused;
  fused.push_back(dual_add(a[0], b[0]));
  for (int i = 1; i < 4; ++i) {
    Tensor f_add = dual_add(a[i], b[i]);
    if (cfg_.fusion == "none") {
      fused.push_back(f_add);
    } else {  // ffm_stub: previous fused level, resized, as per-pixel weights
      const Shape& s = f_add.shape();
      Tensor w = channel_duplicate2(
          adaptive_avg_pool2d(fused[i - 1], s[2], s[3]));
      fused.push_back(mul(f_add, w));
    }
  }
  return fused;
}

std::pair<FeaturePyramid, FeaturePyramid> TdcNet::encode(
    const Batch& batch) const {
  return {branch_a_->forward(select_input(batch, cfg_.input_a), nullptr),
          branch_b_->forward(select_input(batch, cfg_.input_b), nullptr)};
}

DepthPrediction TdcNet::forward(const Batch& batch, AttnProbe* probe) const {
  if (!batch.rgbd.defined() || batch.rgbd.dim() != 4 ||
      batch.rgbd.size(1) != 4)
    throw ShapeError("batch rgbd must be (B,4,H,W)");
  int h = batch.rgbd.size(2), w = batch.rgbd.size(3);
  if (h != cfg_.input_h || w != cfg_.input_w)
    throw ShapeError("batch is " + std::to_string(h) + "x" +
                     std::to_string(w) + " but the model expects " +
                     std::to_string(cfg_.input_h) + "x" +
                     std::to_string(cfg_.input_w));

  FeaturePyramid pa = branch_a_->forward(select_input(batch, cfg_.input_a),
                                         probe);
  FeaturePyramid pb = branch_b_->forward(select_input(batch, cfg_.input_b),
                                         probe);
  FeaturePyramid fused = fuse(pa, pb);

  Tensor d = fused[3];
  for (int i = 0; i < 3; ++i) {
    d = decode_[i]->forward(d);
    const Shape& target = fused[2 - i].shape();
    d = bilinear_upsample(d, target[2], target[3]);
    d = add(d, skip_[i]->forward(fused[2 - i]));
  }
  d = bilinear_upsample(d, h, w);
  Tensor out = head_->forward(d);
  out = cfg_.linear_output ? clamp(out, 0.0, cfg_.max_depth)
                           : mul_scalar(sigmoid(out), cfg_.max_depth);

  DepthPrediction pred;
  pred.depth = out;
  if (cfg_.composite_raw) {
    Tensor keep;
    {
      NoGradGuard ng;
      keep = Tensor::zeros(out.shape());
      const auto& raw = batch.raw_depth.values();
      const auto& mask = batch.mask.values();
      for (size_t i = 0; i < keep.values().size(); ++i)
        keep.values()[i] = (raw[i] > 0.0 && mask[i] == 0.0) ? 1.0 : 0.0;
    }
    pred.composited = add(mul(keep, batch.raw_depth),
                          mul(add_scalar(neg(keep), 1.0), out));
  }
  return pred;
}

int64_t count_params(const ModelConfig& cfg) {
  Rng rng(0);
  TdcNet net(cfg, rng);
  return net.num_params();
}

}  // namespace tdc
