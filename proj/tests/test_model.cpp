#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "tdcnet/common.hpp"
#include "tdcnet/model.hpp"
#include "tdcnet/ops.hpp"

using namespace tdc;
using tdc::testing::rand_tensor;

namespace {

Batch toy_batch(int b, int h, int w, uint64_t seed) {
  ToySceneConfig cfg;
  cfg.height = h;
  cfg.width = w;
  std::vector<RgbdSample> samples;
  for (int i = 0; i < b; ++i) {
    cfg.seed = seed + static_cast<uint64_t>(i);
    samples.push_back(generate_toy_scene(cfg));
  }
  return make_batch(samples, 10.0);
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.c = 4;
  cfg.input_h = 64;
  cfg.input_w = 64;
  cfg.depths = {1, 1, 1, 1};
  return cfg;
}

bool in_range(const Tensor& t, double lo, double hi) {
  for (double v : t.values())
    if (!std::isfinite(v) || v < lo || v > hi) return false;
  return true;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects bad fields") {
  auto bad = [](auto mut) {
    ModelConfig cfg;
    cfg.c = 4;
    cfg.input_h = cfg.input_w = 64;
    mut(cfg);
    CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  };
  bad([](ModelConfig& c) { c.input_h = 60; });
  bad([](ModelConfig& c) { c.c = 0; });
  bad([](ModelConfig& c) { c.branch_a = "mlp"; });
  bad([](ModelConfig& c) { c.input_b = "sonar"; });
  bad([](ModelConfig& c) { c.fusion = "attention"; });
  bad([](ModelConfig& c) { c.norm = "instance"; });
  bad([](ModelConfig& c) { c.max_depth = 0.0; });
  bad([](ModelConfig& c) { c.reduction = 3; });  // 2C=8 not divisible
  bad([](ModelConfig& c) { c.heads = {3, 2, 4, 8}; });
  bad([](ModelConfig& c) { c.depths = {0, 2, 2, 2}; });
  bad([](ModelConfig& c) { c.window = 5; });  // 64/16=4 not tiled by 5

  ModelConfig ok;
  ok.c = 4;
  ok.input_h = ok.input_w = 64;
  CHECK_NOTHROW(validate_config(ok));
}

TEST_CASE("window resolution picks the largest tiling divisor") {
  ModelConfig cfg;
  cfg.input_h = 240;
  cfg.input_w = 320;
  CHECK(resolve_window(cfg) == 5);
  cfg.input_h = cfg.input_w = 64;
  CHECK(resolve_window(cfg) == 4);
  cfg.input_h = cfg.input_w = 96;
  CHECK(resolve_window(cfg) == 6);
  cfg.window = 2;
  CHECK(resolve_window(cfg) == 2);
  cfg.window = 4;  // 96/16=6 not tiled by 4
  CHECK_THROWS_AS(resolve_window(cfg), ConfigError);
}

TEST_CASE("forward keeps full resolution and bounded output") {
  Rng rng(3);
  ModelConfig cfg = tiny_config();
  TdcNet net(cfg, rng);
  net.set_training(false);

  Batch batch = toy_batch(2, 64, 64, 100);
  DepthPrediction pred = net.forward(batch);
  CHECK(pred.depth.shape() == Shape({2, 1, 64, 64}));
  CHECK(in_range(pred.depth, 0.0, cfg.max_depth));
  CHECK_FALSE(pred.composited.defined());

  // Degenerate inputs stay finite and bounded.
  Batch zeros;
  zeros.rgbd = Tensor::zeros({1, 4, 64, 64});
  zeros.raw_depth = Tensor::zeros({1, 1, 64, 64});
  zeros.gt_depth = Tensor::zeros({1, 1, 64, 64});
  zeros.mask = Tensor::zeros({1, 1, 64, 64});
  zeros.valid = Tensor::full({1, 1, 64, 64}, 1.0);
  CHECK(in_range(net.forward(zeros).depth, 0.0, cfg.max_depth));

  Batch constant = zeros;
  constant.rgbd = Tensor::full({1, 4, 64, 64}, 0.5);
  CHECK(in_range(net.forward(constant).depth, 0.0, cfg.max_depth));

  Batch wrong = toy_batch(1, 32, 32, 7);
  CHECK_THROWS_AS(net.forward(wrong), ShapeError);
}

TEST_CASE("paper-scale geometry runs at reduced width") {
  Rng rng(5);
  ModelConfig cfg;
  cfg.c = 4;
  cfg.input_h = 240;
  cfg.input_w = 320;
  cfg.depths = {1, 1, 1, 1};
  TdcNet net(cfg, rng);
  net.set_training(false);
  Batch batch = toy_batch(1, 240, 320, 40);
  CHECK(net.forward(batch).depth.shape() == Shape({1, 1, 240, 320}));
}

TEST_CASE("ablation matrix constructs and runs forward") {
  Batch batch = toy_batch(1, 64, 64, 200);
  for (const char* a : {"cnn", "swin"}) {
    for (const char* b : {"cnn", "swin"}) {
      Rng rng(11);
      ModelConfig cfg = tiny_config();
      cfg.branch_a = a;
      cfg.branch_b = b;
      TdcNet net(cfg, rng);
      net.set_training(false);
      CAPTURE(a);
      CAPTURE(b);
      CHECK(net.forward(batch).depth.shape() == Shape({1, 1, 64, 64}));
    }
  }
  for (const char* f : {"mffm", "ffm_stub", "none"}) {
    Rng rng(13);
    ModelConfig cfg = tiny_config();
    cfg.fusion = f;
    TdcNet net(cfg, rng);
    net.set_training(false);
    CAPTURE(f);
    CHECK(net.forward(batch).depth.shape() == Shape({1, 1, 64, 64}));
  }
}

TEST_CASE("attention probe sees every transformer block") {
  Rng rng(17);
  ModelConfig cfg = tiny_config();
  cfg.depths = {2, 2, 2, 2};
  TdcNet net(cfg, rng);
  net.set_training(false);
  AttnProbe probe;
  net.forward(toy_batch(1, 64, 64, 300), &probe);
  CHECK(probe.attention.size() == 8);  // branch_b only
}

TEST_CASE("composited output trusts raw depth off the mask") {
  Rng rng(19);
  ModelConfig cfg = tiny_config();
  cfg.composite_raw = true;
  TdcNet net(cfg, rng);
  net.set_training(false);

  Batch batch = toy_batch(1, 64, 64, 400);
  DepthPrediction pred = net.forward(batch);
  REQUIRE(pred.composited.defined());
  const auto& raw = batch.raw_depth.values();
  const auto& mask = batch.mask.values();
  for (size_t i = 0; i < raw.size(); ++i) {
    double want = (raw[i] > 0.0 && mask[i] == 0.0) ? raw[i]
                                                   : pred.depth.values()[i];
    CHECK(pred.composited.values()[i] == want);
  }

  // All-valid raw depth and empty mask: composited equals the raw map.
  Batch clean = batch;
  clean.raw_depth = clean.gt_depth;
  clean.mask = Tensor::zeros(batch.mask.shape());
  Tensor rgbd = clean.rgbd.detach_copy();
  // keep channel 3 consistent with the replaced raw depth
  int64_t hw = 64 * 64;
  for (int64_t i = 0; i < hw; ++i)
    rgbd.values()[3 * hw + i] = clean.raw_depth.values()[i] / 10.0;
  clean.rgbd = rgbd;
  DepthPrediction clean_pred = net.forward(clean);
  for (size_t i = 0; i < raw.size(); ++i)
    CHECK(clean_pred.composited.values()[i] == clean.raw_depth.values()[i]);
}

TEST_CASE("linear output mode clamps to the depth range") {
  Rng rng(23);
  ModelConfig cfg = tiny_config();
  cfg.linear_output = true;
  TdcNet net(cfg, rng);
  net.set_training(false);
  Tensor out = net.forward(toy_batch(1, 64, 64, 500)).depth;
  CHECK(in_range(out, 0.0, cfg.max_depth));
}

TEST_CASE("parameter count is reproducible, monotone, and variant-ordered") {
  ModelConfig small = tiny_config();
  ModelConfig big = tiny_config();
  big.c = 8;
  CHECK(count_params(small) == count_params(small));
  CHECK(count_params(big) > count_params(small));

  ModelConfig none = tiny_config();
  none.fusion = "none";
  ModelConfig stub = tiny_config();
  stub.fusion = "ffm_stub";
  CHECK(count_params(none) < count_params(small));
  CHECK(count_params(stub) == count_params(none));  // stub adds no weights
}

TEST_CASE("masked depth loss reaches every parameter") {
  Rng rng(29);
  ModelConfig cfg = tiny_config();
  TdcNet net(cfg, rng);
  net.set_training(true);

  Batch batch = toy_batch(1, 64, 64, 600);
  DepthPrediction pred = net.forward(batch);
  Tensor err = sub(pred.depth, batch.gt_depth);
  Tensor loss = mean_all(mul(mul(err, err), batch.mask));
  loss.backward();

  for (const auto& [name, t] : net.named_parameters()) {
    double peak = 0.0;
    Tensor g = t.grad();
    for (double v : g.values()) peak = std::max(peak, std::abs(v));
    INFO("parameter ", name);
    CHECK(peak > 0.0);
  }
}

}  // TEST_SUITE
