#include <unistd.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "tdcnet/common.hpp"
#include "tdcnet/harness.hpp"
#include "tdcnet/image.hpp"
#include "tdcnet/objective.hpp"

using namespace tdc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tdcnet_harness_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::string str() const { return path.string(); }
};

std::vector<std::string> write_toy_split(const std::string& data_dir,
                                         const std::string& split, int n,
                                         uint64_t seed0) {
  std::string split_dir = (fs::path(data_dir) / split).string();
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    ToySceneConfig tc;
    tc.seed = seed0 + static_cast<uint64_t>(i);
    RgbdSample s = generate_toy_scene(tc);
    write_sample(split_dir, s);
    ids.push_back(s.id);
  }
  write_manifest(split_dir, ids);
  return ids;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.c = 4;
  cfg.input_h = 64;
  cfg.input_w = 64;
  cfg.depths = {1, 1, 1, 1};
  return cfg;
}

TrainConfig small_cfg(const std::string& data_dir, const std::string& out_dir) {
  TrainConfig cfg;
  cfg.data_dir = data_dir;
  cfg.out_dir = out_dir;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 7;
  cfg.model = tiny_model();
  return cfg;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("lr schedule follows the step decay") {
  TrainConfig cfg;
  CHECK(scheduled_lr(cfg, 0) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(cfg, 14) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(cfg, 15) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(cfg, 29) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(cfg, 30) == doctest::Approx(1e-5));
  CHECK(scheduled_lr(cfg, 39) == doctest::Approx(1e-5));

  cfg.lr = 0.5;
  cfg.lr_decay_factor = 0.5;
  cfg.lr_decay_every = 2;
  CHECK(scheduled_lr(cfg, 3) == doctest::Approx(0.25));
  CHECK(scheduled_lr(cfg, 4) == doctest::Approx(0.125));
}

TEST_CASE("validation split is stable and roughly proportional") {
  int in_val = 0;
  for (int i = 0; i < 400; ++i) {
    std::string id = "sample-" + std::to_string(i);
    bool v = is_val_id(id, 9, 0.1);
    CHECK(v == is_val_id(id, 9, 0.1));
    if (v) ++in_val;
    CHECK_FALSE(is_val_id(id, 9, 0.0));
  }
  CHECK(in_val > 15);
  CHECK(in_val < 70);

  // seed moves the split
  int moved = 0;
  for (int i = 0; i < 400; ++i) {
    std::string id = "sample-" + std::to_string(i);
    if (is_val_id(id, 9, 0.1) != is_val_id(id, 10, 0.1)) ++moved;
  }
  CHECK(moved > 0);
}

TEST_CASE("epoch records round trip through jsonl") {
  EpochRecord r;
  r.epoch = 4;
  r.depth_loss = 0.125;
  r.smooth_loss = 0.0625;
  r.total_loss = 0.13125;
  r.beta = 0.01;
  r.lr = 1e-4;
  r.wall_seconds = 2.5;
  r.has_val = true;
  r.val.rmse = 0.05;
  r.val.rel = 0.04;
  r.val.mae = 0.03;
  r.val.delta_105 = 90.0;
  r.val.delta_110 = 95.0;
  r.val.delta_125 = 99.0;
  r.val.n_pixels = 1234;
  r.val.n_samples = 4;

  EpochRecord back = epoch_record_from_json(epoch_record_json(r));
  CHECK(back.epoch == 4);
  CHECK(back.depth_loss == r.depth_loss);
  CHECK(back.beta == r.beta);
  CHECK(back.has_val);
  CHECK(back.val.rmse == r.val.rmse);
  CHECK(back.val.n_pixels == 1234);

  EpochRecord noval;
  noval.epoch = 1;
  CHECK_FALSE(epoch_record_from_json(epoch_record_json(noval)).has_val);
  CHECK_THROWS_AS(epoch_record_from_json("{\"epoch\": 1}"), DataError);

  TempDir tmp;
  std::string path = (tmp.path / "log.jsonl").string();
  {
    std::ofstream out(path);
    out << epoch_record_json(noval) << "\n" << epoch_record_json(r) << "\n";
  }
  RunLog log = read_run_log(path);
  REQUIRE(log.size() == 2);
  CHECK(log[0].epoch == 1);
  CHECK(log[1].val.n_samples == 4);
}

TEST_CASE("run log comparison ignores wall time only") {
  EpochRecord a;
  a.epoch = 1;
  a.depth_loss = 0.5;
  EpochRecord b = a;
  b.wall_seconds = 99.0;
  CHECK(run_logs_equal({a}, {b}));
  b.beta = 0.123;
  CHECK_FALSE(run_logs_equal({a}, {b}));
  CHECK_FALSE(run_logs_equal({a}, {a, a}));
  b = a;
  b.depth_loss = 0.5 + 1e-7;
  CHECK_FALSE(run_logs_equal({a}, {b}));
  CHECK(run_logs_equal({a}, {b}, 1e-6));
}

TEST_CASE("train config validation") {
  TrainConfig ok;
  ok.data_dir = "d";
  ok.model = tiny_model();
  validate_train_config(ok);

  auto expect_bad = [](TrainConfig cfg) {
    CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  };
  TrainConfig cfg = ok;
  cfg.data_dir = "";
  expect_bad(cfg);
  cfg = ok;
  cfg.out_dir = "";
  expect_bad(cfg);
  cfg = ok;
  cfg.epochs = 0;
  expect_bad(cfg);
  cfg = ok;
  cfg.batch_size = 0;
  expect_bad(cfg);
  cfg = ok;
  cfg.lr = 0.0;
  expect_bad(cfg);
  cfg = ok;
  cfg.lr_decay_factor = 0.0;
  expect_bad(cfg);
  cfg = ok;
  cfg.lr_decay_every = 0;
  expect_bad(cfg);
  cfg = ok;
  cfg.alpha = -0.1;
  expect_bad(cfg);
  cfg = ok;
  cfg.weight_decay = -1.0;
  expect_bad(cfg);
  cfg = ok;
  cfg.clip_norm = -1.0;
  expect_bad(cfg);
  cfg = ok;
  cfg.val_fraction = 1.0;
  expect_bad(cfg);
  cfg = ok;
  cfg.val_every = 0;
  expect_bad(cfg);
  cfg = ok;
  cfg.aug = {"hflipp"};
  expect_bad(cfg);
  cfg = ok;
  cfg.model.c = 0;
  expect_bad(cfg);
}

TEST_CASE("flat train config json round trips and rejects unknown keys") {
  TrainConfig cfg;
  cfg.data_dir = "data";
  cfg.out_dir = "out";
  cfg.epochs = 7;
  cfg.batch_size = 3;
  cfg.lr = 5e-4;
  cfg.seed = 42;
  cfg.aug = {"hflip", "depth_noise"};
  cfg.model.c = 8;
  cfg.model.input_h = 96;
  cfg.model.input_w = 160;
  cfg.model.fusion = "none";
  cfg.model.heads = {2, 2, 2, 2};
  cfg.model.max_depth = 4.0;

  TrainConfig back = train_config_from_json(train_config_json(cfg));
  CHECK(train_config_json(back) == train_config_json(cfg));
  CHECK(back.epochs == 7);
  CHECK(back.aug == std::vector<std::string>({"hflip", "depth_noise"}));
  CHECK(back.model.heads == std::array<int, 4>({2, 2, 2, 2}));
  CHECK(back.model.input_w == 160);

  // omitted keys keep their defaults
  TrainConfig sparse = train_config_from_json("{\"epochs\": 3}");
  CHECK(sparse.epochs == 3);
  CHECK(sparse.batch_size == 16);
  CHECK(sparse.lr == doctest::Approx(1e-3));
  CHECK(sparse.model.c == 24);

  CHECK_THROWS_AS(train_config_from_json("{\"epocs\": 3}"), ConfigError);
  CHECK_THROWS_AS(train_config_from_json("{\"epochs\": \"three\"}"),
                  ConfigError);
  CHECK_THROWS_AS(train_config_from_json("[1,2]"), ConfigError);
  CHECK_THROWS_AS(train_config_from_json("{"), ConfigError);
}

TEST_CASE("two epochs of training write logs and checkpoints") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  write_toy_split(data, "train", 4, 100);
  TrainConfig cfg = small_cfg(data, (tmp.path / "run").string());

  TrainResult res = train(cfg);
  REQUIRE(res.log.size() == 2);
  CHECK(res.log[0].epoch == 1);
  CHECK(res.log[1].epoch == 2);
  CHECK(res.log[0].lr == doctest::Approx(1e-3));
  for (const EpochRecord& r : res.log) {
    CHECK(std::isfinite(r.depth_loss));
    CHECK(r.depth_loss >= 0.0);
    CHECK(r.smooth_loss >= 0.0);
    CHECK(r.has_val);
    CHECK(r.val.n_samples >= 1);
  }

  // loss decreases across two epochs of heavy overfitting signal is not
  // guaranteed; the weighted sum identity is
  double prev_beta = cfg.alpha;
  for (const EpochRecord& r : res.log) {
    CHECK(r.total_loss ==
          doctest::Approx(r.depth_loss + prev_beta * r.smooth_loss)
              .epsilon(1e-9));
    prev_beta = r.beta;
  }

  // logged beta obeys the schedule applied to the logged smooth means
  LossState st;
  st.alpha = cfg.alpha;
  st.beta = cfg.alpha;
  for (const EpochRecord& r : res.log) {
    st = update_weight(st, r.smooth_loss);
    CHECK(r.beta == doctest::Approx(st.beta));
  }

  // the jsonl on disk carries the same records
  RunLog file_log =
      read_run_log((fs::path(cfg.out_dir) / "runlog.jsonl").string());
  CHECK(run_logs_equal(file_log, res.log));

  CHECK(fs::exists(fs::path(res.last_dir) / "weights.bin"));
  CHECK(fs::exists(fs::path(res.last_dir) / "train_state.json"));
  REQUIRE(res.best_dir != "");
  CHECK(fs::exists(fs::path(res.best_dir) / "weights.bin"));

  // determinism: a second run from scratch reproduces the log exactly
  TrainConfig cfg2 = cfg;
  cfg2.out_dir = (tmp.path / "run2").string();
  TrainResult res2 = train(cfg2);
  CHECK(run_logs_equal(res.log, res2.log));
}

TEST_CASE("resume reproduces the uninterrupted run") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  write_toy_split(data, "train", 3, 300);

  TrainConfig full = small_cfg(data, (tmp.path / "full").string());
  full.batch_size = 3;
  full.epochs = 3;
  TrainResult res_full = train(full);
  REQUIRE(res_full.log.size() == 3);

  TrainConfig part = full;
  part.out_dir = (tmp.path / "part").string();
  part.epochs = 2;
  TrainResult res_part = train(part);
  REQUIRE(res_part.log.size() == 2);

  TrainConfig rest = part;
  rest.epochs = 3;
  TrainResult res_rest = train(rest, res_part.last_dir);
  REQUIRE(res_rest.log.size() == 3);
  CHECK(run_logs_equal(res_full.log, res_rest.log));

  // final parameters agree bit for bit
  auto ma = load_checkpoint(res_full.last_dir);
  auto mb = load_checkpoint(res_rest.last_dir);
  auto pa = ma->named_parameters();
  auto pb = mb->named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second.values() == pb[i].second.values());
  }

  // resuming with a different architecture is rejected
  TrainConfig other = rest;
  other.model.c = 8;
  CHECK_THROWS_AS(train(other, res_part.last_dir), ConfigError);
}

TEST_CASE("evaluate is deterministic and writes error maps") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  std::vector<std::string> ids = write_toy_split(data, "test", 3, 50);

  ModelConfig mc = tiny_model();
  Rng rng(3);
  TdcNet model(mc, rng);
  std::string ckpt = (tmp.path / "ckpt").string();
  save_checkpoint(ckpt, model);

  MetricsReport a = evaluate(ckpt, data, "test");
  MetricsReport b = evaluate(ckpt, data, "test");
  CHECK(a.n_samples == 3);
  CHECK(a.rmse == b.rmse);
  CHECK(a.rel == b.rel);
  CHECK(a.delta_105 == b.delta_105);
  CHECK(a.n_pixels == b.n_pixels);
  CHECK(std::isfinite(a.rmse));
  CHECK(a.rmse > 0.0);

  std::string maps = (tmp.path / "maps").string();
  evaluate(ckpt, data, "test", maps);
  for (const std::string& id : ids)
    CHECK(fs::exists(fs::path(maps) / (id + "_error.png")));
}

TEST_CASE("evaluate rejects size mismatches before compute") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  write_toy_split(data, "test", 1, 60);

  ModelConfig mc = tiny_model();
  mc.input_h = 96;
  mc.input_w = 96;
  Rng rng(4);
  TdcNet model(mc, rng);
  std::string ckpt = (tmp.path / "ckpt").string();
  save_checkpoint(ckpt, model);
  CHECK_THROWS_AS(evaluate(ckpt, data, "test"), ConfigError);
  CHECK_THROWS_AS(evaluate((tmp.path / "absent").string(), data, "test"),
                  DataError);
}

TEST_CASE("predict writes a depth map that round trips within a millimeter") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  std::vector<std::string> ids = write_toy_split(data, "test", 1, 70);

  ModelConfig mc = tiny_model();
  Rng rng(5);
  TdcNet model(mc, rng);
  std::string ckpt = (tmp.path / "ckpt").string();
  save_checkpoint(ckpt, model);

  std::string sample_dir = (fs::path(data) / "test" / ids[0]).string();
  std::string out = (tmp.path / "out").string();
  DepthPrediction pred = predict(ckpt, sample_dir, out);
  CHECK(fs::exists(fs::path(out) / "depth.png"));
  CHECK(fs::exists(fs::path(out) / "error_map.png"));

  Tensor reloaded = load_png_depth((fs::path(out) / "depth.png").string());
  REQUIRE(reloaded.numel() == pred.depth.numel());
  double worst = 0.0;
  for (size_t i = 0; i < reloaded.values().size(); ++i)
    worst = std::max(worst,
                     std::abs(reloaded.values()[i] - pred.depth.values()[i]));
  CHECK(worst <= 5.01e-4);

  CHECK_THROWS_AS(predict((tmp.path / "absent").string(), sample_dir, out),
                  DataError);
  CHECK_THROWS_AS(predict(ckpt, (fs::path(data) / "test" / "no-such").string(),
                          out),
                  DataError);
}

TEST_CASE("training aborts on numerically doomed configs") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  write_toy_split(data, "train", 2, 80);
  TrainConfig cfg = small_cfg(data, (tmp.path / "run").string());
  cfg.epochs = 1;
  cfg.model.max_depth = 1e200;  // squared error overflows to inf
  try {
    train(cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("training requires a supervisable region") {
  TempDir tmp;
  std::string data = (tmp.path / "data").string();
  std::string split_dir = (fs::path(data) / "train").string();
  std::vector<std::string> ids;
  for (int i = 0; i < 2; ++i) {
    ToySceneConfig tc;
    tc.seed = 90 + static_cast<uint64_t>(i);
    RgbdSample s = generate_toy_scene(tc);
    s.mask = Tensor::zeros(s.mask.shape());
    write_sample(split_dir, s);
    ids.push_back(s.id);
  }
  write_manifest(split_dir, ids);

  TrainConfig cfg = small_cfg(data, (tmp.path / "run").string());
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(cfg), DataError);

  // an empty manifest fails before any compute
  TempDir tmp2;
  std::string data2 = (tmp2.path / "data").string();
  fs::create_directories(fs::path(data2) / "train");
  write_manifest((fs::path(data2) / "train").string(), {});
  TrainConfig cfg2 = small_cfg(data2, (tmp2.path / "run").string());
  CHECK_THROWS_AS(train(cfg2), DataError);
}

}  // TEST_SUITE
