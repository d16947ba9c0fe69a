#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tdcnet/common.hpp"
#include "tdcnet/harness.hpp"
#include "tdcnet/metrics.hpp"
#include "tdcnet/serialize.hpp"

namespace fs = std::filesystem;
using namespace tdc;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<int, int> parse_size(const std::string& s) {
  int h = 0, w = 0;
  char x = 0;
  std::istringstream is(s);
  if (!(is >> h >> x >> w) || (x != 'x' && x != 'X') || h <= 0 || w <= 0 ||
      !is.eof())
    throw ConfigError("size must look like 240x320, got '" + s + "'");
  return {h, w};
}

// The hash naming the weights that produced a report.
std::string checkpoint_hash(const std::string& ckpt_dir) {
  nlohmann::json meta =
      nlohmann::json::parse(read_text((fs::path(ckpt_dir) / "model.json").string()));
  return meta.value("weights_hash", "");
}

struct MakeToyArgs {
  std::string out;
  int n = 8;
  uint64_t seed = 0;
  std::string size = "64x64";
  std::string split = "train";
  std::string corruption = "zero";
};

int run_make_toy(const MakeToyArgs& a) {
  auto [h, w] = parse_size(a.size);
  std::string split_dir = (fs::path(a.out) / a.split).string();
  std::vector<std::string> ids;
  for (int i = 0; i < a.n; ++i) {
    ToySceneConfig tc;
    tc.height = h;
    tc.width = w;
    tc.seed = a.seed + static_cast<uint64_t>(i);
    tc.corruption = a.corruption;
    RgbdSample s = generate_toy_scene(tc);
    write_sample(split_dir, s);
    ids.push_back(s.id);
  }
  write_manifest(split_dir, ids);
  std::cout << "wrote " << a.n << " samples (" << h << "x" << w << ") to "
            << split_dir << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string resume;
  // overrides; only applied when set on the command line
  std::optional<std::string> data_dir, out_dir, train_split, fusion, norm;
  std::optional<int> epochs, batch_size, val_every, c, window;
  std::optional<double> lr, alpha, clip_norm, max_depth;
  std::optional<uint64_t> seed;
  std::optional<std::string> size;
  std::vector<std::string> aug;
};

int run_train(const TrainArgs& a) {
  std::string text;
  try {
    text = read_text(a.config_path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  TrainConfig cfg = train_config_from_json(text);
  if (a.data_dir) cfg.data_dir = *a.data_dir;
  if (a.out_dir) cfg.out_dir = *a.out_dir;
  if (a.train_split) cfg.train_split = *a.train_split;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.val_every) cfg.val_every = *a.val_every;
  if (a.lr) cfg.lr = *a.lr;
  if (a.alpha) cfg.alpha = *a.alpha;
  if (a.clip_norm) cfg.clip_norm = *a.clip_norm;
  if (a.seed) cfg.seed = *a.seed;
  if (!a.aug.empty()) cfg.aug = a.aug;
  if (a.c) cfg.model.c = *a.c;
  if (a.window) cfg.model.window = *a.window;
  if (a.fusion) cfg.model.fusion = *a.fusion;
  if (a.norm) cfg.model.norm = *a.norm;
  if (a.max_depth) cfg.model.max_depth = *a.max_depth;
  if (a.size) {
    auto [h, w] = parse_size(*a.size);
    cfg.model.input_h = h;
    cfg.model.input_w = w;
  }

  TrainResult res = train(cfg, a.resume, [](const EpochRecord& r) {
    std::cout << epoch_record_json(r) << "\n" << std::flush;
  });
  std::cout << "checkpoints: last=" << res.last_dir;
  if (!res.best_dir.empty()) std::cout << " best=" << res.best_dir;
  std::cout << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "test";
  std::string error_maps;
  std::string report_path;
  bool per_image = false;
};

int run_eval(const EvalArgs& a) {
  MetricsReport r = evaluate(a.ckpt, a.data, a.split, a.error_maps,
                             a.per_image);
  std::string text = metrics_report_json(
      r, a.per_image ? "per_image" : "pooled", checkpoint_hash(a.ckpt));
  std::cout << text << "\n";
  if (!a.report_path.empty()) {
    std::ofstream out(a.report_path);
    if (!out) throw DataError("cannot write " + a.report_path);
    out << text << "\n";
  }
  return 0;
}

struct PredictArgs {
  std::string ckpt, sample, out;
};

int run_predict(const PredictArgs& a) {
  predict(a.ckpt, a.sample, a.out);
  std::cout << "wrote " << (fs::path(a.out) / "depth.png").string() << " and "
            << (fs::path(a.out) / "error_map.png").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth completion for transparent objects"};
  app.require_subcommand(1);

  MakeToyArgs mt;
  CLI::App* c_toy = app.add_subcommand("make-toy", "Generate a toy dataset");
  c_toy->add_option("--out", mt.out, "dataset root directory")->required();
  c_toy->add_option("--n", mt.n, "number of samples");
  c_toy->add_option("--seed", mt.seed, "base scene seed");
  c_toy->add_option("--size", mt.size, "sample size as HxW");
  c_toy->add_option("--split", mt.split, "split name to write");
  c_toy->add_option("--corruption", mt.corruption,
                    "raw-depth corruption: zero|background|noisy-background");

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", tr.config_path, "flat json config file")
      ->required();
  c_train->add_option("--resume", tr.resume, "checkpoint dir to resume from");
  c_train->add_option("--data", tr.data_dir, "override data_dir");
  c_train->add_option("--out", tr.out_dir, "override out_dir");
  c_train->add_option("--train-split", tr.train_split, "override train_split");
  c_train->add_option("--epochs", tr.epochs, "override epochs");
  c_train->add_option("--batch-size", tr.batch_size, "override batch_size");
  c_train->add_option("--val-every", tr.val_every, "override val_every");
  c_train->add_option("--lr", tr.lr, "override lr");
  c_train->add_option("--alpha", tr.alpha, "override alpha");
  c_train->add_option("--clip-norm", tr.clip_norm, "override clip_norm");
  c_train->add_option("--seed", tr.seed, "override seed");
  c_train->add_option("--aug", tr.aug, "override augmentation flags");
  c_train->add_option("--c", tr.c, "override base channel count");
  c_train->add_option("--window", tr.window, "override attention window");
  c_train->add_option("--fusion", tr.fusion, "override fusion kind");
  c_train->add_option("--norm", tr.norm, "override norm kind");
  c_train->add_option("--max-depth", tr.max_depth, "override max_depth");
  c_train->add_option("--size", tr.size, "override input size as HxW");

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("--ckpt", ev.ckpt, "checkpoint directory")->required();
  c_eval->add_option("--data", ev.data, "dataset root directory")->required();
  c_eval->add_option("--split", ev.split, "split name");
  c_eval->add_option("--error-maps", ev.error_maps,
                     "directory for per-sample error maps");
  c_eval->add_option("--report", ev.report_path, "also write the json here");
  c_eval->add_flag("--per-image", ev.per_image,
                   "average per-sample metrics instead of pooling pixels");

  PredictArgs pr;
  CLI::App* c_pred = app.add_subcommand("predict", "Run single-sample inference");
  c_pred->add_option("--ckpt", pr.ckpt, "checkpoint directory")->required();
  c_pred->add_option("--sample", pr.sample, "sample directory (<split>/<id>)")
      ->required();
  c_pred->add_option("--out", pr.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_toy->parsed()) return run_make_toy(mt);
    if (c_train->parsed()) return run_train(tr);
    if (c_eval->parsed()) return run_eval(ev);
    if (c_pred->parsed()) return run_predict(pr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {  // DataError, EmptyRegionError
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
