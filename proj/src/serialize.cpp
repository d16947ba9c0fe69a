#include "tdcnet/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tdcnet/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tdc {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated blob file: " + path);
  return v;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

json parse_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw DataError("bad json in " + path + ": " + e.what());
  }
}

NamedBlobs model_blobs(const TdcNet& model, const AdamW* opt) {
  NamedBlobs blobs;
  for (const auto& [name, t] : model.named_parameters())
    blobs.emplace_back(name, &t.values());
  for (const auto& [name, v] : model.named_buffers())
    blobs.emplace_back("buffer." + name, v);
  if (opt) {
    auto* mut = const_cast<AdamW*>(opt);
    for (const auto& [name, v] : mut->state_buffers())
      blobs.emplace_back("optim." + name, v);
  }
  return blobs;
}

NamedBlobs param_blobs(const TdcNet& model) {
  NamedBlobs blobs;
  for (const auto& [name, t] : model.named_parameters())
    blobs.emplace_back(name, &t.values());
  return blobs;
}

json model_config_to(const ModelConfig& cfg) {
  json j;
  j["c"] = cfg.c;
  j["input_h"] = cfg.input_h;
  j["input_w"] = cfg.input_w;
  j["branch_a"] = cfg.branch_a;
  j["branch_b"] = cfg.branch_b;
  j["input_a"] = cfg.input_a;
  j["input_b"] = cfg.input_b;
  j["fusion"] = cfg.fusion;
  j["composite_raw"] = cfg.composite_raw;
  j["norm"] = cfg.norm;
  j["window"] = cfg.window;
  j["heads"] = cfg.heads;
  j["depths"] = cfg.depths;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["reduction"] = cfg.reduction;
  j["max_depth"] = cfg.max_depth;
  j["linear_output"] = cfg.linear_output;
  return j;
}

}  // namespace

void save_blobs(const std::string& path, const NamedBlobs& blobs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(blobs.size()));
  for (const auto& [name, v] : blobs) {
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint64_t>(v->size()));
    if (!v->empty())
      os.write(reinterpret_cast<const char*>(v->data()),
               static_cast<std::streamsize>(v->size() * sizeof(double)));
  }
  if (!os) throw DataError("short write to " + path);
}

std::map<std::string, std::vector<double>> load_blobs(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a TDCK blob file: " + path);
  uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kVersion)
    throw DataError("unsupported blob version " + std::to_string(version) +
                    " in " + path);
  uint64_t count = read_pod<uint64_t>(is, path);
  std::map<std::string, std::vector<double>> out;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = read_pod<uint32_t>(is, path);
    std::string name(len, '\0');
    is.read(name.data(), len);
    uint64_t n = read_pod<uint64_t>(is, path);
    std::vector<double> v(n);
    if (n > 0)
      is.read(reinterpret_cast<char*>(v.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw DataError("truncated blob file: " + path);
    if (!out.emplace(std::move(name), std::move(v)).second)
      throw DataError("duplicate blob name in " + path);
  }
  return out;
}

std::string fnv1a_hex(const NamedBlobs& blobs) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&h](const char* p, size_t n) {
    for (size_t i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(p[i]);
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, v] : blobs) {
    eat(name.data(), name.size());
    eat(reinterpret_cast<const char*>(v->data()), v->size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string model_config_json(const ModelConfig& cfg) {
  return model_config_to(cfg).dump(2);
}

namespace {

ModelConfig model_config_from(const json& j) {
  ModelConfig cfg;
  try {
    cfg.c = j.at("c").get<int>();
    cfg.input_h = j.at("input_h").get<int>();
    cfg.input_w = j.at("input_w").get<int>();
    cfg.branch_a = j.at("branch_a").get<std::string>();
    cfg.branch_b = j.at("branch_b").get<std::string>();
    cfg.input_a = j.at("input_a").get<std::string>();
    cfg.input_b = j.at("input_b").get<std::string>();
    cfg.fusion = j.at("fusion").get<std::string>();
    cfg.composite_raw = j.at("composite_raw").get<bool>();
    cfg.norm = j.at("norm").get<std::string>();
    cfg.window = j.at("window").get<int>();
    cfg.heads = j.at("heads").get<std::array<int, 4>>();
    cfg.depths = j.at("depths").get<std::array<int, 4>>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
    cfg.reduction = j.at("reduction").get<int>();
    cfg.max_depth = j.at("max_depth").get<double>();
    cfg.linear_output = j.at("linear_output").get<bool>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config json: ") + e.what());
  }
  return cfg;
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return model_config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad model config json: ") + e.what());
  }
}

void save_checkpoint(const std::string& dir, const TdcNet& model,
                     const AdamW* opt, const TrainState* state) {
  fs::create_directories(dir);
  save_blobs((fs::path(dir) / "weights.bin").string(),
             model_blobs(model, opt));

  json meta;
  meta["config"] = model_config_to(model.config());
  meta["param_count"] = model.num_params();
  meta["max_depth"] = model.config().max_depth;
  meta["weights_hash"] = fnv1a_hex(param_blobs(model));
  write_text((fs::path(dir) / "model.json").string(), meta.dump(2));

  if (state) {
    json js;
    js["epoch"] = state->epoch;
    js["step"] = state->step;
    js["best_val_rmse"] = state->best_val_rmse;
    js["alpha"] = state->loss.alpha;
    js["beta"] = state->loss.beta;
    js["threshold"] = state->loss.threshold;
    js["history"] = state->loss.history;
    write_text((fs::path(dir) / "train_state.json").string(), js.dump(2));
  }
}

ModelConfig load_checkpoint_config(const std::string& dir) {
  json meta = parse_json((fs::path(dir) / "model.json").string());
  if (!meta.contains("config"))
    throw DataError("model.json in " + dir + " has no config");
  return model_config_from(meta["config"]);
}

std::unique_ptr<TdcNet> load_checkpoint(const std::string& dir) {
  json meta = parse_json((fs::path(dir) / "model.json").string());
  if (!meta.contains("config"))
    throw DataError("model.json in " + dir + " has no config");
  ModelConfig cfg = model_config_from(meta["config"]);

  Rng rng(0);
  auto model = std::make_unique<TdcNet>(cfg, rng);
  auto blobs = load_blobs((fs::path(dir) / "weights.bin").string());

  auto fill = [&](const std::string& name, std::vector<double>& dst) {
    auto it = blobs.find(name);
    if (it == blobs.end())
      throw DataError("checkpoint " + dir + " missing tensor " + name);
    if (it->second.size() != dst.size())
      throw DataError("checkpoint tensor " + name + " has " +
                      std::to_string(it->second.size()) + " values, expected " +
                      std::to_string(dst.size()));
    dst = it->second;
  };
  for (auto& [name, t] : model->named_parameters()) fill(name, t.values());
  for (auto& [name, v] : model->named_buffers()) fill("buffer." + name, *v);

  std::string want = meta.value("weights_hash", "");
  std::string got = fnv1a_hex(param_blobs(*model));
  if (want != got)
    throw DataError("checkpoint " + dir + " hash mismatch: model.json says " +
                    want + ", weights.bin gives " + got);
  return model;
}

void load_train_state(const std::string& dir, AdamW& opt, TrainState& state) {
  auto blobs = load_blobs((fs::path(dir) / "weights.bin").string());
  for (auto& [name, v] : opt.state_buffers()) {
    auto it = blobs.find("optim." + name);
    if (it == blobs.end())
      throw DataError("checkpoint " + dir + " has no optimizer state for " +
                      name);
    if (it->second.size() != v->size())
      throw DataError("optimizer state size mismatch for " + name);
    *v = it->second;
  }

  json js = parse_json((fs::path(dir) / "train_state.json").string());
  try {
    state.epoch = js.at("epoch").get<int>();
    state.step = js.at("step").get<int64_t>();
    state.best_val_rmse = js.at("best_val_rmse").get<double>();
    state.loss.alpha = js.at("alpha").get<double>();
    state.loss.beta = js.at("beta").get<double>();
    state.loss.threshold = js.at("threshold").get<double>();
    state.loss.history = js.at("history").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad train_state.json: ") + e.what());
  }
  opt.set_step_count(state.step);
}

}  // namespace tdc
