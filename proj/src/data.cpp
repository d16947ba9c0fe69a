#include "tdcnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tdcnet/common.hpp"
#include "tdcnet/image.hpp"

namespace fs = std::filesystem;

namespace tdc {

namespace {

void check_same_size(const RgbdSample& s) {
  Shape hw = {s.rgb.size(1), s.rgb.size(2)};
  for (const Tensor* t : {&s.raw_depth, &s.gt_depth, &s.mask, &s.valid}) {
    if (t->dim() != 3 || t->size(0) != 1 || t->size(1) != hw[0] ||
        t->size(2) != hw[1])
      throw DataError("sample '" + s.id + "' has mismatched map resolutions");
  }
}

Tensor flip_w(const Tensor& t) {
  int c = t.size(0), h = t.size(1), w = t.size(2);
  Tensor out = Tensor::empty(t.shape());
  const double* p = t.data();
  double* o = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        o[(static_cast<int64_t>(ch) * h + i) * w + j] =
            p[(static_cast<int64_t>(ch) * h + i) * w + (w - 1 - j)];
  return out;
}

Tensor flip_h(const Tensor& t) {
  int c = t.size(0), h = t.size(1), w = t.size(2);
  Tensor out = Tensor::empty(t.shape());
  const double* p = t.data();
  double* o = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      std::copy_n(p + (static_cast<int64_t>(ch) * h + (h - 1 - i)) * w, w,
                  o + (static_cast<int64_t>(ch) * h + i) * w);
  return out;
}

// One clockwise quarter turn: (C, H, W) -> (C, W, H).
Tensor rot90_cw(const Tensor& t) {
  int c = t.size(0), h = t.size(1), w = t.size(2);
  Tensor out = Tensor::empty({c, w, h});
  const double* p = t.data();
  double* o = out.data();
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < w; ++i)
      for (int j = 0; j < h; ++j)
        o[(static_cast<int64_t>(ch) * w + i) * h + j] =
            p[(static_cast<int64_t>(ch) * h + (h - 1 - j)) * w + i];
  return out;
}

// Nearest-neighbor rotation about the image center; unmapped pixels get
// `fill`. NN keeps depth and mask values unfabricated.
Tensor rotate_small_nn(const Tensor& t, double angle_deg, double fill) {
  int c = t.size(0), h = t.size(1), w = t.size(2);
  double th = angle_deg * M_PI / 180.0;
  double cs = std::cos(th), sn = std::sin(th);
  double ci = (h - 1) / 2.0, cj = (w - 1) / 2.0;
  Tensor out = Tensor::full(t.shape(), fill);
  const double* p = t.data();
  double* o = out.data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double di = i - ci, dj = j - cj;
      int si = static_cast<int>(std::lround(ci + di * cs + dj * sn));
      int sj = static_cast<int>(std::lround(cj - di * sn + dj * cs));
      if (si < 0 || si >= h || sj < 0 || sj >= w) continue;
      for (int ch = 0; ch < c; ++ch)
        o[(static_cast<int64_t>(ch) * h + i) * w + j] =
            p[(static_cast<int64_t>(ch) * h + si) * w + sj];
    }
  return out;
}

void apply_geometric(RgbdSample& s, const std::function<Tensor(const Tensor&)>& f) {
  s.rgb = f(s.rgb);
  s.raw_depth = f(s.raw_depth);
  s.gt_depth = f(s.gt_depth);
  s.mask = f(s.mask);
  s.valid = f(s.valid);
}

}  // namespace

AugFlags parse_aug_flags(const std::vector<std::string>& names) {
  AugFlags f;
  for (const std::string& n : names) {
    if (n == "hflip") f.hflip = true;
    else if (n == "vflip") f.vflip = true;
    else if (n == "rot90") f.rot90 = true;
    else if (n == "rot_small") f.rot_small = true;
    else if (n == "depth_noise") f.depth_noise = true;
    else if (n == "rgb_noise") f.rgb_noise = true;
    else throw ConfigError("unknown augmentation flag: " + n);
  }
  return f;
}

RgbdSample load_sample(const std::string& split_dir, const std::string& id,
                       const LoadOptions& opts) {
  fs::path dir = fs::path(split_dir) / id;
  if (!fs::is_directory(dir))
    throw DataError("sample directory not found: " + dir.string());
  RgbdSample s;
  s.id = id;
  s.rgb = load_png_rgb((dir / "rgb.png").string());
  s.raw_depth = load_png_depth((dir / "depth_raw.png").string());
  s.gt_depth = load_png_depth((dir / "depth_gt.png").string());
  s.mask = load_png_mask((dir / "mask.png").string());
  if (fs::exists(dir / "valid.png")) {
    s.valid = load_png_mask((dir / "valid.png").string());
  } else {
    s.valid = Tensor::full(s.mask.shape(), 1.0);
  }
  check_same_size(s);

  if (opts.target_height > 0 && opts.target_width > 0 &&
      (opts.target_height != s.height() || opts.target_width != s.width())) {
    int th = opts.target_height, tw = opts.target_width;
    s.rgb = resize_bilinear(s.rgb, th, tw);
    s.raw_depth = resize_nearest(s.raw_depth, th, tw);
    s.gt_depth = resize_nearest(s.gt_depth, th, tw);
    s.mask = resize_nearest(s.mask, th, tw);
    s.valid = resize_nearest(s.valid, th, tw);
  }

  for (Tensor* d : {&s.raw_depth, &s.gt_depth})
    for (auto& v : d->values())
      if (v < 0.0 || v > opts.max_depth) v = 0.0;
  return s;
}

void write_sample(const std::string& split_dir, const RgbdSample& sample) {
  check_same_size(sample);
  fs::path dir = fs::path(split_dir) / sample.id;
  fs::create_directories(dir);
  save_png_rgb((dir / "rgb.png").string(), sample.rgb);
  save_png_depth((dir / "depth_raw.png").string(), sample.raw_depth);
  save_png_depth((dir / "depth_gt.png").string(), sample.gt_depth);
  save_png_mask((dir / "mask.png").string(), sample.mask);
  save_png_mask((dir / "valid.png").string(), sample.valid);
}

std::vector<std::string> read_manifest(const std::string& split_dir) {
  fs::path p = fs::path(split_dir) / "manifest.txt";
  std::ifstream in(p);
  if (!in) throw DataError("manifest not found: " + p.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.empty()) throw DataError("manifest is empty: " + p.string());
  return ids;
}

void write_manifest(const std::string& split_dir,
                    const std::vector<std::string>& ids) {
  fs::create_directories(split_dir);
  std::ofstream out(fs::path(split_dir) / "manifest.txt");
  for (const auto& id : ids) out << id << "\n";
}

RgbdSample generate_toy_scene(const ToySceneConfig& cfg) {
  if (cfg.height % 16 != 0 || cfg.width % 16 != 0)
    throw ConfigError("toy scene size must be divisible by 16, got " +
                      std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  if (cfg.depth_near <= 0.0 || cfg.depth_far <= cfg.depth_near)
    throw ConfigError("toy scene needs 0 < near < far");
  if (cfg.n_objects < 1) throw ConfigError("toy scene needs n_objects >= 1");
  if (cfg.corruption != "zero" && cfg.corruption != "background" &&
      cfg.corruption != "noisy-background")
    throw ConfigError("unknown corruption mode: " + cfg.corruption);

  int h = cfg.height, w = cfg.width;
  double near = cfg.depth_near, span = cfg.depth_far - cfg.depth_near;
  Rng rng(cfg.seed);

  RgbdSample s;
  s.id = "toy-" + std::to_string(cfg.seed);
  s.rgb = Tensor::zeros({3, h, w});
  s.gt_depth = Tensor::zeros({1, h, w});
  s.mask = Tensor::zeros({1, h, w});
  s.valid = Tensor::full({1, h, w}, 1.0);

  // Sloped background plane, kept in the upper part of the depth range.
  double base = rng.uniform(0.70, 0.85);
  double slope_x = rng.uniform(-0.08, 0.08);
  double slope_y = rng.uniform(-0.08, 0.08);
  double bg_albedo[3] = {rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9),
                         rng.uniform(0.2, 0.9)};
  Tensor background = Tensor::zeros({1, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double frac = base + slope_x * (static_cast<double>(j) / (w - 1) - 0.5) +
                    slope_y * (static_cast<double>(i) / (h - 1) - 0.5);
      frac = std::min(std::max(frac, 0.60), 0.95);
      background.data()[i * static_cast<int64_t>(w) + j] = near + span * frac;
    }
  std::copy_n(background.data(), static_cast<int64_t>(h) * w, s.gt_depth.data());
  for (int ch = 0; ch < 3; ++ch)
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
      s.rgb.data()[ch * h * w + i] = bg_albedo[ch];

  // Objects carry a depth test, so draw order does not matter. The last
  // object is the transparent one and is strictly nearest, which keeps its
  // mask exact.
  for (int k = 0; k < cfg.n_objects; ++k) {
    bool transparent = (k == cfg.n_objects - 1);
    bool ellipse = rng.bernoulli(0.5);
    double cy = rng.uniform(0.28, 0.72) * h;
    double cx = rng.uniform(0.28, 0.72) * w;
    double ry = std::max(2.0, rng.uniform(0.08, 0.20) * h);
    double rx = std::max(2.0, rng.uniform(0.08, 0.20) * w);
    double frac = transparent ? rng.uniform(0.04, 0.12) : rng.uniform(0.16, 0.55);
    double depth = near + span * frac;
    double albedo[3] = {rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9),
                        rng.uniform(0.2, 0.9)};
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double dy = (i - cy) / ry, dx = (j - cx) / rx;
        bool inside = ellipse ? (dy * dy + dx * dx <= 1.0)
                              : (std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0);
        if (!inside) continue;
        int64_t p = i * static_cast<int64_t>(w) + j;
        if (depth >= s.gt_depth.data()[p]) continue;
        s.gt_depth.data()[p] = depth;
        s.mask.data()[p] = transparent ? 1.0 : 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          double& px = s.rgb.data()[ch * h * w + p];
          px = transparent ? 0.45 * albedo[ch] + 0.55 * px : albedo[ch];
        }
      }
  }

  s.raw_depth = s.gt_depth.detach_copy();
  for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p) {
    if (s.mask.data()[p] <= 0.5) continue;
    if (cfg.corruption == "zero") {
      s.raw_depth.data()[p] = 0.0;
    } else if (cfg.corruption == "background") {
      s.raw_depth.data()[p] = background.data()[p];
    } else {
      s.raw_depth.data()[p] =
          std::max(0.0, background.data()[p] + rng.normal(0.0, 0.02));
    }
  }
  return s;
}

RgbdSample augment(const RgbdSample& sample, uint64_t seed,
                   const AugFlags& flags) {
  NoGradGuard ng;
  Rng rng(seed);
  // Tensor handles share storage, so copy up front; the noise paths below
  // mutate in place.
  RgbdSample s;
  s.id = sample.id;
  s.rgb = sample.rgb.detach_copy();
  s.raw_depth = sample.raw_depth.detach_copy();
  s.gt_depth = sample.gt_depth.detach_copy();
  s.mask = sample.mask.detach_copy();
  s.valid = sample.valid.detach_copy();
  if (flags.hflip && rng.bernoulli(0.5)) apply_geometric(s, flip_w);
  if (flags.vflip && rng.bernoulli(0.5)) apply_geometric(s, flip_h);
  if (flags.rot90) {
    int64_t k = rng.randint(4);
    for (int64_t q = 0; q < k; ++q) apply_geometric(s, rot90_cw);
  }
  if (flags.rot_small) {
    double angle = rng.uniform(-5.0, 5.0);
    apply_geometric(s, [angle](const Tensor& t) {
      return rotate_small_nn(t, angle, 0.0);
    });
  }
  if (flags.depth_noise && flags.depth_sigma > 0.0) {
    for (auto& v : s.raw_depth.values())
      if (v > 0.0) v = std::max(0.0, v + rng.normal(0.0, flags.depth_sigma));
  }
  if (flags.rgb_noise && flags.rgb_sigma > 0.0) {
    for (auto& v : s.rgb.values())
      v = std::min(std::max(v + rng.normal(0.0, flags.rgb_sigma), 0.0), 1.0);
  }
  return s;
}

Batch make_batch(const std::vector<RgbdSample>& samples, double max_depth) {
  if (samples.empty()) throw DataError("make_batch: empty sample list");
  if (max_depth <= 0.0) throw ConfigError("max_depth must be positive");
  int h = samples[0].height(), w = samples[0].width();
  for (const auto& s : samples) {
    check_same_size(s);
    if (s.height() != h || s.width() != w)
      throw DataError("make_batch: samples have heterogeneous sizes");
  }
  if (h % 16 != 0 || w % 16 != 0)
    throw DataError("make_batch: H and W must be divisible by 16, got " +
                    std::to_string(h) + "x" + std::to_string(w));
  int b = static_cast<int>(samples.size());
  int64_t hw = static_cast<int64_t>(h) * w;

  Batch out;
  out.rgbd = Tensor::zeros({b, 4, h, w});
  out.raw_depth = Tensor::zeros({b, 1, h, w});
  out.gt_depth = Tensor::zeros({b, 1, h, w});
  out.mask = Tensor::zeros({b, 1, h, w});
  out.valid = Tensor::zeros({b, 1, h, w});
  for (int n = 0; n < b; ++n) {
    const RgbdSample& s = samples[static_cast<size_t>(n)];
    std::copy_n(s.rgb.data(), 3 * hw, out.rgbd.data() + n * 4 * hw);
    double* dch = out.rgbd.data() + n * 4 * hw + 3 * hw;
    for (int64_t i = 0; i < hw; ++i) dch[i] = s.raw_depth.data()[i] / max_depth;
    std::copy_n(s.raw_depth.data(), hw, out.raw_depth.data() + n * hw);
    std::copy_n(s.gt_depth.data(), hw, out.gt_depth.data() + n * hw);
    std::copy_n(s.mask.data(), hw, out.mask.data() + n * hw);
    std::copy_n(s.valid.data(), hw, out.valid.data() + n * hw);
  }
  return out;
}

}  // namespace tdc
