#include "tdcnet/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tdcnet/common.hpp"

namespace tdc {

namespace {

cv::Mat imread_checked(const std::string& path, int flags) {
  cv::Mat m = cv::imread(path, flags);
  if (m.empty()) throw DataError("cannot read image: " + path);
  return m;
}

// (C, H, W) tensor -> HxW CV_64FC{C} mat (BGR order for 3 channels, matching
// OpenCV's file I/O convention).
cv::Mat tensor_to_mat(const Tensor& t) {
  int c = t.size(0), h = t.size(1), w = t.size(2);
  cv::Mat m(h, w, CV_64FC(c));
  const double* p = t.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double* px = m.ptr<double>(i) + static_cast<int64_t>(j) * c;
      for (int ch = 0; ch < c; ++ch)
        px[ch] = p[(c == 3 ? (2 - ch) : ch) * hw + i * static_cast<int64_t>(w) + j];
    }
  return m;
}

Tensor mat_to_tensor(const cv::Mat& m) {
  int c = m.channels(), h = m.rows, w = m.cols;
  Tensor t = Tensor::empty({c, h, w});
  double* p = t.data();
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double* px = m.ptr<double>(i) + static_cast<int64_t>(j) * c;
      for (int ch = 0; ch < c; ++ch)
        p[(c == 3 ? (2 - ch) : ch) * hw + i * static_cast<int64_t>(w) + j] = px[ch];
    }
  return t;
}

}  // namespace

Tensor load_png_rgb(const std::string& path) {
  cv::Mat m = imread_checked(path, cv::IMREAD_COLOR);
  if (m.depth() != CV_8U)
    throw DataError("expected 8-bit rgb image: " + path);
  cv::Mat f;
  m.convertTo(f, CV_64FC3, 1.0 / 255.0);
  return mat_to_tensor(f);
}

Tensor load_png_depth(const std::string& path) {
  cv::Mat m = imread_checked(path, cv::IMREAD_UNCHANGED);
  if (m.channels() != 1 || m.depth() != CV_16U)
    throw DataError("expected 16-bit grayscale depth image: " + path);
  cv::Mat f;
  m.convertTo(f, CV_64F, 1.0 / 1000.0);  // mm -> m
  return mat_to_tensor(f);
}

Tensor load_png_mask(const std::string& path) {
  cv::Mat m = imread_checked(path, cv::IMREAD_GRAYSCALE);
  cv::Mat f(m.rows, m.cols, CV_64F);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j)
      f.at<double>(i, j) = m.at<uint8_t>(i, j) > 127 ? 1.0 : 0.0;
  return mat_to_tensor(f);
}

void save_png_rgb(const std::string& path, const Tensor& rgb) {
  if (rgb.dim() != 3 || rgb.size(0) != 3)
    throw ShapeError("save_png_rgb expects (3, H, W)");
  cv::Mat f = tensor_to_mat(rgb);
  cv::Mat u8;
  f.convertTo(u8, CV_8UC3, 255.0);
  if (!cv::imwrite(path, u8)) throw DataError("cannot write image: " + path);
}

void save_png_depth(const std::string& path, const Tensor& depth_m) {
  if (depth_m.dim() != 3 || depth_m.size(0) != 1)
    throw ShapeError("save_png_depth expects (1, H, W)");
  int h = depth_m.size(1), w = depth_m.size(2);
  cv::Mat u16(h, w, CV_16U);
  const double* p = depth_m.data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double mm = p[i * static_cast<int64_t>(w) + j] * 1000.0;
      mm = std::min(std::max(mm, 0.0), 65535.0);
      u16.at<uint16_t>(i, j) = static_cast<uint16_t>(std::lround(mm));
    }
  if (!cv::imwrite(path, u16)) throw DataError("cannot write image: " + path);
}

void save_png_mask(const std::string& path, const Tensor& mask) {
  if (mask.dim() != 3 || mask.size(0) != 1)
    throw ShapeError("save_png_mask expects (1, H, W)");
  int h = mask.size(1), w = mask.size(2);
  cv::Mat u8(h, w, CV_8U);
  const double* p = mask.data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      u8.at<uint8_t>(i, j) = p[i * static_cast<int64_t>(w) + j] > 0.5 ? 255 : 0;
  if (!cv::imwrite(path, u8)) throw DataError("cannot write image: " + path);
}

Tensor resize_bilinear(const Tensor& img, int oh, int ow) {
  if (img.dim() != 3) throw ShapeError("resize expects (C, H, W)");
  cv::Mat m = tensor_to_mat(img);
  cv::Mat r;
  cv::resize(m, r, cv::Size(ow, oh), 0, 0, cv::INTER_LINEAR);
  return mat_to_tensor(r);
}

Tensor resize_nearest(const Tensor& img, int oh, int ow) {
  if (img.dim() != 3) throw ShapeError("resize expects (C, H, W)");
  cv::Mat m = tensor_to_mat(img);
  cv::Mat r;
  cv::resize(m, r, cv::Size(ow, oh), 0, 0, cv::INTER_NEAREST);
  return mat_to_tensor(r);
}

Tensor colorize_error_map(const Tensor& err, const Tensor& region,
                          double scale) {
  if (err.dim() != 3 || err.size(0) != 1 || region.shape() != err.shape())
    throw ShapeError("colorize_error_map expects matching (1, H, W) maps");
  int h = err.size(1), w = err.size(2);
  cv::Mat u8(h, w, CV_8U);
  const double* p = err.data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double v = p[i * static_cast<int64_t>(w) + j] / scale;
      v = std::min(std::max(v, 0.0), 1.0);
      u8.at<uint8_t>(i, j) = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  cv::Mat colored;
  cv::applyColorMap(u8, colored, cv::COLORMAP_JET);
  const double* rg = region.data();
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      if (rg[i * static_cast<int64_t>(w) + j] <= 0.5)
        colored.at<cv::Vec3b>(i, j) = cv::Vec3b(128, 128, 128);
  cv::Mat f;
  colored.convertTo(f, CV_64FC3, 1.0 / 255.0);
  return mat_to_tensor(f);
}

}  // namespace tdc
