#pragma once

#include <string>

#include "tdcnet/tensor.hpp"

namespace tdc {

// PNG I/O and resampling for the dataset layout. All images move through
// plain Tensors: rgb as (3, H, W) in [0,1], single-channel maps as (1, H, W).
// Depth PNGs are 16-bit grayscale in millimeters.

Tensor load_png_rgb(const std::string& path);
Tensor load_png_depth(const std::string& path);  // -> meters
Tensor load_png_mask(const std::string& path);   // -> {0,1}

void save_png_rgb(const std::string& path, const Tensor& rgb);
void save_png_depth(const std::string& path, const Tensor& depth_m);
void save_png_mask(const std::string& path, const Tensor& mask);

Tensor resize_bilinear(const Tensor& img, int oh, int ow);
Tensor resize_nearest(const Tensor& img, int oh, int ow);

// Relative-error visualization: err in [0, scale] maps onto the jet palette;
// pixels outside `region` render mid-gray. err and region are (1, H, W);
// result is (3, H, W) in [0,1].
Tensor colorize_error_map(const Tensor& err, const Tensor& region,
                          double scale);

}  // namespace tdc
