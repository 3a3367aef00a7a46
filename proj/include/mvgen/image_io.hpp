#pragma once

#include <string>

#include "mvgen/renderer.hpp"

namespace mvg::io {

void save_rgb_png(const render::Image& img, const std::string& path);
render::Image load_rgb_png(const std::string& path);

// 16-bit grayscale; value 0 reserved for invalid pixels, valid depths mapped
// linearly to [1, 65535]. Returns the (depth_min, depth_max) of the mapping,
// recorded in the dataset manifest.
std::pair<double, double> save_depth_png(const render::DepthMap& depth,
                                         const std::string& path);
render::DepthMap load_depth_png(const std::string& path, double depth_min,
                                double depth_max);

}  // namespace mvg::io
