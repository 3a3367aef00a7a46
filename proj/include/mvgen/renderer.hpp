#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvgen/geometry.hpp"

namespace mvg::render {

// RGB image, values in [0,1], row-major, channel-last.
struct Image {
    int width = 0, height = 0;
    std::vector<double> data;  // h*w*3

    Image() = default;
    Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0) {}
    double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const {
        return data[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
};

// Camera-forward (z) distance per pixel; invalid pixels are background.
struct DepthMap {
    int width = 0, height = 0;
    std::vector<double> data;
    std::vector<uint8_t> valid;

    DepthMap() = default;
    DepthMap(int w, int h)
        : width(w), height(h), data(static_cast<size_t>(w) * h, 0.0),
          valid(static_cast<size_t>(w) * h, 0) {}
    double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
    bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
};

struct View {
    int view_index = 0;
    geo::CameraPose pose;
    Image rgb;
    DepthMap depth;
};

struct ViewBundle {
    std::string scene_id;
    std::vector<View> views;
};

constexpr double kBackground = 1.0;  // flat white background
constexpr double kAmbient = 0.3;

std::pair<Image, DepthMap> render_view(const geo::ShoeboxScene& scene,
                                       const geo::CameraPose& pose, int width, int height);
std::pair<Image, DepthMap> render_view(const geo::DetailedScene& scene,
                                       const geo::CameraPose& pose, int width, int height);

ViewBundle render_bundle(const geo::ShoeboxScene& scene, const geo::CameraRig& rig,
                         int width, int height);
ViewBundle render_bundle(const geo::DetailedScene& scene, const geo::CameraRig& rig,
                         int width, int height);

// Analytic ray/axis-aligned-box depth through a pixel center; nearest hit over
// all boxes, camera-forward distance. Used by tests as the rasterizer oracle.
std::optional<double> analytic_pixel_depth(const std::vector<geo::Box>& boxes,
                                           const geo::CameraPose& pose, int width,
                                           int height, int px, int py);

}  // namespace mvg::render
