#include "mvgen/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace mvg::io {

void save_rgb_png(const render::Image& img, const std::string& path) {
    cv::Mat mat(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width; ++x) {
            // RGB -> BGR
            row[x][2] = static_cast<uchar>(std::lround(std::clamp(img.at(x, y, 0), 0.0, 1.0) * 255.0));
            row[x][1] = static_cast<uchar>(std::lround(std::clamp(img.at(x, y, 1), 0.0, 1.0) * 255.0));
            row[x][0] = static_cast<uchar>(std::lround(std::clamp(img.at(x, y, 2), 0.0, 1.0) * 255.0));
        }
    }
    require(cv::imwrite(path, mat), "IO_FAILURE", "cannot write " + path);
}

render::Image load_rgb_png(const std::string& path) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
    require(!mat.empty(), "IO_FAILURE", "cannot read " + path);
    render::Image img(mat.cols, mat.rows);
    for (int y = 0; y < mat.rows; ++y) {
        const auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < mat.cols; ++x) {
            img.at(x, y, 0) = row[x][2] / 255.0;
            img.at(x, y, 1) = row[x][1] / 255.0;
            img.at(x, y, 2) = row[x][0] / 255.0;
        }
    }
    return img;
}

std::pair<double, double> save_depth_png(const render::DepthMap& depth,
                                         const std::string& path) {
    double dmin = std::numeric_limits<double>::infinity();
    double dmax = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < depth.data.size(); ++i) {
        if (!depth.valid[i]) continue;
        dmin = std::min(dmin, depth.data[i]);
        dmax = std::max(dmax, depth.data[i]);
    }
    if (!std::isfinite(dmin)) { dmin = 0.0; dmax = 1.0; }  // all-invalid map
    const double span = dmax > dmin ? dmax - dmin : 1.0;
    cv::Mat mat(depth.height, depth.width, CV_16UC1);
    for (int y = 0; y < depth.height; ++y) {
        auto* row = mat.ptr<uint16_t>(y);
        for (int x = 0; x < depth.width; ++x) {
            const size_t i = static_cast<size_t>(y) * depth.width + x;
            if (!depth.valid[i]) {
                row[x] = 0;
            } else {
                const double t = (depth.data[i] - dmin) / span;
                row[x] = static_cast<uint16_t>(1 + std::lround(t * 65534.0));
            }
        }
    }
    require(cv::imwrite(path, mat), "IO_FAILURE", "cannot write " + path);
    return {dmin, dmax};
}

render::DepthMap load_depth_png(const std::string& path, double depth_min,
                                double depth_max) {
    cv::Mat mat = cv::imread(path, cv::IMREAD_UNCHANGED);
    require(!mat.empty() && mat.type() == CV_16UC1, "IO_FAILURE",
            "cannot read 16-bit depth " + path);
    render::DepthMap depth(mat.cols, mat.rows);
    const double span = depth_max > depth_min ? depth_max - depth_min : 1.0;
    for (int y = 0; y < mat.rows; ++y) {
        const auto* row = mat.ptr<uint16_t>(y);
        for (int x = 0; x < mat.cols; ++x) {
            const size_t i = static_cast<size_t>(y) * mat.cols + x;
            if (row[x] == 0) continue;
            depth.valid[i] = 1;
            depth.data[i] = depth_min + (row[x] - 1) / 65534.0 * span;
        }
    }
    return depth;
}

}  // namespace mvg::io
