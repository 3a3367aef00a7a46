#include "mvgen/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "mvgen/image_io.hpp"
#include "mvgen/renderer.hpp"
#include "mvgen/tensor.hpp"

namespace mvg::plot {

namespace {

using render::Image;

struct Rgb {
    double r, g, b;
};

const Rgb kPalette[] = {
    {0.12, 0.35, 0.80}, {0.85, 0.33, 0.10}, {0.13, 0.55, 0.13}, {0.60, 0.20, 0.65},
    {0.75, 0.60, 0.05}, {0.10, 0.60, 0.60}, {0.55, 0.27, 0.07}, {0.35, 0.35, 0.35},
};
constexpr Rgb kAxis{0.15, 0.15, 0.15};
constexpr Rgb kGrid{0.85, 0.85, 0.85};

void put(Image& img, int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(x, y, 0) = c.r;
    img.at(x, y, 1) = c.g;
    img.at(x, y, 2) = c.b;
}

void draw_line(Image& img, double x0, double y0, double x1, double y1, Rgb c) {
    double dx = x1 - x0, dy = y1 - y0;
    int n = static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))) + 1;
    for (int i = 0; i <= n; ++i) {
        double t = n == 0 ? 0.0 : static_cast<double>(i) / n;
        put(img, static_cast<int>(std::lround(x0 + t * dx)),
            static_cast<int>(std::lround(y0 + t * dy)), c);
    }
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(img, x, y, c);
}

// 5x7 bitmap font: uppercase letters, digits and a little punctuation.
const std::unordered_map<char, std::array<const char*, 7>>& font() {
    static const std::unordered_map<char, std::array<const char*, 7>> f = {
        {'0', {"01110", "10001", "10011", "10101", "11001", "10001", "01110"}},
        {'1', {"00100", "01100", "00100", "00100", "00100", "00100", "01110"}},
        {'2', {"01110", "10001", "00001", "00010", "00100", "01000", "11111"}},
        {'3', {"11110", "00001", "00001", "01110", "00001", "00001", "11110"}},
        {'4', {"00010", "00110", "01010", "10010", "11111", "00010", "00010"}},
        {'5', {"11111", "10000", "11110", "00001", "00001", "10001", "01110"}},
        {'6', {"00110", "01000", "10000", "11110", "10001", "10001", "01110"}},
        {'7', {"11111", "00001", "00010", "00100", "01000", "01000", "01000"}},
        {'8', {"01110", "10001", "10001", "01110", "10001", "10001", "01110"}},
        {'9', {"01110", "10001", "10001", "01111", "00001", "00010", "01100"}},
        {'A', {"01110", "10001", "10001", "11111", "10001", "10001", "10001"}},
        {'B', {"11110", "10001", "10001", "11110", "10001", "10001", "11110"}},
        {'C', {"01110", "10001", "10000", "10000", "10000", "10001", "01110"}},
        {'D', {"11110", "10001", "10001", "10001", "10001", "10001", "11110"}},
        {'E', {"11111", "10000", "10000", "11110", "10000", "10000", "11111"}},
        {'F', {"11111", "10000", "10000", "11110", "10000", "10000", "10000"}},
        {'G', {"01110", "10001", "10000", "10111", "10001", "10001", "01111"}},
        {'H', {"10001", "10001", "10001", "11111", "10001", "10001", "10001"}},
        {'I', {"01110", "00100", "00100", "00100", "00100", "00100", "01110"}},
        {'J', {"00111", "00010", "00010", "00010", "00010", "10010", "01100"}},
        {'K', {"10001", "10010", "10100", "11000", "10100", "10010", "10001"}},
        {'L', {"10000", "10000", "10000", "10000", "10000", "10000", "11111"}},
        {'M', {"10001", "11011", "10101", "10101", "10001", "10001", "10001"}},
        {'N', {"10001", "11001", "10101", "10011", "10001", "10001", "10001"}},
        {'O', {"01110", "10001", "10001", "10001", "10001", "10001", "01110"}},
        {'P', {"11110", "10001", "10001", "11110", "10000", "10000", "10000"}},
        {'Q', {"01110", "10001", "10001", "10001", "10101", "10010", "01101"}},
        {'R', {"11110", "10001", "10001", "11110", "10100", "10010", "10001"}},
        {'S', {"01111", "10000", "10000", "01110", "00001", "00001", "11110"}},
        {'T', {"11111", "00100", "00100", "00100", "00100", "00100", "00100"}},
        {'U', {"10001", "10001", "10001", "10001", "10001", "10001", "01110"}},
        {'V', {"10001", "10001", "10001", "10001", "10001", "01010", "00100"}},
        {'W', {"10001", "10001", "10001", "10101", "10101", "10101", "01010"}},
        {'X', {"10001", "10001", "01010", "00100", "01010", "10001", "10001"}},
        {'Y', {"10001", "10001", "01010", "00100", "00100", "00100", "00100"}},
        {'Z', {"11111", "00001", "00010", "00100", "01000", "10000", "11111"}},
        {'.', {"00000", "00000", "00000", "00000", "00000", "00000", "00100"}},
        {',', {"00000", "00000", "00000", "00000", "00000", "00100", "01000"}},
        {'-', {"00000", "00000", "00000", "01110", "00000", "00000", "00000"}},
        {'+', {"00000", "00100", "00100", "11111", "00100", "00100", "00000"}},
        {'_', {"00000", "00000", "00000", "00000", "00000", "00000", "11111"}},
        {':', {"00000", "00100", "00000", "00000", "00000", "00100", "00000"}},
        {'/', {"00001", "00001", "00010", "00100", "01000", "10000", "10000"}},
        {'(', {"00010", "00100", "01000", "01000", "01000", "00100", "00010"}},
        {')', {"01000", "00100", "00010", "00010", "00010", "00100", "01000"}},
        {'=', {"00000", "00000", "11111", "00000", "11111", "00000", "00000"}},
        {' ', {"00000", "00000", "00000", "00000", "00000", "00000", "00000"}},
    };
    return f;
}

void draw_text(Image& img, int x, int y, const std::string& text, Rgb c) {
    const auto& f = font();
    for (char raw : text) {
        char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        auto it = f.find(ch);
        if (it == f.end()) it = f.find('.');
        for (int row = 0; row < 7; ++row)
            for (int col = 0; col < 5; ++col)
                if (it->second[row][col] == '1') put(img, x + col, y + row, c);
        x += 6;
    }
}

std::string fmt(double v) {
    char buf[32];
    double a = std::abs(v);
    if (v != 0.0 && (a >= 1e4 || a < 1e-2))
        std::snprintf(buf, sizeof(buf), "%.1e", v);
    else
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

struct Frame {
    int x0, y0, x1, y1;  // plot area, y grows downward
    double vmin, vmax;
    double ty(double v) const {
        double t = (v - vmin) / (vmax - vmin);
        return y1 - t * (y1 - y0);
    }
};

Frame make_frame(Image& img, const std::string& title, double vmin, double vmax) {
    if (vmax <= vmin) {
        double pad = std::max(1e-12, std::abs(vmin) * 0.1 + 1e-6);
        vmin -= pad;
        vmax += pad;
    } else {
        double pad = (vmax - vmin) * 0.05;
        vmin -= pad;
        vmax += pad;
    }
    fill_rect(img, 0, 0, img.width - 1, img.height - 1, {1, 1, 1});
    draw_text(img, 10, 6, title, kAxis);
    Frame fr{70, 24, img.width - 15, img.height - 30, vmin, vmax};
    for (int i = 0; i <= 4; ++i) {
        double v = vmin + (vmax - vmin) * i / 4.0;
        int y = static_cast<int>(std::lround(fr.ty(v)));
        draw_line(img, fr.x0, y, fr.x1, y, kGrid);
        draw_text(img, 4, y - 3, fmt(v), kAxis);
    }
    draw_line(img, fr.x0, fr.y0, fr.x0, fr.y1, kAxis);
    draw_line(img, fr.x0, fr.y1, fr.x1, fr.y1, kAxis);
    return fr;
}

}  // namespace

void plot_curves(const std::map<std::string, std::vector<double>>& series,
                 const std::string& title, const std::string& path, bool log_scale) {
    require(!series.empty(), "PLOT_EMPTY", "no series to plot: " + title);
    Image img(640, 400);
    double vmin = 1e300, vmax = -1e300;
    size_t max_len = 1;
    for (const auto& [name, vals] : series) {
        require(!vals.empty(), "PLOT_EMPTY", "empty series '" + name + "'");
        for (double v : vals) {
            double u = log_scale ? std::log10(std::max(v, 1e-300)) : v;
            vmin = std::min(vmin, u);
            vmax = std::max(vmax, u);
        }
        max_len = std::max(max_len, vals.size());
    }
    Frame fr = make_frame(img, log_scale ? title + " (LOG10)" : title, vmin, vmax);
    int idx = 0, legend_y = fr.y0 + 4;
    for (const auto& [name, vals] : series) {
        Rgb c = kPalette[idx % 8];
        ++idx;
        double denom = std::max<size_t>(max_len - 1, 1);
        double px = 0, py = 0;
        for (size_t i = 0; i < vals.size(); ++i) {
            double v = log_scale ? std::log10(std::max(vals[i], 1e-300)) : vals[i];
            double x = fr.x0 + (fr.x1 - fr.x0) * (static_cast<double>(i) / denom);
            double y = fr.ty(v);
            if (i > 0) draw_line(img, px, py, x, y, c);
            px = x;
            py = y;
        }
        fill_rect(img, fr.x0 + 8, legend_y, fr.x0 + 18, legend_y + 6, c);
        draw_text(img, fr.x0 + 24, legend_y, name, kAxis);
        legend_y += 12;
    }
    draw_text(img, fr.x1 - 30, fr.y1 + 6, "STEP", kAxis);
    io::save_rgb_png(img, path);
}

void plot_bars(const std::vector<std::string>& labels, const std::vector<double>& values,
               const std::string& title, const std::string& path) {
    std::map<std::string, std::vector<double>> one;
    one[""] = values;
    plot_grouped_bars(labels, one, title, path);
}

void plot_grouped_bars(const std::vector<std::string>& labels,
                       const std::map<std::string, std::vector<double>>& variants,
                       const std::string& title, const std::string& path) {
    require(!labels.empty() && !variants.empty(), "PLOT_EMPTY", "nothing to plot: " + title);
    double vmin = 0.0, vmax = 0.0;
    for (const auto& [name, vals] : variants) {
        require(vals.size() == labels.size(), "PLOT_SHAPE",
                "variant '" + name + "' has " + std::to_string(vals.size()) + " values for " +
                    std::to_string(labels.size()) + " labels");
        for (double v : vals) {
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
    }
    Image img(640, 400);
    Frame fr = make_frame(img, title, vmin, vmax);
    int groups = static_cast<int>(labels.size());
    int nv = static_cast<int>(variants.size());
    double group_w = static_cast<double>(fr.x1 - fr.x0) / groups;
    double bar_w = std::max(2.0, group_w * 0.7 / nv);
    int y_zero = static_cast<int>(std::lround(fr.ty(0.0)));
    int legend_y = fr.y0 + 4;
    int vi = 0;
    for (const auto& [name, vals] : variants) {
        Rgb c = kPalette[vi % 8];
        for (int g = 0; g < groups; ++g) {
            double gx = fr.x0 + group_w * (g + 0.15) + bar_w * vi;
            int y = static_cast<int>(std::lround(fr.ty(vals[g])));
            fill_rect(img, static_cast<int>(gx), std::min(y, y_zero),
                      static_cast<int>(gx + bar_w) - 1, std::max(y, y_zero), c);
        }
        if (!name.empty()) {
            fill_rect(img, fr.x0 + 8, legend_y, fr.x0 + 18, legend_y + 6, c);
            draw_text(img, fr.x0 + 24, legend_y, name, kAxis);
            legend_y += 12;
        }
        ++vi;
    }
    for (int g = 0; g < groups; ++g) {
        int x = static_cast<int>(fr.x0 + group_w * g + 4);
        draw_text(img, x, fr.y1 + 6, labels[g].substr(0, 10), kAxis);
    }
    io::save_rgb_png(img, path);
}

}  // namespace mvg::plot
