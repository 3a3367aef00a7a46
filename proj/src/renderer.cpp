#include "mvgen/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace mvg::render {

namespace {

using geo::Box;
using geo::CameraPose;
using geo::Vec3;

// Fixed in world frame so appearance varies with azimuth but renders are
// reproducible.
const Vec3 kLightDir = Vec3{0.4, 0.2, 0.85}.normalized();

struct Face {
    int box_idx;
    int axis;   // 0=x, 1=y, 2=z
    int sign;   // +1 outward along +axis
    Vec3 v[4];  // quad corners, consistent order
};

std::vector<Face> box_faces(const std::vector<Box>& boxes) {
    std::vector<Face> faces;
    faces.reserve(boxes.size() * 6);
    for (size_t bi = 0; bi < boxes.size(); ++bi) {
        const Box& b = boxes[bi];
        const Vec3& lo = b.min_corner;
        const Vec3& hi = b.max_corner;
        auto add = [&](int axis, int sign, Vec3 a, Vec3 c, Vec3 d, Vec3 e) {
            faces.push_back({static_cast<int>(bi), axis, sign, {a, c, d, e}});
        };
        add(0, -1, {lo.x, lo.y, lo.z}, {lo.x, hi.y, lo.z}, {lo.x, hi.y, hi.z}, {lo.x, lo.y, hi.z});
        add(0, +1, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {hi.x, hi.y, hi.z}, {hi.x, lo.y, hi.z});
        add(1, -1, {lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, lo.y, hi.z}, {lo.x, lo.y, hi.z});
        add(1, +1, {lo.x, hi.y, lo.z}, {hi.x, hi.y, lo.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z});
        add(2, -1, {lo.x, lo.y, lo.z}, {hi.x, lo.y, lo.z}, {hi.x, hi.y, lo.z}, {lo.x, hi.y, lo.z});
        add(2, +1, {lo.x, lo.y, hi.z}, {hi.x, lo.y, hi.z}, {hi.x, hi.y, hi.z}, {lo.x, hi.y, hi.z});
    }
    return faces;
}

Vec3 face_normal(const Face& f) {
    Vec3 n{0, 0, 0};
    (&n.x)[f.axis] = static_cast<double>(f.sign);
    return n;
}

// Base color of a face point before lighting.
using ShadeFn = std::function<Vec3(const Face&, const Vec3&)>;

Vec3 lambert(const Vec3& base, const Vec3& normal) {
    const double lit = kAmbient + 0.7 * std::max(0.0, normal.dot(kLightDir));
    return {std::clamp(base.x * lit, 0.0, 1.0), std::clamp(base.y * lit, 0.0, 1.0),
            std::clamp(base.z * lit, 0.0, 1.0)};
}

void rasterize(const std::vector<Face>& faces, const ShadeFn& shade,
               const CameraPose& pose, int width, int height, Image& img,
               DepthMap& depth) {
    require(width >= 8 && height >= 8, "RESOLUTION_TOO_SMALL",
            std::to_string(width) + "x" + std::to_string(height));
    img = Image(width, height);
    depth = DepthMap(width, height);
    std::fill(img.data.begin(), img.data.end(), kBackground);
    std::vector<double> zbuf(static_cast<size_t>(width) * height,
                             std::numeric_limits<double>::infinity());

    const double f = pose.intrinsic[0] * height;
    for (const Face& face : faces) {
        // Two triangles per quad.
        const int tri[2][3] = {{0, 1, 2}, {0, 2, 3}};
        for (const auto& idx : tri) {
            Vec3 p[3];
            double u[3], v[3], z[3];
            bool ok = true;
            for (int i = 0; i < 3; ++i) {
                p[i] = face.v[idx[i]];
                const Vec3 pc = pose.world_to_camera(p[i]);
                if (pc.z <= 1e-9) { ok = false; break; }
                z[i] = pc.z;
                u[i] = 0.5 * width + f * pc.x / pc.z;
                v[i] = 0.5 * height + f * pc.y / pc.z;
            }
            if (!ok) continue;
            const double area = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0]);
            if (std::abs(area) < 1e-12) continue;
            const double inv_area = 1.0 / area;
            const int x0 = std::max(0, static_cast<int>(std::floor(std::min({u[0], u[1], u[2]}))));
            const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({u[0], u[1], u[2]}))));
            const int y0 = std::max(0, static_cast<int>(std::floor(std::min({v[0], v[1], v[2]}))));
            const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({v[0], v[1], v[2]}))));
            for (int py = y0; py <= y1; ++py) {
                const double cy = py + 0.5;
                for (int px = x0; px <= x1; ++px) {
                    const double cx = px + 0.5;
                    double w0 = ((u[1] - cx) * (v[2] - cy) - (v[1] - cy) * (u[2] - cx)) * inv_area;
                    double w1 = ((u[2] - cx) * (v[0] - cy) - (v[2] - cy) * (u[0] - cx)) * inv_area;
                    double w2 = 1.0 - w0 - w1;
                    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                    // Perspective-correct: 1/z is affine over the triangle.
                    const double inv_z = w0 / z[0] + w1 / z[1] + w2 / z[2];
                    const double pz = 1.0 / inv_z;
                    double& zb = zbuf[static_cast<size_t>(py) * width + px];
                    if (pz >= zb) continue;
                    zb = pz;
                    const Vec3 wp = (p[0] * (w0 / z[0]) + p[1] * (w1 / z[1]) + p[2] * (w2 / z[2])) * pz;
                    const Vec3 c = lambert(shade(face, wp), face_normal(face));
                    img.at(px, py, 0) = c.x;
                    img.at(px, py, 1) = c.y;
                    img.at(px, py, 2) = c.z;
                    depth.at(px, py) = pz;
                    depth.valid[static_cast<size_t>(py) * width + px] = 1;
                }
            }
        }
    }
}

constexpr double kMassingGray = 0.82;

Vec3 shoebox_shade(const Face&, const Vec3&) {
    return {kMassingGray, kMassingGray, kMassingGray};
}

Vec3 palette_color(const std::array<int, 3>& p) {
    return {p[0] / 255.0, p[1] / 255.0, p[2] / 255.0};
}

Vec3 detail_shade(const geo::DetailedScene& scene, const Face& face, const Vec3& wp) {
    const Box& b = scene.base.boxes[static_cast<size_t>(face.box_idx)];
    const Vec3 wall = palette_color(scene.facade_palette[0]);
    const Vec3 band = palette_color(scene.facade_palette[1]);
    const Vec3 window = palette_color(scene.facade_palette[2]);
    const bool parapet = scene.roof_style == geo::RoofStyle::PARAPET;
    const double parapet_w = 0.6;

    if (face.axis == 2) {
        if (face.sign < 0) return wall;  // underside
        if (parapet) {
            const double dx = std::min(wp.x - b.min_corner.x, b.max_corner.x - wp.x);
            const double dy = std::min(wp.y - b.min_corner.y, b.max_corner.y - wp.y);
            if (std::min(dx, dy) < parapet_w) return band;
        }
        return {band.x * 0.55, band.y * 0.55, band.z * 0.55};  // roof deck
    }

    // Vertical facade: floor bands + window grid in face-local coordinates.
    const double vz = wp.z - b.min_corner.z;
    const double stories_h = b.extent().z;
    const int floors = scene.floor_count_per_box[static_cast<size_t>(face.box_idx)];
    const double fh = stories_h / floors;
    if (parapet && vz > stories_h - 0.4) return band;
    const double fpos = (vz / fh) - std::floor(vz / fh);
    if (fpos < 0.06 || fpos > 0.94) return band;  // slab line

    const double hcoord = face.axis == 0 ? wp.y - b.min_corner.y : wp.x - b.min_corner.x;
    const double hspan = face.axis == 0 ? b.extent().y : b.extent().x;
    const int cols = scene.window_grid[static_cast<size_t>(face.box_idx)].second;
    const double cw = hspan / cols;
    const double hpos = (hcoord / cw) - std::floor(hcoord / cw);
    if (hpos > 0.3 && hpos < 0.7 && fpos > 0.3 && fpos < 0.8) return window;
    return wall;
}

}  // namespace

std::pair<Image, DepthMap> render_view(const geo::ShoeboxScene& scene,
                                       const geo::CameraPose& pose, int width,
                                       int height) {
    Image img;
    DepthMap depth;
    rasterize(box_faces(scene.boxes), shoebox_shade, pose, width, height, img, depth);
    return {std::move(img), std::move(depth)};
}

std::pair<Image, DepthMap> render_view(const geo::DetailedScene& scene,
                                       const geo::CameraPose& pose, int width,
                                       int height) {
    Image img;
    DepthMap depth;
    auto shade = [&scene](const Face& f, const Vec3& wp) { return detail_shade(scene, f, wp); };
    rasterize(box_faces(scene.base.boxes), shade, pose, width, height, img, depth);
    return {std::move(img), std::move(depth)};
}

namespace {
template <typename SceneT>
ViewBundle render_bundle_impl(const SceneT& scene, const geo::ShoeboxScene& base,
                              const geo::CameraRig& rig, int width, int height) {
    const auto poses = geo::rig_poses(rig, base.bounding_sphere());
    ViewBundle bundle;
    bundle.scene_id = base.scene_id;
    bundle.views.resize(poses.size());
#pragma omp parallel for schedule(static)
    for (int k = 0; k < static_cast<int>(poses.size()); ++k) {
        auto [img, depth] = render_view(scene, poses[static_cast<size_t>(k)], width, height);
        View& view = bundle.views[static_cast<size_t>(k)];
        view.view_index = k;
        view.pose = poses[static_cast<size_t>(k)];
        view.rgb = std::move(img);
        view.depth = std::move(depth);
    }
    return bundle;
}
}  // namespace

ViewBundle render_bundle(const geo::ShoeboxScene& scene, const geo::CameraRig& rig,
                         int width, int height) {
    return render_bundle_impl(scene, scene, rig, width, height);
}

ViewBundle render_bundle(const geo::DetailedScene& scene, const geo::CameraRig& rig,
                         int width, int height) {
    return render_bundle_impl(scene, scene.base, rig, width, height);
}

std::optional<double> analytic_pixel_depth(const std::vector<geo::Box>& boxes,
                                           const geo::CameraPose& pose, int width,
                                           int height, int px, int py) {
    const double f = pose.intrinsic[0] * height;
    const double dx = (px + 0.5 - 0.5 * width) / f;
    const double dy = (py + 0.5 - 0.5 * height) / f;
    // Camera axes are the rows of the extrinsic rotation.
    const auto& m = pose.extrinsic;
    const Vec3 right{m[0], m[1], m[2]}, down{m[4], m[5], m[6]}, fwd{m[8], m[9], m[10]};
    // Direction with unit forward component: the slab parameter equals the
    // camera-forward depth directly.
    const Vec3 dir = right * dx + down * dy + fwd;
    const Vec3& org = pose.position;

    double best = std::numeric_limits<double>::infinity();
    for (const geo::Box& b : boxes) {
        double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
        bool hit = true;
        const double o[3] = {org.x, org.y, org.z};
        const double d[3] = {dir.x, dir.y, dir.z};
        const double lo[3] = {b.min_corner.x, b.min_corner.y, b.min_corner.z};
        const double hi[3] = {b.max_corner.x, b.max_corner.y, b.max_corner.z};
        for (int i = 0; i < 3 && hit; ++i) {
            if (std::abs(d[i]) < 1e-15) {
                if (o[i] < lo[i] || o[i] > hi[i]) hit = false;
                continue;
            }
            double ta = (lo[i] - o[i]) / d[i];
            double tb = (hi[i] - o[i]) / d[i];
            if (ta > tb) std::swap(ta, tb);
            t0 = std::max(t0, ta);
            t1 = std::min(t1, tb);
            if (t0 > t1) hit = false;
        }
        if (hit && t0 > 0.0) best = std::min(best, t0);
    }
    if (!std::isfinite(best)) return std::nullopt;
    return best;
}

}  // namespace mvg::render
