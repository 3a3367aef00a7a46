#include "mvgen/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace mvg::geo {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double deg2rad(double d) { return d * kPi / 180.0; }
}  // namespace

std::string to_string(FootprintClass c) {
    switch (c) {
        case FootprintClass::I: return "I";
        case FootprintClass::L: return "L";
        case FootprintClass::U: return "U";
        case FootprintClass::O: return "O";
        case FootprintClass::COMPLEX: return "COMPLEX";
    }
    return "I";
}

FootprintClass footprint_from_string(const std::string& s) {
    if (s == "I") return FootprintClass::I;
    if (s == "L") return FootprintClass::L;
    if (s == "U") return FootprintClass::U;
    if (s == "O") return FootprintClass::O;
    if (s == "COMPLEX") return FootprintClass::COMPLEX;
    fail("INVALID_FOOTPRINT_CLASS", s);
}

Box ShoeboxScene::bounding_box() const {
    require(!boxes.empty(), "EMPTY_SCENE", scene_id);
    Box bb = boxes[0];
    for (const Box& b : boxes) {
        bb.min_corner.x = std::min(bb.min_corner.x, b.min_corner.x);
        bb.min_corner.y = std::min(bb.min_corner.y, b.min_corner.y);
        bb.min_corner.z = std::min(bb.min_corner.z, b.min_corner.z);
        bb.max_corner.x = std::max(bb.max_corner.x, b.max_corner.x);
        bb.max_corner.y = std::max(bb.max_corner.y, b.max_corner.y);
        bb.max_corner.z = std::max(bb.max_corner.z, b.max_corner.z);
    }
    return bb;
}

std::pair<Vec3, double> ShoeboxScene::bounding_sphere() const {
    const Box bb = bounding_box();
    return {bb.center(), (bb.extent() * 0.5).norm()};
}

bool boxes_adjacent(const Box& a, const Box& b) {
    // Overlap interval per axis; adjacency = one axis touching (zero length),
    // other two overlapping with positive length.
    double len[3], lo, hi;
    const double amin[3] = {a.min_corner.x, a.min_corner.y, a.min_corner.z};
    const double amax[3] = {a.max_corner.x, a.max_corner.y, a.max_corner.z};
    const double bmin[3] = {b.min_corner.x, b.min_corner.y, b.min_corner.z};
    const double bmax[3] = {b.max_corner.x, b.max_corner.y, b.max_corner.z};
    int touching = 0, overlapping = 0;
    const double eps = 1e-9;
    for (int i = 0; i < 3; ++i) {
        lo = std::max(amin[i], bmin[i]);
        hi = std::min(amax[i], bmax[i]);
        len[i] = hi - lo;
        if (len[i] > eps) ++overlapping;
        else if (len[i] > -eps) ++touching;
    }
    return touching == 1 && overlapping == 2;
}

std::vector<std::pair<int, int>> adjacency_edges(const ShoeboxScene& scene) {
    std::vector<std::pair<int, int>> edges;
    for (size_t i = 0; i < scene.boxes.size(); ++i)
        for (size_t j = i + 1; j < scene.boxes.size(); ++j)
            if (boxes_adjacent(scene.boxes[i], scene.boxes[j]))
                edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
    return edges;
}

namespace {

// Footprint layouts. Footprints are drawn in the xy plane (z up); each box
// gets its own height so wings and base read as separate volumes.
std::vector<Box> layout_boxes(FootprintClass cls, Rng& rng) {
    auto h = [&rng] { return 6.0 + 3.0 * std::floor(rng.uniform() * 3.0); };  // 6, 9 or 12
    const double W = rng.uniform(16.0, 26.0);   // long dimension
    const double D = rng.uniform(12.0, 20.0);   // short dimension
    const double d = rng.uniform(4.0, 6.0);     // wing thickness
    std::vector<Box> boxes;
    switch (cls) {
        case FootprintClass::I:
            boxes.push_back({{0, 0, 0}, {W, d + 2.0, h()}});
            break;
        case FootprintClass::L: {
            const double hb = h();
            boxes.push_back({{0, 0, 0}, {W, d, hb}});
            boxes.push_back({{0, d, 0}, {d, D, h()}});
            break;
        }
        case FootprintClass::U: {
            // base along x, wings extending +y at the two ends
            boxes.push_back({{0, 0, 0}, {W, d, h()}});
            boxes.push_back({{0, d, 0}, {d, D, h()}});
            boxes.push_back({{W - d, d, 0}, {W, D, h()}});
            break;
        }
        case FootprintClass::O: {
            const double hh = h();
            boxes.push_back({{0, 0, 0}, {W, d, hh}});              // front
            boxes.push_back({{0, D - d, 0}, {W, D, hh}});          // back
            boxes.push_back({{0, d, 0}, {d, D - d, hh}});          // left
            boxes.push_back({{W - d, d, 0}, {W, D - d, hh}});      // right
            break;
        }
        case FootprintClass::COMPLEX: {
            // spine along x plus 2-3 non-overlapping stubs on the +y side
            boxes.push_back({{0, 0, 0}, {W, d, h()}});
            const int stubs = 2 + static_cast<int>(rng.randint(2));
            const double slot = W / stubs;
            for (int s = 0; s < stubs; ++s) {
                const double sw = rng.uniform(0.35, 0.7) * slot;
                const double x0 = s * slot + rng.uniform(0.0, slot - sw);
                const double depth = rng.uniform(0.4, 1.0) * D;
                boxes.push_back({{x0, d, 0}, {x0 + sw, d + depth, h()}});
            }
            break;
        }
    }
    return boxes;
}

std::array<std::array<int, 3>, 3> pick_palette(Rng& rng) {
    // wall / band / window triples, muted building tones
    static const std::array<std::array<std::array<int, 3>, 3>, 6> kPalettes = {{
        {{{214, 205, 188}, {166, 120, 90}, {70, 90, 110}}},
        {{{198, 186, 170}, {120, 100, 84}, {60, 75, 95}}},
        {{{222, 220, 214}, {90, 96, 104}, {50, 65, 85}}},
        {{{205, 170, 140}, {140, 95, 70}, {65, 80, 100}}},
        {{{190, 198, 200}, {110, 125, 135}, {45, 60, 80}}},
        {{{226, 212, 180}, {150, 130, 100}, {75, 85, 105}}},
    }};
    return kPalettes[static_cast<size_t>(rng.randint(kPalettes.size()))];
}

}  // namespace

std::pair<ShoeboxScene, DetailedScene> generate_paired_scene(uint64_t seed,
                                                             FootprintClass cls) {
    // Mix the class into the stream so (seed, I) and (seed, U) differ.
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(cls) + 1);
    ShoeboxScene scene;
    scene.seed = seed;
    scene.footprint_class = cls;
    scene.scene_id = "scene_" + to_string(cls) + "_" + std::to_string(seed);
    scene.boxes = layout_boxes(cls, rng);

    DetailedScene detail;
    detail.base = scene;
    const double floor_height = 3.0;
    for (const Box& b : scene.boxes) {
        const int floors = std::max(1, static_cast<int>(std::round(b.extent().z / floor_height)));
        detail.floor_count_per_box.push_back(floors);
        const int cols = std::max(2, static_cast<int>(std::round(
                                         std::max(b.extent().x, b.extent().y) / 3.0)));
        detail.window_grid.emplace_back(floors, cols);
    }
    detail.facade_palette = pick_palette(rng);
    detail.roof_style = rng.uniform() < 0.5 ? RoofStyle::FLAT : RoofStyle::PARAPET;
    return {scene, detail};
}

Vec3 CameraPose::world_to_camera(const Vec3& p) const {
    const auto& m = extrinsic;
    return {m[0] * p.x + m[1] * p.y + m[2] * p.z + m[3],
            m[4] * p.x + m[5] * p.y + m[6] * p.z + m[7],
            m[8] * p.x + m[9] * p.y + m[10] * p.z + m[11]};
}

CameraPose make_pose(double azimuth_deg, double elevation_deg, double radius,
                     const Vec3& look_at, double fov_y_deg) {
    CameraPose pose;
    pose.azimuth_deg = azimuth_deg;
    pose.elevation_deg = elevation_deg;
    pose.radius = radius;
    pose.look_at = look_at;
    pose.fov_y_deg = fov_y_deg;

    const double az = deg2rad(azimuth_deg), el = deg2rad(elevation_deg);
    // Azimuth counterclockwise from +X seen from above; z up.
    const Vec3 offset{radius * std::cos(el) * std::cos(az),
                      radius * std::cos(el) * std::sin(az), radius * std::sin(el)};
    pose.position = look_at + offset;

    const Vec3 fwd = (look_at - pose.position).normalized();
    const Vec3 up_world{0, 0, 1};
    const Vec3 right = fwd.cross(up_world).normalized();
    const Vec3 down = fwd.cross(right);  // image y axis (down), unit by construction

    auto& m = pose.extrinsic;
    const Vec3& c = pose.position;
    m = {right.x, right.y, right.z, -right.dot(c),
         down.x,  down.y,  down.z,  -down.dot(c),
         fwd.x,   fwd.y,   fwd.z,   -fwd.dot(c),
         0,       0,       0,       1};

    const double f = 0.5 / std::tan(0.5 * deg2rad(fov_y_deg));
    pose.intrinsic = {f, 0, 0.5, 0, f, 0.5, 0, 0, 1};
    return pose;
}

CameraRig default_rig(const ShoeboxScene& scene, int n_views, double azimuth_step_deg,
                      double elevation_deg, double fov_y_deg) {
    const auto [center, rad] = scene.bounding_sphere();
    CameraRig rig;
    rig.n_views = n_views;
    rig.azimuth_step_deg = azimuth_step_deg;
    rig.elevation_deg = elevation_deg;
    rig.radius = 2.5 * rad;
    rig.look_at = center;
    rig.fov_y_deg = fov_y_deg;
    return rig;
}

std::vector<CameraPose> rig_poses(const CameraRig& rig,
                                  const std::pair<Vec3, double>& scene_bound) {
    require(rig.n_views >= 1, "INVALID_RIG", "n_views must be >= 1");
    require(rig.elevation_deg > 0.0 && rig.elevation_deg < 90.0, "INVALID_RIG",
            "elevation must lie in (0, 90)");
    require(rig.radius > scene_bound.second, "RADIUS_INSIDE_SCENE",
            "rig radius " + std::to_string(rig.radius) + " <= bounding sphere radius " +
                std::to_string(scene_bound.second));
    std::vector<CameraPose> poses;
    poses.reserve(static_cast<size_t>(rig.n_views));
    for (int k = 0; k < rig.n_views; ++k)
        poses.push_back(make_pose(k * rig.azimuth_step_deg, rig.elevation_deg, rig.radius,
                                  rig.look_at, rig.fov_y_deg));
    return poses;
}

std::optional<Pixel> project(const Vec3& point, const CameraPose& pose, int width,
                             int height) {
    const Vec3 pc = pose.world_to_camera(point);
    if (pc.z <= 0.0) return std::nullopt;  // BEHIND_CAMERA
    const double f = pose.intrinsic[0] * height;
    Pixel px;
    px.u = 0.5 * width + f * pc.x / pc.z;
    px.v = 0.5 * height + f * pc.y / pc.z;
    px.depth = pc.z;
    return px;
}

std::string scene_pair_to_json(const ShoeboxScene& shoebox, const DetailedScene& detail) {
    nlohmann::json j;
    j["scene_id"] = shoebox.scene_id;
    j["footprint_class"] = to_string(shoebox.footprint_class);
    j["seed"] = shoebox.seed;
    j["boxes"] = nlohmann::json::array();
    for (const Box& b : shoebox.boxes)
        j["boxes"].push_back({{"min", {b.min_corner.x, b.min_corner.y, b.min_corner.z}},
                              {"max", {b.max_corner.x, b.max_corner.y, b.max_corner.z}}});
    nlohmann::json d;
    d["floors"] = detail.floor_count_per_box;
    d["windows"] = nlohmann::json::array();
    for (const auto& [r, c] : detail.window_grid) d["windows"].push_back({r, c});
    d["palette"] = nlohmann::json::array();
    for (const auto& p : detail.facade_palette) d["palette"].push_back({p[0], p[1], p[2]});
    d["roof"] = detail.roof_style == RoofStyle::FLAT ? "FLAT" : "PARAPET";
    j["detail"] = d;
    return j.dump(2);
}

std::pair<ShoeboxScene, DetailedScene> scene_pair_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ShoeboxScene scene;
    scene.scene_id = j.at("scene_id").get<std::string>();
    scene.footprint_class = footprint_from_string(j.at("footprint_class").get<std::string>());
    scene.seed = j.at("seed").get<uint64_t>();
    for (const auto& jb : j.at("boxes")) {
        Box b;
        b.min_corner = {jb.at("min")[0], jb.at("min")[1], jb.at("min")[2]};
        b.max_corner = {jb.at("max")[0], jb.at("max")[1], jb.at("max")[2]};
        scene.boxes.push_back(b);
    }
    DetailedScene detail;
    detail.base = scene;
    const auto& d = j.at("detail");
    detail.floor_count_per_box = d.at("floors").get<std::vector<int>>();
    for (const auto& w : d.at("windows"))
        detail.window_grid.emplace_back(w[0].get<int>(), w[1].get<int>());
    for (size_t i = 0; i < 3; ++i)
        detail.facade_palette[i] = {d.at("palette")[i][0].get<int>(),
                                    d.at("palette")[i][1].get<int>(),
                                    d.at("palette")[i][2].get<int>()};
    detail.roof_style = d.at("roof") == "FLAT" ? RoofStyle::FLAT : RoofStyle::PARAPET;
    return {scene, detail};
}

}  // namespace mvg::geo
