#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "mvgen/geometry.hpp"

using namespace mvg;
using geo::FootprintClass;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent adjacency-graph checker (written against Box coordinates only,
// not the generator's internals).
std::vector<std::vector<int>> adjacency(const geo::ShoeboxScene& s) {
    const int n = static_cast<int>(s.boxes.size());
    std::vector<std::vector<int>> g(n);
    auto touch = [](double a0, double a1, double b0, double b1) {
        return std::min(a1, b1) - std::max(a0, b0) > 1e-12;  // positive overlap
    };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const geo::Box &a = s.boxes[i], &b = s.boxes[j];
            int shared_face = 0;
            // One axis where the intervals meet at a point, two with overlap.
            struct Axis {
                double a0, a1, b0, b1;
            };
            const Axis ax[3] = {{a.min_corner.x, a.max_corner.x, b.min_corner.x, b.max_corner.x},
                                {a.min_corner.y, a.max_corner.y, b.min_corner.y, b.max_corner.y},
                                {a.min_corner.z, a.max_corner.z, b.min_corner.z, b.max_corner.z}};
            int touching = 0, overlapping = 0;
            for (const Axis& x : ax) {
                if (std::abs(x.a1 - x.b0) < 1e-9 || std::abs(x.b1 - x.a0) < 1e-9) ++touching;
                else if (touch(x.a0, x.a1, x.b0, x.b1)) ++overlapping;
            }
            shared_face = (touching >= 1 && overlapping == 2) ? 1 : 0;
            if (shared_face) {
                g[i].push_back(j);
                g[j].push_back(i);
            }
        }
    return g;
}

bool has_cycle(const std::vector<std::vector<int>>& g) {
    // Connected graph with #edges >= #vertices has a cycle.
    size_t edges = 0;
    for (const auto& adj : g) edges += adj.size();
    return edges / 2 >= g.size() && g.size() >= 3;
}

bool is_path(const std::vector<std::vector<int>>& g) {
    int deg1 = 0;
    for (const auto& adj : g) {
        if (adj.empty()) return false;
        if (adj.size() == 1) ++deg1;
        if (adj.size() > 2) return false;
    }
    return deg1 == 2 && !has_cycle(g);
}

}  // namespace

TEST_CASE("paired scene generation is deterministic and geometry-identical") {
    for (int c = 0; c < 5; ++c) {
        auto cls = static_cast<FootprintClass>(c);
        auto [s1, d1] = geo::generate_paired_scene(7, cls);
        auto [s2, d2] = geo::generate_paired_scene(7, cls);
        REQUIRE(s1.boxes.size() == s2.boxes.size());
        REQUIRE(s1.boxes.size() == d1.base.boxes.size());
        for (size_t i = 0; i < s1.boxes.size(); ++i) {
            CHECK(s1.boxes[i].min_corner.x == s2.boxes[i].min_corner.x);
            CHECK(s1.boxes[i].max_corner.z == s2.boxes[i].max_corner.z);
            // Detailed scene shares identical box geometry with the shoebox.
            CHECK(s1.boxes[i].min_corner.x == d1.base.boxes[i].min_corner.x);
            CHECK(s1.boxes[i].min_corner.y == d1.base.boxes[i].min_corner.y);
            CHECK(s1.boxes[i].min_corner.z == d1.base.boxes[i].min_corner.z);
            CHECK(s1.boxes[i].max_corner.x == d1.base.boxes[i].max_corner.x);
            CHECK(s1.boxes[i].max_corner.y == d1.base.boxes[i].max_corner.y);
            CHECK(s1.boxes[i].max_corner.z == d1.base.boxes[i].max_corner.z);
        }
        // Identical bounding boxes.
        geo::Box bs = s1.bounding_box(), bd = d1.base.bounding_box();
        CHECK(bs.min_corner.x == bd.min_corner.x);
        CHECK(bs.max_corner.y == bd.max_corner.y);
    }
}

TEST_CASE("scene invariants: valid boxes, detail fields in range") {
    for (uint64_t seed : {1ULL, 7ULL, 99ULL, 12345ULL})
        for (int c = 0; c < 5; ++c) {
            auto [s, d] = geo::generate_paired_scene(seed, static_cast<FootprintClass>(c));
            CHECK(!s.boxes.empty());
            for (const auto& b : s.boxes) CHECK(b.valid());
            for (int f : d.floor_count_per_box) CHECK(f >= 1);
            for (const auto& row : d.facade_palette)
                for (int v : row) {
                    CHECK(v >= 0);
                    CHECK(v <= 255);
                }
        }
}

TEST_CASE("U footprint is a path, O footprint contains a cycle") {
    auto [u, ud] = geo::generate_paired_scene(7, FootprintClass::U);
    CHECK(u.boxes.size() == 3);
    CHECK(is_path(adjacency(u)));

    for (uint64_t seed : {1ULL, 7ULL, 42ULL, 1000ULL}) {
        auto [o, od] = geo::generate_paired_scene(seed, FootprintClass::O);
        CHECK(has_cycle(adjacency(o)));
    }
}

TEST_CASE("I is a single box, L is two adjacent boxes") {
    auto [i, id] = geo::generate_paired_scene(7, FootprintClass::I);
    CHECK(i.boxes.size() == 1);
    auto [l, ld] = geo::generate_paired_scene(7, FootprintClass::L);
    CHECK(l.boxes.size() == 2);
    CHECK(geo::boxes_adjacent(l.boxes[0], l.boxes[1]));
}

TEST_CASE("rig poses: count, azimuth schedule, elevation") {
    auto [s, d] = geo::generate_paired_scene(3, FootprintClass::I);
    geo::CameraRig rig = geo::default_rig(s);
    auto poses = geo::rig_poses(rig, s.bounding_sphere());
    REQUIRE(poses.size() == 60);
    CHECK(poses[0].azimuth_deg == doctest::Approx(0.0));
    CHECK(poses[15].azimuth_deg == doctest::Approx(90.0));
    CHECK(poses[30].azimuth_deg == doctest::Approx(180.0));
    for (const auto& p : poses) CHECK(p.elevation_deg == doctest::Approx(30.0));
    // Steps sum to 360 within 1e-9.
    double total = 0;
    for (size_t k = 1; k < poses.size(); ++k)
        total += poses[k].azimuth_deg - poses[k - 1].azimuth_deg;
    total += 360.0 - poses.back().azimuth_deg;
    CHECK(total == doctest::Approx(360.0).epsilon(1e-12));

    // Pose 30 is antipodal to pose 0 in the horizontal plane.
    const auto& c = rig.look_at;
    CHECK(poses[30].position.x - c.x == doctest::Approx(-(poses[0].position.x - c.x)).epsilon(1e-9));
    CHECK(poses[30].position.y - c.y == doctest::Approx(-(poses[0].position.y - c.y)).epsilon(1e-9));
    CHECK(poses[30].position.z == doctest::Approx(poses[0].position.z).epsilon(1e-12));
}

TEST_CASE("pose positions match an independent trig oracle") {
    auto [s, d] = geo::generate_paired_scene(11, FootprintClass::L);
    geo::CameraRig rig = geo::default_rig(s);
    auto poses = geo::rig_poses(rig, s.bounding_sphere());
    for (int k : {0, 7, 15, 30, 45, 59}) {
        const double az = k * 6.0 * kPi / 180.0, el = 30.0 * kPi / 180.0;
        const double r = rig.radius;
        CHECK(poses[k].position.x ==
              doctest::Approx(rig.look_at.x + r * std::cos(el) * std::cos(az)).epsilon(1e-12));
        CHECK(poses[k].position.y ==
              doctest::Approx(rig.look_at.y + r * std::cos(el) * std::sin(az)).epsilon(1e-12));
        CHECK(poses[k].position.z ==
              doctest::Approx(rig.look_at.z + r * std::sin(el)).epsilon(1e-12));
    }
}

TEST_CASE("degenerate rig: one view at azimuth 0") {
    auto [s, d] = geo::generate_paired_scene(5, FootprintClass::I);
    geo::CameraRig rig = geo::default_rig(s, 1, 360.0);
    auto poses = geo::rig_poses(rig, s.bounding_sphere());
    REQUIRE(poses.size() == 1);
    CHECK(poses[0].azimuth_deg == 0.0);
}

TEST_CASE("radius inside the scene is rejected") {
    auto [s, d] = geo::generate_paired_scene(5, FootprintClass::COMPLEX);
    geo::CameraRig rig = geo::default_rig(s);
    rig.radius = s.bounding_sphere().second * 0.5;
    CHECK_THROWS_WITH_AS(geo::rig_poses(rig, s.bounding_sphere()),
                         doctest::Contains("RADIUS_INSIDE_SCENE"), std::runtime_error);
}

TEST_CASE("extrinsic rotations are orthonormal with det +1") {
    auto [s, d] = geo::generate_paired_scene(13, FootprintClass::U);
    auto poses = geo::rig_poses(geo::default_rig(s), s.bounding_sphere());
    for (const auto& p : poses) {
        const auto& e = p.extrinsic;
        double r[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r[i][j] = e[i * 4 + j];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double dot = 0;
                for (int k = 0; k < 3; ++k) dot += r[i][k] * r[j][k];
                CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
            }
        double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        CHECK(det == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("projection: look_at center, depth = radius; behind camera rejected") {
    auto [s, d] = geo::generate_paired_scene(17, FootprintClass::I);
    geo::CameraRig rig = geo::default_rig(s);
    auto poses = geo::rig_poses(rig, s.bounding_sphere());
    for (int k : {0, 20, 40}) {
        auto px = geo::project(rig.look_at, poses[k], 64, 64);
        REQUIRE(px.has_value());
        CHECK(px->u == doctest::Approx(32.0).epsilon(1e-6));
        CHECK(px->v == doctest::Approx(32.0).epsilon(1e-6));
        CHECK(px->depth == doctest::Approx(rig.radius).epsilon(1e-12));
        CHECK_FALSE(geo::project(poses[k].position, poses[k], 64, 64).has_value());
    }
}

TEST_CASE("projection matches an independent pinhole oracle") {
    // Fixed pose, unit-cube corner, projection recomputed from first
    // principles (rotate into camera frame, divide, scale by intrinsics).
    geo::CameraPose pose = geo::make_pose(30.0, 30.0, 4.0, {0, 0, 0}, 40.0);
    geo::Vec3 corner{0.5, 0.5, 0.5};
    const int w = 128, h = 128;
    auto px = geo::project(corner, pose, w, h);
    REQUIRE(px.has_value());

    geo::Vec3 pc = pose.world_to_camera(corner);
    CHECK(pc.z > 0);
    const double f = 0.5 / std::tan(0.5 * 40.0 * kPi / 180.0);
    const double u = (f * pc.x / pc.z + 0.5 * (static_cast<double>(w) / h)) * h;
    const double v = (f * pc.y / pc.z + 0.5) * h;
    CHECK(px->u == doctest::Approx(u).epsilon(1e-9));
    CHECK(px->v == doctest::Approx(v).epsilon(1e-9));
    CHECK(px->depth == doctest::Approx(pc.z).epsilon(1e-12));
}

TEST_CASE("scene JSON round trip preserves every field") {
    auto [s, d] = geo::generate_paired_scene(23, FootprintClass::COMPLEX);
    s.scene_id = "scene_0042";
    d.base.scene_id = "scene_0042";
    std::string text = geo::scene_pair_to_json(s, d);
    auto [s2, d2] = geo::scene_pair_from_json(text);
    CHECK(s2.scene_id == "scene_0042");
    CHECK(s2.footprint_class == s.footprint_class);
    CHECK(s2.seed == s.seed);
    REQUIRE(s2.boxes.size() == s.boxes.size());
    for (size_t i = 0; i < s.boxes.size(); ++i) {
        CHECK(s2.boxes[i].min_corner.x == s.boxes[i].min_corner.x);
        CHECK(s2.boxes[i].max_corner.y == s.boxes[i].max_corner.y);
    }
    CHECK(d2.floor_count_per_box == d.floor_count_per_box);
    CHECK(d2.window_grid == d.window_grid);
    CHECK(d2.facade_palette == d.facade_palette);
    CHECK(d2.roof_style == d.roof_style);
}
