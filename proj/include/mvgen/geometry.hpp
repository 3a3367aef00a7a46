#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mvgen/tensor.hpp"

namespace mvg::geo {

struct Vec3 {
    double x = 0, y = 0, z = 0;
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
};

struct Box {
    Vec3 min_corner, max_corner;
    Vec3 center() const { return (min_corner + max_corner) * 0.5; }
    Vec3 extent() const { return max_corner - min_corner; }
    bool valid() const {
        return min_corner.x < max_corner.x && min_corner.y < max_corner.y &&
               min_corner.z < max_corner.z;
    }
};

enum class FootprintClass { I, L, U, O, COMPLEX };

std::string to_string(FootprintClass c);
FootprintClass footprint_from_string(const std::string& s);

struct ShoeboxScene {
    std::string scene_id;
    uint64_t seed = 0;
    FootprintClass footprint_class = FootprintClass::I;
    std::vector<Box> boxes;

    Box bounding_box() const;
    // Center + radius of the bounding sphere of the bounding box.
    std::pair<Vec3, double> bounding_sphere() const;
};

enum class RoofStyle { FLAT, PARAPET };

struct DetailedScene {
    ShoeboxScene base;
    std::vector<int> floor_count_per_box;
    std::vector<std::pair<int, int>> window_grid;  // (rows, cols) per box
    std::array<std::array<int, 3>, 3> facade_palette;  // RGB in [0,255]
    RoofStyle roof_style = RoofStyle::FLAT;
};

struct CameraRig {
    int n_views = 60;
    double azimuth_step_deg = 6.0;
    double elevation_deg = 30.0;
    double radius = 0.0;
    Vec3 look_at;
    double fov_y_deg = 40.0;
};

struct CameraPose {
    double azimuth_deg = 0, elevation_deg = 0, radius = 0;
    Vec3 position;
    Vec3 look_at;
    double fov_y_deg = 40.0;
    // World->camera rigid transform, row-major 4x4. Camera frame: x right,
    // y down, z forward.
    std::array<double, 16> extrinsic{};
    // Normalized-by-image-height intrinsics: [[f,0,.5],[0,f,.5],[0,0,1]].
    std::array<double, 9> intrinsic{};

    Vec3 world_to_camera(const Vec3& p) const;
};

struct Pixel {
    double u = 0, v = 0;
    double depth = 0;
};

// --- scene generation -------------------------------------------------------

std::pair<ShoeboxScene, DetailedScene> generate_paired_scene(uint64_t seed,
                                                             FootprintClass cls);

// Boxes sharing a face (zero-volume, positive-area contact).
bool boxes_adjacent(const Box& a, const Box& b);
std::vector<std::pair<int, int>> adjacency_edges(const ShoeboxScene& scene);

// --- camera rig --------------------------------------------------------------

CameraPose make_pose(double azimuth_deg, double elevation_deg, double radius,
                     const Vec3& look_at, double fov_y_deg);

// Default rig framing a scene: look_at = bbox center, radius = 2.5 x bounding
// sphere radius.
CameraRig default_rig(const ShoeboxScene& scene, int n_views = 60,
                      double azimuth_step_deg = 6.0, double elevation_deg = 30.0,
                      double fov_y_deg = 40.0);

// Throws RADIUS_INSIDE_SCENE if rig.radius <= bound radius.
std::vector<CameraPose> rig_poses(const CameraRig& rig,
                                  const std::pair<Vec3, double>& scene_bound);

// Returns nullopt (BEHIND_CAMERA) when camera-space depth <= 0.
std::optional<Pixel> project(const Vec3& point, const CameraPose& pose, int width,
                             int height);

// --- serialization -----------------------------------------------------------

std::string scene_pair_to_json(const ShoeboxScene& shoebox, const DetailedScene& detail);
std::pair<ShoeboxScene, DetailedScene> scene_pair_from_json(const std::string& text);

}  // namespace mvg::geo
