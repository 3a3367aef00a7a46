#pragma once

#include <string>
#include <vector>

namespace mvg::data {

// One JSON-lines record per rendered view.
struct ManifestRecord {
    std::string scene_id;
    std::string split;  // "train" | "test"
    int view_index = 0;
    double azimuth_deg = 0, elevation_deg = 0;
    std::string shoebox_rgb_path, detail_rgb_path, depth_path;
    double depth_min = 0, depth_max = 0;
    std::string prompt;
};

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

// Scene ids per split, in first-appearance order.
std::vector<std::string> scene_ids(const std::vector<ManifestRecord>& records,
                                   const std::string& split);
std::vector<ManifestRecord> records_for_scene(const std::vector<ManifestRecord>& records,
                                              const std::string& scene_id);

}  // namespace mvg::data
