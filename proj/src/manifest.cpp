#include "mvgen/manifest.hpp"

#include <fstream>

#include "json.hpp"

#include "mvgen/tensor.hpp"

namespace mvg::data {

using nlohmann::json;

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
    std::ofstream out(path);
    require(out.good(), "IO_ERROR", "cannot open manifest for writing: " + path);
    for (const auto& r : records) {
        json j = {
            {"scene_id", r.scene_id},
            {"split", r.split},
            {"view_index", r.view_index},
            {"azimuth_deg", r.azimuth_deg},
            {"elevation_deg", r.elevation_deg},
            {"shoebox_rgb_path", r.shoebox_rgb_path},
            {"detail_rgb_path", r.detail_rgb_path},
            {"depth_path", r.depth_path},
            {"depth_min", r.depth_min},
            {"depth_max", r.depth_max},
            {"prompt", r.prompt},
        };
        out << j.dump() << '\n';
    }
    require(out.good(), "IO_ERROR", "failed writing manifest: " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "IO_ERROR", "cannot open manifest: " + path);
    std::vector<ManifestRecord> records;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        require(!j.is_discarded(), "MANIFEST_PARSE",
                "bad JSON at line " + std::to_string(lineno) + " of " + path);
        ManifestRecord r;
        r.scene_id = j.at("scene_id").get<std::string>();
        r.split = j.at("split").get<std::string>();
        require(r.split == "train" || r.split == "test", "MANIFEST_PARSE",
                "unknown split '" + r.split + "' at line " + std::to_string(lineno));
        r.view_index = j.at("view_index").get<int>();
        r.azimuth_deg = j.at("azimuth_deg").get<double>();
        r.elevation_deg = j.at("elevation_deg").get<double>();
        r.shoebox_rgb_path = j.at("shoebox_rgb_path").get<std::string>();
        r.detail_rgb_path = j.at("detail_rgb_path").get<std::string>();
        r.depth_path = j.at("depth_path").get<std::string>();
        r.depth_min = j.at("depth_min").get<double>();
        r.depth_max = j.at("depth_max").get<double>();
        r.prompt = j.at("prompt").get<std::string>();
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<std::string> scene_ids(const std::vector<ManifestRecord>& records,
                                   const std::string& split) {
    std::vector<std::string> ids;
    for (const auto& r : records) {
        if (r.split != split) continue;
        if (ids.empty() || ids.back() != r.scene_id) {
            bool seen = false;
            for (const auto& s : ids)
                if (s == r.scene_id) { seen = true; break; }
            if (!seen) ids.push_back(r.scene_id);
        }
    }
    return ids;
}

std::vector<ManifestRecord> records_for_scene(const std::vector<ManifestRecord>& records,
                                              const std::string& scene_id) {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
        if (r.scene_id == scene_id) out.push_back(r);
    std::sort(out.begin(), out.end(),
              [](const ManifestRecord& a, const ManifestRecord& b) {
                  return a.view_index < b.view_index;
              });
    return out;
}

}  // namespace mvg::data
