#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "mvgen/config.hpp"
#include "mvgen/geometry.hpp"
#include "mvgen/manifest.hpp"
#include "mvgen/renderer.hpp"

namespace mvg::pipe {

// Per-bundle evaluation metrics. psnr may be +infinity (identical bundles);
// it is serialized as JSON null in that case.
struct BundleMetrics {
    double psnr = 0;
    double style_consistency = 0;    // adjacent-pair Gram distance of generated views
    double content_consistency = 0;  // feature-space pair term vs references
    double angle_consistency = 0;    // pixel-space pair term vs references
};

struct SceneMetrics {
    std::string scene_id;
    BundleMetrics m;
};

struct MetricsReport {
    std::string tag;  // "RECONSTRUCTION" (train split) | "GENERATION" (test split)
    std::vector<SceneMetrics> per_scene;
    BundleMetrics aggregate;  // mean over scenes
};

nlohmann::json metrics_to_json(const MetricsReport& r);

// Shared code path with the loss module: consistency metrics are the loss
// functions evaluated on adjacent two-view sub-bundles.
BundleMetrics bundle_metrics(const std::vector<render::Image>& generated,
                             const std::vector<render::Image>& references,
                             const feat::FeatureExtractorConfig& fx);

double psnr_db(const render::Image& a, const render::Image& b);

std::string synthesize_prompt(const geo::DetailedScene& scene);

// All stages share one run directory layout under `out_dir`:
//   dataset/{manifest.jsonl, scenes/*.json, images/<scene>/*.png}
//   checkpoints/{diffusion,depth,fusion}.ckpt
//   logs/*.jsonl   samples/<scene>/*.png   metrics_*.json   plots/*.png

// Returns the manifest path. Byte-deterministic for a fixed (config, seed).
std::string build_dataset(const cfg::DatasetConfig& c, uint64_t seed,
                          const std::string& out_dir);

// Each trainer returns its checkpoint path and writes a JSONL loss log.
std::string train_diffusion(const cfg::RunConfig& c, uint64_t seed,
                            const std::string& out_dir);
std::string train_depth(const cfg::RunConfig& c, uint64_t seed, const std::string& out_dir);
std::string train_fusion(const cfg::RunConfig& c, uint64_t seed, const std::string& out_dir);

// Samples the eval split and writes PNGs under samples/.
void generate(const cfg::RunConfig& c, uint64_t seed, const std::string& out_dir);

// Samples, computes metrics, writes metrics_<TAG>.json, returns the report.
MetricsReport evaluate(const cfg::RunConfig& c, uint64_t seed, const std::string& out_dir);

// Renders plots from whatever logs/metrics exist in the run directory.
// Throws EMPTY_INPUT when there is nothing to plot.
void make_plots(const std::string& out_dir);

// dataset -> stage-1 train -> depth -> stage-3 train -> evaluate both splits
// -> plot, each stage skipped when its artifact already exists.
void run_pipeline(const cfg::RunConfig& c, uint64_t seed, const std::string& out_dir);

}  // namespace mvg::pipe
