#pragma once

#include <string>

#include "json.hpp"

#include "mvgen/depth.hpp"
#include "mvgen/diffusion.hpp"
#include "mvgen/fusion.hpp"
#include "mvgen/losses.hpp"

namespace mvg::cfg {

struct DatasetConfig {
    int n_scenes = 210;
    int n_views = 60;
    double azimuth_step_deg = 6.0;
    double elevation_deg = 30.0;
    double fov_y_deg = 40.0;
    int resolution = 64;
    double split_ratio = 0.9;
};

struct DiffusionTrainConfig {
    diff::MVUNetConfig unet;
    int timesteps = 200;
    // beta_end chosen so alphas_cumprod[T-1] < 0.05 at T=200: sampling starts
    // from pure noise, so the forward process must destroy the signal by T.
    double beta_start = 1e-4, beta_end = 5e-2;
    int steps = 2000;
    double lr = 1e-3;
    double lambda_img = 1e-4;
    loss::LossWeights weights;
    feat::FeatureBackend feature_backend = feat::FeatureBackend::TINY_CONV;
    uint64_t feature_seed = 17;
    int resolution = 32;       // training render resolution
    int max_scenes = 0;        // 0 = all train scenes
    int log_every = 50;
};

struct DepthTrainConfig {
    depth::DepthEstimatorConfig estimator;
    int epochs = 10;
    double lr = 1e-3;
    int resolution = 32;
    int max_scenes = 20;
    int views_per_scene = 4;
};

struct FusionTrainConfig {
    fusion::FusionConfig net;
    int steps = 300;
    double lr = 1e-3;
    double lambda_consistency = 1e-6;
    int resolution = 32;
    int max_scenes = 4;
    depth::DepthBackend depth_backend = depth::DepthBackend::ORACLE;
};

struct EvalConfig {
    std::string split = "test";
    std::string stage = "stage1";  // "stage1" | "stage3"
    int sample_steps = 20;         // DDIM steps
    int max_scenes = 2;
    int resolution = 32;
    depth::DepthBackend depth_backend = depth::DepthBackend::ORACLE;
};

struct RunConfig {
    DatasetConfig dataset;
    DiffusionTrainConfig diffusion;
    DepthTrainConfig depth;
    FusionTrainConfig fusion;
    EvalConfig eval;
};

// Parses and validates. Unknown keys and out-of-range values raise
// CONFIG_INVALID with a dotted key path in the message.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json config_to_json(const RunConfig& c);

// Human-readable schema (key, type, default, constraint) as JSON text.
std::string config_schema();

}  // namespace mvg::cfg
