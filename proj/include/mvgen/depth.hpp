#pragma once

#include "mvgen/nn.hpp"
#include "mvgen/renderer.hpp"

namespace mvg::depth {

using ad::Var;

enum class DepthBackend { ORACLE, LEARNED };

struct DepthEstimatorConfig {
    DepthBackend backend = DepthBackend::LEARNED;
    int encoder_levels = 3;
    int base_channels = 12;
    uint64_t seed = 0;
};

// Monocular relative-depth estimator. ORACLE passes renderer ground truth
// through bit-exactly; LEARNED is a small multi-scale encoder-decoder with
// skip connections whose output is defined up to scale and shift.
class Estimator {
public:
    explicit Estimator(const DepthEstimatorConfig& cfg);

    // ORACLE requires ctx (the renderer depth for this view); throws
    // ORACLE_CONTEXT_MISSING without it.
    render::DepthMap estimate(const render::Image& image,
                              const render::DepthMap* ctx = nullptr);

    // Learned forward pass: x [N,3,H,W] -> [N,1,H,W].
    Var forward(const Var& x);

    nn::ParamStore& params() { return ps_; }
    const DepthEstimatorConfig& config() const { return cfg_; }

private:
    DepthEstimatorConfig cfg_;
    nn::ParamStore ps_;
    std::vector<nn::Conv2d> enc_, dec_;
    nn::Conv2d conv_in_, conv_out_;
};

// Least-squares (scale, shift) minimizing sum over valid overlapping pixels of
// (s*pred + t - gt)^2. Throws DEGENERATE_FIT on <2 valid pixels or zero pred
// variance.
std::pair<double, double> align_affine(const render::DepthMap& pred,
                                       const render::DepthMap& gt);

// Mean squared error after affine alignment over valid pixels.
double depth_loss(const render::DepthMap& pred, const render::DepthMap& gt);

// Differentiable flavour: pred [1,1,H,W] var; gt/mask tensors of matching
// spatial shape. The alignment coefficients are treated as constants at their
// optimum, which leaves the gradient exact (envelope condition).
Var depth_loss(const Var& pred, const Tensor& gt, const Tensor& mask);

// Normalize valid depths to [0,1]; invalid pixels get 0. Returns (lo, hi).
std::pair<double, double> normalize_depth(const render::DepthMap& d, Tensor& out,
                                          Tensor& mask);

struct DepthSample {
    render::Image rgb;
    render::DepthMap gt;
};

struct TrainLog {
    std::vector<double> epoch_loss;
};

// Deterministic per seed; throws EMPTY_DATASET. Trains in place.
TrainLog train_estimator(Estimator& est, const std::vector<DepthSample>& dataset,
                         int epochs, uint64_t seed, double lr = 1e-3);

// Affine-aligned RMSE on normalized depth, valid pixels only.
double aligned_rmse(const render::DepthMap& pred, const render::DepthMap& gt);

}  // namespace mvg::depth
