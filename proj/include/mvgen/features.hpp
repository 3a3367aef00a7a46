#pragma once

#include <vector>

#include "mvgen/autodiff.hpp"
#include "mvgen/renderer.hpp"

namespace mvg::feat {

using ad::Var;

enum class FeatureBackend { TINY_CONV, IDENTITY };

struct FeatureExtractorConfig {
    FeatureBackend backend = FeatureBackend::TINY_CONV;
    uint64_t seed = 0;
    int layer_count = 3;
};

// Fixed-weight (seeded) conv stack standing in for a pretrained backbone.
// Per layer: 3x3 conv, relu, 2x downsample; channel widths 16, 32, 64.
// IDENTITY yields a single layer equal to the input. Weights are immutable
// after construction; extraction is differentiable wrt the image.
class Extractor {
public:
    explicit Extractor(const FeatureExtractorConfig& cfg);

    // x: [1,C,H,W]. Throws IMAGE_TOO_SMALL if a layer's spatial size would
    // reach 0.
    std::vector<Var> operator()(const Var& x) const;

    const FeatureExtractorConfig& config() const { return cfg_; }
    const std::vector<Tensor>& weights() const { return weights_; }

private:
    FeatureExtractorConfig cfg_;
    std::vector<Tensor> weights_;  // [cout,cin,3,3] per layer
};

// Flatten f [1,C,H,W] (or [C,H,W]) to F [C, H*W]; return F*F^T / (C*H*W).
Var gram(const Var& f);

// Image <-> tensor conversion ([1,3,H,W], NCHW).
Tensor image_to_tensor(const render::Image& img);
render::Image tensor_to_image(const Tensor& t);

std::vector<Var> extract(const render::Image& img, const FeatureExtractorConfig& cfg);

}  // namespace mvg::feat
