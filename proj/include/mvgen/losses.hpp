#pragma once

#include "mvgen/features.hpp"

namespace mvg::loss {

using ad::Var;
using feat::Extractor;

struct LossWeights {
    double alpha = 1e9;   // style
    double beta = 100.0;  // perceptual
    double gamma = 1.0;   // content consistency
    double delta = 10.0;  // angle alignment
};

struct LossReport {
    double style = 0, percep = 0, content_cos = 0, angle_cos = 0, total = 0;
};

// All functions take aligned generated/reference bundles of [1,3,H,W] vars.
// Adjacent-view sums run i = 1..N-1 as printed; wraparound adds the (N,1)
// pair and is off by default.

Var style_loss(const std::vector<Var>& g, const std::vector<Var>& r, const Extractor& ex);
Var perceptual_loss(const std::vector<Var>& g, const std::vector<Var>& r, const Extractor& ex);
Var content_consistency_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                             const Extractor& ex, bool wraparound = false);
Var angle_alignment_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                         bool wraparound = false);

struct TotalLoss {
    Var total;
    LossReport report;
};
TotalLoss total_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                     const Extractor& ex, const LossWeights& w, bool wraparound = false);

// Value-only conveniences over images.
LossReport total_loss(const std::vector<render::Image>& g,
                      const std::vector<render::Image>& r,
                      const feat::FeatureExtractorConfig& cfg, const LossWeights& w);

}  // namespace mvg::loss
