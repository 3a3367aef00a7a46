#pragma once

#include "mvgen/losses.hpp"
#include "mvgen/nn.hpp"
#include "mvgen/renderer.hpp"

namespace mvg::fusion {

using ad::Var;

struct FusionConfig {
    int depth_levels = 3;              // depth encoder pyramid depth
    bool residual_attention = true;    // always true; kept for the checkpoint snapshot
    std::vector<int> attention_levels = {1};  // U-Net levels with depth-aware cross-attention
    int shared_latent_dim = 16;
    int base_channels = 16;
    std::vector<int> channel_multipliers = {1, 2};
};

// Stage-3 refinement U-Net. All residual paths (depth-aware cross-attention
// output projections and the final image delta) are zero-initialized, so an
// untrained model is an exact identity on the image bundle.
class FusionNet {
public:
    FusionNet(const FusionConfig& cfg, uint64_t seed);

    // depth+mask input [N,2,H,W] -> per-level features, level l at input
    // resolution / 2^l, projected to shared_latent_dim.
    std::vector<Var> encode_depth(const Var& depth_mask) const;

    // images [N,3,H,W], depth_mask [N,2,H,W]; output clamped to [0,1].
    Var forward(const Var& images, const Var& depth_mask) const;

    // Convenience over bundles; depths normalized per view, invalid fed as 0
    // with mask channel appended. Throws VIEW_MISALIGNMENT.
    render::ViewBundle refine_bundle(const render::ViewBundle& images,
                                     const std::vector<render::DepthMap>& depths) const;

    nn::ParamStore& params() { return ps_; }
    const FusionConfig& config() const { return cfg_; }

    static Tensor pack_depth(const render::DepthMap& d);  // [1,2,H,W], normalized

private:
    struct ResBlock {
        nn::ChannelNorm norm1, norm2;
        nn::Conv2d conv1, conv2, skip;
        bool has_skip = false;
        Var operator()(const Var& x) const;
    };
    struct DepthAttn {
        nn::ChannelNorm norm;
        nn::Linear wq, wk, wv, wo;  // wo zero-initialized
        Var operator()(const Var& x, const Var& depth_tokens) const;
    };

    ResBlock make_res(const std::string& name, int cin, int cout, Rng& rng);

    FusionConfig cfg_;
    nn::ParamStore ps_;
    std::vector<nn::Conv2d> depth_enc_;
    nn::Conv2d conv_in_, conv_out_;
    std::vector<ResBlock> enc_res_, dec_res_;
    std::vector<DepthAttn> enc_attn_, dec_attn_;
    std::vector<bool> level_has_attn_;
    std::vector<nn::Conv2d> down_, up_;
    ResBlock mid_;
};

struct FusionSample {
    Tensor images;      // stage-1 outputs [N,3,H,W]
    Tensor depth_mask;  // [N,2,H,W]
    Tensor refs;        // references [N,3,H,W]
};

struct FusionTrainLog {
    std::vector<double> step_objective;
};

// objective = perceptual reconstruction to references + image-space
// consistency terms; deterministic per seed. Throws EMPTY_DATASET.
FusionTrainLog train_fusion(FusionNet& net, const std::vector<FusionSample>& dataset,
                            int steps, const loss::LossWeights& w, double lambda_consistency,
                            uint64_t seed, double lr = 1e-3,
                            const feat::FeatureExtractorConfig& excfg = {});

}  // namespace mvg::fusion
