#pragma once

#include "mvgen/features.hpp"
#include "mvgen/losses.hpp"
#include "mvgen/nn.hpp"

namespace mvg::diff {

using ad::Var;

struct DiffusionSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;
};

// Linear beta schedule; throws INVALID_RANGE.
DiffusionSchedule make_schedule(int T, double beta_start, double beta_end);

struct TextPrompt {
    std::vector<int> token_ids;
};

// Hashed-vocabulary tokenizer: whitespace split, FNV-1a hash mod vocab.
TextPrompt tokenize(const std::string& text, int vocab_size = 256, int max_len = 16);

struct MVUNetConfig {
    int base_channels = 16;
    std::vector<int> channel_multipliers = {1, 2};
    std::vector<int> attention_levels = {1};  // cross-view attention; mid level always attends
    int view_embedding_dim = 16;
    int text_embedding_dim = 16;
    int n_views_train = 6;
    int vocab_size = 256;
    int max_prompt_len = 16;
    int time_embedding_dim = 32;
    int view_slots = 60;  // one learned view embedding per azimuth step
};

// Multi-view U-Net with cross-view self-attention, text cross-attention and a
// ControlNet-style conditioning branch (encoder copy injected through
// zero-initialized 1x1 projections at each level).
class MVUNet {
public:
    MVUNet(const MVUNetConfig& cfg, uint64_t seed);

    // x_t: [N,3,H,W]; cond: nullptr or [N,3,H,W] view-aligned with x_t;
    // view_indices: azimuth slot per view. Throws VIEW_MISALIGNMENT.
    Var forward(const Var& x_t, int t, const Var* cond, const TextPrompt& prompt,
                const std::vector<int>& view_indices);

    nn::ParamStore& params() { return ps_; }
    const MVUNetConfig& config() const { return cfg_; }

private:
    struct ResBlock {
        nn::ChannelNorm norm1, norm2;
        nn::Conv2d conv1, conv2, skip;
        nn::Linear temb_proj;
        bool has_skip = false;
        int cout = 0;
        Var operator()(const Var& x, const Var& temb) const;
    };
    struct AttnBlock {
        nn::ChannelNorm norm;
        nn::Linear view_proj, wq, wk, wv, wo;          // cross-view self-attention
        nn::Linear twq, twk, twv, two;                 // text cross-attention
        Var operator()(const Var& x, const Var& view_vecs, const Var& text_emb) const;
    };

    ResBlock make_res(const std::string& name, int cin, int cout, Rng& rng);
    AttnBlock make_attn(const std::string& name, int c, Rng& rng);

    MVUNetConfig cfg_;
    nn::ParamStore ps_;
    Tensor text_table_;  // fixed seeded hash-embedding table [vocab, text_dim]
    Var view_table_;     // learned [view_slots, view_embedding_dim]
    nn::Linear temb_mlp1_, temb_mlp2_, text_pool_proj_;
    nn::Conv2d conv_in_, conv_out_;
    nn::ChannelNorm norm_out_;
    std::vector<ResBlock> enc_res_, dec_res_;
    std::vector<AttnBlock> enc_attn_, dec_attn_;  // empty slots for levels without attention
    std::vector<bool> level_has_attn_;
    std::vector<nn::Conv2d> down_, up_;
    ResBlock mid_res1_, mid_res2_;
    AttnBlock mid_attn_;
    // Conditioning branch: encoder copy + zero-initialized injections.
    nn::Conv2d cond_conv_in_;
    std::vector<ResBlock> cond_res_;
    std::vector<nn::Conv2d> cond_down_, cond_inject_;
};

// Forward process: x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) noise.
Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const DiffusionSchedule& s);
// x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t), clamped to [0,1].
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t, const DiffusionSchedule& s);
// Var flavour used inside the training graph.
Var predict_x0(const Var& x_t, const Var& eps_hat, int t, const DiffusionSchedule& s);

struct TrainBatch {
    Tensor cond;  // shoebox views [N,3,H,W]
    Tensor ref;   // detailed views [N,3,H,W]
    TextPrompt prompt;
    std::vector<int> view_indices;
};

struct StepResult {
    double objective = 0;
    double noise_mse = 0;
    loss::LossReport image_loss;
};

// One optimizer step: objective = MSE(eps, eps_hat) + lambda_img * L_total(x0_hat, ref).
StepResult training_step(MVUNet& model, const TrainBatch& batch,
                         const DiffusionSchedule& sched, const feat::Extractor& ex,
                         const loss::LossWeights& w, double lambda_img, Rng& rng,
                         nn::Adam& opt);

enum class Sampler { DDPM, DDIM };

// Returns generated views [N,3,H,W] in [0,1]. DDIM is deterministic per seed.
Tensor sample(MVUNet& model, const Tensor& cond, const TextPrompt& prompt,
              const std::vector<int>& view_indices, const DiffusionSchedule& sched,
              Sampler sampler, int steps, uint64_t seed);

// Deterministic DDIM round-trip: inverts x0 to the noisiest visited step and
// decodes it back. Measures how faithfully the model reproduces known views.
Tensor reconstruct(MVUNet& model, const Tensor& x0, const Tensor& cond,
                   const TextPrompt& prompt, const std::vector<int>& view_indices,
                   const DiffusionSchedule& sched, int steps);

}  // namespace mvg::diff
