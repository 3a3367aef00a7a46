#include "mvgen/diffusion.hpp"

#include <cmath>
#include <sstream>

namespace mvg::diff {

DiffusionSchedule make_schedule(int T, double beta_start, double beta_end) {
    require(T >= 1, "INVALID_RANGE", "T must be >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "INVALID_RANGE",
            "need 0 < beta_start <= beta_end < 1");
    DiffusionSchedule s;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));
    s.alphas_cumprod.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.betas[static_cast<size_t>(t)] =
            T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
        prod *= 1.0 - s.betas[static_cast<size_t>(t)];
        s.alphas_cumprod[static_cast<size_t>(t)] = prod;
    }
    return s;
}

TextPrompt tokenize(const std::string& text, int vocab_size, int max_len) {
    TextPrompt p;
    std::istringstream iss(text);
    std::string word;
    while (iss >> word && static_cast<int>(p.token_ids.size()) < max_len) {
        uint64_t h = 1469598103934665603ULL;  // FNV-1a
        for (char c : word) {
            h ^= static_cast<uint8_t>(c);
            h *= 1099511628211ULL;
        }
        p.token_ids.push_back(static_cast<int>(h % static_cast<uint64_t>(vocab_size)));
    }
    if (p.token_ids.empty()) p.token_ids.push_back(0);
    return p;
}

// --- MVUNet -----------------------------------------------------------------

Var MVUNet::ResBlock::operator()(const Var& x, const Var& temb) const {
    Var h = conv1(ad::silu(norm1(x)));
    h = ad::add_channel_vec(h, ad::reshape(temb_proj(temb), {cout}));
    h = conv2(ad::silu(norm2(h)));
    Var s = has_skip ? skip(x) : x;
    return ad::add(h, s);
}

Var MVUNet::AttnBlock::operator()(const Var& x, const Var& view_vecs,
                                  const Var& text_emb) const {
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    // Cross-view self-attention: one joint token sequence over all views,
    // each token tagged with its view embedding.
    Var tokens = ad::nchw_to_rows(norm(x));
    tokens = ad::add(tokens, ad::repeat_rows_block(view_proj(view_vecs), h * w));
    Var attn = nn::attention(wq(tokens), wk(tokens), wv(tokens));
    Var out = ad::add(x, ad::rows_to_nchw(wo(attn), n, c, h, w));

    // Text cross-attention: image tokens attend to prompt embeddings.
    Var tokens2 = ad::nchw_to_rows(norm(out));
    Var tattn = nn::attention(twq(tokens2), twk(text_emb), twv(text_emb));
    return ad::add(out, ad::rows_to_nchw(two(tattn), n, c, h, w));
}

MVUNet::ResBlock MVUNet::make_res(const std::string& name, int cin, int cout, Rng& rng) {
    ResBlock rb;
    rb.cout = cout;
    rb.norm1 = nn::ChannelNorm(ps_, name + ".norm1", cin);
    rb.conv1 = nn::Conv2d(ps_, name + ".conv1", cin, cout, 3, 1, 1, rng);
    rb.norm2 = nn::ChannelNorm(ps_, name + ".norm2", cout);
    rb.conv2 = nn::Conv2d(ps_, name + ".conv2", cout, cout, 3, 1, 1, rng);
    rb.temb_proj = nn::Linear(ps_, name + ".temb", cfg_.time_embedding_dim, cout, rng);
    rb.has_skip = cin != cout;
    if (rb.has_skip) rb.skip = nn::Conv2d(ps_, name + ".skip", cin, cout, 1, 1, 0, rng);
    return rb;
}

MVUNet::AttnBlock MVUNet::make_attn(const std::string& name, int c, Rng& rng) {
    AttnBlock ab;
    ab.norm = nn::ChannelNorm(ps_, name + ".norm", c);
    ab.view_proj = nn::Linear(ps_, name + ".viewp", cfg_.view_embedding_dim, c, rng);
    ab.wq = nn::Linear(ps_, name + ".wq", c, c, rng);
    ab.wk = nn::Linear(ps_, name + ".wk", c, c, rng);
    ab.wv = nn::Linear(ps_, name + ".wv", c, c, rng);
    ab.wo = nn::Linear(ps_, name + ".wo", c, c, rng);
    ab.twq = nn::Linear(ps_, name + ".twq", c, c, rng);
    ab.twk = nn::Linear(ps_, name + ".twk", cfg_.text_embedding_dim, c, rng);
    ab.twv = nn::Linear(ps_, name + ".twv", cfg_.text_embedding_dim, c, rng);
    ab.two = nn::Linear(ps_, name + ".two", c, c, rng);
    return ab;
}

MVUNet::MVUNet(const MVUNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
    require(cfg.channel_multipliers.size() >= 2, "INVALID_CONFIG", "need >= 2 levels");
    require(!cfg.attention_levels.empty(), "INVALID_CONFIG",
            "attention must be enabled on at least one level");
    require(cfg.n_views_train >= 2, "INVALID_CONFIG", "n_views_train >= 2");
    Rng rng(seed ^ 0x11F0ULL);

    // Fixed hash-embedding table for the text vocabulary.
    Rng text_rng(seed ^ 0x7E27ULL);
    text_table_ = Tensor::randn({cfg.vocab_size, cfg.text_embedding_dim}, text_rng, 0.5);

    view_table_ = ps_.create("view_table",
                             Tensor::randn({cfg.view_slots, cfg.view_embedding_dim}, rng, 0.1));
    temb_mlp1_ = nn::Linear(ps_, "temb1", cfg.time_embedding_dim, cfg.time_embedding_dim, rng);
    temb_mlp2_ = nn::Linear(ps_, "temb2", cfg.time_embedding_dim, cfg.time_embedding_dim, rng);
    text_pool_proj_ = nn::Linear(ps_, "text_pool", cfg.text_embedding_dim,
                                 cfg.time_embedding_dim, rng);

    const int L = static_cast<int>(cfg.channel_multipliers.size());
    auto ch = [&](int l) { return cfg.base_channels * cfg.channel_multipliers[static_cast<size_t>(l)]; };
    level_has_attn_.assign(static_cast<size_t>(L), false);
    for (int l : cfg.attention_levels) {
        require(l >= 0 && l < L, "INVALID_CONFIG", "attention level out of range");
        level_has_attn_[static_cast<size_t>(l)] = true;
    }

    conv_in_ = nn::Conv2d(ps_, "conv_in", 3, ch(0), 3, 1, 1, rng);
    enc_attn_.resize(static_cast<size_t>(L));
    dec_attn_.resize(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        enc_res_.push_back(make_res("enc" + std::to_string(l), ch(l), ch(l), rng));
        if (level_has_attn_[static_cast<size_t>(l)])
            enc_attn_[static_cast<size_t>(l)] = make_attn("enc_attn" + std::to_string(l), ch(l), rng);
        if (l + 1 < L)
            down_.push_back(nn::Conv2d(ps_, "down" + std::to_string(l), ch(l), ch(l + 1), 3, 2, 1, rng));
    }
    mid_res1_ = make_res("mid_res1", ch(L - 1), ch(L - 1), rng);
    mid_attn_ = make_attn("mid_attn", ch(L - 1), rng);
    mid_res2_ = make_res("mid_res2", ch(L - 1), ch(L - 1), rng);
    for (int l = L - 1; l >= 0; --l) {
        dec_res_.push_back(make_res("dec" + std::to_string(l), 2 * ch(l), ch(l), rng));
        if (level_has_attn_[static_cast<size_t>(l)])
            dec_attn_[static_cast<size_t>(l)] = make_attn("dec_attn" + std::to_string(l), ch(l), rng);
        if (l > 0)
            up_.push_back(nn::Conv2d(ps_, "up" + std::to_string(l), ch(l), ch(l - 1), 3, 1, 1, rng));
    }
    norm_out_ = nn::ChannelNorm(ps_, "norm_out", ch(0));
    conv_out_ = nn::Conv2d(ps_, "conv_out", ch(0), 3, 3, 1, 1, rng);

    // Conditioning branch: encoder copy; injection projections start at zero
    // so the branch is a no-op at step 0.
    cond_conv_in_ = nn::Conv2d(ps_, "cond.conv_in", 3, ch(0), 3, 1, 1, rng);
    for (int l = 0; l < L; ++l) {
        cond_res_.push_back(make_res("cond.enc" + std::to_string(l), ch(l), ch(l), rng));
        cond_inject_.push_back(
            nn::Conv2d(ps_, "cond.inject" + std::to_string(l), ch(l), ch(l), 1, 1, 0, rng,
                       /*zero_init=*/true));
        if (l + 1 < L)
            cond_down_.push_back(
                nn::Conv2d(ps_, "cond.down" + std::to_string(l), ch(l), ch(l + 1), 3, 2, 1, rng));
    }
}

Var MVUNet::forward(const Var& x_t, int t, const Var* cond, const TextPrompt& prompt,
                    const std::vector<int>& view_indices) {
    const int n = x_t->val.dim(0);
    require(x_t->val.ndim() == 4 && x_t->val.dim(1) == 3, "SHAPE_MISMATCH",
            "x_t must be [N,3,H,W]");
    require(static_cast<int>(view_indices.size()) == n, "VIEW_MISALIGNMENT",
            "view_indices size != N");
    if (cond) {
        require((*cond)->val.same_shape(x_t->val), "VIEW_MISALIGNMENT",
                "cond bundle not view-aligned with x_t");
    }

    // Timestep + pooled text embedding.
    Var temb = ad::constant(nn::timestep_embedding(t, cfg_.time_embedding_dim));
    temb = temb_mlp2_(ad::silu(temb_mlp1_(temb)));
    Var text_emb = ad::constant([&] {
        Tensor e({static_cast<int>(prompt.token_ids.size()), cfg_.text_embedding_dim});
        for (size_t i = 0; i < prompt.token_ids.size(); ++i) {
            require(prompt.token_ids[i] >= 0 && prompt.token_ids[i] < cfg_.vocab_size,
                    "INDEX_OUT_OF_RANGE", "token id exceeds vocabulary");
            for (int j = 0; j < cfg_.text_embedding_dim; ++j)
                e[static_cast<int64_t>(i) * cfg_.text_embedding_dim + j] =
                    text_table_[static_cast<int64_t>(prompt.token_ids[i]) * cfg_.text_embedding_dim + j];
        }
        return e;
    }());
    temb = ad::add(temb, text_pool_proj_(ad::mean_rows(text_emb)));

    std::vector<int> slots(view_indices);
    for (int& s : slots) {
        require(s >= 0, "VIEW_MISALIGNMENT", "negative view index");
        s %= cfg_.view_slots;
    }
    Var view_vecs = ad::embedding(view_table_, slots);

    const int L = static_cast<int>(cfg_.channel_multipliers.size());
    Var h = conv_in_(x_t);
    Var hc = cond ? cond_conv_in_(*cond) : Var{};

    std::vector<Var> skips;
    for (int l = 0; l < L; ++l) {
        h = enc_res_[static_cast<size_t>(l)](h, temb);
        if (cond) {
            hc = cond_res_[static_cast<size_t>(l)](hc, temb);
            h = ad::add(h, cond_inject_[static_cast<size_t>(l)](hc));
        }
        if (level_has_attn_[static_cast<size_t>(l)])
            h = enc_attn_[static_cast<size_t>(l)](h, view_vecs, text_emb);
        skips.push_back(h);
        if (l + 1 < L) {
            h = down_[static_cast<size_t>(l)](h);
            if (cond) hc = cond_down_[static_cast<size_t>(l)](hc);
        }
    }

    h = mid_res1_(h, temb);
    h = mid_attn_(h, view_vecs, text_emb);
    h = mid_res2_(h, temb);

    for (int i = 0, l = L - 1; l >= 0; --l, ++i) {
        h = dec_res_[static_cast<size_t>(i)](ad::concat_channels(h, skips[static_cast<size_t>(l)]), temb);
        if (level_has_attn_[static_cast<size_t>(l)])
            h = dec_attn_[static_cast<size_t>(l)](h, view_vecs, text_emb);
        if (l > 0) h = up_[static_cast<size_t>(i)](ad::upsample_nearest2(h));
    }

    return conv_out_(ad::silu(norm_out_(h)));
}

// --- schedule algebra ---------------------------------------------------------

namespace {
void check_step(int t, const DiffusionSchedule& s) {
    require(t >= 0 && t < s.T, "STEP_OUT_OF_RANGE",
            "t=" + std::to_string(t) + " for T=" + std::to_string(s.T));
}
}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const DiffusionSchedule& s) {
    check_step(t, s);
    require(x0.same_shape(noise), "SHAPE_MISMATCH", "noise shape != x0 shape");
    const double ab = s.alphas_cumprod[static_cast<size_t>(t)];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    Tensor out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = sa * x0[i] + sb * noise[i];
    return out;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, int t,
                  const DiffusionSchedule& s) {
    check_step(t, s);
    const double ab = s.alphas_cumprod[static_cast<size_t>(t)];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    Tensor out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = std::clamp((x_t[i] - sb * eps_hat[i]) / sa, 0.0, 1.0);
    return out;
}

Var predict_x0(const Var& x_t, const Var& eps_hat, int t, const DiffusionSchedule& s) {
    check_step(t, s);
    const double ab = s.alphas_cumprod[static_cast<size_t>(t)];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    return ad::clamp01(ad::scale(ad::sub(x_t, ad::scale(eps_hat, sb)), 1.0 / sa));
}

// --- training ------------------------------------------------------------------

StepResult training_step(MVUNet& model, const TrainBatch& batch,
                         const DiffusionSchedule& sched, const feat::Extractor& ex,
                         const loss::LossWeights& w, double lambda_img, Rng& rng,
                         nn::Adam& opt) {
    const int n = batch.ref.dim(0);
    require(batch.cond.same_shape(batch.ref), "VIEW_MISALIGNMENT",
            "cond/ref batches differ in shape");
    const int t = static_cast<int>(rng.randint(sched.T));
    Tensor noise = Tensor::randn(batch.ref.shape(), rng);
    Tensor x_t = q_sample(batch.ref, t, noise, sched);

    model.params().zero_grads();
    Var x_t_var = ad::constant(x_t);
    Var cond_var = ad::constant(batch.cond);
    Var eps_hat = model.forward(x_t_var, t, &cond_var, batch.prompt, batch.view_indices);
    Var noise_var = ad::constant(noise);
    Var objective = ad::mse(eps_hat, noise_var);

    StepResult res;
    res.noise_mse = objective->scalar();
    if (lambda_img > 0.0) {
        Var x0_hat = predict_x0(x_t_var, eps_hat, t, sched);
        const int chw = batch.ref.dim(1) * batch.ref.dim(2) * batch.ref.dim(3);
        Var flat = ad::reshape(x0_hat, {n, chw});
        std::vector<Var> g, r;
        for (int i = 0; i < n; ++i) {
            g.push_back(ad::reshape(ad::slice_rows(flat, i, 1),
                                    {1, 3, batch.ref.dim(2), batch.ref.dim(3)}));
            Tensor ri({1, 3, batch.ref.dim(2), batch.ref.dim(3)});
            std::copy(batch.ref.data() + static_cast<int64_t>(i) * chw,
                      batch.ref.data() + static_cast<int64_t>(i + 1) * chw, ri.data());
            r.push_back(ad::constant(std::move(ri)));
        }
        auto img_loss = loss::total_loss(g, r, ex, w);
        res.image_loss = img_loss.report;
        // Gate by alpha_bar: at high noise x0_hat is mostly noise, and an
        // ungated pixel-space term at that scale degrades eps prediction.
        const double ab = sched.alphas_cumprod[static_cast<size_t>(t)];
        objective = ad::add(objective, ad::scale(img_loss.total, lambda_img * ab));
    }
    res.objective = objective->scalar();
    ad::backward(objective);
    opt.step();
    return res;
}

// --- sampling --------------------------------------------------------------------

Tensor sample(MVUNet& model, const Tensor& cond, const TextPrompt& prompt,
              const std::vector<int>& view_indices, const DiffusionSchedule& sched,
              Sampler sampler, int steps, uint64_t seed) {
    require(steps >= 1 && steps <= sched.T, "STEPS_EXCEED_T",
            std::to_string(steps) + " steps for T=" + std::to_string(sched.T));
    ad::NoGradGuard ng;
    Rng rng(seed);
    Tensor x = Tensor::randn(cond.shape(), rng);
    Var cond_var = ad::constant(cond);

    auto eps_at = [&](const Tensor& xt, int t) {
        Var out = model.forward(ad::constant(xt), t, &cond_var, prompt, view_indices);
        return out->val;
    };

    if (sampler == Sampler::DDPM) {
        for (int t = sched.T - 1; t >= 0; --t) {
            const Tensor eps = eps_at(x, t);
            const double beta = sched.betas[static_cast<size_t>(t)];
            const double ab = sched.alphas_cumprod[static_cast<size_t>(t)];
            const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
            const double coef = beta / std::sqrt(1.0 - ab);
            const double sigma = t > 0 ? std::sqrt(beta) : 0.0;
            for (int64_t i = 0; i < x.numel(); ++i) {
                double mean = inv_sqrt_alpha * (x[i] - coef * eps[i]);
                x[i] = mean + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
            }
        }
        for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
        return x;
    }

    // DDIM (eta = 0): uniformly spaced timestep subsequence, deterministic.
    std::vector<int> taus;
    for (int i = 0; i < steps; ++i)
        taus.push_back(static_cast<int>(static_cast<int64_t>(i) * sched.T / steps));
    for (int i = static_cast<int>(taus.size()) - 1; i >= 0; --i) {
        const int t = taus[static_cast<size_t>(i)];
        const Tensor eps = eps_at(x, t);
        const double ab = sched.alphas_cumprod[static_cast<size_t>(t)];
        const double ab_prev =
            i > 0 ? sched.alphas_cumprod[static_cast<size_t>(taus[static_cast<size_t>(i - 1)])] : 1.0;
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double sap = std::sqrt(ab_prev), sbp = std::sqrt(1.0 - ab_prev);
        for (int64_t j = 0; j < x.numel(); ++j) {
            const double x0 = std::clamp((x[j] - sb * eps[j]) / sa, 0.0, 1.0);
            x[j] = sap * x0 + sbp * eps[j];
        }
    }
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
    return x;
}

Tensor reconstruct(MVUNet& model, const Tensor& x0, const Tensor& cond,
                   const TextPrompt& prompt, const std::vector<int>& view_indices,
                   const DiffusionSchedule& sched, int steps) {
    require(steps >= 1 && steps <= sched.T, "STEPS_EXCEED_T",
            std::to_string(steps) + " steps for T=" + std::to_string(sched.T));
    require(x0.same_shape(cond), "VIEW_MISALIGNMENT", "x0/cond batches differ in shape");
    ad::NoGradGuard ng;
    Var cond_var = ad::constant(cond);
    auto eps_at = [&](const Tensor& xt, int t) {
        Var out = model.forward(ad::constant(xt), t, &cond_var, prompt, view_indices);
        return out->val;
    };
    std::vector<int> taus;
    for (int i = 0; i < steps; ++i)
        taus.push_back(static_cast<int>(static_cast<int64_t>(i) * sched.T / steps));

    // Deterministic DDIM inversion: walk the eta=0 update forward in t, using
    // the model's own eps estimate at each visited step.
    Tensor x = x0;
    for (size_t i = 0; i + 1 < taus.size(); ++i) {
        const int t = taus[i];
        const Tensor eps = eps_at(x, t);
        const double ab = sched.alphas_cumprod[static_cast<size_t>(t)];
        const double ab_next = sched.alphas_cumprod[static_cast<size_t>(taus[i + 1])];
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double san = std::sqrt(ab_next), sbn = std::sqrt(1.0 - ab_next);
        for (int64_t j = 0; j < x.numel(); ++j) {
            const double x0_hat = std::clamp((x[j] - sb * eps[j]) / sa, 0.0, 1.0);
            x[j] = san * x0_hat + sbn * eps[j];
        }
    }

    // Decode back with the standard DDIM (eta = 0) reverse pass.
    for (int i = static_cast<int>(taus.size()) - 1; i >= 0; --i) {
        const int t = taus[static_cast<size_t>(i)];
        const Tensor eps = eps_at(x, t);
        const double ab = sched.alphas_cumprod[static_cast<size_t>(t)];
        const double ab_prev =
            i > 0 ? sched.alphas_cumprod[static_cast<size_t>(taus[static_cast<size_t>(i - 1)])] : 1.0;
        const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
        const double sap = std::sqrt(ab_prev), sbp = std::sqrt(1.0 - ab_prev);
        for (int64_t j = 0; j < x.numel(); ++j) {
            const double x0_hat = std::clamp((x[j] - sb * eps[j]) / sa, 0.0, 1.0);
            x[j] = sap * x0_hat + sbp * eps[j];
        }
    }
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
    return x;
}

}  // namespace mvg::diff
