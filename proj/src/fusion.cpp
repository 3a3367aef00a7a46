#include "mvgen/fusion.hpp"

#include "mvgen/depth.hpp"
#include "mvgen/features.hpp"

namespace mvg::fusion {

Var FusionNet::ResBlock::operator()(const Var& x) const {
    Var h = conv1(ad::silu(norm1(x)));
    h = conv2(ad::silu(norm2(h)));
    Var s = has_skip ? skip(x) : x;
    return ad::add(h, s);
}

Var FusionNet::DepthAttn::operator()(const Var& x, const Var& depth_tokens) const {
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    Var tokens = ad::nchw_to_rows(norm(x));
    Var attn = nn::attention(wq(tokens), wk(depth_tokens), wv(depth_tokens));
    return ad::add(x, ad::rows_to_nchw(wo(attn), n, c, h, w));
}

FusionNet::ResBlock FusionNet::make_res(const std::string& name, int cin, int cout,
                                        Rng& rng) {
    ResBlock rb;
    rb.norm1 = nn::ChannelNorm(ps_, name + ".norm1", cin);
    rb.conv1 = nn::Conv2d(ps_, name + ".conv1", cin, cout, 3, 1, 1, rng);
    rb.norm2 = nn::ChannelNorm(ps_, name + ".norm2", cout);
    rb.conv2 = nn::Conv2d(ps_, name + ".conv2", cout, cout, 3, 1, 1, rng);
    rb.has_skip = cin != cout;
    if (rb.has_skip) rb.skip = nn::Conv2d(ps_, name + ".skip", cin, cout, 1, 1, 0, rng);
    return rb;
}

FusionNet::FusionNet(const FusionConfig& cfg, uint64_t seed) : cfg_(cfg) {
    require(cfg.shared_latent_dim >= 8, "INVALID_CONFIG", "shared_latent_dim >= 8");
    require(!cfg.attention_levels.empty(), "INVALID_CONFIG",
            "depth-aware attention must be enabled on at least one level");
    Rng rng(seed ^ 0xF051ULL);
    const int L = static_cast<int>(cfg.channel_multipliers.size());
    auto ch = [&](int l) { return cfg.base_channels * cfg.channel_multipliers[static_cast<size_t>(l)]; };

    // Shared depth latent pyramid: level 0 at full resolution, then stride-2.
    for (int l = 0; l < cfg.depth_levels; ++l)
        depth_enc_.push_back(nn::Conv2d(ps_, "depth_enc" + std::to_string(l),
                                        l == 0 ? 2 : cfg.shared_latent_dim,
                                        cfg.shared_latent_dim, 3, l == 0 ? 1 : 2, 1, rng));

    level_has_attn_.assign(static_cast<size_t>(L), false);
    for (int l : cfg.attention_levels) {
        require(l >= 0 && l < L, "INVALID_CONFIG", "attention level out of range");
        require(l < cfg.depth_levels, "INVALID_CONFIG",
                "attention level needs a matching depth pyramid level");
        level_has_attn_[static_cast<size_t>(l)] = true;
    }

    conv_in_ = nn::Conv2d(ps_, "conv_in", 3, ch(0), 3, 1, 1, rng);
    enc_attn_.resize(static_cast<size_t>(L));
    dec_attn_.resize(static_cast<size_t>(L));
    auto make_attn = [&](const std::string& name, int c) {
        DepthAttn da;
        da.norm = nn::ChannelNorm(ps_, name + ".norm", c);
        da.wq = nn::Linear(ps_, name + ".wq", c, c, rng);
        da.wk = nn::Linear(ps_, name + ".wk", cfg.shared_latent_dim, c, rng);
        da.wv = nn::Linear(ps_, name + ".wv", cfg.shared_latent_dim, c, rng);
        da.wo = nn::Linear(ps_, name + ".wo", c, c, rng, /*zero_init=*/true);
        return da;
    };
    for (int l = 0; l < L; ++l) {
        enc_res_.push_back(make_res("enc" + std::to_string(l), ch(l), ch(l), rng));
        if (level_has_attn_[static_cast<size_t>(l)])
            enc_attn_[static_cast<size_t>(l)] = make_attn("enc_attn" + std::to_string(l), ch(l));
        if (l + 1 < L)
            down_.push_back(nn::Conv2d(ps_, "down" + std::to_string(l), ch(l), ch(l + 1), 3, 2, 1, rng));
    }
    mid_ = make_res("mid", ch(L - 1), ch(L - 1), rng);
    for (int l = L - 1; l >= 0; --l) {
        dec_res_.push_back(make_res("dec" + std::to_string(l), 2 * ch(l), ch(l), rng));
        if (level_has_attn_[static_cast<size_t>(l)])
            dec_attn_[static_cast<size_t>(l)] = make_attn("dec_attn" + std::to_string(l), ch(l));
        if (l > 0)
            up_.push_back(nn::Conv2d(ps_, "up" + std::to_string(l), ch(l), ch(l - 1), 3, 1, 1, rng));
    }
    // Residual image delta, zero so the untrained net is the identity.
    conv_out_ = nn::Conv2d(ps_, "conv_out", ch(0), 3, 3, 1, 1, rng, /*zero_init=*/true);
}

std::vector<Var> FusionNet::encode_depth(const Var& depth_mask) const {
    require(depth_mask->val.ndim() == 4 && depth_mask->val.dim(1) == 2, "SHAPE_MISMATCH",
            "encode_depth expects [N,2,H,W]");
    std::vector<Var> levels;
    Var h = depth_mask;
    for (size_t l = 0; l < depth_enc_.size(); ++l) {
        h = ad::silu(depth_enc_[l](h));
        levels.push_back(h);
    }
    return levels;
}

Var FusionNet::forward(const Var& images, const Var& depth_mask) const {
    require(images->val.ndim() == 4 && images->val.dim(1) == 3, "SHAPE_MISMATCH",
            "forward expects images [N,3,H,W]");
    require(depth_mask->val.dim(0) == images->val.dim(0) &&
                depth_mask->val.dim(2) == images->val.dim(2) &&
                depth_mask->val.dim(3) == images->val.dim(3),
            "VIEW_MISALIGNMENT", "depth bundle not aligned with image bundle");
    const auto depth_levels = encode_depth(depth_mask);
    // Keys/values are the depth tokens of ALL views concatenated.
    auto depth_tokens = [&](int l) { return ad::nchw_to_rows(depth_levels[static_cast<size_t>(l)]); };

    const int L = static_cast<int>(cfg_.channel_multipliers.size());
    Var h = conv_in_(images);
    std::vector<Var> skips;
    for (int l = 0; l < L; ++l) {
        h = enc_res_[static_cast<size_t>(l)](h);
        if (level_has_attn_[static_cast<size_t>(l)])
            h = enc_attn_[static_cast<size_t>(l)](h, depth_tokens(l));
        skips.push_back(h);
        if (l + 1 < L) h = down_[static_cast<size_t>(l)](h);
    }
    h = mid_(h);
    for (int i = 0, l = L - 1; l >= 0; --l, ++i) {
        h = dec_res_[static_cast<size_t>(i)](ad::concat_channels(h, skips[static_cast<size_t>(l)]));
        if (level_has_attn_[static_cast<size_t>(l)])
            h = dec_attn_[static_cast<size_t>(l)](h, depth_tokens(l));
        if (l > 0) h = up_[static_cast<size_t>(i)](ad::upsample_nearest2(h));
    }
    return ad::clamp01(ad::add(images, conv_out_(h)));
}

Tensor FusionNet::pack_depth(const render::DepthMap& d) {
    Tensor norm, mask;
    depth::normalize_depth(d, norm, mask);
    Tensor out({1, 2, d.height, d.width});
    const int64_t hw = static_cast<int64_t>(d.height) * d.width;
    std::copy(norm.data(), norm.data() + hw, out.data());
    std::copy(mask.data(), mask.data() + hw, out.data() + hw);
    return out;
}

render::ViewBundle FusionNet::refine_bundle(const render::ViewBundle& images,
                                            const std::vector<render::DepthMap>& depths) const {
    require(images.views.size() == depths.size(), "VIEW_MISALIGNMENT",
            "image/depth bundle view counts differ");
    require(!images.views.empty(), "VIEW_MISALIGNMENT", "empty bundle");
    ad::NoGradGuard ng;
    const int n = static_cast<int>(images.views.size());
    const int h = images.views[0].rgb.height, w = images.views[0].rgb.width;
    Tensor img({n, 3, h, w}), dm({n, 2, h, w});
    for (int i = 0; i < n; ++i) {
        const Tensor one = feat::image_to_tensor(images.views[static_cast<size_t>(i)].rgb);
        std::copy(one.data(), one.data() + one.numel(),
                  img.data() + static_cast<int64_t>(i) * 3 * h * w);
        const Tensor d = pack_depth(depths[static_cast<size_t>(i)]);
        std::copy(d.data(), d.data() + d.numel(), dm.data() + static_cast<int64_t>(i) * 2 * h * w);
    }
    Var out = forward(ad::constant(std::move(img)), ad::constant(std::move(dm)));
    render::ViewBundle refined = images;
    for (int i = 0; i < n; ++i) {
        Tensor one({1, 3, h, w});
        std::copy(out->val.data() + static_cast<int64_t>(i) * 3 * h * w,
                  out->val.data() + static_cast<int64_t>(i + 1) * 3 * h * w, one.data());
        refined.views[static_cast<size_t>(i)].rgb = feat::tensor_to_image(one);
    }
    return refined;
}

FusionTrainLog train_fusion(FusionNet& net, const std::vector<FusionSample>& dataset,
                            int steps, const loss::LossWeights& w, double lambda_consistency,
                            uint64_t seed, double lr,
                            const feat::FeatureExtractorConfig& excfg) {
    require(!dataset.empty(), "EMPTY_DATASET", "no fusion training samples");
    Rng rng(seed ^ 0xF7A1ULL);
    nn::Adam opt(net.params().list(), lr);
    feat::Extractor ex(excfg);
    FusionTrainLog log;
    for (int step = 0; step < steps; ++step) {
        const auto& s = dataset[static_cast<size_t>(rng.randint(static_cast<int64_t>(dataset.size())))];
        net.params().zero_grads();
        Var refined = net.forward(ad::constant(s.images), ad::constant(s.depth_mask));
        Var obj = ad::mse(refined, ad::constant(s.refs));
        if (lambda_consistency > 0.0) {
            const int n = s.images.dim(0), h = s.images.dim(2), wd = s.images.dim(3);
            Var flat = ad::reshape(refined, {n, 3 * h * wd});
            std::vector<Var> g, r;
            for (int i = 0; i < n; ++i) {
                g.push_back(ad::reshape(ad::slice_rows(flat, i, 1), {1, 3, h, wd}));
                Tensor ri({1, 3, h, wd});
                std::copy(s.refs.data() + static_cast<int64_t>(i) * 3 * h * wd,
                          s.refs.data() + static_cast<int64_t>(i + 1) * 3 * h * wd, ri.data());
                r.push_back(ad::constant(std::move(ri)));
            }
            obj = ad::add(obj, ad::scale(loss::total_loss(g, r, ex, w).total, lambda_consistency));
        }
        log.step_objective.push_back(obj->scalar());
        ad::backward(obj);
        opt.step();
    }
    return log;
}

}  // namespace mvg::fusion
