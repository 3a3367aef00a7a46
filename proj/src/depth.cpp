#include "mvgen/depth.hpp"

#include <cmath>

#include "mvgen/features.hpp"

namespace mvg::depth {

Estimator::Estimator(const DepthEstimatorConfig& cfg) : cfg_(cfg) {
    if (cfg.backend == DepthBackend::ORACLE) return;
    require(cfg.encoder_levels >= 1, "INVALID_CONFIG", "encoder_levels >= 1");
    Rng rng(cfg.seed ^ 0xDE97ULL);
    const int c0 = cfg.base_channels;
    // RGB plus two screen-coordinate channels: pixel position is a strong
    // monocular depth cue on framed captures and sharpens the fit markedly.
    conv_in_ = nn::Conv2d(ps_, "conv_in", 5, c0, 3, 1, 1, rng);
    int c = c0;
    for (int l = 0; l < cfg.encoder_levels; ++l) {
        enc_.push_back(nn::Conv2d(ps_, "enc" + std::to_string(l), c, 2 * c, 3, 2, 1, rng));
        c *= 2;
    }
    for (int l = cfg.encoder_levels - 1; l >= 0; --l) {
        // decoder consumes upsampled deep features concatenated with the skip
        dec_.push_back(nn::Conv2d(ps_, "dec" + std::to_string(l), c + c / 2, c / 2, 3, 1, 1, rng));
        c /= 2;
    }
    conv_out_ = nn::Conv2d(ps_, "conv_out", c0, 1, 3, 1, 1, rng);
}

Var Estimator::forward(const Var& x) {
    require(cfg_.backend == DepthBackend::LEARNED, "INVALID_CONFIG",
            "forward() is only available on the LEARNED backend");
    const int n = x->val.dim(0), ih = x->val.dim(2), iw = x->val.dim(3);
    Tensor coords({n, 2, ih, iw});
    for (int b = 0; b < n; ++b)
        for (int y = 0; y < ih; ++y)
            for (int xx = 0; xx < iw; ++xx) {
                coords.data()[((static_cast<int64_t>(b) * 2 + 0) * ih + y) * iw + xx] =
                    iw > 1 ? static_cast<double>(xx) / (iw - 1) : 0.0;
                coords.data()[((static_cast<int64_t>(b) * 2 + 1) * ih + y) * iw + xx] =
                    ih > 1 ? static_cast<double>(y) / (ih - 1) : 0.0;
            }
    Var h = ad::silu(conv_in_(ad::concat_channels(x, ad::constant(std::move(coords)))));
    std::vector<Var> skips;
    for (auto& conv : enc_) {
        skips.push_back(h);
        h = ad::silu(conv(h));
    }
    for (size_t i = 0; i < dec_.size(); ++i) {
        h = ad::upsample_nearest2(h);
        h = ad::silu(dec_[i](ad::concat_channels(h, skips[skips.size() - 1 - i])));
    }
    return conv_out_(h);
}

render::DepthMap Estimator::estimate(const render::Image& image,
                                     const render::DepthMap* ctx) {
    if (cfg_.backend == DepthBackend::ORACLE) {
        require(ctx != nullptr, "ORACLE_CONTEXT_MISSING",
                "ORACLE backend needs renderer ground truth");
        return *ctx;  // bit-exact pass-through
    }
    ad::NoGradGuard ng;
    Var out = forward(ad::constant(feat::image_to_tensor(image)));
    render::DepthMap d(image.width, image.height);
    for (size_t i = 0; i < d.data.size(); ++i) {
        d.data[i] = out->val[static_cast<int64_t>(i)];
        d.valid[i] = 1;
    }
    return d;
}

std::pair<double, double> align_affine(const render::DepthMap& pred,
                                       const render::DepthMap& gt) {
    require(pred.width == gt.width && pred.height == gt.height, "RESOLUTION_MISMATCH",
            "pred vs gt depth resolution");
    double sp = 0, sg = 0, spp = 0, spg = 0;
    int64_t n = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        if (!pred.valid[i] || !gt.valid[i]) continue;
        const double p = pred.data[i], g = gt.data[i];
        sp += p;
        sg += g;
        spp += p * p;
        spg += p * g;
        ++n;
    }
    require(n >= 2, "DEGENERATE_FIT", "fewer than 2 valid overlapping pixels");
    const double var = spp - sp * sp / n;
    require(var > 1e-12 * (spp + 1.0), "DEGENERATE_FIT", "pred variance is zero");
    const double s = (spg - sp * sg / n) / var;
    const double t = (sg - s * sp) / n;
    return {s, t};
}

double depth_loss(const render::DepthMap& pred, const render::DepthMap& gt) {
    const auto [s, t] = align_affine(pred, gt);
    double acc = 0;
    int64_t n = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        if (!pred.valid[i] || !gt.valid[i]) continue;
        const double d = s * pred.data[i] + t - gt.data[i];
        acc += d * d;
        ++n;
    }
    return acc / static_cast<double>(n);
}

Var depth_loss(const Var& pred, const Tensor& gt, const Tensor& mask) {
    require(pred->val.numel() == gt.numel() && gt.numel() == mask.numel(),
            "RESOLUTION_MISMATCH", "depth_loss shapes");
    double sp = 0, sg = 0, spp = 0, spg = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < gt.numel(); ++i) {
        if (mask[i] == 0.0) continue;
        const double p = pred->val[i], g = gt[i];
        sp += p;
        sg += g;
        spp += p * p;
        spg += p * g;
        ++n;
    }
    require(n >= 2, "DEGENERATE_FIT", "fewer than 2 valid pixels");
    const double var = spp - sp * sp / n;
    require(var > 1e-12 * (spp + 1.0), "DEGENERATE_FIT", "pred variance is zero");
    const double s = (spg - sp * sg / n) / var;
    const double t = (sg - s * sp) / n;

    Tensor gt_flat = gt, mask_flat = mask;
    Var residual = ad::sub(ad::add_scalar(ad::scale(ad::reshape(pred, gt.shape()), s), t),
                           ad::constant(std::move(gt_flat)));
    Var masked = ad::mul(residual, ad::constant(std::move(mask_flat)));
    return ad::scale(ad::sum(ad::mul(masked, masked)), 1.0 / static_cast<double>(n));
}

std::pair<double, double> normalize_depth(const render::DepthMap& d, Tensor& out,
                                          Tensor& mask) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < d.data.size(); ++i) {
        if (!d.valid[i]) continue;
        lo = std::min(lo, d.data[i]);
        hi = std::max(hi, d.data[i]);
    }
    if (!std::isfinite(lo)) { lo = 0.0; hi = 1.0; }
    const double span = hi > lo ? hi - lo : 1.0;
    out = Tensor({1, 1, d.height, d.width});
    mask = Tensor({1, 1, d.height, d.width});
    for (size_t i = 0; i < d.data.size(); ++i) {
        if (!d.valid[i]) continue;
        out[static_cast<int64_t>(i)] = (d.data[i] - lo) / span;
        mask[static_cast<int64_t>(i)] = 1.0;
    }
    return {lo, hi};
}

TrainLog train_estimator(Estimator& est, const std::vector<DepthSample>& dataset,
                         int epochs, uint64_t seed, double lr) {
    require(!dataset.empty(), "EMPTY_DATASET", "no depth training samples");
    Rng rng(seed ^ 0xD1DA5ULL);
    nn::Adam opt(est.params().list(), lr);
    TrainLog log;

    // Pre-normalize targets once.
    std::vector<Tensor> gts(dataset.size()), masks(dataset.size());
    std::vector<Tensor> inputs(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        normalize_depth(dataset[i].gt, gts[i], masks[i]);
        inputs[i] = feat::image_to_tensor(dataset[i].rgb);
    }

    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int64_t total_steps = static_cast<int64_t>(epochs) * static_cast<int64_t>(order.size());
    int64_t step = 0;
    for (int e = 0; e < epochs; ++e) {
        // Fisher-Yates with the run RNG keeps epochs deterministic per seed.
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<size_t>(rng.randint(static_cast<int64_t>(i)))]);
        double epoch_acc = 0;
        for (size_t idx : order) {
            // Cosine decay to lr/20: large early steps, fine late refinement.
            const double frac = static_cast<double>(step++) / static_cast<double>(total_steps);
            opt.set_lr(lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(frac * 3.14159265358979323846))));
            est.params().zero_grads();
            Var pred = est.forward(ad::constant(inputs[idx]));
            Var loss = depth_loss(pred, gts[idx], masks[idx]);
            epoch_acc += loss->scalar();
            ad::backward(loss);
            opt.step();
        }
        log.epoch_loss.push_back(epoch_acc / static_cast<double>(dataset.size()));
    }
    return log;
}

double aligned_rmse(const render::DepthMap& pred, const render::DepthMap& gt) {
    // Normalize gt to [0,1] so the bound is resolution- and scene-independent.
    Tensor gt_n, gt_mask;
    normalize_depth(gt, gt_n, gt_mask);
    render::DepthMap gtn(gt.width, gt.height);
    for (size_t i = 0; i < gtn.data.size(); ++i) {
        gtn.data[i] = gt_n[static_cast<int64_t>(i)];
        gtn.valid[i] = gt.valid[i];
    }
    return std::sqrt(depth_loss(pred, gtn));
}

}  // namespace mvg::depth
