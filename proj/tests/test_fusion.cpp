#include <cmath>

#include "doctest.h"
#include "mvgen/fusion.hpp"

using namespace mvg;
using ad::Var;
using fusion::FusionConfig;
using fusion::FusionNet;

namespace {

FusionConfig tiny_cfg() {
    FusionConfig c;
    c.base_channels = 8;
    c.channel_multipliers = {1, 2};
    c.attention_levels = {1};
    c.shared_latent_dim = 8;
    c.depth_levels = 2;
    return c;
}

Tensor rand01(const std::vector<int>& shape, uint64_t seed) {
    Rng rng(seed);
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform();
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

// Breaks the zero-init identity so equivariance is tested on a nontrivial map.
void perturb_params(FusionNet& net, uint64_t seed) {
    Rng rng(seed);
    for (const auto& p : net.params().list())
        for (int64_t i = 0; i < p->val.numel(); ++i)
            p->val.data()[i] += 0.05 * rng.normal();
}

}  // namespace

TEST_CASE("identity at initialization is exact") {
    ad::NoGradGuard ng;
    FusionNet net(tiny_cfg(), 11);
    Tensor img = rand01({3, 3, 16, 16}, 1);
    Tensor dm = rand01({3, 2, 16, 16}, 2);
    Tensor out = net.forward(ad::constant(img), ad::constant(dm))->val;
    CHECK(max_abs_diff(out, img) == 0.0);  // bit equality for inputs in [0,1]
}

TEST_CASE("encode_depth: shape contract, determinism, all-invalid input") {
    ad::NoGradGuard ng;
    FusionNet net(tiny_cfg(), 3);
    Tensor dm = rand01({2, 2, 16, 16}, 5);

    auto feats = net.encode_depth(ad::constant(dm));
    REQUIRE(feats.size() == 2);
    for (size_t l = 0; l < feats.size(); ++l) {
        CHECK(feats[l]->val.dim(0) == 2);
        CHECK(feats[l]->val.dim(1) == 8);  // shared_latent_dim
        CHECK(feats[l]->val.dim(2) == 16 >> l);
        CHECK(feats[l]->val.dim(3) == 16 >> l);
    }
    auto feats2 = net.encode_depth(ad::constant(dm));
    for (size_t l = 0; l < feats.size(); ++l)
        CHECK(max_abs_diff(feats[l]->val, feats2[l]->val) == 0.0);

    Tensor zero = Tensor::zeros({1, 2, 16, 16});  // all-invalid: zero depth + zero mask
    for (const auto& f : net.encode_depth(ad::constant(zero)))
        for (int64_t i = 0; i < f->val.numel(); ++i)
            CHECK(std::isfinite(f->val.data()[i]));
}

TEST_CASE("view-permutation equivariance after perturbing the residual paths") {
    ad::NoGradGuard ng;
    FusionNet net(tiny_cfg(), 7);
    perturb_params(net, 99);

    const int N = 3, H = 16, W = 16;
    Tensor img = rand01({N, 3, H, W}, 8);
    Tensor dm = rand01({N, 2, H, W}, 9);
    Tensor base = net.forward(ad::constant(img), ad::constant(dm))->val;
    CHECK(max_abs_diff(base, img) > 0.0);  // perturbation actually broke identity

    const std::vector<int> perm = {1, 2, 0};
    const int64_t si = 3LL * H * W, sd = 2LL * H * W;
    Tensor ip(img.shape()), dp(dm.shape());
    for (int i = 0; i < N; ++i) {
        std::copy(img.data() + perm[i] * si, img.data() + (perm[i] + 1) * si,
                  ip.data() + i * si);
        std::copy(dm.data() + perm[i] * sd, dm.data() + (perm[i] + 1) * sd,
                  dp.data() + i * sd);
    }
    Tensor out_p = net.forward(ad::constant(ip), ad::constant(dp))->val;
    double m = 0;
    for (int i = 0; i < N; ++i)
        for (int64_t k = 0; k < si; ++k)
            m = std::max(m, std::abs(out_p.data()[i * si + k] -
                                     base.data()[perm[i] * si + k]));
    CHECK(m < 1e-5);
}

TEST_CASE("refine_bundle preserves order and resolution; misalignment throws") {
    ad::NoGradGuard ng;
    FusionNet net(tiny_cfg(), 4);

    auto [shoe, detail] = geo::generate_paired_scene(2, geo::FootprintClass::U);
    auto rig = geo::default_rig(shoe, 3);
    auto bundle = render::render_bundle(detail, rig, 16, 16);
    std::vector<render::DepthMap> depths;
    for (const auto& v : bundle.views) depths.push_back(v.depth);

    auto refined = net.refine_bundle(bundle, depths);
    REQUIRE(refined.views.size() == bundle.views.size());
    for (size_t i = 0; i < refined.views.size(); ++i) {
        CHECK(refined.views[i].view_index == bundle.views[i].view_index);
        CHECK(refined.views[i].rgb.width == 16);
        CHECK(refined.views[i].rgb.height == 16);
        // Untrained net: refined images equal inputs exactly.
        CHECK(refined.views[i].rgb.data == bundle.views[i].rgb.data);
    }

    depths.pop_back();
    CHECK_THROWS_WITH_AS(net.refine_bundle(bundle, depths),
                         doctest::Contains("VIEW_MISALIGNMENT"), std::runtime_error);
}

TEST_CASE("pack_depth: normalized two-channel layout") {
    render::DepthMap d(4, 4);
    for (int i = 0; i < 16; ++i) {
        if (i == 5) continue;  // one invalid pixel
        d.valid[i] = 1;
        d.data[i] = 2.0 + i;
    }
    Tensor t = FusionNet::pack_depth(d);
    REQUIRE(t.ndim() == 4);
    CHECK(t.dim(0) == 1);
    CHECK(t.dim(1) == 2);
    CHECK(t.dim(2) == 4);
    CHECK(t.dim(3) == 4);
    for (int i = 0; i < 16; ++i) {
        const double depth_ch = t.data()[i];
        const double mask_ch = t.data()[16 + i];
        if (i == 5) {
            CHECK(depth_ch == 0.0);
            CHECK(mask_ch == 0.0);
        } else {
            CHECK(depth_ch >= 0.0);
            CHECK(depth_ch <= 1.0);
            CHECK(mask_ch == 1.0);
        }
    }
}

TEST_CASE("train_fusion: empty dataset rejected; determinism; objective decreases") {
    FusionNet net(tiny_cfg(), 1);
    loss::LossWeights w;
    CHECK_THROWS_WITH_AS(fusion::train_fusion(net, {}, 1, w, 1e-6, 0),
                         doctest::Contains("EMPTY_DATASET"), std::runtime_error);

    fusion::FusionSample s;
    s.images = rand01({2, 3, 12, 12}, 61);
    s.depth_mask = rand01({2, 2, 12, 12}, 62);
    s.refs = rand01({2, 3, 12, 12}, 63);
    std::vector<fusion::FusionSample> ds = {s};

    feat::FeatureExtractorConfig fx;
    fx.seed = 17;

    FusionNet a(tiny_cfg(), 5), b(tiny_cfg(), 5);
    auto la = fusion::train_fusion(a, ds, 20, w, 1e-6, 33, 1e-3, fx);
    auto lb = fusion::train_fusion(b, ds, 20, w, 1e-6, 33, 1e-3, fx);
    REQUIRE(la.step_objective.size() == 20);
    CHECK(la.step_objective == lb.step_objective);  // bit-identical per seed
    CHECK(la.step_objective.back() < la.step_objective.front());
}
