#include "mvgen/features.hpp"

#include "mvgen/nn.hpp"

namespace mvg::feat {

Extractor::Extractor(const FeatureExtractorConfig& cfg) : cfg_(cfg) {
    if (cfg.backend == FeatureBackend::IDENTITY) return;
    require(cfg.layer_count >= 1, "INVALID_CONFIG", "TINY_CONV needs layer_count >= 1");
    Rng rng(cfg.seed ^ 0xFEA7ULL);
    int cin = 3;
    for (int l = 0; l < cfg.layer_count; ++l) {
        const int cout = std::min(16 << l, 64);
        weights_.push_back(nn::kaiming_init({cout, cin, 3, 3}, cin * 9, rng));
        cin = cout;
    }
}

std::vector<Var> Extractor::operator()(const Var& x) const {
    require(x->val.ndim() == 4 && x->val.dim(0) == 1, "SHAPE_MISMATCH",
            "extractor expects [1,C,H,W]");
    if (cfg_.backend == FeatureBackend::IDENTITY) return {x};
    std::vector<Var> maps;
    Var cur = x;
    for (const Tensor& w : weights_) {
        require(cur->val.dim(2) >= 1 && cur->val.dim(3) >= 1, "IMAGE_TOO_SMALL",
                "feature map shrank to zero");
        Var conv = ad::conv2d(cur, ad::constant(w), nullptr, 1, 1);
        Var act = ad::relu(conv);
        require(act->val.dim(2) >= 2 && act->val.dim(3) >= 2, "IMAGE_TOO_SMALL",
                "cannot downsample below 1x1");
        cur = ad::avgpool2(act);
        maps.push_back(cur);
    }
    return maps;
}

Var gram(const Var& f) {
    const auto& s = f->val.shape();
    int c, h, w;
    if (s.size() == 4) {
        require(s[0] == 1, "SHAPE_MISMATCH", "gram expects a single feature map");
        c = s[1]; h = s[2]; w = s[3];
    } else {
        require(s.size() == 3, "SHAPE_MISMATCH", "gram expects [C,H,W]");
        c = s[0]; h = s[1]; w = s[2];
    }
    Var flat = ad::reshape(f, {c, h * w});
    Var g = ad::matmul(flat, ad::transpose(flat));
    return ad::scale(g, 1.0 / (static_cast<double>(c) * h * w));
}

Tensor image_to_tensor(const render::Image& img) {
    Tensor t({1, 3, img.height, img.width});
    const int hw = img.height * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t[static_cast<int64_t>(c) * hw + y * img.width + x] = img.at(x, y, c);
    return t;
}

render::Image tensor_to_image(const Tensor& t) {
    require(t.ndim() == 4 && t.dim(0) == 1 && t.dim(1) == 3, "SHAPE_MISMATCH",
            "tensor_to_image expects [1,3,H,W]");
    const int h = t.dim(2), w = t.dim(3);
    render::Image img(w, h);
    const int hw = h * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = t[static_cast<int64_t>(c) * hw + y * w + x];
    return img;
}

std::vector<Var> extract(const render::Image& img, const FeatureExtractorConfig& cfg) {
    Extractor ex(cfg);
    return ex(ad::constant(image_to_tensor(img)));
}

}  // namespace mvg::feat
