#include "mvgen/losses.hpp"

namespace mvg::loss {

namespace {

void check_bundles(const std::vector<Var>& g, const std::vector<Var>& r) {
    require(g.size() == r.size(), "VIEW_COUNT_MISMATCH",
            std::to_string(g.size()) + " generated vs " + std::to_string(r.size()) +
                " reference views");
    require(!g.empty(), "VIEW_COUNT_MISMATCH", "empty bundles");
    for (size_t i = 0; i < g.size(); ++i)
        require(g[i]->val.same_shape(r[i]->val) && g[i]->val.same_shape(g[0]->val),
                "RESOLUTION_MISMATCH",
                "view " + std::to_string(i) + ": " + g[i]->val.shape_str() + " vs " +
                    r[i]->val.shape_str());
}

// Layer-summed ||phi(a)-phi(b)||^2 as a Var.
Var feature_sq_dist(const std::vector<Var>& fa, const std::vector<Var>& fb) {
    Var acc;
    for (size_t l = 0; l < fa.size(); ++l) {
        Var term = ad::sum_sq_diff(fa[l], fb[l]);
        acc = acc ? ad::add(acc, term) : term;
    }
    return acc;
}

std::vector<std::pair<size_t, size_t>> adjacent_pairs(size_t n, bool wraparound) {
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t i = 0; i + 1 < n; ++i) pairs.emplace_back(i, i + 1);
    if (wraparound && n > 1) pairs.emplace_back(n - 1, 0);
    return pairs;
}

// Accumulates chain-pair terms symmetrically (term k paired with term P-1-k
// first) so that reversing the bundle, which reverses term order, yields a
// bit-identical sum; the wraparound term maps to itself and is added last.
Var sum_pair_terms(const std::vector<Var>& terms, bool has_wrap) {
    const size_t chain = terms.size() - (has_wrap ? 1 : 0);
    Var acc;
    for (size_t k = 0; k < chain / 2; ++k) {
        Var pair = ad::add(terms[k], terms[chain - 1 - k]);
        acc = acc ? ad::add(acc, pair) : pair;
    }
    if (chain % 2) {
        acc = acc ? ad::add(acc, terms[chain / 2]) : terms[chain / 2];
    }
    if (has_wrap) acc = acc ? ad::add(acc, terms.back()) : terms.back();
    return acc;
}

}  // namespace

Var style_loss(const std::vector<Var>& g, const std::vector<Var>& r, const Extractor& ex) {
    check_bundles(g, r);
    Var acc;
    for (size_t i = 0; i < g.size(); ++i) {
        const auto fg = ex(g[i]);
        const auto fr = ex(r[i]);
        for (size_t l = 0; l < fg.size(); ++l) {
            Var term = ad::sum_sq_diff(feat::gram(fg[l]), feat::gram(fr[l]));
            acc = acc ? ad::add(acc, term) : term;
        }
    }
    return acc;
}

Var perceptual_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                    const Extractor& ex) {
    check_bundles(g, r);
    Var acc;
    for (size_t i = 0; i < g.size(); ++i) {
        Var term = feature_sq_dist(ex(g[i]), ex(r[i]));
        acc = acc ? ad::add(acc, term) : term;
    }
    return acc;
}

Var content_consistency_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                             const Extractor& ex, bool wraparound) {
    check_bundles(g, r);
    if (g.size() == 1) return ad::constant(Tensor({1}));  // empty sum
    std::vector<std::vector<Var>> fg, fr;
    for (size_t i = 0; i < g.size(); ++i) {
        fg.push_back(ex(g[i]));
        fr.push_back(ex(r[i]));
    }
    std::vector<Var> terms;
    for (const auto& [i, j] : adjacent_pairs(g.size(), wraparound)) {
        Var dg = feature_sq_dist(fg[i], fg[j]);
        Var dr = feature_sq_dist(fr[i], fr[j]);
        Var diff = ad::sub(dg, dr);
        terms.push_back(ad::mul(diff, diff));
    }
    return sum_pair_terms(terms, wraparound);
}

Var angle_alignment_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                         bool wraparound) {
    check_bundles(g, r);
    if (g.size() == 1) return ad::constant(Tensor({1}));
    std::vector<Var> terms;
    for (const auto& [i, j] : adjacent_pairs(g.size(), wraparound)) {
        Var dg = ad::sum_sq_diff(g[i], g[j]);
        Var dr = ad::sum_sq_diff(r[i], r[j]);
        Var diff = ad::sub(dg, dr);
        terms.push_back(ad::mul(diff, diff));
    }
    return sum_pair_terms(terms, wraparound);
}

TotalLoss total_loss(const std::vector<Var>& g, const std::vector<Var>& r,
                     const Extractor& ex, const LossWeights& w, bool wraparound) {
    require(w.alpha >= 0 && w.beta >= 0 && w.gamma >= 0 && w.delta >= 0,
            "INVALID_WEIGHTS", "loss weights must be nonnegative");
    Var s = style_loss(g, r, ex);
    Var p = perceptual_loss(g, r, ex);
    Var c = content_consistency_loss(g, r, ex, wraparound);
    Var a = angle_alignment_loss(g, r, wraparound);
    Var total = ad::add(ad::add(ad::scale(s, w.alpha), ad::scale(p, w.beta)),
                        ad::add(ad::scale(c, w.gamma), ad::scale(a, w.delta)));
    TotalLoss out;
    out.total = total;
    out.report = {s->scalar(), p->scalar(), c->scalar(), a->scalar(), total->scalar()};
    return out;
}

LossReport total_loss(const std::vector<render::Image>& g,
                      const std::vector<render::Image>& r,
                      const feat::FeatureExtractorConfig& cfg, const LossWeights& w) {
    ad::NoGradGuard ng;
    Extractor ex(cfg);
    std::vector<Var> gv, rv;
    for (const auto& img : g) gv.push_back(ad::constant(feat::image_to_tensor(img)));
    for (const auto& img : r) rv.push_back(ad::constant(feat::image_to_tensor(img)));
    return total_loss(gv, rv, ex, w).report;
}

}  // namespace mvg::loss
