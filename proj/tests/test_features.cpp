#include <cmath>

#include "doctest.h"
#include "mvgen/features.hpp"

using namespace mvg;
using ad::Var;

namespace {

Tensor rand_t(std::vector<int> shape, uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("IDENTITY backend returns one map bit-equal to the input") {
    Tensor x = rand_t({1, 3, 6, 5}, 1);
    feat::Extractor ex({feat::FeatureBackend::IDENTITY, 0, 3});
    auto maps = ex(ad::constant(x));
    REQUIRE(maps.size() == 1);
    REQUIRE(maps[0]->val.shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(maps[0]->val[i] == x[i]);
}

TEST_CASE("TINY_CONV produces 3 layers at spatial sizes 32, 16, 8 on 64x64") {
    feat::Extractor ex({feat::FeatureBackend::TINY_CONV, 5, 3});
    auto maps = ex(ad::constant(rand_t({1, 3, 64, 64}, 2)));
    REQUIRE(maps.size() == 3);
    const int sizes[3] = {32, 16, 8};
    const int chans[3] = {16, 32, 64};
    for (int l = 0; l < 3; ++l) {
        CHECK(maps[l]->val.dim(1) == chans[l]);
        CHECK(maps[l]->val.dim(2) == sizes[l]);
        CHECK(maps[l]->val.dim(3) == sizes[l]);
    }
}

TEST_CASE("same seed gives bit-identical features; different seed differs") {
    Tensor x = rand_t({1, 3, 16, 16}, 3);
    feat::Extractor a({feat::FeatureBackend::TINY_CONV, 7, 2});
    feat::Extractor b({feat::FeatureBackend::TINY_CONV, 7, 2});
    feat::Extractor c({feat::FeatureBackend::TINY_CONV, 8, 2});
    auto ma = a(ad::constant(x)), mb = b(ad::constant(x)), mc = c(ad::constant(x));
    bool any_diff = false;
    for (size_t l = 0; l < ma.size(); ++l)
        for (int64_t i = 0; i < ma[l]->val.numel(); ++i) {
            CHECK(ma[l]->val[i] == mb[l]->val[i]);
            any_diff |= ma[l]->val[i] != mc[l]->val[i];
        }
    CHECK(any_diff);
}

TEST_CASE("too-small input is rejected") {
    feat::Extractor ex({feat::FeatureBackend::TINY_CONV, 1, 3});
    CHECK_THROWS_WITH_AS(ex(ad::constant(rand_t({1, 3, 2, 2}, 4))),
                         doctest::Contains("IMAGE_TOO_SMALL"), std::runtime_error);
}

TEST_CASE("gram oracle: rows (1,0) and (0,1) over 2 spatial cells") {
    // F = [[1,0],[0,1]], F F^T = I, normalized by C*H*W = 2*1*2 = 4.
    Tensor f({1, 2, 1, 2}, {1, 0, 0, 1});
    Var g = feat::gram(ad::constant(f));
    REQUIRE(g->val.shape() == std::vector<int>{2, 2});
    CHECK(g->val[0] == doctest::Approx(0.25));
    CHECK(g->val[1] == doctest::Approx(0.0));
    CHECK(g->val[2] == doctest::Approx(0.0));
    CHECK(g->val[3] == doctest::Approx(0.25));
}

TEST_CASE("gram of zeros is zero; symmetric and PSD on random inputs") {
    Var gz = feat::gram(ad::constant(Tensor::zeros({1, 3, 4, 4})));
    for (int64_t i = 0; i < gz->val.numel(); ++i) CHECK(gz->val[i] == 0.0);

    for (uint64_t seed : {10ULL, 11ULL, 12ULL}) {
        Tensor f = rand_t({1, 4, 3, 5}, seed);
        Var g = feat::gram(ad::constant(f));
        const int c = 4;
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < c; ++j)
                CHECK(std::abs(g->val[i * c + j] - g->val[j * c + i]) <= 1e-6);
        // PSD: x^T G x >= -1e-6 for random probes (G = FF^T/k is PSD exactly).
        Rng rng(seed + 100);
        for (int trial = 0; trial < 20; ++trial) {
            double x[4], q = 0;
            for (int i = 0; i < c; ++i) x[i] = rng.normal();
            for (int i = 0; i < c; ++i)
                for (int j = 0; j < c; ++j) q += x[i] * g->val[i * c + j] * x[j];
            CHECK(q >= -1e-6);
        }
    }
}

TEST_CASE("gram homogeneity: gram(c*f) = c^2 * gram(f)") {
    Tensor f = rand_t({1, 3, 4, 4}, 20);
    Var g1 = feat::gram(ad::constant(f));
    Tensor f2 = f;
    for (int64_t i = 0; i < f2.numel(); ++i) f2[i] *= 3.0;
    Var g2 = feat::gram(ad::constant(f2));
    for (int64_t i = 0; i < g1->val.numel(); ++i) {
        double expect = 9.0 * g1->val[i];
        CHECK(std::abs(g2->val[i] - expect) <= 1e-10 * std::max(1.0, std::abs(expect)));
    }
}

TEST_CASE("gram is invariant to spatial permutation") {
    Tensor f = rand_t({1, 3, 2, 3}, 21);
    // Permute the 6 spatial cells per channel with a fixed permutation.
    const int perm[6] = {4, 2, 0, 5, 1, 3};
    Tensor fp({1, 3, 2, 3});
    for (int c = 0; c < 3; ++c)
        for (int s = 0; s < 6; ++s) fp[c * 6 + perm[s]] = f[c * 6 + s];
    Var g1 = feat::gram(ad::constant(f)), g2 = feat::gram(ad::constant(fp));
    for (int64_t i = 0; i < g1->val.numel(); ++i)
        CHECK(g1->val[i] == doctest::Approx(g2->val[i]).epsilon(1e-12));
}

TEST_CASE("extractor gradient wrt input matches finite differences (1e-4 rel)") {
    Tensor x = rand_t({1, 3, 8, 8}, 30);
    feat::FeatureExtractorConfig cfg{feat::FeatureBackend::TINY_CONV, 13, 3};
    feat::Extractor ex(cfg);
    Tensor probe_w[3];

    auto objective = [&](const Var& v) {
        auto maps = ex(v);
        Var total;
        for (size_t l = 0; l < maps.size(); ++l) {
            if (probe_w[l].numel() == 0) probe_w[l] = rand_t(maps[l]->val.shape(), 40 + l);
            Var term = ad::sum(ad::mul(maps[l], ad::constant(probe_w[l])));
            total = total ? ad::add(total, term) : term;
        }
        return total;
    };

    Var v = ad::parameter(x);
    Var y = objective(v);
    ad::backward(y);

    const double eps = 1e-5;
    Rng rng(50);
    for (int trial = 0; trial < 40; ++trial) {
        int64_t i = static_cast<int64_t>(rng.randint(x.numel()));
        auto eval = [&](double delta) {
            Tensor t = x;
            t[i] += delta;
            return objective(ad::constant(t))->val[0];
        };
        double fd = (eval(eps) - eval(-eps)) / (2 * eps);
        double an = v->grad[i];
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CHECK(std::abs(fd - an) / denom <= 1e-4);
    }
}
