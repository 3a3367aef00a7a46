#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mvgen/autodiff.hpp"

namespace mvg::nn {

using ad::Var;

// Named parameter registry; the checkpoint code walks it.
class ParamStore {
public:
    Var create(const std::string& name, Tensor init) {
        require(!params_.count(name), "DUPLICATE_PARAM", name);
        Var p = ad::parameter(std::move(init));
        params_[name] = p;
        ordered_.push_back(p);
        names_.push_back(name);
        return p;
    }

    const std::map<std::string, Var>& named() const { return params_; }
    const std::vector<Var>& list() const { return ordered_; }
    const std::vector<std::string>& names() const { return names_; }

    void zero_grads() {
        for (auto& p : ordered_) p->zero_grad();
    }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& p : ordered_) n += p->val.numel();
        return n;
    }

private:
    std::map<std::string, Var> params_;
    std::vector<Var> ordered_;
    std::vector<std::string> names_;
};

inline Tensor kaiming_init(std::vector<int> shape, int fan_in, Rng& rng) {
    return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / fan_in));
}

struct Linear {
    Var w, b;  // w: [in, out]
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng,
           bool zero_init = false) {
        w = ps.create(name + ".w", zero_init ? Tensor::zeros({in, out})
                                             : kaiming_init({in, out}, in, rng));
        b = ps.create(name + ".b", Tensor::zeros({out}));
    }
    Var operator()(const Var& x) const { return ad::add_rowvec(ad::matmul(x, w), b); }
};

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 1;
    Conv2d() = default;
    Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride_,
           int pad_, Rng& rng, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        w = ps.create(name + ".w", zero_init ? Tensor::zeros({cout, cin, k, k})
                                             : kaiming_init({cout, cin, k, k}, cin * k * k, rng));
        b = ps.create(name + ".b", Tensor::zeros({cout}));
    }
    Var operator()(const Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};

struct ChannelNorm {
    Var gain, bias;
    ChannelNorm() = default;
    ChannelNorm(ParamStore& ps, const std::string& name, int c) {
        gain = ps.create(name + ".gain", Tensor::full({c}, 1.0));
        bias = ps.create(name + ".bias", Tensor::zeros({c}));
    }
    Var operator()(const Var& x) const { return ad::channel_norm(x, gain, bias); }
};

// Scaled dot-product attention over row-token matrices.
inline Var attention(const Var& q, const Var& k, const Var& v) {
    const double scl = 1.0 / std::sqrt(static_cast<double>(q->val.dim(1)));
    Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), scl);
    return ad::matmul(ad::softmax_rows(scores), v);
}

// Sinusoidal timestep embedding (constant wrt parameters).
inline Tensor timestep_embedding(int t, int dim) {
    Tensor out({1, dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half - 1));
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

class Adam {
public:
    Adam(std::vector<Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.push_back(Tensor::zeros(p->val.shape()));
            v_.push_back(Tensor::zeros(p->val.shape()));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (p->grad.numel() == 0) continue;
            for (int64_t j = 0; j < p->val.numel(); ++j) {
                const double g = p->grad[j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                p->val[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    int64_t step_count() const { return t_; }

    // Checkpoint access
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    void set_step_count(int64_t t) { t_ = t; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace mvg::nn
