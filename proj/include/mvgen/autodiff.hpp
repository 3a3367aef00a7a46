#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mvgen/tensor.hpp"

// Reverse-mode autodiff over Tensor. Each op builds a Node whose backward_fn
// scatters the node's grad into its parents. Graphs are built per forward pass;
// parameters are long-lived Nodes whose grads the optimizer consumes.
namespace mvg::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily, same shape as val
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.numel() == 0) grad = Tensor::zeros(val.shape());
    }
    void zero_grad() {
        if (grad.numel()) std::fill(grad.data(), grad.data() + grad.numel(), 0.0);
    }
    double scalar() const { return val[0]; }
};

// Thread-local switch; disable while sampling to skip graph construction.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    bool prev_;
};

Var constant(Tensor t);
Var parameter(Tensor t);  // requires_grad = true

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var silu(const Var& a);
Var clamp01(const Var& a);  // subgradient 0 outside [0,1]

// Linear algebra
Var matmul(const Var& a, const Var& b);       // [M,K]x[K,N]
Var transpose(const Var& a);                  // [M,N] -> [N,M]
Var softmax_rows(const Var& a);               // rowwise softmax on [M,N]
Var add_rowvec(const Var& a, const Var& v);   // [M,N] + [N] broadcast over rows
Var mean_rows(const Var& a);                  // [M,N] -> [1,N]

// Shape ops (copying views; shapes are small at desk scale)
Var reshape(const Var& a, std::vector<int> shape);
Var concat_rows(const std::vector<Var>& parts);  // stack [Mi,N] along rows
Var slice_rows(const Var& a, int start, int count);

// Reductions
Var sum(const Var& a);                 // -> [1]
Var mse(const Var& a, const Var& b);   // mean squared error -> [1]
Var sum_sq_diff(const Var& a, const Var& b);  // ||a-b||^2 -> [1]

// Conv / image ops, NCHW
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var concat_channels(const Var& a, const Var& b);  // [N,Ca,H,W] ++ [N,Cb,H,W]
// [N,C,H,W] -> token rows [N*H*W, C] (view-major) and back.
Var nchw_to_rows(const Var& x);
Var rows_to_nchw(const Var& rows, int n, int c, int h, int w);
// Repeat each row of a [N,C] block `times` times -> [N*times, C].
Var repeat_rows_block(const Var& a, int times);
Var avgpool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var add_channel_vec(const Var& x, const Var& v);  // x[N,C,H,W] + v[C]

// Normalize across channel dim per (n,h,w); learned gain/bias of size [C].
Var channel_norm(const Var& x, const Var& gain, const Var& bias);

// Rows of table[V,D] gathered by indices -> [n,D].
Var embedding(const Var& table, const std::vector<int>& indices);

// Backpropagate from a scalar root.
void backward(const Var& root);

}  // namespace mvg::ad
