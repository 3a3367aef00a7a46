#include "mvgen/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "mvgen/kernels.hpp"

namespace mvg::ad {

namespace {
thread_local bool g_grad_enabled = true;

Var make_node(Tensor val, std::vector<Var> parents, std::function<void()>&& fn) {
    auto node = std::make_shared<Node>();
    node->val = std::move(val);
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any && g_grad_enabled) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    require(a->val.same_shape(b->val), "SHAPE_MISMATCH",
            std::string(op) + " " + a->val.shape_str() + " vs " + b->val.shape_str());
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Var constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->val = std::move(t);
    return node;
}

Var parameter(Tensor t) {
    auto node = std::make_shared<Node>();
    node->val = std::move(t);
    node->requires_grad = true;
    return node;
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->val[i];
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b] {
            for (Var p : {a, b}) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += self->grad[i];
            }
        };
    }
    return node;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->val[i];
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += self->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < b->grad.numel(); ++i) b->grad[i] -= self->grad[i];
            }
        };
    }
    return node;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < a->grad.numel(); ++i)
                    a->grad[i] += self->grad[i] * b->val[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < b->grad.numel(); ++i)
                    b->grad[i] += self->grad[i] * a->val[i];
            }
        };
    }
    return node;
}

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, s] {
            a->ensure_grad();
            for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += s * self->grad[i];
        };
    }
    return node;
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a] {
            a->ensure_grad();
            for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += self->grad[i];
        };
    }
    return node;
}

Var relu(const Var& a) {
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a] {
            a->ensure_grad();
            for (int64_t i = 0; i < a->grad.numel(); ++i)
                if (a->val[i] > 0.0) a->grad[i] += self->grad[i];
        };
    }
    return node;
}

Var silu(const Var& a) {
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-out[i]));
        out[i] *= s;
    }
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a] {
            a->ensure_grad();
            for (int64_t i = 0; i < a->grad.numel(); ++i) {
                const double x = a->val[i];
                const double s = 1.0 / (1.0 + std::exp(-x));
                a->grad[i] += self->grad[i] * (s * (1.0 + x * (1.0 - s)));
            }
        };
    }
    return node;
}

Var clamp01(const Var& a) {
    Tensor out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i)
        out[i] = out[i] < 0.0 ? 0.0 : (out[i] > 1.0 ? 1.0 : out[i]);
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a] {
            a->ensure_grad();
            for (int64_t i = 0; i < a->grad.numel(); ++i)
                if (a->val[i] >= 0.0 && a->val[i] <= 1.0) a->grad[i] += self->grad[i];
        };
    }
    return node;
}

Var matmul(const Var& a, const Var& b) {
    require(a->val.ndim() == 2 && b->val.ndim() == 2 && a->val.dim(1) == b->val.dim(0),
            "SHAPE_MISMATCH", "matmul " + a->val.shape_str() + " x " + b->val.shape_str());
    const int m = a->val.dim(0), k = a->val.dim(1), n = b->val.dim(1);
    Tensor out({m, n});
    kernels::matmul(a->val.data(), b->val.data(), out.data(), m, k, n);
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b, m, k, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                // dA += dC * B^T
                kernels::matmul_bt_acc(self->grad.data(), b->val.data(), a->grad.data(), m, n, k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                // dB += A^T * dC, computed as matmul_at then accumulate
                Tensor tmp({k, n});
                kernels::matmul_at(a->val.data(), self->grad.data(), tmp.data(), k, m, n);
                for (int64_t i = 0; i < tmp.numel(); ++i) b->grad[i] += tmp[i];
            }
        };
    }
    return node;
}

Var transpose(const Var& a) {
    require(a->val.ndim() == 2, "SHAPE_MISMATCH", "transpose needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<int64_t>(j) * m + i] = a->val[static_cast<int64_t>(i) * n + j];
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, m, n] {
            a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<int64_t>(i) * n + j] += self->grad[static_cast<int64_t>(j) * m + i];
        };
    }
    return node;
}

Var softmax_rows(const Var& a) {
    require(a->val.ndim() == 2, "SHAPE_MISMATCH", "softmax needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out({m, n});
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* row = a->val.data() + static_cast<int64_t>(i) * n;
        double* orow = out.data() + static_cast<int64_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        const double inv = 1.0 / s;
        for (int j = 0; j < n; ++j) orow[j] *= inv;
    }
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, m, n] {
            a->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int i = 0; i < m; ++i) {
                const double* y = self->val.data() + static_cast<int64_t>(i) * n;
                const double* dy = self->grad.data() + static_cast<int64_t>(i) * n;
                double* dx = a->grad.data() + static_cast<int64_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
                for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    }
    return node;
}

Var add_rowvec(const Var& a, const Var& v) {
    require(a->val.ndim() == 2 && v->val.numel() == a->val.dim(1), "SHAPE_MISMATCH",
            "add_rowvec");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out = a->val;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<int64_t>(i) * n + j] += v->val[j];
    auto node = make_node(std::move(out), {a, v}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, v, m, n] {
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += self->grad[i];
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) v->grad[j] += self->grad[static_cast<int64_t>(i) * n + j];
            }
        };
    }
    return node;
}

Var mean_rows(const Var& a) {
    require(a->val.ndim() == 2, "SHAPE_MISMATCH", "mean_rows needs 2-D");
    const int m = a->val.dim(0), n = a->val.dim(1);
    Tensor out({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += a->val[static_cast<int64_t>(i) * n + j];
    for (int j = 0; j < n; ++j) out[j] /= m;
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, m, n] {
            a->ensure_grad();
            const double inv = 1.0 / m;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    a->grad[static_cast<int64_t>(i) * n + j] += self->grad[j] * inv;
        };
    }
    return node;
}

Var reshape(const Var& a, std::vector<int> shape) {
    require(Tensor::numel_of(shape) == a->val.numel(), "SHAPE_MISMATCH", "reshape");
    Tensor out(std::move(shape));
    std::memcpy(out.data(), a->val.data(), sizeof(double) * static_cast<size_t>(a->val.numel()));
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a] {
            a->ensure_grad();
            for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += self->grad[i];
        };
    }
    return node;
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "EMPTY_INPUT", "concat_rows");
    const int n = parts[0]->val.dim(1);
    int total = 0;
    for (const auto& p : parts) {
        require(p->val.ndim() == 2 && p->val.dim(1) == n, "SHAPE_MISMATCH", "concat_rows");
        total += p->val.dim(0);
    }
    Tensor out({total, n});
    int64_t off = 0;
    for (const auto& p : parts) {
        std::memcpy(out.data() + off, p->val.data(), sizeof(double) * static_cast<size_t>(p->val.numel()));
        off += p->val.numel();
    }
    auto node = make_node(std::move(out), parts, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        auto parents = parts;
        node->backward_fn = [self, parents] {
            int64_t off2 = 0;
            for (const auto& p : parents) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += self->grad[off2 + i];
                }
                off2 += p->val.numel();
            }
        };
    }
    return node;
}

Var slice_rows(const Var& a, int start, int count) {
    require(a->val.ndim() == 2 && start >= 0 && start + count <= a->val.dim(0),
            "SHAPE_MISMATCH", "slice_rows");
    const int n = a->val.dim(1);
    Tensor out({count, n});
    std::memcpy(out.data(), a->val.data() + static_cast<int64_t>(start) * n,
                sizeof(double) * static_cast<size_t>(count) * n);
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, start, n] {
            a->ensure_grad();
            const int64_t off = static_cast<int64_t>(start) * n;
            for (int64_t i = 0; i < self->grad.numel(); ++i) a->grad[off + i] += self->grad[i];
        };
    }
    return node;
}

Var sum(const Var& a) {
    Tensor out({1});
    double s = 0.0;
    for (int64_t i = 0; i < a->val.numel(); ++i) s += a->val[i];
    out[0] = s;
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a] {
            a->ensure_grad();
            const double g = self->grad[0];
            for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
        };
    }
    return node;
}

Var mse(const Var& a, const Var& b) {
    check_same_shape(a, b, "mse");
    const int64_t n = a->val.numel();
    Tensor out({1});
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a->val[i] - b->val[i];
        s += d * d;
    }
    out[0] = s / static_cast<double>(n);
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b, n] {
            const double g = self->grad[0] * 2.0 / static_cast<double>(n);
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) a->grad[i] += g * (a->val[i] - b->val[i]);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) b->grad[i] -= g * (a->val[i] - b->val[i]);
            }
        };
    }
    return node;
}

Var sum_sq_diff(const Var& a, const Var& b) {
    check_same_shape(a, b, "sum_sq_diff");
    const int64_t n = a->val.numel();
    Tensor out({1});
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a->val[i] - b->val[i];
        s += d * d;
    }
    out[0] = s;
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b, n] {
            const double g = self->grad[0] * 2.0;
            if (a->requires_grad) {
                a->ensure_grad();
                for (int64_t i = 0; i < n; ++i) a->grad[i] += g * (a->val[i] - b->val[i]);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < n; ++i) b->grad[i] -= g * (a->val[i] - b->val[i]);
            }
        };
    }
    return node;
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require(x->val.ndim() == 4 && w->val.ndim() == 4, "SHAPE_MISMATCH", "conv2d");
    const int n = x->val.dim(0), cin = x->val.dim(1), h = x->val.dim(2), wd = x->val.dim(3);
    const int cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    require(w->val.dim(1) == cin, "SHAPE_MISMATCH", "conv2d channels");
    const int oh = kernels::conv_out_dim(h, kh, stride, pad);
    const int ow = kernels::conv_out_dim(wd, kw, stride, pad);
    require(oh >= 1 && ow >= 1, "IMAGE_TOO_SMALL", "conv2d output would be empty");
    Tensor out({n, cout, oh, ow});
    kernels::conv2d_forward(x->val.data(), w->val.data(), b ? b->val.data() : nullptr,
                            out.data(), n, cin, h, wd, cout, kh, kw, stride, pad);
    std::vector<Var> parents = {x, w};
    if (b) parents.push_back(b);
    auto node = make_node(std::move(out), parents, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, x, w, b, n, cin, h, wd, cout, kh, kw, stride, pad] {
            if (x->requires_grad) {
                x->ensure_grad();
                kernels::conv2d_backward_input(self->grad.data(), w->val.data(),
                                               x->grad.data(), n, cin, h, wd, cout, kh,
                                               kw, stride, pad);
            }
            if (w->requires_grad || (b && b->requires_grad)) {
                w->ensure_grad();
                if (b) b->ensure_grad();
                kernels::conv2d_backward_weight(x->val.data(), self->grad.data(),
                                                w->grad.data(), b ? b->grad.data() : nullptr,
                                                n, cin, h, wd, cout, kh, kw, stride, pad);
            }
        };
    }
    return node;
}

Var concat_channels(const Var& a, const Var& b) {
    require(a->val.ndim() == 4 && b->val.ndim() == 4 && a->val.dim(0) == b->val.dim(0) &&
                a->val.dim(2) == b->val.dim(2) && a->val.dim(3) == b->val.dim(3),
            "SHAPE_MISMATCH", "concat_channels");
    const int n = a->val.dim(0), ca = a->val.dim(1), cb = b->val.dim(1);
    const int hw = a->val.dim(2) * a->val.dim(3);
    Tensor out({n, ca + cb, a->val.dim(2), a->val.dim(3)});
    for (int i = 0; i < n; ++i) {
        std::memcpy(out.data() + static_cast<int64_t>(i) * (ca + cb) * hw,
                    a->val.data() + static_cast<int64_t>(i) * ca * hw,
                    sizeof(double) * static_cast<size_t>(ca) * hw);
        std::memcpy(out.data() + (static_cast<int64_t>(i) * (ca + cb) + ca) * hw,
                    b->val.data() + static_cast<int64_t>(i) * cb * hw,
                    sizeof(double) * static_cast<size_t>(cb) * hw);
    }
    auto node = make_node(std::move(out), {a, b}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, b, n, ca, cb, hw] {
            for (int i = 0; i < n; ++i) {
                if (a->requires_grad) {
                    a->ensure_grad();
                    const double* g = self->grad.data() + static_cast<int64_t>(i) * (ca + cb) * hw;
                    double* ag = a->grad.data() + static_cast<int64_t>(i) * ca * hw;
                    for (int64_t j = 0; j < static_cast<int64_t>(ca) * hw; ++j) ag[j] += g[j];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    const double* g = self->grad.data() + (static_cast<int64_t>(i) * (ca + cb) + ca) * hw;
                    double* bg = b->grad.data() + static_cast<int64_t>(i) * cb * hw;
                    for (int64_t j = 0; j < static_cast<int64_t>(cb) * hw; ++j) bg[j] += g[j];
                }
            }
        };
    }
    return node;
}

Var nchw_to_rows(const Var& x) {
    require(x->val.ndim() == 4, "SHAPE_MISMATCH", "nchw_to_rows");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    const int hw = h * w;
    Tensor out({n * hw, c});
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const double* src = x->val.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            for (int q = 0; q < hw; ++q)
                out[(static_cast<int64_t>(i) * hw + q) * c + ch] = src[q];
        }
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, x, n, c, hw] {
            x->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    double* dst = x->grad.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    for (int q = 0; q < hw; ++q)
                        dst[q] += self->grad[(static_cast<int64_t>(i) * hw + q) * c + ch];
                }
        };
    }
    return node;
}

Var rows_to_nchw(const Var& rows, int n, int c, int h, int w) {
    require(rows->val.ndim() == 2 && rows->val.dim(0) == n * h * w && rows->val.dim(1) == c,
            "SHAPE_MISMATCH", "rows_to_nchw");
    const int hw = h * w;
    Tensor out({n, c, h, w});
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            double* dst = out.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            for (int q = 0; q < hw; ++q)
                dst[q] = rows->val[(static_cast<int64_t>(i) * hw + q) * c + ch];
        }
    auto node = make_node(std::move(out), {rows}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, rows, n, c, hw] {
            rows->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch) {
                    const double* g = self->grad.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                    for (int q = 0; q < hw; ++q)
                        rows->grad[(static_cast<int64_t>(i) * hw + q) * c + ch] += g[q];
                }
        };
    }
    return node;
}

Var repeat_rows_block(const Var& a, int times) {
    require(a->val.ndim() == 2 && times >= 1, "SHAPE_MISMATCH", "repeat_rows_block");
    const int n = a->val.dim(0), c = a->val.dim(1);
    Tensor out({n * times, c});
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < times; ++t)
            std::memcpy(out.data() + (static_cast<int64_t>(i) * times + t) * c,
                        a->val.data() + static_cast<int64_t>(i) * c,
                        sizeof(double) * static_cast<size_t>(c));
    auto node = make_node(std::move(out), {a}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, a, n, c, times] {
            a->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int t = 0; t < times; ++t) {
                    const double* g = self->grad.data() + (static_cast<int64_t>(i) * times + t) * c;
                    double* ag = a->grad.data() + static_cast<int64_t>(i) * c;
                    for (int j = 0; j < c; ++j) ag[j] += g[j];
                }
        };
    }
    return node;
}

Var avgpool2(const Var& x) {
    require(x->val.ndim() == 4, "SHAPE_MISMATCH", "avgpool2");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    require(h >= 2 && w >= 2, "IMAGE_TOO_SMALL", "avgpool2 input below 2x2");
    const int oh = h / 2, ow = w / 2;
    Tensor out({n, c, oh, ow});
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < n * c; ++nc) {
        const double* xp = x->val.data() + static_cast<int64_t>(nc) * h * w;
        double* op = out.data() + static_cast<int64_t>(nc) * oh * ow;
        for (int i = 0; i < oh; ++i)
            for (int j = 0; j < ow; ++j)
                op[i * ow + j] = 0.25 * (xp[(2 * i) * w + 2 * j] + xp[(2 * i) * w + 2 * j + 1] +
                                         xp[(2 * i + 1) * w + 2 * j] + xp[(2 * i + 1) * w + 2 * j + 1]);
    }
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, x, n, c, h, w] {
            x->ensure_grad();
            const int oh = h / 2, ow = w / 2;
            for (int nc = 0; nc < n * c; ++nc) {
                double* xg = x->grad.data() + static_cast<int64_t>(nc) * h * w;
                const double* og = self->grad.data() + static_cast<int64_t>(nc) * oh * ow;
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) {
                        const double g = 0.25 * og[i * ow + j];
                        xg[(2 * i) * w + 2 * j] += g;
                        xg[(2 * i) * w + 2 * j + 1] += g;
                        xg[(2 * i + 1) * w + 2 * j] += g;
                        xg[(2 * i + 1) * w + 2 * j + 1] += g;
                    }
            }
        };
    }
    return node;
}

Var upsample_nearest2(const Var& x) {
    require(x->val.ndim() == 4, "SHAPE_MISMATCH", "upsample_nearest2");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    Tensor out({n, c, 2 * h, 2 * w});
#pragma omp parallel for schedule(static)
    for (int nc = 0; nc < n * c; ++nc) {
        const double* xp = x->val.data() + static_cast<int64_t>(nc) * h * w;
        double* op = out.data() + static_cast<int64_t>(nc) * 4 * h * w;
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const double v = xp[i * w + j];
                op[(2 * i) * 2 * w + 2 * j] = v;
                op[(2 * i) * 2 * w + 2 * j + 1] = v;
                op[(2 * i + 1) * 2 * w + 2 * j] = v;
                op[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
            }
    }
    auto node = make_node(std::move(out), {x}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, x, n, c, h, w] {
            x->ensure_grad();
            for (int nc = 0; nc < n * c; ++nc) {
                double* xg = x->grad.data() + static_cast<int64_t>(nc) * h * w;
                const double* og = self->grad.data() + static_cast<int64_t>(nc) * 4 * h * w;
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j)
                        xg[i * w + j] += og[(2 * i) * 2 * w + 2 * j] + og[(2 * i) * 2 * w + 2 * j + 1] +
                                         og[(2 * i + 1) * 2 * w + 2 * j] + og[(2 * i + 1) * 2 * w + 2 * j + 1];
            }
        };
    }
    return node;
}

Var add_channel_vec(const Var& x, const Var& v) {
    require(x->val.ndim() == 4 && v->val.numel() == x->val.dim(1), "SHAPE_MISMATCH",
            "add_channel_vec");
    const int n = x->val.dim(0), c = x->val.dim(1);
    const int hw = x->val.dim(2) * x->val.dim(3);
    Tensor out = x->val;
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            double* p = out.data() + (static_cast<int64_t>(i) * c + ch) * hw;
            const double b = v->val[ch];
            for (int q = 0; q < hw; ++q) p[q] += b;
        }
    auto node = make_node(std::move(out), {x, v}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        node->backward_fn = [self, x, v, n, c, hw] {
            if (x->requires_grad) {
                x->ensure_grad();
                for (int64_t i = 0; i < x->grad.numel(); ++i) x->grad[i] += self->grad[i];
            }
            if (v->requires_grad) {
                v->ensure_grad();
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch) {
                        const double* g = self->grad.data() + (static_cast<int64_t>(i) * c + ch) * hw;
                        double s = 0.0;
                        for (int q = 0; q < hw; ++q) s += g[q];
                        v->grad[ch] += s;
                    }
            }
        };
    }
    return node;
}

Var channel_norm(const Var& x, const Var& gain, const Var& bias) {
    require(x->val.ndim() == 4, "SHAPE_MISMATCH", "channel_norm");
    const int n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
    require(gain->val.numel() == c && bias->val.numel() == c, "SHAPE_MISMATCH",
            "channel_norm gain/bias");
    const int hw = h * w;
    const double eps = 1e-5;
    Tensor out({n, c, h, w});
    Tensor mu({n, h, w}), inv_sigma({n, h, w});
    for (int i = 0; i < n; ++i) {
        for (int q = 0; q < hw; ++q) {
            double m = 0.0;
            for (int ch = 0; ch < c; ++ch) m += x->val[(static_cast<int64_t>(i) * c + ch) * hw + q];
            m /= c;
            double var = 0.0;
            for (int ch = 0; ch < c; ++ch) {
                const double d = x->val[(static_cast<int64_t>(i) * c + ch) * hw + q] - m;
                var += d * d;
            }
            var /= c;
            const double is = 1.0 / std::sqrt(var + eps);
            mu[static_cast<int64_t>(i) * hw + q] = m;
            inv_sigma[static_cast<int64_t>(i) * hw + q] = is;
            for (int ch = 0; ch < c; ++ch) {
                const double xn = (x->val[(static_cast<int64_t>(i) * c + ch) * hw + q] - m) * is;
                out[(static_cast<int64_t>(i) * c + ch) * hw + q] = xn * gain->val[ch] + bias->val[ch];
            }
        }
    }
    auto node = make_node(std::move(out), {x, gain, bias}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        auto mu_p = std::make_shared<Tensor>(std::move(mu));
        auto is_p = std::make_shared<Tensor>(std::move(inv_sigma));
        node->backward_fn = [self, x, gain, bias, mu_p, is_p, n, c, hw] {
            if (x->requires_grad) x->ensure_grad();
            if (gain->requires_grad) gain->ensure_grad();
            if (bias->requires_grad) bias->ensure_grad();
            for (int i = 0; i < n; ++i) {
                for (int q = 0; q < hw; ++q) {
                    const double m = (*mu_p)[static_cast<int64_t>(i) * hw + q];
                    const double is = (*is_p)[static_cast<int64_t>(i) * hw + q];
                    // xn_ch = (x_ch - m) * is ; y_ch = xn_ch * g_ch + b_ch
                    double sum_dxn = 0.0, sum_dxn_xn = 0.0;
                    for (int ch = 0; ch < c; ++ch) {
                        const int64_t idx = (static_cast<int64_t>(i) * c + ch) * hw + q;
                        const double xn = (x->val[idx] - m) * is;
                        const double dy = self->grad[idx];
                        if (gain->requires_grad) gain->grad[ch] += dy * xn;
                        if (bias->requires_grad) bias->grad[ch] += dy;
                        const double dxn = dy * gain->val[ch];
                        sum_dxn += dxn;
                        sum_dxn_xn += dxn * xn;
                    }
                    if (x->requires_grad) {
                        for (int ch = 0; ch < c; ++ch) {
                            const int64_t idx = (static_cast<int64_t>(i) * c + ch) * hw + q;
                            const double xn = (x->val[idx] - m) * is;
                            const double dxn = self->grad[idx] * gain->val[ch];
                            x->grad[idx] += is * (dxn - (sum_dxn + xn * sum_dxn_xn) / c);
                        }
                    }
                }
            }
        };
    }
    return node;
}

Var embedding(const Var& table, const std::vector<int>& indices) {
    require(table->val.ndim() == 2, "SHAPE_MISMATCH", "embedding table must be 2-D");
    const int v = table->val.dim(0), d = table->val.dim(1);
    const int n = static_cast<int>(indices.size());
    Tensor out({n, d});
    for (int i = 0; i < n; ++i) {
        require(indices[i] >= 0 && indices[i] < v, "INDEX_OUT_OF_RANGE", "embedding");
        std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                    table->val.data() + static_cast<int64_t>(indices[i]) * d,
                    sizeof(double) * static_cast<size_t>(d));
    }
    auto node = make_node(std::move(out), {table}, nullptr);
    if (node->requires_grad) {
        Node* self = node.get();
        auto idx = indices;
        node->backward_fn = [self, table, idx, d] {
            table->ensure_grad();
            for (size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < d; ++j)
                    table->grad[static_cast<int64_t>(idx[i]) * d + j] +=
                        self->grad[static_cast<int64_t>(i) * d + j];
        };
    }
    return node;
}

void backward(const Var& root) {
    require(root->val.numel() == 1, "NOT_SCALAR", "backward root must be scalar");
    // Topological order by iterative DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && node->grad.numel()) node->backward_fn();
    }
}

}  // namespace mvg::ad
