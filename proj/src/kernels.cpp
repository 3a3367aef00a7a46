#include "mvgen/kernels.hpp"

#include <cstring>
#include <vector>

namespace mvg::kernels {

namespace {
// Inner product kernel shared by the matmul variants. Row-per-thread
// parallelism keeps accumulation order fixed.
inline void row_times_matrix(const double* arow, const double* b, double* crow,
                             int k, int n, bool accumulate) {
    if (!accumulate) std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
    for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + static_cast<int64_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}
}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        row_times_matrix(a + static_cast<int64_t>(i) * k, b,
                         c + static_cast<int64_t>(i) * n, k, n, false);
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i)
        row_times_matrix(a + static_cast<int64_t>(i) * k, b,
                         c + static_cast<int64_t>(i) * n, k, n, true);
}

void matmul_at(const double* a, const double* b, double* c, int m, int k, int n) {
    // a stored [k,m]; c[i,:] = sum_p a[p,i] * b[p,:]
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<int64_t>(i) * n;
        std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<int64_t>(p) * m + i];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_bt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
    // b stored [n,k]; c[i,j] += dot(a[i,:], b[j,:])
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<int64_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride,
            int pad, double* cols) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int ohw = oh * ow;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cin; ++c) {
        const double* xc = x + static_cast<int64_t>(c) * h * w;
        double* colc = cols + static_cast<int64_t>(c) * kh * kw * ohw;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                double* dst = colc + static_cast<int64_t>(ki * kw + kj) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + oy * ow, 0, sizeof(double) * static_cast<size_t>(ow));
                        continue;
                    }
                    const double* src = xc + static_cast<int64_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, int cin, int h, int w, int kh, int kw, int stride,
            int pad, double* x) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(w, kw, stride, pad);
    const int ohw = oh * ow;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cin; ++c) {
        double* xc = x + static_cast<int64_t>(c) * h * w;
        const double* colc = cols + static_cast<int64_t>(c) * kh * kw * ohw;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const double* src = colc + static_cast<int64_t>(ki * kw + kj) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        xc[static_cast<int64_t>(iy) * w + ix] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    int n, int cin, int h, int wd, int cout, int kh, int kw,
                    int stride, int pad) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(wd, kw, stride, pad);
    const int ohw = oh * ow;
    const int ckk = cin * kh * kw;
    std::vector<double> cols(static_cast<size_t>(ckk) * ohw);
    for (int i = 0; i < n; ++i) {
        im2col(x + static_cast<int64_t>(i) * cin * h * wd, cin, h, wd, kh, kw,
               stride, pad, cols.data());
        double* yi = y + static_cast<int64_t>(i) * cout * ohw;
        matmul(w, cols.data(), yi, cout, ckk, ohw);
        if (b) {
#pragma omp parallel for schedule(static)
            for (int oc = 0; oc < cout; ++oc) {
                double* row = yi + static_cast<int64_t>(oc) * ohw;
                for (int p = 0; p < ohw; ++p) row[p] += b[oc];
            }
        }
    }
}

void conv2d_backward_input(const double* dy, const double* w, double* dx, int n,
                           int cin, int h, int wd, int cout, int kh, int kw,
                           int stride, int pad) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(wd, kw, stride, pad);
    const int ohw = oh * ow;
    const int ckk = cin * kh * kw;
    std::vector<double> dcols(static_cast<size_t>(ckk) * ohw);
    for (int i = 0; i < n; ++i) {
        // dcols = W^T[ckk,cout] * dy[cout,ohw]
        matmul_at(w, dy + static_cast<int64_t>(i) * cout * ohw, dcols.data(), ckk,
                  cout, ohw);
        col2im(dcols.data(), cin, h, wd, kh, kw, stride, pad,
               dx + static_cast<int64_t>(i) * cin * h * wd);
    }
}

void conv2d_backward_weight(const double* x, const double* dy, double* dw,
                            double* db, int n, int cin, int h, int wd, int cout,
                            int kh, int kw, int stride, int pad) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(wd, kw, stride, pad);
    const int ohw = oh * ow;
    const int ckk = cin * kh * kw;
    std::vector<double> cols(static_cast<size_t>(ckk) * ohw);
    for (int i = 0; i < n; ++i) {
        im2col(x + static_cast<int64_t>(i) * cin * h * wd, cin, h, wd, kh, kw,
               stride, pad, cols.data());
        const double* dyi = dy + static_cast<int64_t>(i) * cout * ohw;
        // dW[cout,ckk] += dy[cout,ohw] * cols^T[ohw,ckk]
        matmul_bt_acc(dyi, cols.data(), dw, cout, ohw, ckk);
        if (db) {
#pragma omp parallel for schedule(static)
            for (int oc = 0; oc < cout; ++oc) {
                const double* row = dyi + static_cast<int64_t>(oc) * ohw;
                double s = 0.0;
                for (int p = 0; p < ohw; ++p) s += row[p];
                db[oc] += s;
            }
        }
    }
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p)
                s += a[static_cast<int64_t>(i) * k + p] * b[static_cast<int64_t>(p) * n + j];
            c[static_cast<int64_t>(i) * n + j] = s;
        }
    }
}

void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    int n, int cin, int h, int wd, int cout, int kh, int kw,
                    int stride, int pad) {
    const int oh = conv_out_dim(h, kh, stride, pad);
    const int ow = conv_out_dim(wd, kw, stride, pad);
    for (int i = 0; i < n; ++i) {
        for (int oc = 0; oc < cout; ++oc) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double s = b ? b[oc] : 0.0;
                    for (int ic = 0; ic < cin; ++ic) {
                        for (int ki = 0; ki < kh; ++ki) {
                            const int iy = oy * stride - pad + ki;
                            if (iy < 0 || iy >= h) continue;
                            for (int kj = 0; kj < kw; ++kj) {
                                const int ix = ox * stride - pad + kj;
                                if (ix < 0 || ix >= wd) continue;
                                s += x[((static_cast<int64_t>(i) * cin + ic) * h + iy) * wd + ix] *
                                     w[((static_cast<int64_t>(oc) * cin + ic) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    y[((static_cast<int64_t>(i) * cout + oc) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
}

}  // namespace serial

}  // namespace mvg::kernels
