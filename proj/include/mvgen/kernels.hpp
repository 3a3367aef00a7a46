#pragma once

#include <cstdint>

// Hot numeric kernels. The default entry points parallelize with OpenMP over
// independent output rows, so results are bit-identical for any thread count.
// kernels::serial holds straightforward loop-nest references used by the unit
// tests and the kernel benchmark.
namespace mvg::kernels {

// C[M,N] = A[M,K] * B[K,N]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// C[M,N] += A[M,K] * B[K,N]
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
// C[M,N] = A^T[M,K] * B[K,N]  with A stored [K,M]
void matmul_at(const double* a, const double* b, double* c, int m, int k, int n);
// C[M,N] += A[M,K] * B^T[K,N] with B stored [N,K]
void matmul_bt_acc(const double* a, const double* b, double* c, int m, int k, int n);

// im2col for NCHW, square kernel. cols has shape [cin*kh*kw, oh*ow].
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride,
            int pad, double* cols);
// Scatter-add transpose of im2col.
void col2im(const double* cols, int cin, int h, int w, int kh, int kw, int stride,
            int pad, double* x);

// y[n,cout,oh,ow] = conv(x[n,cin,h,w], w[cout,cin,kh,kw]) + b[cout]
// scratch must hold cin*kh*kw*oh*ow doubles (per-call im2col buffer).
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    int n, int cin, int h, int wd, int cout, int kh, int kw,
                    int stride, int pad);
void conv2d_backward_input(const double* dy, const double* w, double* dx, int n,
                           int cin, int h, int wd, int cout, int kh, int kw,
                           int stride, int pad);
void conv2d_backward_weight(const double* x, const double* dy, double* dw,
                            double* db, int n, int cin, int h, int wd, int cout,
                            int kh, int kw, int stride, int pad);

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

namespace serial {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void conv2d_forward(const double* x, const double* w, const double* b, double* y,
                    int n, int cin, int h, int wd, int cout, int kh, int kw,
                    int stride, int pad);
}  // namespace serial

}  // namespace mvg::kernels
