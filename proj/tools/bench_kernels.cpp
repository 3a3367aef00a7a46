// Benchmarks the OpenMP kernels against the serial reference implementations
// and checks that both produce identical results.

#include <chrono>
#include <cstdio>
#include <functional>

#include "mvgen/kernels.hpp"
#include "mvgen/tensor.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

double max_abs_diff(const mvg::Tensor& a, const mvg::Tensor& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

int main() {
    using namespace mvg;
    Rng rng(7);

    {
        const int m = 256, k = 256, n = 256;
        Tensor a = Tensor::randn({m, k}, rng), b = Tensor::randn({k, n}, rng);
        Tensor c_par({m, n}), c_ser({m, n});
        double t_par =
            time_ms([&] { kernels::matmul(a.data(), b.data(), c_par.data(), m, k, n); }, 5);
        double t_ser = time_ms(
            [&] { kernels::serial::matmul(a.data(), b.data(), c_ser.data(), m, k, n); }, 5);
        std::printf("matmul %dx%dx%d   parallel %.2f ms   serial %.2f ms   speedup %.2fx   "
                    "max|diff| %.3g\n",
                    m, k, n, t_par, t_ser, t_ser / t_par, max_abs_diff(c_par, c_ser));
    }
    {
        const int n = 4, cin = 16, cout = 32, h = 32, w = 32;
        Tensor x = Tensor::randn({n, cin, h, w}, rng);
        Tensor wt = Tensor::randn({cout, cin, 3, 3}, rng);
        Tensor bias = Tensor::zeros({cout});
        const int oh = kernels::conv_out_dim(h, 3, 1, 1), ow = kernels::conv_out_dim(w, 3, 1, 1);
        Tensor y_par({n, cout, oh, ow}), y_ser({n, cout, oh, ow});
        double t_par = time_ms(
            [&] {
                kernels::conv2d_forward(x.data(), wt.data(), bias.data(), y_par.data(), n, cin, h,
                                        w, cout, 3, 3, 1, 1);
            },
            5);
        double t_ser = time_ms(
            [&] {
                kernels::serial::conv2d_forward(x.data(), wt.data(), bias.data(), y_ser.data(), n,
                                                cin, h, w, cout, 3, 3, 1, 1);
            },
            5);
        std::printf("conv2d 3x3 %d:%d->%d @%dx%d   parallel %.2f ms   serial %.2f ms   "
                    "speedup %.2fx   max|diff| %.3g\n",
                    n, cin, cout, h, w, t_par, t_ser, t_ser / t_par, max_abs_diff(y_par, y_ser));
    }
    return 0;
}
