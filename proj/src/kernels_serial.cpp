#include "fedmp/kernels.hpp"

namespace fedmp::kernels::serial {

void dense_forward(std::span<const double> in, std::span<const double> w,
                   std::span<const double> bias, std::size_t n, std::size_t a,
                   std::size_t b, std::span<double> out) {
    for (std::size_t r = 0; r < n; ++r) {
        const double* x = in.data() + r * a;
        double* y = out.data() + r * b;
        for (std::size_t j = 0; j < b; ++j) y[j] = bias[j];
        for (std::size_t i = 0; i < a; ++i) {
            const double xi = x[i];
            const double* wrow = w.data() + i * b;
            for (std::size_t j = 0; j < b; ++j) y[j] += xi * wrow[j];
        }
    }
}

void dense_backward(std::span<const double> in, std::span<const double> w,
                    std::span<const double> delta, std::size_t n, std::size_t a,
                    std::size_t b, std::span<double> dw, std::span<double> dbias,
                    std::span<double> din) {
    for (std::size_t i = 0; i < a; ++i) {
        double* g = dw.data() + i * b;
        for (std::size_t j = 0; j < b; ++j) g[j] = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double xi = in[r * a + i];
            const double* d = delta.data() + r * b;
            for (std::size_t j = 0; j < b; ++j) g[j] += xi * d[j];
        }
    }
    for (std::size_t j = 0; j < b; ++j) dbias[j] = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* d = delta.data() + r * b;
        for (std::size_t j = 0; j < b; ++j) dbias[j] += d[j];
    }
    if (din.empty()) return;
    for (std::size_t r = 0; r < n; ++r) {
        const double* d = delta.data() + r * b;
        for (std::size_t i = 0; i < a; ++i) {
            const double* wrow = w.data() + i * b;
            double s = 0.0;
            for (std::size_t j = 0; j < b; ++j) s += d[j] * wrow[j];
            din[r * a + i] = s;
        }
    }
}

void mean_of(std::span<const std::span<const double>> vecs, std::span<double> out) {
    const double scale = 1.0 / static_cast<double>(vecs.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 0.0;
        for (const auto& v : vecs) s += v[i];
        out[i] = s * scale;
    }
}

}  // namespace fedmp::kernels::serial
