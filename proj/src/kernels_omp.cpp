#include "fedmp/kernels.hpp"

#include <cstdint>

namespace fedmp::kernels {

void dense_forward(std::span<const double> in, std::span<const double> w,
                   std::span<const double> bias, std::size_t n, std::size_t a,
                   std::size_t b, std::span<double> out) {
    const bool wide = n * a * b >= kParallelThreshold;
    const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (wide)
    for (std::int64_t r = 0; r < rows; ++r) {
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
    const bool wide = n * a * b >= kParallelThreshold;
    const auto fan_in = static_cast<std::int64_t>(a);
    const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel if (wide)
    {
#pragma omp for schedule(static) nowait
        for (std::int64_t i = 0; i < fan_in; ++i) {
            double* g = dw.data() + i * b;
            for (std::size_t j = 0; j < b; ++j) g[j] = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double xi = in[r * a + i];
                const double* d = delta.data() + r * b;
                for (std::size_t j = 0; j < b; ++j) g[j] += xi * d[j];
            }
        }
#pragma omp single nowait
        {
            for (std::size_t j = 0; j < b; ++j) dbias[j] = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double* d = delta.data() + r * b;
                for (std::size_t j = 0; j < b; ++j) dbias[j] += d[j];
            }
        }
        if (!din.empty()) {
#pragma omp for schedule(static)
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* d = delta.data() + r * b;
                for (std::size_t i = 0; i < a; ++i) {
                    const double* wrow = w.data() + i * b;
                    double s = 0.0;
                    for (std::size_t j = 0; j < b; ++j) s += d[j] * wrow[j];
                    din[r * a + i] = s;
                }
            }
        }
    }
}

void mean_of(std::span<const std::span<const double>> vecs, std::span<double> out) {
    const double scale = 1.0 / static_cast<double>(vecs.size());
    const auto len = static_cast<std::int64_t>(out.size());
    const bool wide = out.size() * vecs.size() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (wide)
    for (std::int64_t i = 0; i < len; ++i) {
        double s = 0.0;
        for (const auto& v : vecs) s += v[i];
        out[i] = s * scale;
    }
}

}  // namespace fedmp::kernels
