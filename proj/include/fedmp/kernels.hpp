#pragma once

#include <cstddef>
#include <span>

// Dense-layer and vector kernels. Two implementations share one contract:
// `kernels::serial` is the plain reference, `kernels` (default) splits the
// outer loop across OpenMP threads. Every output element is accumulated in
// the same order in both, so results are bitwise identical regardless of
// thread count.
namespace fedmp::kernels {

// Row-major shapes: in (n x a), w (a x b), bias (b), out (n x b).
void dense_forward(std::span<const double> in, std::span<const double> w,
                   std::span<const double> bias, std::size_t n, std::size_t a,
                   std::size_t b, std::span<double> out);

// Given delta = dL/d(out) (n x b): dw (a x b) and dbias (b) are overwritten;
// din (n x a) is overwritten unless empty.
void dense_backward(std::span<const double> in, std::span<const double> w,
                    std::span<const double> delta, std::size_t n, std::size_t a,
                    std::size_t b, std::span<double> dw, std::span<double> dbias,
                    std::span<double> din);

// out[i] = (1/m) * sum_k vecs[k][i], summed in ascending k.
void mean_of(std::span<const std::span<const double>> vecs, std::span<double> out);

namespace serial {

void dense_forward(std::span<const double> in, std::span<const double> w,
                   std::span<const double> bias, std::size_t n, std::size_t a,
                   std::size_t b, std::span<double> out);

void dense_backward(std::span<const double> in, std::span<const double> w,
                    std::span<const double> delta, std::size_t n, std::size_t a,
                    std::size_t b, std::span<double> dw, std::span<double> dbias,
                    std::span<double> din);

void mean_of(std::span<const std::span<const double>> vecs, std::span<double> out);

}  // namespace serial

// Work (multiply-adds) below which the OpenMP kernels stay single-threaded.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

}  // namespace fedmp::kernels
