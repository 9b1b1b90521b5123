#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "fedmp/data.hpp"
#include "fedmp/nn.hpp"

namespace testutil {

inline fedmp::Batch random_batch(std::size_t n, std::size_t d, std::size_t classes, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
    fedmp::Batch b;
    b.features = fedmp::Matrix(n, d);
    for (auto& x : b.features.data) x = g(rng);
    for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(rng));
    return b;
}

inline fedmp::Dataset as_dataset(const fedmp::Batch& b, std::size_t classes) {
    fedmp::Dataset ds;
    ds.features = b.features;
    ds.labels = b.labels;
    ds.num_classes = classes;
    return ds;
}

inline fedmp::ModelParams model_with(std::vector<std::size_t> dims, std::vector<double> values) {
    fedmp::ModelParams m;
    m.arch.layer_dims = std::move(dims);
    m.values = std::move(values);
    return m;
}

// Central finite-difference gradient of the mean loss.
inline std::vector<double> fd_grad(const fedmp::ModelParams& m, const fedmp::Batch& b, double h = 1e-5) {
    std::vector<double> g(m.values.size());
    auto probe = m;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = m.values[i];
        probe.values[i] = x + h;
        const double up = fedmp::mean_loss(probe, b);
        probe.values[i] = x - h;
        const double down = fedmp::mean_loss(probe, b);
        probe.values[i] = x;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

inline double l2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline double norm(const std::vector<double>& a) {
    double s = 0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

}  // namespace testutil
