#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

// Dense ReLU networks stored as one flat parameter vector. Every other module
// manipulates models only through ModelParams::values and the operations
// declared here.
namespace fedmp {

// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

enum class ParamKind { weight, bias };

// Offsets of one dense layer inside the flat vector. The weight block is
// fan_in x fan_out row-major, followed by fan_out biases.
struct LayerSlice {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
    std::size_t end = 0;
};

struct ParamLocation {
    std::size_t layer = 0;
    ParamKind kind = ParamKind::weight;
    std::size_t position = 0;

    bool operator==(const ParamLocation&) const = default;
};

// layer_dims = {input, hidden..., classes}. Hidden layers use ReLU, the
// output layer is linear (logits).
struct ArchSpec {
    std::vector<std::size_t> layer_dims;

    // Throws ConfigError for fewer than two entries or a zero dimension.
    void validate() const;

    std::size_t num_layers() const { return layer_dims.size() - 1; }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t num_classes() const { return layer_dims.back(); }
    std::size_t param_count() const;
    LayerSlice layer(std::size_t l) const;
    ParamLocation locate(std::size_t index) const;
    // Layer owning a flat parameter index.
    std::size_t layer_of(std::size_t index) const;

    bool operator==(const ArchSpec&) const = default;
};

struct ModelParams {
    ArchSpec arch;
    std::vector<double> values;

    std::span<const double> weights(std::size_t l) const;
    std::span<const double> biases(std::size_t l) const;

    bool operator==(const ModelParams&) const = default;
};

struct Batch {
    Matrix features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

enum class OptKind { sgd, adam };

struct OptState {
    OptKind kind = OptKind::adam;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    static OptState make(OptKind kind, double learning_rate, std::size_t param_count);
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

// Kaiming-uniform weights on [-sqrt(6/fan_in), sqrt(6/fan_in)], biases on
// [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn in ascending parameter order.
ModelParams init_model(const ArchSpec& arch, std::uint64_t seed);

// Half-width of the init distribution for a parameter at `loc`.
double init_bound(const ArchSpec& arch, const ParamLocation& loc);

Matrix forward_logits(const ModelParams& model, const Matrix& features);

// Mean softmax cross-entropy over the batch and its exact gradient.
LossGrad loss_and_grad(const ModelParams& model, const Batch& batch);

double mean_loss(const ModelParams& model, const Batch& batch);

// Argmax of the logits; ties go to the lowest class index.
std::vector<int> predict(const ModelParams& model, const Matrix& features);

// Fraction of correctly classified rows. Empty batch -> 0.
double accuracy(const ModelParams& model, const Batch& batch);

// One SGD or bias-corrected Adam update, in place.
void opt_step(ModelParams& model, OptState& state, std::span<const double> grad);

// Redraws the listed parameters from their layer's init distribution,
// consuming randomness in ascending index order. Other entries are untouched.
ModelParams reinit_params(const ModelParams& model, std::span<const std::size_t> indices,
                          std::uint64_t seed);

// Throws ShapeError if the batch does not fit the architecture.
void check_batch(const ArchSpec& arch, const Batch& batch);

}  // namespace fedmp
