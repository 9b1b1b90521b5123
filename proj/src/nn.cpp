#include "fedmp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedmp/errors.hpp"
#include "fedmp/kernels.hpp"
#include "fedmp/rng.hpp"

namespace fedmp {

void ArchSpec::validate() const {
    if (layer_dims.size() < 2) {
        throw ConfigError("architecture needs at least an input and an output dimension");
    }
    for (std::size_t i = 0; i < layer_dims.size(); ++i) {
        if (layer_dims[i] == 0) {
            throw ConfigError("architecture dimension " + std::to_string(i) + " is zero");
        }
    }
}

std::size_t ArchSpec::param_count() const {
    std::size_t p = 0;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        p += layer_dims[l] * layer_dims[l + 1] + layer_dims[l + 1];
    }
    return p;
}

LayerSlice ArchSpec::layer(std::size_t l) const {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < l; ++k) {
        offset += layer_dims[k] * layer_dims[k + 1] + layer_dims[k + 1];
    }
    LayerSlice s;
    s.fan_in = layer_dims[l];
    s.fan_out = layer_dims[l + 1];
    s.weight_offset = offset;
    s.bias_offset = offset + s.fan_in * s.fan_out;
    s.end = s.bias_offset + s.fan_out;
    return s;
}

ParamLocation ArchSpec::locate(std::size_t index) const {
    std::size_t offset = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
        const std::size_t nw = layer_dims[l] * layer_dims[l + 1];
        const std::size_t nb = layer_dims[l + 1];
        if (index < offset + nw) return {l, ParamKind::weight, index - offset};
        if (index < offset + nw + nb) return {l, ParamKind::bias, index - offset - nw};
        offset += nw + nb;
    }
    throw ArgumentError("parameter index " + std::to_string(index) + " out of range");
}

std::size_t ArchSpec::layer_of(std::size_t index) const { return locate(index).layer; }

std::span<const double> ModelParams::weights(std::size_t l) const {
    const auto s = arch.layer(l);
    return {values.data() + s.weight_offset, s.fan_in * s.fan_out};
}

std::span<const double> ModelParams::biases(std::size_t l) const {
    const auto s = arch.layer(l);
    return {values.data() + s.bias_offset, s.fan_out};
}

OptState OptState::make(OptKind kind, double learning_rate, std::size_t param_count) {
    OptState st;
    st.kind = kind;
    st.learning_rate = learning_rate;
    if (kind == OptKind::adam) {
        st.m.assign(param_count, 0.0);
        st.v.assign(param_count, 0.0);
    }
    return st;
}

double init_bound(const ArchSpec& arch, const ParamLocation& loc) {
    const double fan_in = static_cast<double>(arch.layer_dims[loc.layer]);
    return loc.kind == ParamKind::weight ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(fan_in);
}

ModelParams init_model(const ArchSpec& arch, std::uint64_t seed) {
    arch.validate();
    ModelParams model{arch, std::vector<double>(arch.param_count())};
    Rng rng = make_rng(seed, {stream::kInit});
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const auto s = arch.layer(l);
        const double wb = init_bound(arch, {l, ParamKind::weight, 0});
        const double bb = init_bound(arch, {l, ParamKind::bias, 0});
        std::uniform_real_distribution<double> wdist(-wb, wb);
        std::uniform_real_distribution<double> bdist(-bb, bb);
        for (std::size_t i = s.weight_offset; i < s.bias_offset; ++i) model.values[i] = wdist(rng);
        for (std::size_t i = s.bias_offset; i < s.end; ++i) model.values[i] = bdist(rng);
    }
    return model;
}

void check_batch(const ArchSpec& arch, const Batch& batch) {
    if (batch.features.cols != arch.input_dim()) {
        throw ShapeError("feature width " + std::to_string(batch.features.cols) +
                         " does not match input dim " + std::to_string(arch.input_dim()));
    }
    if (batch.features.rows != batch.labels.size()) {
        throw ShapeError("feature rows and label count differ");
    }
    const int classes = static_cast<int>(arch.num_classes());
    for (int y : batch.labels) {
        if (y < 0 || y >= classes) throw ShapeError("label " + std::to_string(y) + " out of range");
    }
}

namespace {

// Activations of every layer input; acts[0] is the feature matrix copy,
// acts[L] the logits.
std::vector<Matrix> forward_all(const ModelParams& model, const Matrix& features) {
    const auto& arch = model.arch;
    const std::size_t n = features.rows;
    std::vector<Matrix> acts;
    acts.reserve(arch.num_layers() + 1);
    acts.push_back(features);
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const auto s = arch.layer(l);
        Matrix out(n, s.fan_out);
        kernels::dense_forward(acts.back().data, model.weights(l), model.biases(l), n, s.fan_in,
                               s.fan_out, out.data);
        if (l + 1 < arch.num_layers()) {
            for (double& z : out.data) z = z > 0.0 ? z : 0.0;
        }
        acts.push_back(std::move(out));
    }
    return acts;
}

// Row-wise log-softmax with the row max subtracted first.
void log_softmax_row(std::span<const double> logits, std::span<double> out) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] - lse;
}

void check_model_input(const ModelParams& model, const Matrix& features) {
    if (model.values.size() != model.arch.param_count()) {
        throw ShapeError("parameter vector length does not match architecture");
    }
    if (features.cols != model.arch.input_dim()) {
        throw ShapeError("feature width " + std::to_string(features.cols) +
                         " does not match input dim " + std::to_string(model.arch.input_dim()));
    }
}

}  // namespace

Matrix forward_logits(const ModelParams& model, const Matrix& features) {
    check_model_input(model, features);
    auto acts = forward_all(model, features);
    return std::move(acts.back());
}

LossGrad loss_and_grad(const ModelParams& model, const Batch& batch) {
    if (batch.size() == 0) throw ArgumentError("loss_and_grad on an empty batch");
    check_model_input(model, batch.features);
    check_batch(model.arch, batch);

    const auto& arch = model.arch;
    const std::size_t n = batch.size();
    const std::size_t classes = arch.num_classes();
    auto acts = forward_all(model, batch.features);

    // delta = (softmax - onehot) / n
    Matrix delta(n, classes);
    std::vector<double> logp(classes);
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        log_softmax_row(acts.back().row(r), logp);
        const auto y = static_cast<std::size_t>(batch.labels[r]);
        loss -= logp[y];
        auto d = delta.row(r);
        for (std::size_t j = 0; j < classes; ++j) d[j] = std::exp(logp[j]) * inv_n;
        d[y] -= inv_n;
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");

    LossGrad out{loss, std::vector<double>(arch.param_count())};
    for (std::size_t l = arch.num_layers(); l-- > 0;) {
        const auto s = arch.layer(l);
        std::span<double> dw(out.grad.data() + s.weight_offset, s.fan_in * s.fan_out);
        std::span<double> db(out.grad.data() + s.bias_offset, s.fan_out);
        Matrix din;
        if (l > 0) din = Matrix(n, s.fan_in);
        kernels::dense_backward(acts[l].data, model.weights(l), delta.data, n, s.fan_in, s.fan_out,
                                dw, db, din.data);
        if (l > 0) {
            // ReLU mask: acts[l] holds post-activation values of layer l-1.
            for (std::size_t i = 0; i < din.data.size(); ++i) {
                if (acts[l].data[i] <= 0.0) din.data[i] = 0.0;
            }
            delta = std::move(din);
        }
    }
    return out;
}

double mean_loss(const ModelParams& model, const Batch& batch) {
    if (batch.size() == 0) throw ArgumentError("mean_loss on an empty batch");
    check_model_input(model, batch.features);
    check_batch(model.arch, batch);
    const Matrix logits = forward_logits(model, batch.features);
    std::vector<double> logp(logits.cols);
    double loss = 0.0;
    for (std::size_t r = 0; r < batch.size(); ++r) {
        log_softmax_row(logits.row(r), logp);
        loss -= logp[static_cast<std::size_t>(batch.labels[r])];
    }
    return loss / static_cast<double>(batch.size());
}

std::vector<int> predict(const ModelParams& model, const Matrix& features) {
    const Matrix logits = forward_logits(model, features);
    std::vector<int> out(logits.rows);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto row = logits.row(r);
        // max_element returns the first maximum
        out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double accuracy(const ModelParams& model, const Batch& batch) {
    if (batch.size() == 0) return 0.0;
    const auto pred = predict(model, batch.features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    return static_cast<double>(correct) / static_cast<double>(batch.size());
}

void opt_step(ModelParams& model, OptState& state, std::span<const double> grad) {
    const std::size_t p = model.values.size();
    if (grad.size() != p) throw ShapeError("gradient length does not match model");
    for (double g : grad) {
        if (!std::isfinite(g)) throw NumericError("non-finite gradient entry");
    }
    state.step += 1;
    if (state.kind == OptKind::sgd) {
        for (std::size_t i = 0; i < p; ++i) model.values[i] -= state.learning_rate * grad[i];
        return;
    }
    if (state.m.size() != p) {
        state.m.assign(p, 0.0);
        state.v.assign(p, 0.0);
    }
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < p; ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        model.values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

ModelParams reinit_params(const ModelParams& model, std::span<const std::size_t> indices,
                          std::uint64_t seed) {
    const std::size_t p = model.values.size();
    std::vector<std::size_t> sorted(indices.begin(), indices.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    if (!sorted.empty() && sorted.back() >= p) {
        throw ArgumentError("reinit index " + std::to_string(sorted.back()) + " out of range");
    }
    ModelParams out = model;
    Rng rng = make_rng(seed, {stream::kReinit});
    for (std::size_t idx : sorted) {
        const double b = init_bound(model.arch, model.arch.locate(idx));
        std::uniform_real_distribution<double> dist(-b, b);
        out.values[idx] = dist(rng);
    }
    return out;
}

}  // namespace fedmp
