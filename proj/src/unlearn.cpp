#include "fedmp/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "fedmp/errors.hpp"
#include "fedmp/kernels.hpp"
#include "fedmp/text.hpp"

namespace fedmp {

std::string to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::redundant_remaining: return "redundant_remaining";
        case StrategyKind::salun: return "salun";
        case StrategyKind::localized: return "localized";
        case StrategyKind::deep_layers: return "deep_layers";
        case StrategyKind::shallow_layers: return "shallow_layers";
    }
    return "unknown";
}

StrategyKind strategy_from_string(const std::string& name) {
    for (auto k : {StrategyKind::redundant_remaining, StrategyKind::salun, StrategyKind::localized,
                   StrategyKind::deep_layers, StrategyKind::shallow_layers}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown selection strategy '" + name + "'");
}

void SelectionStrategy::validate(const ArchSpec& arch) const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
    if (layer_split > arch.num_layers()) {
        throw ConfigError("layer_split " + std::to_string(layer_split) + " exceeds layer count " +
                          std::to_string(arch.num_layers()));
    }
}

std::size_t selection_size(double rho, std::size_t param_count) {
    const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(param_count) + 0.5));
    return std::min(k, param_count);
}

std::vector<double> avg_client_gradient(const ModelParams& model, const Partition& part,
                                        const Dataset& ds, std::span<const int> clients,
                                        AccessTracer* tracer) {
    if (clients.empty()) throw DataError("no clients to average gradients over");
    std::vector<int> order(clients.begin(), clients.end());
    std::sort(order.begin(), order.end());
    std::vector<std::vector<double>> grads(order.size());
    std::vector<std::exception_ptr> failures(order.size());
    const auto n = static_cast<std::int64_t>(order.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < n; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        try {
            const auto& ids = part.client_examples.at(static_cast<std::size_t>(order[slot]));
            if (ids.empty()) {
                throw DataError("client " + std::to_string(order[slot]) + " holds no examples");
            }
            grads[slot] = loss_and_grad(model, ds.gather(ids, tracer)).grad;
        } catch (...) {
            failures[slot] = std::current_exception();
        }
    }
    for (const auto& e : failures) {
        if (e) std::rethrow_exception(e);
    }
    std::vector<std::span<const double>> views(grads.begin(), grads.end());
    std::vector<double> mean(model.values.size());
    kernels::mean_of(views, mean);
    return mean;
}

std::vector<double> avg_remaining_gradient(const ModelParams& model, const Partition& part,
                                           const Dataset& ds, AccessTracer* tracer) {
    const auto remaining = part.remaining_clients();
    if (remaining.empty()) throw DataError("no remaining clients");
    return avg_client_gradient(model, part, ds, remaining, tracer);
}

namespace {

struct Ranking {
    std::vector<double> score;
    bool ascending = false;
};

Ranking rank_scores(const SelectionStrategy& strategy, const ModelParams& model,
                    std::span<const double> grad_remaining,
                    std::optional<std::span<const double>> grad_unlearn) {
    const std::size_t p = model.values.size();
    Ranking r;
    r.score.resize(p);
    if (strategy.kind == StrategyKind::redundant_remaining) {
        for (std::size_t i = 0; i < p; ++i) r.score[i] = std::abs(grad_remaining[i]);
        r.ascending = true;
        return r;
    }
    const auto gu = *grad_unlearn;
    if (strategy.kind == StrategyKind::localized) {
        for (std::size_t i = 0; i < p; ++i) r.score[i] = std::abs(model.values[i] * gu[i]);
    } else {
        for (std::size_t i = 0; i < p; ++i) r.score[i] = std::abs(gu[i]);
    }
    return r;
}

}  // namespace

std::vector<std::size_t> select_parameters(const SelectionStrategy& strategy, const ModelParams& model,
                                           std::span<const double> grad_remaining,
                                           std::optional<std::span<const double>> grad_unlearn) {
    strategy.validate(model.arch);
    const std::size_t p = model.values.size();
    if (grad_remaining.size() != p) throw ShapeError("remaining gradient length does not match model");
    if (strategy.needs_unlearn_gradient()) {
        if (!grad_unlearn) {
            throw ArgumentError("strategy " + to_string(strategy.kind) + " needs the unlearning-set gradient");
        }
        if (grad_unlearn->size() != p) throw ShapeError("unlearning gradient length does not match model");
    }

    std::vector<std::size_t> pool;
    pool.reserve(p);
    const std::size_t split = strategy.layer_split;
    for (std::size_t l = 0; l < model.arch.num_layers(); ++l) {
        const bool keep = strategy.kind == StrategyKind::deep_layers      ? l >= split
                          : strategy.kind == StrategyKind::shallow_layers ? l < split
                                                                          : true;
        if (!keep) continue;
        const auto s = model.arch.layer(l);
        for (std::size_t i = s.weight_offset; i < s.end; ++i) pool.push_back(i);
    }

    const std::size_t k = std::min(selection_size(strategy.rho, p), pool.size());
    if (k == 0) return {};

    const Ranking r = rank_scores(strategy, model, grad_remaining, grad_unlearn);
    auto before = [&](std::size_t a, std::size_t b) {
        if (r.score[a] != r.score[b]) return r.ascending ? r.score[a] < r.score[b] : r.score[a] > r.score[b];
        return a < b;
    };
    std::nth_element(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1), pool.end(), before);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

namespace {

// 10^e parsed from text so it equals the literal 1e<e> exactly.
double decade(int e) { return parse_double("1e" + std::to_string(e)); }

double fraction_at_least(std::span<const double> mags, double bound) {
    const auto it = std::lower_bound(mags.begin(), mags.end(), bound);
    return static_cast<double>(mags.end() - it) / static_cast<double>(mags.size());
}

double fraction_below(std::span<const double> mags, double bound) {
    const auto it = std::lower_bound(mags.begin(), mags.end(), bound);
    return static_cast<double>(it - mags.begin()) / static_cast<double>(mags.size());
}

}  // namespace

ImportanceThreshold threshold_from_importance(std::span<const double> grad_remaining, int decade_gap) {
    if (grad_remaining.empty()) throw ArgumentError("importance vector is empty");
    if (decade_gap < 1) throw ArgumentError("decade_gap must be at least 1");

    std::vector<double> mags(grad_remaining.size());
    std::transform(grad_remaining.begin(), grad_remaining.end(), mags.begin(),
                   [](double g) { return std::abs(g); });
    std::sort(mags.begin(), mags.end());

    ImportanceThreshold out;
    const double top = mags.back();
    if (!(top >= 1e-290) || !std::isfinite(top)) {
        out.rho = kMinAutoRho;
        out.degenerate = true;
        return out;
    }

    constexpr double kTailFraction = 0.01;
    // Start one decade above the maximum, where the tail is empty, and walk
    // down while the next decade still holds at most 1% of parameters.
    int e = static_cast<int>(std::floor(std::log10(top)));
    while (fraction_at_least(mags, decade(e + 1)) > kTailFraction) ++e;
    while (e > -290 && fraction_at_least(mags, decade(e)) <= kTailFraction) --e;

    out.knee_exponent = e;
    out.redundant_below = decade(e - decade_gap + 1);
    const double raw = fraction_below(mags, out.redundant_below);
    out.rho = std::clamp(raw, kMinAutoRho, kMaxAutoRho);
    out.degenerate = raw < kMinAutoRho || raw > kMaxAutoRho;
    return out;
}

UnlearnResult fedmp_unlearn(const UnlearnRequest& req, const Dataset& ds, EvalSets eval,
                            AccessTracer* tracer) {
    const ModelParams& original = req.original;
    req.strategy.validate(original.arch);
    const auto remaining = req.partition.remaining_clients();
    if (remaining.empty()) throw DataError("unlearning needs at least one remaining client");

    // Stage 1
    const std::vector<double> grad_r = avg_remaining_gradient(original, req.partition, ds, tracer);
    std::optional<std::vector<double>> grad_u;
    if (req.strategy.needs_unlearn_gradient()) {
        grad_u = avg_client_gradient(original, req.partition, ds, req.partition.unlearning_clients, tracer);
    }
    std::optional<std::span<const double>> gu_view;
    if (grad_u) gu_view = std::span<const double>(*grad_u);

    UnlearnResult res;
    res.selected = select_parameters(req.strategy, original, grad_r, gu_view);
    if (!res.selected.empty()) {
        const Ranking r = rank_scores(req.strategy, original, grad_r, gu_view);
        double g = r.score[res.selected.front()];
        for (std::size_t i : res.selected) g = r.ascending ? std::max(g, r.score[i]) : std::min(g, r.score[i]);
        res.gamma = g;
    }

    // Stage 2
    res.reset_model = reinit_params(original, res.selected, req.reinit_seed);

    // Stage 3
    if (req.ft_rounds == 0) {
        res.run.final_model = res.reset_model;
        res.run.seed_lineage = {req.reinit_seed};
        return res;
    }
    FLConfig ft = req.finetune;
    ft.rounds = req.ft_rounds;
    res.run = run_fedavg(ft, req.partition, ds, remaining, res.reset_model, eval, tracer);
    res.run.seed_lineage = {req.reinit_seed, ft.seed};
    return res;
}

ModelParams gradient_ascent_unlearn(const ModelParams& original, const Batch& unlearn_data,
                                    const AscentConfig& cfg) {
    if (!(cfg.radius > 0.0)) throw ArgumentError("ascent radius must be positive");
    ModelParams theta = original;
    const std::size_t p = theta.values.size();
    std::vector<double> diff(p);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const LossGrad lg = loss_and_grad(theta, unlearn_data);
        double norm2 = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            if (!std::isfinite(lg.grad[i])) throw NumericError("non-finite gradient during ascent");
            theta.values[i] += cfg.learning_rate * lg.grad[i];
            diff[i] = theta.values[i] - original.values[i];
            norm2 += diff[i] * diff[i];
        }
        const double norm = std::sqrt(norm2);
        if (norm > cfg.radius) {
            const double scale = cfg.radius / norm;
            for (std::size_t i = 0; i < p; ++i) theta.values[i] = original.values[i] + diff[i] * scale;
        }
    }
    return theta;
}

}  // namespace fedmp
