#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmp/data.hpp"
#include "fedmp/fedsim.hpp"
#include "fedmp/nn.hpp"

// Federated Memorization Pruning: locate parameters that the remaining
// clients barely use, reset them to their initial distribution, fine-tune on
// the remaining clients only. Also the selection ablations and the bounded
// gradient-ascent baseline.
namespace fedmp {

enum class StrategyKind {
    // smallest |mean remaining-client gradient|; needs no unlearning data
    redundant_remaining,
    // largest |gradient on D_u|
    salun,
    // largest |theta * gradient on D_u|
    localized,
    // salun ranking restricted to layers >= layer_split
    deep_layers,
    // salun ranking restricted to layers < layer_split
    shallow_layers,
};

std::string to_string(StrategyKind kind);
StrategyKind strategy_from_string(const std::string& name);

struct SelectionStrategy {
    StrategyKind kind = StrategyKind::redundant_remaining;
    double rho = 0.4;
    std::size_t layer_split = 1;

    void validate(const ArchSpec& arch) const;
    bool needs_unlearn_gradient() const { return kind != StrategyKind::redundant_remaining; }
};

// round-half-up of rho * param_count
std::size_t selection_size(double rho, std::size_t param_count);

// Unweighted mean over `clients` of each client's full-batch gradient at
// `model`.
std::vector<double> avg_client_gradient(const ModelParams& model, const Partition& part,
                                        const Dataset& ds, std::span<const int> clients,
                                        AccessTracer* tracer = nullptr);

std::vector<double> avg_remaining_gradient(const ModelParams& model, const Partition& part,
                                           const Dataset& ds, AccessTracer* tracer = nullptr);

// Sorted parameter indices. Ties in the ranking go to the lower index.
std::vector<std::size_t> select_parameters(const SelectionStrategy& strategy, const ModelParams& model,
                                           std::span<const double> grad_remaining,
                                           std::optional<std::span<const double>> grad_unlearn);

struct ImportanceThreshold {
    double rho = 0.0;
    // 10^knee_exponent is the decade where the top-1% tail of |g| begins
    int knee_exponent = 0;
    double redundant_below = 0.0;
    // no usable knee (all-zero or flat distribution) or the ratio was clamped
    bool degenerate = false;
};

inline constexpr double kMinAutoRho = 0.05;
inline constexpr double kMaxAutoRho = 0.95;

// Picks rho from the magnitude distribution of the remaining-client
// gradient: the knee is the smallest decade e such that at most 1% of
// parameters have |g| >= 10^(e+1); everything below 10^(e - decade_gap + 1)
// counts as redundant. The result is clamped to [0.05, 0.95].
ImportanceThreshold threshold_from_importance(std::span<const double> grad_remaining, int decade_gap = 1);

struct UnlearnRequest {
    ModelParams original;
    Partition partition;
    FLConfig finetune;
    std::size_t ft_rounds = 40;
    SelectionStrategy strategy;
    std::uint64_t reinit_seed = 0;
};

struct UnlearnResult {
    TrainedRun run;
    ModelParams reset_model;
    std::vector<std::size_t> selected;
    // Largest ranking score inside the selected set (for redundant_remaining
    // the realized gradient threshold gamma); empty when nothing was selected.
    std::optional<double> gamma;
};

// Stage 1: mean remaining-client gradient at the original model. Stage 2:
// reset the selected parameters. Stage 3: ft_rounds of FedAvg over the
// remaining clients. With redundant_remaining no unlearning-client example is
// read; the other strategies read D_u to rank parameters.
UnlearnResult fedmp_unlearn(const UnlearnRequest& req, const Dataset& ds, EvalSets eval = {},
                            AccessTracer* tracer = nullptr);

struct AscentConfig {
    std::size_t steps = 10;
    double learning_rate = 1e-2;
    double radius = 1.0;
};

// theta <- theta + lr * grad L(theta, D_u), then projection onto the L2 ball
// of `radius` around the starting model, repeated `steps` times.
ModelParams gradient_ascent_unlearn(const ModelParams& original, const Batch& unlearn_data,
                                    const AscentConfig& cfg);

}  // namespace fedmp
