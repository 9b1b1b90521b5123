#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedmp/data.hpp"
#include "fedmp/nn.hpp"

namespace fedmp {

struct FLConfig {
    ArchSpec arch;
    std::size_t rounds = 50;
    std::size_t local_epochs = 3;
    std::size_t batch_size = 32;
    OptKind optimizer = OptKind::adam;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    // Evaluate every this many rounds; the last round is always evaluated.
    std::size_t eval_every = 1;

    void validate() const;
};

struct HistoryPoint {
    std::size_t round = 0;
    double test_accuracy = 0.0;
    std::optional<double> unlearn_accuracy;
    double elapsed_s = 0.0;
};

struct TrainedRun {
    ModelParams final_model;
    std::vector<HistoryPoint> history;
    std::vector<std::uint64_t> seed_lineage;
};

// Held-out data the server evaluates between rounds. Not routed through the
// access tracer: it models server-side monitoring, not client training.
struct EvalSets {
    const Batch* test = nullptr;
    const Batch* unlearn = nullptr;
};

// E epochs of shuffled mini-batch optimization over one client's examples,
// starting from a fresh optimizer state. `seed` drives the shuffles.
ModelParams local_train(const ModelParams& model, const Dataset& ds,
                        std::span<const std::size_t> client_ids, const FLConfig& cfg,
                        std::uint64_t seed, AccessTracer* tracer = nullptr);

// Unweighted elementwise mean, accumulated in list order.
ModelParams average_models(std::span<const ModelParams> models);

// T rounds of broadcast / local_train / average over `participating`.
// Clients train in parallel; aggregation order is ascending client id.
TrainedRun run_fedavg(const FLConfig& cfg, const Partition& part, const Dataset& ds,
                      std::span<const int> participating, const ModelParams& init,
                      EvalSets eval = {}, AccessTracer* tracer = nullptr);

// J runs over the remaining clients from fresh inits, member j seeded with
// base_seed + j.
std::vector<TrainedRun> retrain_ensemble_runs(const FLConfig& cfg, const Partition& part,
                                              const Dataset& ds, std::size_t members,
                                              std::uint64_t base_seed, EvalSets eval = {},
                                              AccessTracer* tracer = nullptr);

// Same over every client.
std::vector<TrainedRun> original_ensemble_runs(const FLConfig& cfg, const Partition& part,
                                               const Dataset& ds, std::size_t members,
                                               std::uint64_t base_seed, EvalSets eval = {});

std::vector<ModelParams> retrain_ensemble(const FLConfig& cfg, const Partition& part,
                                          const Dataset& ds, std::size_t members,
                                          std::uint64_t base_seed);

std::vector<ModelParams> original_ensemble(const FLConfig& cfg, const Partition& part,
                                           const Dataset& ds, std::size_t members,
                                           std::uint64_t base_seed);

std::vector<ModelParams> final_models(std::span<const TrainedRun> runs);

}  // namespace fedmp
