#include "fedmp/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <numeric>
#include <string>

#include "fedmp/errors.hpp"
#include "fedmp/kernels.hpp"
#include "fedmp/rng.hpp"

namespace fedmp {

void FLConfig::validate() const {
    arch.validate();
    if (rounds < 1) throw ConfigError("rounds must be at least 1");
    if (local_epochs < 1) throw ConfigError("local epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
}

ModelParams local_train(const ModelParams& model, const Dataset& ds,
                        std::span<const std::size_t> client_ids, const FLConfig& cfg,
                        std::uint64_t seed, AccessTracer* tracer) {
    if (client_ids.empty()) throw DataError("local_train on a client without examples");
    ModelParams local = model;
    OptState opt = OptState::make(cfg.optimizer, cfg.learning_rate, local.values.size());
    std::vector<std::size_t> order(client_ids.begin(), client_ids.end());
    Rng rng = make_rng(seed, {stream::kShuffle});
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const Batch batch = ds.gather(std::span(order).subspan(start, len), tracer);
            const LossGrad lg = loss_and_grad(local, batch);
            opt_step(local, opt, lg.grad);
        }
    }
    return local;
}

ModelParams average_models(std::span<const ModelParams> models) {
    if (models.empty()) throw ArgumentError("average_models needs at least one model");
    const ArchSpec& arch = models.front().arch;
    std::vector<std::span<const double>> views;
    views.reserve(models.size());
    for (const auto& m : models) {
        if (!(m.arch == arch) || m.values.size() != models.front().values.size()) {
            throw ShapeError("average_models over mixed architectures");
        }
        views.emplace_back(m.values);
    }
    ModelParams out{arch, std::vector<double>(models.front().values.size())};
    kernels::mean_of(views, out.values);
    return out;
}

TrainedRun run_fedavg(const FLConfig& cfg, const Partition& part, const Dataset& ds,
                      std::span<const int> participating, const ModelParams& init, EvalSets eval,
                      AccessTracer* tracer) {
    cfg.validate();
    if (participating.empty()) throw ArgumentError("run_fedavg needs at least one participating client");
    if (!(init.arch == cfg.arch)) throw ShapeError("initial model does not match the configured architecture");

    std::vector<int> clients(participating.begin(), participating.end());
    std::sort(clients.begin(), clients.end());
    clients.erase(std::unique(clients.begin(), clients.end()), clients.end());
    for (int k : clients) {
        if (k < 0 || static_cast<std::size_t>(k) >= part.num_clients()) {
            throw ArgumentError("participating client " + std::to_string(k) + " does not exist");
        }
        if (part.client_examples[static_cast<std::size_t>(k)].empty()) {
            throw DataError("participating client " + std::to_string(k) + " holds no examples");
        }
    }

    TrainedRun run;
    run.seed_lineage = {cfg.seed};
    ModelParams global = init;
    std::vector<ModelParams> locals(clients.size());
    std::vector<std::exception_ptr> failures(clients.size());
    const auto start = std::chrono::steady_clock::now();
    const auto n_clients = static_cast<std::int64_t>(clients.size());

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        // Each client's shuffle seed depends only on (run seed, round, client),
        // so the schedule does not affect the result.
#pragma omp parallel for schedule(dynamic)
        for (std::int64_t i = 0; i < n_clients; ++i) {
            const auto slot = static_cast<std::size_t>(i);
            try {
                const auto k = static_cast<std::size_t>(clients[slot]);
                const std::uint64_t seed = derive_seed(cfg.seed, {stream::kShuffle, round, k});
                locals[slot] = local_train(global, ds, part.client_examples[k], cfg, seed, tracer);
            } catch (...) {
                failures[slot] = std::current_exception();
            }
        }
        for (const auto& e : failures) {
            if (e) std::rethrow_exception(e);
        }
        global = average_models(locals);

        if (round % cfg.eval_every == 0 || round == cfg.rounds) {
            HistoryPoint h;
            h.round = round;
            if (eval.test) h.test_accuracy = accuracy(global, *eval.test);
            if (eval.unlearn) h.unlearn_accuracy = accuracy(global, *eval.unlearn);
            h.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            run.history.push_back(h);
        }
    }
    run.final_model = std::move(global);
    return run;
}

namespace {

std::vector<TrainedRun> ensemble(const FLConfig& cfg, const Partition& part, const Dataset& ds,
                                 std::span<const int> clients, std::size_t members,
                                 std::uint64_t base_seed, std::uint64_t role, EvalSets eval,
                                 AccessTracer* tracer) {
    if (members < 1) throw ArgumentError("ensemble size must be at least 1");
    std::vector<TrainedRun> runs;
    runs.reserve(members);
    for (std::size_t j = 0; j < members; ++j) {
        FLConfig member = cfg;
        member.seed = base_seed + j;
        const std::uint64_t init_seed = derive_seed(member.seed, {stream::kEnsemble, role});
        TrainedRun run = run_fedavg(member, part, ds, clients, init_model(cfg.arch, init_seed), eval, tracer);
        run.seed_lineage = {base_seed, member.seed, init_seed};
        runs.push_back(std::move(run));
    }
    return runs;
}

}  // namespace

std::vector<TrainedRun> retrain_ensemble_runs(const FLConfig& cfg, const Partition& part,
                                              const Dataset& ds, std::size_t members,
                                              std::uint64_t base_seed, EvalSets eval,
                                              AccessTracer* tracer) {
    const auto remaining = part.remaining_clients();
    if (remaining.empty()) throw DataError("no remaining clients to retrain on");
    return ensemble(cfg, part, ds, remaining, members, base_seed, 1, eval, tracer);
}

std::vector<TrainedRun> original_ensemble_runs(const FLConfig& cfg, const Partition& part,
                                               const Dataset& ds, std::size_t members,
                                               std::uint64_t base_seed, EvalSets eval) {
    return ensemble(cfg, part, ds, part.all_clients(), members, base_seed, 0, eval, nullptr);
}

std::vector<ModelParams> final_models(std::span<const TrainedRun> runs) {
    std::vector<ModelParams> out;
    out.reserve(runs.size());
    for (const auto& r : runs) out.push_back(r.final_model);
    return out;
}

std::vector<ModelParams> retrain_ensemble(const FLConfig& cfg, const Partition& part,
                                          const Dataset& ds, std::size_t members,
                                          std::uint64_t base_seed) {
    return final_models(retrain_ensemble_runs(cfg, part, ds, members, base_seed));
}

std::vector<ModelParams> original_ensemble(const FLConfig& cfg, const Partition& part,
                                           const Dataset& ds, std::size_t members,
                                           std::uint64_t base_seed) {
    return final_models(original_ensemble_runs(cfg, part, ds, members, base_seed));
}

}  // namespace fedmp
