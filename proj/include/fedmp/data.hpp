#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <set>
#include <span>
#include <vector>

#include "fedmp/nn.hpp"

namespace fedmp {

// Records every example id handed out by Dataset::gather. Lets tests assert
// that a pipeline never touched the unlearning clients' data.
class AccessTracer {
public:
    void record(std::span<const std::size_t> ids);
    bool touched_any(std::span<const std::size_t> ids) const;
    std::size_t distinct_count() const;

private:
    mutable std::mutex mu_;
    std::set<std::size_t> seen_;
};

// Example id == row index. `pinned_client[i] >= 0` forces example i onto that
// client during partitioning (used for the injected outliers).
struct Dataset {
    Matrix features;
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::vector<int> pinned_client;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols; }
    bool is_pinned(std::size_t id) const { return !pinned_client.empty() && pinned_client[id] >= 0; }

    Batch gather(std::span<const std::size_t> ids, AccessTracer* tracer = nullptr) const;
    Batch all() const;
    void validate() const;
};

struct SynthConfig {
    std::size_t num_classes = 3;
    std::size_t clusters_per_class = 1;
    // Cluster centers are N(0, center_scale^2 I), rejected until pairwise
    // distance >= min_center_distance.
    double center_scale = 3.0;
    double min_center_distance = 0.0;
    double noise_sigma = 1.0;
    std::size_t samples = 1000;
    std::size_t input_dim = 2;
    // Clusters vary only in the first intrinsic_dim coordinates; the rest are
    // exactly zero for cluster samples. 0 means input_dim.
    std::size_t intrinsic_dim = 0;
    std::size_t outliers_per_client = 0;
    std::vector<int> outlier_clients;
    // Minimum outlier distance to every center, in units of noise_sigma.
    double outlier_distance = 8.0;

    std::size_t active_dims() const { return intrinsic_dim == 0 ? input_dim : intrinsic_dim; }
    void validate() const;
};

// Class-balanced Gaussian cluster mixture plus, for every client in
// outlier_clients, outliers_per_client isolated examples pinned to it, each
// at least outlier_distance * sigma from every center and uniformly labeled.
// With intrinsic_dim < input_dim an outlier is a cluster-like point pushed
// off the data subspace; otherwise it lies on a sphere around all centers.
// Outlier ids follow the cluster examples.
Dataset gen_synthetic(const SynthConfig& cfg, std::uint64_t seed);

// Fresh cluster samples from the same centers as gen_synthetic(cfg, seed);
// no outliers.
Dataset gen_holdout(const SynthConfig& cfg, std::uint64_t seed, std::size_t n,
                    std::uint64_t holdout_seed);

// Cluster centers used by gen_synthetic(cfg, seed), one row per
// (class, cluster) in class-major order.
Matrix synthetic_centers(const SynthConfig& cfg, std::uint64_t seed);

struct Partition {
    std::vector<std::vector<std::size_t>> client_examples;
    std::vector<int> unlearning_clients;  // sorted

    std::size_t num_clients() const { return client_examples.size(); }
    bool is_unlearning(int k) const;
    std::vector<int> remaining_clients() const;
    std::vector<int> all_clients() const;
    // Sorted ids held by the given clients.
    std::vector<std::size_t> examples_of(std::span<const int> clients) const;
};

// Throws DataError if the partition breaks the partition law over `n` ids
// or (unless allow_empty) leaves a client without data.
void validate_partition(const Partition& part, std::size_t n, bool allow_empty = false);

Partition partition_iid(const Dataset& ds, std::size_t clients, std::uint64_t seed);

enum class DirichletMode { sampled, disjoint };

// Per class, proportions p ~ Dir(alpha * 1_K) and the class's shuffled
// examples are cut at the cumulative quotas of p. Disjoint mode gives each
// class wholly to client (class mod K).
Partition partition_dirichlet(const Dataset& ds, std::size_t clients, double alpha, std::uint64_t seed,
                              DirichletMode mode = DirichletMode::sampled,
                              bool allow_empty = false);

Partition mark_unlearning(Partition part, std::span<const int> clients);

// Columnar text: "N d C" header, then "id label f_1 ... f_d" per row.
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace fedmp
