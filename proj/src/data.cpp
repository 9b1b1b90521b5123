#include "fedmp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "fedmp/errors.hpp"
#include "fedmp/rng.hpp"
#include "fedmp/text.hpp"

namespace fedmp {

void AccessTracer::record(std::span<const std::size_t> ids) {
    std::lock_guard lock(mu_);
    seen_.insert(ids.begin(), ids.end());
}

bool AccessTracer::touched_any(std::span<const std::size_t> ids) const {
    std::lock_guard lock(mu_);
    return std::any_of(ids.begin(), ids.end(), [&](std::size_t id) { return seen_.count(id) > 0; });
}

std::size_t AccessTracer::distinct_count() const {
    std::lock_guard lock(mu_);
    return seen_.size();
}

Batch Dataset::gather(std::span<const std::size_t> ids, AccessTracer* tracer) const {
    if (tracer) tracer->record(ids);
    Batch b;
    b.features = Matrix(ids.size(), dim());
    b.labels.resize(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const std::size_t id = ids[r];
        if (id >= size()) throw ArgumentError("example id " + std::to_string(id) + " out of range");
        std::copy_n(features.row(id).begin(), dim(), b.features.row(r).begin());
        b.labels[r] = labels[id];
    }
    return b;
}

Batch Dataset::all() const { return Batch{features, labels}; }

void Dataset::validate() const {
    if (size() == 0) throw DataError("dataset is empty");
    if (features.rows != labels.size()) throw DataError("feature rows and labels differ");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw DataError("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
    }
    if (!pinned_client.empty() && pinned_client.size() != size()) {
        throw DataError("pinned_client length differs from dataset size");
    }
}

void SynthConfig::validate() const {
    if (num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (samples < num_classes) throw ConfigError("synthetic data needs samples >= classes");
    if (!(noise_sigma > 0.0)) throw ConfigError("noise sigma must be positive");
    if (input_dim == 0) throw ConfigError("input dim must be positive");
    if (clusters_per_class == 0) throw ConfigError("clusters per class must be positive");
    if (intrinsic_dim > input_dim) throw ConfigError("intrinsic dim exceeds input dim");
    if (!(center_scale >= 0.0)) throw ConfigError("center scale must be non-negative");
    if (outlier_distance < 6.0) throw ConfigError("outlier distance must be at least 6 sigma");
    for (int k : outlier_clients) {
        if (k < 0) throw ConfigError("outlier client id must be non-negative");
    }
}

Matrix synthetic_centers(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t count = cfg.num_classes * cfg.clusters_per_class;
    Matrix centers(count, cfg.input_dim);
    Rng rng = make_rng(seed, {stream::kCenters});
    std::normal_distribution<double> gauss(0.0, 1.0);
    constexpr int kMaxTries = 10000;
    for (std::size_t c = 0; c < count; ++c) {
        int tries = 0;
        for (;;) {
            auto row = centers.row(c);
            for (std::size_t j = 0; j < cfg.active_dims(); ++j) row[j] = cfg.center_scale * gauss(rng);
            bool ok = true;
            for (std::size_t o = 0; o < c && ok; ++o) {
                double d2 = 0.0;
                for (std::size_t j = 0; j < cfg.input_dim; ++j) {
                    const double diff = row[j] - centers(o, j);
                    d2 += diff * diff;
                }
                ok = std::sqrt(d2) >= cfg.min_center_distance;
            }
            if (ok) break;
            if (++tries >= kMaxTries) {
                throw ConfigError("cannot place cluster centers at the requested minimum distance");
            }
        }
    }
    return centers;
}

namespace {

void sample_clusters(const SynthConfig& cfg, const Matrix& centers, std::size_t n, Rng& rng,
                     Dataset& ds, std::size_t row0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, cfg.clusters_per_class - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % cfg.num_classes;
        const std::size_t cluster = cls * cfg.clusters_per_class + pick(rng);
        auto row = ds.features.row(row0 + i);
        for (std::size_t j = 0; j < cfg.active_dims(); ++j) {
            row[j] = centers(cluster, j) + cfg.noise_sigma * gauss(rng);
        }
        ds.labels[row0 + i] = static_cast<int>(cls);
    }
}

}  // namespace

Dataset gen_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    const Matrix centers = synthetic_centers(cfg, seed);
    const std::size_t n_out = cfg.outliers_per_client * cfg.outlier_clients.size();
    const std::size_t total = cfg.samples + n_out;

    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.features = Matrix(total, cfg.input_dim);
    ds.labels.assign(total, 0);
    ds.pinned_client.assign(total, -1);

    Rng rng = make_rng(seed, {stream::kSamples});
    sample_clusters(cfg, centers, cfg.samples, rng, ds, 0);

    Rng orng = make_rng(seed, {stream::kOutliers});
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, static_cast<int>(cfg.num_classes) - 1);
    const std::size_t k = cfg.active_dims();
    std::size_t row = cfg.samples;
    if (k < cfg.input_dim) {
        // A cluster-like point inside the data subspace, displaced orthogonally
        // by outlier_distance * sigma so no center is closer than that.
        std::uniform_int_distribution<std::size_t> pick_center(0, centers.rows - 1);
        const double offset = cfg.outlier_distance * cfg.noise_sigma;
        for (int client : cfg.outlier_clients) {
            for (std::size_t i = 0; i < cfg.outliers_per_client; ++i, ++row) {
                auto f = ds.features.row(row);
                const auto c = centers.row(pick_center(orng));
                for (std::size_t j = 0; j < k; ++j) f[j] = c[j] + cfg.noise_sigma * gauss(orng);
                double norm = 0.0;
                do {
                    norm = 0.0;
                    for (std::size_t j = k; j < cfg.input_dim; ++j) {
                        f[j] = gauss(orng);
                        norm += f[j] * f[j];
                    }
                    norm = std::sqrt(norm);
                } while (norm == 0.0);
                for (std::size_t j = k; j < cfg.input_dim; ++j) f[j] *= offset / norm;
                ds.labels[row] = label(orng);
                ds.pinned_client[row] = client;
            }
        }
        return ds;
    }

    // Full-rank data: outliers sit on a sphere whose radius clears every
    // center by outlier_distance * sigma, in uniformly random directions.
    double max_norm = 0.0;
    for (std::size_t c = 0; c < centers.rows; ++c) {
        double s = 0.0;
        for (double x : centers.row(c)) s += x * x;
        max_norm = std::max(max_norm, std::sqrt(s));
    }
    const double radius = max_norm + cfg.outlier_distance * cfg.noise_sigma;
    for (int client : cfg.outlier_clients) {
        for (std::size_t i = 0; i < cfg.outliers_per_client; ++i, ++row) {
            auto f = ds.features.row(row);
            double norm = 0.0;
            do {
                norm = 0.0;
                for (double& x : f) {
                    x = gauss(orng);
                    norm += x * x;
                }
                norm = std::sqrt(norm);
            } while (norm == 0.0);
            for (double& x : f) x *= radius / norm;
            ds.labels[row] = label(orng);
            ds.pinned_client[row] = client;
        }
    }
    return ds;
}

Dataset gen_holdout(const SynthConfig& cfg, std::uint64_t seed, std::size_t n, std::uint64_t holdout_seed) {
    const Matrix centers = synthetic_centers(cfg, seed);
    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.features = Matrix(n, cfg.input_dim);
    ds.labels.assign(n, 0);
    Rng rng = make_rng(holdout_seed, {stream::kSamples, 1});
    sample_clusters(cfg, centers, n, rng, ds, 0);
    return ds;
}

bool Partition::is_unlearning(int k) const {
    return std::binary_search(unlearning_clients.begin(), unlearning_clients.end(), k);
}

std::vector<int> Partition::remaining_clients() const {
    std::vector<int> out;
    for (int k = 0; k < static_cast<int>(num_clients()); ++k) {
        if (!is_unlearning(k)) out.push_back(k);
    }
    return out;
}

std::vector<int> Partition::all_clients() const {
    std::vector<int> out(num_clients());
    std::iota(out.begin(), out.end(), 0);
    return out;
}

std::vector<std::size_t> Partition::examples_of(std::span<const int> clients) const {
    std::vector<std::size_t> out;
    for (int k : clients) {
        const auto& ex = client_examples.at(static_cast<std::size_t>(k));
        out.insert(out.end(), ex.begin(), ex.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

void validate_partition(const Partition& part, std::size_t n, bool allow_empty) {
    std::vector<char> seen(n, 0);
    std::size_t total = 0;
    for (std::size_t k = 0; k < part.num_clients(); ++k) {
        const auto& ex = part.client_examples[k];
        if (ex.empty() && !allow_empty) {
            throw DataError("client " + std::to_string(k) + " holds no examples");
        }
        for (std::size_t id : ex) {
            if (id >= n || seen[id]) throw DataError("example " + std::to_string(id) + " assigned twice or out of range");
            seen[id] = 1;
        }
        total += ex.size();
    }
    if (total != n) throw DataError("partition does not cover every example");
}

namespace {

// Splits ids into a pinned part (placed directly) and the free remainder.
std::vector<std::size_t> place_pinned(const Dataset& ds, std::size_t clients, Partition& part) {
    part.client_examples.assign(clients, {});
    std::vector<std::size_t> free_ids;
    for (std::size_t id = 0; id < ds.size(); ++id) {
        if (ds.is_pinned(id)) {
            const auto k = static_cast<std::size_t>(ds.pinned_client[id]);
            if (k >= clients) {
                throw ConfigError("example " + std::to_string(id) + " is pinned to client " +
                                  std::to_string(k) + " but only " + std::to_string(clients) +
                                  " clients exist");
            }
            part.client_examples[k].push_back(id);
        } else {
            free_ids.push_back(id);
        }
    }
    return free_ids;
}

void sort_clients(Partition& part) {
    for (auto& ex : part.client_examples) std::sort(ex.begin(), ex.end());
}

}  // namespace

Partition partition_iid(const Dataset& ds, std::size_t clients, std::uint64_t seed) {
    if (clients == 0) throw ArgumentError("client count must be positive");
    if (clients > ds.size()) throw ArgumentError("more clients than examples");
    Partition part;
    auto free_ids = place_pinned(ds, clients, part);
    Rng rng = make_rng(seed, {stream::kPartition, 0});
    std::shuffle(free_ids.begin(), free_ids.end(), rng);
    const std::size_t base = free_ids.size() / clients;
    const std::size_t extra = free_ids.size() % clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < clients; ++k) {
        const std::size_t len = base + (k < extra ? 1 : 0);
        auto& dst = part.client_examples[k];
        dst.insert(dst.end(), free_ids.begin() + static_cast<std::ptrdiff_t>(pos),
                   free_ids.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    sort_clients(part);
    validate_partition(part, ds.size());
    return part;
}

Partition partition_dirichlet(const Dataset& ds, std::size_t clients, double alpha, std::uint64_t seed,
                              DirichletMode mode, bool allow_empty) {
    if (clients == 0) throw ArgumentError("client count must be positive");
    if (mode == DirichletMode::sampled && !(alpha > 0.0)) throw ArgumentError("alpha must be positive");

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);

    if (mode == DirichletMode::disjoint) {
        Partition part;
        auto free_ids = place_pinned(ds, clients, part);
        for (std::size_t id : free_ids) {
            part.client_examples[static_cast<std::size_t>(ds.labels[id]) % clients].push_back(id);
        }
        sort_clients(part);
        validate_partition(part, ds.size(), allow_empty);
        return part;
    }

    constexpr int kMaxAttempts = 100;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        Partition part;
        auto free_ids = place_pinned(ds, clients, part);
        for (auto& v : by_class) v.clear();
        for (std::size_t id : free_ids) by_class[static_cast<std::size_t>(ds.labels[id])].push_back(id);

        Rng rng = make_rng(seed, {stream::kPartition, 1, static_cast<std::uint64_t>(attempt)});
        std::gamma_distribution<double> gamma(alpha, 1.0);
        std::vector<double> p(clients);
        for (auto& ids : by_class) {
            std::shuffle(ids.begin(), ids.end(), rng);
            double sum = 0.0;
            for (double& x : p) {
                x = gamma(rng);
                sum += x;
            }
            if (sum <= 0.0) {
                // every gamma draw underflowed: the limit of Dir(alpha -> 0)
                std::fill(p.begin(), p.end(), 0.0);
                p[std::uniform_int_distribution<std::size_t>(0, clients - 1)(rng)] = 1.0;
                sum = 1.0;
            }
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t k = 0; k < clients; ++k) {
                cum += p[k] / sum;
                const std::size_t end =
                    k + 1 == clients ? ids.size()
                                     : std::min(ids.size(), static_cast<std::size_t>(std::llround(
                                                                cum * static_cast<double>(ids.size()))));
                auto& dst = part.client_examples[k];
                if (end > start) {
                    dst.insert(dst.end(), ids.begin() + static_cast<std::ptrdiff_t>(start),
                               ids.begin() + static_cast<std::ptrdiff_t>(end));
                    start = end;
                }
            }
        }
        const bool has_empty = std::any_of(part.client_examples.begin(), part.client_examples.end(),
                                           [](const auto& ex) { return ex.empty(); });
        if (has_empty && !allow_empty) continue;
        sort_clients(part);
        validate_partition(part, ds.size(), allow_empty);
        return part;
    }
    throw DataError("Dirichlet partition left a client empty after " + std::to_string(kMaxAttempts) +
                    " attempts");
}

Partition mark_unlearning(Partition part, std::span<const int> clients) {
    std::vector<int> ku(clients.begin(), clients.end());
    std::sort(ku.begin(), ku.end());
    ku.erase(std::unique(ku.begin(), ku.end()), ku.end());
    for (int k : ku) {
        if (k < 0 || static_cast<std::size_t>(k) >= part.num_clients()) {
            throw ArgumentError("unlearning client " + std::to_string(k) + " outside [0, " +
                                std::to_string(part.num_clients()) + ")");
        }
    }
    if (ku.size() >= part.num_clients()) {
        throw ArgumentError("cannot unlearn every client: the remaining set would be empty");
    }
    part.unlearning_clients = std::move(ku);
    return part;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << ds.size() << ' ' << ds.dim() << ' ' << ds.num_classes << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << i << ' ' << ds.labels[i];
        for (double x : ds.features.row(i)) out << ' ' << format_double(x);
        out << '\n';
    }
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::size_t n = 0, d = 0, c = 0;
    if (!(in >> n >> d >> c)) throw DataError(path.string() + ": malformed header");
    Dataset ds;
    ds.num_classes = c;
    ds.features = Matrix(n, d);
    ds.labels.assign(n, 0);
    std::vector<char> seen(n, 0);
    std::string tok;
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t id = 0;
        int label = 0;
        if (!(in >> id >> label)) throw DataError(path.string() + ": truncated at row " + std::to_string(r));
        if (id >= n || seen[id]) throw DataError(path.string() + ": bad or repeated id " + std::to_string(id));
        seen[id] = 1;
        ds.labels[id] = label;
        for (std::size_t j = 0; j < d; ++j) {
            if (!(in >> tok)) throw DataError(path.string() + ": truncated features at id " + std::to_string(id));
            try {
                ds.features(id, j) = parse_double(tok);
            } catch (const std::invalid_argument&) {
                throw DataError(path.string() + ": bad feature value at id " + std::to_string(id));
            }
        }
    }
    ds.validate();
    return ds;
}

}  // namespace fedmp
