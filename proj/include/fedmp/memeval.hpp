#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmp/data.hpp"
#include "fedmp/fedsim.hpp"
#include "fedmp/nn.hpp"

// Memorization scoring, Grouped Memorization Evaluation and the diagnostic
// metrics reported next to it.
namespace fedmp {

// Percentile band (lo, hi] with 0 <= lo < hi <= 100. In threshold mode the
// bounds are raw score values instead.
struct Band {
    double lo = 0.0;
    double hi = 100.0;

    std::string label() const;
    bool operator==(const Band&) const = default;
};

// (95,100], (90,95], (85,90], (80,85], (0,80]
std::vector<Band> default_bands();

// Builds bands from strictly descending lower boundaries, e.g. {95,90,85,80,0}.
std::vector<Band> bands_from_boundaries(std::span<const double> descending);

enum class BandMode { percentile, threshold };

struct MemScoreTable {
    std::vector<std::size_t> ids;
    std::vector<double> scores;
    std::vector<Band> bands;
    BandMode mode = BandMode::percentile;
    // band index per entry of `ids`; -1 when no band covers it (threshold mode)
    std::vector<int> band_of;
    // more bands than examples, so some bands are necessarily empty
    bool degenerate = false;

    std::vector<std::size_t> members(std::size_t band) const;
};

// Rank-based banding: order by (score desc, id asc); band (lo, hi] takes the
// ranks from ceil((100-hi)/100 * n) up to ceil((100-lo)/100 * n).
std::vector<int> group_by_percentile(std::span<const double> scores, std::span<const std::size_t> ids,
                                     std::span<const Band> bands, bool* degenerate = nullptr);

// Absolute-threshold banding: score in (lo, hi].
std::vector<int> group_by_threshold(std::span<const double> scores, std::span<const Band> bands);

// mem_i = (fraction of originals correct on i) - (fraction of retrained
// correct on i), using argmax predictions. Bands default to default_bands().
MemScoreTable memorization_scores(std::span<const ModelParams> originals,
                                  std::span<const ModelParams> retrained, const Dataset& ds,
                                  std::span<const std::size_t> unlearn_ids,
                                  std::span<const Band> bands = {});

struct BandResult {
    Band band;
    std::size_t n = 0;
    // absent for an empty band
    std::optional<double> acc_unlearned;
    std::optional<double> acc_retrained;
    std::optional<double> delta;
};

struct PeakTime {
    std::size_t rounds = 0;
    double seconds = 0.0;
};

struct GMEReport {
    std::string method;
    std::optional<double> rho;
    std::vector<BandResult> bands;
    double unlearn_acc_unlearned = 0.0;
    double unlearn_acc_retrained = 0.0;
    double unlearn_delta = 0.0;
    double test_acc_unlearned = 0.0;
    double test_acc_retrained = 0.0;
    std::optional<double> local_fairness;
    std::optional<PeakTime> peak_unlearned;
    std::optional<PeakTime> peak_retrained;
};

struct GMEInputs {
    const ModelParams* unlearned = nullptr;
    // Comparator models; with more than one, accuracies are averaged.
    std::span<const ModelParams> retrained;
    const MemScoreTable* table = nullptr;
    const Dataset* ds = nullptr;
    const Batch* test = nullptr;
    const std::vector<HistoryPoint>* unlearn_history = nullptr;
    const std::vector<HistoryPoint>* retrain_history = nullptr;
    std::optional<double> local_fairness;
};

GMEReport gme_report(const GMEInputs& in);

enum class FairnessMetric { loss, accuracy };

// sum over remaining k of |dL_k - mean dL|, dL_k = L(unlearned, D_k) - L(original, D_k).
double local_fairness(const ModelParams& unlearned, const ModelParams& original, const Partition& part,
                      const Dataset& ds, FairnessMetric metric = FairnessMetric::loss);

// Fairness from precomputed per-client changes.
double fairness_from_deltas(std::span<const double> deltas);

struct ParamDistance {
    double l2 = 0.0;
    // absent when either vector is zero
    std::optional<double> cosine;
};

ParamDistance param_distance(const ModelParams& a, const ModelParams& b);

struct PathPoint {
    double t = 0.0;
    double loss = 0.0;
};

// Loss at from + t * (to - from) for t = i / (steps - 1); the last point is `to`.
std::vector<PathPoint> loss_along_path(const ModelParams& from, const ModelParams& to, std::size_t steps,
                                       const Batch& eval);

// First history entry reaching the maximum test accuracy.
PeakTime time_to_peak(std::span<const HistoryPoint> history);

}  // namespace fedmp
