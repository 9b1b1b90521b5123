#include "fedmp/memeval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedmp/errors.hpp"
#include "fedmp/text.hpp"

namespace fedmp {

std::string Band::label() const { return "(" + format_double(lo) + "," + format_double(hi) + "]"; }

std::vector<Band> default_bands() {
    return {{95, 100}, {90, 95}, {85, 90}, {80, 85}, {0, 80}};
}

std::vector<Band> bands_from_boundaries(std::span<const double> descending) {
    if (descending.empty()) throw ConfigError("band boundaries are empty");
    std::vector<Band> out;
    double hi = 100.0;
    for (double lo : descending) {
        if (!(lo >= 0.0 && lo < hi)) {
            throw ConfigError("band boundaries must be strictly descending within [0, 100)");
        }
        out.push_back({lo, hi});
        hi = lo;
    }
    return out;
}

std::vector<std::size_t> MemScoreTable::members(std::size_t band) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (band_of[i] == static_cast<int>(band)) out.push_back(i);
    }
    return out;
}

namespace {

// Number of top ranks above percentile q: ceil((100 - q) / 100 * n).
std::size_t ranks_above(double q, std::size_t n) {
    const double x = (100.0 - q) / 100.0 * static_cast<double>(n);
    const auto c = static_cast<long long>(std::ceil(x - 1e-9));
    return static_cast<std::size_t>(std::clamp<long long>(c, 0, static_cast<long long>(n)));
}

}  // namespace

std::vector<int> group_by_percentile(std::span<const double> scores, std::span<const std::size_t> ids,
                                     std::span<const Band> bands, bool* degenerate) {
    if (scores.size() != ids.size()) throw ShapeError("scores and ids differ in length");
    for (const auto& b : bands) {
        if (!(b.lo >= 0.0 && b.lo < b.hi && b.hi <= 100.0)) {
            throw ConfigError("percentile band " + b.label() + " is not within (0, 100]");
        }
    }
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return ids[a] < ids[b];
    });
    std::vector<int> band_of(n, -1);
    for (std::size_t bi = 0; bi < bands.size(); ++bi) {
        const std::size_t from = ranks_above(bands[bi].hi, n);
        const std::size_t to = ranks_above(bands[bi].lo, n);
        for (std::size_t r = from; r < to; ++r) band_of[order[r]] = static_cast<int>(bi);
    }
    if (degenerate) *degenerate = n < bands.size();
    return band_of;
}

std::vector<int> group_by_threshold(std::span<const double> scores, std::span<const Band> bands) {
    std::vector<int> band_of(scores.size(), -1);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t bi = 0; bi < bands.size(); ++bi) {
            if (scores[i] > bands[bi].lo && scores[i] <= bands[bi].hi) {
                band_of[i] = static_cast<int>(bi);
                break;
            }
        }
    }
    return band_of;
}

namespace {

// Per-example correctness fraction across an ensemble.
std::vector<double> correct_fraction(std::span<const ModelParams> models, const Batch& batch) {
    std::vector<double> frac(batch.size(), 0.0);
    for (const auto& m : models) {
        const auto pred = predict(m, batch.features);
        for (std::size_t i = 0; i < pred.size(); ++i) frac[i] += pred[i] == batch.labels[i] ? 1.0 : 0.0;
    }
    for (double& f : frac) f /= static_cast<double>(models.size());
    return frac;
}

}  // namespace

MemScoreTable memorization_scores(std::span<const ModelParams> originals,
                                  std::span<const ModelParams> retrained, const Dataset& ds,
                                  std::span<const std::size_t> unlearn_ids, std::span<const Band> bands) {
    if (originals.empty() || retrained.empty()) throw ArgumentError("memorization scores need both ensembles");
    if (unlearn_ids.empty()) throw ArgumentError("memorization scores over an empty unlearning set");
    const ArchSpec& arch = originals.front().arch;
    for (const auto& m : originals) {
        if (!(m.arch == arch)) throw ShapeError("ensemble members differ in architecture");
    }
    for (const auto& m : retrained) {
        if (!(m.arch == arch)) throw ShapeError("ensemble members differ in architecture");
    }

    const Batch du = ds.gather(unlearn_ids);
    const auto orig = correct_fraction(originals, du);
    const auto retr = correct_fraction(retrained, du);

    MemScoreTable t;
    t.ids.assign(unlearn_ids.begin(), unlearn_ids.end());
    t.scores.resize(t.ids.size());
    for (std::size_t i = 0; i < t.ids.size(); ++i) t.scores[i] = orig[i] - retr[i];
    t.bands = bands.empty() ? default_bands() : std::vector<Band>(bands.begin(), bands.end());
    t.band_of = group_by_percentile(t.scores, t.ids, t.bands, &t.degenerate);
    return t;
}

namespace {

double mean_accuracy(std::span<const ModelParams> models, const Batch& batch) {
    double s = 0.0;
    for (const auto& m : models) s += accuracy(m, batch);
    return s / static_cast<double>(models.size());
}

}  // namespace

GMEReport gme_report(const GMEInputs& in) {
    if (!in.unlearned || !in.table || !in.ds || !in.test || in.retrained.empty()) {
        throw ArgumentError("gme_report is missing an input");
    }
    for (const auto& m : in.retrained) {
        if (!(m.arch == in.unlearned->arch)) throw ShapeError("unlearned and retrained architectures differ");
    }
    const MemScoreTable& t = *in.table;

    GMEReport rep;
    for (std::size_t b = 0; b < t.bands.size(); ++b) {
        const auto rows = t.members(b);
        BandResult br;
        br.band = t.bands[b];
        br.n = rows.size();
        if (!rows.empty()) {
            std::vector<std::size_t> ids;
            ids.reserve(rows.size());
            for (std::size_t r : rows) ids.push_back(t.ids[r]);
            const Batch batch = in.ds->gather(ids);
            br.acc_unlearned = accuracy(*in.unlearned, batch);
            br.acc_retrained = mean_accuracy(in.retrained, batch);
            br.delta = std::abs(*br.acc_unlearned - *br.acc_retrained);
        }
        rep.bands.push_back(br);
    }
    const Batch du = in.ds->gather(t.ids);
    rep.unlearn_acc_unlearned = accuracy(*in.unlearned, du);
    rep.unlearn_acc_retrained = mean_accuracy(in.retrained, du);
    rep.unlearn_delta = std::abs(rep.unlearn_acc_unlearned - rep.unlearn_acc_retrained);
    rep.test_acc_unlearned = accuracy(*in.unlearned, *in.test);
    rep.test_acc_retrained = mean_accuracy(in.retrained, *in.test);
    rep.local_fairness = in.local_fairness;
    if (in.unlearn_history && !in.unlearn_history->empty()) rep.peak_unlearned = time_to_peak(*in.unlearn_history);
    if (in.retrain_history && !in.retrain_history->empty()) rep.peak_retrained = time_to_peak(*in.retrain_history);
    return rep;
}

double fairness_from_deltas(std::span<const double> deltas) {
    if (deltas.empty()) throw ArgumentError("fairness needs at least one remaining client");
    std::vector<double> d(deltas.begin(), deltas.end());
    std::sort(d.begin(), d.end());
    // mean as d0 + mean(d - d0): exact when every delta is equal
    double shift = 0.0;
    for (double x : d) shift += x - d.front();
    const double mean = d.front() + shift / static_cast<double>(d.size());
    double s = 0.0;
    for (double x : d) s += std::abs(x - mean);
    return s;
}

double local_fairness(const ModelParams& unlearned, const ModelParams& original, const Partition& part,
                      const Dataset& ds, FairnessMetric metric) {
    if (!(unlearned.arch == original.arch)) throw ShapeError("fairness over mismatched architectures");
    const auto remaining = part.remaining_clients();
    std::vector<double> deltas;
    deltas.reserve(remaining.size());
    for (int k : remaining) {
        const Batch b = ds.gather(part.client_examples[static_cast<std::size_t>(k)]);
        if (metric == FairnessMetric::loss) {
            deltas.push_back(mean_loss(unlearned, b) - mean_loss(original, b));
        } else {
            deltas.push_back(accuracy(unlearned, b) - accuracy(original, b));
        }
    }
    return fairness_from_deltas(deltas);
}

ParamDistance param_distance(const ModelParams& a, const ModelParams& b) {
    if (!(a.arch == b.arch) || a.values.size() != b.values.size()) {
        throw ShapeError("parameter distance over mismatched architectures");
    }
    double d2 = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        const double x = a.values[i], y = b.values[i];
        d2 += (x - y) * (x - y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    ParamDistance out;
    out.l2 = std::sqrt(d2);
    if (na > 0.0 && nb > 0.0) out.cosine = dot / (std::sqrt(na) * std::sqrt(nb));
    return out;
}

std::vector<PathPoint> loss_along_path(const ModelParams& from, const ModelParams& to, std::size_t steps,
                                       const Batch& eval) {
    if (steps < 2) throw ArgumentError("loss_along_path needs at least 2 steps");
    if (!(from.arch == to.arch)) throw ShapeError("path endpoints differ in architecture");
    std::vector<PathPoint> curve;
    curve.reserve(steps);
    ModelParams point = from;
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
        // from + t * (to - from) keeps identical endpoints exactly constant;
        // the last point is `to` itself so both ends are exact
        if (i + 1 == steps) {
            point.values = to.values;
        } else {
            for (std::size_t j = 0; j < point.values.size(); ++j) {
                point.values[j] = from.values[j] + t * (to.values[j] - from.values[j]);
            }
        }
        curve.push_back({t, mean_loss(point, eval)});
    }
    return curve;
}

PeakTime time_to_peak(std::span<const HistoryPoint> history) {
    if (history.empty()) throw ArgumentError("time_to_peak on an empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i].test_accuracy > history[best].test_accuracy) best = i;
    }
    return {history[best].round, history[best].elapsed_s};
}

}  // namespace fedmp
