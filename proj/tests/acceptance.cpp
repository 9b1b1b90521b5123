// Acceptance checks on the shipped configs. One PASS/FAIL line per criterion;
// exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedmp/checkpoint.hpp"
#include "fedmp/experiment.hpp"

using namespace fedmp;

namespace {

const std::filesystem::path kConfigs{FEDMP_CONFIG_DIR};
int failures = 0;

void verdict(int id, bool ok, const std::string& what, const std::string& detail) {
    std::printf("%s %2d %s: %s\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string num(double x, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << std::fixed << x;
    return s.str();
}

std::string sci(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", x);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

const MethodOutcome& method(const PipelineResult& r, const std::string& name) {
    for (const auto& m : r.methods) {
        if (m.name == name) return m;
    }
    throw std::runtime_error("method " + name + " missing from the run");
}

double top_delta(const MethodOutcome& m) { return m.report.bands.front().delta.value_or(0.0); }

// What the seed-set criteria need from one reference run.
struct SeedSummary {
    double mem_gap = 0;
    double top_ft = 0, top_fedmp = 0;
    double peak_fedmp = 0, peak_retrain = 0;
    double fair_fedmp = 0, fair_salun = 0;
};

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::vector<std::size_t>> archs{{4, 6, 3}, {7, 5, 5, 4}, {3, 9, 2}};
    const double h = 1e-5;
    double worst = 0;
    for (std::size_t k = 0; k < archs.size(); ++k) {
        const ArchSpec arch{archs[k]};
        const auto model = init_model(arch, 100 + k);
        Batch b;
        b.features = Matrix(8, arch.input_dim());
        std::mt19937_64 rng(200 + k);
        std::normal_distribution<double> g;
        for (auto& x : b.features.data) x = g(rng);
        for (std::size_t i = 0; i < 8; ++i) b.labels.push_back(static_cast<int>(i % arch.num_classes()));

        const auto analytic = loss_and_grad(model, b).grad;
        auto probe = model;
        double diff2 = 0, ref2 = 0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            const double x = model.values[i];
            probe.values[i] = x + h;
            const double up = mean_loss(probe, b);
            probe.values[i] = x - h;
            const double down = mean_loss(probe, b);
            probe.values[i] = x;
            const double fd = (up - down) / (2 * h);
            diff2 += (analytic[i] - fd) * (analytic[i] - fd);
            ref2 += fd * fd;
        }
        worst = std::max(worst, std::sqrt(diff2 / ref2));
    }
    const double secs = seconds_since(t0);
    verdict(1, worst <= 1e-4 && secs < 10.0, "gradient oracle",
            "max relative error " + sci(worst) + " over 3 nets in " + num(secs, 2) + " s");
}

SeedSummary summarize(const PipelineResult& r, const ExperimentConfig& cfg) {
    SeedSummary s;
    const std::size_t samples = cfg.dataset.synthetic->samples;
    std::vector<double> outl, inner;
    for (std::size_t i = 0; i < r.table.ids.size(); ++i) {
        (r.table.ids[i] >= samples ? outl : inner).push_back(r.table.scores[i]);
    }
    s.mem_gap = mean(outl) - mean(inner);
    const auto& ft = method(r, "finetune_only");
    const auto& fm = method(r, "fedmp_rho0.4");
    const auto& sa = method(r, "salun_rho0.4");
    s.top_ft = top_delta(ft);
    s.top_fedmp = top_delta(fm);
    s.peak_fedmp = static_cast<double>(fm.report.peak_unlearned->rounds);
    s.peak_retrain = static_cast<double>(fm.report.peak_retrained->rounds);
    s.fair_fedmp = *fm.report.local_fairness;
    s.fair_salun = *sa.report.local_fairness;
    return s;
}

}  // namespace

int main() {
    const auto work = std::filesystem::temp_directory_path() / "fedmp_acceptance";
    std::filesystem::remove_all(work);
    const auto ref_path = kConfigs / "reference.yaml";
    const ExperimentConfig ref = load_config(ref_path);

    criterion_gradients();

    // Criterion 2: the reference config twice through the full CLI path.
    std::vector<double> run_secs;
    std::vector<RunArtifacts> runs;
    for (const char* name : {"a", "b"}) {
        const auto t0 = std::chrono::steady_clock::now();
        runs.push_back(cmd_run(ref_path, work / name));
        run_secs.push_back(seconds_since(t0));
    }
    {
        std::vector<std::string> compared{"memscore.csv"};
        for (const auto& e : std::filesystem::directory_iterator(runs[0].dir)) {
            const auto f = e.path().filename().string();
            if (f.rfind("gme_", 0) == 0 && e.path().extension() == ".json") compared.push_back(f);
        }
        std::size_t same = 0;
        for (const auto& f : compared) same += slurp(runs[0].dir / f) == slurp(runs[1].dir / f);
        const double slowest = *std::max_element(run_secs.begin(), run_secs.end());
        verdict(2, same == compared.size() && compared.size() > 1 && slowest < 900.0, "determinism",
                std::to_string(same) + "/" + std::to_string(compared.size()) +
                    " memscore/GME files byte-identical; reference run " + num(slowest, 1) + " s");
    }

    // Five seed sets of the reference config.
    std::vector<SeedSummary> seeds;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        ExperimentConfig cfg = ref;
        cfg.override_seeds(s);
        const auto r = run_pipeline(cfg);
        seeds.push_back(summarize(r, cfg));
        std::fprintf(stderr, "seed %llu done\n", static_cast<unsigned long long>(s));
    }
    auto collect = [&](double SeedSummary::*field, std::size_t n) {
        std::vector<double> v;
        for (std::size_t i = 0; i < n; ++i) v.push_back(seeds[i].*field);
        return v;
    };

    {
        const auto gaps = collect(&SeedSummary::mem_gap, 5);
        const double m = mean(gaps);
        verdict(3, m >= 0.5, "memorization score validity",
                "mean mem(outliers) - mean mem(cluster) = " + num(m) + " over 5 seeds (min " +
                    num(*std::min_element(gaps.begin(), gaps.end())) + ")");
    }
    {
        const double ft = mean(collect(&SeedSummary::top_ft, 5));
        const double fm = mean(collect(&SeedSummary::top_fedmp, 5));
        verdict(4, ft >= 2.0 * fm && ft > 0.0, "fine-tune-only failure under overlap",
                "top-band dM rho=0 " + num(ft) + " vs rho=0.4 " + num(fm) + " (5-seed means)");
    }
    {
        const auto fm = read_gme_json(runs[0].dir / "gme_fedmp_rho0.4.json");
        const double top = fm.bands.front().delta.value_or(0.0);
        const double gap = std::abs(fm.test_acc_unlearned - fm.test_acc_retrained);
        verdict(5, top <= 0.10 && gap <= 0.03, "retraining match",
                "rho=0.4 top-band dM " + num(top) + ", test acc " + num(fm.test_acc_unlearned) + " vs retrained " +
                    num(fm.test_acc_retrained));
    }
    {
        const ExperimentConfig disj = load_config(kConfigs / "disjoint.yaml");
        double worst_ft = 0, worst_fm = 0;
        for (std::uint64_t s = 1; s <= 3; ++s) {
            ExperimentConfig cfg = disj;
            cfg.override_seeds(s);
            const auto r = run_pipeline(cfg);
            worst_ft = std::max(worst_ft, method(r, "finetune_only").report.unlearn_delta);
            worst_fm = std::max(worst_fm, method(r, "fedmp_rho0.4").report.unlearn_delta);
        }
        verdict(6, worst_ft <= 0.05 && worst_fm <= 0.05, "extreme non-IID",
                "worst unlearning-set gap to retrained over 3 seeds: fine-tune-only " + num(worst_ft) + ", rho=0.4 " +
                    num(worst_fm));
    }
    {
        const double fm = mean(collect(&SeedSummary::peak_fedmp, 3));
        const double rt = mean(collect(&SeedSummary::peak_retrain, 3));
        verdict(7, fm <= 0.6 * rt, "time efficiency",
                "mean rounds to peak " + num(fm, 2) + " (rho=0.4) vs " + num(rt, 2) + " (retrain), ratio " +
                    num(fm / rt, 3));
    }
    {
        const PreparedData d = prepare_data(ref);
        const auto orig = read_checkpoint(runs[0].dir / "checkpoints/original_0.json").model;
        const double self = local_fairness(orig, orig, d.partition, d.train);
        int wins = 0;
        std::string values;
        for (const auto& s : seeds) {
            wins += s.fair_fedmp <= s.fair_salun;
            values += " " + num(s.fair_fedmp) + "/" + num(s.fair_salun);
        }
        verdict(8, self == 0.0 && wins >= 4, "fairness",
                "self " + num(self) + "; rho=0.4 <= salun in " + std::to_string(wins) + "/5 seeds (fedmp/salun:" +
                    values + ")");
    }
    {
        const PreparedData d = prepare_data(ref);
        const auto orig = read_checkpoint(runs[0].dir / "checkpoints/original_0.json").model;
        const auto gr = avg_remaining_gradient(orig, d.partition, d.train);
        const auto gu = avg_client_gradient(orig, d.partition, d.train, d.partition.unlearning_clients);
        const std::size_t p = orig.values.size();
        bool ok = true;
        std::size_t checked = 0;
        for (double rho : {0.0, 0.25, 0.5, 1.0}) {
            const std::size_t want = static_cast<std::size_t>(std::floor(rho * static_cast<double>(p) + 0.5));
            for (auto kind : {StrategyKind::redundant_remaining, StrategyKind::salun, StrategyKind::localized}) {
                const auto sel = select_parameters({kind, rho, 1}, orig, gr, std::span<const double>(gu));
                ok = ok && sel.size() == want;
                if (kind == StrategyKind::redundant_remaining && !sel.empty() && sel.size() < p) {
                    std::vector<bool> in(p, false);
                    for (auto i : sel) in[i] = true;
                    double hi_in = 0, lo_out = INFINITY;
                    for (std::size_t i = 0; i < p; ++i) {
                        if (in[i]) hi_in = std::max(hi_in, std::abs(gr[i]));
                        else lo_out = std::min(lo_out, std::abs(gr[i]));
                    }
                    ok = ok && hi_in <= lo_out;
                }
                ++checked;
            }
            for (std::size_t split = 1; split < orig.arch.num_layers(); ++split) {
                const auto deep = select_parameters({StrategyKind::deep_layers, 1.0, split}, orig, gr,
                                                    std::span<const double>(gu));
                const auto shallow = select_parameters({StrategyKind::shallow_layers, 1.0, split}, orig, gr,
                                                       std::span<const double>(gu));
                // full pools: disjoint and together every parameter
                std::vector<int> cover(p, 0);
                for (auto i : deep) cover[i] += 1;
                for (auto i : shallow) cover[i] += 1;
                ok = ok && std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; });
                const std::size_t boundary = orig.arch.layer(split).weight_offset;
                for (auto kind : {StrategyKind::deep_layers, StrategyKind::shallow_layers}) {
                    const std::size_t pool = kind == StrategyKind::deep_layers ? p - boundary : boundary;
                    const auto sel = select_parameters({kind, rho, split}, orig, gr, std::span<const double>(gu));
                    ok = ok && sel.size() == std::min(want, pool);
                    for (auto i : sel) ok = ok && ((i >= boundary) == (kind == StrategyKind::deep_layers));
                    ++checked;
                }
            }
        }
        verdict(9, ok, "selection invariants",
                std::to_string(checked) + " strategy/rho/split combinations on P = " + std::to_string(p));
    }
    {
        const PreparedData d = prepare_data(ref);
        const auto orig = read_checkpoint(runs[0].dir / "checkpoints/original_0.json").model;
        const auto retr = read_checkpoint(runs[0].dir / "checkpoints/retrained_0.json").model;
        const auto curve = loss_along_path(orig, retr, 11, d.test);
        double peak = 0;
        for (std::size_t i = 1; i + 1 < curve.size(); ++i) peak = std::max(peak, curve[i].loss);
        const double ends = std::max(curve.front().loss, curve.back().loss);
        verdict(10, peak > ends, "loss-path hump",
                "interior max " + num(peak) + " vs endpoints " + num(curve.front().loss) + ", " +
                    num(curve.back().loss));
    }

    std::filesystem::remove_all(work);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures;
}
