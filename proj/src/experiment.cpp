#include "fedmp/experiment.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedmp/checkpoint.hpp"
#include "fedmp/report_io.hpp"
#include "fedmp/rng.hpp"
#include "fedmp/text.hpp"

namespace fedmp {

namespace {

std::string partition_name(PartitionKind k) {
    switch (k) {
        case PartitionKind::iid: return "iid";
        case PartitionKind::dirichlet: return "dirichlet";
        case PartitionKind::disjoint: return "disjoint";
    }
    return "iid";
}

// Typed access to a YAML tree with "<source>:<line>:" error prefixes.
class Reader {
public:
    explicit Reader(std::string source) : source_(std::move(source)) {}

    [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
        const auto mark = at.IsDefined() ? at.Mark() : YAML::Mark::null_mark();
        if (mark.is_null()) throw ConfigError(source_ + ": " + msg);
        throw ConfigError(source_ + ":" + std::to_string(mark.line + 1) + ": " + msg);
    }

    void expect_map(const YAML::Node& n, const std::string& what) const {
        if (!n.IsMap()) fail(n, what + " must be a mapping");
    }

    void allow_keys(const YAML::Node& map, std::initializer_list<const char*> allowed,
                    const std::string& section) const {
        for (auto it = map.begin(); it != map.end(); ++it) {
            const std::string key = it->first.Scalar();
            bool ok = false;
            for (const char* a : allowed) ok = ok || key == a;
            if (!ok) fail(it->first, "unknown key '" + key + "' in " + section);
        }
    }

    static bool has(const YAML::Node& map, const char* key) {
        const YAML::Node n = map[key];
        return n.IsDefined() && !n.IsNull();
    }

    std::uint64_t to_uint(const YAML::Node& n, const std::string& key) const {
        if (!n.IsScalar()) fail(n, "'" + key + "' must be a non-negative integer");
        const std::string& s = n.Scalar();
        std::uint64_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            fail(n, "'" + key + "' must be a non-negative integer, got '" + s + "'");
        }
        return v;
    }

    double to_double(const YAML::Node& n, const std::string& key) const {
        if (!n.IsScalar()) fail(n, "'" + key + "' must be a number");
        try {
            return parse_double(n.Scalar());
        } catch (const std::invalid_argument&) {
            fail(n, "'" + key + "' must be a number, got '" + n.Scalar() + "'");
        }
    }

    template <class U>
        requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
    void get(const YAML::Node& map, const char* key, U& out) const {
        if (has(map, key)) out = static_cast<U>(to_uint(map[key], key));
    }
    void get(const YAML::Node& map, const char* key, double& out) const {
        if (has(map, key)) out = to_double(map[key], key);
    }
    void get(const YAML::Node& map, const char* key, int& out) const {
        if (!has(map, key)) return;
        const YAML::Node n = map[key];
        const std::string& s = n.Scalar();
        int v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (!n.IsScalar() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            fail(n, "'" + std::string(key) + "' must be an integer");
        }
        out = v;
    }
    void get(const YAML::Node& map, const char* key, bool& out) const {
        if (!has(map, key)) return;
        const YAML::Node n = map[key];
        try {
            out = n.as<bool>();
        } catch (const YAML::Exception&) {
            fail(n, "'" + std::string(key) + "' must be true or false");
        }
    }
    void get(const YAML::Node& map, const char* key, std::string& out) const {
        if (!has(map, key)) return;
        const YAML::Node n = map[key];
        if (!n.IsScalar()) fail(n, "'" + std::string(key) + "' must be a string");
        out = n.Scalar();
    }

    YAML::Node seq(const YAML::Node& map, const char* key) const {
        const YAML::Node n = map[key];
        if (!n.IsSequence()) fail(n.IsDefined() ? n : map, "'" + std::string(key) + "' must be a list");
        return n;
    }

private:
    std::string source_;
};

// Line of `key` inside `map`, for errors found after parsing.
YAML::Node node_of(const YAML::Node& map, const char* key) {
    if (map.IsDefined() && map.IsMap()) {
        const YAML::Node n = map[key];
        if (n.IsDefined()) return n;
    }
    return map;
}

void parse_synthetic(const Reader& r, const YAML::Node& n, SynthConfig& s) {
    r.expect_map(n, "dataset.synthetic");
    r.allow_keys(n,
                 {"classes", "clusters_per_class", "center_scale", "min_center_distance", "noise_sigma", "samples",
                  "input_dim", "intrinsic_dim", "outliers_per_client", "outlier_distance"},
                 "dataset.synthetic");
    r.get(n, "classes", s.num_classes);
    r.get(n, "clusters_per_class", s.clusters_per_class);
    r.get(n, "center_scale", s.center_scale);
    r.get(n, "min_center_distance", s.min_center_distance);
    r.get(n, "noise_sigma", s.noise_sigma);
    r.get(n, "samples", s.samples);
    r.get(n, "input_dim", s.input_dim);
    r.get(n, "intrinsic_dim", s.intrinsic_dim);
    r.get(n, "outliers_per_client", s.outliers_per_client);
    r.get(n, "outlier_distance", s.outlier_distance);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        r.fail(n, e.what());
    }
}

void parse_dataset(const Reader& r, const YAML::Node& n, DatasetSection& d) {
    r.expect_map(n, "dataset");
    r.allow_keys(n, {"seed", "test_samples", "synthetic", "file", "test_file"}, "dataset");
    r.get(n, "seed", d.seed);
    r.get(n, "test_samples", d.test_samples);
    r.get(n, "file", d.file);
    r.get(n, "test_file", d.test_file);
    if (Reader::has(n, "synthetic")) {
        d.synthetic = SynthConfig{};
        parse_synthetic(r, n["synthetic"], *d.synthetic);
    }
    if (d.synthetic.has_value() == !d.file.empty()) r.fail(n, "dataset needs exactly one of 'synthetic' or 'file'");
    if (!d.file.empty() && d.test_file.empty()) r.fail(n, "dataset.file needs a matching 'test_file'");
    if (d.synthetic && d.test_samples == 0) r.fail(node_of(n, "test_samples"), "'test_samples' must be positive");
}

void parse_partition(const Reader& r, const YAML::Node& n, PartitionSection& p) {
    r.expect_map(n, "partition");
    r.allow_keys(n, {"kind", "alpha", "clients", "unlearning_clients", "seed"}, "partition");
    std::string kind = partition_name(p.kind);
    r.get(n, "kind", kind);
    if (kind == "iid") {
        p.kind = PartitionKind::iid;
    } else if (kind == "dirichlet") {
        p.kind = PartitionKind::dirichlet;
    } else if (kind == "disjoint") {
        p.kind = PartitionKind::disjoint;
    } else {
        r.fail(node_of(n, "kind"), "unknown partition kind '" + kind + "'");
    }
    r.get(n, "alpha", p.alpha);
    if (!(p.alpha > 0.0)) r.fail(node_of(n, "alpha"), "'alpha' must be positive");
    r.get(n, "clients", p.clients);
    if (p.clients < 2) r.fail(node_of(n, "clients"), "'clients' must be at least 2");
    r.get(n, "seed", p.seed);
    if (Reader::has(n, "unlearning_clients")) {
        const YAML::Node s = r.seq(n, "unlearning_clients");
        p.unlearning_clients.clear();
        for (const auto& e : s) {
            const auto id = r.to_uint(e, "unlearning_clients");
            if (id >= p.clients) {
                r.fail(e, "unlearning client " + std::to_string(id) + " is not below clients = " +
                              std::to_string(p.clients));
            }
            p.unlearning_clients.push_back(static_cast<int>(id));
        }
    }
    const YAML::Node ids = node_of(n, "unlearning_clients");
    for (int id : p.unlearning_clients) {
        if (id < 0 || static_cast<std::size_t>(id) >= p.clients) {
            r.fail(ids, "unlearning client " + std::to_string(id) + " is not below clients = " +
                            std::to_string(p.clients));
        }
    }
    std::set<int> uniq(p.unlearning_clients.begin(), p.unlearning_clients.end());
    if (uniq.empty()) r.fail(ids, "'unlearning_clients' is empty");
    if (uniq.size() != p.unlearning_clients.size()) r.fail(ids, "'unlearning_clients' has duplicates");
    if (uniq.size() >= p.clients) r.fail(ids, "every client is an unlearning client");
}

void parse_training(const Reader& r, const YAML::Node& n, FLConfig& t, std::vector<std::size_t>& hidden) {
    r.expect_map(n, "training");
    r.allow_keys(n,
                 {"hidden", "rounds", "local_epochs", "batch_size", "optimizer", "learning_rate", "eval_every",
                  "seed"},
                 "training");
    if (Reader::has(n, "hidden")) {
        hidden.clear();
        for (const auto& e : r.seq(n, "hidden")) {
            const auto h = r.to_uint(e, "hidden");
            if (h == 0) r.fail(e, "hidden layer width must be positive");
            hidden.push_back(static_cast<std::size_t>(h));
        }
    }
    r.get(n, "rounds", t.rounds);
    r.get(n, "local_epochs", t.local_epochs);
    r.get(n, "batch_size", t.batch_size);
    r.get(n, "learning_rate", t.learning_rate);
    r.get(n, "eval_every", t.eval_every);
    r.get(n, "seed", t.seed);
    std::string opt = t.optimizer == OptKind::adam ? "adam" : "sgd";
    r.get(n, "optimizer", opt);
    if (opt == "adam") {
        t.optimizer = OptKind::adam;
    } else if (opt == "sgd") {
        t.optimizer = OptKind::sgd;
    } else {
        r.fail(node_of(n, "optimizer"), "unknown optimizer '" + opt + "'");
    }
    if (t.rounds == 0) r.fail(node_of(n, "rounds"), "'rounds' must be positive");
    if (t.local_epochs == 0) r.fail(node_of(n, "local_epochs"), "'local_epochs' must be positive");
    if (t.batch_size == 0) r.fail(node_of(n, "batch_size"), "'batch_size' must be positive");
    if (t.eval_every == 0) r.fail(node_of(n, "eval_every"), "'eval_every' must be positive");
    if (!(t.learning_rate >= 0.0)) r.fail(node_of(n, "learning_rate"), "'learning_rate' must be non-negative");
}

void parse_unlearn(const Reader& r, const YAML::Node& n, UnlearnSection& u, std::size_t num_layers) {
    r.expect_map(n, "unlearn");
    r.allow_keys(n,
                 {"rhos", "auto_rho", "decade_gap", "ft_rounds", "reinit_seed", "layer_split", "ablations",
                  "ablation_rho", "gradient_ascent"},
                 "unlearn");
    if (Reader::has(n, "rhos")) {
        u.rhos.clear();
        std::set<double> seen;
        for (const auto& e : r.seq(n, "rhos")) {
            const double rho = r.to_double(e, "rhos");
            if (!(rho >= 0.0 && rho <= 1.0)) r.fail(e, "rho must lie in [0, 1]");
            if (!seen.insert(rho).second) r.fail(e, "duplicate rho " + format_double(rho));
            u.rhos.push_back(rho);
        }
    }
    r.get(n, "auto_rho", u.auto_rho);
    r.get(n, "decade_gap", u.decade_gap);
    if (u.decade_gap < 1) r.fail(node_of(n, "decade_gap"), "'decade_gap' must be at least 1");
    r.get(n, "ft_rounds", u.ft_rounds);
    r.get(n, "reinit_seed", u.reinit_seed);
    r.get(n, "layer_split", u.layer_split);
    r.get(n, "ablation_rho", u.ablation_rho);
    if (!(u.ablation_rho >= 0.0 && u.ablation_rho <= 1.0)) {
        r.fail(node_of(n, "ablation_rho"), "'ablation_rho' must lie in [0, 1]");
    }
    if (Reader::has(n, "ablations")) {
        u.ablations.clear();
        for (const auto& e : r.seq(n, "ablations")) {
            if (!e.IsScalar()) r.fail(e, "ablation must be a strategy name");
            StrategyKind k{};
            try {
                k = strategy_from_string(e.Scalar());
            } catch (const std::exception&) {
                r.fail(e, "unknown strategy '" + e.Scalar() + "'");
            }
            if (k == StrategyKind::redundant_remaining) r.fail(e, "redundant_remaining is not an ablation; use 'rhos'");
            if (std::find(u.ablations.begin(), u.ablations.end(), k) != u.ablations.end()) {
                r.fail(e, "duplicate ablation '" + e.Scalar() + "'");
            }
            if ((k == StrategyKind::deep_layers || k == StrategyKind::shallow_layers) &&
                !(u.layer_split >= 1 && u.layer_split < num_layers)) {
                r.fail(node_of(n, "layer_split"), "'layer_split' must lie in [1, " +
                                                      std::to_string(num_layers - 1) + "] for layer ablations");
            }
            u.ablations.push_back(k);
        }
    }
    if (Reader::has(n, "gradient_ascent")) {
        const YAML::Node g = n["gradient_ascent"];
        r.expect_map(g, "unlearn.gradient_ascent");
        r.allow_keys(g, {"steps", "learning_rate", "radius"}, "unlearn.gradient_ascent");
        AscentConfig a;
        r.get(g, "steps", a.steps);
        r.get(g, "learning_rate", a.learning_rate);
        r.get(g, "radius", a.radius);
        if (!(a.learning_rate > 0.0)) r.fail(node_of(g, "learning_rate"), "'learning_rate' must be positive");
        if (!(a.radius > 0.0)) r.fail(node_of(g, "radius"), "'radius' must be positive");
        u.gradient_ascent = a;
    }
    if (u.rhos.empty() && !u.auto_rho && u.ablations.empty() && !u.gradient_ascent) {
        r.fail(n, "unlearn section configures no method");
    }
}

void parse_eval(const Reader& r, const YAML::Node& n, EvalSection& e) {
    r.expect_map(n, "eval");
    r.allow_keys(n,
                 {"retrained_models", "original_models", "bands", "band_mode", "average_retrained", "fairness",
                  "output_dir"},
                 "eval");
    r.get(n, "retrained_models", e.retrained_models);
    r.get(n, "original_models", e.original_models);
    if (e.retrained_models == 0) r.fail(node_of(n, "retrained_models"), "'retrained_models' must be positive");
    if (e.original_models == 0) r.fail(node_of(n, "original_models"), "'original_models' must be positive");
    std::string mode = e.band_mode == BandMode::percentile ? "percentile" : "threshold";
    r.get(n, "band_mode", mode);
    if (mode == "percentile") {
        e.band_mode = BandMode::percentile;
    } else if (mode == "threshold") {
        e.band_mode = BandMode::threshold;
    } else {
        r.fail(node_of(n, "band_mode"), "unknown band_mode '" + mode + "'");
    }
    if (Reader::has(n, "bands")) {
        e.band_boundaries.clear();
        for (const auto& b : r.seq(n, "bands")) e.band_boundaries.push_back(r.to_double(b, "bands"));
    }
    r.get(n, "average_retrained", e.average_retrained);
    std::string fair = e.fairness == FairnessMetric::loss ? "loss" : "accuracy";
    r.get(n, "fairness", fair);
    if (fair == "loss") {
        e.fairness = FairnessMetric::loss;
    } else if (fair == "accuracy") {
        e.fairness = FairnessMetric::accuracy;
    } else {
        r.fail(node_of(n, "fairness"), "unknown fairness metric '" + fair + "'");
    }
    r.get(n, "output_dir", e.output_dir);
}

}  // namespace

void ExperimentConfig::override_seeds(std::uint64_t seed) {
    dataset.seed = seed;
    partition.seed = seed;
    training.seed = seed;
    unlearn.reinit_seed = seed;
}

std::vector<Band> ExperimentConfig::bands() const {
    if (eval.band_mode == BandMode::percentile) return bands_from_boundaries(eval.band_boundaries);
    // threshold mode: raw score bounds, the top band closed at the maximum score 1
    if (eval.band_boundaries.empty()) throw ConfigError("band boundaries are empty");
    std::vector<Band> out;
    double hi = 1.0;
    for (double lo : eval.band_boundaries) {
        if (!(lo < hi)) throw ConfigError("threshold band boundaries must be strictly descending below 1");
        out.push_back({lo, hi});
        hi = lo;
    }
    return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    const Reader r(source);
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root.IsMap()) throw ConfigError(source + ": top level must be a mapping");
    r.allow_keys(root, {"dataset", "partition", "training", "unlearn", "eval"}, "config");
    if (!Reader::has(root, "dataset")) throw ConfigError(source + ": missing 'dataset' section");

    ExperimentConfig cfg;
    parse_dataset(r, root["dataset"], cfg.dataset);
    if (Reader::has(root, "partition")) parse_partition(r, root["partition"], cfg.partition);
    if (Reader::has(root, "training")) parse_training(r, root["training"], cfg.training, cfg.hidden);
    if (Reader::has(root, "unlearn")) parse_unlearn(r, root["unlearn"], cfg.unlearn, cfg.hidden.size() + 1);
    if (Reader::has(root, "eval")) parse_eval(r, root["eval"], cfg.eval);
    try {
        cfg.bands();
    } catch (const ConfigError& e) {
        r.fail(node_of(root["eval"], "bands"), e.what());
    }
    if (cfg.dataset.synthetic && cfg.partition.kind == PartitionKind::disjoint &&
        cfg.dataset.synthetic->num_classes < cfg.partition.clients) {
        r.fail(node_of(root["partition"], "kind"), "disjoint partition needs at least as many classes as clients");
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string emit_config(const ExperimentConfig& cfg) {
    using namespace YAML;
    Emitter e;
    auto num = [](double x) { return format_double(x); };
    e << BeginMap;

    e << Key << "dataset" << Value << BeginMap;
    e << Key << "seed" << Value << std::to_string(cfg.dataset.seed);
    e << Key << "test_samples" << Value << std::to_string(cfg.dataset.test_samples);
    if (cfg.dataset.synthetic) {
        const auto& s = *cfg.dataset.synthetic;
        e << Key << "synthetic" << Value << BeginMap;
        e << Key << "classes" << Value << std::to_string(s.num_classes);
        e << Key << "clusters_per_class" << Value << std::to_string(s.clusters_per_class);
        e << Key << "center_scale" << Value << num(s.center_scale);
        e << Key << "min_center_distance" << Value << num(s.min_center_distance);
        e << Key << "noise_sigma" << Value << num(s.noise_sigma);
        e << Key << "samples" << Value << std::to_string(s.samples);
        e << Key << "input_dim" << Value << std::to_string(s.input_dim);
        e << Key << "intrinsic_dim" << Value << std::to_string(s.intrinsic_dim);
        e << Key << "outliers_per_client" << Value << std::to_string(s.outliers_per_client);
        e << Key << "outlier_distance" << Value << num(s.outlier_distance);
        e << EndMap;
    } else {
        e << Key << "file" << Value << DoubleQuoted << cfg.dataset.file;
        e << Key << "test_file" << Value << DoubleQuoted << cfg.dataset.test_file;
    }
    e << EndMap;

    e << Key << "partition" << Value << BeginMap;
    e << Key << "kind" << Value << partition_name(cfg.partition.kind);
    e << Key << "alpha" << Value << num(cfg.partition.alpha);
    e << Key << "clients" << Value << std::to_string(cfg.partition.clients);
    e << Key << "unlearning_clients" << Value << Flow << BeginSeq;
    for (int k : cfg.partition.unlearning_clients) e << std::to_string(k);
    e << EndSeq;
    e << Key << "seed" << Value << std::to_string(cfg.partition.seed);
    e << EndMap;

    const auto& t = cfg.training;
    e << Key << "training" << Value << BeginMap;
    e << Key << "hidden" << Value << Flow << BeginSeq;
    for (auto h : cfg.hidden) e << std::to_string(h);
    e << EndSeq;
    e << Key << "rounds" << Value << std::to_string(t.rounds);
    e << Key << "local_epochs" << Value << std::to_string(t.local_epochs);
    e << Key << "batch_size" << Value << std::to_string(t.batch_size);
    e << Key << "optimizer" << Value << (t.optimizer == OptKind::adam ? "adam" : "sgd");
    e << Key << "learning_rate" << Value << num(t.learning_rate);
    e << Key << "eval_every" << Value << std::to_string(t.eval_every);
    e << Key << "seed" << Value << std::to_string(t.seed);
    e << EndMap;

    const auto& u = cfg.unlearn;
    e << Key << "unlearn" << Value << BeginMap;
    e << Key << "rhos" << Value << Flow << BeginSeq;
    for (double rho : u.rhos) e << num(rho);
    e << EndSeq;
    e << Key << "auto_rho" << Value << (u.auto_rho ? "true" : "false");
    e << Key << "decade_gap" << Value << std::to_string(u.decade_gap);
    e << Key << "ft_rounds" << Value << std::to_string(u.ft_rounds);
    e << Key << "reinit_seed" << Value << std::to_string(u.reinit_seed);
    e << Key << "layer_split" << Value << std::to_string(u.layer_split);
    e << Key << "ablations" << Value << Flow << BeginSeq;
    for (auto k : u.ablations) e << to_string(k);
    e << EndSeq;
    e << Key << "ablation_rho" << Value << num(u.ablation_rho);
    if (u.gradient_ascent) {
        e << Key << "gradient_ascent" << Value << BeginMap;
        e << Key << "steps" << Value << std::to_string(u.gradient_ascent->steps);
        e << Key << "learning_rate" << Value << num(u.gradient_ascent->learning_rate);
        e << Key << "radius" << Value << num(u.gradient_ascent->radius);
        e << EndMap;
    }
    e << EndMap;

    const auto& ev = cfg.eval;
    e << Key << "eval" << Value << BeginMap;
    e << Key << "retrained_models" << Value << std::to_string(ev.retrained_models);
    e << Key << "original_models" << Value << std::to_string(ev.original_models);
    e << Key << "bands" << Value << Flow << BeginSeq;
    for (double b : ev.band_boundaries) e << num(b);
    e << EndSeq;
    e << Key << "band_mode" << Value << (ev.band_mode == BandMode::percentile ? "percentile" : "threshold");
    e << Key << "average_retrained" << Value << (ev.average_retrained ? "true" : "false");
    e << Key << "fairness" << Value << (ev.fairness == FairnessMetric::loss ? "loss" : "accuracy");
    if (!ev.output_dir.empty()) e << Key << "output_dir" << Value << DoubleQuoted << ev.output_dir;
    e << EndMap;

    e << EndMap;
    return std::string(e.c_str()) + "\n";
}

std::string config_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    return out;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData d;
    if (cfg.dataset.synthetic) {
        SynthConfig s = *cfg.dataset.synthetic;
        if (s.outliers_per_client > 0) s.outlier_clients = cfg.partition.unlearning_clients;
        d.train = gen_synthetic(s, cfg.dataset.seed);
        d.test = gen_holdout(s, cfg.dataset.seed, cfg.dataset.test_samples,
                             derive_seed(cfg.dataset.seed, {stream::kHoldout}))
                     .all();
    } else {
        d.train = read_dataset(cfg.dataset.file);
        const Dataset test = read_dataset(cfg.dataset.test_file);
        if (test.dim() != d.train.dim()) throw ShapeError("test_file feature width differs from file");
        d.test = test.all();
    }
    Partition part;
    switch (cfg.partition.kind) {
        case PartitionKind::iid:
            part = partition_iid(d.train, cfg.partition.clients, cfg.partition.seed);
            break;
        case PartitionKind::dirichlet:
            part = partition_dirichlet(d.train, cfg.partition.clients, cfg.partition.alpha, cfg.partition.seed);
            break;
        case PartitionKind::disjoint:
            part = partition_dirichlet(d.train, cfg.partition.clients, cfg.partition.alpha, cfg.partition.seed,
                                       DirichletMode::disjoint);
            break;
    }
    d.partition = mark_unlearning(std::move(part), cfg.partition.unlearning_clients);
    d.unlearn_ids = d.partition.examples_of(d.partition.unlearning_clients);
    d.unlearn = d.train.gather(d.unlearn_ids);
    return d;
}

namespace {

void say(const LogFn& log, const std::string& msg) {
    if (log) log(msg);
}

template <class F>
auto in_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const NumericError& e) {
        throw StageError(stage, e.what());
    }
}

FLConfig training_config(const ExperimentConfig& cfg, const Dataset& ds) {
    FLConfig fl = cfg.training;
    fl.arch.layer_dims.clear();
    fl.arch.layer_dims.push_back(ds.dim());
    for (auto h : cfg.hidden) fl.arch.layer_dims.push_back(h);
    fl.arch.layer_dims.push_back(ds.num_classes);
    return fl;
}

std::uint64_t retrain_base_seed(const ExperimentConfig& cfg) {
    return derive_seed(cfg.training.seed, {stream::kEnsemble, 1});
}

std::vector<ModelParams> comparators(const ExperimentConfig& cfg, const std::vector<TrainedRun>& retrained) {
    if (cfg.eval.average_retrained) return final_models(retrained);
    return {retrained.front().final_model};
}

MemScoreTable score_table(const ExperimentConfig& cfg, std::span<const ModelParams> originals,
                          std::span<const ModelParams> retrained, const PreparedData& d) {
    const auto bands = cfg.bands();
    if (cfg.eval.band_mode == BandMode::percentile) {
        return memorization_scores(originals, retrained, d.train, d.unlearn_ids, bands);
    }
    MemScoreTable t = memorization_scores(originals, retrained, d.train, d.unlearn_ids);
    t.bands = bands;
    t.mode = BandMode::threshold;
    t.band_of = group_by_threshold(t.scores, t.bands);
    t.degenerate = false;
    return t;
}

void finish_report(const ExperimentConfig& cfg, const PipelineResult& base, MethodOutcome& m) {
    const auto comp = comparators(cfg, base.retrained);
    const ModelParams& original = base.originals.front().final_model;
    in_stage("evaluate:" + m.name, [&] {
        GMEInputs in;
        in.unlearned = &m.model;
        in.retrained = comp;
        in.table = &base.table;
        in.ds = &base.data.train;
        in.test = &base.data.test;
        in.unlearn_history = &m.history;
        in.retrain_history = &base.retrained.front().history;
        in.local_fairness = local_fairness(m.model, original, base.data.partition, base.data.train,
                                           cfg.eval.fairness);
        m.report = gme_report(in);
        m.report.method = m.name;
        m.report.rho = m.rho;
    });
}

}  // namespace

MethodOutcome run_method(const ExperimentConfig& cfg, const PipelineResult& base, const std::string& name,
                         const SelectionStrategy& strategy) {
    const PreparedData& d = base.data;
    MethodOutcome m;
    m.name = name;
    m.rho = strategy.rho;
    m.strategy = strategy.kind;
    in_stage("unlearn:" + name, [&] {
        UnlearnRequest req;
        req.original = base.originals.front().final_model;
        req.partition = d.partition;
        req.finetune = training_config(cfg, d.train);
        req.finetune.seed = derive_seed(cfg.training.seed, {stream::kFinetune});
        req.ft_rounds = cfg.unlearn.ft_rounds;
        req.strategy = strategy;
        req.reinit_seed = cfg.unlearn.reinit_seed;
        UnlearnResult res = fedmp_unlearn(req, d.train, EvalSets{&d.test, &d.unlearn});
        m.model = res.run.final_model;
        m.history = std::move(res.run.history);
        m.selected = std::move(res.selected);
        m.gamma = res.gamma;
    });
    finish_report(cfg, base, m);
    return m;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg, const LogFn& log) {
    PipelineResult out;
    out.data = prepare_data(cfg);
    const PreparedData& d = out.data;
    const FLConfig fl = training_config(cfg, d.train);
    const EvalSets eval{&d.test, &d.unlearn};
    say(log, "data: " + std::to_string(d.train.size()) + " train, " + std::to_string(d.test.size()) +
                 " test, " + std::to_string(d.unlearn_ids.size()) + " unlearning examples, P = " +
                 std::to_string(fl.arch.param_count()));

    out.originals = in_stage("train_original", [&] {
        return original_ensemble_runs(fl, d.partition, d.train, cfg.eval.original_models, fl.seed, eval);
    });
    say(log, "originals: " + std::to_string(out.originals.size()) + " trained, test acc " +
                 format_double(out.originals.front().history.back().test_accuracy));

    out.retrained = in_stage("retrain", [&] {
        return retrain_ensemble_runs(fl, d.partition, d.train, cfg.eval.retrained_models, retrain_base_seed(cfg),
                                     eval);
    });
    say(log, "retrained: " + std::to_string(out.retrained.size()) + " trained, test acc " +
                 format_double(out.retrained.front().history.back().test_accuracy));

    out.table = in_stage("memscore", [&] {
        const auto orig = final_models(out.originals);
        const auto retr = final_models(out.retrained);
        return score_table(cfg, orig, retr, d);
    });
    if (out.table.degenerate) say(log, "memscore: fewer unlearning examples than bands");

    const auto& u = cfg.unlearn;
    for (double rho : u.rhos) {
        const std::string name = rho == 0.0 ? "finetune_only" : "fedmp_rho" + format_double(rho);
        SelectionStrategy s{StrategyKind::redundant_remaining, rho, u.layer_split};
        out.methods.push_back(run_method(cfg, out, name, s));
        say(log, name + ": |theta| = " + std::to_string(out.methods.back().selected.size()));
    }
    if (u.auto_rho) {
        const auto th = in_stage("auto_rho", [&] {
            const auto g = avg_remaining_gradient(out.originals.front().final_model, d.partition, d.train);
            return threshold_from_importance(g, u.decade_gap);
        });
        SelectionStrategy s{StrategyKind::redundant_remaining, th.rho, u.layer_split};
        MethodOutcome m = run_method(cfg, out, "fedmp_auto", s);
        m.auto_threshold = th;
        say(log, "fedmp_auto: rho = " + format_double(th.rho) + (th.degenerate ? " (degenerate)" : ""));
        out.methods.push_back(std::move(m));
    }
    for (StrategyKind k : u.ablations) {
        const std::string name = to_string(k) + "_rho" + format_double(u.ablation_rho);
        SelectionStrategy s{k, u.ablation_rho, u.layer_split};
        out.methods.push_back(run_method(cfg, out, name, s));
        say(log, name + ": |theta| = " + std::to_string(out.methods.back().selected.size()));
    }
    if (u.gradient_ascent) {
        MethodOutcome m;
        m.name = "gradient_ascent";
        m.model = in_stage("unlearn:gradient_ascent", [&] {
            return gradient_ascent_unlearn(out.originals.front().final_model, d.unlearn, *u.gradient_ascent);
        });
        finish_report(cfg, out, m);
        say(log, "gradient_ascent: done");
        out.methods.push_back(std::move(m));
    }
    return out;
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::filesystem::path& config_path,
                                         const std::optional<std::filesystem::path>& out) {
    if (out) return *out;
    if (!cfg.eval.output_dir.empty()) return cfg.eval.output_dir;
    const std::string stem = config_path.stem().string();
    if (const char* root = std::getenv("FEDMP_OUTPUT_ROOT"); root && *root) {
        return std::filesystem::path(root) / stem;
    }
    return std::filesystem::path("runs") / stem;
}

namespace {

// The only code that writes into a run directory.
class ArtifactWriter {
public:
    ArtifactWriter(std::filesystem::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {
        std::filesystem::create_directories(dir_ / "checkpoints");
    }

    void text(const std::string& name, const std::string& content) {
        const auto path = dir_ / name;
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("cannot write " + path.string());
        f << content;
        if (!f) throw DataError("write failed: " + path.string());
        files_.push_back(path);
    }

    void checkpoint(const std::string& name, const ModelParams& model, const std::vector<std::uint64_t>& lineage) {
        const auto path = dir_ / "checkpoints" / (name + ".json");
        write_checkpoint(path, Checkpoint{model, lineage, hash_});
        files_.push_back(path);
    }

    const std::string& hash() const { return hash_; }
    std::vector<std::filesystem::path> files() const { return files_; }

private:
    std::filesystem::path dir_;
    std::string hash_;
    std::vector<std::filesystem::path> files_;
};

std::string manifest_text(const ExperimentConfig& cfg, const MethodOutcome& m, const std::string& hash) {
    std::ostringstream s;
    s << "# config_hash=" << hash << '\n';
    s << "method=" << m.name << '\n';
    if (m.strategy) s << "strategy=" << to_string(*m.strategy) << '\n';
    if (m.rho) s << "rho=" << format_double(*m.rho) << '\n';
    s << "selected=" << m.selected.size() << '\n';
    s << "gamma=" << (m.gamma ? format_double(*m.gamma) : std::string("none")) << '\n';
    if (m.auto_threshold) {
        s << "knee_exponent=" << m.auto_threshold->knee_exponent << '\n';
        s << "redundant_below=" << format_double(m.auto_threshold->redundant_below) << '\n';
        s << "degenerate=" << (m.auto_threshold->degenerate ? "true" : "false") << '\n';
    }
    s << "ft_rounds=" << (m.strategy ? cfg.unlearn.ft_rounds : 0) << '\n';
    s << "reinit_seed=" << cfg.unlearn.reinit_seed << '\n';
    s << "finetune_seed=" << derive_seed(cfg.training.seed, {stream::kFinetune}) << '\n';
    s << "original_seed=" << cfg.training.seed << '\n';
    return s.str();
}

std::string theta_text(const MethodOutcome& m, const std::string& hash) {
    std::ostringstream s;
    s << "# config_hash=" << hash << '\n';
    for (auto i : m.selected) s << i << '\n';
    return s.str();
}

std::string timing_text(const PipelineResult& res, const std::string& hash) {
    nlohmann::ordered_json doc;
    doc["config_hash"] = hash;
    const auto run_json = [](const std::vector<HistoryPoint>& h) {
        nlohmann::ordered_json j;
        if (h.empty()) return nlohmann::ordered_json(nullptr);
        const PeakTime p = time_to_peak(h);
        j["rounds_to_peak"] = p.rounds;
        j["seconds_to_peak"] = p.seconds;
        j["total_seconds"] = h.back().elapsed_s;
        return j;
    };
    doc["retrained"] = run_json(res.retrained.front().history);
    doc["original"] = run_json(res.originals.front().history);
    nlohmann::ordered_json methods;
    for (const auto& m : res.methods) methods[m.name] = run_json(m.history);
    doc["methods"] = methods;
    return doc.dump(2) + "\n";
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string() + ": cannot open config");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

RunArtifacts cmd_run(const std::filesystem::path& config_path, const std::optional<std::filesystem::path>& out,
                     std::optional<std::uint64_t> seed_override, const LogFn& log) {
    ExperimentConfig cfg = parse_config(read_text(config_path), config_path.string());
    if (seed_override) cfg.override_seeds(*seed_override);
    const std::string canonical = emit_config(cfg);
    const std::string hash = config_hash(canonical);
    const auto dir = resolve_output_dir(cfg, config_path, out);

    std::ostringstream log_buf;
    log_buf << "# config_hash=" << hash << '\n';
    const auto t0 = std::chrono::steady_clock::now();
    const LogFn tee = [&](const std::string& line) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::ostringstream l;
        l << '[' << std::fixed;
        l.precision(2);
        l << s << "s] " << line;
        log_buf << l.str() << '\n';
        if (log) log(l.str());
    };
    tee("config " + config_path.string() + " -> " + dir.string());

    const PipelineResult res = run_pipeline(cfg, tee);

    ArtifactWriter w(dir, hash);
    w.text("config.yaml", "# config_hash=" + hash + "\n" + canonical);
    for (std::size_t s = 0; s < res.originals.size(); ++s) {
        const auto& r = res.originals[s];
        w.checkpoint("original_" + std::to_string(s), r.final_model, r.seed_lineage);
        w.text("history_original_" + std::to_string(s) + ".csv", history_csv(r.history, hash));
    }
    for (std::size_t j = 0; j < res.retrained.size(); ++j) {
        const auto& r = res.retrained[j];
        w.checkpoint("retrained_" + std::to_string(j), r.final_model, r.seed_lineage);
        w.text("history_retrained_" + std::to_string(j) + ".csv", history_csv(r.history, hash));
    }
    w.text("memscore.csv", memscore_csv(res.table, hash));
    for (const auto& m : res.methods) {
        w.checkpoint("unlearned_" + m.name, m.model, {cfg.training.seed, cfg.unlearn.reinit_seed});
        w.text("gme_" + m.name + ".json", gme_to_json_text(m.report, hash));
        w.text("gme_" + m.name + ".csv", gme_bands_csv(m.report, hash));
        w.text("manifest_" + m.name + ".txt", manifest_text(cfg, m, hash));
        if (m.strategy) {
            w.text("history_" + m.name + ".csv", history_csv(m.history, hash));
            w.text("theta_" + m.name + ".txt", theta_text(m, hash));
        }
    }
    w.text("timing.json", timing_text(res, hash));
    tee("wrote " + std::to_string(w.files().size() + 1) + " files");
    w.text("run.log", log_buf.str());
    return {dir, hash, w.files()};
}

ComparisonTable cmd_compare(const std::vector<std::filesystem::path>& reports) {
    std::vector<GMEReport> loaded;
    loaded.reserve(reports.size());
    for (const auto& p : reports) loaded.push_back(read_gme_json(p));
    return compare_reports(loaded);
}

std::filesystem::path cmd_memscore(const std::filesystem::path& config_path,
                                   const std::vector<std::filesystem::path>& originals,
                                   const std::vector<std::filesystem::path>& retrained,
                                   const std::filesystem::path& out, std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg = parse_config(read_text(config_path), config_path.string());
    if (seed_override) cfg.override_seeds(*seed_override);
    const std::string hash = config_hash(emit_config(cfg));
    const PreparedData d = prepare_data(cfg);
    auto load = [](const std::vector<std::filesystem::path>& paths) {
        std::vector<ModelParams> models;
        for (const auto& p : paths) models.push_back(read_checkpoint(p).model);
        return models;
    };
    const auto orig = load(originals);
    const auto retr = load(retrained);
    if (orig.empty() || retr.empty()) throw ConfigError("memscore needs at least one original and one retrained checkpoint");
    if (orig.front().arch.input_dim() != d.train.dim() || orig.front().arch.num_classes() != d.train.num_classes) {
        throw ShapeError("checkpoint architecture does not fit the configured dataset");
    }
    const MemScoreTable table = in_stage("memscore", [&] { return score_table(cfg, orig, retr, d); });
    std::filesystem::create_directories(out);
    const auto path = out / "memscore.csv";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << memscore_csv(table, hash);
    return path;
}

std::string cmd_path(const std::filesystem::path& ckpt_a, const std::filesystem::path& ckpt_b, std::size_t steps,
                     const std::filesystem::path& data) {
    const Checkpoint a = read_checkpoint(ckpt_a);
    const Checkpoint b = read_checkpoint(ckpt_b);
    if (!(a.model.arch == b.model.arch)) throw ShapeError("checkpoints differ in architecture");
    const Batch batch = read_dataset(data).all();
    check_batch(a.model.arch, batch);
    const auto curve = in_stage("path", [&] { return loss_along_path(a.model, b.model, steps, batch); });
    return path_csv(curve);
}

}  // namespace fedmp
