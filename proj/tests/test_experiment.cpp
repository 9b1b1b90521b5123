#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fedmp/checkpoint.hpp"
#include "fedmp/experiment.hpp"

using namespace fedmp;

namespace {

const std::filesystem::path kConfigs{FEDMP_CONFIG_DIR};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Reference FNV-1a, 64 bit.
std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

std::string error_of(const std::string& yaml) {
    try {
        parse_config(yaml, "t.yaml");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const char* kBase = R"(dataset:
  synthetic:
    classes: 3
    samples: 60
    input_dim: 2
partition:
  clients: 3
  unlearning_clients: [0]
)";

}  // namespace

TEST_CASE("shipped configs parse") {
    for (const char* name : {"reference.yaml", "disjoint.yaml", "minimal.yaml"}) {
        CAPTURE(name);
        CHECK_NOTHROW(load_config(kConfigs / name));
    }
    const auto ref = load_config(kConfigs / "reference.yaml");
    CHECK(ref.partition.clients == 10);
    CHECK(ref.dataset.synthetic->samples == 3000);
    CHECK(ref.training.rounds == 50);
    CHECK(ref.eval.retrained_models == 3);
    CHECK(ref.eval.original_models == 3);
    CHECK(ref.hidden == std::vector<std::size_t>{64, 64});
    CHECK(ref.unlearn.ablations == std::vector<StrategyKind>{StrategyKind::salun});
    CHECK(ref.bands() == default_bands());
}

TEST_CASE("config errors carry the source line") {
    CHECK(error_of(std::string(kBase) + "training:\n  rounds: 5\n  lr: 0.1\n").rfind("t.yaml:11: unknown key 'lr'", 0) == 0);
    CHECK(error_of(std::string(kBase) + "extra: 1\n").rfind("t.yaml:9:", 0) == 0);
    const std::string bad_client = R"(dataset:
  synthetic: {classes: 3, samples: 60, input_dim: 2}
partition:
  clients: 4
  unlearning_clients: [0, 4]
)";
    const auto msg = error_of(bad_client);
    CHECK(msg.rfind("t.yaml:5:", 0) == 0);
    CHECK(msg.find("not below clients") != std::string::npos);

    CHECK(error_of(std::string(kBase) + "unlearn:\n  rhos: [0.5, 1.5]\n").rfind("t.yaml:10:", 0) == 0);
    CHECK(error_of(std::string(kBase) + "unlearn:\n  rhos: [0.5, 0.5]\n").find("duplicate") != std::string::npos);
    CHECK(error_of(std::string(kBase) + "training:\n  optimizer: rmsprop\n").rfind("t.yaml:10:", 0) == 0);
    CHECK(error_of(std::string(kBase) + "eval:\n  bands: [80, 90]\n").rfind("t.yaml:10:", 0) == 0);
    CHECK(error_of(std::string(kBase) + "unlearn:\n  ablations: [redundant_remaining]\n").find("not an ablation") !=
          std::string::npos);
    CHECK(error_of(std::string(kBase) + "unlearn:\n  rhos: []\n").find("no method") != std::string::npos);
    CHECK(error_of("dataset:\n  synthetic: {classes: 3, samples: 60}\npartition:\n  clients: 3\n  unlearning_clients: [0, 1, 2]\n")
              .find("every client") != std::string::npos);
    CHECK(error_of("dataset:\n  synthetic: {classes: 3, samples: 60}\npartition:\n  kind: disjoint\n  clients: 4\n")
              .find("disjoint") != std::string::npos);
    CHECK(error_of("dataset:\n  seed: -1\n  synthetic: {classes: 3}\n").rfind("t.yaml:2:", 0) == 0);
    CHECK(error_of("dataset: [1, 2\n").rfind("t.yaml:", 0) == 0);
    CHECK(error_of("partition:\n  clients: 3\n").find("missing 'dataset'") != std::string::npos);
    CHECK(error_of(std::string(kBase)).empty());
}

TEST_CASE("emit_config round trips") {
    for (const char* name : {"reference.yaml", "disjoint.yaml", "minimal.yaml"}) {
        const auto cfg = load_config(kConfigs / name);
        const auto text = emit_config(cfg);
        const auto again = emit_config(parse_config(text));
        CHECK(text == again);
    }
    auto cfg = parse_config(std::string(kBase) + "eval:\n  band_mode: threshold\n  bands: [0.5, 0]\n  output_dir: out/x\n");
    const auto text = emit_config(cfg);
    CHECK(emit_config(parse_config(text)) == text);
    CHECK(cfg.bands() == std::vector<Band>{{0.5, 1.0}, {0.0, 0.5}});
}

TEST_CASE("config hash is FNV-1a over the canonical text") {
    CHECK(config_hash("") == "cbf29ce484222325");
    const auto text = emit_config(load_config(kConfigs / "minimal.yaml"));
    std::ostringstream want;
    want << std::hex;
    want.width(16);
    want.fill('0');
    want << fnv1a(text);
    CHECK(config_hash(text) == want.str());
}

TEST_CASE("override_seeds changes every seed") {
    auto cfg = load_config(kConfigs / "reference.yaml");
    cfg.override_seeds(77);
    CHECK(cfg.dataset.seed == 77);
    CHECK(cfg.partition.seed == 77);
    CHECK(cfg.training.seed == 77);
    CHECK(cfg.unlearn.reinit_seed == 77);
}

TEST_CASE("output directory resolution") {
    auto cfg = load_config(kConfigs / "minimal.yaml");
    CHECK(resolve_output_dir(cfg, "a/b/minimal.yaml", std::filesystem::path("x")) == "x");
    cfg.eval.output_dir = "y";
    CHECK(resolve_output_dir(cfg, "a/b/minimal.yaml", std::nullopt) == "y");
}

TEST_CASE("pipeline on the minimal config") {
    auto cfg = load_config(kConfigs / "minimal.yaml");
    cfg.unlearn.rhos = {0.0, 0.5};
    cfg.unlearn.auto_rho = true;
    cfg.unlearn.ablations = {StrategyKind::salun, StrategyKind::deep_layers};
    cfg.unlearn.gradient_ascent = AscentConfig{};
    const auto res = run_pipeline(cfg);

    std::vector<std::string> names;
    for (const auto& m : res.methods) names.push_back(m.name);
    CHECK(names == std::vector<std::string>{"finetune_only", "fedmp_rho0.5", "fedmp_auto", "salun_rho0.4",
                                            "deep_layers_rho0.4", "gradient_ascent"});
    CHECK(res.originals.size() == 1);
    CHECK(res.retrained.size() == 1);
    // client 0 holds its iid share plus the three outliers
    CHECK(res.data.unlearn_ids.size() == res.data.partition.client_examples[0].size());
    CHECK(res.data.train.size() == 203);
    CHECK(res.table.ids == res.data.unlearn_ids);
    for (const auto& m : res.methods) {
        CHECK(m.report.bands.size() == 5);
        CHECK(m.report.local_fairness.has_value());
        CHECK(*m.report.local_fairness >= 0.0);
    }
    CHECK(res.methods[0].selected.empty());
    CHECK(res.methods[0].history.size() == cfg.unlearn.ft_rounds);
    CHECK(res.methods.back().history.empty());
    CHECK(res.methods[2].auto_threshold.has_value());

    const auto again = run_pipeline(cfg);
    for (std::size_t i = 0; i < res.methods.size(); ++i) CHECK(again.methods[i].model == res.methods[i].model);
}

TEST_CASE("cmd_run writes a complete, reproducible run directory") {
    const auto root = std::filesystem::temp_directory_path() / "fedmp_unit_run";
    std::filesystem::remove_all(root);
    const auto a = cmd_run(kConfigs / "minimal.yaml", root / "a");
    const auto b = cmd_run(kConfigs / "minimal.yaml", root / "b");
    CHECK(a.config_hash == b.config_hash);
    for (const char* f : {"config.yaml", "memscore.csv", "gme_finetune_only.json", "gme_finetune_only.csv",
                          "manifest_finetune_only.txt", "theta_finetune_only.txt", "timing.json", "run.log",
                          "checkpoints/original_0.json", "checkpoints/retrained_0.json",
                          "checkpoints/unlearned_finetune_only.json"}) {
        CAPTURE(f);
        REQUIRE(std::filesystem::exists(a.dir / f));
        if (std::string(f) != "timing.json" && std::string(f) != "run.log") CHECK(slurp(a.dir / f) == slurp(b.dir / f));
    }
    CHECK(slurp(a.dir / "memscore.csv").rfind("# config_hash=" + a.config_hash, 0) == 0);
    CHECK(read_checkpoint(a.dir / "checkpoints/original_0.json").config_hash == a.config_hash);

    const auto seeded = cmd_run(kConfigs / "minimal.yaml", root / "c", 9);
    CHECK(seeded.config_hash != a.config_hash);
    CHECK(slurp(seeded.dir / "config.yaml").find("seed: 9") != std::string::npos);

    const auto table = cmd_compare({a.dir / "gme_finetune_only.json", seeded.dir / "gme_finetune_only.json"});
    CHECK(table.csv.find("finetune_only") != std::string::npos);

    const auto ms = cmd_memscore(kConfigs / "minimal.yaml", {a.dir / "checkpoints/original_0.json"},
                                 {a.dir / "checkpoints/retrained_0.json"}, root / "m");
    CHECK(slurp(ms) == slurp(a.dir / "memscore.csv"));

    const auto data = root / "data.txt";
    Dataset ds;
    ds.features = Matrix(2, 4);
    ds.features.data = {0, 1, 2, 3, -1, 0.5, 0, 2};
    ds.labels = {0, 2};
    ds.num_classes = 3;
    write_dataset(data, ds);
    const auto ckpt = a.dir / "checkpoints/original_0.json";
    const auto csv = cmd_path(ckpt, ckpt, 4, data);
    std::istringstream in(csv);
    std::string line, first;
    std::getline(in, line);
    CHECK(line == "t,loss");
    int rows = 0;
    while (std::getline(in, line)) {
        const auto loss = line.substr(line.find(',') + 1);
        if (first.empty()) first = loss;
        CHECK(loss == first);
        ++rows;
    }
    CHECK(rows == 4);
    std::filesystem::remove_all(root);
}
