#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedmp/data.hpp"
#include "fedmp/errors.hpp"
#include "fedmp/fedsim.hpp"
#include "fedmp/memeval.hpp"
#include "fedmp/report_io.hpp"
#include "fedmp/unlearn.hpp"

// Declarative experiments: YAML config -> original/retrained ensembles ->
// memorization scores -> every configured unlearner -> GME reports on disk.
namespace fedmp {

// A numeric failure tagged with the pipeline stage it happened in.
class StageError : public NumericError {
public:
    StageError(std::string stage, const std::string& what)
        : NumericError(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

enum class PartitionKind { iid, dirichlet, disjoint };

struct DatasetSection {
    // Exactly one of synthetic / file is used.
    std::optional<SynthConfig> synthetic;
    std::string file;
    std::string test_file;
    std::size_t test_samples = 1000;
    std::uint64_t seed = 1;
};

struct PartitionSection {
    PartitionKind kind = PartitionKind::iid;
    double alpha = 0.5;
    std::size_t clients = 10;
    std::vector<int> unlearning_clients{0};
    std::uint64_t seed = 2;
};

struct UnlearnSection {
    std::vector<double> rhos{0.0, 0.4};
    bool auto_rho = false;
    int decade_gap = 1;
    std::size_t ft_rounds = 40;
    std::uint64_t reinit_seed = 4;
    std::size_t layer_split = 1;
    std::vector<StrategyKind> ablations;
    double ablation_rho = 0.4;
    std::optional<AscentConfig> gradient_ascent;
};

struct EvalSection {
    std::size_t retrained_models = 3;  // J
    std::size_t original_models = 3;   // S
    std::vector<double> band_boundaries{95, 90, 85, 80, 0};
    BandMode band_mode = BandMode::percentile;
    bool average_retrained = false;
    FairnessMetric fairness = FairnessMetric::loss;
    std::string output_dir;
};

struct ExperimentConfig {
    DatasetSection dataset;
    PartitionSection partition;
    FLConfig training;
    std::vector<std::size_t> hidden{64};
    UnlearnSection unlearn;
    EvalSection eval;

    // Replaces every named seed with `seed`.
    void override_seeds(std::uint64_t seed);
    std::vector<Band> bands() const;
};

// Parses YAML; unknown keys and invalid values raise ConfigError prefixed
// with "<source>:<line>:".
ExperimentConfig parse_config(const std::string& text, const std::string& source = "config");
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical YAML rendering of the effective config. Re-parsing it yields the
// same config.
std::string emit_config(const ExperimentConfig& cfg);

// 16 hex digits of FNV-1a over `text`.
std::string config_hash(const std::string& text);

struct PreparedData {
    Dataset train;
    Batch test;
    Partition partition;
    std::vector<std::size_t> unlearn_ids;
    Batch unlearn;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct MethodOutcome {
    std::string name;
    std::optional<double> rho;
    std::optional<StrategyKind> strategy;
    ModelParams model;
    std::vector<HistoryPoint> history;
    std::vector<std::size_t> selected;
    std::optional<double> gamma;
    std::optional<ImportanceThreshold> auto_threshold;
    GMEReport report;
};

struct PipelineResult {
    PreparedData data;
    std::vector<TrainedRun> originals;
    std::vector<TrainedRun> retrained;
    MemScoreTable table;
    std::vector<MethodOutcome> methods;
};

using LogFn = std::function<void(const std::string&)>;

// Runs everything in memory. Numeric failures surface as StageError.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const LogFn& log = {});

// Runs one extra unlearner against an existing pipeline result.
MethodOutcome run_method(const ExperimentConfig& cfg, const PipelineResult& base, const std::string& name,
                         const SelectionStrategy& strategy);

struct RunArtifacts {
    std::filesystem::path dir;
    std::string config_hash;
    std::vector<std::filesystem::path> files;
};

// Output directory: explicit `out`, else eval.output_dir, else
// $FEDMP_OUTPUT_ROOT/<config stem>, else runs/<config stem>.
std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::filesystem::path& config_path,
                                         const std::optional<std::filesystem::path>& out);

RunArtifacts cmd_run(const std::filesystem::path& config_path,
                     const std::optional<std::filesystem::path>& out = std::nullopt,
                     std::optional<std::uint64_t> seed_override = std::nullopt, const LogFn& log = {});

// Loads GME JSON reports and builds the comparison table.
ComparisonTable cmd_compare(const std::vector<std::filesystem::path>& reports);

// Scores D_u from saved checkpoints; writes memscore.csv into `out`.
std::filesystem::path cmd_memscore(const std::filesystem::path& config_path,
                                   const std::vector<std::filesystem::path>& originals,
                                   const std::vector<std::filesystem::path>& retrained,
                                   const std::filesystem::path& out,
                                   std::optional<std::uint64_t> seed_override = std::nullopt);

// Loss along the segment between two checkpoints on a dataset file.
std::string cmd_path(const std::filesystem::path& ckpt_a, const std::filesystem::path& ckpt_b, std::size_t steps,
                     const std::filesystem::path& data);

}  // namespace fedmp
