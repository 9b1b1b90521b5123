#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedmp/fedsim.hpp"
#include "fedmp/memeval.hpp"

namespace fedmp {

// GME document: {config_hash, method, rho, bands[{range, lo, hi, n,
// acc_unlearned, acc_retrained, delta}], unlearn{...}, test{...},
// local_fairness, rounds_to_peak_unlearned, rounds_to_peak_retrained}.
// Wall-clock values are deliberately absent so identical runs produce
// identical bytes. Undefined values are null.
nlohmann::ordered_json gme_to_json(const GMEReport& rep, const std::string& config_hash);
GMEReport gme_from_json(const nlohmann::ordered_json& doc);

std::string gme_to_json_text(const GMEReport& rep, const std::string& config_hash);
GMEReport read_gme_json(const std::filesystem::path& path);

// Lines starting with '#' carry the config hash; then a header row.
std::string gme_bands_csv(const GMEReport& rep, const std::string& config_hash);
std::string memscore_csv(const MemScoreTable& table, const std::string& config_hash);
std::string history_csv(std::span<const HistoryPoint> history, const std::string& config_hash);
std::string path_csv(std::span<const PathPoint> curve);

struct ComparisonTable {
    std::string csv;
    std::string text;
};

// One row per report: per-band delta, unlearning-set delta, test accuracy,
// fairness, rounds to peak, plus each numeric column's difference to the
// first report. Rows keep argument order unless every report has a rho, in
// which case they are stably sorted by rho. Throws ConfigError when band
// definitions differ.
ComparisonTable compare_reports(std::span<const GMEReport> reports);

}  // namespace fedmp
