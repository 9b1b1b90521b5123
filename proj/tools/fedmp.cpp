#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedmp/errors.hpp"
#include "fedmp/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

void write_or_print(const std::string& content, const std::string& out) {
    if (out.empty()) {
        std::cout << content;
        return;
    }
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw fedmp::DataError("cannot write " + out);
    f << content;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated unlearning experiments on synthetic data"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed_override;
    bool quiet = false;

    auto* run = app.add_subcommand("run", "train, retrain, score, unlearn and evaluate");
    run->add_option("--config", config, "experiment YAML")->required();
    run->add_option("--out", out, "output directory");
    run->add_option("--seed-override", seed_override, "replace every named seed");
    run->add_flag("-q,--quiet", quiet, "no progress on stderr");

    std::vector<std::string> reports;
    auto* compare = app.add_subcommand("compare", "tabulate GME reports");
    compare->add_option("reports", reports, "gme_*.json files")->required()->expected(2, -1);
    compare->add_option("--out", out, "write the CSV table here; the text table goes to stdout");

    std::string ckpt_a, ckpt_b, data;
    std::size_t steps = 11;
    auto* path = app.add_subcommand("path", "loss along the segment between two checkpoints");
    path->add_option("ckpt_a", ckpt_a)->required();
    path->add_option("ckpt_b", ckpt_b)->required();
    path->add_option("--steps", steps, "points on the segment")->check(CLI::Range(2, 1000000));
    path->add_option("--data", data, "dataset file")->required();
    path->add_option("--out", out, "CSV destination (default stdout)");

    std::vector<std::string> originals, retrained;
    auto* memscore = app.add_subcommand("memscore", "score the unlearning set from saved checkpoints");
    memscore->add_option("--config", config, "experiment YAML")->required();
    memscore->add_option("--originals", originals, "original-model checkpoints")->required();
    memscore->add_option("--retrained", retrained, "retrained-model checkpoints")->required();
    memscore->add_option("--out", out, "output directory")->required();
    memscore->add_option("--seed-override", seed_override, "replace every named seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) {
            const fedmp::LogFn log = [&](const std::string& line) {
                if (!quiet) std::cerr << line << '\n';
            };
            const auto res = fedmp::cmd_run(config, out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out),
                                            seed_override, log);
            std::cout << res.dir.string() << '\n';
        } else if (*compare) {
            std::vector<std::filesystem::path> paths(reports.begin(), reports.end());
            const auto table = fedmp::cmd_compare(paths);
            if (!out.empty()) write_or_print(table.csv, out);
            std::cout << (out.empty() ? table.csv + "\n" + table.text : table.text);
        } else if (*path) {
            write_or_print(fedmp::cmd_path(ckpt_a, ckpt_b, steps, data), out);
        } else if (*memscore) {
            std::vector<std::filesystem::path> o(originals.begin(), originals.end());
            std::vector<std::filesystem::path> r(retrained.begin(), retrained.end());
            std::cout << fedmp::cmd_memscore(config, o, r, out, seed_override).string() << '\n';
        }
    } catch (const fedmp::StageError& e) {
        std::cerr << "error in stage " << e.what() << '\n';
        return kExitNumeric;
    } catch (const fedmp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const fedmp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const fedmp::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const fedmp::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
