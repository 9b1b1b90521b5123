#include "fedmp/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedmp/errors.hpp"

namespace fedmp {

using nlohmann::json;

std::string checkpoint_to_string(const Checkpoint& ckpt) {
    for (double v : ckpt.model.values) {
        if (!std::isfinite(v)) throw NumericError("refusing to checkpoint a non-finite parameter");
    }
    json doc;
    doc["format_version"] = kCheckpointFormatVersion;
    doc["layer_dims"] = ckpt.model.arch.layer_dims;
    doc["seed_lineage"] = ckpt.seed_lineage;
    doc["values"] = ckpt.model.values;
    if (!ckpt.config_hash.empty()) doc["config_hash"] = ckpt.config_hash;
    return doc.dump() + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw DataError("unsupported checkpoint format_version " + std::to_string(version));
        }
        Checkpoint ckpt;
        ckpt.model.arch.layer_dims = doc.at("layer_dims").get<std::vector<std::size_t>>();
        ckpt.model.arch.validate();
        ckpt.seed_lineage = doc.at("seed_lineage").get<std::vector<std::uint64_t>>();
        ckpt.model.values = doc.at("values").get<std::vector<double>>();
        if (doc.contains("config_hash")) ckpt.config_hash = doc["config_hash"].get<std::string>();
        if (ckpt.model.values.size() != ckpt.model.arch.param_count()) {
            throw ShapeError("checkpoint holds " + std::to_string(ckpt.model.values.size()) +
                             " values but its architecture needs " +
                             std::to_string(ckpt.model.arch.param_count()));
        }
        return ckpt;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << checkpoint_to_string(ckpt);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_string(ss.str());
}

}  // namespace fedmp
