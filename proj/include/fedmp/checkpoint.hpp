#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedmp/nn.hpp"

namespace fedmp {

inline constexpr int kCheckpointFormatVersion = 1;

// JSON document {format_version, layer_dims, seed_lineage, values[, config_hash]}. Values
// are written in shortest round-trip decimal form, so write -> read -> write
// reproduces the same bytes.
struct Checkpoint {
    ModelParams model;
    std::vector<std::uint64_t> seed_lineage;
    // hash of the experiment config that produced the model; omitted when empty
    std::string config_hash;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fedmp
