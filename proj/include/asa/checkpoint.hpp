#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "asa/params.hpp"

namespace asa {

// On-disk layout:
//   line 1   JSON manifest terminated by '\n':
//            {"format": "asa-checkpoint", "version": 1, "meta": {...},
//             "tensors": [{"name", "shape", "dtype": "f64", "offset"}...],
//             "data_bytes": N}
//   rest     N bytes of little-endian f64 values; offsets are relative to
//            the first byte after the manifest line.

struct CheckpointData {
    nlohmann::json meta;
    std::map<std::string, Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const NamedParams& params);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into `params`. Every parameter must be present
/// with the exact shape; throws std::runtime_error naming the first mismatch.
void load_params(const CheckpointData& data, const NamedParams& params);

}  // namespace asa
