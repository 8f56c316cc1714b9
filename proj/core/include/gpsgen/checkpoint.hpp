#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gpsgen/nn.hpp"

namespace gpsgen {

/// Checkpoint container: magic, u64 little-endian header length, JSON header,
/// then one contiguous little-endian float32 blob. The header's tensor index
/// maps parameter names to (shape, offset). Optimizer moments are stored under
/// "opt.m/<name>" and "opt.v/<name>" when present.
class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
    nlohmann::json config;
    std::string config_hash;
    int64_t step = 0;
    nlohmann::json schedule;  // {"kind": ..., "T": ...}
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const nn::ParamStore& params, nn::AdamW* opt = nullptr);

/// Loads parameters by name into an already-constructed store (shapes must
/// match exactly) and optimizer moments when both sides have them.
CheckpointMeta load_checkpoint(const std::string& path, nn::ParamStore& params,
                               nn::AdamW* opt = nullptr);

/// Header only (no parameter mutation); used for inspection.
CheckpointMeta peek_checkpoint(const std::string& path);

/// Order-stable hash of all parameter values (frozen-model contract checks).
uint64_t param_hash(const nn::ParamStore& params);

std::string config_hash_hex(const nlohmann::json& config);

}  // namespace gpsgen
