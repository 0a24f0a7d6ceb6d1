#pragma once

// Checkpoint directory: manifest.json plus weights.bin, a named-array archive
// (name, shape, dtype, little-endian float32 payload per entry).

#include "cascade_match/matcher.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cascade_match {

void write_named_arrays(const std::filesystem::path& path,
                        const std::vector<std::pair<std::string, torch::Tensor>>& arrays);
std::map<std::string, torch::Tensor> read_named_arrays(const std::filesystem::path& path);

struct CheckpointInfo {
    ModelConfig model;
    std::string stage;
    int64_t step = 0;
    nlohmann::json extra;
};

void save_checkpoint(const std::filesystem::path& dir, CascadeMatcher& model, const std::string& stage, int64_t step,
                     const nlohmann::json& extra = nlohmann::json::object());

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Copies stored tensors into same-named parameters and buffers. With
/// allow_missing, model entries absent from the archive keep their values;
/// archive entries the model lacks are always an error. Returns the count loaded.
int load_weights(CascadeMatcher& model, const std::filesystem::path& dir, bool allow_missing = false);

/// Builds the model described by the manifest and loads it.
CascadeMatcher load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace cascade_match
