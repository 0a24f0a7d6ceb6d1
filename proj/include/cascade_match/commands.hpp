#pragma once

// Subcommand implementations shared by the CLI and the Python module.

#include "cascade_match/config.hpp"
#include "cascade_match/evaluate.hpp"
#include "cascade_match/training.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cascade_match {

/// Writes data.pairs pairs into `out` and returns their stems. Pair i uses seed
/// seed * 1000003 + i.
std::vector<std::string> generate_corpus(const DataConfig& data, uint64_t seed, const std::filesystem::path& out);

/// split: train | test | all, following data.holdout.
std::vector<SyntheticPair> load_corpus(const DataConfig& data, const std::string& split);

struct TrainOutcome {
    std::filesystem::path final_checkpoint;
    std::vector<std::pair<std::string, TrainResult>> stages;
};

/// Trains per cfg.train into cfg.output, one checkpoint directory per stage.
/// pmt and runs with an initial checkpoint take the model layout from it.
TrainOutcome run_training(const RunConfig& cfg);

/// task: homography | pose. Rows: detector none plus cfg.detector when set.
EvalReport run_evaluation(const RunConfig& cfg, const std::string& task);

}  // namespace cascade_match
