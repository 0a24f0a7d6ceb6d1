#pragma once

// JSON run configuration shared by the CLI subcommands.

#include "cascade_match/detect.hpp"
#include "cascade_match/geometry.hpp"
#include "cascade_match/matcher.hpp"
#include "cascade_match/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cascade_match {

struct DataConfig {
    std::string corpus;           // directory of saved pairs
    int pairs = 200;
    std::string mode = "homography";  // or two_view
    std::string image_dir;        // optional source images for homography pairs
    int width = 256;
    int height = 256;
    double holdout = 0.2;         // trailing fraction of the corpus used for evaluation
};

struct TrainPlan {
    std::string stage = "progressive";  // or a single TrainStage name
    TrainConfig train;                  // steps = total over the progressive schedule
    std::string log;                    // JSON-lines metrics path; empty = <output>/train_log.jsonl
};

struct EvalConfig {
    double ransac_threshold_px = 3.0;
    double pose_ransac_threshold_px = 1.0;
    int ransac_iterations = 2000;
    std::vector<double> px_thresholds{3, 5, 10};
    std::vector<double> deg_thresholds{5, 10, 20};
    std::vector<int> resolutions;  // square sizes; empty = native
    int max_pairs = 0;             // 0 = all
    bool inject_gt = false;
    std::string split = "test";    // test | all
};

struct RunConfig {
    uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    TrainPlan train;
    EvalConfig eval;
    DetectorConfig detector;
    MatchOptions match;
    std::string checkpoint;
    std::string output;

    void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict: unknown keys raise ValidationError; absent keys keep defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace cascade_match
