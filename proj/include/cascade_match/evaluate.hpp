#pragma once

// Homography and relative-pose evaluation: match, optionally detect, estimate,
// and summarise per-pair errors as AUC.

#include "cascade_match/detect.hpp"
#include "cascade_match/geometry.hpp"
#include "cascade_match/matcher.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cascade_match {

/// Exact correspondences from cell centres of a `step`-pixel grid, conf 1.
MatchSet ground_truth_matches(const SyntheticPair& pair, int step = 8);

/// The pair resampled to width x height with its truth adjusted.
SyntheticPair rescale_pair(const SyntheticPair& pair, int width, int height);

/// Training and held-out pair names: the trailing round(n * holdout) names are held out.
struct CorpusSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};
CorpusSplit split_corpus(const std::vector<std::string>& names, double holdout);

struct EvalOptions {
    std::string label = "model";
    MatchOptions match;
    std::vector<DetectorConfig> detectors{DetectorConfig{}};
    std::vector<int> resolutions;  // square sizes; empty = native
    RansacOptions ransac;
    std::vector<double> thresholds;
    bool inject_gt = false;
};

struct EvalRow {
    std::string label;
    std::string detector = "none";
    int resolution = 0;  // 0 = native
    int pairs = 0;
    int failures = 0;
    double mean_matches = 0;
    std::vector<double> thresholds;
    std::vector<double> auc;
    std::vector<double> errors;               // per pair; +inf on failure
    std::map<std::string, double> stage_epe;  // "1/8", "1/4", "1/2", "refined": mean px error of matches
    std::map<std::string, double> timings_ms; // mean over pairs
    int min_cell_spacing = -1;                // NMS rows: min Chebyshev distance between kept cells

    double auc_at(double threshold) const;
};

struct EvalReport {
    std::string task;  // homography | pose
    std::vector<EvalRow> rows;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    std::string table() const;
    const EvalRow& row(const std::string& label, const std::string& detector = "none", int resolution = 0) const;
};

/// model may be null when opts.inject_gt is set.
EvalReport eval_homography(CascadeMatcher* model, const std::vector<SyntheticPair>& pairs, const EvalOptions& opts);
EvalReport eval_pose(CascadeMatcher* model, const std::vector<SyntheticPair>& pairs, const EvalOptions& opts);

/// Minimum Chebyshev distance between selected cells of a map; -1 with fewer than two.
int min_chebyshev_spacing(const ConfidenceMap& cmap, const MatchSet& kept);

}  // namespace cascade_match
