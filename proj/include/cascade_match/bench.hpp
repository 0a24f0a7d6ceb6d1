#pragma once

// Per-stage wall-clock timing of the matching pipeline.

#include "cascade_match/detect.hpp"
#include "cascade_match/matcher.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace cascade_match {

struct BenchRow {
    std::string stage;
    double median_ms = 0;
    double min_ms = 0;
    double max_ms = 0;
};

struct BenchReport {
    int size = 0;
    std::vector<int> scales;
    int runs = 0;
    std::vector<BenchRow> rows;  // pipeline order, then "detection" and "total"
    double total_median_ms = 0;

    nlohmann::json to_json() const;
    std::string table() const;
    const BenchRow* find(const std::string& stage) const;
};

/// Medians over `runs` timed calls after `warmup` untimed ones on a procedural pair.
BenchReport bench(CascadeMatcher& model, int size, const MatchOptions& opts, const DetectorConfig& detector,
                  int runs = 5, int warmup = 1, uint64_t seed = 0);

}  // namespace cascade_match
