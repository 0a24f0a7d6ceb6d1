#pragma once

// Static PNG artifacts: cumulative error curves and match overlays.

#include "cascade_match/evaluate.hpp"
#include "cascade_match/geometry.hpp"

#include <filesystem>

namespace cascade_match {

/// Fraction of pairs with error <= x for x in [0, max_error], one curve per row.
void plot_error_curves(const std::filesystem::path& path, const EvalReport& report, double max_error);

/// Side-by-side pair with match lines; green when within `tolerance` px of the
/// ground truth, red otherwise. At most `max_lines` evenly subsampled matches.
void draw_matches(const std::filesystem::path& path, const SyntheticPair& pair, const MatchSet& matches,
                  double tolerance = 5.0, int max_lines = 400);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace cascade_match
