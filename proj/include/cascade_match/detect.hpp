#pragma once

// Training-free keypoint detection on dense match-confidence maps.

#include "cascade_match/geometry.hpp"

#include <cstdint>
#include <vector>

namespace cascade_match {

/// Top-1 match confidence per source cell at one scale. Cells without a match
/// hold 0 and are marked invalid; invalid cells are never selected.
struct ConfidenceMap {
    int rows = 0;
    int cols = 0;
    int cell = 2;  // pixels per cell
    std::vector<float> values;
    std::vector<uint8_t> valid;

    ConfidenceMap() = default;
    ConfidenceMap(int r, int c, int cell_px) : rows(r), cols(c), cell(cell_px), values(r * c, 0.f), valid(r * c, 0) {}

    int size() const { return rows * cols; }
    float at(int r, int c) const { return values[r * cols + c]; }
    bool is_valid(int r, int c) const { return valid[r * cols + c] != 0; }
};

/// Cells kept by overlapping max-pool NMS: a valid cell survives iff its value
/// equals the maximum over the valid cells of the kernel x kernel window centered
/// on it (clamped at the border) and no lower-index cell in that window attains
/// the same maximum. Throws on even kernels or kernels below 3.
std::vector<uint8_t> nms_select(const ConfidenceMap& cmap, int kernel);

/// One cell per non-overlapping cell x cell tile: the tile's maximum valid cell,
/// lowest index on ties.
std::vector<uint8_t> grid_select(const ConfidenceMap& cmap, int cell);

/// Matches whose source point falls in a selected cell.
MatchSet filter_by_cells(const ConfidenceMap& cmap, const std::vector<uint8_t>& keep, const MatchSet& matches);

MatchSet nms_detect(const ConfidenceMap& cmap, int kernel, const MatchSet& matches);
MatchSet grid_detect(const ConfidenceMap& cmap, int cell, const MatchSet& matches);
/// Keeps matches with conf > thr.
MatchSet threshold_filter(const MatchSet& matches, double thr);

enum class DetectorKind { none, nms, grid, threshold };

struct DetectorConfig {
    DetectorKind kind = DetectorKind::none;
    int nms_kernel = 5;
    int grid_cell = 4;
    double conf_thr = 0.5;
};

DetectorKind parse_detector(const std::string& name);
std::string detector_name(DetectorKind kind);
/// Human-readable label such as "nms-5" or "grid-4".
std::string detector_label(const DetectorConfig& cfg);

MatchSet apply_detector(const DetectorConfig& cfg, const ConfidenceMap& cmap, const MatchSet& matches);

}  // namespace cascade_match
