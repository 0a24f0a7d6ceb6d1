#include "cascade_match/detect.hpp"

#include "cascade_match/error.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <string>
#include <cmath>
#include <limits>

namespace cascade_match {

namespace {

constexpr float kNegInf = -std::numeric_limits<float>::infinity();

/// Sliding-window maximum along rows then columns (separable, border-clamped).
std::vector<float> window_max(const ConfidenceMap& cmap, int radius) {
    const int rows = cmap.rows;
    const int cols = cmap.cols;
    std::vector<float> masked(cmap.size());
    for (int i = 0; i < cmap.size(); ++i) masked[i] = cmap.valid[i] ? cmap.values[i] : kNegInf;
    std::vector<float> tmp(cmap.size(), kNegInf);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            float m = kNegInf;
            for (int cc = std::max(0, c - radius); cc <= std::min(cols - 1, c + radius); ++cc)
                m = std::max(m, masked[r * cols + cc]);
            tmp[r * cols + c] = m;
        }
    std::vector<float> out(cmap.size(), kNegInf);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            float m = kNegInf;
            for (int rr = std::max(0, r - radius); rr <= std::min(rows - 1, r + radius); ++rr)
                m = std::max(m, tmp[rr * cols + c]);
            out[r * cols + c] = m;
        }
    return out;
}

}  // namespace

std::vector<uint8_t> nms_select(const ConfidenceMap& cmap, int kernel) {
    if (kernel < 3 || kernel % 2 == 0) throw ValidationError("NMS kernel must be odd and >= 3");
    const int radius = kernel / 2;
    const auto mx = window_max(cmap, radius);
    std::vector<uint8_t> keep(cmap.size(), 0);
    for (int r = 0; r < cmap.rows; ++r)
        for (int c = 0; c < cmap.cols; ++c) {
            const int idx = r * cmap.cols + c;
            if (!cmap.valid[idx] || cmap.values[idx] != mx[idx]) continue;
            // Plateau tie-break: a lower-index window cell with the same value wins.
            bool first = true;
            for (int rr = std::max(0, r - radius); rr <= r && first; ++rr) {
                const int c_end = rr < r ? std::min(cmap.cols - 1, c + radius) : c - 1;
                for (int cc = std::max(0, c - radius); cc <= c_end; ++cc) {
                    const int j = rr * cmap.cols + cc;
                    if (cmap.valid[j] && cmap.values[j] == cmap.values[idx]) {
                        first = false;
                        break;
                    }
                }
            }
            keep[idx] = first ? 1 : 0;
        }
    return keep;
}

std::vector<uint8_t> grid_select(const ConfidenceMap& cmap, int cell) {
    if (cell < 2) throw ValidationError("grid cell must be >= 2");
    std::vector<uint8_t> keep(cmap.size(), 0);
    for (int r0 = 0; r0 < cmap.rows; r0 += cell)
        for (int c0 = 0; c0 < cmap.cols; c0 += cell) {
            int best = -1;
            for (int r = r0; r < std::min(cmap.rows, r0 + cell); ++r)
                for (int c = c0; c < std::min(cmap.cols, c0 + cell); ++c) {
                    const int idx = r * cmap.cols + c;
                    if (!cmap.valid[idx]) continue;
                    if (best < 0 || cmap.values[idx] > cmap.values[best]) best = idx;
                }
            if (best >= 0) keep[best] = 1;
        }
    return keep;
}

MatchSet filter_by_cells(const ConfidenceMap& cmap, const std::vector<uint8_t>& keep, const MatchSet& matches) {
    MatchSet out;
    const int width = cmap.cols * cmap.cell;
    const int height = cmap.rows * cmap.cell;
    for (const auto& m : matches) {
        const int idx = cell_index(Vec2(m.xa, m.ya), cmap.cell, width, height);
        if (idx >= 0 && keep[idx]) out.push_back(m);
    }
    return out;
}

MatchSet nms_detect(const ConfidenceMap& cmap, int kernel, const MatchSet& matches) {
    return filter_by_cells(cmap, nms_select(cmap, kernel), matches);
}

MatchSet grid_detect(const ConfidenceMap& cmap, int cell, const MatchSet& matches) {
    return filter_by_cells(cmap, grid_select(cmap, cell), matches);
}

MatchSet threshold_filter(const MatchSet& matches, double thr) {
    if (thr < 0 || thr > 1) throw ValidationError("confidence threshold must lie in [0, 1]");
    MatchSet out;
    std::copy_if(matches.begin(), matches.end(), std::back_inserter(out), [thr](const Match& m) { return m.conf > thr; });
    return out;
}

DetectorKind parse_detector(const std::string& name) {
    if (name == "none") return DetectorKind::none;
    if (name == "nms") return DetectorKind::nms;
    if (name == "grid") return DetectorKind::grid;
    if (name == "threshold") return DetectorKind::threshold;
    throw ValidationError("unknown detector '" + name + "' (expected none|nms|grid|threshold)");
}

std::string detector_name(DetectorKind kind) {
    switch (kind) {
        case DetectorKind::none: return "none";
        case DetectorKind::nms: return "nms";
        case DetectorKind::grid: return "grid";
        case DetectorKind::threshold: return "threshold";
    }
    return "none";
}

std::string detector_label(const DetectorConfig& cfg) {
    switch (cfg.kind) {
        case DetectorKind::nms: return "nms-" + std::to_string(cfg.nms_kernel);
        case DetectorKind::grid: return "grid-" + std::to_string(cfg.grid_cell);
        case DetectorKind::threshold: {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "thr-%.2f", cfg.conf_thr);
            return buf;
        }
        case DetectorKind::none: break;
    }
    return "none";
}

MatchSet apply_detector(const DetectorConfig& cfg, const ConfidenceMap& cmap, const MatchSet& matches) {
    switch (cfg.kind) {
        case DetectorKind::nms: return nms_detect(cmap, cfg.nms_kernel, matches);
        case DetectorKind::grid: return grid_detect(cmap, cfg.grid_cell, matches);
        case DetectorKind::threshold: return threshold_filter(matches, cfg.conf_thr);
        case DetectorKind::none: break;
    }
    return matches;
}

}  // namespace cascade_match
