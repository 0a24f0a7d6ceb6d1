#include "cascade_match/evaluate.hpp"

#include "cascade_match/error.hpp"
#include "cascade_match/synthetic.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace cascade_match {

using nlohmann::json;

MatchSet ground_truth_matches(const SyntheticPair& pair, int step) {
    if (step < 1) throw ValidationError("ground-truth grid step must be positive");
    MatchSet out;
    for (int y = 0; y + step <= pair.image_a.height; y += step)
        for (int x = 0; x + step <= pair.image_a.width; x += step) {
            const Vec2 src(x + (step - 1) / 2.0, y + (step - 1) / 2.0);
            const auto t = gt_target(pair, src);
            if (!t) continue;
            out.push_back({src.x(), src.y(), t->x(), t->y(), 1.0, 1.0 / step});
        }
    return out;
}

namespace {

// Pixel-centre scaling x' = (x + 0.5) * s - 0.5.
Mat3 scale_matrix(double sx, double sy) {
    Mat3 s = Mat3::Identity();
    s(0, 0) = sx;
    s(1, 1) = sy;
    s(0, 2) = 0.5 * sx - 0.5;
    s(1, 2) = 0.5 * sy - 0.5;
    return s;
}

std::vector<float> resample_nearest(const std::vector<float>& src, int w, int h, int nw, int nh) {
    std::vector<float> out(static_cast<size_t>(nw) * nh);
    for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x) {
            const int sx = std::clamp(static_cast<int>(std::lround((x + 0.5) * w / nw - 0.5)), 0, w - 1);
            const int sy = std::clamp(static_cast<int>(std::lround((y + 0.5) * h / nh - 0.5)), 0, h - 1);
            out[static_cast<size_t>(y) * nw + x] = src[static_cast<size_t>(sy) * w + sx];
        }
    return out;
}

double mean_epe(const SyntheticPair& pair, const MatchSet& matches) {
    double sum = 0;
    int n = 0;
    for (const auto& m : matches) {
        const auto t = gt_target(pair, Vec2(m.xa, m.ya));
        if (!t) continue;
        sum += (Vec2(m.xb, m.yb) - *t).norm();
        ++n;
    }
    return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_nullable(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

enum class Task { homography, pose };

EvalReport evaluate(Task task, CascadeMatcher* model, const std::vector<SyntheticPair>& pairs,
                    const EvalOptions& opts) {
    if (!model && !opts.inject_gt) throw ValidationError("evaluation needs a model or ground-truth injection");
    if (opts.thresholds.empty()) throw ValidationError("evaluation needs at least one AUC threshold");
    if (opts.detectors.empty()) throw ValidationError("evaluation needs at least one detector setting");
    if (opts.inject_gt)
        for (const auto& d : opts.detectors)
            if (d.kind != DetectorKind::none && d.kind != DetectorKind::threshold)
                throw ValidationError("injected matches carry no confidence map; use detector none or threshold");
    for (const auto& p : pairs)
        if (p.is_homography() != (task == Task::homography))
            throw ValidationError(task == Task::homography ? "homography evaluation needs homography pairs"
                                                           : "pose evaluation needs two-view pairs");

    EvalReport report;
    report.task = task == Task::homography ? "homography" : "pose";
    std::vector<int> resolutions = opts.resolutions.empty() ? std::vector<int>{0} : opts.resolutions;

    for (int res : resolutions) {
        std::vector<EvalRow> rows(opts.detectors.size());
        std::map<std::string, std::pair<double, int>> epe_acc;
        std::map<std::string, double> timing_acc;
        for (size_t d = 0; d < rows.size(); ++d) {
            rows[d].label = opts.label;
            rows[d].detector = detector_label(opts.detectors[d]);
            rows[d].resolution = res;
            rows[d].thresholds = opts.thresholds;
        }
        for (const auto& original : pairs) {
            const SyntheticPair pair = res > 0 ? rescale_pair(original, res, res) : original;
            MatchOutput out;
            if (opts.inject_gt) {
                out.matches = ground_truth_matches(original);
                if (res > 0) {
                    const Mat3 sa = scale_matrix(static_cast<double>(res) / original.image_a.width,
                                                 static_cast<double>(res) / original.image_a.height);
                    const Mat3 sb = scale_matrix(static_cast<double>(res) / original.image_b.width,
                                                 static_cast<double>(res) / original.image_b.height);
                    for (auto& m : out.matches) {
                        const Vec2 a = (sa * Vec2(m.xa, m.ya).homogeneous()).hnormalized();
                        const Vec2 b = (sb * Vec2(m.xb, m.yb).homogeneous()).hnormalized();
                        m.xa = a.x(); m.ya = a.y(); m.xb = b.x(); m.yb = b.y();
                    }
                }
            } else {
                out = (*model)->match(pair.image_a, pair.image_b, opts.match);
                for (const auto& [cell, ms] : out.stage_matches) {
                    const double e = mean_epe(pair, ms);
                    if (std::isnan(e)) continue;
                    auto& acc = epe_acc[scale_name(cell)];
                    acc.first += e;
                    acc.second += 1;
                }
                const double e = mean_epe(pair, out.matches);
                if (!std::isnan(e)) {
                    epe_acc["refined"].first += e;
                    epe_acc["refined"].second += 1;
                }
                for (const auto& [name, ms] : out.timings_ms) timing_acc[name] += ms;
            }
            for (size_t d = 0; d < rows.size(); ++d) {
                const auto& det = opts.detectors[d];
                const MatchSet kept = det.kind == DetectorKind::none      ? out.matches
                                      : det.kind == DetectorKind::threshold ? threshold_filter(out.matches, det.conf_thr)
                                                                            : apply_detector(det, out.finest_confidence(), out.matches);
                auto& row = rows[d];
                row.pairs += 1;
                row.mean_matches += static_cast<double>(kept.size());
                if (det.kind == DetectorKind::nms) {
                    const int s = min_chebyshev_spacing(out.finest_confidence(), kept);
                    if (s >= 0) row.min_cell_spacing = row.min_cell_spacing < 0 ? s : std::min(row.min_cell_spacing, s);
                }
                double err = std::numeric_limits<double>::infinity();
                RansacOptions ro = opts.ransac;
                try {
                    if (task == Task::homography) {
                        const auto est = estimate_homography_ransac(kept, ro);
                        err = corner_error(est.h, std::get<Homography>(pair.truth), pair.image_a.width,
                                           pair.image_a.height);
                    } else {
                        const auto& cam = std::get<CameraTruth>(pair.truth);
                        const auto est = estimate_pose_ransac(kept, cam.k, cam.k, ro);
                        err = pose_error(est.pose, cam.pose());
                    }
                } catch (const EstimationFailure&) {
                } catch (const ValidationError&) {
                }
                if (!std::isfinite(err)) row.failures += 1;
                row.errors.push_back(err);
            }
        }
        for (auto& row : rows) {
            if (row.pairs > 0) row.mean_matches /= row.pairs;
            for (double t : row.thresholds) row.auc.push_back(auc(row.errors, t));
            for (const auto& [k, v] : epe_acc) row.stage_epe[k] = v.first / v.second;
            for (const auto& [k, v] : timing_acc) row.timings_ms[k] = v / std::max(1, row.pairs);
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

}  // namespace

SyntheticPair rescale_pair(const SyntheticPair& pair, int width, int height) {
    if (width < 8 || height < 8) throw ValidationError("rescaled size too small");
    const double sx = static_cast<double>(width) / pair.image_a.width;
    const double sy = static_cast<double>(height) / pair.image_a.height;
    const Mat3 s = scale_matrix(sx, sy);
    const Mat3 s_inv = s.inverse();
    SyntheticPair out;
    out.seed = pair.seed;
    out.image_a = bilinear_warp(pair.image_a, Homography::normalized(s_inv), width, height);
    out.image_b = bilinear_warp(pair.image_b, Homography::normalized(s_inv), width, height);
    if (const auto* h = std::get_if<Homography>(&pair.truth)) {
        out.truth = Homography::normalized(s * h->m * s_inv);
    } else {
        CameraTruth cam = std::get<CameraTruth>(pair.truth);
        cam.k = s * cam.k;
        cam.depth_a = resample_nearest(cam.depth_a, pair.image_a.width, pair.image_a.height, width, height);
        cam.depth_b = resample_nearest(cam.depth_b, pair.image_b.width, pair.image_b.height, width, height);
        out.truth = std::move(cam);
    }
    return out;
}

CorpusSplit split_corpus(const std::vector<std::string>& names, double holdout) {
    if (holdout < 0 || holdout >= 1) throw ValidationError("holdout must lie in [0, 1)");
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    const auto n_test = static_cast<size_t>(std::lround(holdout * static_cast<double>(sorted.size())));
    CorpusSplit out;
    out.train.assign(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(n_test));
    out.test.assign(sorted.end() - static_cast<std::ptrdiff_t>(n_test), sorted.end());
    return out;
}

double EvalRow::auc_at(double threshold) const {
    for (size_t i = 0; i < thresholds.size(); ++i)
        if (thresholds[i] == threshold) return auc[i];
    throw ValidationError("no AUC at threshold " + std::to_string(threshold));
}

int min_chebyshev_spacing(const ConfidenceMap& cmap, const MatchSet& kept) {
    std::vector<std::pair<int, int>> cells;
    const int w = cmap.cols * cmap.cell, h = cmap.rows * cmap.cell;
    for (const auto& m : kept) {
        const int idx = cell_index(Vec2(m.xa, m.ya), cmap.cell, w, h);
        if (idx >= 0) cells.emplace_back(idx / cmap.cols, idx % cmap.cols);
    }
    int best = -1;
    for (size_t i = 0; i < cells.size(); ++i)
        for (size_t j = i + 1; j < cells.size(); ++j) {
            const int d = std::max(std::abs(cells[i].first - cells[j].first), std::abs(cells[i].second - cells[j].second));
            best = best < 0 ? d : std::min(best, d);
        }
    return best;
}

EvalReport eval_homography(CascadeMatcher* model, const std::vector<SyntheticPair>& pairs, const EvalOptions& opts) {
    return evaluate(Task::homography, model, pairs, opts);
}

EvalReport eval_pose(CascadeMatcher* model, const std::vector<SyntheticPair>& pairs, const EvalOptions& opts) {
    return evaluate(Task::pose, model, pairs, opts);
}

json EvalReport::to_json() const {
    json rows_j = json::array();
    for (const auto& r : rows) {
        json errors = json::array();
        for (double e : r.errors) errors.push_back(finite_or_null(e));
        json epe = json::object();
        for (const auto& [k, v] : r.stage_epe) epe[k] = v;
        rows_j.push_back({{"label", r.label}, {"detector", r.detector}, {"resolution", r.resolution},
                          {"pairs", r.pairs}, {"failures", r.failures}, {"mean_matches", r.mean_matches},
                          {"thresholds", r.thresholds}, {"auc", r.auc}, {"errors", errors}, {"stage_epe", epe},
                          {"timings_ms", r.timings_ms}, {"min_cell_spacing", r.min_cell_spacing}});
    }
    return {{"task", task}, {"rows", rows_j}};
}

EvalReport EvalReport::from_json(const json& j) {
    try {
        EvalReport r;
        r.task = j.at("task").get<std::string>();
        for (const auto& rj : j.at("rows")) {
            EvalRow row;
            row.label = rj.at("label").get<std::string>();
            row.detector = rj.at("detector").get<std::string>();
            row.resolution = rj.at("resolution").get<int>();
            row.pairs = rj.at("pairs").get<int>();
            row.failures = rj.at("failures").get<int>();
            row.mean_matches = rj.at("mean_matches").get<double>();
            row.thresholds = rj.at("thresholds").get<std::vector<double>>();
            row.auc = rj.at("auc").get<std::vector<double>>();
            for (const auto& e : rj.at("errors")) row.errors.push_back(from_nullable(e));
            row.stage_epe = rj.at("stage_epe").get<std::map<std::string, double>>();
            row.timings_ms = rj.at("timings_ms").get<std::map<std::string, double>>();
            row.min_cell_spacing = rj.at("min_cell_spacing").get<int>();
            r.rows.push_back(std::move(row));
        }
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed evaluation report: ") + e.what());
    }
}

std::string EvalReport::table() const {
    std::ostringstream os;
    const std::string unit = task == "homography" ? "px" : "deg";
    os << std::left << std::setw(18) << "config" << std::setw(12) << "detector" << std::setw(8) << "size"
       << std::setw(10) << "matches";
    if (!rows.empty())
        for (double t : rows.front().thresholds) {
            std::ostringstream h;
            h << "AUC@" << t << unit;
            os << std::setw(12) << h.str();
        }
    os << "failures\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(18) << r.label << std::setw(12) << r.detector << std::setw(8)
           << (r.resolution > 0 ? std::to_string(r.resolution) : std::string("native")) << std::setw(10) << std::fixed
           << std::setprecision(1) << r.mean_matches;
        for (double a : r.auc) os << std::setw(12) << std::setprecision(2) << 100.0 * a;
        os << r.failures << "/" << r.pairs << "\n";
    }
    return os.str();
}

const EvalRow& EvalReport::row(const std::string& label, const std::string& detector, int resolution) const {
    for (const auto& r : rows)
        if (r.label == label && r.detector == detector && r.resolution == resolution) return r;
    throw ValidationError("report has no row " + label + "/" + detector);
}

}  // namespace cascade_match
