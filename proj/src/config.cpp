#include "cascade_match/config.hpp"

#include "json_util.hpp"

#include <fstream>

namespace cascade_match {

using nlohmann::json;
using detail::read;
using detail::reject_unknown;

void RunConfig::validate() const {
    model.validate();
    if (data.pairs < 1) throw ValidationError("data.pairs must be positive");
    if (data.mode != "homography" && data.mode != "two_view") throw ValidationError("data.mode must be homography or two_view");
    if (data.width < 16 || data.height < 16) throw ValidationError("data.width/height must be at least 16");
    if (data.holdout < 0 || data.holdout >= 1) throw ValidationError("data.holdout must lie in [0, 1)");
    if (train.stage != "progressive") parse_train_stage(train.stage);
    if (train.train.steps < 0) throw ValidationError("train.steps must be non-negative");
    if (train.train.lr <= 0) throw ValidationError("train.lr must be positive");
    if (train.train.refine_samples < 0) throw ValidationError("train.refine_samples must be non-negative");
    if (eval.ransac_threshold_px <= 0 || eval.pose_ransac_threshold_px <= 0)
        throw ValidationError("eval RANSAC thresholds must be positive");
    if (eval.ransac_iterations < 1) throw ValidationError("eval.ransac_iterations must be positive");
    for (double t : eval.px_thresholds)
        if (t <= 0) throw ValidationError("eval.px_thresholds must be positive");
    for (double t : eval.deg_thresholds)
        if (t <= 0) throw ValidationError("eval.deg_thresholds must be positive");
    for (int r : eval.resolutions)
        if (r < 16) throw ValidationError("eval.resolutions entries must be at least 16");
    if (eval.split != "test" && eval.split != "all") throw ValidationError("eval.split must be test or all");
    if (detector.kind == DetectorKind::nms && (detector.nms_kernel < 3 || detector.nms_kernel % 2 == 0))
        throw ValidationError("detector.nms_kernel must be odd and at least 3");
    if (detector.kind == DetectorKind::grid && detector.grid_cell < 2)
        throw ValidationError("detector.grid_cell must be at least 2");
    if (detector.conf_thr < 0 || detector.conf_thr > 1) throw ValidationError("detector.conf_thr must lie in [0, 1]");
    if (match.threshold > 1) throw ValidationError("match.threshold must lie in [0, 1]");
}

json to_json(const RunConfig& c) {
    json scales = json::array();
    for (int s : c.match.scales) scales.push_back(scale_name(s));
    json weights = json::object();
    for (const auto& [k, v] : c.train.train.weights) weights[k] = v;
    return {
        {"seed", c.seed},
        {"data",
         {{"corpus", c.data.corpus}, {"pairs", c.data.pairs}, {"mode", c.data.mode}, {"image_dir", c.data.image_dir},
          {"width", c.data.width}, {"height", c.data.height}, {"holdout", c.data.holdout}}},
        {"model", to_json(c.model)},
        {"train",
         {{"stage", c.train.stage}, {"steps", c.train.train.steps}, {"lr", c.train.train.lr},
          {"weight_decay", c.train.train.weight_decay}, {"min_lr_ratio", c.train.train.min_lr_ratio},
          {"warmup", c.train.train.warmup}, {"grad_clip", c.train.train.grad_clip},
          {"loss", c.train.train.focal ? "focal" : "cross_entropy"}, {"weights", weights},
          {"refine_samples", c.train.train.refine_samples}, {"init_checkpoint", c.train.train.init_checkpoint},
          {"log", c.train.log}}},
        {"eval",
         {{"ransac_threshold_px", c.eval.ransac_threshold_px},
          {"pose_ransac_threshold_px", c.eval.pose_ransac_threshold_px},
          {"ransac_iterations", c.eval.ransac_iterations}, {"px_thresholds", c.eval.px_thresholds},
          {"deg_thresholds", c.eval.deg_thresholds}, {"resolutions", c.eval.resolutions},
          {"max_pairs", c.eval.max_pairs}, {"inject_gt", c.eval.inject_gt}, {"split", c.eval.split}}},
        {"detector",
         {{"kind", detector_name(c.detector.kind)}, {"nms_kernel", c.detector.nms_kernel},
          {"grid_cell", c.detector.grid_cell}, {"conf_thr", c.detector.conf_thr}}},
        {"match",
         {{"scales", scales}, {"threshold", c.match.threshold}, {"refine", c.match.refine},
          {"dense_refine", c.match.dense_refine}}},
        {"checkpoint", c.checkpoint},
        {"output", c.output},
    };
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    reject_unknown(j, {"seed", "data", "model", "train", "eval", "detector", "match", "checkpoint", "output"}, "config");
    read(j, "seed", c.seed, "config");
    read(j, "checkpoint", c.checkpoint, "config");
    read(j, "output", c.output, "config");
    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown(d, {"corpus", "pairs", "mode", "image_dir", "width", "height", "holdout"}, "data");
        read(d, "corpus", c.data.corpus, "data");
        read(d, "pairs", c.data.pairs, "data");
        read(d, "mode", c.data.mode, "data");
        read(d, "image_dir", c.data.image_dir, "data");
        read(d, "width", c.data.width, "data");
        read(d, "height", c.data.height, "data");
        read(d, "holdout", c.data.holdout, "data");
    }
    if (j.contains("model")) c.model = model_config_from_json(j["model"]);
    if (j.contains("train")) {
        const auto& t = j["train"];
        reject_unknown(t, {"stage", "steps", "lr", "weight_decay", "min_lr_ratio", "warmup", "grad_clip", "loss", "weights",
                           "refine_samples", "init_checkpoint", "log"},
                       "train");
        auto& tc = c.train.train;
        read(t, "stage", c.train.stage, "train");
        read(t, "steps", tc.steps, "train");
        read(t, "lr", tc.lr, "train");
        read(t, "weight_decay", tc.weight_decay, "train");
        read(t, "min_lr_ratio", tc.min_lr_ratio, "train");
        read(t, "warmup", tc.warmup, "train");
        read(t, "grad_clip", tc.grad_clip, "train");
        std::string loss = "focal";
        read(t, "loss", loss, "train");
        if (loss != "focal" && loss != "cross_entropy") throw ValidationError("train.loss must be focal or cross_entropy");
        tc.focal = loss == "focal";
        if (t.contains("weights")) {
            reject_unknown(t["weights"], {"coarse", "stage4", "stage2", "stage8", "refine"}, "train.weights");
            read(t, "weights", tc.weights, "train");
        }
        read(t, "refine_samples", tc.refine_samples, "train");
        read(t, "init_checkpoint", tc.init_checkpoint, "train");
        read(t, "log", c.train.log, "train");
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        reject_unknown(e, {"ransac_threshold_px", "pose_ransac_threshold_px", "ransac_iterations", "px_thresholds",
                           "deg_thresholds", "resolutions", "max_pairs", "inject_gt", "split"},
                       "eval");
        read(e, "ransac_threshold_px", c.eval.ransac_threshold_px, "eval");
        read(e, "pose_ransac_threshold_px", c.eval.pose_ransac_threshold_px, "eval");
        read(e, "ransac_iterations", c.eval.ransac_iterations, "eval");
        read(e, "px_thresholds", c.eval.px_thresholds, "eval");
        read(e, "deg_thresholds", c.eval.deg_thresholds, "eval");
        read(e, "resolutions", c.eval.resolutions, "eval");
        read(e, "max_pairs", c.eval.max_pairs, "eval");
        read(e, "inject_gt", c.eval.inject_gt, "eval");
        read(e, "split", c.eval.split, "eval");
    }
    if (j.contains("detector")) {
        const auto& d = j["detector"];
        reject_unknown(d, {"kind", "nms_kernel", "grid_cell", "conf_thr"}, "detector");
        std::string kind = detector_name(c.detector.kind);
        read(d, "kind", kind, "detector");
        c.detector.kind = parse_detector(kind);
        read(d, "nms_kernel", c.detector.nms_kernel, "detector");
        read(d, "grid_cell", c.detector.grid_cell, "detector");
        read(d, "conf_thr", c.detector.conf_thr, "detector");
    }
    if (j.contains("match")) {
        const auto& m = j["match"];
        reject_unknown(m, {"scales", "threshold", "refine", "dense_refine"}, "match");
        if (m.contains("scales")) {
            if (!m["scales"].is_array()) throw ValidationError("match.scales: expected an array");
            c.match.scales.clear();
            for (const auto& s : m["scales"]) c.match.scales.push_back(parse_scale(s));
        }
        read(m, "threshold", c.match.threshold, "match");
        read(m, "refine", c.match.refine, "match");
        read(m, "dense_refine", c.match.dense_refine, "match");
    }
    c.train.train.seed = c.seed;
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace cascade_match
