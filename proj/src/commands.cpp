#include "cascade_match/commands.hpp"

#include "cascade_match/checkpoint.hpp"
#include "cascade_match/error.hpp"
#include "cascade_match/synthetic.hpp"

#include <cstdio>
#include <fstream>

namespace cascade_match {

namespace fs = std::filesystem;

std::vector<std::string> generate_corpus(const DataConfig& data, uint64_t seed, const fs::path& out) {
    PairOptions po;
    po.width = data.width;
    po.height = data.height;
    std::vector<Image> sources;
    if (!data.image_dir.empty()) {
        if (data.mode != "homography") throw ValidationError("source images are supported for homography pairs only");
        if (!fs::is_directory(data.image_dir)) throw ValidationError("image directory " + data.image_dir + " not found");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(data.image_dir)) {
            const auto ext = e.path().extension().string();
            if (e.is_regular_file() && (ext == ".png" || ext == ".PNG")) files.push_back(e.path());
        }
        if (files.empty()) throw ValidationError("image directory " + data.image_dir + " holds no PNG files");
        std::sort(files.begin(), files.end());
        for (const auto& f : files) sources.push_back(load_png(f));
    }
    fs::create_directories(out);
    std::vector<std::string> stems;
    for (int i = 0; i < data.pairs; ++i) {
        const uint64_t s = seed * 1000003ull + static_cast<uint64_t>(i);
        SyntheticPair pair;
        if (data.mode == "two_view")
            pair = make_two_view_pair(s, po);
        else if (!sources.empty())
            pair = make_homography_pair_from_image(s, sources[static_cast<size_t>(i) % sources.size()], po);
        else
            pair = make_homography_pair(s, po);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "pair_%05d", i);
        save_pair(out, stem, pair);
        stems.emplace_back(stem);
    }
    return stems;
}

std::vector<SyntheticPair> load_corpus(const DataConfig& data, const std::string& split) {
    if (data.corpus.empty()) throw ValidationError("no corpus directory given");
    if (!fs::is_directory(data.corpus)) throw ValidationError("corpus directory " + data.corpus + " not found");
    const auto names = list_pairs(data.corpus);
    if (names.empty()) throw ValidationError("corpus " + data.corpus + " is empty");
    const auto parts = split_corpus(names, data.holdout);
    const std::vector<std::string>* chosen = &names;
    if (split == "train")
        chosen = &parts.train;
    else if (split == "test")
        chosen = &parts.test;
    else if (split != "all")
        throw ValidationError("unknown split " + split);
    std::vector<SyntheticPair> out;
    for (const auto& n : *chosen) out.push_back(load_pair(data.corpus, n));
    return out;
}

TrainOutcome run_training(const RunConfig& cfg) {
    if (cfg.output.empty()) throw ValidationError("training needs an output directory");
    const fs::path out_dir = cfg.output;
    std::vector<TrainStage> stages;
    if (cfg.train.stage == "progressive")
        stages = {TrainStage::coarse_only, TrainStage::cascade_4c, TrainStage::cascade_2c};
    else
        stages = {parse_train_stage(cfg.train.stage)};
    const auto& base = cfg.train.train;
    if (stages.front() == TrainStage::pmt && base.init_checkpoint.empty())
        throw ValidationError("pmt training needs train.init_checkpoint");

    ModelConfig model_cfg = cfg.model;
    if (!base.init_checkpoint.empty()) model_cfg = read_checkpoint_info(base.init_checkpoint).model;
    if (stages.front() == TrainStage::pmt) model_cfg.ladder = true;
    model_cfg.validate();

    torch::manual_seed(cfg.seed);
    CascadeMatcher model(model_cfg);
    const auto pairs = load_corpus(cfg.data, "train");
    const auto samples = prepare_samples(pairs, model_cfg);

    fs::create_directories(out_dir);
    const fs::path log_path = cfg.train.log.empty() ? out_dir / "train_log.jsonl" : fs::path(cfg.train.log);
    std::ofstream log(log_path);
    if (!log) throw std::runtime_error("cannot write " + log_path.string());

    const auto schedule = progressive_schedule(base.steps);
    TrainOutcome outcome;
    std::string init = base.init_checkpoint;
    for (auto stage : stages) {
        TrainConfig tc = base;
        tc.stage = stage;
        tc.init_checkpoint = init;
        if (stages.size() > 1) tc.steps = schedule.at(stage);
        auto result = train(model, samples, tc, &log);
        const fs::path ck = out_dir / train_stage_name(stage);
        save_checkpoint(ck, model, train_stage_name(stage), tc.steps,
                        {{"seed", cfg.seed}, {"frozen_hash", result.frozen_hash_after}});
        outcome.stages.emplace_back(train_stage_name(stage), std::move(result));
        outcome.final_checkpoint = ck;
        init.clear();  // later stages continue from the in-memory weights
    }
    return outcome;
}

EvalReport run_evaluation(const RunConfig& cfg, const std::string& task) {
    const auto pairs_all = load_corpus(cfg.data, cfg.eval.split);
    std::vector<SyntheticPair> pairs = pairs_all;
    if (cfg.eval.max_pairs > 0 && static_cast<int>(pairs.size()) > cfg.eval.max_pairs) pairs.resize(cfg.eval.max_pairs);

    EvalOptions opts;
    opts.match = cfg.match;
    opts.resolutions = cfg.eval.resolutions;
    opts.inject_gt = cfg.eval.inject_gt;
    opts.label = cfg.eval.inject_gt ? "ground_truth" : "model";
    opts.detectors = {DetectorConfig{}};
    if (cfg.detector.kind != DetectorKind::none) opts.detectors.push_back(cfg.detector);
    opts.ransac.iterations = cfg.eval.ransac_iterations;
    opts.ransac.seed = cfg.seed;
    if (task == "homography") {
        opts.ransac.threshold_px = cfg.eval.ransac_threshold_px;
        opts.thresholds = cfg.eval.px_thresholds;
    } else if (task == "pose") {
        opts.ransac.threshold_px = cfg.eval.pose_ransac_threshold_px;
        opts.thresholds = cfg.eval.deg_thresholds;
    } else {
        throw ValidationError("unknown evaluation task " + task);
    }

    if (cfg.eval.inject_gt)
        return task == "homography" ? eval_homography(nullptr, pairs, opts) : eval_pose(nullptr, pairs, opts);
    if (cfg.checkpoint.empty()) throw ValidationError("evaluation needs --checkpoint or --inject-gt");
    auto model = load_checkpoint(cfg.checkpoint);
    model->eval();
    return task == "homography" ? eval_homography(&model, pairs, opts) : eval_pose(&model, pairs, opts);
}

}  // namespace cascade_match
