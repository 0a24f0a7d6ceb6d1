// cascade_match command-line interface.

#include "cascade_match/bench.hpp"
#include "cascade_match/checkpoint.hpp"
#include "cascade_match/commands.hpp"
#include "cascade_match/config.hpp"
#include "cascade_match/error.hpp"
#include "cascade_match/grad_check.hpp"
#include "cascade_match/report.hpp"
#include "cascade_match/synthetic.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

using namespace cascade_match;
namespace fs = std::filesystem;

namespace {

constexpr int kValidation = 2;
constexpr int kRuntime = 3;

std::vector<int> parse_scales(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_scale(nlohmann::json(item)));
    if (out.empty()) throw ValidationError("--scales needs at least one scale");
    return out;
}

std::vector<int> parse_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("expected a comma-separated integer list, got '" + s + "'");
        }
    }
    return out;
}

// Flags shared by several subcommands; unset values leave the config alone.
struct Overrides {
    std::string config;
    std::optional<uint64_t> seed;
    std::optional<std::string> corpus, output, checkpoint, scales, detector, stage, init_checkpoint, resolutions, split;
    std::optional<int> nms_kernel, grid_cell, steps, pairs, max_pairs, width, height;
    std::optional<double> conf_thr, threshold, lr;
    std::optional<std::string> mode, image_dir;
    bool inject_gt = false;

    RunConfig resolve() const {
        RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
        if (seed) c.seed = *seed;
        if (corpus) c.data.corpus = *corpus;
        if (output) c.output = *output;
        if (checkpoint) c.checkpoint = *checkpoint;
        if (scales) c.match.scales = parse_scales(*scales);
        if (detector) c.detector.kind = parse_detector(*detector);
        if (nms_kernel) c.detector.nms_kernel = *nms_kernel;
        if (grid_cell) c.detector.grid_cell = *grid_cell;
        if (conf_thr) c.detector.conf_thr = *conf_thr;
        if (threshold) c.match.threshold = *threshold;
        if (stage) c.train.stage = *stage;
        if (steps) c.train.train.steps = *steps;
        if (lr) c.train.train.lr = *lr;
        if (init_checkpoint) c.train.train.init_checkpoint = *init_checkpoint;
        if (pairs) c.data.pairs = *pairs;
        if (mode) c.data.mode = *mode;
        if (image_dir) c.data.image_dir = *image_dir;
        if (width) c.data.width = *width;
        if (height) c.data.height = *height;
        if (max_pairs) c.eval.max_pairs = *max_pairs;
        if (resolutions) c.eval.resolutions = parse_ints(*resolutions);
        if (split) c.eval.split = *split;
        if (inject_gt) c.eval.inject_gt = true;
        c.train.train.seed = c.seed;
        c.validate();
        return c;
    }
};

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "run configuration JSON");
    sub->add_option("--seed", o.seed, "random seed");
}

void add_detector(CLI::App* sub, Overrides& o) {
    sub->add_option("--detector", o.detector, "none, nms, grid or threshold");
    sub->add_option("--nms-kernel", o.nms_kernel, "odd NMS kernel size");
    sub->add_option("--grid-cell", o.grid_cell, "grid detector tile size");
    sub->add_option("--conf-thr", o.conf_thr, "threshold detector cut-off");
}

void add_match(CLI::App* sub, Overrides& o) {
    sub->add_option("--scales", o.scales, "active scales, e.g. 1/8,1/4,1/2");
    sub->add_option("--threshold", o.threshold, "match confidence threshold");
}

int run_eval(const Overrides& o, const std::string& task, const std::string& out, const std::string& plot) {
    const auto cfg = o.resolve();
    const auto report = run_evaluation(cfg, task);
    std::cout << report.table();
    if (!out.empty()) write_json(out, report.to_json());
    if (!plot.empty()) plot_error_curves(plot, report, task == "homography" ? 10.0 : 20.0);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded transformer feature matching"};
    app.require_subcommand(1);
    Overrides o;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic pair corpus");
    add_common(gen, o);
    gen->add_option("--out,--corpus", o.corpus, "output directory");
    gen->add_option("--pairs", o.pairs, "number of pairs");
    gen->add_option("--mode", o.mode, "homography or two_view");
    gen->add_option("--image-dir", o.image_dir, "PNG source images instead of procedural textures");
    gen->add_option("--width", o.width);
    gen->add_option("--height", o.height);

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, o);
    train_cmd->add_option("--corpus", o.corpus, "training corpus directory");
    train_cmd->add_option("--output", o.output, "checkpoint output directory");
    train_cmd->add_option("--stage", o.stage, "progressive, coarse_only, cascade_4c, cascade_2c or pmt");
    train_cmd->add_option("--steps", o.steps, "optimizer steps (total for progressive)");
    train_cmd->add_option("--lr", o.lr, "peak learning rate");
    train_cmd->add_option("--init-checkpoint", o.init_checkpoint, "checkpoint to start from");

    auto* match_cmd = app.add_subcommand("match", "match one image pair");
    add_common(match_cmd, o);
    add_match(match_cmd, o);
    add_detector(match_cmd, o);
    match_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    std::string image_a, image_b, matches_out, overlay, pair_dir, pair_stem;
    match_cmd->add_option("--image-a", image_a, "first image (PNG)");
    match_cmd->add_option("--image-b", image_b, "second image (PNG)");
    match_cmd->add_option("--pair-dir", pair_dir, "corpus directory holding --pair");
    match_cmd->add_option("--pair", pair_stem, "pair stem inside --pair-dir");
    match_cmd->add_option("--out", matches_out, "matches as JSON lines (default stdout)");
    match_cmd->add_option("--overlay", overlay, "PNG with drawn matches (needs --pair)");

    std::string report_out, plot_out;
    auto* eh = app.add_subcommand("eval-homography", "corner-error AUC on a homography corpus");
    auto* ep = app.add_subcommand("eval-pose", "pose-error AUC on a two-view corpus");
    for (auto* sub : {eh, ep}) {
        add_common(sub, o);
        add_match(sub, o);
        add_detector(sub, o);
        sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
        sub->add_option("--corpus", o.corpus, "corpus directory");
        sub->add_option("--split", o.split, "test or all");
        sub->add_option("--max-pairs", o.max_pairs, "evaluate at most this many pairs");
        sub->add_option("--resolutions", o.resolutions, "comma-separated square sizes");
        sub->add_flag("--inject-gt", o.inject_gt, "score exact ground-truth matches instead of a model");
        sub->add_option("--out", report_out, "report JSON");
        sub->add_option("--plot", plot_out, "cumulative error curve PNG");
    }

    auto* bench_cmd = app.add_subcommand("bench", "per-stage timing");
    add_common(bench_cmd, o);
    add_match(bench_cmd, o);
    add_detector(bench_cmd, o);
    bench_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    int size = 256, runs = 5;
    bench_cmd->add_option("--size", size, "square image size");
    bench_cmd->add_option("--runs", runs, "timed runs (at least 5)");
    bench_cmd->add_option("--out", report_out, "timing JSON");

    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient checks");
    add_common(gc, o);
    std::string op = "all";
    gc->add_option("--op", op, "check name or all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kValidation;
    }

    try {
        if (gen->parsed()) {
            auto cfg = o.resolve();
            if (cfg.data.corpus.empty()) throw ValidationError("gen-data needs --out");
            const auto stems = generate_corpus(cfg.data, cfg.seed, cfg.data.corpus);
            std::cout << "wrote " << stems.size() << " pairs to " << cfg.data.corpus << "\n";
        } else if (train_cmd->parsed()) {
            const auto cfg = o.resolve();
            const auto outcome = run_training(cfg);
            for (const auto& [name, r] : outcome.stages) {
                const double last = r.log.empty() ? 0.0 : r.log.back().total;
                std::cout << name << ": " << r.log.size() << " steps, final loss " << last << ", trainable "
                          << r.trainable_params << ", frozen " << r.frozen_params << "\n";
            }
            std::cout << "checkpoint " << outcome.final_checkpoint.string() << "\n";
        } else if (match_cmd->parsed()) {
            const auto cfg = o.resolve();
            std::optional<SyntheticPair> pair;
            Image a, b;
            if (!pair_stem.empty()) {
                if (pair_dir.empty()) throw ValidationError("--pair needs --pair-dir");
                pair = load_pair(pair_dir, pair_stem);
                a = pair->image_a;
                b = pair->image_b;
            } else {
                if (image_a.empty() || image_b.empty()) throw ValidationError("match needs --image-a/--image-b or --pair");
                a = load_png(image_a);
                b = load_png(image_b);
            }
            auto model = load_checkpoint(cfg.checkpoint);
            model->eval();
            const auto out = model->match(a, b, cfg.match);
            MatchSet kept = cfg.detector.kind == DetectorKind::threshold ? threshold_filter(out.matches, cfg.detector.conf_thr)
                            : cfg.detector.kind == DetectorKind::none    ? out.matches
                                                                         : apply_detector(cfg.detector, out.finest_confidence(), out.matches);
            if (matches_out.empty()) {
                write_matches_jsonl(std::cout, kept);
            } else {
                std::ofstream os(matches_out);
                if (!os) throw std::runtime_error("cannot write " + matches_out);
                write_matches_jsonl(os, kept);
                std::cout << kept.size() << " matches written to " << matches_out << "\n";
            }
            if (!overlay.empty()) {
                if (!pair) throw ValidationError("--overlay needs --pair (ground truth colours the lines)");
                draw_matches(overlay, *pair, kept);
            }
        } else if (eh->parsed()) {
            return run_eval(o, "homography", report_out, plot_out);
        } else if (ep->parsed()) {
            return run_eval(o, "pose", report_out, plot_out);
        } else if (bench_cmd->parsed()) {
            const auto cfg = o.resolve();
            auto model = load_checkpoint(cfg.checkpoint);
            const auto report = bench(model, size, cfg.match, cfg.detector, runs, 1, cfg.seed);
            std::cout << report.table();
            if (!report_out.empty()) write_json(report_out, report.to_json());
        } else if (gc->parsed()) {
            const auto cfg = o.resolve();
            const auto names = op == "all" ? builtin_grad_checks() : std::vector<std::string>{op};
            bool ok = true;
            for (const auto& n : names) {
                GradCheckOptions go;
                go.seed = cfg.seed;
                const auto r = run_grad_check(n, go);
                std::cout << std::left << std::setw(18) << n << " max rel err " << std::scientific << std::setprecision(2)
                          << r.worst() << (r.pass() ? "  ok" : "  FAIL") << "\n";
                for (const auto& e : r.entries)
                    if (e.rel_error > r.tolerance) std::cout << "    " << e.tensor << " " << e.rel_error << "\n";
                ok = ok && r.pass();
            }
            return ok ? 0 : kRuntime;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kRuntime;
    }
    return 0;
}
