#include "cascade_match/matcher.hpp"

#include "cascade_match/error.hpp"
#include "cascade_match/losses.hpp"
#include "json_util.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

namespace cascade_match {

namespace F = torch::nn::functional;
using nlohmann::json;

// ---------------------------------------------------------------- config

int parse_scale(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s.rfind("1/", 0) == 0) {
            try {
                const int cell = std::stoi(s.substr(2));
                if (cell == 2 || cell == 4 || cell == 8 || cell == 16) return cell;
            } catch (const std::exception&) {
            }
        }
        throw ValidationError("bad scale '" + s + "' (expected 1/2, 1/4, 1/8 or 1/16)");
    }
    if (j.is_number()) {
        const double v = j.get<double>();
        for (int cell : {2, 4, 8, 16})
            if (std::abs(v - 1.0 / cell) < 1e-9) return cell;
    }
    throw ValidationError("bad scale " + j.dump());
}

std::string scale_name(int cell) { return "1/" + std::to_string(cell); }

std::vector<int> ModelConfig::cells() const {
    if (encoder.level16) return {16, 8, 4, 2};
    return {8, 4, 2};
}

namespace {

std::vector<std::string> split_pattern(const std::string& pattern) {
    std::vector<std::string> out;
    std::stringstream ss(pattern);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(std::remove_if(tok.begin(), tok.end(), ::isspace), tok.end());
        if (tok != "self" && tok != "cross") throw ValidationError("bad block pattern entry '" + tok + "'");
        out.push_back(tok);
    }
    if (out.empty()) throw ValidationError("empty block pattern");
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    for (int cell : cells()) {
        const int c = encoder.channels(cell);
        if (c <= 0 || c % 4 != 0 || c % attention.heads != 0)
            throw ValidationError("channels at " + scale_name(cell) + " must be positive multiples of 4 and of the head count");
    }
    if (coarse_blocks < 1) throw ValidationError("coarse stage needs at least one block");
    if (parse_self_variant(coarse_self) == SelfVariant::topk)
        throw ValidationError("top-k self-attention needs coarse probabilities and cannot run in the coarse stage");
    const auto cc = parse_cross_variant(coarse_cross);
    if (cc == CrossVariant::lw || cc == CrossVariant::mt)
        throw ValidationError("coarse cross-attention must be global or linear");
    parse_self_variant(attention.self_variant);
    const auto cv = parse_cross_variant(attention.cross_variant);
    if (cv != CrossVariant::lw && cv != CrossVariant::mt)
        throw ValidationError("cascade cross-attention must be lw or mt");
    if (attention.lw_window < 1 || attention.mt_parents < 1 || attention.topk < 1)
        throw ValidationError("candidate counts must be positive");
    for (size_t i = 1; i < cells().size(); ++i) {
        auto it = patterns.find(cells()[i]);
        if (it == patterns.end()) throw ValidationError("no block pattern for " + scale_name(cells()[i]));
        split_pattern(it->second);
    }
    if (!(temperature > 0)) throw ValidationError("temperature must be positive");
    if (threshold < 0 || threshold > 1) throw ValidationError("threshold must lie in [0, 1]");
    if (train_size <= 0 || train_size % encoder.coarsest() != 0)
        throw ValidationError("train_size must be a positive multiple of the coarsest cell");
    if (refine_window < 3 || refine_window % 2 == 0) throw ValidationError("refine_window must be odd and >= 3");
}

json to_json(const ModelConfig& c) {
    json patterns = json::object();
    for (const auto& [cell, p] : c.patterns) patterns[scale_name(cell)] = p;
    return {
        {"encoder",
         {{"channels", {c.encoder.c2, c.encoder.c4, c.encoder.c8}},
          {"c16", c.encoder.c16},
          {"res_blocks", c.encoder.res_blocks},
          {"level16", c.encoder.level16},
          {"attention", c.encoder.attention},
          {"ladder_width", c.encoder.ladder_width}}},
        {"attention",
         {{"self_variant", c.attention.self_variant},
          {"cross_variant", c.attention.cross_variant},
          {"heads", c.attention.heads},
          {"lsa", {{"window", c.attention.lsa_window}}},
          {"gsa", {{"rate", c.attention.gsa_rate}}},
          {"topk", {{"k", c.attention.topk}}},
          {"lka", {{"kernel", c.attention.lka_kernel}, {"dilated", c.attention.lka_dilated}, {"dilation", c.attention.lka_dilation}}},
          {"pola", {{"query", c.attention.pola_query}, {"key", c.attention.pola_key}}},
          {"lw", {{"window", c.attention.lw_window}}},
          {"mt", {{"parents", c.attention.mt_parents}}}}},
        {"coarse", {{"self_variant", c.coarse_self}, {"cross_variant", c.coarse_cross}, {"blocks", c.coarse_blocks}}},
        {"patterns", patterns},
        {"temperature", c.temperature},
        {"threshold", c.threshold},
        {"train_size", c.train_size},
        {"ladder", c.ladder},
        {"refine_window", c.refine_window},
    };
}

ModelConfig model_config_from_json(const json& j) {
    using detail::read;
    using detail::reject_unknown;
    ModelConfig c;
    reject_unknown(j, {"encoder", "attention", "coarse", "patterns", "temperature", "threshold", "train_size", "ladder",
                       "refine_window"},
                   "model");
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        reject_unknown(e, {"channels", "c16", "res_blocks", "level16", "attention", "ladder_width"}, "model.encoder");
        if (e.contains("channels")) {
            std::vector<int> ch;
            read(e, "channels", ch, "model.encoder");
            if (ch.size() != 3) throw ValidationError("model.encoder.channels: expected [c2, c4, c8]");
            c.encoder.c2 = ch[0];
            c.encoder.c4 = ch[1];
            c.encoder.c8 = ch[2];
        }
        read(e, "c16", c.encoder.c16, "model.encoder");
        read(e, "res_blocks", c.encoder.res_blocks, "model.encoder");
        read(e, "level16", c.encoder.level16, "model.encoder");
        read(e, "attention", c.encoder.attention, "model.encoder");
        read(e, "ladder_width", c.encoder.ladder_width, "model.encoder");
    }
    if (j.contains("attention")) {
        const auto& a = j["attention"];
        const std::string w = "model.attention";
        reject_unknown(a, {"self_variant", "cross_variant", "heads", "lsa", "gsa", "topk", "lka", "pola", "lw", "mt"}, w);
        read(a, "self_variant", c.attention.self_variant, w);
        read(a, "cross_variant", c.attention.cross_variant, w);
        read(a, "heads", c.attention.heads, w);
        auto sub = [&](const char* name, std::initializer_list<std::pair<const char*, int*>> fields) {
            if (!a.contains(name)) return;
            const auto& s = a[name];
            detail::require_object(s, w + "." + name);
            for (auto it = s.begin(); it != s.end(); ++it) {
                bool ok = false;
                for (const auto& f : fields) ok = ok || it.key() == f.first;
                if (!ok) throw ValidationError(w + "." + name + ": unknown key '" + it.key() + "'");
            }
            for (const auto& f : fields) read(s, f.first, *f.second, w + "." + name);
        };
        sub("lsa", {{"window", &c.attention.lsa_window}});
        sub("gsa", {{"rate", &c.attention.gsa_rate}});
        sub("topk", {{"k", &c.attention.topk}});
        sub("lka", {{"kernel", &c.attention.lka_kernel}, {"dilated", &c.attention.lka_dilated},
                    {"dilation", &c.attention.lka_dilation}});
        sub("pola", {{"query", &c.attention.pola_query}, {"key", &c.attention.pola_key}});
        sub("lw", {{"window", &c.attention.lw_window}});
        sub("mt", {{"parents", &c.attention.mt_parents}});
    }
    if (j.contains("coarse")) {
        const auto& co = j["coarse"];
        reject_unknown(co, {"self_variant", "cross_variant", "blocks"}, "model.coarse");
        read(co, "self_variant", c.coarse_self, "model.coarse");
        read(co, "cross_variant", c.coarse_cross, "model.coarse");
        read(co, "blocks", c.coarse_blocks, "model.coarse");
    }
    if (j.contains("patterns")) {
        detail::require_object(j["patterns"], "model.patterns");
        for (auto it = j["patterns"].begin(); it != j["patterns"].end(); ++it) {
            if (!it.value().is_string()) throw ValidationError("model.patterns: expected strings");
            c.patterns[parse_scale(json(it.key()))] = it.value().get<std::string>();
        }
    }
    read(j, "temperature", c.temperature, "model");
    read(j, "threshold", c.threshold, "model");
    read(j, "train_size", c.train_size, "model");
    read(j, "ladder", c.ladder, "model");
    read(j, "refine_window", c.refine_window, "model");
    c.validate();
    return c;
}

// ---------------------------------------------------------------- primitives

torch::Tensor masked_softmax(const torch::Tensor& logits) {
    auto valid = ~torch::isneginf(logits);
    auto any = valid.any(-1, true);
    auto safe = torch::where(any, logits, torch::zeros_like(logits));
    return torch::where(any, torch::softmax(safe, -1), torch::zeros_like(logits));
}

torch::Tensor dual_softmax(const torch::Tensor& sim) { return torch::softmax(sim, 1) * torch::softmax(sim, 0); }

torch::Tensor first_argmax(const torch::Tensor& x, int64_t dim) {
    auto mx = std::get<0>(x.max(dim, true));
    const int64_t n = x.size(dim);
    std::vector<int64_t> shape(x.dim(), 1);
    shape[dim < 0 ? dim + x.dim() : dim] = n;
    auto pos = torch::arange(n, torch::kInt64).view(shape).expand(x.sizes());
    auto big = torch::full_like(pos, n);
    return std::get<0>(torch::where(x == mx, pos, big).min(dim));
}

torch::Tensor cycle_filter(const torch::Tensor& top1_ab, const torch::Tensor& top1_ba) {
    auto has = top1_ab >= 0;
    auto back = top1_ba.index_select(0, top1_ab.clamp_min(0));
    return has & (back == torch::arange(top1_ab.size(0), torch::kInt64));
}

torch::Tensor spawn_children(const torch::Tensor& parents, int parent_cols) {
    auto p = parents.to(torch::kInt64);
    auto py = torch::div(p, parent_cols, "floor");
    auto px = p - py * parent_cols;
    const int64_t cols = 2 * parent_cols;
    auto base = (2 * py) * cols + 2 * px;  // [P]
    auto offs = torch::tensor({int64_t{0}, int64_t{1}, cols, cols + 1});
    return (base.unsqueeze(1) + offs.unsqueeze(0)).flatten();
}

const ConfidenceMap& MatchOutput::finest_confidence() const {
    if (confidence.empty()) throw ValidationError("no confidence map available");
    return confidence.begin()->second;  // smallest cell first
}

torch::Tensor image_tensor(const Image& img, int multiple, int height, int width) {
    const Image g = img.channels == 1 ? img : img.to_gray();
    auto t = torch::from_blob(const_cast<float*>(g.data.data()), {1, 1, g.height, g.width}, torch::kFloat32).clone();
    const int h = std::max(height, (g.height + multiple - 1) / multiple * multiple);
    const int w = std::max(width, (g.width + multiple - 1) / multiple * multiple);
    const int ph = h - g.height, pw = w - g.width;
    if (ph == 0 && pw == 0) return t;
    const bool reflect = ph < g.height && pw < g.width;
    return F::pad(t, reflect ? F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReflect)
                             : F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
}

TrainTargets make_targets(const SyntheticPair& pair, const std::vector<int>& cells, int width, int height) {
    TrainTargets out;
    const SyntheticPair rev = swapped_pair(pair);
    for (int cell : cells) {
        const int rows = height / cell, cols = width / cell;
        auto gc = torch::full({2, rows * cols}, -1, torch::kInt64);
        auto gp = torch::zeros({2, rows * cols, 2}, torch::kFloat32);
        auto gca = gc.accessor<int64_t, 2>();
        auto gpa = gp.accessor<float, 3>();
        for (int dir = 0; dir < 2; ++dir) {
            const SyntheticPair& p = dir == 0 ? pair : rev;
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) {
                    const Vec2 src(cell_center(c, cell), cell_center(r, cell));
                    if (src.x() > p.image_a.width - 0.5 || src.y() > p.image_a.height - 0.5) continue;
                    const auto t = gt_target(p, src);
                    if (!t) continue;
                    const int idx = r * cols + c;
                    gca[dir][idx] = cell_index(*t, cell, width, height);
                    gpa[dir][idx][0] = static_cast<float>(t->x());
                    gpa[dir][idx][1] = static_cast<float>(t->y());
                }
        }
        out.gt_cell[cell] = gc;
        out.gt_point[cell] = gp;
    }
    return out;
}

// ---------------------------------------------------------------- stage modules

namespace {

void build_blocks(torch::nn::Module& owner, const std::vector<std::string>& order, int channels,
                  SelfVariant sv, CrossVariant cv, const AttentionConfig& cfg, std::vector<SelfAttentionBlock>& selfs,
                  std::vector<CrossAttentionBlock>& crosses) {
    for (size_t i = 0; i < order.size(); ++i) {
        const std::string name = "block" + std::to_string(i);
        if (order[i] == "self")
            selfs.push_back(owner.register_module(name, SelfAttentionBlock(channels, sv, cfg)));
        else
            crosses.push_back(owner.register_module(name, CrossAttentionBlock(channels, cv, cfg.heads)));
    }
}

torch::Tensor map_tokens(const torch::Tensor& feat) { return feat.flatten(2).transpose(1, 2); }

/// Swaps the two images of a [2, ...] batch.
torch::Tensor other_view(const torch::Tensor& x) { return x.flip(0); }

}  // namespace

CoarseStageImpl::CoarseStageImpl(int channels, const ModelConfig& cfg) {
    for (int i = 0; i < cfg.coarse_blocks; ++i) order_.push_back(i % 2 == 0 ? "self" : "cross");
    AttentionConfig acfg = cfg.attention;
    build_blocks(*this, order_, channels, parse_self_variant(cfg.coarse_self), parse_cross_variant(cfg.coarse_cross),
                 acfg, self_, cross_);
}

torch::Tensor CoarseStageImpl::forward(const torch::Tensor& feat, int train_rows, int train_cols) {
    const int rows = static_cast<int>(feat.size(2)), cols = static_cast<int>(feat.size(3));
    auto x = map_tokens(feat);
    x = x + positional_encoding(rows, cols, static_cast<int>(feat.size(1)), train_rows, train_cols).to(x.dtype());
    size_t si = 0, ci = 0;
    for (const auto& kind : order_) {
        if (kind == "self")
            x = self_[si++]->forward(TokenGrid{x, rows, cols});
        else
            x = cross_[ci++]->forward(x, other_view(x));
    }
    return x;
}

CascadeStageImpl::CascadeStageImpl(int channels, const std::string& pattern, const AttentionConfig& cfg) {
    order_ = split_pattern(pattern);
    build_blocks(*this, order_, channels, parse_self_variant(cfg.self_variant), parse_cross_variant(cfg.cross_variant),
                 cfg, self_, cross_);
}

torch::Tensor CascadeStageImpl::forward(const torch::Tensor& feat, const CandidateSet& cand, const CoarseContext* ctx,
                                        int ratio, int train_rows, int train_cols) {
    const int rows = static_cast<int>(feat.size(2)), cols = static_cast<int>(feat.size(3));
    auto x = map_tokens(feat);
    x = x + positional_encoding(rows, cols, static_cast<int>(feat.size(1)), train_rows, train_cols).to(x.dtype());
    size_t si = 0, ci = 0;
    for (const auto& kind : order_) {
        if (kind == "self")
            x = self_[si++]->forward(TokenGrid{x, rows, cols}, ctx, ratio);
        else
            x = cross_[ci++]->forward(x, other_view(x), &cand);
    }
    return x;
}

// ---------------------------------------------------------------- pipeline

namespace {

struct Timer {
    std::vector<std::pair<std::string, double>>* sink = nullptr;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void lap(const std::string& label) {
        const auto now = std::chrono::steady_clock::now();
        if (sink) sink->emplace_back(label, std::chrono::duration<double, std::milli>(now - start).count());
        start = now;
    }
};

}  // namespace

/// Shared forward over both images: every cell of both views is processed at
/// every active stage; query selection happens afterwards.
struct CascadeMatcherImpl::Forward {
    struct State {
        int cell = 8;
        int rows = 0;
        int cols = 0;
        torch::Tensor prob;   // coarse: [Na, Nb]; cascade: [2, N, k]
        CandidateSet cand;    // cascade only
        torch::Tensor top1;   // int64 [2, N], -1 when none
        torch::Tensor conf;   // [2, N]
        torch::Tensor topt;   // int64 [2, N, t] (mt only)
    };

    FeaturePyramid pyramid;
    std::vector<State> states;
    CoarseContext ctx;
};

CascadeMatcherImpl::CascadeMatcherImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    encoder = register_module("encoder", PyramidEncoder(cfg.encoder, cfg.attention));
    if (cfg.ladder) ladder = register_module("ladder", LadderFpn(cfg.encoder));
    const auto cells = cfg.cells();
    coarse = register_module("coarse", CoarseStage(cfg.encoder.channels(cells[0]), cfg));
    for (size_t i = 1; i < cells.size(); ++i) {
        const int cell = cells[i];
        stages.emplace(cell, register_module("stage" + std::to_string(cell),
                                             CascadeStage(cfg.encoder.channels(cell), cfg.patterns.at(cell), cfg.attention)));
    }
    refiner = register_module("refine", FineRefiner(cfg.encoder.c2, cfg.attention.heads, cfg.refine_window));
}

namespace {

std::vector<int> resolve_scales(const ModelConfig& cfg, const std::vector<int>& requested) {
    const auto all = cfg.cells();
    if (requested.empty()) return all;
    if (requested.size() > all.size()) throw ValidationError("too many scales requested");
    for (size_t i = 0; i < requested.size(); ++i)
        if (requested[i] != all[i])
            throw ValidationError("scales must be a coarse-first prefix of the model's stages, e.g. 1/8,1/4,1/2");
    return requested;
}

/// Maps top-t slots of prob [2, N, k] to target cells; -1 for invalid slots.
torch::Tensor top_cells(const torch::Tensor& prob, const CandidateSet& cand, int64_t t) {
    t = std::min<int64_t>(t, prob.size(-1));
    auto slots = std::get<1>(prob.topk(t, -1));
    auto cells = cand.indices.gather(-1, slots);
    auto ok = cand.valid.gather(-1, slots);
    return torch::where(ok, cells, torch::full_like(cells, -1));
}

torch::Tensor cell_centers(const torch::Tensor& idx, int cols, int cell) {
    auto y = torch::div(idx, cols, "floor");
    auto x = idx - y * cols;
    return torch::stack({x, y}, 1).to(torch::kFloat32) * cell + (cell - 1) / 2.0f;
}

}  // namespace

CascadeMatcherImpl::Forward CascadeMatcherImpl::run(const torch::Tensor& images, const std::vector<int>& scales,
                                                    bool normalize_pe, bool frozen_coarse,
                                                    std::vector<std::pair<std::string, double>>* timings) {
    Timer timer{timings};
    Forward fw;
    auto train_dims = [&](int cell) -> std::pair<int, int> {
        if (!normalize_pe) return {0, 0};
        return {cfg_.train_size / cell, cfg_.train_size / cell};
    };
    const bool mt = parse_cross_variant(cfg_.attention.cross_variant) == CrossVariant::mt;
    const double inv_tau = 1.0 / cfg_.temperature;
    {
        std::optional<torch::NoGradGuard> guard;
        if (frozen_coarse) guard.emplace();
        fw.pyramid = encoder->forward(images);
    }
    if (ladder) {
        auto side = ladder->forward(fw.pyramid);
        for (auto& [cell, m] : side.maps) fw.pyramid.maps[cell] = m;
    }
    timer.lap("encode");

    const int cc = scales.front();
    {
        std::optional<torch::NoGradGuard> guard;
        if (frozen_coarse) guard.emplace();
        const auto& feat = fw.pyramid.at(cc);
        const auto [tr, tc] = train_dims(cc);
        auto x = coarse->forward(feat, tr, tc);
        timer.lap("coarse_attention");
        auto fm = x / std::sqrt(static_cast<double>(x.size(2)));
        auto p = dual_softmax(torch::matmul(fm[0], fm[1].t()) * inv_tau);
        Forward::State st;
        st.cell = cc;
        st.rows = static_cast<int>(feat.size(2));
        st.cols = static_cast<int>(feat.size(3));
        st.prob = p;
        torch::NoGradGuard ng;
        st.top1 = torch::stack({first_argmax(p, 1), first_argmax(p, 0)});
        st.conf = torch::stack({std::get<0>(p.max(1)), std::get<0>(p.max(0))});
        if (mt) {
            const int64_t t = std::min<int64_t>(cfg_.attention.mt_parents, p.size(1));
            st.topt = torch::stack({std::get<1>(p.topk(t, 1)), std::get<1>(p.t().topk(t, 1))});
        }
        fw.ctx = CoarseContext{torch::stack({p, p.t()}).detach(), st.rows, st.cols};
        fw.states.push_back(std::move(st));
        timer.lap("coarse_matching");
    }

    for (size_t si = 1; si < scales.size(); ++si) {
        const int cell = scales[si];
        const auto& prev = fw.states.back();
        const auto& feat = fw.pyramid.at(cell);
        const int rows = static_cast<int>(feat.size(2)), cols = static_cast<int>(feat.size(3));
        CandidateSet cand = mt ? build_candidates_mt(prev.topt, rows, cols)
                               : build_candidates_lw(prev.top1, rows, cols, cfg_.attention.lw_window);
        const auto [tr, tc] = train_dims(cell);
        auto x = stages.at(cell)->forward(feat, cand, &fw.ctx, cc / cell, tr, tc);
        const std::string tag = scale_name(cell);
        timer.lap("cascade_attention_" + tag);
        auto fm = x / std::sqrt(static_cast<double>(x.size(2)));
        auto p = masked_softmax(candidate_logits(fm, other_view(fm), cand, inv_tau));
        Forward::State st;
        st.cell = cell;
        st.rows = rows;
        st.cols = cols;
        st.prob = p;
        st.cand = cand;
        torch::NoGradGuard ng;
        auto slot = first_argmax(p, -1).unsqueeze(-1);
        auto any = cand.valid.any(-1);
        st.top1 = torch::where(any, cand.indices.gather(-1, slot).squeeze(-1), torch::full_like(any, -1, torch::kInt64));
        st.conf = torch::where(any, p.gather(-1, slot).squeeze(-1), torch::zeros_like(p.select(-1, 0)));
        if (mt) st.topt = top_cells(p, cand, cfg_.attention.mt_parents);
        fw.states.push_back(std::move(st));
        timer.lap("cascade_matching_" + tag);
    }
    return fw;
}

MatchOutput CascadeMatcherImpl::match(const Image& a, const Image& b, const MatchOptions& opts) {
    const auto scales = resolve_scales(cfg_, opts.scales);
    if (opts.dense_refine && scales.size() != 1)
        throw ValidationError("dense refinement applies to the coarse-only configuration");
    const double thr = opts.threshold < 0 ? cfg_.threshold : opts.threshold;
    if (thr > 1) throw ValidationError("threshold must lie in [0, 1]");
    const int multiple = cfg_.encoder.coarsest();
    const int h = std::max(a.height, b.height), w = std::max(a.width, b.width);
    auto images = torch::cat({image_tensor(a, multiple, h, w), image_tensor(b, multiple, h, w)}, 0);

    torch::NoGradGuard guard;
    MatchOutput out;
    out.width = a.width;
    out.height = a.height;
    Timer total{&out.timings_ms};
    auto fw = run(images, scales, opts.normalize_pe, false, &out.timings_ms);

    auto inside = [](double x, double y, const Image& img) {
        return x >= -0.5 && y >= -0.5 && x <= img.width - 0.5 && y <= img.height - 0.5;
    };
    torch::Tensor matched_prev;
    for (size_t si = 0; si < fw.states.size(); ++si) {
        const auto& st = fw.states[si];
        StageResult r;
        r.cell = st.cell;
        r.rows = st.rows;
        r.cols = st.cols;
        const int64_t n = static_cast<int64_t>(st.rows) * st.cols;
        auto ok = cycle_filter(st.top1[0], st.top1[1]) & (st.conf[0] > thr);
        if (si == 0) {
            r.query = torch::arange(n, torch::kInt64);
            r.prob = st.prob;
        } else {
            const auto& parent = fw.states[si - 1];
            r.query = std::get<0>(spawn_children(torch::nonzero(matched_prev).flatten(), parent.cols).sort());
            r.prob = st.prob[0].index_select(0, r.query);
            r.candidates = st.cand.indices[0].index_select(0, r.query);
            r.cand_valid = st.cand.valid[0].index_select(0, r.query);
        }
        r.top1 = st.top1[0].index_select(0, r.query);
        r.conf = st.conf[0].index_select(0, r.query);
        r.matched = ok.index_select(0, r.query);
        matched_prev = torch::zeros({n}, torch::kBool).index_put_({r.query.masked_select(r.matched)}, true);

        ConfidenceMap cmap(st.rows, st.cols, st.cell);
        MatchSet sm;
        auto q = r.query.masked_select(r.matched);
        auto t = r.top1.masked_select(r.matched);
        auto c = r.conf.masked_select(r.matched).to(torch::kFloat32);
        auto src = cell_centers(q, st.cols, st.cell);
        auto tgt = cell_centers(t, st.cols, st.cell);
        for (int64_t i = 0; i < q.size(0); ++i) {
            const int64_t qi = q[i].item<int64_t>();
            cmap.values[qi] = c[i].item<float>();
            cmap.valid[qi] = 1;
            Match m{src[i][0].item<double>(), src[i][1].item<double>(), tgt[i][0].item<double>(),
                    tgt[i][1].item<double>(), c[i].item<double>(), 1.0 / st.cell};
            if (inside(m.xa, m.ya, a) && inside(m.xb, m.yb, b)) sm.push_back(m);
        }
        out.confidence[st.cell] = std::move(cmap);
        out.stage_matches[st.cell] = std::move(sm);
        out.stages.push_back(std::move(r));
    }
    total.start = std::chrono::steady_clock::now();

    const auto& last = out.stages.back();
    auto q = last.query.masked_select(last.matched);
    auto t = last.top1.masked_select(last.matched);
    auto conf = last.conf.masked_select(last.matched).to(torch::kFloat32);
    auto src = cell_centers(q, last.cols, last.cell);
    auto tgt = cell_centers(t, last.cols, last.cell);
    int out_cell = last.cell;
    if (opts.dense_refine && q.size(0) > 0) {
        // Every 1/2 cell inside a matched coarse cell, target offset by the same amount.
        const int sub = last.cell / 2;
        auto r = torch::arange(sub, torch::kFloat32) * 2 - (last.cell - 2) / 2.0f;
        auto off = torch::stack({r.repeat({sub}), r.repeat_interleave(sub)}, 1);  // [sub*sub, 2]
        src = (src.unsqueeze(1) + off.unsqueeze(0)).reshape({-1, 2});
        tgt = (tgt.unsqueeze(1) + off.unsqueeze(0)).reshape({-1, 2});
        conf = conf.repeat_interleave(sub * sub);
        out_cell = 2;
        ConfidenceMap cmap(static_cast<int>(images.size(2)) / 2, static_cast<int>(images.size(3)) / 2, 2);
        for (int64_t i = 0; i < src.size(0); ++i) {
            const int idx = cell_index(Vec2(src[i][0].item<double>(), src[i][1].item<double>()), 2,
                                       static_cast<int>(images.size(3)), static_cast<int>(images.size(2)));
            if (idx < 0) continue;
            cmap.values[idx] = conf[i].item<float>();
            cmap.valid[idx] = 1;
        }
        out.confidence[2] = std::move(cmap);
    }
    if ((opts.refine || opts.dense_refine) && src.size(0) > 0) {
        const auto& f2 = fw.pyramid.at(2);
        auto res = refiner->forward(f2.slice(0, 0, 1), f2.slice(0, 1, 2), src, tgt);
        tgt = tgt + res.to(torch::kFloat32) * 2.0f;
    }
    for (int64_t i = 0; i < src.size(0); ++i) {
        Match m{src[i][0].item<double>(), src[i][1].item<double>(), tgt[i][0].item<double>(),
                tgt[i][1].item<double>(), conf[i].item<double>(), 1.0 / out_cell};
        if (inside(m.xa, m.ya, a) && inside(m.xb, m.yb, b)) out.matches.push_back(m);
    }
    total.lap("refinement");
    return out;
}

LossTerms CascadeMatcherImpl::training_loss(const torch::Tensor& images, const TrainTargets& targets,
                                            const TrainMode& mode) {
    const auto scales = resolve_scales(cfg_, mode.scales);
    auto fw = run(images, scales, false, mode.frozen_coarse, nullptr);
    LossTerms out;
    out.total = torch::zeros({}, images.options());
    auto weight = [&](const std::string& name) {
        auto it = mode.weights.find(name);
        return it == mode.weights.end() ? 1.0 : it->second;
    };
    auto add = [&](const std::string& name, const torch::Tensor& p_gt) {
        auto l = mode.focal ? focal_loss(p_gt, mode.gamma) : cross_entropy_loss(p_gt);
        out.total = out.total + weight(name) * l;
        out.parts.emplace_back(name, l);
        out.counts[name] = p_gt.size(0);
    };
    const int dirs = mode.both_directions ? 2 : 1;

    if (!mode.frozen_coarse) {
        const auto& st = fw.states.front();
        const auto& gt = targets.gt_cell.at(st.cell);
        std::vector<torch::Tensor> ps;
        for (int d = 0; d < dirs; ++d) {
            auto prob = d == 0 ? st.prob : st.prob.t();
            auto rows = torch::nonzero(gt[d] >= 0).flatten();
            ps.push_back(prob.index({rows, gt[d].index_select(0, rows)}));
        }
        add("coarse", torch::cat(ps));
    }
    for (size_t si = 1; si < fw.states.size(); ++si) {
        const auto& st = fw.states[si];
        const auto& gt = targets.gt_cell.at(st.cell);
        std::vector<torch::Tensor> ps;
        for (int d = 0; d < dirs; ++d) {
            auto sup = build_supervision(st.cand.indices[d], st.cand.valid[d], gt[d]);
            ps.push_back(st.prob[d].index({sup.query, sup.slot}));
        }
        add("stage" + std::to_string(st.cell), torch::cat(ps));
    }

    const auto& fin = fw.states.back();
    const auto& gt_cell = targets.gt_cell.at(fin.cell)[0];
    const auto& gt_pt = targets.gt_point.at(fin.cell)[0];
    auto q = torch::nonzero((gt_cell >= 0) & (fin.top1[0] >= 0)).flatten();
    auto src = cell_centers(q, fin.cols, fin.cell);
    auto tgt = cell_centers(fin.top1[0].index_select(0, q), fin.cols, fin.cell);
    auto res = (gt_pt.index_select(0, q) - tgt) / 2.0f;
    const double reach = cfg_.refine_window / 2;
    auto keep = torch::nonzero(std::get<0>(res.abs().max(1)) <= reach).flatten();
    if (keep.size(0) > mode.refine_samples) {
        std::vector<int64_t> order(keep.size(0));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mode.seed);
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(mode.refine_samples);
        std::sort(order.begin(), order.end());
        keep = keep.index_select(0, torch::tensor(order, torch::kInt64));
    }
    const auto& f2 = fw.pyramid.at(2);
    auto pred = refiner->forward(f2.slice(0, 0, 1), f2.slice(0, 1, 2), src.index_select(0, keep).to(f2.dtype()),
                                 tgt.index_select(0, keep).to(f2.dtype()));
    auto rl = refinement_loss(pred, res.index_select(0, keep).to(pred.dtype()));
    out.total = out.total + weight("refine") * rl;
    out.parts.emplace_back("refine", rl);
    out.counts["refine"] = keep.size(0);
    return out;
}

}  // namespace cascade_match
