#include "cascade_match/grad_check.hpp"

#include "cascade_match/attention.hpp"
#include "cascade_match/error.hpp"
#include "cascade_match/losses.hpp"
#include "cascade_match/matcher.hpp"
#include "cascade_match/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cascade_match {

double GradCheckReport::worst() const {
    double w = 0;
    for (const auto& e : entries) w = std::max(w, e.rel_error);
    return w;
}

GradCheckReport grad_check(const std::string& op, const std::function<torch::Tensor()>& loss,
                           const std::vector<std::pair<std::string, torch::Tensor>>& inputs,
                           const GradCheckOptions& opts) {
    std::vector<torch::Tensor> leaves;
    for (const auto& [name, t] : inputs) {
        if (t.scalar_type() != torch::kFloat64) throw ValidationError("grad check input " + name + " is not float64");
        if (!t.requires_grad()) throw ValidationError("grad check input " + name + " does not require grad");
        leaves.push_back(t);
    }
    auto value = loss();
    auto grads = torch::autograd::grad({value}, leaves, {}, false, false, true);

    GradCheckReport report;
    report.op = op;
    report.tolerance = opts.tolerance;
    std::mt19937_64 rng(opts.seed);
    for (size_t i = 0; i < leaves.size(); ++i) {
        auto t = leaves[i];
        auto g = grads[i].defined() ? grads[i].contiguous() : torch::zeros_like(t);
        const int64_t n = t.numel();
        std::vector<int64_t> idx(n);
        std::iota(idx.begin(), idx.end(), int64_t{0});
        if (n > opts.max_entries) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_entries);
        }
        GradCheckEntry e;
        e.tensor = inputs[i].first;
        e.checked = static_cast<int64_t>(idx.size());
        double scale = 0, err = 0;
        auto flat = t.detach().view({-1});
        auto* ga = g.data_ptr<double>();
        for (int64_t j : idx) {
            double numeric;
            {
                torch::NoGradGuard guard;
                auto* p = flat.data_ptr<double>() + j;
                const double orig = *p;
                *p = orig + opts.step;
                const double fp = loss().item<double>();
                *p = orig - opts.step;
                const double fm = loss().item<double>();
                *p = orig;
                numeric = (fp - fm) / (2 * opts.step);
            }
            err = std::max(err, std::abs(ga[j] - numeric));
            scale = std::max({scale, std::abs(ga[j]), std::abs(numeric)});
        }
        e.max_abs_error = err;
        e.rel_error = scale > 0 ? err / scale : 0;
        report.entries.push_back(e);
    }
    return report;
}

std::vector<std::string> builtin_grad_checks() {
    return {"self:global", "self:linear", "self:lsa",     "self:gsa",   "self:topk",
            "self:lka",    "self:pola",   "cross:global", "cross:linear", "cross:lw",
            "cross:mt",    "candidate_logits", "focal",   "coarse",     "soft_argmax", "refine"};
}

namespace {

constexpr int kChannels = 16;
constexpr int kHeads = 4;
constexpr int kRows = 6;
constexpr int kCols = 6;
constexpr int kTokens = kRows * kCols;

torch::Tensor leaf(torch::Tensor t) { return t.to(torch::kFloat64).set_requires_grad(true); }

void add_params(torch::nn::Module& m, std::vector<std::pair<std::string, torch::Tensor>>& inputs) {
    for (const auto& p : m.named_parameters()) inputs.emplace_back(p.key(), p.value());
}

AttentionConfig small_config() {
    AttentionConfig cfg;
    cfg.heads = kHeads;
    cfg.lsa_window = 4;
    cfg.gsa_rate = 4;
    cfg.topk = 8;
    cfg.pola_query = 3;
    cfg.pola_key = 7;
    cfg.lw_window = 4;
    return cfg;
}

// Parent grid 3 x 3 with one parent unmatched; children on the 6 x 6 grid.
torch::Tensor parent_targets(int t) {
    auto top = torch::randint(0, 9, {2, 9, t}, torch::kInt64);
    top.index_put_({0, 4}, -1);
    return top;
}

CoarseContext coarse_context() {
    auto logits = torch::randn({9, 9}, torch::kFloat64) * 3;
    auto p = torch::softmax(logits, 1) * torch::softmax(logits, 0);
    return {torch::stack({p, p.t()}), 3, 3};
}

}  // namespace

GradCheckReport run_grad_check(const std::string& name, const GradCheckOptions& opts) {
    torch::manual_seed(static_cast<uint64_t>(opts.seed) + 17);
    std::vector<std::pair<std::string, torch::Tensor>> inputs;
    std::function<torch::Tensor()> fn;

    if (name.rfind("self:", 0) == 0) {
        const auto variant = parse_self_variant(name.substr(5));
        auto block = SelfAttentionBlock(kChannels, variant, small_config());
        block->to(torch::kFloat64);
        auto x = leaf(torch::randn({2, kTokens, kChannels}));
        auto w = torch::randn({2, kTokens, kChannels}, torch::kFloat64);
        auto ctx = std::make_shared<CoarseContext>(coarse_context());
        inputs.emplace_back("x", x);
        add_params(*block, inputs);
        fn = [block, x, w, ctx]() mutable { return (block->forward({x, kRows, kCols}, ctx.get(), 2) * w).sum(); };
    } else if (name.rfind("cross:", 0) == 0) {
        const auto variant = parse_cross_variant(name.substr(6));
        auto block = CrossAttentionBlock(kChannels, variant, kHeads);
        block->to(torch::kFloat64);
        auto x = leaf(torch::randn({2, kTokens, kChannels}));
        auto src = leaf(torch::randn({2, kTokens, kChannels}));
        auto w = torch::randn({2, kTokens, kChannels}, torch::kFloat64);
        auto parents = torch::randint(0, 9, {2, 9}, torch::kInt64);
        parents.index_put_({0, 4}, -1);
        auto cand = std::make_shared<CandidateSet>(
            variant == CrossVariant::mt
                ? build_candidates_mt(torch::cat({parent_targets(2), torch::full({2, 9, 1}, -1, torch::kInt64)}, 2),
                                      kRows, kCols)
                : build_candidates_lw(parents, kRows, kCols, 4));
        inputs.emplace_back("x", x);
        inputs.emplace_back("source", src);
        add_params(*block, inputs);
        fn = [block, x, src, w, cand]() mutable { return (block->forward(x, src, cand.get()) * w).sum(); };
    } else if (name == "candidate_logits") {
        auto q = leaf(torch::randn({2, kTokens, kChannels}));
        auto k = leaf(torch::randn({2, kTokens, kChannels}));
        auto cand = build_candidates_mt(parent_targets(2), kRows, kCols);
        auto w = torch::randn({2, kTokens, cand.k()}, torch::kFloat64);
        inputs = {{"queries", q}, {"keys", k}};
        fn = [q, k, cand, w]() {
            auto l = candidate_logits(q, k, cand, 0.25);
            return torch::where(cand.valid, l * w, torch::zeros_like(l)).sum();
        };
    } else if (name == "focal") {
        auto logits = leaf(torch::randn({8}) * 2);
        inputs = {{"logits", logits}};
        fn = [logits]() { return focal_loss(torch::sigmoid(logits), 2.0); };
    } else if (name == "coarse") {
        // Moderate similarities keep every probability above the log clamp.
        auto fa = leaf(torch::randn({kTokens, kChannels}) * 0.4);
        auto fb = leaf(torch::randn({kTokens, kChannels}) * 0.4);
        auto gt = torch::randint(-1, kTokens, {kTokens}, torch::kInt64);
        inputs = {{"feat_a", fa}, {"feat_b", fb}};
        fn = [fa, fb, gt]() {
            auto sim = torch::matmul(fa, fb.t()) / (kChannels * 0.1);
            return coarse_loss(dual_softmax(sim), gt, 2.0, true);
        };
    } else if (name == "soft_argmax") {
        auto logits = leaf(torch::randn({8, 25}) * 2);
        auto w = torch::randn({8, 2}, torch::kFloat64);
        inputs = {{"logits", logits}};
        fn = [logits, w]() { return (soft_argmax(logits, 5) * w).sum(); };
    } else if (name == "refine") {
        auto refiner = FineRefiner(kChannels, kHeads, 5);
        refiner->to(torch::kFloat64);
        auto fa = leaf(torch::randn({1, kChannels, 8, 8}));
        auto fb = leaf(torch::randn({1, kChannels, 8, 8}));
        auto src = torch::rand({6, 2}, torch::kFloat64) * 12 + 2.1;
        auto tgt = torch::rand({6, 2}, torch::kFloat64) * 12 + 2.3;
        auto w = torch::randn({6, 2}, torch::kFloat64);
        inputs = {{"feat_a", fa}, {"feat_b", fb}};
        add_params(*refiner, inputs);
        fn = [refiner, fa, fb, src, tgt, w]() mutable { return (refiner->forward(fa, fb, src, tgt) * w).sum(); };
    } else {
        throw ValidationError("unknown gradient check '" + name + "'");
    }
    return grad_check(name, fn, inputs, opts);
}

}  // namespace cascade_match
