#include "cascade_match/attention.hpp"
#include "cascade_match/error.hpp"
#include "cascade_match/grad_check.hpp"
#include "cascade_match/losses.hpp"
#include "cascade_match/matcher.hpp"
#include "cascade_match/refinement.hpp"

#include "testing.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace cascade_match;

namespace {

void copy_parameters(torch::nn::Module& dst, torch::nn::Module& src) {
    torch::NoGradGuard g;
    auto from = src.named_parameters();
    for (auto& p : dst.named_parameters())
        if (from.contains(p.key())) p.value().copy_(from[p.key()]);
}

double max_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

AttentionConfig small_attention() {
    AttentionConfig cfg;
    cfg.heads = 2;
    cfg.lsa_window = 4;
    cfg.gsa_rate = 1;
    return cfg;
}

// Explicit per-(b, n, h) loop: gather, mask, softmax, weighted sum.
torch::Tensor reference_candidate_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                            const CandidateSet& cand, double scale) {
    auto out = torch::zeros_like(q);
    const auto B = q.size(0), N = q.size(1), H = q.size(2), K = cand.k();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t h = 0; h < H; ++h) {
                std::vector<double> logit;
                std::vector<int64_t> idx;
                for (int64_t j = 0; j < K; ++j) {
                    if (!cand.valid[b][n][j].item<bool>()) continue;
                    const auto m = cand.indices[b][n][j].item<int64_t>();
                    idx.push_back(m);
                    logit.push_back((q[b][n][h] * k[b][m][h]).sum().item<double>() * scale);
                }
                if (idx.empty()) continue;
                const double mx = *std::max_element(logit.begin(), logit.end());
                double z = 0;
                for (double& l : logit) z += (l = std::exp(l - mx));
                auto acc = torch::zeros_like(q[b][n][h]);
                for (size_t j = 0; j < idx.size(); ++j) acc += v[b][idx[j]][h] * (logit[j] / z);
                out[b][n][h] = acc;
            }
    return out;
}

CandidateSet random_candidates(std::mt19937_64& rng, int64_t B, int64_t N, int64_t M, int64_t K) {
    auto idx = torch::zeros({B, N, K}, torch::kInt64);
    auto ok = torch::zeros({B, N, K}, torch::kBool);
    std::uniform_int_distribution<int64_t> cell(0, M - 1);
    std::bernoulli_distribution keep(0.7);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n) {
            std::set<int64_t> used;
            for (int64_t j = 0; j < K; ++j) {
                const auto c = cell(rng);
                if (used.count(c) || !keep(rng)) continue;
                used.insert(c);
                idx[b][n][j] = c;
                ok[b][n][j] = true;
            }
        }
    return {idx, ok};
}

}  // namespace

TEST_CASE("candidate attention matches an explicit loop") {
    torch::manual_seed(0);
    std::mt19937_64 rng(1);
    auto q = torch::randn({2, 7, 2, 4}, torch::kFloat64);
    auto k = torch::randn({2, 9, 2, 4}, torch::kFloat64);
    auto v = torch::randn({2, 9, 2, 4}, torch::kFloat64);
    const auto cand = random_candidates(rng, 2, 7, 9, 5);
    const auto got = candidate_attention(q, k, v, cand, 0.5);
    CHECK(max_diff(got, reference_candidate_attention(q, k, v, cand, 0.5)) < 1e-12);
}

TEST_CASE("masked candidate slots have no influence") {
    torch::manual_seed(3);
    std::mt19937_64 rng(2);
    auto q = torch::randn({1, 12, 2, 4});
    auto k = torch::randn({1, 16, 2, 4});
    auto v = torch::randn({1, 16, 2, 4});
    const auto cand = random_candidates(rng, 1, 12, 16, 6);
    const auto base = candidate_attention(q, k, v, cand, 0.5);
    CandidateSet moved{cand.indices.clone(), cand.valid};
    auto junk = torch::randint(0, 16, moved.indices.sizes(), torch::kInt64);
    moved.indices = torch::where(cand.valid, cand.indices, junk);
    CHECK(torch::equal(candidate_attention(q, k, v, moved, 0.5), base));
    const auto w = candidate_attention_weights(q, k, cand, 0.5);
    CHECK(torch::equal(w.masked_select(~cand.valid.unsqueeze(2).expand_as(w)),
                       torch::zeros({(~cand.valid).sum().item<int64_t>() * 2})));
}

TEST_CASE("windowed self-attention equals global attention when one window covers the grid") {
    torch::manual_seed(5);
    auto cfg = small_attention();
    SelfAttentionBlock glob(16, SelfVariant::global, cfg), lsa(16, SelfVariant::lsa, cfg);
    copy_parameters(*lsa, *glob);
    for (auto [rows, cols] : {std::pair{4, 4}, std::pair{3, 4}}) {
        TokenGrid g{torch::randn({2, rows * cols, 16}), rows, cols};
        CHECK(max_diff(lsa->message(g), glob->message(g)) < 1e-5);
        CHECK(max_diff(lsa->forward(g), glob->forward(g)) < 1e-5);
    }
}

TEST_CASE("pooled self-attention at rate 1 equals global attention") {
    torch::manual_seed(6);
    auto cfg = small_attention();
    SelfAttentionBlock glob(16, SelfVariant::global, cfg), gsa(16, SelfVariant::gsa, cfg);
    copy_parameters(*gsa, *glob);
    TokenGrid g{torch::randn({2, 30, 16}), 5, 6};
    CHECK(max_diff(gsa->message(g), glob->message(g)) < 1e-5);
}

TEST_CASE("candidate cross-attention over every target cell equals full cross-attention") {
    torch::manual_seed(7);
    CrossAttentionBlock full(16, CrossVariant::global, 2), lw(16, CrossVariant::lw, 2), mt(16, CrossVariant::mt, 2);
    copy_parameters(*lw, *full);
    copy_parameters(*mt, *full);
    auto x = torch::randn({2, 20, 16}), src = torch::randn({2, 24, 16});
    const auto cand = full_candidates(2, 20, 24);
    const auto ref = full->forward(x, src);
    CHECK(max_diff(lw->forward(x, src, &cand), ref) < 1e-5);
    CHECK(max_diff(mt->forward(x, src, &cand), ref) < 1e-5);
}

TEST_CASE("queries without candidates pass through cross-attention unchanged") {
    torch::manual_seed(8);
    CrossAttentionBlock lw(16, CrossVariant::lw, 2);
    auto x = torch::randn({1, 6, 16}), src = torch::randn({1, 6, 16});
    CandidateSet none{torch::zeros({1, 6, 3}, torch::kInt64), torch::zeros({1, 6, 3}, torch::kBool)};
    CHECK(torch::equal(lw->forward(x, src, &none), x));
}

TEST_CASE("LW windows match the brute-force window and contain the true children") {
    std::mt19937_64 rng(11);
    const int prow = 4, pcol = 5, rows = 8, cols = 10;
    for (int window : {2, 4, 10}) {
        auto top = torch::randint(0, prow * pcol, {1, prow * pcol}, torch::kInt64);
        top[0][3] = -1;
        const auto cand = build_candidates_lw(top, rows, cols, window);
        CHECK(cand.k() == window * window);
        for (int y = 0; y < rows; ++y)
            for (int x = 0; x < cols; ++x) {
                const auto t = top[0][(y / 2) * pcol + x / 2].item<int64_t>();
                std::set<int64_t> expect, got;
                if (t >= 0) {
                    const int cy = 2 * static_cast<int>(t / pcol), cx = 2 * static_cast<int>(t % pcol);
                    for (int yy = cy - window / 2; yy <= cy + window / 2 - 1 + (window % 2); ++yy)
                        for (int xx = cx - window / 2; xx <= cx + window / 2 - 1 + (window % 2); ++xx)
                            if (yy >= 0 && yy < rows && xx >= 0 && xx < cols) expect.insert(yy * cols + xx);
                }
                const int q = y * cols + x;
                for (int j = 0; j < cand.k(); ++j)
                    if (cand.valid[0][q][j].item<bool>()) got.insert(cand.indices[0][q][j].item<int64_t>());
                CHECK(got == expect);
                if (t >= 0 && window >= 4) {
                    const int cy = 2 * static_cast<int>(t / pcol), cx = 2 * static_cast<int>(t % pcol);
                    for (int c = 0; c < 4; ++c) CHECK(got.count((cy + c / 2) * cols + cx + c % 2) == 1);
                }
            }
    }
    (void)rng;
}

TEST_CASE("MT candidates are the children of every listed parent target") {
    auto top = torch::tensor({{{0, 3}, {5, -1}, {-1, -1}, {2, 1}, {4, 0}, {1, 2}}}, torch::kInt64);  // 2 x 3 parents
    const auto cand = build_candidates_mt(top, 4, 6);
    CHECK(cand.k() == 8);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) {
            const int q = y * 6 + x;
            std::multiset<int64_t> expect, got;
            for (int p = 0; p < 2; ++p) {
                const auto t = top[0][(y / 2) * 3 + x / 2][p].item<int64_t>();
                if (t < 0) continue;
                for (int c = 0; c < 4; ++c) expect.insert((2 * (t / 3) + c / 2) * 6 + 2 * (t % 3) + c % 2);
            }
            for (int j = 0; j < 8; ++j)
                if (cand.valid[0][q][j].item<bool>()) got.insert(cand.indices[0][q][j].item<int64_t>());
            CHECK(got == expect);
        }
}

TEST_CASE("cycle filter equals brute-force mutual nearest neighbours") {
    torch::manual_seed(12);
    for (int trial = 0; trial < 20; ++trial) {
        // few distinct levels force ties
        auto p = torch::randint(0, 4, {9, 11}).to(torch::kFloat32);
        const auto ab = first_argmax(p, 1), ba = first_argmax(p, 0);
        const auto keep = cycle_filter(ab, ba);
        for (int i = 0; i < 9; ++i) {
            int j = 0;
            for (int c = 1; c < 11; ++c)
                if (p[i][c].item<float>() > p[i][j].item<float>()) j = c;
            int back = 0;
            for (int r = 1; r < 9; ++r)
                if (p[r][j].item<float>() > p[back][j].item<float>()) back = r;
            CHECK(keep[i].item<bool>() == (back == i));
        }
    }
}

TEST_CASE("children of parent cells") {
    const auto kids = spawn_children(torch::tensor({0, 4}, torch::kInt64), 3);  // parent grid 2 x 3
    const std::vector<int64_t> expect{0, 1, 6, 7, 14, 15, 20, 21};
    auto flat = kids.flatten().contiguous();
    CHECK(std::vector<int64_t>(flat.data_ptr<int64_t>(), flat.data_ptr<int64_t>() + flat.numel()) == expect);
}

TEST_CASE("softmax rows sum to one over valid entries") {
    torch::manual_seed(13);
    auto logits = torch::randn({6, 5});
    logits[2].fill_(-std::numeric_limits<float>::infinity());
    logits[4][1] = -std::numeric_limits<float>::infinity();
    const auto p = masked_softmax(logits);
    const auto sums = p.sum(1);
    for (int i = 0; i < 6; ++i) CHECK(sums[i].item<double>() == doctest::Approx(i == 2 ? 0.0 : 1.0).epsilon(1e-6));
    CHECK(p[4][1].item<float>() == 0.f);

    const auto d = dual_softmax(torch::randn({7, 9}) * 3);
    CHECK(d.min().item<float>() >= 0);
    CHECK(d.sum(1).max().item<float>() <= 1 + 1e-6);
    CHECK(d.sum(0).max().item<float>() <= 1 + 1e-6);
}

TEST_CASE("focal loss reference values") {
    CHECK(focal_loss(torch::tensor({0.5}, torch::kFloat64), 2.0).item<double>() ==
          doctest::Approx(0.17328679513998632).epsilon(1e-12));
    CHECK(focal_loss(torch::tensor({0.5}, torch::kFloat64), 0.0).item<double>() == doctest::Approx(std::log(2.0)));
    CHECK(focal_loss(torch::empty({0}), 2.0).item<double>() == 0.0);
    // below the floor the value is clamped but the gradient does not vanish
    auto p = torch::tensor({1e-8}, torch::dtype(torch::kFloat64).requires_grad(true));
    auto l = cross_entropy_loss(p);
    l.backward();
    CHECK(l.item<double>() == doctest::Approx(-std::log(1e-6)));
    CHECK(p.grad().item<double>() == doctest::Approx(-1e6));
}

TEST_CASE("coarse loss on a uniform similarity") {
    const auto prob = dual_softmax(torch::zeros({4, 4}, torch::kFloat64));
    const auto gt = torch::tensor({0, 3, -1, 2}, torch::kInt64);
    CHECK(coarse_loss(prob, gt).item<double>() == doctest::Approx(2.4368455566560576).epsilon(1e-12));
}

TEST_CASE("supervision picks the slot holding the ground-truth cell") {
    auto idx = torch::tensor({{3, 5, 7}, {1, 2, 0}, {4, 4, 9}, {8, 6, 2}}, torch::kInt64);
    auto ok = torch::tensor({{1, 1, 1}, {1, 1, 0}, {0, 1, 1}, {1, 1, 1}}, torch::kBool);
    auto gt = torch::tensor({7, 0, 4, -1}, torch::kInt64);
    const auto sup = build_supervision(idx, ok, gt);
    REQUIRE(sup.size() == 2);
    CHECK(sup.query[0].item<int64_t>() == 0);
    CHECK(sup.slot[0].item<int64_t>() == 2);
    CHECK(sup.query[1].item<int64_t>() == 2);
    CHECK(sup.slot[1].item<int64_t>() == 1);
}

TEST_CASE("soft-argmax of a one-hot and of a uniform window") {
    auto logits = torch::full({2, 25}, -1e9, torch::kFloat64);
    logits[0][3] = 0;   // row 0, col 3 -> (+1, -2)
    logits[1].zero_();  // uniform -> (0, 0)
    const auto e = soft_argmax(logits, 5);
    CHECK(e[0][0].item<double>() == doctest::Approx(1.0));
    CHECK(e[0][1].item<double>() == doctest::Approx(-2.0));
    CHECK(std::abs(e[1][0].item<double>()) < 1e-12);
    CHECK(std::abs(e[1][1].item<double>()) < 1e-12);
}

TEST_CASE("sine positional encoding is bounded and position dependent") {
    const auto pe = positional_encoding(4, 6, 16);
    CHECK(pe.sizes() == torch::IntArrayRef{24, 16});
    CHECK(pe.abs().max().item<float>() <= 1.0f + 1e-6f);
    CHECK(max_diff(pe[0], pe[1]) > 1e-3);
    // training-size normalisation maps a 2x grid onto the same coordinates at stride 2
    const auto big = positional_encoding(8, 12, 16, 4, 6);
    CHECK(max_diff(big[0], pe[0]) < 1e-6);
}

TEST_CASE("analytic gradients agree with finite differences") {
    for (const auto& name : builtin_grad_checks()) {
        CAPTURE(name);
        const auto rep = run_grad_check(name, GradCheckOptions{});
        CHECK(rep.pass());
    }
}

TEST_CASE("dual softmax matches the direct formula") {
    torch::manual_seed(14);
    for (int trial = 0; trial < 10; ++trial) {
        auto s = torch::randn({6, 6}, torch::kFloat64) * 3;
        auto p = dual_softmax(s);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 6; ++j) {
                double row = 0, col = 0;
                for (int k = 0; k < 6; ++k) {
                    row += std::exp(s[i][k].item<double>());
                    col += std::exp(s[k][j].item<double>());
                }
                const double e = std::exp(s[i][j].item<double>());
                CHECK(std::abs(p[i][j].item<double>() - e / row * e / col) < 1e-6);
            }
    }
}

TEST_CASE("a unit query equal to one of two orthogonal candidates") {
    // logits 1/tau = 10 and 0, so the probability is 1 / (1 + e^-10)
    auto q = torch::tensor({{{1.0, 0.0}}}, torch::kFloat64);
    auto keys = torch::tensor({{{1.0, 0.0}, {0.0, 1.0}}}, torch::kFloat64);
    CandidateSet cand{torch::tensor({{{0, 1}}}, torch::kInt64), torch::ones({1, 1, 2}, torch::kBool)};
    const auto p = masked_softmax(candidate_logits(q, keys, cand, 1.0 / 0.1));
    CHECK(p[0][0][0].item<double>() == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));
}

TEST_CASE("positional encoding at the origin") {
    const auto pe = positional_encoding(3, 3, 8);
    // channel layout alternates sin and cos per frequency
    const auto first = pe[0];
    int zeros = 0, ones = 0;
    for (int c = 0; c < 8; ++c) {
        const float v = first[c].item<float>();
        zeros += std::abs(v) < 1e-7f;
        ones += std::abs(v - 1) < 1e-7f;
    }
    CHECK(zeros == 4);
    CHECK(ones == 4);
}
