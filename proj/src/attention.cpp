#include "cascade_match/attention.hpp"

#include "cascade_match/error.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace cascade_match {

namespace F = torch::nn::functional;
using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

SelfVariant parse_self_variant(const std::string& name) {
    if (name == "global") return SelfVariant::global;
    if (name == "linear") return SelfVariant::linear;
    if (name == "lsa") return SelfVariant::lsa;
    if (name == "gsa") return SelfVariant::gsa;
    if (name == "topk") return SelfVariant::topk;
    if (name == "lka") return SelfVariant::lka;
    if (name == "pola") return SelfVariant::pola;
    throw ValidationError("unknown self-attention variant '" + name + "'");
}

CrossVariant parse_cross_variant(const std::string& name) {
    if (name == "global") return CrossVariant::global;
    if (name == "linear") return CrossVariant::linear;
    if (name == "lw") return CrossVariant::lw;
    if (name == "mt") return CrossVariant::mt;
    throw ValidationError("unknown cross-attention variant '" + name + "'");
}

std::string variant_name(SelfVariant v) {
    switch (v) {
        case SelfVariant::global: return "global";
        case SelfVariant::linear: return "linear";
        case SelfVariant::lsa: return "lsa";
        case SelfVariant::gsa: return "gsa";
        case SelfVariant::topk: return "topk";
        case SelfVariant::lka: return "lka";
        case SelfVariant::pola: return "pola";
    }
    return "global";
}

std::string variant_name(CrossVariant v) {
    switch (v) {
        case CrossVariant::global: return "global";
        case CrossVariant::linear: return "linear";
        case CrossVariant::lw: return "lw";
        case CrossVariant::mt: return "mt";
    }
    return "global";
}

int AttentionConfig::candidate_count() const {
    const auto v = parse_cross_variant(cross_variant);
    if (v == CrossVariant::lw) return lw_window * lw_window;
    if (v == CrossVariant::mt) return 4 * mt_parents;
    return 0;
}

torch::Tensor positional_encoding(int rows, int cols, int channels, int train_rows, int train_cols,
                                  torch::Dtype dtype) {
    if (channels % 4 != 0) throw ValidationError("positional encoding needs channels divisible by 4");
    auto ys = torch::arange(rows, torch::kFloat64);
    auto xs = torch::arange(cols, torch::kFloat64);
    if (train_rows > 0 && train_cols > 0) {
        ys = ys * (static_cast<double>(train_rows) / rows);
        xs = xs * (static_cast<double>(train_cols) / cols);
    }
    const int nf = channels / 4;
    auto div = torch::exp(torch::arange(nf, torch::kFloat64) * (2.0 * -std::log(10000.0) / (channels / 2)));
    auto xd = (xs.unsqueeze(1) * div).unsqueeze(0).expand({rows, cols, nf});  // [rows, cols, nf]
    auto yd = (ys.unsqueeze(1) * div).unsqueeze(1).expand({rows, cols, nf});
    auto pe = torch::stack({torch::sin(xd), torch::cos(xd), torch::sin(yd), torch::cos(yd)}, -1);
    return pe.reshape({rows * cols, channels}).to(dtype);
}

namespace {

void check_candidates(const CandidateSet& cand, int64_t b, int64_t n, int64_t m) {
    if (!cand.indices.defined() || !cand.valid.defined()) throw ValidationError("candidate set is empty");
    if (cand.indices.dim() != 3 || cand.indices.size(0) != b || cand.indices.size(1) != n)
        throw ValidationError("candidate indices have the wrong shape");
    if (cand.valid.sizes() != cand.indices.sizes()) throw ValidationError("candidate mask shape mismatch");
    auto used = cand.indices.masked_select(cand.valid);
    if (used.numel() > 0 && (used.min().item<int64_t>() < 0 || used.max().item<int64_t>() >= m))
        throw ValidationError("candidate index out of range");
}

template <typename T>
T dot(const T* a, const T* b, int64_t n) {
    T s = 0;
#pragma omp simd reduction(+ : s)
    for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

struct Dims {
    int64_t b, n, m, h, d, k;
};

// Weights are stored [B, N, H, k]; keys and values are read one candidate row
// (all heads, C = H * D values) at a time.
template <typename T>
void attention_forward(const T* q, const T* k, const T* v, const int64_t* idx, const bool* ok, T* out, T* w,
                       const Dims& s, T scale) {
    const int64_t c = s.h * s.d;
    std::vector<T> mx(s.h), sum(s.h);
    for (int64_t b = 0; b < s.b; ++b)
        for (int64_t n = 0; n < s.n; ++n) {
            const int64_t row = b * s.n + n;
            const int64_t* id = idx + row * s.k;
            const bool* va = ok + row * s.k;
            const T* qr = q + row * c;
            T* wr = w + row * s.h * s.k;
            std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
            bool any = false;
            for (int64_t j = 0; j < s.k; ++j) {
                if (!va[j]) continue;
                any = true;
                const T* kr = k + (b * s.m + id[j]) * c;
                for (int64_t h = 0; h < s.h; ++h) {
                    const T l = scale * dot(qr + h * s.d, kr + h * s.d, s.d);
                    wr[h * s.k + j] = l;
                    mx[h] = std::max(mx[h], l);
                }
            }
            if (!any) continue;
            std::fill(sum.begin(), sum.end(), T(0));
            for (int64_t h = 0; h < s.h; ++h) {
                T* wh = wr + h * s.k;
                for (int64_t j = 0; j < s.k; ++j) {
                    if (!va[j]) continue;
                    wh[j] = std::exp(wh[j] - mx[h]);
                    sum[h] += wh[j];
                }
                const T inv = T(1) / sum[h];
                for (int64_t j = 0; j < s.k; ++j) wh[j] = va[j] ? wh[j] * inv : T(0);
            }
            T* o = out + row * c;
            for (int64_t j = 0; j < s.k; ++j) {
                if (!va[j]) continue;
                const T* vr = v + (b * s.m + id[j]) * c;
                for (int64_t h = 0; h < s.h; ++h) {
                    const T wj = wr[h * s.k + j];
                    for (int64_t x = 0; x < s.d; ++x) o[h * s.d + x] += wj * vr[h * s.d + x];
                }
            }
        }
}

template <typename T>
void attention_backward(const T* g, const T* q, const T* k, const T* v, const int64_t* idx, const bool* ok,
                        const T* w, T* gq, T* gk, T* gv, const Dims& s, T scale) {
    const int64_t c = s.h * s.d;
    std::vector<T> gp(s.h * s.k), mean(s.h);
    for (int64_t b = 0; b < s.b; ++b)
        for (int64_t n = 0; n < s.n; ++n) {
            const int64_t row = b * s.n + n;
            const int64_t* id = idx + row * s.k;
            const bool* va = ok + row * s.k;
            const T* wr = w + row * s.h * s.k;
            const T* gr = g + row * c;
            const T* qr = q + row * c;
            T* gqr = gq + row * c;
            std::fill(mean.begin(), mean.end(), T(0));
            for (int64_t j = 0; j < s.k; ++j) {
                if (!va[j]) continue;
                const T* vr = v + (b * s.m + id[j]) * c;
                for (int64_t h = 0; h < s.h; ++h) {
                    const T d = dot(gr + h * s.d, vr + h * s.d, s.d);
                    gp[h * s.k + j] = d;
                    mean[h] += wr[h * s.k + j] * d;
                }
            }
            for (int64_t j = 0; j < s.k; ++j) {
                if (!va[j]) continue;
                const int64_t ko = (b * s.m + id[j]) * c;
                for (int64_t h = 0; h < s.h; ++h) {
                    const T wj = wr[h * s.k + j];
                    const T gs = wj * (gp[h * s.k + j] - mean[h]) * scale;
                    for (int64_t x = h * s.d; x < (h + 1) * s.d; ++x) {
                        gqr[x] += gs * k[ko + x];
                        gk[ko + x] += gs * qr[x];
                        gv[ko + x] += wj * gr[x];
                    }
                }
            }
        }
}

struct CandidateAttentionFn : public torch::autograd::Function<CandidateAttentionFn> {
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor q, torch::Tensor k, torch::Tensor v,
                                 torch::Tensor idx, torch::Tensor valid, double scale) {
        q = q.contiguous();
        k = k.contiguous();
        v = v.contiguous();
        idx = idx.contiguous();
        valid = valid.contiguous();
        const Dims s{q.size(0), q.size(1), k.size(1), q.size(2), q.size(3), idx.size(2)};
        auto out = torch::zeros_like(q);
        auto w = torch::zeros({s.b, s.n, s.h, s.k}, q.options());
        AT_DISPATCH_FLOATING_TYPES(q.scalar_type(), "candidate_attention_forward", [&] {
            attention_forward<scalar_t>(q.data_ptr<scalar_t>(), k.data_ptr<scalar_t>(), v.data_ptr<scalar_t>(),
                                        idx.data_ptr<int64_t>(), valid.data_ptr<bool>(), out.data_ptr<scalar_t>(),
                                        w.data_ptr<scalar_t>(), s, static_cast<scalar_t>(scale));
        });
        ctx->save_for_backward({q, k, v, idx, valid, w});
        ctx->saved_data["scale"] = scale;
        return out;
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        auto saved = ctx->get_saved_variables();
        auto q = saved[0], k = saved[1], v = saved[2], idx = saved[3], valid = saved[4], w = saved[5];
        const double scale = ctx->saved_data["scale"].toDouble();
        auto g = grads[0].contiguous();
        const Dims s{q.size(0), q.size(1), k.size(1), q.size(2), q.size(3), idx.size(2)};
        auto gq = torch::zeros_like(q);
        auto gk = torch::zeros_like(k);
        auto gv = torch::zeros_like(v);
        AT_DISPATCH_FLOATING_TYPES(q.scalar_type(), "candidate_attention_backward", [&] {
            attention_backward<scalar_t>(g.data_ptr<scalar_t>(), q.data_ptr<scalar_t>(), k.data_ptr<scalar_t>(),
                                         v.data_ptr<scalar_t>(), idx.data_ptr<int64_t>(), valid.data_ptr<bool>(),
                                         w.data_ptr<scalar_t>(), gq.data_ptr<scalar_t>(), gk.data_ptr<scalar_t>(),
                                         gv.data_ptr<scalar_t>(), s, static_cast<scalar_t>(scale));
        });
        return {gq, gk, gv, torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

template <typename T>
void logits_forward(const T* q, const T* keys, const int64_t* idx, const bool* ok, T* out, int64_t bsz, int64_t n,
                    int64_t m, int64_t c, int64_t kk, T scale) {
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < n; ++i) {
            const int64_t row = b * n + i;
            for (int64_t j = 0; j < kk; ++j) {
                out[row * kk + j] = ok[row * kk + j]
                                        ? scale * dot(q + row * c, keys + (b * m + idx[row * kk + j]) * c, c)
                                        : -std::numeric_limits<T>::infinity();
            }
        }
}

template <typename T>
void logits_backward(const T* g, const T* q, const T* keys, const int64_t* idx, const bool* ok, T* gq, T* gkeys,
                     int64_t bsz, int64_t n, int64_t m, int64_t c, int64_t kk, T scale) {
    for (int64_t b = 0; b < bsz; ++b)
        for (int64_t i = 0; i < n; ++i) {
            const int64_t row = b * n + i;
            for (int64_t j = 0; j < kk; ++j) {
                if (!ok[row * kk + j]) continue;
                const T gs = g[row * kk + j] * scale;
                const int64_t ko = (b * m + idx[row * kk + j]) * c;
                for (int64_t x = 0; x < c; ++x) {
                    gq[row * c + x] += gs * keys[ko + x];
                    gkeys[ko + x] += gs * q[row * c + x];
                }
            }
        }
}

struct CandidateLogitsFn : public torch::autograd::Function<CandidateLogitsFn> {
    static torch::Tensor forward(AutogradContext* ctx, torch::Tensor q, torch::Tensor keys, torch::Tensor idx,
                                 torch::Tensor valid, double scale) {
        q = q.contiguous();
        keys = keys.contiguous();
        idx = idx.contiguous();
        valid = valid.contiguous();
        auto out = torch::empty({q.size(0), q.size(1), idx.size(2)}, q.options());
        AT_DISPATCH_FLOATING_TYPES(q.scalar_type(), "candidate_logits_forward", [&] {
            logits_forward<scalar_t>(q.data_ptr<scalar_t>(), keys.data_ptr<scalar_t>(), idx.data_ptr<int64_t>(),
                                     valid.data_ptr<bool>(), out.data_ptr<scalar_t>(), q.size(0), q.size(1),
                                     keys.size(1), q.size(2), idx.size(2), static_cast<scalar_t>(scale));
        });
        ctx->save_for_backward({q, keys, idx, valid});
        ctx->saved_data["scale"] = scale;
        return out;
    }

    static variable_list backward(AutogradContext* ctx, variable_list grads) {
        auto saved = ctx->get_saved_variables();
        auto q = saved[0], keys = saved[1], idx = saved[2], valid = saved[3];
        const double scale = ctx->saved_data["scale"].toDouble();
        auto g = grads[0].contiguous();
        auto gq = torch::zeros_like(q);
        auto gk = torch::zeros_like(keys);
        AT_DISPATCH_FLOATING_TYPES(q.scalar_type(), "candidate_logits_backward", [&] {
            logits_backward<scalar_t>(g.data_ptr<scalar_t>(), q.data_ptr<scalar_t>(), keys.data_ptr<scalar_t>(),
                                      idx.data_ptr<int64_t>(), valid.data_ptr<bool>(), gq.data_ptr<scalar_t>(),
                                      gk.data_ptr<scalar_t>(), q.size(0), q.size(1), keys.size(1), q.size(2),
                                      idx.size(2), static_cast<scalar_t>(scale));
        });
        return {gq, gk, torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

/// elu+1 kernelised attention. q [B,L,H,D], k/v [B,S,H,D].
torch::Tensor linear_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
    constexpr double eps = 1e-6;
    auto qf = F::elu(q) + 1;
    auto kf = F::elu(k) + 1;
    const double len = static_cast<double>(v.size(1));
    auto kv = torch::einsum("nshd,nshv->nhdv", {kf, v / len});
    auto z = 1.0 / (torch::einsum("nlhd,nhd->nlh", {qf, kf.sum(1)}) + eps);
    return torch::einsum("nlhd,nhdv,nlh->nlhv", {qf, kv, z}) * len;
}

/// [B, rows*cols, C] tokens -> [B, C, rows, cols] map.
torch::Tensor to_map(const torch::Tensor& x, int rows, int cols) {
    return x.transpose(1, 2).reshape({x.size(0), x.size(2), rows, cols});
}

torch::Tensor to_tokens(const torch::Tensor& m) {
    return m.flatten(2).transpose(1, 2);
}

/// [B, Hp, Wp, C] -> [B*nh*nw, w*w, C] non-overlapping windows, row-major.
torch::Tensor window_partition(const torch::Tensor& x, int w) {
    const auto b = x.size(0), hp = x.size(1), wp = x.size(2), c = x.size(3);
    return x.view({b, hp / w, w, wp / w, w, c}).permute({0, 1, 3, 2, 4, 5}).reshape({-1, w * w, c});
}

torch::Tensor window_merge(const torch::Tensor& win, int64_t b, int64_t hp, int64_t wp, int w) {
    const auto c = win.size(-1);
    return win.view({b, hp / w, wp / w, w, w, c}).permute({0, 1, 3, 2, 4, 5}).reshape({b, hp, wp, c});
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

torch::Tensor candidate_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                  const CandidateSet& cand, double scale) {
    check_candidates(cand, q.size(0), q.size(1), k.size(1));
    return CandidateAttentionFn::apply(q, k, v, cand.indices, cand.valid.to(torch::kBool), scale);
}

torch::Tensor candidate_attention_weights(const torch::Tensor& q, const torch::Tensor& k, const CandidateSet& cand,
                                          double scale) {
    torch::NoGradGuard guard;
    auto valid = cand.valid.to(torch::kBool);
    auto kg = k.index({torch::arange(k.size(0)).view({-1, 1, 1}), cand.indices});  // [B,N,k,H,D]
    auto s = torch::einsum("bnhd,bnkhd->bnhk", {q, kg}) * scale;
    s = s.masked_fill(~valid.unsqueeze(2), -std::numeric_limits<double>::infinity());
    auto any = valid.any(-1).unsqueeze(-1).unsqueeze(-1);
    return torch::where(any, torch::softmax(torch::where(any, s, torch::zeros_like(s)), -1), torch::zeros_like(s));
}

torch::Tensor candidate_logits(const torch::Tensor& queries, const torch::Tensor& keys, const CandidateSet& cand,
                               double scale) {
    check_candidates(cand, queries.size(0), queries.size(1), keys.size(1));
    if (queries.size(2) != keys.size(2)) throw ValidationError("query / key channel mismatch");
    return CandidateLogitsFn::apply(queries, keys, cand.indices, cand.valid.to(torch::kBool), scale);
}

torch::Tensor dense_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                              const torch::Tensor& key_mask, const torch::Tensor& bias) {
    auto s = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(q.size(-1)));
    if (bias.defined()) s = s + bias.unsqueeze(0);
    if (key_mask.defined())
        s = s.masked_fill(~key_mask.view({key_mask.size(0), 1, 1, key_mask.size(1)}),
                          -std::numeric_limits<double>::infinity());
    return torch::matmul(torch::softmax(s, -1), v);
}

CandidateSet build_candidates_lw(const torch::Tensor& parent_top1, int rows, int cols, int window) {
    if (window < 1) throw ValidationError("LW window must be positive");
    if (rows % 2 || cols % 2) throw ValidationError("LW candidates need even grid dims");
    const int pcols = cols / 2;
    auto top = parent_top1.to(torch::kInt64).contiguous();
    const int64_t bsz = top.size(0);
    const int64_t n = static_cast<int64_t>(rows) * cols;
    const int64_t kk = static_cast<int64_t>(window) * window;
    auto idx = torch::zeros({bsz, n, kk}, torch::kInt64);
    auto ok = torch::zeros({bsz, n, kk}, torch::kBool);
    auto* ip = idx.data_ptr<int64_t>();
    auto* vp = ok.data_ptr<bool>();
    const auto* tp = top.data_ptr<int64_t>();
    const int half = window / 2;
    for (int64_t b = 0; b < bsz; ++b)
        for (int y = 0; y < rows; ++y)
            for (int x = 0; x < cols; ++x) {
                const int64_t t = tp[b * top.size(1) + (y / 2) * pcols + x / 2];
                if (t < 0) continue;
                const int cy = 2 * static_cast<int>(t / pcols);
                const int cx = 2 * static_cast<int>(t % pcols);
                const int64_t base = (b * n + static_cast<int64_t>(y) * cols + x) * kk;
                for (int dy = 0; dy < window; ++dy)
                    for (int dx = 0; dx < window; ++dx) {
                        const int yy = cy - half + dy;
                        const int xx = cx - half + dx;
                        if (yy < 0 || yy >= rows || xx < 0 || xx >= cols) continue;
                        ip[base + dy * window + dx] = static_cast<int64_t>(yy) * cols + xx;
                        vp[base + dy * window + dx] = true;
                    }
            }
    return {idx, ok};
}

CandidateSet build_candidates_mt(const torch::Tensor& parent_topt, int rows, int cols) {
    if (rows % 2 || cols % 2) throw ValidationError("MT candidates need even grid dims");
    const int pcols = cols / 2;
    auto top = parent_topt.to(torch::kInt64).contiguous();
    const int64_t bsz = top.size(0);
    const int64_t np = top.size(1);
    const int64_t t = top.size(2);
    const int64_t n = static_cast<int64_t>(rows) * cols;
    auto idx = torch::zeros({bsz, n, 4 * t}, torch::kInt64);
    auto ok = torch::zeros({bsz, n, 4 * t}, torch::kBool);
    auto* ip = idx.data_ptr<int64_t>();
    auto* vp = ok.data_ptr<bool>();
    const auto* tp = top.data_ptr<int64_t>();
    for (int64_t b = 0; b < bsz; ++b)
        for (int y = 0; y < rows; ++y)
            for (int x = 0; x < cols; ++x) {
                const int64_t parent = (y / 2) * pcols + x / 2;
                const int64_t base = (b * n + static_cast<int64_t>(y) * cols + x) * 4 * t;
                for (int64_t p = 0; p < t; ++p) {
                    const int64_t target = tp[(b * np + parent) * t + p];
                    if (target < 0) continue;
                    const int64_t ty = 2 * (target / pcols);
                    const int64_t tx = 2 * (target % pcols);
                    for (int c = 0; c < 4; ++c) {
                        ip[base + 4 * p + c] = (ty + c / 2) * cols + tx + c % 2;
                        vp[base + 4 * p + c] = true;
                    }
                }
            }
    return {idx, ok};
}

CandidateSet full_candidates(int64_t batch, int64_t queries, int64_t n) {
    return {torch::arange(n, torch::kInt64).view({1, 1, n}).expand({batch, queries, n}).contiguous(),
            torch::ones({batch, queries, n}, torch::kBool)};
}

CandidateSet topk_self_candidates(const CoarseContext& ctx, int rows, int cols, int ratio, int topk) {
    if (!ctx.prob.defined()) throw ValidationError("top-k self-attention needs coarse probabilities");
    if (ratio < 1 || rows != ctx.rows * ratio || cols != ctx.cols * ratio)
        throw ValidationError("top-k grid does not nest in the coarse grid");
    torch::NoGradGuard guard;
    const int64_t nc = static_cast<int64_t>(ctx.rows) * ctx.cols;
    const int64_t per = static_cast<int64_t>(ratio) * ratio;
    const int64_t t = std::min<int64_t>(std::max<int64_t>(1, topk / per), nc);
    const int64_t kk = t * per;
    auto prob = ctx.prob.to(torch::kFloat64);
    const int64_t bsz = prob.size(0);
    auto best = prob.argmax(2).contiguous();                                           // [B, Nc]
    auto column_top = std::get<1>(prob.transpose(1, 2).topk(t, 2)).contiguous();            // [B, Nc(target), t]
    const int64_t n = static_cast<int64_t>(rows) * cols;
    auto idx = torch::empty({bsz, n, kk}, torch::kInt64);
    auto* ip = idx.data_ptr<int64_t>();
    const auto* bp = best.data_ptr<int64_t>();
    const auto* cp = column_top.data_ptr<int64_t>();
    for (int64_t b = 0; b < bsz; ++b)
        for (int y = 0; y < rows; ++y)
            for (int x = 0; x < cols; ++x) {
                const int64_t parent = (y / ratio) * ctx.cols + x / ratio;
                const int64_t target = bp[b * nc + parent];
                int64_t* out = ip + (b * n + static_cast<int64_t>(y) * cols + x) * kk;
                for (int64_t s = 0; s < t; ++s) {
                    const int64_t src = cp[(b * nc + target) * t + s];
                    const int64_t sy = (src / ctx.cols) * ratio;
                    const int64_t sx = (src % ctx.cols) * ratio;
                    for (int64_t c = 0; c < per; ++c) *out++ = (sy + c / ratio) * cols + sx + c % ratio;
                }
            }
    return {idx, torch::ones({bsz, n, kk}, torch::kBool)};
}

AttentionLayerImpl::AttentionLayerImpl(int channels, int heads, bool with_kv) : channels_(channels), heads_(heads) {
    if (heads < 1 || channels % heads != 0) throw ValidationError("channels must be divisible by the head count");
    q_proj = register_module("q_proj", torch::nn::Linear(torch::nn::LinearOptions(channels, channels).bias(false)));
    if (with_kv) {
        k_proj = register_module("k_proj", torch::nn::Linear(torch::nn::LinearOptions(channels, channels).bias(false)));
        v_proj = register_module("v_proj", torch::nn::Linear(torch::nn::LinearOptions(channels, channels).bias(false)));
    }
    merge = register_module("merge", torch::nn::Linear(torch::nn::LinearOptions(channels, channels).bias(false)));
    mlp = register_module("mlp", torch::nn::Sequential(
                                     torch::nn::Linear(torch::nn::LinearOptions(2 * channels, 2 * channels).bias(false)),
                                     torch::nn::GELU(),
                                     torch::nn::Linear(torch::nn::LinearOptions(2 * channels, channels).bias(false))));
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({channels})));
}

torch::Tensor AttentionLayerImpl::delta(const torch::Tensor& x, const torch::Tensor& message) {
    auto m = norm1(merge(message));
    return norm2(mlp->forward(torch::cat({x, m}, -1)));
}

SelfAttentionBlockImpl::SelfAttentionBlockImpl(int channels, SelfVariant variant, const AttentionConfig& cfg)
    : AttentionLayerImpl(channels, cfg.heads, variant != SelfVariant::lka), variant_(variant), cfg_(cfg) {
    if (variant == SelfVariant::lka) {
        auto dw = torch::nn::Conv2dOptions(channels, channels, cfg.lka_kernel).groups(channels);
        auto dil = torch::nn::Conv2dOptions(channels, channels, cfg.lka_dilated).groups(channels).dilation(cfg.lka_dilation);
        lka_dw = register_module("lka_dw", torch::nn::Conv2d(dw));
        lka_dilated = register_module("lka_dilated", torch::nn::Conv2d(dil));
        lka_pw = register_module("lka_pw", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
    }
    if (variant == SelfVariant::pola) {
        if (cfg.pola_key < cfg.pola_query || (cfg.pola_key - cfg.pola_query) % 2 != 0)
            throw ValidationError("pola key window must exceed the query window by an even margin");
        const int span = cfg.pola_key + cfg.pola_query - 1;
        pola_bias = register_parameter("pola_bias", torch::randn({cfg.heads, span, span}) * 0.02);
    }
    if (variant == SelfVariant::lsa && cfg.lsa_window < 1) throw ValidationError("lsa window must be positive");
    if (variant == SelfVariant::gsa && cfg.gsa_rate < 1) throw ValidationError("gsa rate must be positive");
}

torch::Tensor SelfAttentionBlockImpl::split_heads(const torch::Tensor& t) const {
    auto sizes = t.sizes().vec();
    sizes.back() = heads_;
    sizes.push_back(channels_ / heads_);
    return t.view(sizes);
}

torch::Tensor SelfAttentionBlockImpl::forward(const TokenGrid& grid, const CoarseContext* ctx, int ratio) {
    return grid.x + delta(grid.x, message(grid, ctx, ratio));
}

torch::Tensor SelfAttentionBlockImpl::message(const TokenGrid& grid, const CoarseContext* ctx, int ratio) {
    if (grid.x.size(1) != static_cast<int64_t>(grid.rows) * grid.cols)
        throw ValidationError("token count does not match the grid shape");
    switch (variant_) {
        case SelfVariant::global: return global_message(grid);
        case SelfVariant::linear: return linear_message(grid);
        case SelfVariant::lsa: return lsa_message(grid);
        case SelfVariant::gsa: return gsa_message(grid);
        case SelfVariant::topk: return topk_message(grid, ctx, ratio);
        case SelfVariant::lka: return lka_message(grid);
        case SelfVariant::pola: return pola_message(grid);
    }
    throw ValidationError("unknown self-attention variant");
}

torch::Tensor SelfAttentionBlockImpl::global_message(const TokenGrid& g) {
    auto q = split_heads(q_proj(g.x)).permute({0, 2, 1, 3});
    auto k = split_heads(k_proj(g.x)).permute({0, 2, 1, 3});
    auto v = split_heads(v_proj(g.x)).permute({0, 2, 1, 3});
    return dense_attention(q, k, v).permute({0, 2, 1, 3}).reshape(g.x.sizes());
}

torch::Tensor SelfAttentionBlockImpl::linear_message(const TokenGrid& g) {
    auto out = linear_attention(split_heads(q_proj(g.x)), split_heads(k_proj(g.x)), split_heads(v_proj(g.x)));
    return out.reshape(g.x.sizes());
}

torch::Tensor SelfAttentionBlockImpl::lsa_message(const TokenGrid& g) {
    const int w = cfg_.lsa_window;
    const int hp = round_up(g.rows, w), wp = round_up(g.cols, w);
    const auto b = g.x.size(0);
    auto xm = g.x.view({b, g.rows, g.cols, channels_});
    xm = torch::constant_pad_nd(xm, {0, 0, 0, wp - g.cols, 0, hp - g.rows});
    auto mask = torch::constant_pad_nd(torch::ones({1, g.rows, g.cols, 1}, torch::kBool), {0, 0, 0, wp - g.cols, 0, hp - g.rows});
    auto win = window_partition(xm, w);                                  // [G, w*w, C]
    auto win_mask = window_partition(mask, w).squeeze(-1).repeat({b, 1});  // [G, w*w]
    auto q = split_heads(q_proj(win)).permute({0, 2, 1, 3});
    auto k = split_heads(k_proj(win)).permute({0, 2, 1, 3});
    auto v = split_heads(v_proj(win)).permute({0, 2, 1, 3});
    auto out = dense_attention(q, k, v, win_mask).permute({0, 2, 1, 3}).reshape({-1, w * w, channels_});
    auto merged = window_merge(out, b, hp, wp, w);
    return merged.slice(1, 0, g.rows).slice(2, 0, g.cols).reshape(g.x.sizes());
}

torch::Tensor SelfAttentionBlockImpl::gsa_message(const TokenGrid& g) {
    const int r = cfg_.gsa_rate;
    auto pooled = to_tokens(F::avg_pool2d(to_map(g.x, g.rows, g.cols),
                                          F::AvgPool2dFuncOptions(r).stride(r).ceil_mode(true).count_include_pad(false)));
    auto q = split_heads(q_proj(g.x)).permute({0, 2, 1, 3});
    auto k = split_heads(k_proj(pooled)).permute({0, 2, 1, 3});
    auto v = split_heads(v_proj(pooled)).permute({0, 2, 1, 3});
    return dense_attention(q, k, v).permute({0, 2, 1, 3}).reshape(g.x.sizes());
}

torch::Tensor SelfAttentionBlockImpl::topk_message(const TokenGrid& g, const CoarseContext* ctx, int ratio) {
    if (ctx == nullptr) throw ValidationError("top-k self-attention needs coarse probabilities");
    auto cand = topk_self_candidates(*ctx, g.rows, g.cols, ratio, cfg_.topk);
    auto q = split_heads(q_proj(g.x));
    auto k = split_heads(k_proj(g.x));
    auto v = split_heads(v_proj(g.x));
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels_ / heads_));
    return candidate_attention(q, k, v, cand, scale).reshape(g.x.sizes());
}

torch::Tensor SelfAttentionBlockImpl::lka_message(const TokenGrid& g) {
    auto u = to_map(F::gelu(q_proj(g.x)), g.rows, g.cols);
    const int p0 = cfg_.lka_kernel / 2;
    const int p1 = cfg_.lka_dilation * (cfg_.lka_dilated / 2);
    auto a = lka_dw(F::pad(u, F::PadFuncOptions({p0, p0, p0, p0}).mode(torch::kReplicate)));
    a = lka_dilated(F::pad(a, F::PadFuncOptions({p1, p1, p1, p1}).mode(torch::kReplicate)));
    a = lka_pw(a);
    return to_tokens(u * a);
}

torch::Tensor SelfAttentionBlockImpl::pola_message(const TokenGrid& g) {
    const int w = cfg_.pola_query;
    const int kw = cfg_.pola_key;
    const int margin = (kw - w) / 2;
    const int span = kw + w - 1;
    const int hp = round_up(g.rows, w), wp = round_up(g.cols, w);
    const auto b = g.x.size(0);
    const int64_t d = channels_ / heads_;

    auto qm = torch::constant_pad_nd(q_proj(g.x).view({b, g.rows, g.cols, channels_}),
                                     {0, 0, 0, wp - g.cols, 0, hp - g.rows});
    auto q = split_heads(window_partition(qm, w)).permute({0, 2, 1, 3});  // [G,H,w*w,D]

    const std::vector<int64_t> pad{margin, margin + wp - g.cols, margin, margin + hp - g.rows};
    auto unfold_keys = [&](const torch::Tensor& t) {
        auto m = torch::constant_pad_nd(to_map(t, g.rows, g.cols), pad);
        auto cols = F::unfold(m, F::UnfoldFuncOptions(kw).stride(w));  // [B, C*kw*kw, nW]
        const auto nw = cols.size(2);
        return cols.view({b, channels_, kw * kw, nw}).permute({0, 3, 2, 1}).reshape({b * nw, kw * kw, heads_, d})
            .permute({0, 2, 1, 3});
    };
    auto k = unfold_keys(k_proj(g.x));
    auto v = unfold_keys(v_proj(g.x));
    auto ones = torch::constant_pad_nd(torch::ones({1, 1, g.rows, g.cols}, g.x.options()), pad);
    auto mask_cols = F::unfold(ones, F::UnfoldFuncOptions(kw).stride(w));  // [1, kw*kw, nW]
    auto mask = (mask_cols[0].transpose(0, 1) > 0.5).repeat({b, 1});      // [G, kw*kw]

    // Relative offset (key - query) in window-local coordinates, shifted to be non-negative.
    auto qy = torch::arange(w).repeat_interleave(w);
    auto qx = torch::arange(w).repeat({w});
    auto ky = torch::arange(kw).repeat_interleave(kw) - margin;
    auto kx = torch::arange(kw).repeat({kw}) - margin;
    auto dy = ky.unsqueeze(0) - qy.unsqueeze(1) + margin + w - 1;
    auto dx = kx.unsqueeze(0) - qx.unsqueeze(1) + margin + w - 1;
    auto rel = (dy * span + dx).flatten();
    auto bias = pola_bias.view({heads_, span * span}).index_select(1, rel).view({heads_, w * w, kw * kw});

    auto out = dense_attention(q, k, v, mask, bias).permute({0, 2, 1, 3}).reshape({-1, w * w, channels_});
    auto merged = window_merge(out, b, hp, wp, w);
    return merged.slice(1, 0, g.rows).slice(2, 0, g.cols).reshape(g.x.sizes());
}

CrossAttentionBlockImpl::CrossAttentionBlockImpl(int channels, CrossVariant variant, int heads)
    : AttentionLayerImpl(channels, heads), variant_(variant) {}

torch::Tensor CrossAttentionBlockImpl::message(const torch::Tensor& x, const torch::Tensor& source,
                                               const CandidateSet* cand) {
    if (x.size(-1) != source.size(-1)) throw ValidationError("cross-attention channel mismatch");
    const int64_t d = channels_ / heads_;
    auto split = [&](const torch::Tensor& t) { return t.view({t.size(0), t.size(1), heads_, d}); };
    auto q = split(q_proj(x));
    auto k = split(k_proj(source));
    auto v = split(v_proj(source));
    switch (variant_) {
        case CrossVariant::global:
            return dense_attention(q.permute({0, 2, 1, 3}), k.permute({0, 2, 1, 3}), v.permute({0, 2, 1, 3}))
                .permute({0, 2, 1, 3})
                .reshape(x.sizes());
        case CrossVariant::linear: return linear_attention(q, k, v).reshape(x.sizes());
        case CrossVariant::lw:
        case CrossVariant::mt:
            if (cand == nullptr) throw ValidationError("candidate cross-attention needs a candidate set");
            return candidate_attention(q, k, v, *cand, 1.0 / std::sqrt(static_cast<double>(d))).reshape(x.sizes());
    }
    throw ValidationError("unknown cross-attention variant");
}

torch::Tensor CrossAttentionBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& source,
                                               const CandidateSet* cand) {
    auto upd = delta(x, message(x, source, cand));
    if ((variant_ == CrossVariant::lw || variant_ == CrossVariant::mt) && cand != nullptr) {
        auto live = cand->valid.any(-1).unsqueeze(-1).to(x.scalar_type());
        upd = upd * live;
    }
    return x + upd;
}

}  // namespace cascade_match
