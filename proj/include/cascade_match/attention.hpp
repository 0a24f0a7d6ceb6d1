#pragma once

// Self- and cross-attention blocks over cell-token grids, plus the candidate
// builders that restrict cross-attention to a few target cells per query.

#include <torch/torch.h>

#include <string>

namespace cascade_match {

enum class SelfVariant { global, linear, lsa, gsa, topk, lka, pola };
enum class CrossVariant { global, linear, lw, mt };

SelfVariant parse_self_variant(const std::string& name);
CrossVariant parse_cross_variant(const std::string& name);
std::string variant_name(SelfVariant v);
std::string variant_name(CrossVariant v);

struct AttentionConfig {
    std::string self_variant = "lsa";
    std::string cross_variant = "lw";
    int heads = 4;
    int lsa_window = 7;
    int gsa_rate = 4;
    int topk = 64;
    // 21x21 kernel decomposed as 5x5 depthwise, 7x7 depthwise with dilation 3, 1x1.
    int lka_kernel = 5;
    int lka_dilated = 7;
    int lka_dilation = 3;
    int pola_query = 7;
    int pola_key = 21;
    int lw_window = 10;
    int mt_parents = 32;

    int candidate_count() const;
};

/// Features of one image at one scale, row-major cell order.
struct TokenGrid {
    torch::Tensor x;  // [B, rows*cols, C]
    int rows = 0;
    int cols = 0;
};

/// Per-query target cells. Invalid slots hold index 0 and never contribute.
struct CandidateSet {
    torch::Tensor indices;  // int64 [B, Q, k]
    torch::Tensor valid;    // bool  [B, Q, k]

    int64_t k() const { return indices.size(-1); }
};

/// Coarse cross-view probabilities used by the top-k self-attention variant.
/// prob[0] is A->B over coarse cells, prob[1] is its transpose.
struct CoarseContext {
    torch::Tensor prob;  // [2, N, N]
    int rows = 0;
    int cols = 0;
};

/// 2D sine encoding [rows*cols, C]. With train_rows/train_cols > 0 the cell
/// coordinates are rescaled by train/test before encoding.
torch::Tensor positional_encoding(int rows, int cols, int channels, int train_rows = 0, int train_cols = 0,
                                  torch::Dtype dtype = torch::kFloat32);

/// Multi-head softmax attention restricted to candidate keys. q [B,N,H,D];
/// k, v [B,M,H,D]; returns [B,N,H,D]. Queries without valid candidates get 0.
/// Memory stays O(B*N*H*k): gathered keys are never materialised.
torch::Tensor candidate_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                                  const CandidateSet& cand, double scale);

/// Softmax weights that candidate_attention would use, [B,N,H,k] (no grad).
torch::Tensor candidate_attention_weights(const torch::Tensor& q, const torch::Tensor& k, const CandidateSet& cand,
                                          double scale);

/// Dot-product logits between queries [B,N,C] and their candidate keys in
/// keys [B,M,C], multiplied by scale; invalid slots are -inf. Returns [B,N,k].
torch::Tensor candidate_logits(const torch::Tensor& queries, const torch::Tensor& keys, const CandidateSet& cand,
                               double scale);

/// Dense multi-head attention with optional key mask [G,S] and additive bias
/// [H,L,S]. q [G,H,L,D], k/v [G,H,S,D].
torch::Tensor dense_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                              const torch::Tensor& key_mask = {}, const torch::Tensor& bias = {});

/// LW candidates for every cell of a rows x cols grid whose parent cell (at half
/// resolution) matched parent_top1 in the other image. parent_top1 [B, Np] holds
/// -1 for parents without a target. The window spans [c - w/2, c + w/2 - 1] per
/// axis around c = 2 * parent target.
CandidateSet build_candidates_lw(const torch::Tensor& parent_top1, int rows, int cols, int window);

/// MT candidates: the 2x2 children of each parent's top-t targets. parent_topt
/// [B, Np, t] with -1 marking missing entries.
CandidateSet build_candidates_mt(const torch::Tensor& parent_topt, int rows, int cols);

/// Candidates covering every cell of an n-cell grid.
CandidateSet full_candidates(int64_t batch, int64_t queries, int64_t n);

/// Pre-norm-free transformer layer: out = x + norm2(mlp([x, norm1(merge(msg))])).
class AttentionLayerImpl : public torch::nn::Module {
public:
    /// with_kv = false registers only the query projection (used as the input
    /// projection of the convolutional variant).
    AttentionLayerImpl(int channels, int heads, bool with_kv = true);

    /// Residual update from a raw attention message [B,N,C]: norm2(mlp([x, norm1(merge(msg))])).
    torch::Tensor delta(const torch::Tensor& x, const torch::Tensor& message);

    int channels() const { return channels_; }
    int heads() const { return heads_; }

    torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, merge{nullptr};
    torch::nn::Sequential mlp{nullptr};
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};

protected:
    int channels_;
    int heads_;
};
TORCH_MODULE(AttentionLayer);

class SelfAttentionBlockImpl : public AttentionLayerImpl {
public:
    SelfAttentionBlockImpl(int channels, SelfVariant variant, const AttentionConfig& cfg);

    /// ctx is required by the topk variant; `ratio` is cells per coarse cell along one axis.
    torch::Tensor forward(const TokenGrid& grid, const CoarseContext* ctx = nullptr, int ratio = 1);
    /// The attention output before merge / feed-forward, [B,N,C].
    torch::Tensor message(const TokenGrid& grid, const CoarseContext* ctx = nullptr, int ratio = 1);

    SelfVariant variant() const { return variant_; }

private:
    torch::Tensor split_heads(const torch::Tensor& t) const;
    torch::Tensor global_message(const TokenGrid& g);
    torch::Tensor linear_message(const TokenGrid& g);
    torch::Tensor lsa_message(const TokenGrid& g);
    torch::Tensor gsa_message(const TokenGrid& g);
    torch::Tensor topk_message(const TokenGrid& g, const CoarseContext* ctx, int ratio);
    torch::Tensor lka_message(const TokenGrid& g);
    torch::Tensor pola_message(const TokenGrid& g);

    SelfVariant variant_;
    AttentionConfig cfg_;
    torch::nn::Conv2d lka_dw{nullptr}, lka_dilated{nullptr}, lka_pw{nullptr};
    torch::Tensor pola_bias;  // [H, span, span] relative-position table
};
TORCH_MODULE(SelfAttentionBlock);

class CrossAttentionBlockImpl : public AttentionLayerImpl {
public:
    CrossAttentionBlockImpl(int channels, CrossVariant variant, int heads = 4);

    /// x [B,N,C] attends to source [B,M,C]. cand restricts keys for lw / mt and
    /// is ignored by global / linear. Queries without valid candidates pass
    /// through unchanged.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& source, const CandidateSet* cand = nullptr);
    torch::Tensor message(const torch::Tensor& x, const torch::Tensor& source, const CandidateSet* cand = nullptr);

    CrossVariant variant() const { return variant_; }

private:
    CrossVariant variant_;
};
TORCH_MODULE(CrossAttentionBlock);

/// Top-k self-attention key indices for every cell of a fine grid, via the
/// coarse cycle: parent -> its coarse top-1 in the other view -> the top-t
/// cells of this view matching that target -> their children. [B, N, topk].
CandidateSet topk_self_candidates(const CoarseContext& ctx, int rows, int cols, int ratio, int topk);

}  // namespace cascade_match
