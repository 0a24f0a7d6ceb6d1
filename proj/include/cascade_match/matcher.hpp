#pragma once

// Coarse dual-softmax matching followed by candidate-restricted cascade stages
// and sub-pixel refinement.

#include "cascade_match/attention.hpp"
#include "cascade_match/detect.hpp"
#include "cascade_match/encoder.hpp"
#include "cascade_match/geometry.hpp"
#include "cascade_match/refinement.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cascade_match {

/// "1/8" or 0.125 -> 8.
int parse_scale(const nlohmann::json& j);
std::string scale_name(int cell);

struct ModelConfig {
    EncoderConfig encoder;
    AttentionConfig attention;  // cascade stages
    std::string coarse_self = "linear";
    std::string coarse_cross = "linear";
    int coarse_blocks = 6;
    std::map<int, std::string> patterns{
        {8, "self,cross,self,cross"}, {4, "self,cross,self,cross"}, {2, "cross,self,cross"}};
    double temperature = 0.1;
    double threshold = 0.2;
    int train_size = 256;  // image side the positional encoding is normalised to
    bool ladder = false;
    int refine_window = 5;

    /// Stage cell sizes, coarse first: {8, 4, 2} or {16, 8, 4, 2}.
    std::vector<int> cells() const;
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
/// Strict: unknown keys raise ValidationError. Missing keys keep defaults.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Row-wise softmax over valid entries of logits [..., k] (-inf marks invalid);
/// rows without a valid entry become all zero.
torch::Tensor masked_softmax(const torch::Tensor& logits);

/// softmax_rows(S) * softmax_cols(S) for S [Na, Nb].
torch::Tensor dual_softmax(const torch::Tensor& sim);

/// Index of the first maximum along `dim` (lowest index on ties).
torch::Tensor first_argmax(const torch::Tensor& x, int64_t dim);

/// i is kept iff top1_ab[i] = j >= 0 and top1_ba[j] == i.
torch::Tensor cycle_filter(const torch::Tensor& top1_ab, const torch::Tensor& top1_ba);

/// Child cells (row-major index on the 2x finer grid) of the given parent cells.
torch::Tensor spawn_children(const torch::Tensor& parents, int parent_cols);

struct StageResult {
    int cell = 8;
    int rows = 0;
    int cols = 0;
    torch::Tensor query;       // int64 [Q] source cells of image A
    torch::Tensor prob;        // [Q, k]; coarse stage [Q, Nb]
    torch::Tensor candidates;  // int64 [Q, k]; undefined at the coarse stage
    torch::Tensor cand_valid;  // bool  [Q, k]
    torch::Tensor top1;        // int64 [Q] target cell, -1 when none
    torch::Tensor conf;        // [Q]
    torch::Tensor matched;     // bool [Q]

    double scale() const { return 1.0 / cell; }
};

struct MatchOptions {
    std::vector<int> scales;   // active stage cells, coarse first; empty = every stage
    double threshold = -1;     // < 0 keeps the model default
    bool refine = true;
    bool dense_refine = false; // ablation: refine every 1/2 point inside coarse matches
    bool normalize_pe = true;
};

struct MatchOutput {
    MatchSet matches;
    std::vector<StageResult> stages;
    std::map<int, MatchSet> stage_matches;  // unrefined cell-centre matches per active scale
    std::map<int, ConfidenceMap> confidence;
    std::vector<std::pair<std::string, double>> timings_ms;
    int width = 0;
    int height = 0;

    /// Confidence map of the finest active stage.
    const ConfidenceMap& finest_confidence() const;
};

/// Per-direction ground truth for one pair at every stage cell.
struct TrainTargets {
    std::map<int, torch::Tensor> gt_cell;   // int64 [2, N]: row 0 A->B, row 1 B->A; -1 = none
    std::map<int, torch::Tensor> gt_point;  // [2, N, 2] exact target pixel coords
};

TrainTargets make_targets(const SyntheticPair& pair, const std::vector<int>& cells, int width, int height);

struct TrainMode {
    std::vector<int> scales;        // active stage cells, coarse first
    bool frozen_coarse = false;     // encoder + coarse stage run without gradients
    double gamma = 2.0;
    bool focal = true;
    bool both_directions = true;
    std::map<std::string, double> weights;  // per loss term, default 1
    int refine_samples = 512;
    uint64_t seed = 0;
};

struct LossTerms {
    torch::Tensor total;
    std::vector<std::pair<std::string, torch::Tensor>> parts;
    std::map<std::string, int64_t> counts;  // supervised entries per term
};

class CoarseStageImpl : public torch::nn::Module {
public:
    CoarseStageImpl(int channels, const ModelConfig& cfg);
    /// feat [2, C, H, W] -> attended tokens [2, N, C].
    torch::Tensor forward(const torch::Tensor& feat, int train_rows, int train_cols);

private:
    std::vector<std::string> order_;
    std::vector<SelfAttentionBlock> self_;
    std::vector<CrossAttentionBlock> cross_;
};
TORCH_MODULE(CoarseStage);

class CascadeStageImpl : public torch::nn::Module {
public:
    CascadeStageImpl(int channels, const std::string& pattern, const AttentionConfig& cfg);
    /// feat [2, C, H, W]; cand [2, N, k] indexes the other image of the pair.
    torch::Tensor forward(const torch::Tensor& feat, const CandidateSet& cand, const CoarseContext* ctx, int ratio,
                          int train_rows, int train_cols);

private:
    std::vector<std::string> order_;
    std::vector<SelfAttentionBlock> self_;
    std::vector<CrossAttentionBlock> cross_;
};
TORCH_MODULE(CascadeStage);

class CascadeMatcherImpl : public torch::nn::Module {
public:
    explicit CascadeMatcherImpl(const ModelConfig& cfg);

    MatchOutput match(const Image& a, const Image& b, const MatchOptions& opts = {});
    /// images [2, 1, H, W] with H, W multiples of the coarsest cell.
    LossTerms training_loss(const torch::Tensor& images, const TrainTargets& targets, const TrainMode& mode);

    const ModelConfig& config() const { return cfg_; }

    PyramidEncoder encoder{nullptr};
    LadderFpn ladder{nullptr};
    CoarseStage coarse{nullptr};
    std::map<int, CascadeStage> stages;
    FineRefiner refiner{nullptr};

private:
    struct Forward;
    Forward run(const torch::Tensor& images, const std::vector<int>& scales, bool normalize_pe, bool frozen_coarse,
                std::vector<std::pair<std::string, double>>* timings);
    ModelConfig cfg_;
};
TORCH_MODULE(CascadeMatcher);

/// Reflect-pads a grayscale image to multiples of `multiple` (bottom / right) as [1, 1, H', W'].
torch::Tensor image_tensor(const Image& img, int multiple, int height = 0, int width = 0);

}  // namespace cascade_match
