#pragma once

// Convolutional feature pyramid (1/2 .. 1/8, optionally 1/16) with top-down
// fusion, and the ladder side network used for frozen-backbone finetuning.

#include "cascade_match/attention.hpp"

#include <torch/torch.h>

#include <map>
#include <string>
#include <vector>

namespace cascade_match {

struct EncoderConfig {
    int c2 = 32;
    int c4 = 64;
    int c8 = 96;
    int c16 = 128;
    int res_blocks = 2;       // residual blocks per level
    bool level16 = false;     // build the experimental 1/16 level
    std::string attention = "none";  // optional self-attention block at the coarsest level
    int ladder_width = 16;

    int channels(int cell) const;
    int coarsest() const { return level16 ? 16 : 8; }
};

/// Per-scale maps keyed by cell size in pixels (2, 4, 8[, 16]); each [B, C, H/cell, W/cell].
struct FeaturePyramid {
    std::map<int, torch::Tensor> maps;

    const torch::Tensor& at(int cell) const;
    bool has(int cell) const { return maps.count(cell) > 0; }
};

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int in, int out, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, shortcut{nullptr};
};
TORCH_MODULE(ResBlock);

class PyramidEncoderImpl : public torch::nn::Module {
public:
    explicit PyramidEncoderImpl(const EncoderConfig& cfg, const AttentionConfig& attn = {});

    /// image [B, 1, H, W] in [0, 1]; H and W must be multiples of the coarsest cell.
    FeaturePyramid forward(const torch::Tensor& image);

    const EncoderConfig& config() const { return cfg_; }
    /// The last layer producing the coarsest output map (zero-initialisable in tests).
    torch::nn::Conv2d& top_layer() { return lateral_.back(); }

private:
    EncoderConfig cfg_;
    std::vector<int> cells_;  // fine to coarse
    torch::nn::Conv2d stem_{nullptr};
    std::vector<torch::nn::Sequential> levels_;
    std::vector<torch::nn::Conv2d> lateral_;  // 1x1, per level
    std::vector<torch::nn::Conv2d> project_;  // 1x1 from the coarser output, per level below the top
    std::vector<torch::nn::Conv2d> smooth_;   // 3x3, per level below the top
    SelfAttentionBlock top_attention_{nullptr};
};
TORCH_MODULE(PyramidEncoder);

/// Trainable side network over a frozen pyramid, emitting new 1/4 and 1/2 maps.
/// Each output starts as the identity on the frozen map plus a small ladder term.
class LadderFpnImpl : public torch::nn::Module {
public:
    explicit LadderFpnImpl(const EncoderConfig& cfg);

    /// Frozen maps are detached; throws if the pyramid lacks 1/8, 1/4 or 1/2.
    FeaturePyramid forward(const FeaturePyramid& frozen);

private:
    EncoderConfig cfg_;
    torch::nn::Conv2d seed_{nullptr}, fuse4_{nullptr}, out4_{nullptr}, fuse2_{nullptr}, out2_{nullptr};
};
TORCH_MODULE(LadderFpn);

}  // namespace cascade_match
