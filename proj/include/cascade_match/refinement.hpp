#pragma once

// Sub-pixel residual regression on 5x5 patches of the 1/2 feature maps.

#include "cascade_match/attention.hpp"

#include <torch/torch.h>

namespace cascade_match {

/// Expected (dx, dy) offset under weights [M, w*w] over a w x w grid of
/// offsets -(w/2) .. w/2, in grid units. Returns [M, 2].
torch::Tensor spatial_expectation(const torch::Tensor& weights, int window = 5);

/// spatial_expectation(softmax(logits)).
torch::Tensor soft_argmax(const torch::Tensor& logits, int window = 5);

/// Bilinear, border-clamped w x w patches [M, w*w, C] from map [1, C, H, W]
/// around full-image pixel points [M, 2] (x, y). The map has `cell` pixels per cell.
torch::Tensor sample_patches(const torch::Tensor& map, const torch::Tensor& points, int cell = 2, int window = 5);

class FineRefinerImpl : public torch::nn::Module {
public:
    FineRefinerImpl(int channels, int heads = 4, int window = 5);

    /// Correlation logits [M, w*w] of the attended source centre token against
    /// the target patch tokens.
    torch::Tensor correlation(const torch::Tensor& src_patch, const torch::Tensor& tgt_patch);

    /// Residual [M, 2] in 1/2-map cells (each 2 px) for matches with source
    /// points src [M, 2] and initial targets tgt [M, 2] in full-image pixels.
    torch::Tensor forward(const torch::Tensor& feat_a, const torch::Tensor& feat_b, const torch::Tensor& src,
                          const torch::Tensor& tgt);

    int window() const { return window_; }

private:
    int window_;
    SelfAttentionBlock self_{nullptr};
    CrossAttentionBlock cross_{nullptr};
};
TORCH_MODULE(FineRefiner);

}  // namespace cascade_match
