#pragma once

#include <torch/torch.h>

namespace cascade_match {

/// Mean of (1 - p)^gamma * -log(max(p, 1e-6)) over the supervised probabilities
/// p [M]. An empty input gives a zero loss. Below the floor the gradient of the
/// log term is -1/1e-6 rather than zero.
torch::Tensor focal_loss(const torch::Tensor& p_gt, double gamma = 2.0);

/// Mean of -log(max(p, 1e-6)).
torch::Tensor cross_entropy_loss(const torch::Tensor& p_gt);

/// Focal (or plain cross-entropy) loss on a full dual-softmax matrix prob [Na, Nb]
/// at the ground-truth cells gt [Na] (-1 = unsupervised).
torch::Tensor coarse_loss(const torch::Tensor& prob, const torch::Tensor& gt, double gamma = 2.0, bool focal = true);

/// Mean squared L2 distance between residuals [M, 2].
torch::Tensor refinement_loss(const torch::Tensor& pred, const torch::Tensor& gt);

/// Supervised (query, slot) pairs: queries whose ground-truth cell is one of
/// their valid candidates, with the slot holding it.
struct Supervision {
    torch::Tensor query;  // int64 [M]
    torch::Tensor slot;   // int64 [M]

    int64_t size() const { return query.defined() ? query.size(0) : 0; }
};

/// indices / valid [Q, k]; gt [Q] (-1 = no ground truth).
Supervision build_supervision(const torch::Tensor& indices, const torch::Tensor& valid, const torch::Tensor& gt);

}  // namespace cascade_match
