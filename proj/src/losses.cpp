#include "cascade_match/losses.hpp"

#include "cascade_match/error.hpp"

namespace cascade_match {

namespace {

// Value max(p, 1e-6); the gradient is that of p itself, so probabilities below
// the floor (an untrained 1024-cell dual softmax sits near 1/N^2) still learn.
torch::Tensor floor_prob(const torch::Tensor& p) {
    return p + (p.clamp_min(1e-6) - p).detach();
}

}  // namespace

torch::Tensor focal_loss(const torch::Tensor& p_gt, double gamma) {
    if (p_gt.numel() == 0) return torch::zeros({}, p_gt.options());
    return (torch::pow(1.0 - p_gt, gamma) * -torch::log(floor_prob(p_gt))).mean();
}

torch::Tensor cross_entropy_loss(const torch::Tensor& p_gt) {
    if (p_gt.numel() == 0) return torch::zeros({}, p_gt.options());
    return (-torch::log(floor_prob(p_gt))).mean();
}

torch::Tensor coarse_loss(const torch::Tensor& prob, const torch::Tensor& gt, double gamma, bool focal) {
    if (prob.dim() != 2 || gt.size(0) != prob.size(0)) throw ValidationError("coarse loss shape mismatch");
    auto rows = torch::nonzero(gt >= 0).squeeze(1);
    auto p = prob.index({rows, gt.index_select(0, rows)});
    return focal ? focal_loss(p, gamma) : cross_entropy_loss(p);
}

torch::Tensor refinement_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
    if (pred.size(0) == 0) return torch::zeros({}, pred.options());
    return (pred - gt).pow(2).sum(1).mean();
}

Supervision build_supervision(const torch::Tensor& indices, const torch::Tensor& valid, const torch::Tensor& gt) {
    auto hit = valid.to(torch::kBool) & (indices == gt.unsqueeze(1)) & (gt.unsqueeze(1) >= 0);
    auto pairs = torch::nonzero(hit);  // at most one slot per query: candidate cells are distinct
    return {pairs.select(1, 0).contiguous(), pairs.select(1, 1).contiguous()};
}

}  // namespace cascade_match
