#include "cascade_match/refinement.hpp"

#include "cascade_match/error.hpp"

#include <cmath>

namespace cascade_match {

namespace F = torch::nn::functional;

namespace {

/// [w*w, 2] (dx, dy) offsets in row-major patch order.
torch::Tensor offset_grid(int window, const torch::TensorOptions& opts) {
    auto r = torch::arange(window, opts) - static_cast<double>(window / 2);
    auto dy = r.repeat_interleave(window);
    auto dx = r.repeat({window});
    return torch::stack({dx, dy}, 1);
}

}  // namespace

torch::Tensor spatial_expectation(const torch::Tensor& weights, int window) {
    if (weights.size(-1) != window * window) throw ValidationError("weights do not cover the patch");
    return torch::matmul(weights, offset_grid(window, weights.options()));
}

torch::Tensor soft_argmax(const torch::Tensor& logits, int window) {
    return spatial_expectation(torch::softmax(logits, -1), window);
}

torch::Tensor sample_patches(const torch::Tensor& map, const torch::Tensor& points, int cell, int window) {
    if (map.dim() != 4 || map.size(0) != 1) throw ValidationError("sample_patches expects a [1, C, H, W] map");
    const int64_t m = points.size(0);
    const int64_t h = map.size(2), w = map.size(3);
    // Pixel x lies at map coordinate (x - (cell - 1) / 2) / cell.
    auto u = (points.to(map.scalar_type()) - (cell - 1) / 2.0) / static_cast<double>(cell);  // [M, 2]
    auto pos = u.unsqueeze(1) + offset_grid(window, map.options()).unsqueeze(0);          // [M, w*w, 2]
    auto gx = pos.select(2, 0) * (w > 1 ? 2.0 / (w - 1) : 0.0) - (w > 1 ? 1.0 : 0.0);
    auto gy = pos.select(2, 1) * (h > 1 ? 2.0 / (h - 1) : 0.0) - (h > 1 ? 1.0 : 0.0);
    auto grid = torch::stack({gx, gy}, -1).unsqueeze(0);  // [1, M, w*w, 2]
    auto out = F::grid_sample(map, grid,
                              F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(true));
    return out.squeeze(0).permute({1, 2, 0}).reshape({m, window * window, map.size(1)});
}

FineRefinerImpl::FineRefinerImpl(int channels, int heads, int window) : window_(window) {
    if (window < 3 || window % 2 == 0) throw ValidationError("refinement window must be odd and >= 3");
    AttentionConfig cfg;
    cfg.heads = heads;
    self_ = register_module("self", SelfAttentionBlock(channels, SelfVariant::global, cfg));
    cross_ = register_module("cross", CrossAttentionBlock(channels, CrossVariant::global, heads));
}

torch::Tensor FineRefinerImpl::correlation(const torch::Tensor& src_patch, const torch::Tensor& tgt_patch) {
    const int64_t m = src_patch.size(0);
    auto x = torch::cat({src_patch, tgt_patch}, 0);  // [2M, w*w, C]
    x = self_->forward(TokenGrid{x, window_, window_});
    auto other = torch::cat({x.slice(0, m), x.slice(0, 0, m)}, 0);
    x = cross_->forward(x, other);
    auto center = x.slice(0, 0, m).select(1, window_ * window_ / 2);  // [M, C]
    auto tgt = x.slice(0, m);                                          // [M, w*w, C]
    const double scale = 1.0 / std::sqrt(static_cast<double>(x.size(2)));
    return torch::einsum("mc,mkc->mk", {center, tgt}) * scale;
}

torch::Tensor FineRefinerImpl::forward(const torch::Tensor& feat_a, const torch::Tensor& feat_b,
                                       const torch::Tensor& src, const torch::Tensor& tgt) {
    if (src.size(0) == 0) return torch::zeros({0, 2}, feat_a.options());
    auto sp = sample_patches(feat_a, src, 2, window_);
    auto tp = sample_patches(feat_b, tgt, 2, window_);
    return soft_argmax(correlation(sp, tp), window_);
}

}  // namespace cascade_match
