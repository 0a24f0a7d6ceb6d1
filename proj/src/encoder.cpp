#include "cascade_match/encoder.hpp"

#include "cascade_match/error.hpp"

namespace cascade_match {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

torch::Tensor upsample(const torch::Tensor& x, const torch::Tensor& like) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace

int EncoderConfig::channels(int cell) const {
    switch (cell) {
        case 2: return c2;
        case 4: return c4;
        case 8: return c8;
        case 16: return c16;
        default: throw ValidationError("no feature level with cell size " + std::to_string(cell));
    }
}

const torch::Tensor& FeaturePyramid::at(int cell) const {
    auto it = maps.find(cell);
    if (it == maps.end()) throw ValidationError("feature pyramid has no 1/" + std::to_string(cell) + " map");
    return it->second;
}

ResBlockImpl::ResBlockImpl(int in, int out, int stride) {
    conv1 = register_module("conv1", conv(in, out, 3, stride));
    conv2 = register_module("conv2", conv(out, out, 3));
    if (in != out || stride != 1) shortcut = register_module("shortcut", conv(in, out, 1, stride));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto y = conv2(F::gelu(conv1(x)));
    return F::gelu(y + (shortcut ? shortcut(x) : x));
}

PyramidEncoderImpl::PyramidEncoderImpl(const EncoderConfig& cfg, const AttentionConfig& attn) : cfg_(cfg) {
    if (cfg.res_blocks < 1) throw ValidationError("encoder needs at least one residual block per level");
    cells_ = {2, 4, 8};
    if (cfg.level16) cells_.push_back(16);
    stem_ = register_module("stem", conv(1, cfg.c2, 3, 2));
    for (size_t l = 0; l < cells_.size(); ++l) {
        const int out = cfg.channels(cells_[l]);
        const int in = l == 0 ? cfg.c2 : cfg.channels(cells_[l - 1]);
        torch::nn::Sequential seq;
        seq->push_back(ResBlock(in, out, l == 0 ? 1 : 2));
        for (int r = 1; r < cfg.res_blocks; ++r) seq->push_back(ResBlock(out, out, 1));
        levels_.push_back(register_module("level" + std::to_string(cells_[l]), seq));
    }
    for (size_t l = 0; l < cells_.size(); ++l) {
        const int c = cfg.channels(cells_[l]);
        lateral_.push_back(register_module("lateral" + std::to_string(cells_[l]), conv(c, c, 1)));
    }
    for (size_t l = 0; l + 1 < cells_.size(); ++l) {
        const int c = cfg.channels(cells_[l]);
        const int above = cfg.channels(cells_[l + 1]);
        project_.push_back(register_module("project" + std::to_string(cells_[l]), conv(above, c, 1)));
        smooth_.push_back(register_module("smooth" + std::to_string(cells_[l]), conv(c, c, 3)));
    }
    // lateral_ was filled fine to coarse; top_layer() relies on the coarsest being last.
    if (cfg.attention != "none") {
        top_attention_ = register_module(
            "top_attention", SelfAttentionBlock(cfg.channels(cells_.back()), parse_self_variant(cfg.attention), attn));
        if (top_attention_->variant() == SelfVariant::topk)
            throw ValidationError("top-k self-attention is not available inside the encoder");
    }
}

FeaturePyramid PyramidEncoderImpl::forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 1) throw ValidationError("encoder expects [B, 1, H, W] images");
    const int top = cells_.back();
    if (image.size(2) % top != 0 || image.size(3) % top != 0)
        throw ValidationError("image dims must be multiples of " + std::to_string(top));
    std::vector<torch::Tensor> feats;
    auto x = F::gelu(stem_(image * 2.0 - 1.0));
    for (auto& level : levels_) {
        x = level->forward(x);
        feats.push_back(x);
    }
    if (top_attention_) {
        auto& t = feats.back();
        TokenGrid g{t.flatten(2).transpose(1, 2), static_cast<int>(t.size(2)), static_cast<int>(t.size(3))};
        t = top_attention_->forward(g).transpose(1, 2).reshape(t.sizes());
    }
    FeaturePyramid out;
    auto above = lateral_.back()(feats.back());
    out.maps[top] = above;
    for (int l = static_cast<int>(cells_.size()) - 2; l >= 0; --l) {
        auto merged = lateral_[l](feats[l]) + upsample(project_[l](above), feats[l]);
        above = smooth_[l](merged);
        out.maps[cells_[l]] = above;
    }
    return out;
}

LadderFpnImpl::LadderFpnImpl(const EncoderConfig& cfg) : cfg_(cfg) {
    const int w = cfg.ladder_width;
    if (w < 1) throw ValidationError("ladder width must be positive");
    seed_ = register_module("seed", conv(cfg.c8, w, 1));
    fuse4_ = register_module("fuse4", conv(cfg.c4 + w, w, 3));
    out4_ = register_module("out4", conv(cfg.c4 + w, cfg.c4, 1));
    fuse2_ = register_module("fuse2", conv(cfg.c2 + w, w, 3));
    out2_ = register_module("out2", conv(cfg.c2 + w, cfg.c2, 1));
    torch::NoGradGuard guard;
    for (auto* layer : {&out4_, &out2_}) {
        auto& wt = (*layer)->weight;
        const int64_t c = wt.size(0);
        wt.normal_(0.0, 0.01);
        wt.slice(1, 0, c).copy_(torch::eye(c).view({c, c, 1, 1}));
        (*layer)->bias.zero_();
    }
}

FeaturePyramid LadderFpnImpl::forward(const FeaturePyramid& frozen) {
    auto f8 = frozen.at(8).detach();
    auto f4 = frozen.at(4).detach();
    auto f2 = frozen.at(2).detach();
    auto t8 = seed_(f8);
    auto t4 = F::gelu(fuse4_(torch::cat({f4, upsample(t8, f4)}, 1)));
    auto t2 = F::gelu(fuse2_(torch::cat({f2, upsample(t4, f2)}, 1)));
    FeaturePyramid out;
    out.maps[4] = out4_(torch::cat({f4, t4}, 1));
    out.maps[2] = out2_(torch::cat({f2, t2}, 1));
    return out;
}

}  // namespace cascade_match
