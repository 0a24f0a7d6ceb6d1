#include "cascade_match/training.hpp"

#include "cascade_match/checkpoint.hpp"
#include "cascade_match/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

namespace cascade_match {

TrainStage parse_train_stage(const std::string& s) {
    if (s == "coarse_only") return TrainStage::coarse_only;
    if (s == "cascade_4c") return TrainStage::cascade_4c;
    if (s == "cascade_2c") return TrainStage::cascade_2c;
    if (s == "pmt") return TrainStage::pmt;
    throw ValidationError("unknown training stage '" + s + "'");
}

std::string train_stage_name(TrainStage s) {
    switch (s) {
        case TrainStage::coarse_only: return "coarse_only";
        case TrainStage::cascade_4c: return "cascade_4c";
        case TrainStage::cascade_2c: return "cascade_2c";
        case TrainStage::pmt: return "pmt";
    }
    return "?";
}

std::vector<int> stage_scales(TrainStage s, const ModelConfig& cfg) {
    const auto cells = cfg.cells();
    std::vector<int> out;
    for (int c : cells) {
        if (s == TrainStage::coarse_only && !out.empty()) break;
        if (s == TrainStage::cascade_4c && c < 4) break;
        out.push_back(c);
    }
    return out;
}

std::map<TrainStage, int> progressive_schedule(int total) {
    const int a = total / 4;
    const int b = total / 2;
    return {{TrainStage::coarse_only, a}, {TrainStage::cascade_4c, b}, {TrainStage::cascade_2c, total - a - b}};
}

double learning_rate(const TrainConfig& cfg, int step) {
    if (step < cfg.warmup) return cfg.lr * (step + 1) / cfg.warmup;
    const int span = std::max(1, cfg.steps - cfg.warmup);
    const double t = std::clamp(static_cast<double>(step - cfg.warmup) / span, 0.0, 1.0);
    return cfg.lr * (cfg.min_lr_ratio + (1 - cfg.min_lr_ratio) * 0.5 * (1 + std::cos(std::numbers::pi * t)));
}

std::vector<std::string> frozen_prefixes(TrainStage s) {
    if (s == TrainStage::pmt) return {"encoder.", "coarse."};
    return {};
}

ParameterRegistry::ParameterRegistry(torch::nn::Module& model, const std::vector<std::string>& prefixes) {
    for (const auto& p : model.named_parameters()) {
        const bool frozen = std::any_of(prefixes.begin(), prefixes.end(),
                                        [&](const std::string& pre) { return p.key().rfind(pre, 0) == 0; });
        if (frozen) {
            frozen_names_.push_back(p.key());
            frozen_.push_back(p.value());
        } else {
            trainable_names_.push_back(p.key());
            trainable_.push_back(p.value());
        }
    }
}

std::vector<torch::Tensor> ParameterRegistry::trainable() const { return trainable_; }
std::vector<torch::Tensor> ParameterRegistry::frozen() const { return frozen_; }

int64_t ParameterRegistry::trainable_count() const {
    int64_t n = 0;
    for (const auto& t : trainable_) n += t.numel();
    return n;
}

int64_t ParameterRegistry::frozen_count() const {
    int64_t n = 0;
    for (const auto& t : frozen_) n += t.numel();
    return n;
}

uint64_t tensor_hash(const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : tensors) {
        mix(name.data(), name.size());
        auto c = t.detach().contiguous().cpu();
        mix(c.data_ptr(), c.numel() * c.element_size());
    }
    return h;
}

uint64_t ParameterRegistry::frozen_hash() const {
    std::vector<std::pair<std::string, torch::Tensor>> named;
    for (size_t i = 0; i < frozen_.size(); ++i) named.emplace_back(frozen_names_[i], frozen_[i]);
    return tensor_hash(named);
}

std::vector<TrainSample> prepare_samples(const std::vector<SyntheticPair>& pairs, const ModelConfig& cfg) {
    std::vector<TrainSample> out;
    out.reserve(pairs.size());
    const int multiple = cfg.encoder.coarsest();
    for (const auto& p : pairs) {
        const int h = std::max(p.image_a.height, p.image_b.height);
        const int w = std::max(p.image_a.width, p.image_b.width);
        TrainSample s;
        s.images = torch::cat({image_tensor(p.image_a, multiple, h, w), image_tensor(p.image_b, multiple, h, w)}, 0);
        s.targets = make_targets(p, cfg.cells(), static_cast<int>(s.images.size(3)), static_cast<int>(s.images.size(2)));
        out.push_back(std::move(s));
    }
    return out;
}

TrainResult train(CascadeMatcher& model, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                  std::ostream* log, const TrainCallback& callback) {
    if (samples.empty()) throw ValidationError("training needs at least one pair");
    if (cfg.steps < 0) throw ValidationError("steps must be non-negative");
    if (cfg.lr <= 0) throw ValidationError("learning rate must be positive");
    if (cfg.stage == TrainStage::pmt) {
        if (cfg.init_checkpoint.empty()) throw ValidationError("pmt training needs an initial checkpoint");
        if (!model->config().ladder) throw ValidationError("pmt training needs a model with the ladder enabled");
    }
    if (!cfg.init_checkpoint.empty()) load_weights(model, cfg.init_checkpoint, true);

    const auto prefixes = frozen_prefixes(cfg.stage);
    ParameterRegistry registry(*model, prefixes);
    for (auto& t : registry.frozen()) t.set_requires_grad(false);
    for (auto& t : registry.trainable()) t.set_requires_grad(true);
    if (registry.trainable().empty()) throw ValidationError("no trainable parameters");

    TrainResult result;
    result.trainable_params = registry.trainable_count();
    result.frozen_params = registry.frozen_count();
    result.frozen_hash_before = registry.frozen_hash();

    torch::optim::AdamW opt(registry.trainable(),
                            torch::optim::AdamWOptions(cfg.lr).weight_decay(cfg.weight_decay));

    TrainMode mode;
    mode.scales = stage_scales(cfg.stage, model->config());
    mode.frozen_coarse = cfg.stage == TrainStage::pmt;
    mode.gamma = cfg.gamma;
    mode.focal = cfg.focal;
    mode.weights = cfg.weights;
    mode.refine_samples = cfg.refine_samples;

    std::mt19937_64 rng(cfg.seed);
    std::vector<size_t> order(samples.size());
    size_t cursor = order.size();
    model->train();

    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        const auto& sample = samples[order[cursor++]];
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = learning_rate(cfg, step);
        for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

        mode.seed = cfg.seed * 1000003ull + static_cast<uint64_t>(step);
        opt.zero_grad();
        auto terms = model->training_loss(sample.images, sample.targets, mode);
        if (!std::isfinite(terms.total.item<double>())) throw std::runtime_error("non-finite loss at step " + std::to_string(step));
        if (terms.total.requires_grad()) {
            terms.total.backward();
            if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(registry.trainable(), cfg.grad_clip);
            opt.step();
        }

        TrainLogEntry entry;
        entry.step = step;
        entry.lr = lr;
        entry.total = terms.total.item<double>();
        for (const auto& [name, v] : terms.parts) entry.parts[name] = v.item<double>();
        entry.counts = terms.counts;
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (log) {
            nlohmann::json j = {{"step", entry.step}, {"stage", train_stage_name(cfg.stage)}, {"lr", entry.lr},
                                {"loss", entry.total}, {"terms", entry.parts}, {"counts", entry.counts},
                                {"seconds", entry.seconds}};
            *log << j.dump() << '\n';
            log->flush();
        }
        if (callback) callback(entry, model);
        result.log.push_back(std::move(entry));
    }

    std::set<const void*> frozen_ptrs;
    for (const auto& t : registry.frozen()) {
        frozen_ptrs.insert(t.unsafeGetTensorImpl());
        if (t.grad().defined()) ++result.frozen_with_grad;
    }
    for (const auto& kv : opt.state()) {
        ++result.optimizer_states;
        if (frozen_ptrs.count(kv.first)) ++result.frozen_with_optimizer_state;
    }
    result.frozen_hash_after = registry.frozen_hash();
    for (auto& t : registry.frozen()) t.set_requires_grad(true);
    model->eval();
    return result;
}

std::vector<double> moving_average(const std::vector<double>& x, int window) {
    if (window < 1) throw ValidationError("moving-average window must be positive");
    std::vector<double> out(x.size());
    double sum = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sum += x[i];
        if (i >= static_cast<size_t>(window)) sum -= x[i - window];
        out[i] = sum / static_cast<double>(std::min<size_t>(i + 1, window));
    }
    return out;
}

int plateau_step(const std::vector<double>& losses, double reference, int window, double fraction) {
    const auto ma = moving_average(losses, window);
    for (size_t i = static_cast<size_t>(window) - 1; i < ma.size(); ++i)
        if (ma[i] <= reference * (1 + fraction)) return static_cast<int>(i);
    return -1;
}

}  // namespace cascade_match
