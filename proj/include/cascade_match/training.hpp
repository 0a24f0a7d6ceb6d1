#pragma once

// Staged training: coarse-only, cascade to 1/4, cascade to 1/2, and
// parameter-efficient finetuning with a frozen encoder and coarse stage.

#include "cascade_match/matcher.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace cascade_match {

enum class TrainStage { coarse_only, cascade_4c, cascade_2c, pmt };

TrainStage parse_train_stage(const std::string& s);
std::string train_stage_name(TrainStage s);

/// Active stage cells for a training stage of the given model.
std::vector<int> stage_scales(TrainStage s, const ModelConfig& cfg);

/// Splits `total` steps over coarse_only / cascade_4c / cascade_2c as 1:2:1.
std::map<TrainStage, int> progressive_schedule(int total);

struct TrainConfig {
    TrainStage stage = TrainStage::coarse_only;
    int steps = 100;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double min_lr_ratio = 0.05;
    int warmup = 10;
    double grad_clip = 1.0;
    uint64_t seed = 0;
    double gamma = 2.0;
    bool focal = true;
    std::map<std::string, double> weights;
    int refine_samples = 512;
    std::string init_checkpoint;  // required for pmt
};

/// Cosine decay to lr * min_lr_ratio after a linear warmup.
double learning_rate(const TrainConfig& cfg, int step);

/// Named parameters split into trainable and frozen sets by name prefix.
class ParameterRegistry {
public:
    ParameterRegistry(torch::nn::Module& model, const std::vector<std::string>& frozen_prefixes);

    std::vector<torch::Tensor> trainable() const;
    std::vector<torch::Tensor> frozen() const;
    const std::vector<std::string>& frozen_names() const { return frozen_names_; }
    int64_t trainable_count() const;  // scalar entries
    int64_t frozen_count() const;
    /// FNV-1a over names and raw bytes of the frozen tensors.
    uint64_t frozen_hash() const;

private:
    std::vector<std::string> trainable_names_, frozen_names_;
    std::vector<torch::Tensor> trainable_, frozen_;
};

uint64_t tensor_hash(const std::vector<std::pair<std::string, torch::Tensor>>& tensors);

/// Frozen name prefixes for a stage (pmt: encoder and coarse stage).
std::vector<std::string> frozen_prefixes(TrainStage s);

struct TrainLogEntry {
    int step = 0;
    double lr = 0;
    double total = 0;
    std::map<std::string, double> parts;
    std::map<std::string, int64_t> counts;
    double seconds = 0;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    uint64_t frozen_hash_before = 0;
    uint64_t frozen_hash_after = 0;
    int64_t trainable_params = 0;
    int64_t frozen_params = 0;
    size_t optimizer_states = 0;           // parameter tensors holding optimizer state
    size_t frozen_with_optimizer_state = 0;
    size_t frozen_with_grad = 0;
};

/// Cached tensors for one training pair.
struct TrainSample {
    torch::Tensor images;  // [2, 1, H, W]
    TrainTargets targets;
};

std::vector<TrainSample> prepare_samples(const std::vector<SyntheticPair>& pairs, const ModelConfig& cfg);

using TrainCallback = std::function<void(const TrainLogEntry&, CascadeMatcher&)>;

/// Runs cfg.steps optimizer steps of cfg.stage. Loads cfg.init_checkpoint
/// (non-strict) first when set. Writes one JSON object per step to `log` if given.
TrainResult train(CascadeMatcher& model, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                  std::ostream* log = nullptr, const TrainCallback& callback = {});

/// Trailing moving average with the given window.
std::vector<double> moving_average(const std::vector<double>& x, int window);

/// First step at which the moving average of `losses` comes within `fraction`
/// of `reference` (relative). -1 if it never does.
int plateau_step(const std::vector<double>& losses, double reference, int window, double fraction);

}  // namespace cascade_match
