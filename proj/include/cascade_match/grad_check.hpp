#pragma once

// Central-difference gradient checks in float64.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace cascade_match {

struct GradCheckEntry {
    std::string tensor;
    int64_t checked = 0;
    double max_abs_error = 0;
    double rel_error = 0;  // max |analytic - numeric| / max(max |analytic|, max |numeric|)
};

struct GradCheckReport {
    std::string op;
    double tolerance = 1e-4;
    std::vector<GradCheckEntry> entries;

    double worst() const;
    bool pass() const { return worst() <= tolerance; }
};

struct GradCheckOptions {
    double step = 1e-3;
    double tolerance = 1e-4;
    int max_entries = 256;  // per tensor, sampled without replacement
    uint64_t seed = 0;
};

/// `loss` must return a float64 scalar that depends only on the current values
/// of `inputs` (float64 tensors with requires_grad).
GradCheckReport grad_check(const std::string& op, const std::function<torch::Tensor()>& loss,
                           const std::vector<std::pair<std::string, torch::Tensor>>& inputs,
                           const GradCheckOptions& opts = {});

/// Names accepted by run_grad_check: self:<variant>, cross:<variant>,
/// candidate_logits, focal, coarse, soft_argmax, refine.
std::vector<std::string> builtin_grad_checks();
GradCheckReport run_grad_check(const std::string& name, const GradCheckOptions& opts = {});

}  // namespace cascade_match
