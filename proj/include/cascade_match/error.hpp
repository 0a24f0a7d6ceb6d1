#pragma once

#include <stdexcept>
#include <string>

namespace cascade_match {

/// Bad input or configuration. The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A robust estimator could not produce a model (too few inliers, degenerate data).
class EstimationFailure : public std::runtime_error {
public:
    explicit EstimationFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cascade_match
