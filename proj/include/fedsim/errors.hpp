#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

/// Tensor or sample dimensions disagree with the model spec.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Local training produced a non-finite loss or gradient.
class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Server-side aggregation received unusable client reports.
class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric is not defined for the given input (e.g. a single class).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid run setup: empty pools, bad hyperparameters, bad config keys.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A file on disk violates the format or its invariants.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedsim
