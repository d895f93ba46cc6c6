#pragma once

#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tscore/confidence.hpp"

namespace tscore::calibration {

/// One scored answer in the final result set. Human-routed pairs take the
/// human score, which is assumed exact, so they contribute no error.
struct FinalPair {
  bool automatic = false;
  int predicted = 0;
  int gold = 0;
};

/// sqrt(sum over automatic pairs of (predicted - gold)^2 / |pairs|).
/// Throws EmptyError.
double final_rmse(std::span<const FinalPair> pairs);

struct DevItem {
  double confidence = 0.0;
  int predicted = 0;
  int gold = 0;

  bool operator==(const DevItem&) const = default;
};

/// Acceptable RMSE of the combined machine + human result.
struct ErrBudget {
  double value = 0.0;
};

inline constexpr double kRouteAll = std::numeric_limits<double>::infinity();

struct ThresholdPolicy {
  std::string prompt_id;
  confidence::Method method = confidence::Method::posterior;
  double tau = kRouteAll;  // +inf routes every answer to a human
  double target_e = 0.0;
  double dev_coverage = 0.0;
  double dev_err = 0.0;
  std::vector<int> pooled_fold_ids;
};

/// Confidence >= tau is scored automatically. NaN confidence never is, and
/// tau = +inf routes everything to humans.
bool is_automatic(double confidence, double tau);

/// Largest development coverage whose final RMSE stays within the budget.
///
/// Candidate thresholds are the distinct finite confidences plus +inf. Since
/// every automatic item adds a non-negative squared error over a fixed
/// denominator, the error only grows as tau decreases, so a single
/// descending sweep stops at the first violating candidate.
/// Throws EmptyError on empty input, ConfigError on a negative budget.
ThresholdPolicy estimate_threshold(std::span<const DevItem> dev, ErrBudget budget);

/// Reference search: evaluates every candidate independently.
ThresholdPolicy estimate_threshold_exhaustive(std::span<const DevItem> dev, ErrBudget budget);

/// Concatenates development folds.
std::vector<DevItem> pool_dev_folds(std::span<const std::vector<DevItem>> folds);

/// JSON object with tau = +inf written as the string "inf".
std::string policy_to_json(const ThresholdPolicy& policy);
ThresholdPolicy policy_from_json(std::string_view text);

}  // namespace tscore::calibration
