#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tscore/calibration.hpp"
#include "tscore/confidence.hpp"
#include "tscore/corpus.hpp"

namespace tscore::triage {

/// A test answer with its confidence and predicted score.
struct ScoredItem {
  std::string answer_id;
  double confidence = 0.0;
  int predicted = 0;
  int gold = 0;
};

struct AutoPair {
  std::string answer_id;
  int predicted = 0;
  int gold = 0;
};

struct HumanPair {
  std::string answer_id;
  int human_score = 0;
  int gold = 0;
};

struct TriageOutcome {
  std::string prompt_id;
  confidence::Method method = confidence::Method::posterior;
  double target_e = 0.0;
  std::uint64_t seed = 0;
  std::vector<AutoPair> auto_pairs;
  std::vector<HumanPair> human_pairs;
  double coverage = 0.0;
  double final_rmse = 0.0;
  std::size_t n_total = 0;
};

/// Grades a routed answer. The default grader returns the gold score.
using HumanGrader = std::function<int(const ScoredItem&)>;

HumanGrader perfect_grader();

/// Replaces the gold score by a uniformly drawn different score with
/// probability `rate`. The draw is a pure function of (seed, answer_id), so
/// the result does not depend on call order.
HumanGrader noisy_grader(double rate, int max_score, std::uint64_t seed);

/// Splits test answers by the policy threshold and scores the final set
/// against gold. With the perfect grader `final_rmse` equals
/// calibration::final_rmse of the partition. Throws MethodMismatchError when
/// the policy was calibrated for another method, EmptyError on no items.
TriageOutcome run_triage(const calibration::ThresholdPolicy& policy, confidence::Method method,
                         std::span<const ScoredItem> items,
                         const HumanGrader& grader = perfect_grader());

/// RMSE over the ceil(fraction * n) most confident items only. Ties in
/// confidence are ordered by answer_id. Throws EmptyError, RangeError for a
/// fraction outside (0, 1].
double rmse_at_top_coverage(std::span<const ScoredItem> items, double fraction);

/// Quadratic weighted kappa between two ratings in 0..max_score. Returns 1
/// when observed and expected disagreement are both zero. Throws
/// LengthMismatchError, RangeError.
double qwk(std::span<const int> a, std::span<const int> b, int max_score);

enum class IgaGroup { higher, lower };
std::string_view group_name(IgaGroup group);

struct PromptIga {
  std::string prompt_id;
  double iga = 0.0;
  IgaGroup group = IgaGroup::lower;
};

struct IgaGroupStat {
  IgaGroup group = IgaGroup::lower;
  confidence::Method method = confidence::Method::posterior;
  double target_e = 0.0;
  std::size_t n_prompts = 0;
  std::size_t n_outcomes = 0;
  double mean_coverage = 0.0;
  double mean_final_rmse = 0.0;
};

struct IgaReport {
  std::vector<PromptIga> prompts;  // sorted by prompt_id
  double mean_iga = 0.0;
  /// True when one of the groups is empty.
  bool degenerate = false;
  /// Sorted by (group, method, target_e).
  std::vector<IgaGroupStat> groups;
};

/// Per-prompt QWK(gold, rater2) over answers with a second rating and a
/// split at the mean: strictly above goes to the higher group. Throws
/// InsufficientRaterDataError with fewer than two such prompts.
IgaReport iga_analysis(const corpus::Corpus& corpus, std::span<const TriageOutcome> outcomes);

enum class Aggregate { macro, pooled };
Aggregate parse_aggregate(std::string_view name);
std::string_view aggregate_name(Aggregate mode);

struct SummaryRow {
  confidence::Method method = confidence::Method::posterior;
  double target_e = 0.0;
  std::size_t n_seeds = 0;
  double mean_coverage = 0.0;
  double sd_coverage = 0.0;
  double mean_final_rmse = 0.0;
  double sd_final_rmse = 0.0;
};

/// Per seed, combines prompts either by averaging their metrics (macro) or
/// by pooling their answers (pooled); then reports mean and sample standard
/// deviation across seeds. Rows sorted by (method, target_e).
std::vector<SummaryRow> summarize(std::span<const TriageOutcome> outcomes, Aggregate mode);

}  // namespace tscore::triage
