#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tscore/calibration.hpp"
#include "tscore/confidence.hpp"
#include "tscore/corpus.hpp"
#include "tscore/scorer.hpp"
#include "tscore/triage.hpp"

namespace tscore::pipeline {

/// Which score goes with the gp confidence.
enum class GpScoreSource { gp, classifier };
GpScoreSource parse_gp_score_source(std::string_view name);
std::string_view gp_score_source_name(GpScoreSource source);

struct RunConfig {
  std::filesystem::path corpus;
  corpus::Format format = corpus::Format::jsonl;
  std::size_t train_n = 200;
  std::size_t dev_n = 50;
  std::size_t folds = 5;
  std::vector<confidence::Method> methods{confidence::Method::posterior,
                                          confidence::Method::trust, confidence::Method::gp};
  std::vector<double> budgets{0.04, 0.08, 0.12, 0.16};
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out = "out";
  triage::Aggregate aggregate = triage::Aggregate::macro;
  GpScoreSource gp_score_source = GpScoreSource::gp;
  double grader_noise = 0.0;
  scorer::HyperParams hyper;
  confidence::GprHyper gpr;
  /// 0 means TRIAGE_SCORE_THREADS or the hardware concurrency.
  std::size_t threads = 0;
};

/// Throws ConfigError on invalid combinations.
void validate(const RunConfig& config);

/// Worker count: config.threads, else TRIAGE_SCORE_THREADS, else hardware.
std::size_t thread_count(const RunConfig& config);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// One trained model with the split it was trained on.
struct FoldModel {
  std::uint64_t seed = 0;
  corpus::SplitSpec split;
  scorer::ScoringModel model;
};

/// Fold models keyed by (prompt_id, seed), folds in fold order.
using ModelSet = std::map<std::pair<std::string, std::uint64_t>, std::vector<FoldModel>>;

ModelSet train_models(const corpus::Corpus& corpus, const RunConfig& config);

/// Confidence, score and gold for every answer of `eval`, per method.
std::map<confidence::Method, std::vector<triage::ScoredItem>> score_answers(
    const corpus::Corpus& corpus, const FoldModel& fold,
    std::span<const corpus::AnswerRecord> eval, const RunConfig& config);

struct PolicyKey {
  std::string prompt_id;
  confidence::Method method;
  double target_e;
  std::uint64_t seed;
  auto operator<=>(const PolicyKey&) const = default;
};

using PolicySet = std::map<PolicyKey, calibration::ThresholdPolicy>;

/// Pools the development predictions of every fold and calibrates one
/// threshold per (prompt, method, budget, seed).
PolicySet calibrate(const corpus::Corpus& corpus, const ModelSet& models, const RunConfig& config);

struct CurvePoint {
  confidence::Method method;
  double fraction;
  double rmse;
};

struct ConfidenceDump {
  std::string prompt_id;
  std::uint64_t seed;
  confidence::Method method;
  std::vector<triage::ScoredItem> items;
};

struct TriageReport {
  std::vector<triage::TriageOutcome> outcomes;  // sorted by (prompt, method, e, seed)
  std::vector<CurvePoint> curves;               // aggregated per config.aggregate
  std::vector<triage::SummaryRow> summary;
  std::vector<ConfidenceDump> confidences;
  std::optional<triage::IgaReport> iga;         // present when the corpus has rater2
};

/// Applies the policies to the test answers of each (prompt, seed). The
/// test predictions come from the fold-0 model.
TriageReport run_triage(const corpus::Corpus& corpus, const ModelSet& models,
                        const PolicySet& policies, const RunConfig& config);

/// Fraction grid of the top-confidence RMSE curve: 0.1, 0.2, ..., 1.0.
std::vector<double> curve_fractions();

// ---- File layout: models/, policies/, reports/ under config.out ----

std::string model_file_name(const std::string& prompt_id, std::uint64_t seed, int fold);
std::string policy_file_name(const PolicyKey& key);

void write_models(const ModelSet& models, const RunConfig& config);
/// Loads every model and split for the prompts and seeds of `config`. Throws
/// tscore::Error when a file is missing.
ModelSet load_models(const corpus::Corpus& corpus, const RunConfig& config);

void write_policies(const PolicySet& policies, const RunConfig& config);
PolicySet load_policies(const corpus::Corpus& corpus, const RunConfig& config);

std::string outcomes_csv(std::span<const triage::TriageOutcome> outcomes);
std::string curves_csv(std::span<const CurvePoint> curves);
std::string summary_csv(std::span<const triage::SummaryRow> rows, triage::Aggregate mode);
std::string confidence_csv(const ConfidenceDump& dump);
std::string iga_csv(const triage::IgaReport& report);
std::string iga_prompts_csv(const triage::IgaReport& report);

void write_reports(const TriageReport& report, const RunConfig& config);

// ---- Commands ----

corpus::Corpus cmd_synth(const corpus::SynthConfig& config, const std::filesystem::path& out_dir,
                         corpus::Format format = corpus::Format::jsonl);
ModelSet cmd_train(const RunConfig& config);
PolicySet cmd_calibrate(const RunConfig& config);
TriageReport cmd_triage(const RunConfig& config);
/// train + calibrate + triage.
TriageReport cmd_run(const RunConfig& config);

}  // namespace tscore::pipeline
