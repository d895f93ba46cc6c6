#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tscore::corpus {

/// A scoring task with integer scores 0..max_score.
struct PromptSpec {
  std::string prompt_id;
  int max_score = 1;
  std::string description;

  int num_classes() const noexcept { return max_score + 1; }
  bool operator==(const PromptSpec&) const = default;
};

struct AnswerRecord {
  std::string answer_id;
  std::string prompt_id;
  std::string text;
  int gold_score = 0;
  std::optional<int> rater2_score;

  bool operator==(const AnswerRecord&) const = default;
};

struct Corpus {
  std::vector<PromptSpec> prompts;
  std::vector<AnswerRecord> records;

  /// Throws RangeError when the prompt is not declared.
  const PromptSpec& prompt(std::string_view prompt_id) const;
  std::vector<AnswerRecord> records_for(std::string_view prompt_id) const;
  bool has_rater2() const;

  bool operator==(const Corpus&) const = default;
};

enum class Format { jsonl, tsv };

Format parse_format(std::string_view name);
std::string_view format_name(Format format);

/// Checks every invariant: max_score >= 1, unique prompt ids, declared
/// prompts, scores in range and answer ids unique within a prompt.
void validate(const Corpus& corpus);

/// Loads answers from `path`; prompts come from the sidecar `prompts.json`
/// in the same directory. Throws ParseError, RangeError or DuplicateIdError.
Corpus load_corpus(const std::filesystem::path& path, Format format);

/// Writes `path` plus the sidecar `prompts.json` next to it. TSV output
/// rejects texts containing tabs or newlines with ConfigError.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, Format format);

std::string prompts_to_json(std::span<const PromptSpec> prompts);
std::vector<PromptSpec> prompts_from_json(std::string_view text);

// Serialization of the answer file body; exposed for in-memory round trips.
std::string records_to_string(std::span<const AnswerRecord> records, Format format);
std::vector<AnswerRecord> records_from_string(std::string_view text, Format format);

/// Train/dev/test partition of one prompt's answers.
struct SplitSpec {
  std::string prompt_id;
  std::vector<std::string> train_ids;
  std::vector<std::string> dev_ids;
  std::vector<std::string> test_ids;
  int fold_id = 0;

  bool operator==(const SplitSpec&) const = default;
};

/// Shuffles the answer ids of a single prompt (sorted first, so record order
/// is irrelevant) with `seed` and cuts them into train_n / dev_n / remainder. Throws InsufficientDataError when
/// train_n + dev_n exceeds the record count, ConfigError on mixed prompts.
SplitSpec make_splits(std::span<const AnswerRecord> records, std::size_t train_n,
                      std::size_t dev_n, std::uint64_t seed);

/// Rotating development folds over a shared train+dev pool.
///
/// The pool holds train_n + dev_n records and is cut into `folds` chunks of
/// dev_n. Fold f uses chunk f as development data and the remaining chunks
/// for training, so train_n must equal (folds - 1) * dev_n when folds > 1.
/// The test ids are identical across folds. folds == 1 reproduces make_splits.
std::vector<SplitSpec> make_fold_splits(std::span<const AnswerRecord> records,
                                        std::size_t train_n, std::size_t dev_n,
                                        std::size_t folds, std::uint64_t seed);

/// Resolves split ids back to records (in id order). Throws RangeError on
/// unknown ids.
std::vector<AnswerRecord> select(std::span<const AnswerRecord> records,
                                 std::span<const std::string> ids);

std::string split_to_json(const SplitSpec& split);
SplitSpec split_from_json(std::string_view text);

/// Per-prompt override of the synthetic noise levels.
struct NoiseProfile {
  double noise_rate = 0.0;
  double rater2_noise_rate = 0.0;
};

struct SynthConfig {
  std::size_t n_prompts = 5;
  std::size_t n_answers = 500;
  int max_score = 3;
  std::size_t vocab_size = 400;
  double noise_rate = 0.1;
  double rater2_noise_rate = 0.2;
  std::uint64_t seed = 0;
  /// When non-empty, prompt i uses profiles[i % size] instead of the
  /// global noise rates.
  std::vector<NoiseProfile> profiles;
};

/// Keyword-template corpus generator.
///
/// Every prompt draws disjoint keyword sets per score from a pseudo-word
/// vocabulary. An answer of true score s contains two or three distinct
/// keywords of s, optionally one keyword of an adjacent score, and filler
/// words. Majority keyword class therefore recovers s exactly. The gold score
/// is the true score flipped to a uniformly random other score with
/// probability noise_rate; rater2 independently corrupts gold with
/// probability rater2_noise_rate.
Corpus synthesize_corpus(const SynthConfig& config);

/// Rule oracle for synthesized corpora: the score whose keyword set has the
/// most hits in the text (lowest score on ties). Regenerates the keyword sets
/// from the config.
std::vector<int> keyword_oracle(const SynthConfig& config, const Corpus& corpus);

}  // namespace tscore::corpus
