#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tscore/corpus.hpp"

namespace tscore::scorer {

inline constexpr std::uint32_t kDefaultFeatureDim = 1u << 18;

/// Inputs are unit-norm, so this is also the stddev of each initial hidden
/// pre-activation. Larger values make the l2 term dominate the objective
/// long before the NLL has been fitted.
inline constexpr double kHiddenInitStddev = 0.1;

/// Sparse hashed n-gram vector, entries sorted by index with no duplicates.
struct FeatureVector {
  std::uint32_t dim = kDefaultFeatureDim;
  std::vector<std::pair<std::uint32_t, double>> entries;

  bool empty() const noexcept { return entries.empty(); }
  bool operator==(const FeatureVector&) const = default;
};

/// Character 2-4-grams (over code points of the lowercased text) and
/// whitespace-token unigrams, hashed into `dim` buckets, sublinear TF
/// (1 + ln count), L2-normalized. Empty text maps to the zero vector.
FeatureVector featurize(std::string_view text, std::uint32_t dim = kDefaultFeatureDim);

struct HyperParams {
  int hidden_dim = 64;
  int epochs = 50;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  int batch_size = 16;
  std::uint64_t seed = 0;
  std::uint32_t feature_dim = kDefaultFeatureDim;
};

struct TrainingInfo {
  int epochs = 0;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  double l2 = 0.0;
  int batch_size = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Training objective after each epoch.
  std::vector<double> loss_history;
};

/// Feed-forward scorer: h = tanh(A x + a), p = softmax(W h + b).
///
/// The hidden matrix conceptually spans all `feature_dim` hashed buckets.
/// Only buckets observed during training are materialized: column c of
/// `hidden_weights` belongs to bucket `feature_index[c]`, and every other
/// bucket has an all-zero column.
struct ScoringModel {
  std::string prompt_id;
  int max_score = 1;
  std::uint32_t feature_dim = kDefaultFeatureDim;
  std::vector<std::uint32_t> feature_index;  // sorted ascending
  Eigen::MatrixXd hidden_weights;            // d_h x |feature_index|
  Eigen::VectorXd hidden_bias;               // d_h
  Eigen::MatrixXd head_weights;              // (N+1) x d_h
  Eigen::VectorXd head_bias;                 // N+1
  TrainingInfo training;

  int hidden_dim() const noexcept { return static_cast<int>(hidden_bias.size()); }
  int num_classes() const noexcept { return max_score + 1; }
};

struct Prediction {
  std::string answer_id;
  int predicted_score = 0;
  std::vector<double> posterior;
  std::vector<double> embedding;
};

/// Labelled input for the objective. Labels are 0..max_score.
struct Example {
  FeatureVector features;
  int label = 0;
};

/// Gradient with the same shapes as the model parameters.
struct Gradient {
  Eigen::MatrixXd hidden_weights;
  Eigen::VectorXd hidden_bias;
  Eigen::MatrixXd head_weights;
  Eigen::VectorXd head_bias;
};

/// Builds the feature vocabulary from `examples` and draws initial
/// parameters: hidden weights N(0, kHiddenInitStddev^2), head weights
/// N(0, 1/d_h), zero biases.
ScoringModel initialize(const corpus::PromptSpec& prompt, std::span<const Example> examples,
                        const HyperParams& hp);

/// Summed negative log-likelihood over `examples` plus l2 * ||theta||^2
/// over every parameter.
double objective(const ScoringModel& model, std::span<const Example> examples, double l2);

/// Analytic gradient of `objective`.
Gradient gradient(const ScoringModel& model, std::span<const Example> examples, double l2);

/// Mini-batch gradient descent on `objective`. Each step covers one batch's
/// NLL terms and a |batch| / |train_set| share of the penalty. Deterministic
/// given hp.seed.
/// Throws EmptyTrainSetError, PromptMismatchError, RangeError on labels
/// outside the prompt's range, DivergenceError on a non-finite loss.
ScoringModel train(std::span<const corpus::AnswerRecord> train_set,
                   const corpus::PromptSpec& prompt, const HyperParams& hp);

/// Same as `train` on pre-featurized examples.
ScoringModel train_examples(std::span<const Example> examples, const corpus::PromptSpec& prompt,
                            const HyperParams& hp);

/// Throws PromptMismatchError when the record belongs to another prompt.
Prediction predict(const ScoringModel& model, const corpus::AnswerRecord& record);

Prediction predict_features(const ScoringModel& model, const FeatureVector& features,
                            std::string answer_id = {});

/// Index of the largest component; the lowest index wins exact ties.
int argmax_lowest(std::span<const double> values);

std::string model_to_json(const ScoringModel& model);
/// Throws VersionMismatchError on an unknown format version, ParseError on
/// malformed content.
ScoringModel model_from_json(std::string_view text);

inline constexpr int kModelFormatVersion = 1;

}  // namespace tscore::scorer
