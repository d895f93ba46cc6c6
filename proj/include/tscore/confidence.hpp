#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "tscore/corpus.hpp"
#include "tscore/scorer.hpp"

namespace tscore::confidence {

enum class Method { posterior, trust, gp };

std::string_view method_name(Method method);
/// Throws ConfigError on unknown names.
Method parse_method(std::string_view name);
inline constexpr Method kAllMethods[] = {Method::posterior, Method::trust, Method::gp};

/// Higher value means a more reliable prediction.
struct ConfidenceScore {
  std::string answer_id;
  Method method = Method::posterior;
  double value = 0.0;
};

/// Probability of the predicted score.
ConfidenceScore posterior_confidence(const scorer::Prediction& pred);

/// Training embeddings grouped by gold score.
class ReferenceBank {
 public:
  ReferenceBank(int max_score, int dim, std::string source_model = {});

  /// Throws RangeError on a label outside 0..max_score and
  /// DimensionMismatchError on a wrong embedding size.
  void add(int label, std::span<const double> embedding);

  int max_score() const noexcept { return max_score_; }
  int dim() const noexcept { return dim_; }
  const std::string& source_model() const noexcept { return source_; }
  std::size_t size() const noexcept { return total_; }
  bool empty() const noexcept { return total_ == 0; }
  /// Embeddings of score s, one row per training answer.
  const std::vector<std::vector<double>>& cluster(int score) const;

 private:
  int max_score_;
  int dim_;
  std::string source_;
  std::vector<std::vector<std::vector<double>>> clusters_;
  std::size_t total_ = 0;
};

/// Embeds every training answer with `model` and files it under its gold
/// score. Throws EmptyTrainSetError on an empty set.
ReferenceBank build_reference_bank(const scorer::ScoringModel& model,
                                   std::span<const corpus::AnswerRecord> train_set);

/// d_c / (d_p + d_c) with d_p the distance to the nearest embedding of the
/// predicted score and d_c to the nearest embedding of any other score.
/// Degenerate cases: no other-score embeddings -> 1, no predicted-score
/// embeddings -> 0, d_p = d_c = 0 -> 0.5. Throws EmptyBankError.
ConfidenceScore trust_score(const scorer::Prediction& pred, const ReferenceBank& bank);

struct GprHyper {
  /// Unset means the median pairwise distance of the training embeddings.
  std::optional<double> lengthscale;
  double signal_var = 1.0;
  double noise_var = 0.1;
  double jitter = 1e-8;
};

/// Exact GP regression with an RBF kernel on standardized targets.
struct GprModel {
  Eigen::MatrixXd inputs;   // k x d, one training embedding per row
  Eigen::VectorXd targets;  // standardized
  double lengthscale = 1.0;
  double signal_var = 1.0;
  double noise_var = 0.1;
  double jitter = 0.0;      // diagonal jitter that made the factorization succeed
  Eigen::MatrixXd chol;     // lower factor of K + (noise_var + jitter) I
  Eigen::VectorXd alpha;    // (K + (noise_var + jitter) I)^-1 targets
  double target_mean = 0.0;
  double target_scale = 1.0;

  double kernel(const Eigen::Ref<const Eigen::VectorXd>& a,
                const Eigen::Ref<const Eigen::VectorXd>& b) const;
};

struct GprPosterior {
  double mean = 0.0;      // in target units
  double variance = 0.0;  // latent variance in standardized units, >= 0
  double stddev = 0.0;    // sqrt(variance) in target units
};

/// Throws ConfigError on non-positive hyperparameters, EmptyTrainSetError on
/// empty input, NumericalError when the factorization fails even after
/// raising the jitter tenfold up to 1e-4.
GprModel fit_gpr_points(const Eigen::MatrixXd& inputs, std::span<const double> targets,
                        const GprHyper& hp);

/// Fits on the embeddings `model` produces for the training answers, with
/// their gold scores as targets.
GprModel fit_gpr(const scorer::ScoringModel& model,
                 std::span<const corpus::AnswerRecord> train_set, const GprHyper& hp);

/// Throws DimensionMismatchError on a wrong query size.
GprPosterior gp_posterior(const GprModel& gpr, std::span<const double> query);

/// Median of all pairwise Euclidean distances between rows; 1 when fewer
/// than two rows or a zero median.
double median_pairwise_distance(const Eigen::MatrixXd& points);

struct GpPrediction {
  int gp_score = 0;
  ConfidenceScore confidence;
};

/// Clip-then-round-half-up score from the predictive mean, confidence
/// 1 / (1 + stddev).
GpPrediction gp_predict(const GprModel& gpr, const scorer::Prediction& pred,
                        const corpus::PromptSpec& prompt);

int round_score(double mean, int max_score);

}  // namespace tscore::confidence
