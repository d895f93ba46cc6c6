#include "tscore/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tscore/errors.hpp"

namespace tscore::confidence {

std::string_view method_name(Method method) {
  switch (method) {
    case Method::posterior:
      return "posterior";
    case Method::trust:
      return "trust";
    case Method::gp:
      return "gp";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (const auto m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown confidence method '" + std::string(name) + "'");
}

ConfidenceScore posterior_confidence(const scorer::Prediction& pred) {
  const auto s = static_cast<std::size_t>(pred.predicted_score);
  return {pred.answer_id, Method::posterior, s < pred.posterior.size() ? pred.posterior[s] : 0.0};
}

// ---------------------------------------------------------------------------
// Trust score

ReferenceBank::ReferenceBank(int max_score, int dim, std::string source_model)
    : max_score_(max_score),
      dim_(dim),
      source_(std::move(source_model)),
      clusters_(static_cast<std::size_t>(max_score + 1)) {
  if (max_score < 1) throw RangeError("reference bank needs max_score >= 1");
}

void ReferenceBank::add(int label, std::span<const double> embedding) {
  if (label < 0 || label > max_score_) {
    throw RangeError("cluster label " + std::to_string(label) + " outside 0.." +
                     std::to_string(max_score_));
  }
  if (static_cast<int>(embedding.size()) != dim_) {
    throw DimensionMismatchError("embedding of size " + std::to_string(embedding.size()) +
                                 " in a bank of dimension " + std::to_string(dim_));
  }
  clusters_[static_cast<std::size_t>(label)].emplace_back(embedding.begin(), embedding.end());
  ++total_;
}

const std::vector<std::vector<double>>& ReferenceBank::cluster(int score) const {
  return clusters_.at(static_cast<std::size_t>(score));
}

ReferenceBank build_reference_bank(const scorer::ScoringModel& model,
                                   std::span<const corpus::AnswerRecord> train_set) {
  if (train_set.empty()) throw EmptyTrainSetError("reference bank needs training answers");
  ReferenceBank bank(model.max_score, model.hidden_dim(),
                     model.prompt_id + "#seed" + std::to_string(model.training.seed));
  for (const auto& r : train_set) bank.add(r.gold_score, scorer::predict(model, r).embedding);
  return bank;
}

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace

ConfidenceScore trust_score(const scorer::Prediction& pred, const ReferenceBank& bank) {
  if (bank.empty()) throw EmptyBankError("trust score against an empty reference bank");
  if (static_cast<int>(pred.embedding.size()) != bank.dim()) {
    throw DimensionMismatchError("embedding of size " + std::to_string(pred.embedding.size()) +
                                 " against a bank of dimension " + std::to_string(bank.dim()));
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  double d_p = inf;
  double d_c = inf;
  for (int s = 0; s <= bank.max_score(); ++s) {
    double& target = s == pred.predicted_score ? d_p : d_c;
    for (const auto& h : bank.cluster(s)) target = std::min(target, distance(pred.embedding, h));
  }
  double value;
  if (d_c == inf) {
    value = 1.0;
  } else if (d_p == inf) {
    value = 0.0;
  } else if (d_p + d_c == 0.0) {
    value = 0.5;
  } else {
    value = d_c / (d_p + d_c);
  }
  return {pred.answer_id, Method::trust, value};
}

// ---------------------------------------------------------------------------
// Gaussian process regression

double GprModel::kernel(const Eigen::Ref<const Eigen::VectorXd>& a,
                        const Eigen::Ref<const Eigen::VectorXd>& b) const {
  return signal_var * std::exp(-(a - b).squaredNorm() / (2.0 * lengthscale * lengthscale));
}

double median_pairwise_distance(const Eigen::MatrixXd& points) {
  const auto k = points.rows();
  if (k < 2) return 1.0;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(k * (k - 1) / 2));
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) d.push_back((points.row(i) - points.row(j)).norm());
  }
  const auto mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  double median = d[mid];
  if (d.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return median > 0.0 ? median : 1.0;
}

GprModel fit_gpr_points(const Eigen::MatrixXd& inputs, std::span<const double> targets,
                        const GprHyper& hp) {
  if (inputs.rows() == 0) throw EmptyTrainSetError("GP regression needs training points");
  if (static_cast<Eigen::Index>(targets.size()) != inputs.rows()) {
    throw DimensionMismatchError("GP regression: " + std::to_string(targets.size()) +
                                 " targets for " + std::to_string(inputs.rows()) + " inputs");
  }
  const auto positive = [](double x) { return x > 0.0 && std::isfinite(x); };
  if ((hp.lengthscale && !positive(*hp.lengthscale)) || !positive(hp.signal_var) ||
      !positive(hp.noise_var) || !positive(hp.jitter)) {
    throw ConfigError("GP hyperparameters must be positive and finite");
  }

  GprModel gp;
  gp.inputs = inputs;
  gp.signal_var = hp.signal_var;
  gp.noise_var = hp.noise_var;
  gp.lengthscale = hp.lengthscale ? *hp.lengthscale : median_pairwise_distance(inputs);

  const auto k = inputs.rows();
  const Eigen::Map<const Eigen::VectorXd> y(targets.data(), k);
  gp.target_mean = y.mean();
  const double var = (y.array() - gp.target_mean).square().mean();
  gp.target_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  gp.targets = (y.array() - gp.target_mean) / gp.target_scale;

  Eigen::MatrixXd gram(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    gram(i, i) = gp.signal_var;
    for (Eigen::Index j = 0; j < i; ++j) {
      gram(i, j) = gram(j, i) = gp.kernel(inputs.row(i).transpose(), inputs.row(j).transpose());
    }
  }

  for (double jitter = hp.jitter; jitter <= 1e-4 * (1.0 + 1e-9); jitter *= 10.0) {
    Eigen::MatrixXd a = gram;
    a.diagonal().array() += gp.noise_var + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd lower = llt.matrixL();
    if ((lower.diagonal().array() <= 0.0).any() || !lower.allFinite()) continue;
    gp.chol = std::move(lower);
    gp.alpha = llt.solve(gp.targets);
    gp.jitter = jitter;
    return gp;
  }
  throw NumericalError("Cholesky factorization failed with jitter up to 1e-4");
}

GprModel fit_gpr(const scorer::ScoringModel& model,
                 std::span<const corpus::AnswerRecord> train_set, const GprHyper& hp) {
  if (train_set.empty()) throw EmptyTrainSetError("GP regression needs training answers");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(train_set.size()), model.hidden_dim());
  std::vector<double> y;
  y.reserve(train_set.size());
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const auto pred = scorer::predict(model, train_set[i]);
    x.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(pred.embedding.data(), model.hidden_dim());
    y.push_back(train_set[i].gold_score);
  }
  return fit_gpr_points(x, y, hp);
}

GprPosterior gp_posterior(const GprModel& gpr, std::span<const double> query) {
  if (static_cast<Eigen::Index>(query.size()) != gpr.inputs.cols()) {
    throw DimensionMismatchError("GP query of size " + std::to_string(query.size()) +
                                 ", expected " + std::to_string(gpr.inputs.cols()));
  }
  const Eigen::Map<const Eigen::VectorXd> q(query.data(), gpr.inputs.cols());
  const auto k = gpr.inputs.rows();
  Eigen::VectorXd k_star(k);
  for (Eigen::Index i = 0; i < k; ++i) k_star(i) = gpr.kernel(gpr.inputs.row(i).transpose(), q);
  const Eigen::VectorXd v = gpr.chol.triangularView<Eigen::Lower>().solve(k_star);
  GprPosterior out;
  out.mean = k_star.dot(gpr.alpha) * gpr.target_scale + gpr.target_mean;
  out.variance = std::max(0.0, gpr.signal_var - v.squaredNorm());
  out.stddev = std::sqrt(out.variance) * gpr.target_scale;
  return out;
}

int round_score(double mean, int max_score) {
  const double clipped = std::clamp(mean, 0.0, static_cast<double>(max_score));
  return static_cast<int>(std::floor(clipped + 0.5));
}

GpPrediction gp_predict(const GprModel& gpr, const scorer::Prediction& pred,
                        const corpus::PromptSpec& prompt) {
  const auto post = gp_posterior(gpr, pred.embedding);
  GpPrediction out;
  out.gp_score = round_score(post.mean, prompt.max_score);
  out.confidence = {pred.answer_id, Method::gp, 1.0 / (1.0 + post.stddev)};
  return out;
}

}  // namespace tscore::confidence
