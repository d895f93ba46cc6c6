#include <doctest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "tscore/confidence.hpp"
#include "tscore/errors.hpp"
#include "tscore/rng.hpp"

using namespace tscore;
using namespace tscore::confidence;

namespace {

scorer::Prediction pred(int s, std::vector<double> embedding, std::vector<double> posterior = {}) {
  scorer::Prediction p;
  p.answer_id = "q";
  p.predicted_score = s;
  p.embedding = std::move(embedding);
  p.posterior = std::move(posterior);
  return p;
}

Eigen::MatrixXd to_eigen(const oracle::Matrix& x) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(x[0].size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x[i].size(); ++j) m(i, j) = x[i][j];
  }
  return m;
}

}  // namespace

TEST_CASE("posterior confidence reads the predicted component") {
  CHECK(posterior_confidence(pred(1, {}, {0.1, 0.7, 0.2})).value == 0.7);
  CHECK(posterior_confidence(pred(0, {}, {0.25, 0.25, 0.25, 0.25})).value == 0.25);
  const auto one_hot = posterior_confidence(pred(2, {}, {0.0, 0.0, 1.0}));
  CHECK(one_hot.value == 1.0);
  CHECK(one_hot.method == Method::posterior);
  CHECK(one_hot.answer_id == "q");
}

TEST_CASE("method names") {
  for (const auto m : kAllMethods) CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("entropy"), ConfigError);
}

TEST_CASE("reference bank counts and validation") {
  ReferenceBank bank(3, 2);
  for (int i = 0; i < 4; ++i) bank.add(0, std::vector<double>{double(i), 0.0});
  for (int i = 0; i < 6; ++i) bank.add(1, std::vector<double>{0.0, double(i)});
  CHECK(bank.cluster(0).size() == 4);
  CHECK(bank.cluster(1).size() == 6);
  CHECK(bank.cluster(2).empty());
  CHECK(bank.cluster(3).empty());
  CHECK(bank.size() == 10);
  CHECK_THROWS_AS(bank.add(4, std::vector<double>{0.0, 0.0}), RangeError);
  CHECK_THROWS_AS(bank.add(0, std::vector<double>{0.0}), DimensionMismatchError);
}

TEST_CASE("reference bank built from a model follows gold scores") {
  corpus::SynthConfig cfg;
  cfg.n_prompts = 1;
  cfg.n_answers = 30;
  const auto c = corpus::synthesize_corpus(cfg);
  scorer::HyperParams hp;
  hp.epochs = 2;
  const auto m = scorer::train(c.records, c.prompts[0], hp);
  const auto bank = build_reference_bank(m, c.records);
  CHECK(bank.size() == c.records.size());
  for (int s = 0; s <= 3; ++s) {
    std::size_t expected = 0;
    for (const auto& r : c.records) expected += r.gold_score == s;
    CHECK(bank.cluster(s).size() == expected);
  }
  const auto again = build_reference_bank(m, c.records);
  for (int s = 0; s <= 3; ++s) CHECK(again.cluster(s) == bank.cluster(s));
  const std::vector<corpus::AnswerRecord> none;
  CHECK_THROWS_AS(build_reference_bank(m, none), EmptyTrainSetError);
}

TEST_CASE("trust score worked examples") {
  ReferenceBank bank(1, 2);
  bank.add(0, std::vector<double>{0.0, 0.0});
  bank.add(1, std::vector<double>{3.0, 0.0});
  CHECK(trust_score(pred(0, {1.0, 0.0}), bank).value == doctest::Approx(2.0 / 3.0));
  CHECK(trust_score(pred(0, {0.0, 0.0}), bank).value == 1.0);
  CHECK(trust_score(pred(0, {1.5, 0.0}), bank).value == 0.5);
  CHECK(trust_score(pred(1, {1.0, 0.0}), bank).value == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("trust score degenerate banks") {
  ReferenceBank only_zero(2, 1);
  only_zero.add(0, std::vector<double>{1.0});
  CHECK(trust_score(pred(0, {5.0}), only_zero).value == 1.0);
  CHECK(trust_score(pred(2, {5.0}), only_zero).value == 0.0);

  ReferenceBank overlap(1, 1);
  overlap.add(0, std::vector<double>{2.0});
  overlap.add(1, std::vector<double>{2.0});
  CHECK(trust_score(pred(0, {2.0}), overlap).value == 0.5);

  ReferenceBank empty(1, 1);
  CHECK_THROWS_AS(trust_score(pred(0, {0.0}), empty), EmptyBankError);
  CHECK_THROWS_AS(trust_score(pred(0, {0.0, 1.0}), overlap), DimensionMismatchError);
}

TEST_CASE("trust score agrees with a full scan") {
  Rng rng(42);
  for (int t = 0; t < 50; ++t) {
    const int max_score = 1 + static_cast<int>(uniform_index(rng, 4));
    const int dim = 1 + static_cast<int>(uniform_index(rng, 6));
    ReferenceBank bank(max_score, dim);
    std::vector<std::pair<int, std::vector<double>>> flat;
    const auto n = 1 + uniform_index(rng, 30);
    for (std::uint64_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_score) + 1));
      std::vector<double> e(static_cast<std::size_t>(dim));
      for (auto& v : e) v = standard_normal(rng);
      bank.add(label, e);
      flat.emplace_back(label, e);
    }
    std::vector<double> h(static_cast<std::size_t>(dim));
    for (auto& v : h) v = standard_normal(rng);
    const int s = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_score) + 1));
    const double value = trust_score(pred(s, h), bank).value;
    CHECK(std::abs(value - oracle::trust(flat, h, s)) <= 1e-9);
    CHECK(value >= 0.0);
    CHECK(value <= 1.0 + 1e-9);
  }
}

TEST_CASE("gp interpolates a single noise-free point") {
  Eigen::MatrixXd x(1, 2);
  x << 0.3, -0.2;
  const std::vector<double> y{2.0};
  GprHyper hp;
  hp.noise_var = 1e-8;
  const auto gp = fit_gpr_points(x, y, hp);
  const auto post = gp_posterior(gp, std::vector<double>{0.3, -0.2});
  CHECK(std::abs(post.mean - 2.0) < 1e-3);
  CHECK(post.variance <= 1e-6 + gp.jitter);
  CHECK(post.variance >= 0.0);
}

TEST_CASE("gp reverts to the prior far from data") {
  Eigen::MatrixXd x(3, 1);
  x << 0.0, 1.0, 2.0;
  const std::vector<double> y{0.0, 1.0, 3.0};
  GprHyper hp;
  hp.lengthscale = 1.0;
  hp.signal_var = 1.7;
  const auto gp = fit_gpr_points(x, y, hp);
  const auto post = gp_posterior(gp, std::vector<double>{1000.0});
  CHECK(std::abs(post.variance - 1.7) < 1e-6);
  CHECK(std::abs(post.mean - 4.0 / 3.0) < 1e-6);
}

TEST_CASE("gp matches the dense inverse") {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    oracle::Matrix xs(10, std::vector<double>(3));
    std::vector<double> ys(10);
    for (auto& row : xs) for (auto& v : row) v = standard_normal(rng);
    for (auto& v : ys) v = static_cast<double>(uniform_index(rng, 4));
    GprHyper hp;
    hp.lengthscale = 0.5 + uniform01(rng) * 2.0;
    hp.signal_var = 0.5 + uniform01(rng);
    hp.noise_var = 0.05 + uniform01(rng) * 0.2;
    const auto gp = fit_gpr_points(to_eigen(xs), ys, hp);
    CHECK(gp.chol.isLowerTriangular());
    CHECK((gp.chol.diagonal().array() > 0.0).all());
    for (int q = 0; q < 5; ++q) {
      std::vector<double> query(3);
      for (auto& v : query) v = standard_normal(rng);
      const auto post = gp_posterior(gp, query);
      const auto ref = oracle::gp(xs, ys, query, *hp.lengthscale, hp.signal_var, hp.noise_var);
      CHECK(std::abs(post.mean - ref.mean) < 1e-6);
      CHECK(std::abs(post.variance - ref.variance) < 1e-6);
      CHECK(post.variance >= 0.0);
      CHECK(post.variance <= hp.signal_var + hp.noise_var + 1e-9);
    }
  }
}

TEST_CASE("gp median heuristic and validation") {
  Eigen::MatrixXd x(3, 1);
  x << 0.0, 1.0, 3.0;
  // Pairwise distances 1, 2, 3.
  CHECK(median_pairwise_distance(x) == 2.0);
  CHECK(fit_gpr_points(x, std::vector<double>{0, 1, 2}, GprHyper{}).lengthscale == 2.0);
  CHECK(median_pairwise_distance(Eigen::MatrixXd::Zero(1, 2)) == 1.0);
  CHECK(median_pairwise_distance(Eigen::MatrixXd::Zero(4, 2)) == 1.0);

  GprHyper bad;
  bad.noise_var = 0.0;
  CHECK_THROWS_AS(fit_gpr_points(x, std::vector<double>{0, 1, 2}, bad), ConfigError);
  CHECK_THROWS_AS(fit_gpr_points(Eigen::MatrixXd(0, 1), std::vector<double>{}, GprHyper{}),
                  EmptyTrainSetError);
  CHECK_THROWS_AS(fit_gpr_points(x, std::vector<double>{0, 1}, GprHyper{}), DimensionMismatchError);
  const auto gp = fit_gpr_points(x, std::vector<double>{0, 1, 2}, GprHyper{});
  CHECK_THROWS_AS(gp_posterior(gp, std::vector<double>{0.0, 1.0}), DimensionMismatchError);
}

TEST_CASE("gp factorization failure surfaces as a numerical error") {
  Eigen::MatrixXd x(2, 1);
  x << 0.0, std::numeric_limits<double>::quiet_NaN();
  GprHyper hp;
  hp.lengthscale = 1.0;
  CHECK_THROWS_AS(fit_gpr_points(x, std::vector<double>{0.0, 1.0}, hp), NumericalError);
}

TEST_CASE("gp score clipping and rounding") {
  CHECK(round_score(-0.4, 3) == 0);
  CHECK(round_score(3.7, 3) == 3);
  CHECK(round_score(1.5, 3) == 2);
  CHECK(round_score(1.49, 3) == 1);
  CHECK(round_score(2.5, 3) == 3);
}

TEST_CASE("gp confidence is 1 / (1 + sigma)") {
  Eigen::MatrixXd x(2, 1);
  x << 0.0, 1.0;
  GprHyper hp;
  hp.lengthscale = 1.0;
  hp.noise_var = 1e-8;
  const auto gp = fit_gpr_points(x, std::vector<double>{1.0, 2.0}, hp);
  corpus::PromptSpec prompt{"p", 3, ""};

  const auto at_data = gp_predict(gp, pred(0, {0.0}), prompt);
  CHECK(at_data.gp_score == 1);
  CHECK(at_data.confidence.method == Method::gp);
  CHECK(at_data.confidence.value > 0.999);
  CHECK(at_data.confidence.value <= 1.0);

  const auto near = gp_predict(gp, pred(0, {1.5}), prompt);
  const auto far = gp_predict(gp, pred(0, {4.0}), prompt);
  const double s_near = gp_posterior(gp, std::vector<double>{1.5}).stddev;
  const double s_far = gp_posterior(gp, std::vector<double>{4.0}).stddev;
  REQUIRE(s_near < s_far);
  CHECK(near.confidence.value > far.confidence.value);
  CHECK(near.confidence.value == doctest::Approx(1.0 / (1.0 + s_near)));
  CHECK_THROWS_AS(gp_predict(gp, pred(0, {1.0, 2.0}), prompt), DimensionMismatchError);
}
