#include <doctest.h>

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "tscore/corpus.hpp"
#include "tscore/errors.hpp"
#include "tscore/scorer.hpp"

using namespace tscore;
using namespace tscore::scorer;

namespace {

corpus::Corpus noise_free(std::size_t answers, std::uint64_t seed = 0) {
  corpus::SynthConfig cfg;
  cfg.n_prompts = 1;
  cfg.n_answers = answers;
  cfg.noise_rate = 0.0;
  cfg.rater2_noise_rate = 0.0;
  cfg.seed = seed;
  return corpus::synthesize_corpus(cfg);
}

double sum_posterior(const Prediction& p) {
  return std::accumulate(p.posterior.begin(), p.posterior.end(), 0.0);
}

struct Block {
  double* param;
  const double* grad;
  Eigen::Index size;
};

std::vector<Block> blocks(ScoringModel& m, const Gradient& g) {
  return {{m.hidden_weights.data(), g.hidden_weights.data(), m.hidden_weights.size()},
          {m.hidden_bias.data(), g.hidden_bias.data(), m.hidden_bias.size()},
          {m.head_weights.data(), g.head_weights.data(), m.head_weights.size()},
          {m.head_bias.data(), g.head_bias.data(), m.head_bias.size()}};
}

}  // namespace

TEST_CASE("featurize basics") {
  CHECK(featurize("").empty());
  CHECK(featurize("   \t ").empty());
  CHECK(featurize("the rock is dark") == featurize("the rock is dark"));
  CHECK_FALSE(featurize("ab") == featurize("ba"));
  // Case and whitespace runs do not matter.
  CHECK(featurize("The  Rock") == featurize("the rock"));

  const auto fv = featurize("the rock is dark and the rock is old");
  double norm = 0.0;
  std::uint32_t prev = 0;
  for (std::size_t i = 0; i < fv.entries.size(); ++i) {
    const auto [idx, w] = fv.entries[i];
    CHECK(idx < kDefaultFeatureDim);
    if (i > 0) CHECK(idx > prev);
    prev = idx;
    norm += w * w;
  }
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& [idx, w] : featurize("hello world", 64).entries) CHECK(idx < 64u);
}

TEST_CASE("training lowers the objective on separable data") {
  const auto c = noise_free(40);
  HyperParams hp;
  hp.epochs = 30;
  const auto m = train(c.records, c.prompts[0], hp);
  CHECK(m.training.final_loss < m.training.initial_loss);
  CHECK(m.training.loss_history.size() == 30);
  CHECK(m.training.epochs == 30);
}

TEST_CASE("loss history is non-increasing on separable data") {
  const auto c = noise_free(200);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    HyperParams hp;
    hp.seed = seed;
    const auto m = train(c.records, c.prompts[0], hp);
    double prev = m.training.initial_loss;
    for (const double loss : m.training.loss_history) {
      CHECK(loss <= prev);
      prev = loss;
    }
  }
}

TEST_CASE("a repeated single example is fitted") {
  corpus::PromptSpec prompt{"p1", 3, ""};
  std::vector<corpus::AnswerRecord> recs(16, {"a1", "p1", "the rock is dark", 2, std::nullopt});
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].answer_id = "a" + std::to_string(i);
  HyperParams hp;
  hp.epochs = 30;
  const auto m = train(recs, prompt, hp);
  const auto p = predict(m, recs[0]);
  CHECK(p.predicted_score == 2);
  CHECK(p.posterior[2] > 0.9);
}

TEST_CASE("analytic gradient matches central differences") {
  corpus::PromptSpec prompt{"p1", 3, ""};
  const std::vector<std::string> texts{"the rock is dark", "igneous rock cools", "sand and silt",
                                       "dark basalt flows", ""};
  std::vector<Example> examples;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    examples.push_back({featurize(texts[i]), static_cast<int>(i % 4)});
  }
  HyperParams hp;
  hp.hidden_dim = 5;
  hp.seed = 3;
  auto model = initialize(prompt, examples, hp);
  // Move away from zero biases so every parameter gets a generic gradient.
  model.hidden_bias.setConstant(0.1);
  model.head_bias << 0.2, -0.1, 0.05, 0.0;
  const double l2 = 1e-3;
  const auto g = gradient(model, examples, l2);

  ScoringModel probe = model;
  const double h = 1e-6;
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& block : blocks(probe, g)) {
    CHECK(block.size > 0);
    for (Eigen::Index i = 0; i < block.size; ++i) {
      double& param = block.param[i];
      const double saved = param;
      param = saved + h;
      const double up = objective(probe, examples, l2);
      param = saved - h;
      const double down = objective(probe, examples, l2);
      param = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = block.grad[i];
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(analytic - numeric) / scale);
      ++checked;
    }
  }
  CHECK(checked == static_cast<std::size_t>(model.hidden_weights.size() + model.head_weights.size() +
                                            model.hidden_bias.size() + model.head_bias.size()));
  CHECK(worst < 1e-4);
}

TEST_CASE("zero head gives a uniform posterior and the lowest score") {
  corpus::PromptSpec prompt{"p1", 2, ""};
  std::vector<Example> examples{{featurize("some answer"), 1}};
  auto m = initialize(prompt, examples, HyperParams{});
  m.head_weights.setZero();
  m.head_bias.setZero();
  const auto p = predict(m, {"a1", "p1", "some answer", 1, std::nullopt});
  REQUIRE(p.posterior.size() == 3);
  for (const double v : p.posterior) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(p.predicted_score == 0);
  CHECK(p.embedding.size() == 64);
}

TEST_CASE("argmax breaks exact ties toward the lowest index") {
  const std::vector<double> v{0.2, 0.4, 0.4};
  CHECK(argmax_lowest(v) == 1);
  const std::vector<double> w{0.5, 0.5};
  CHECK(argmax_lowest(w) == 0);
}

TEST_CASE("accuracy on noise-free held-out answers") {
  const auto c = noise_free(500, 4);
  const auto split = corpus::make_splits(c.records, 200, 50, 0);
  const auto train_set = corpus::select(c.records, split.train_ids);
  const auto test_set = corpus::select(c.records, split.test_ids);
  const auto m = train(train_set, c.prompts[0], HyperParams{});
  std::size_t correct = 0;
  for (const auto& r : test_set) {
    const auto p = predict(m, r);
    CHECK(sum_posterior(p) == doctest::Approx(1.0).epsilon(1e-6));
    correct += p.predicted_score == r.gold_score;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(test_set.size()) > 0.9);
}

TEST_CASE("training is deterministic given the seed") {
  const auto c = noise_free(60);
  HyperParams hp;
  hp.epochs = 5;
  const auto a = train(c.records, c.prompts[0], hp);
  const auto b = train(c.records, c.prompts[0], hp);
  CHECK(model_to_json(a) == model_to_json(b));
  hp.seed = 1;
  CHECK(model_to_json(a) != model_to_json(train(c.records, c.prompts[0], hp)));
}

TEST_CASE("training errors") {
  corpus::PromptSpec prompt{"p1", 3, ""};
  const std::vector<corpus::AnswerRecord> none;
  CHECK_THROWS_AS(train(none, prompt, HyperParams{}), EmptyTrainSetError);
  const std::vector<corpus::AnswerRecord> other{{"a1", "p2", "x", 1, std::nullopt}};
  CHECK_THROWS_AS(train(other, prompt, HyperParams{}), PromptMismatchError);
  const std::vector<corpus::AnswerRecord> bad_label{{"a1", "p1", "x", 5, std::nullopt}};
  CHECK_THROWS_AS(train(bad_label, prompt, HyperParams{}), RangeError);

  const std::vector<corpus::AnswerRecord> one{{"a1", "p1", "x y", 1, std::nullopt}};
  HyperParams hp;
  hp.learning_rate = 1e300;
  CHECK_THROWS_AS(train(one, prompt, hp), DivergenceError);
  hp = {};
  hp.batch_size = 0;
  CHECK_THROWS_AS(train(one, prompt, hp), ConfigError);
}

TEST_CASE("prediction errors") {
  const auto c = noise_free(20);
  HyperParams hp;
  hp.epochs = 1;
  const auto m = train(c.records, c.prompts[0], hp);
  CHECK_THROWS_AS(predict(m, {"z", "elsewhere", "x", 0, std::nullopt}), PromptMismatchError);
  CHECK_THROWS_AS(predict_features(m, featurize("x", 128)), DimensionMismatchError);
  // Unseen text still yields a valid distribution.
  const auto p = predict(m, {"z", c.prompts[0].prompt_id, "qqqq zzzz", 0, std::nullopt});
  CHECK(sum_posterior(p) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("model json round trip") {
  const auto c = noise_free(30);
  HyperParams hp;
  hp.epochs = 3;
  const auto m = train(c.records, c.prompts[0], hp);
  const auto text = model_to_json(m);
  const auto back = model_from_json(text);
  CHECK(model_to_json(back) == text);
  CHECK(back.hidden_weights == m.hidden_weights);
  CHECK(back.feature_index == m.feature_index);
  CHECK(back.training.loss_history == m.training.loss_history);
  for (const auto& r : c.records) {
    CHECK(predict(back, r).posterior == predict(m, r).posterior);
  }
}

TEST_CASE("model json rejects other versions and bad content") {
  const auto c = noise_free(10);
  HyperParams hp;
  hp.epochs = 1;
  auto j = nlohmann::json::parse(model_to_json(train(c.records, c.prompts[0], hp)));
  REQUIRE(j.at("version") == kModelFormatVersion);
  j["version"] = kModelFormatVersion + 1;
  CHECK_THROWS_AS(model_from_json(j.dump()), VersionMismatchError);
  j["version"] = kModelFormatVersion;
  j["head_bias"] = {1.0};
  CHECK_THROWS_AS(model_from_json(j.dump()), Error);
  CHECK_THROWS_AS(model_from_json("{\"format\":\"something else\"}"), Error);
  CHECK_THROWS_AS(model_from_json("not json"), ParseError);
}
