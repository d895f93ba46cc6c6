#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "tscore/errors.hpp"
#include "tscore/io.hpp"
#include "tscore/pipeline.hpp"

using namespace tscore;
using namespace tscore::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("tscore_test_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

corpus::SynthConfig small_synth() {
  corpus::SynthConfig s;
  s.n_prompts = 2;
  s.n_answers = 120;
  s.seed = 3;
  return s;
}

RunConfig small_config(const fs::path& corpus_path, const fs::path& out) {
  RunConfig c;
  c.corpus = corpus_path;
  c.train_n = 40;
  c.dev_n = 20;
  c.folds = 3;
  c.seeds = {0, 1};
  c.out = out;
  c.hyper.epochs = 8;
  c.hyper.hidden_dim = 16;
  return c;
}

std::map<std::string, std::string> reports(const fs::path& out) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(out / "reports")) {
    files[e.path().filename().string()] = io::read_file(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("configuration validation") {
  RunConfig c;
  CHECK_NOTHROW(validate(c));
  c.train_n = 150;
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.folds = 1;
  c.train_n = 150;
  CHECK_NOTHROW(validate(c));
  c = {};
  c.budgets = {0.1, -0.1};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.seeds.clear();
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.methods = {confidence::Method::gp, confidence::Method::gp};
  CHECK_THROWS_AS(validate(c), ConfigError);
  c = {};
  c.grader_noise = 2.0;
  CHECK_THROWS_AS(validate(c), ConfigError);
  CHECK(parse_gp_score_source("classifier") == GpScoreSource::classifier);
  CHECK_THROWS_AS(parse_gp_score_source("mean"), ConfigError);
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (const int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 6) throw RangeError("boom");
                               }),
                  RangeError);
}

TEST_CASE("end to end on a small synthetic corpus") {
  const auto dir = fresh_dir("e2e");
  const auto corpus = cmd_synth(small_synth(), dir / "data");
  const auto config = small_config(dir / "data" / "answers.jsonl", dir / "out");
  const auto report = cmd_run(config);

  // Three fold models per (prompt, seed).
  std::size_t model_files = 0;
  for (const auto& e : fs::directory_iterator(dir / "out" / "models")) {
    model_files += e.path().string().ends_with(".model.json");
  }
  CHECK(model_files == 2 * 2 * 3);

  // One policy per (prompt, method, budget, seed), all within budget.
  const auto policies = load_policies(corpus, config);
  CHECK(policies.size() == 2 * 3 * 4 * 2);
  for (const auto& [key, p] : policies) {
    CHECK(p.dev_err <= key.target_e + 1e-9);
    CHECK(p.pooled_fold_ids == std::vector<int>{0, 1, 2});
  }

  CHECK(report.outcomes.size() == 2 * 3 * 4 * 2);
  std::map<std::tuple<std::string, int, std::uint64_t>, double> last_coverage;
  for (const auto& o : report.outcomes) {
    CHECK(o.n_total == 120 - 60);
    CHECK(o.auto_pairs.size() + o.human_pairs.size() == o.n_total);
    const auto key = std::make_tuple(o.prompt_id, static_cast<int>(o.method), o.seed);
    if (last_coverage.count(key)) CHECK(o.coverage >= last_coverage[key]);
    last_coverage[key] = o.coverage;
  }
  CHECK(report.curves.size() == 3 * 10);
  CHECK(report.summary.size() == 3 * 4);
  REQUIRE(report.iga.has_value());
  CHECK(report.iga->prompts.size() == 2);

  const auto files = reports(dir / "out");
  CHECK(files.count("outcomes.csv"));
  CHECK(files.count("curves.csv"));
  CHECK(files.count("summary.csv"));
  CHECK(files.count("iga.csv"));
  CHECK(files.count("iga_prompts.csv"));
  CHECK(files.count("confidence__prompt01__trust__seed1.csv"));
  CHECK(files.at("outcomes.csv").rfind("prompt_id,method,target_e,seed,coverage,final_rmse\n", 0) == 0);
  CHECK(files.at("curves.csv").rfind("method,fraction,rmse\n", 0) == 0);

  SUBCASE("separate commands reproduce the combined run") {
    auto staged = config;
    staged.out = dir / "staged";
    cmd_train(staged);
    cmd_calibrate(staged);
    cmd_triage(staged);
    CHECK(reports(staged.out) == files);
    for (const auto& e : fs::directory_iterator(dir / "out" / "policies")) {
      CHECK(io::read_file(e.path()) == io::read_file(staged.out / "policies" / e.path().filename()));
    }
  }

  SUBCASE("a second run is byte-identical") {
    auto again = config;
    again.out = dir / "again";
    again.threads = 1;
    cmd_run(again);
    CHECK(reports(again.out) == files);
  }
}

TEST_CASE("no iga report without second ratings") {
  const auto dir = fresh_dir("norater2");
  auto corpus = corpus::synthesize_corpus(small_synth());
  for (auto& r : corpus.records) r.rater2_score.reset();
  corpus::save_corpus(corpus, dir / "data" / "answers.tsv", corpus::Format::tsv);
  auto config = small_config(dir / "data" / "answers.tsv", dir / "out");
  config.format = corpus::Format::tsv;
  config.seeds = {0};
  config.methods = {confidence::Method::posterior};
  config.budgets = {0.1};
  // Leftovers from an earlier corpus must disappear.
  io::write_file_atomic(dir / "out" / "reports" / "iga.csv", "stale\n");
  const auto report = cmd_run(config);
  CHECK_FALSE(report.iga.has_value());
  CHECK_FALSE(fs::exists(dir / "out" / "reports" / "iga.csv"));
  CHECK_FALSE(fs::exists(dir / "out" / "reports" / "iga_prompts.csv"));
}

TEST_CASE("missing inputs") {
  const auto dir = fresh_dir("missing");
  auto config = small_config(dir / "nope.jsonl", dir / "out");
  CHECK_THROWS_AS(cmd_train(config), ConfigError);
  cmd_synth(small_synth(), dir / "data");
  config.corpus = dir / "data" / "answers.jsonl";
  CHECK_THROWS_AS(cmd_calibrate(config), Error);
  CHECK_THROWS_AS(cmd_triage(config), Error);
}

TEST_CASE("classifier scores can back the gp confidence") {
  const auto dir = fresh_dir("gpsource");
  const auto corpus = cmd_synth(small_synth(), dir / "data");
  auto config = small_config(dir / "data" / "answers.jsonl", dir / "out");
  config.seeds = {0};
  const auto models = train_models(corpus, config);
  const auto& fold = models.at({"prompt01", 0}).front();
  const auto test = corpus::select(corpus.records, fold.split.test_ids);
  config.gp_score_source = GpScoreSource::classifier;
  const auto scored = score_answers(corpus, fold, test, config);
  const auto& gp = scored.at(confidence::Method::gp);
  const auto& post = scored.at(confidence::Method::posterior);
  REQUIRE(gp.size() == post.size());
  for (std::size_t i = 0; i < gp.size(); ++i) {
    CHECK(gp[i].answer_id == post[i].answer_id);
    CHECK(gp[i].predicted == post[i].predicted);
  }
}
