#include "tscore/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "tscore/errors.hpp"
#include "tscore/io.hpp"
#include "tscore/rng.hpp"

namespace tscore::pipeline {

using confidence::Method;

GpScoreSource parse_gp_score_source(std::string_view name) {
  if (name == "gp") return GpScoreSource::gp;
  if (name == "classifier") return GpScoreSource::classifier;
  throw ConfigError("unknown gp score source '" + std::string(name) + "'");
}

std::string_view gp_score_source_name(GpScoreSource source) {
  return source == GpScoreSource::gp ? "gp" : "classifier";
}

void validate(const RunConfig& c) {
  if (c.train_n == 0) throw ConfigError("train_n must be >= 1");
  if (c.dev_n == 0) throw ConfigError("dev_n must be >= 1");
  if (c.folds == 0) throw ConfigError("folds must be >= 1");
  if (c.folds > 1 && c.train_n != (c.folds - 1) * c.dev_n) {
    throw ConfigError("with " + std::to_string(c.folds) + " folds train_n must equal " +
                      std::to_string(c.folds - 1) + " * dev_n");
  }
  if (c.methods.empty()) throw ConfigError("at least one confidence method is required");
  for (std::size_t i = 0; i < c.methods.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (c.methods[i] == c.methods[j]) throw ConfigError("duplicate confidence method");
    }
  }
  if (c.budgets.empty()) throw ConfigError("at least one error budget is required");
  for (const double e : c.budgets) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw ConfigError("error budgets must be finite and >= 0");
  }
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(c.grader_noise >= 0.0 && c.grader_noise <= 1.0)) {
    throw ConfigError("grader noise must be in [0, 1]");
  }
}

std::size_t thread_count(const RunConfig& config) {
  if (config.threads > 0) return config.threads;
  if (const char* env = std::getenv("TRIAGE_SCORE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      while (!failed) {
        const auto i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

namespace {

struct PromptSeed {
  const corpus::PromptSpec* prompt;
  std::uint64_t seed;
};

std::vector<PromptSeed> prompt_seed_tasks(const corpus::Corpus& corpus, const RunConfig& config) {
  std::vector<PromptSeed> tasks;
  for (const auto& p : corpus.prompts) {
    for (const auto s : config.seeds) tasks.push_back({&p, s});
  }
  return tasks;
}

const std::vector<FoldModel>& folds_for(const ModelSet& models, const std::string& prompt_id,
                                        std::uint64_t seed) {
  const auto it = models.find({prompt_id, seed});
  if (it == models.end() || it->second.empty()) {
    throw Error("no trained model for prompt '" + prompt_id + "' seed " + std::to_string(seed));
  }
  return it->second;
}

}  // namespace

ModelSet train_models(const corpus::Corpus& corpus, const RunConfig& config) {
  validate(config);
  struct Task {
    const corpus::PromptSpec* prompt;
    std::uint64_t seed;
    corpus::SplitSpec split;
  };
  std::vector<Task> tasks;
  for (const auto& [prompt, seed] : prompt_seed_tasks(corpus, config)) {
    const auto records = corpus.records_for(prompt->prompt_id);
    auto splits =
        corpus::make_fold_splits(records, config.train_n, config.dev_n, config.folds, seed);
    for (auto& s : splits) tasks.push_back({prompt, seed, std::move(s)});
  }
  std::vector<FoldModel> trained(tasks.size());
  parallel_for(tasks.size(), thread_count(config), [&](std::size_t i) {
    const auto& t = tasks[i];
    const auto records = corpus.records_for(t.prompt->prompt_id);
    const auto train_set = corpus::select(records, t.split.train_ids);
    auto hp = config.hyper;
    hp.seed = mix_seed(t.seed, static_cast<std::uint64_t>(t.split.fold_id));
    trained[i] = {t.seed, t.split, scorer::train(train_set, *t.prompt, hp)};
  });
  ModelSet models;
  for (auto& f : trained) {
    models[{f.split.prompt_id, f.seed}].push_back(std::move(f));
  }
  return models;
}

std::map<Method, std::vector<triage::ScoredItem>> score_answers(
    const corpus::Corpus& corpus, const FoldModel& fold,
    std::span<const corpus::AnswerRecord> eval, const RunConfig& config) {
  const auto& prompt = corpus.prompt(fold.split.prompt_id);
  const auto records = corpus.records_for(prompt.prompt_id);
  const auto train_set = corpus::select(records, fold.split.train_ids);
  const auto wants = [&](Method m) {
    return std::find(config.methods.begin(), config.methods.end(), m) != config.methods.end();
  };

  std::optional<confidence::ReferenceBank> bank;
  if (wants(Method::trust)) bank = confidence::build_reference_bank(fold.model, train_set);
  std::optional<confidence::GprModel> gpr;
  if (wants(Method::gp)) gpr = confidence::fit_gpr(fold.model, train_set, config.gpr);

  std::map<Method, std::vector<triage::ScoredItem>> out;
  for (const auto& r : eval) {
    const auto pred = scorer::predict(fold.model, r);
    for (const auto m : config.methods) {
      triage::ScoredItem item{r.answer_id, 0.0, pred.predicted_score, r.gold_score};
      switch (m) {
        case Method::posterior:
          item.confidence = confidence::posterior_confidence(pred).value;
          break;
        case Method::trust:
          item.confidence = confidence::trust_score(pred, *bank).value;
          break;
        case Method::gp: {
          const auto gp = confidence::gp_predict(*gpr, pred, prompt);
          item.confidence = gp.confidence.value;
          if (config.gp_score_source == GpScoreSource::gp) item.predicted = gp.gp_score;
          break;
        }
      }
      out[m].push_back(std::move(item));
    }
  }
  return out;
}

PolicySet calibrate(const corpus::Corpus& corpus, const ModelSet& models,
                    const RunConfig& config) {
  validate(config);
  const auto tasks = prompt_seed_tasks(corpus, config);
  std::vector<std::vector<std::pair<PolicyKey, calibration::ThresholdPolicy>>> results(
      tasks.size());
  parallel_for(tasks.size(), thread_count(config), [&](std::size_t i) {
    const auto& [prompt, seed] = tasks[i];
    const auto& folds = folds_for(models, prompt->prompt_id, seed);
    const auto records = corpus.records_for(prompt->prompt_id);
    std::map<Method, std::vector<std::vector<calibration::DevItem>>> per_method;
    std::vector<int> fold_ids;
    for (const auto& fold : folds) {
      fold_ids.push_back(fold.split.fold_id);
      const auto dev = corpus::select(records, fold.split.dev_ids);
      for (const auto& [m, items] : score_answers(corpus, fold, dev, config)) {
        auto& list = per_method[m].emplace_back();
        for (const auto& it : items) list.push_back({it.confidence, it.predicted, it.gold});
      }
    }
    for (const auto m : config.methods) {
      const auto pooled = calibration::pool_dev_folds(per_method[m]);
      for (const double e : config.budgets) {
        auto policy = calibration::estimate_threshold(pooled, {e});
        policy.prompt_id = prompt->prompt_id;
        policy.method = m;
        policy.pooled_fold_ids = fold_ids;
        results[i].emplace_back(PolicyKey{prompt->prompt_id, m, e, seed}, std::move(policy));
      }
    }
  });
  PolicySet policies;
  for (auto& r : results) {
    for (auto& [k, p] : r) policies.emplace(k, std::move(p));
  }
  return policies;
}

std::vector<double> curve_fractions() {
  std::vector<double> f;
  for (int k = 1; k <= 10; ++k) f.push_back(k / 10.0);
  return f;
}

TriageReport run_triage(const corpus::Corpus& corpus, const ModelSet& models,
                        const PolicySet& policies, const RunConfig& config) {
  validate(config);
  const auto tasks = prompt_seed_tasks(corpus, config);
  struct TaskResult {
    std::vector<triage::TriageOutcome> outcomes;
    std::vector<ConfidenceDump> dumps;
  };
  std::vector<TaskResult> results(tasks.size());
  parallel_for(tasks.size(), thread_count(config), [&](std::size_t i) {
    const auto& [prompt, seed] = tasks[i];
    const auto& fold = folds_for(models, prompt->prompt_id, seed).front();
    const auto records = corpus.records_for(prompt->prompt_id);
    const auto test = corpus::select(records, fold.split.test_ids);
    auto scored = score_answers(corpus, fold, test, config);
    const auto grader =
        config.grader_noise > 0.0
            ? triage::noisy_grader(config.grader_noise, prompt->max_score,
                                   mix_seed(seed, io::fnv1a(prompt->prompt_id)))
            : triage::perfect_grader();
    for (const auto m : config.methods) {
      const auto& items = scored.at(m);
      for (const double e : config.budgets) {
        const PolicyKey key{prompt->prompt_id, m, e, seed};
        const auto it = policies.find(key);
        if (it == policies.end()) throw Error("missing policy " + policy_file_name(key));
        auto outcome = triage::run_triage(it->second, m, items, grader);
        outcome.seed = seed;
        results[i].outcomes.push_back(std::move(outcome));
      }
      results[i].dumps.push_back({prompt->prompt_id, seed, m, items});
    }
  });

  TriageReport report;
  for (auto& r : results) {
    for (auto& o : r.outcomes) report.outcomes.push_back(std::move(o));
    for (auto& d : r.dumps) report.confidences.push_back(std::move(d));
  }
  std::sort(report.outcomes.begin(), report.outcomes.end(), [](const auto& a, const auto& b) {
    return std::tie(a.prompt_id, a.method, a.target_e, a.seed) <
           std::tie(b.prompt_id, b.method, b.target_e, b.seed);
  });
  std::sort(report.confidences.begin(), report.confidences.end(),
            [](const auto& a, const auto& b) {
              return std::tie(a.prompt_id, a.seed, a.method) <
                     std::tie(b.prompt_id, b.seed, b.method);
            });

  for (const auto m : config.methods) {
    for (const double f : curve_fractions()) {
      std::vector<double> values;
      if (config.aggregate == triage::Aggregate::macro) {
        for (const auto& d : report.confidences) {
          if (d.method == m) values.push_back(triage::rmse_at_top_coverage(d.items, f));
        }
      } else {
        std::map<std::uint64_t, std::vector<triage::ScoredItem>> pooled;
        for (const auto& d : report.confidences) {
          if (d.method != m) continue;
          for (auto item : d.items) {
            item.answer_id = d.prompt_id + "/" + item.answer_id;
            pooled[d.seed].push_back(std::move(item));
          }
        }
        for (const auto& [seed, items] : pooled) {
          values.push_back(triage::rmse_at_top_coverage(items, f));
        }
      }
      double mean = 0.0;
      for (const double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      report.curves.push_back({m, f, mean});
    }
  }
  report.summary = triage::summarize(report.outcomes, config.aggregate);

  std::size_t rated_prompts = 0;
  for (const auto& p : corpus.prompts) {
    const auto records = corpus.records_for(p.prompt_id);
    if (std::any_of(records.begin(), records.end(),
                    [](const auto& r) { return r.rater2_score.has_value(); })) {
      ++rated_prompts;
    }
  }
  if (rated_prompts >= 2) report.iga = triage::iga_analysis(corpus, report.outcomes);
  return report;
}

// ---------------------------------------------------------------------------
// Files

std::string model_file_name(const std::string& prompt_id, std::uint64_t seed, int fold) {
  return prompt_id + "__seed" + std::to_string(seed) + "__fold" + std::to_string(fold);
}

std::string policy_file_name(const PolicyKey& key) {
  return key.prompt_id + "__" + std::string(confidence::method_name(key.method)) + "__e" +
         io::format_double(key.target_e) + "__seed" + std::to_string(key.seed) + ".json";
}

void write_models(const ModelSet& models, const RunConfig& config) {
  const auto dir = config.out / "models";
  std::vector<const FoldModel*> all;
  for (const auto& [key, folds] : models) {
    for (const auto& f : folds) all.push_back(&f);
  }
  parallel_for(all.size(), thread_count(config), [&](std::size_t i) {
    const auto& f = *all[i];
    const auto base = model_file_name(f.split.prompt_id, f.seed, f.split.fold_id);
    io::write_file_atomic(dir / (base + ".model.json"), scorer::model_to_json(f.model));
    io::write_file_atomic(dir / (base + ".split.json"), corpus::split_to_json(f.split));
  });
}

ModelSet load_models(const corpus::Corpus& corpus, const RunConfig& config) {
  const auto dir = config.out / "models";
  std::vector<std::tuple<std::string, std::uint64_t, int>> keys;
  for (const auto& [prompt, seed] : prompt_seed_tasks(corpus, config)) {
    for (std::size_t f = 0; f < config.folds; ++f) {
      keys.emplace_back(prompt->prompt_id, seed, static_cast<int>(f));
    }
  }
  std::vector<FoldModel> loaded(keys.size());
  parallel_for(keys.size(), thread_count(config), [&](std::size_t i) {
    const auto& [prompt_id, seed, fold] = keys[i];
    const auto base = model_file_name(prompt_id, seed, fold);
    const auto model_path = dir / (base + ".model.json");
    const auto split_path = dir / (base + ".split.json");
    if (!std::filesystem::exists(model_path) || !std::filesystem::exists(split_path)) {
      throw Error("missing model files for " + base + " under " + dir.string());
    }
    loaded[i].seed = seed;
    loaded[i].model = scorer::model_from_json(io::read_file(model_path));
    loaded[i].split = corpus::split_from_json(io::read_file(split_path));
    if (loaded[i].model.prompt_id != prompt_id || loaded[i].split.prompt_id != prompt_id) {
      throw Error("model files " + base + " belong to another prompt");
    }
  });
  ModelSet models;
  for (auto& f : loaded) models[{f.split.prompt_id, f.seed}].push_back(std::move(f));
  return models;
}

void write_policies(const PolicySet& policies, const RunConfig& config) {
  const auto dir = config.out / "policies";
  for (const auto& [key, policy] : policies) {
    io::write_file_atomic(dir / policy_file_name(key), calibration::policy_to_json(policy));
  }
}

PolicySet load_policies(const corpus::Corpus& corpus, const RunConfig& config) {
  const auto dir = config.out / "policies";
  PolicySet policies;
  for (const auto& [prompt, seed] : prompt_seed_tasks(corpus, config)) {
    for (const auto m : config.methods) {
      for (const double e : config.budgets) {
        const PolicyKey key{prompt->prompt_id, m, e, seed};
        const auto path = dir / policy_file_name(key);
        if (!std::filesystem::exists(path)) throw Error("missing policy file " + path.string());
        auto policy = calibration::policy_from_json(io::read_file(path));
        if (policy.method != m || policy.prompt_id != prompt->prompt_id) {
          throw Error("policy file " + path.string() + " does not match its name");
        }
        policies.emplace(key, std::move(policy));
      }
    }
  }
  return policies;
}

namespace {

std::string num(double x) { return io::format_double(x); }

}  // namespace

std::string outcomes_csv(std::span<const triage::TriageOutcome> outcomes) {
  std::ostringstream out;
  out << "prompt_id,method,target_e,seed,coverage,final_rmse\n";
  for (const auto& o : outcomes) {
    out << io::csv_field(o.prompt_id) << ',' << confidence::method_name(o.method) << ','
        << num(o.target_e) << ',' << o.seed << ',' << num(o.coverage) << ','
        << num(o.final_rmse) << '\n';
  }
  return out.str();
}

std::string curves_csv(std::span<const CurvePoint> curves) {
  std::ostringstream out;
  out << "method,fraction,rmse\n";
  for (const auto& c : curves) {
    out << confidence::method_name(c.method) << ',' << num(c.fraction) << ',' << num(c.rmse)
        << '\n';
  }
  return out.str();
}

std::string summary_csv(std::span<const triage::SummaryRow> rows, triage::Aggregate mode) {
  std::ostringstream out;
  out << "aggregate,method,target_e,n_seeds,mean_coverage,sd_coverage,mean_final_rmse,"
         "sd_final_rmse\n";
  for (const auto& r : rows) {
    out << triage::aggregate_name(mode) << ',' << confidence::method_name(r.method) << ','
        << num(r.target_e) << ',' << r.n_seeds << ',' << num(r.mean_coverage) << ','
        << num(r.sd_coverage) << ',' << num(r.mean_final_rmse) << ',' << num(r.sd_final_rmse)
        << '\n';
  }
  return out.str();
}

std::string confidence_csv(const ConfidenceDump& dump) {
  std::ostringstream out;
  out << "answer_id,method,value,predicted_score,gold_score\n";
  for (const auto& it : dump.items) {
    out << io::csv_field(it.answer_id) << ',' << confidence::method_name(dump.method) << ','
        << num(it.confidence) << ',' << it.predicted << ',' << it.gold << '\n';
  }
  return out.str();
}

std::string iga_csv(const triage::IgaReport& report) {
  std::ostringstream out;
  out << "group,method,target_e,n_prompts,n_outcomes,mean_coverage,mean_final_rmse\n";
  for (const auto& g : report.groups) {
    out << triage::group_name(g.group) << ',' << confidence::method_name(g.method) << ','
        << num(g.target_e) << ',' << g.n_prompts << ',' << g.n_outcomes << ','
        << num(g.mean_coverage) << ',' << num(g.mean_final_rmse) << '\n';
  }
  return out.str();
}

std::string iga_prompts_csv(const triage::IgaReport& report) {
  std::ostringstream out;
  out << "prompt_id,iga,group,mean_iga,degenerate_split\n";
  for (const auto& p : report.prompts) {
    out << io::csv_field(p.prompt_id) << ',' << num(p.iga) << ',' << triage::group_name(p.group)
        << ',' << num(report.mean_iga) << ',' << (report.degenerate ? 1 : 0) << '\n';
  }
  return out.str();
}

void write_reports(const TriageReport& report, const RunConfig& config) {
  const auto dir = config.out / "reports";
  io::write_file_atomic(dir / "outcomes.csv", outcomes_csv(report.outcomes));
  io::write_file_atomic(dir / "curves.csv", curves_csv(report.curves));
  io::write_file_atomic(dir / "summary.csv", summary_csv(report.summary, config.aggregate));
  for (const auto& d : report.confidences) {
    io::write_file_atomic(dir / ("confidence__" + d.prompt_id + "__" +
                                 std::string(confidence::method_name(d.method)) + "__seed" +
                                 std::to_string(d.seed) + ".csv"),
                          confidence_csv(d));
  }
  const auto iga_path = dir / "iga.csv";
  const auto iga_prompts_path = dir / "iga_prompts.csv";
  if (report.iga) {
    io::write_file_atomic(iga_path, iga_csv(*report.iga));
    io::write_file_atomic(iga_prompts_path, iga_prompts_csv(*report.iga));
  } else {
    // A stale report from an earlier corpus must not survive.
    std::filesystem::remove(iga_path);
    std::filesystem::remove(iga_prompts_path);
  }
}

// ---------------------------------------------------------------------------
// Commands

corpus::Corpus cmd_synth(const corpus::SynthConfig& config, const std::filesystem::path& out_dir,
                         corpus::Format format) {
  auto corpus = corpus::synthesize_corpus(config);
  const auto name = format == corpus::Format::jsonl ? "answers.jsonl" : "answers.tsv";
  corpus::save_corpus(corpus, out_dir / name, format);
  return corpus;
}

namespace {

corpus::Corpus load_for(const RunConfig& config) {
  validate(config);
  if (!std::filesystem::exists(config.corpus)) {
    throw ConfigError("corpus file '" + config.corpus.string() + "' does not exist");
  }
  return corpus::load_corpus(config.corpus, config.format);
}

}  // namespace

ModelSet cmd_train(const RunConfig& config) {
  const auto corpus = load_for(config);
  auto models = train_models(corpus, config);
  write_models(models, config);
  return models;
}

PolicySet cmd_calibrate(const RunConfig& config) {
  const auto corpus = load_for(config);
  const auto models = load_models(corpus, config);
  auto policies = calibrate(corpus, models, config);
  write_policies(policies, config);
  return policies;
}

TriageReport cmd_triage(const RunConfig& config) {
  const auto corpus = load_for(config);
  const auto models = load_models(corpus, config);
  const auto policies = load_policies(corpus, config);
  auto report = run_triage(corpus, models, policies, config);
  write_reports(report, config);
  return report;
}

TriageReport cmd_run(const RunConfig& config) {
  const auto corpus = load_for(config);
  const auto models = train_models(corpus, config);
  write_models(models, config);
  const auto policies = calibrate(corpus, models, config);
  write_policies(policies, config);
  auto report = run_triage(corpus, models, policies, config);
  write_reports(report, config);
  return report;
}

}  // namespace tscore::pipeline
