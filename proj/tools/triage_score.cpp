// triage-score: train short-answer scorers, calibrate confidence thresholds
// against an RMSE budget and simulate the machine + human grading loop.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tscore/errors.hpp"
#include "tscore/pipeline.hpp"

namespace {

using namespace tscore;

struct Flags {
  std::string corpus;
  std::string format = "jsonl";
  std::size_t train_n = 200;
  std::size_t dev_n = 50;
  std::size_t folds = 5;
  std::vector<std::string> methods{"posterior", "trust", "gp"};
  std::vector<double> budgets{0.04, 0.08, 0.12, 0.16};
  std::vector<std::uint64_t> seeds{0};
  std::string out = "out";
  std::string aggregate = "macro";
  std::string gp_score_source = "gp";
  double grader_noise = 0.0;
  scorer::HyperParams hyper;
  double gp_lengthscale = 0.0;  // 0: median heuristic
  double gp_signal_var = 1.0;
  double gp_noise_var = 0.1;
};

void add_run_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--corpus", f.corpus, "Answer file (prompts.json must sit next to it)")
      ->required();
  cmd.add_option("--format", f.format, "Corpus format: jsonl or tsv");
  cmd.add_option("--train-n", f.train_n, "Training answers per prompt and fold");
  cmd.add_option("--dev-n", f.dev_n, "Development answers per prompt and fold");
  cmd.add_option("--folds", f.folds, "Rotating development folds pooled for calibration");
  cmd.add_option("--methods", f.methods, "Confidence methods: posterior trust gp");
  cmd.add_option("--budgets", f.budgets, "Acceptable RMSE values");
  cmd.add_option("--seeds", f.seeds, "Seeds (one model set per seed)");
  cmd.add_option("--out", f.out, "Output directory");
  cmd.add_option("--aggregate", f.aggregate, "Cross-prompt aggregation: macro or pooled");
  cmd.add_option("--gp-score-source", f.gp_score_source,
                 "Score paired with gp confidence: gp or classifier");
  cmd.add_option("--grader-noise", f.grader_noise, "Error rate of the simulated human grader");
  cmd.add_option("--hidden-dim", f.hyper.hidden_dim, "Embedding width");
  cmd.add_option("--epochs", f.hyper.epochs, "Training epochs");
  cmd.add_option("--learning-rate", f.hyper.learning_rate, "SGD step size");
  cmd.add_option("--l2", f.hyper.l2, "L2 penalty");
  cmd.add_option("--batch-size", f.hyper.batch_size, "Mini-batch size");
  cmd.add_option("--gp-lengthscale", f.gp_lengthscale, "RBF lengthscale (0: median heuristic)");
  cmd.add_option("--gp-signal-var", f.gp_signal_var, "RBF signal variance");
  cmd.add_option("--gp-noise-var", f.gp_noise_var, "GP observation noise variance");
}

pipeline::RunConfig to_config(const Flags& f) {
  pipeline::RunConfig c;
  c.corpus = f.corpus;
  c.format = corpus::parse_format(f.format);
  c.train_n = f.train_n;
  c.dev_n = f.dev_n;
  c.folds = f.folds;
  c.methods.clear();
  for (const auto& m : f.methods) c.methods.push_back(confidence::parse_method(m));
  c.budgets = f.budgets;
  c.seeds = f.seeds;
  c.out = f.out;
  c.aggregate = triage::parse_aggregate(f.aggregate);
  c.gp_score_source = pipeline::parse_gp_score_source(f.gp_score_source);
  c.grader_noise = f.grader_noise;
  c.hyper = f.hyper;
  if (f.gp_lengthscale > 0.0) c.gpr.lengthscale = f.gp_lengthscale;
  else if (f.gp_lengthscale < 0.0) throw ConfigError("--gp-lengthscale must be >= 0");
  c.gpr.signal_var = f.gp_signal_var;
  c.gpr.noise_var = f.gp_noise_var;
  pipeline::validate(c);
  return c;
}

std::vector<corpus::NoiseProfile> parse_profiles(const std::vector<std::string>& specs) {
  std::vector<corpus::NoiseProfile> out;
  for (const auto& s : specs) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("profile '" + s + "' must look like NOISE:RATER2_NOISE");
    }
    try {
      out.push_back({std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))});
    } catch (const std::exception&) {
      throw ConfigError("profile '" + s + "' must look like NOISE:RATER2_NOISE");
    }
  }
  return out;
}

void print_summary(const pipeline::TriageReport& report) {
  std::cout << "method      e      coverage  final_rmse\n";
  for (const auto& r : report.summary) {
    std::printf("%-10s  %.3f  %8.4f  %10.4f\n",
                std::string(confidence::method_name(r.method)).c_str(), r.target_e,
                r.mean_coverage, r.mean_final_rmse);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective automatic short answer scoring with human triage"};
  app.require_subcommand(1);

  corpus::SynthConfig synth;
  std::string synth_out = "corpus";
  std::string synth_format = "jsonl";
  std::vector<std::string> synth_profiles;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic keyword corpus");
  cmd_synth->add_option("--out", synth_out, "Output directory");
  cmd_synth->add_option("--format", synth_format, "jsonl or tsv");
  cmd_synth->add_option("--n-prompts", synth.n_prompts, "Number of prompts");
  cmd_synth->add_option("--n-answers", synth.n_answers, "Answers per prompt");
  cmd_synth->add_option("--max-score", synth.max_score, "Scores range over 0..max");
  cmd_synth->add_option("--vocab-size", synth.vocab_size, "Pseudo-word vocabulary size");
  cmd_synth->add_option("--noise-rate", synth.noise_rate, "Gold label flip rate");
  cmd_synth->add_option("--rater2-noise-rate", synth.rater2_noise_rate,
                        "Second-rater disagreement rate");
  cmd_synth->add_option("--profiles", synth_profiles,
                        "Per-prompt NOISE:RATER2_NOISE pairs, cycled over prompts");
  cmd_synth->add_option("--seed", synth.seed, "Generator seed");

  Flags flags;
  auto* cmd_train = app.add_subcommand("train", "Train one scorer per prompt, seed and fold");
  auto* cmd_calibrate = app.add_subcommand("calibrate", "Estimate thresholds on dev data");
  auto* cmd_triage = app.add_subcommand("triage", "Apply thresholds to test data and report");
  auto* cmd_run = app.add_subcommand("run", "train + calibrate + triage");
  for (auto* cmd : {cmd_train, cmd_calibrate, cmd_triage, cmd_run}) add_run_flags(*cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_synth->parsed()) {
      synth.profiles = parse_profiles(synth_profiles);
      const auto corpus = pipeline::cmd_synth(synth, synth_out, corpus::parse_format(synth_format));
      std::cout << "wrote " << corpus.records.size() << " answers over " << corpus.prompts.size()
                << " prompts to " << synth_out << "\n";
      return 0;
    }
    const auto config = to_config(flags);
    if (cmd_train->parsed()) {
      const auto models = pipeline::cmd_train(config);
      std::size_t n = 0;
      for (const auto& [key, folds] : models) n += folds.size();
      std::cout << "trained " << n << " models into " << (config.out / "models").string() << "\n";
    } else if (cmd_calibrate->parsed()) {
      const auto policies = pipeline::cmd_calibrate(config);
      std::cout << "wrote " << policies.size() << " policies into "
                << (config.out / "policies").string() << "\n";
    } else if (cmd_triage->parsed()) {
      print_summary(pipeline::cmd_triage(config));
    } else if (cmd_run->parsed()) {
      print_summary(pipeline::cmd_run(config));
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
