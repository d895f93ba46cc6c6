#include "tscore/triage.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include "tscore/errors.hpp"
#include "tscore/io.hpp"
#include "tscore/rng.hpp"

namespace tscore::triage {

HumanGrader perfect_grader() {
  return [](const ScoredItem& item) { return item.gold; };
}

HumanGrader noisy_grader(double rate, int max_score, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("grader noise must be in [0, 1]");
  if (max_score < 1) throw ConfigError("grader needs max_score >= 1");
  return [=](const ScoredItem& item) {
    Rng rng(mix_seed(seed, io::fnv1a(item.answer_id)));
    if (!bernoulli(rng, rate)) return item.gold;
    const auto pick = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_score)));
    return pick >= item.gold ? pick + 1 : pick;
  };
}

TriageOutcome run_triage(const calibration::ThresholdPolicy& policy, confidence::Method method,
                         std::span<const ScoredItem> items, const HumanGrader& grader) {
  if (policy.method != method) {
    throw MethodMismatchError("policy calibrated for '" +
                              std::string(confidence::method_name(policy.method)) +
                              "' applied to '" + std::string(confidence::method_name(method)) +
                              "' confidences");
  }
  if (items.empty()) throw EmptyError("triage of an empty test set");
  TriageOutcome out;
  out.prompt_id = policy.prompt_id;
  out.method = method;
  out.target_e = policy.target_e;
  double squared = 0.0;
  for (const auto& item : items) {
    if (calibration::is_automatic(item.confidence, policy.tau)) {
      out.auto_pairs.push_back({item.answer_id, item.predicted, item.gold});
      const double d = item.predicted - item.gold;
      squared += d * d;
    } else {
      const int human = grader(item);
      out.human_pairs.push_back({item.answer_id, human, item.gold});
      const double d = human - item.gold;
      squared += d * d;
    }
  }
  out.n_total = items.size();
  out.coverage = static_cast<double>(out.auto_pairs.size()) / static_cast<double>(out.n_total);
  out.final_rmse = std::sqrt(squared / static_cast<double>(out.n_total));
  return out;
}

double rmse_at_top_coverage(std::span<const ScoredItem> items, double fraction) {
  if (items.empty()) throw EmptyError("rmse_at_top_coverage of an empty set");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw RangeError("coverage fraction must be in (0, 1]");
  }
  std::vector<const ScoredItem*> order;
  order.reserve(items.size());
  for (const auto& it : items) order.push_back(&it);
  const auto key = [](double c) { return std::isnan(c) ? -calibration::kRouteAll : c; };
  std::sort(order.begin(), order.end(), [&](const ScoredItem* a, const ScoredItem* b) {
    const double ca = key(a->confidence);
    const double cb = key(b->confidence);
    if (ca != cb) return ca > cb;
    return a->answer_id < b->answer_id;
  });
  // Guard against 0.3 * 10 = 3.0000000000000004 style rounding in the ceil.
  auto take = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(items.size()) - 1e-9));
  take = std::clamp<std::size_t>(take, 1, items.size());
  double squared = 0.0;
  for (std::size_t i = 0; i < take; ++i) {
    const double d = order[i]->predicted - order[i]->gold;
    squared += d * d;
  }
  return std::sqrt(squared / static_cast<double>(take));
}

double qwk(std::span<const int> a, std::span<const int> b, int max_score) {
  if (a.size() != b.size()) {
    throw LengthMismatchError("qwk inputs of length " + std::to_string(a.size()) + " and " +
                              std::to_string(b.size()));
  }
  if (a.empty()) throw LengthMismatchError("qwk needs at least one rating pair");
  if (max_score < 1) throw RangeError("qwk needs max_score >= 1");
  const auto k = static_cast<std::size_t>(max_score + 1);
  std::vector<double> observed(k * k, 0.0), hist_a(k, 0.0), hist_b(k, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || a[i] > max_score || b[i] < 0 || b[i] > max_score) {
      throw RangeError("qwk rating outside 0.." + std::to_string(max_score));
    }
    const auto x = static_cast<std::size_t>(a[i]);
    const auto y = static_cast<std::size_t>(b[i]);
    observed[x * k + y] += 1.0;
    hist_a[x] += 1.0;
    hist_b[y] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  const double norm = static_cast<double>(max_score) * max_score;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double diff = static_cast<double>(i) - static_cast<double>(j);
      const double w = diff * diff / norm;
      num += w * observed[i * k + j];
      den += w * hist_a[i] * hist_b[j] / n;
    }
  }
  if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
  return 1.0 - num / den;
}

std::string_view group_name(IgaGroup group) {
  return group == IgaGroup::higher ? "higher" : "lower";
}

IgaReport iga_analysis(const corpus::Corpus& corpus, std::span<const TriageOutcome> outcomes) {
  IgaReport report;
  std::vector<corpus::PromptSpec> prompts = corpus.prompts;
  std::sort(prompts.begin(), prompts.end(),
            [](const auto& x, const auto& y) { return x.prompt_id < y.prompt_id; });
  for (const auto& p : prompts) {
    std::vector<int> gold, second;
    for (const auto& r : corpus.records) {
      if (r.prompt_id == p.prompt_id && r.rater2_score) {
        gold.push_back(r.gold_score);
        second.push_back(*r.rater2_score);
      }
    }
    if (gold.empty()) continue;
    report.prompts.push_back({p.prompt_id, qwk(gold, second, p.max_score), IgaGroup::lower});
  }
  if (report.prompts.size() < 2) {
    throw InsufficientRaterDataError("IGA analysis needs >= 2 prompts with second ratings, got " +
                                     std::to_string(report.prompts.size()));
  }
  double total = 0.0;
  for (const auto& p : report.prompts) total += p.iga;
  report.mean_iga = total / static_cast<double>(report.prompts.size());
  std::map<std::string, IgaGroup> group_of;
  std::size_t n_higher = 0;
  for (auto& p : report.prompts) {
    if (p.iga > report.mean_iga) {
      p.group = IgaGroup::higher;
      ++n_higher;
    }
    group_of[p.prompt_id] = p.group;
  }
  report.degenerate = n_higher == 0 || n_higher == report.prompts.size();

  struct Acc {
    std::set<std::string> prompts;
    std::size_t n = 0;
    double coverage = 0.0;
    double rmse = 0.0;
  };
  std::map<std::tuple<int, int, double>, Acc> acc;
  for (const auto& o : outcomes) {
    const auto it = group_of.find(o.prompt_id);
    if (it == group_of.end()) continue;
    auto& a = acc[{static_cast<int>(it->second), static_cast<int>(o.method), o.target_e}];
    a.prompts.insert(o.prompt_id);
    ++a.n;
    a.coverage += o.coverage;
    a.rmse += o.final_rmse;
  }
  for (const auto& [key, a] : acc) {
    IgaGroupStat s;
    s.group = static_cast<IgaGroup>(std::get<0>(key));
    s.method = static_cast<confidence::Method>(std::get<1>(key));
    s.target_e = std::get<2>(key);
    s.n_prompts = a.prompts.size();
    s.n_outcomes = a.n;
    s.mean_coverage = a.coverage / static_cast<double>(a.n);
    s.mean_final_rmse = a.rmse / static_cast<double>(a.n);
    report.groups.push_back(s);
  }
  return report;
}

Aggregate parse_aggregate(std::string_view name) {
  if (name == "macro") return Aggregate::macro;
  if (name == "pooled") return Aggregate::pooled;
  throw ConfigError("unknown aggregate mode '" + std::string(name) + "'");
}

std::string_view aggregate_name(Aggregate mode) {
  return mode == Aggregate::macro ? "macro" : "pooled";
}

namespace {

void mean_sd(const std::vector<double>& xs, double& mean, double& sd) {
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  sd = 0.0;
  if (xs.size() < 2) return;
  double ss = 0.0;
  for (const double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::vector<SummaryRow> summarize(std::span<const TriageOutcome> outcomes, Aggregate mode) {
  // (method, e) -> seed -> outcomes
  std::map<std::pair<int, double>, std::map<std::uint64_t, std::vector<const TriageOutcome*>>>
      groups;
  for (const auto& o : outcomes) {
    groups[{static_cast<int>(o.method), o.target_e}][o.seed].push_back(&o);
  }
  std::vector<SummaryRow> rows;
  for (const auto& [key, by_seed] : groups) {
    std::vector<double> coverage, rmse;
    for (const auto& [seed, list] : by_seed) {
      if (mode == Aggregate::macro) {
        double c = 0.0, r = 0.0;
        for (const auto* o : list) {
          c += o->coverage;
          r += o->final_rmse;
        }
        coverage.push_back(c / static_cast<double>(list.size()));
        rmse.push_back(r / static_cast<double>(list.size()));
      } else {
        double automatic = 0.0, total = 0.0, squared = 0.0;
        for (const auto* o : list) {
          automatic += static_cast<double>(o->auto_pairs.size());
          total += static_cast<double>(o->n_total);
          for (const auto& p : o->auto_pairs) {
            squared += static_cast<double>((p.predicted - p.gold) * (p.predicted - p.gold));
          }
          for (const auto& p : o->human_pairs) {
            squared += static_cast<double>((p.human_score - p.gold) * (p.human_score - p.gold));
          }
        }
        coverage.push_back(automatic / total);
        rmse.push_back(std::sqrt(squared / total));
      }
    }
    SummaryRow row;
    row.method = static_cast<confidence::Method>(key.first);
    row.target_e = key.second;
    row.n_seeds = by_seed.size();
    mean_sd(coverage, row.mean_coverage, row.sd_coverage);
    mean_sd(rmse, row.mean_final_rmse, row.sd_final_rmse);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace tscore::triage
