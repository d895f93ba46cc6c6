#include "tscore/calibration.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "tscore/errors.hpp"

namespace tscore::calibration {

using nlohmann::json;

double final_rmse(std::span<const FinalPair> pairs) {
  if (pairs.empty()) throw EmptyError("final_rmse of an empty result set");
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (!p.automatic) continue;
    const double d = p.predicted - p.gold;
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

bool is_automatic(double confidence, double tau) {
  if (tau == kRouteAll || std::isnan(confidence)) return false;
  return confidence >= tau;
}

namespace {

void check_inputs(std::span<const DevItem> dev, ErrBudget budget) {
  if (dev.empty()) throw EmptyError("threshold estimation on empty development data");
  if (!(budget.value >= 0.0)) throw ConfigError("error budget must be >= 0");
}

struct Evaluation {
  double coverage;
  double err;
};

Evaluation evaluate(std::span<const DevItem> dev, double tau) {
  std::vector<FinalPair> pairs;
  pairs.reserve(dev.size());
  std::size_t automatic = 0;
  for (const auto& d : dev) {
    const bool a = is_automatic(d.confidence, tau);
    automatic += a;
    pairs.push_back({a, d.predicted, d.gold});
  }
  return {static_cast<double>(automatic) / static_cast<double>(dev.size()), final_rmse(pairs)};
}

ThresholdPolicy make_policy(double tau, ErrBudget budget, Evaluation eval) {
  ThresholdPolicy p;
  p.tau = tau;
  p.target_e = budget.value;
  p.dev_coverage = eval.coverage;
  p.dev_err = eval.err;
  return p;
}

}  // namespace

ThresholdPolicy estimate_threshold(std::span<const DevItem> dev, ErrBudget budget) {
  check_inputs(dev, budget);
  std::vector<DevItem> sorted;
  sorted.reserve(dev.size());
  for (const auto& d : dev) {
    if (!std::isnan(d.confidence)) sorted.push_back(d);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const DevItem& a, const DevItem& b) { return a.confidence > b.confidence; });

  const auto n = static_cast<double>(dev.size());
  double best_tau = kRouteAll;
  double squared = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double c = sorted[i].confidence;
    if (c == -kRouteAll) break;
    // Items sharing a confidence enter the automatic set together.
    for (; i < sorted.size() && sorted[i].confidence == c; ++i) {
      const double d = sorted[i].predicted - sorted[i].gold;
      squared += d * d;
    }
    if (c == kRouteAll) continue;  // not a candidate, but always automatic
    if (std::sqrt(squared / n) > budget.value) break;
    best_tau = c;
  }
  return make_policy(best_tau, budget, evaluate(dev, best_tau));
}

ThresholdPolicy estimate_threshold_exhaustive(std::span<const DevItem> dev, ErrBudget budget) {
  check_inputs(dev, budget);
  std::vector<double> candidates{kRouteAll};
  for (const auto& d : dev) {
    if (std::isfinite(d.confidence)) candidates.push_back(d.confidence);
  }
  double best_tau = kRouteAll;
  Evaluation best = evaluate(dev, kRouteAll);
  for (const double tau : candidates) {
    const auto eval = evaluate(dev, tau);
    if (eval.err > budget.value) continue;
    if (eval.coverage > best.coverage || (eval.coverage == best.coverage && tau > best_tau)) {
      best = eval;
      best_tau = tau;
    }
  }
  return make_policy(best_tau, budget, best);
}

std::vector<DevItem> pool_dev_folds(std::span<const std::vector<DevItem>> folds) {
  std::vector<DevItem> pooled;
  for (const auto& f : folds) pooled.insert(pooled.end(), f.begin(), f.end());
  return pooled;
}

namespace {

json number_or_inf(double x) {
  if (x == kRouteAll) return "inf";
  return x;
}

}  // namespace

std::string policy_to_json(const ThresholdPolicy& p) {
  const json j = {{"prompt_id", p.prompt_id},
                  {"method", confidence::method_name(p.method)},
                  {"tau", number_or_inf(p.tau)},
                  {"target_e", p.target_e},
                  {"dev_coverage", p.dev_coverage},
                  {"dev_err", p.dev_err},
                  {"pooled_fold_ids", p.pooled_fold_ids}};
  return j.dump(2) + "\n";
}

ThresholdPolicy policy_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    ThresholdPolicy p;
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.method = confidence::parse_method(j.at("method").get<std::string>());
    const auto& tau = j.at("tau");
    if (tau.is_string()) {
      if (tau.get<std::string>() != "inf") throw ParseError("policy tau must be a number or \"inf\"");
      p.tau = kRouteAll;
    } else {
      p.tau = tau.get<double>();
    }
    p.target_e = j.at("target_e").get<double>();
    p.dev_coverage = j.at("dev_coverage").get<double>();
    p.dev_err = j.at("dev_err").get<double>();
    p.pooled_fold_ids = j.at("pooled_fold_ids").get<std::vector<int>>();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("policy file: ") + e.what());
  }
}

}  // namespace tscore::calibration
