#include "tscore/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "tscore/errors.hpp"
#include "tscore/io.hpp"
#include "tscore/rng.hpp"

namespace tscore::scorer {

using nlohmann::json;

namespace {

// Splits UTF-8 into code point byte ranges. Malformed bytes become
// single-byte units.
std::vector<std::string_view> code_points(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3
                                      : (lead >> 3) == 0x1E ? 4 : 1;
    if (i + len > text.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.push_back(text.substr(i, len));
    i += len;
  }
  return out;
}

bool is_space(std::string_view cp) {
  return cp.size() == 1 && (cp[0] == ' ' || cp[0] == '\t' || cp[0] == '\n' ||
                            cp[0] == '\r' || cp[0] == '\f' || cp[0] == '\v');
}

std::string normalize(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (const auto cp : code_points(text)) {
    if (is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    if (cp.size() == 1 && cp[0] >= 'A' && cp[0] <= 'Z') {
      out += static_cast<char>(cp[0] - 'A' + 'a');
    } else {
      out += cp;
    }
  }
  return out;
}

std::uint32_t bucket(char kind, std::string_view gram, std::uint32_t dim) {
  const char prefix[1] = {kind};
  return static_cast<std::uint32_t>(io::fnv1a(gram, io::fnv1a({prefix, 1})) % dim);
}

/// Example features remapped onto model columns; unknown buckets dropped.
struct CompactExample {
  std::vector<std::pair<int, double>> columns;
  int label = 0;
};

std::vector<std::pair<int, double>> compact_features(const ScoringModel& model,
                                                     const FeatureVector& fv) {
  std::vector<std::pair<int, double>> cols;
  cols.reserve(fv.entries.size());
  const auto& index = model.feature_index;
  auto it = index.begin();
  for (const auto& [bucket_id, weight] : fv.entries) {
    it = std::lower_bound(it, index.end(), bucket_id);
    if (it == index.end()) break;
    if (*it == bucket_id) cols.emplace_back(static_cast<int>(it - index.begin()), weight);
  }
  return cols;
}

std::vector<CompactExample> compact(const ScoringModel& model, std::span<const Example> examples) {
  std::vector<CompactExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.label < 0 || ex.label > model.max_score) {
      throw RangeError("label " + std::to_string(ex.label) + " outside 0.." +
                       std::to_string(model.max_score));
    }
    out.push_back({compact_features(model, ex.features), ex.label});
  }
  return out;
}

// Forward pass. Fills `hidden` (tanh activation) and `probs`; returns the
// negative log-likelihood of `label` (or 0 when label < 0).
// `hidden_scale` multiplies every hidden weight; training uses it to apply
// weight decay lazily.
double forward(const ScoringModel& model, const std::vector<std::pair<int, double>>& cols,
               int label, Eigen::VectorXd& hidden, Eigen::VectorXd& probs,
               double hidden_scale = 1.0) {
  hidden = model.hidden_bias;
  for (const auto& [c, w] : cols) {
    hidden.noalias() += (hidden_scale * w) * model.hidden_weights.col(c);
  }
  hidden = hidden.array().tanh().matrix();
  probs.noalias() = model.head_weights * hidden;
  probs += model.head_bias;
  const double shift = probs.maxCoeff();
  probs = (probs.array() - shift).exp().matrix();
  const double z = probs.sum();
  probs /= z;
  if (label < 0) return 0.0;
  // log p_y computed from logits to stay finite when p_y underflows.
  const double logit_y = (model.head_weights.row(label).dot(hidden) + model.head_bias(label));
  return -(logit_y - shift - std::log(z));
}

double squared_norm(const ScoringModel& m) {
  return m.hidden_weights.squaredNorm() + m.hidden_bias.squaredNorm() +
         m.head_weights.squaredNorm() + m.head_bias.squaredNorm();
}

double total_nll(const ScoringModel& model, const std::vector<CompactExample>& data) {
  Eigen::VectorXd hidden, probs;
  double total = 0.0;
  for (const auto& ex : data) total += forward(model, ex.columns, ex.label, hidden, probs);
  return total;
}

/// Backward pass of one example, scaled by `scale`, into dense gradient
/// buffers. `hidden_delta` receives dL/dz of the hidden pre-activation.
void backward(const ScoringModel& model, const Eigen::VectorXd& hidden,
              const Eigen::VectorXd& probs, int label, double scale, Eigen::MatrixXd& g_head,
              Eigen::VectorXd& g_head_bias, Eigen::VectorXd& hidden_delta) {
  Eigen::VectorXd d_logits = probs * scale;
  d_logits(label) -= scale;
  g_head.noalias() += d_logits * hidden.transpose();
  g_head_bias += d_logits;
  hidden_delta.noalias() = model.head_weights.transpose() * d_logits;
  hidden_delta.array() *= (1.0 - hidden.array().square());
}

std::vector<Example> to_examples(std::span<const corpus::AnswerRecord> records,
                                 const corpus::PromptSpec& prompt, std::uint32_t dim) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.prompt_id != prompt.prompt_id) {
      throw PromptMismatchError("record '" + r.answer_id + "' belongs to prompt '" +
                                r.prompt_id + "', expected '" + prompt.prompt_id + "'");
    }
    out.push_back({featurize(r.text, dim), r.gold_score});
  }
  return out;
}

void check_hyper(const HyperParams& hp) {
  if (hp.hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
  if (hp.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (hp.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(hp.learning_rate > 0.0) || !std::isfinite(hp.learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(hp.l2 >= 0.0) || !std::isfinite(hp.l2)) throw ConfigError("l2 must be >= 0");
  if (hp.feature_dim == 0) throw ConfigError("feature_dim must be >= 1");
}

}  // namespace

FeatureVector featurize(std::string_view text, std::uint32_t dim) {
  FeatureVector fv;
  fv.dim = dim;
  const auto norm = normalize(text);
  if (norm.empty()) return fv;

  std::unordered_map<std::uint32_t, double> counts;
  const auto cps = code_points(norm);
  std::vector<std::size_t> offsets;  // byte offset of each code point
  offsets.reserve(cps.size() + 1);
  std::size_t pos = 0;
  for (const auto cp : cps) {
    offsets.push_back(pos);
    pos += cp.size();
  }
  offsets.push_back(pos);
  const std::string_view all(norm);
  for (std::size_t n = 2; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= cps.size(); ++i) {
      counts[bucket('c', all.substr(offsets[i], offsets[i + n] - offsets[i]), dim)] += 1.0;
    }
  }
  std::size_t start = 0;
  while (start <= all.size()) {
    auto end = all.find(' ', start);
    if (end == std::string_view::npos) end = all.size();
    if (end > start) counts[bucket('w', all.substr(start, end - start), dim)] += 1.0;
    start = end + 1;
  }

  fv.entries.reserve(counts.size());
  double norm_sq = 0.0;
  for (const auto& [idx, c] : counts) {
    const double tf = 1.0 + std::log(c);
    fv.entries.emplace_back(idx, tf);
    norm_sq += tf * tf;
  }
  std::sort(fv.entries.begin(), fv.entries.end());
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (auto& e : fv.entries) e.second *= inv;
  return fv;
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

ScoringModel initialize(const corpus::PromptSpec& prompt, std::span<const Example> examples,
                        const HyperParams& hp) {
  check_hyper(hp);
  ScoringModel m;
  m.prompt_id = prompt.prompt_id;
  m.max_score = prompt.max_score;
  m.feature_dim = hp.feature_dim;
  for (const auto& ex : examples) {
    if (ex.features.dim != hp.feature_dim) {
      throw DimensionMismatchError("feature dimension " + std::to_string(ex.features.dim) +
                                   " != " + std::to_string(hp.feature_dim));
    }
    for (const auto& e : ex.features.entries) m.feature_index.push_back(e.first);
  }
  std::sort(m.feature_index.begin(), m.feature_index.end());
  m.feature_index.erase(std::unique(m.feature_index.begin(), m.feature_index.end()),
                        m.feature_index.end());

  const auto d_h = hp.hidden_dim;
  const auto n_cols = static_cast<Eigen::Index>(m.feature_index.size());
  const auto classes = prompt.num_classes();
  Rng rng(mix_seed(hp.seed, 0x5c0e));
  m.hidden_weights.resize(d_h, n_cols);
  for (Eigen::Index c = 0; c < n_cols; ++c) {
    for (int r = 0; r < d_h; ++r) m.hidden_weights(r, c) = kHiddenInitStddev * standard_normal(rng);
  }
  m.hidden_bias = Eigen::VectorXd::Zero(d_h);
  const double head_scale = 1.0 / std::sqrt(static_cast<double>(d_h));
  m.head_weights.resize(classes, d_h);
  for (int c = 0; c < d_h; ++c) {
    for (int r = 0; r < classes; ++r) m.head_weights(r, c) = head_scale * standard_normal(rng);
  }
  m.head_bias = Eigen::VectorXd::Zero(classes);
  m.training.seed = hp.seed;
  m.training.learning_rate = hp.learning_rate;
  m.training.l2 = hp.l2;
  m.training.batch_size = hp.batch_size;
  return m;
}

double objective(const ScoringModel& model, std::span<const Example> examples, double l2) {
  if (examples.empty()) throw EmptyTrainSetError("objective over an empty example set");
  return total_nll(model, compact(model, examples)) + l2 * squared_norm(model);
}

Gradient gradient(const ScoringModel& model, std::span<const Example> examples, double l2) {
  if (examples.empty()) throw EmptyTrainSetError("gradient over an empty example set");
  const auto data = compact(model, examples);
  Gradient g;
  g.hidden_weights = 2.0 * l2 * model.hidden_weights;
  g.hidden_bias = 2.0 * l2 * model.hidden_bias;
  g.head_weights = 2.0 * l2 * model.head_weights;
  g.head_bias = 2.0 * l2 * model.head_bias;
  Eigen::VectorXd hidden, probs, delta;
  for (const auto& ex : data) {
    forward(model, ex.columns, ex.label, hidden, probs);
    backward(model, hidden, probs, ex.label, 1.0, g.head_weights, g.head_bias, delta);
    g.hidden_bias += delta;
    for (const auto& [c, w] : ex.columns) g.hidden_weights.col(c) += w * delta;
  }
  return g;
}

ScoringModel train_examples(std::span<const Example> examples, const corpus::PromptSpec& prompt,
                            const HyperParams& hp) {
  if (examples.empty()) {
    throw EmptyTrainSetError("no training answers for prompt '" + prompt.prompt_id + "'");
  }
  auto model = initialize(prompt, examples, hp);
  const auto data = compact(model, examples);
  const double l2 = hp.l2;
  const auto full_objective = [&] { return total_nll(model, data) + l2 * squared_norm(model); };

  model.training.initial_loss = full_objective();
  if (!std::isfinite(model.training.initial_loss)) {
    throw DivergenceError("non-finite loss at initialization");
  }

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(hp.seed, 0xba7c));

  const auto d_h = model.hidden_dim();
  const auto classes = model.num_classes();
  Eigen::MatrixXd g_head(classes, d_h);
  Eigen::VectorXd g_head_bias(classes), g_hidden_bias(d_h);
  std::vector<Eigen::VectorXd> deltas(static_cast<std::size_t>(hp.batch_size));
  Eigen::VectorXd hidden, probs;
  const double lr = hp.learning_rate;
  const double n_total = static_cast<double>(data.size());

  model.training.final_loss = model.training.initial_loss;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    // The hidden matrix is stored as hidden_scale * hidden_weights during an
    // epoch so decay does not touch every column on every step.
    double hidden_scale = 1.0;
    shuffle(std::span<std::size_t>(order), rng);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(hp.batch_size)) {
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(hp.batch_size));
      g_head.setZero();
      g_head_bias.setZero();
      g_hidden_bias.setZero();
      // Gradients at the current parameters first, then one simultaneous step.
      for (std::size_t k = begin; k < end; ++k) {
        const auto& ex = data[order[k]];
        forward(model, ex.columns, ex.label, hidden, probs, hidden_scale);
        backward(model, hidden, probs, ex.label, 1.0, g_head, g_head_bias, deltas[k - begin]);
        g_hidden_bias += deltas[k - begin];
      }
      if (l2 > 0.0) {
        // This batch's share |B| / I of the penalty, so one epoch of steps
        // covers the whole objective once.
        const double decay = 1.0 - 2.0 * lr * l2 * static_cast<double>(end - begin) / n_total;
        hidden_scale *= decay;
        model.hidden_bias *= decay;
        model.head_weights *= decay;
        model.head_bias *= decay;
      }
      model.head_weights.noalias() -= lr * g_head;
      model.head_bias.noalias() -= lr * g_head_bias;
      model.hidden_bias.noalias() -= lr * g_hidden_bias;
      for (std::size_t k = begin; k < end; ++k) {
        for (const auto& [c, w] : data[order[k]].columns) {
          model.hidden_weights.col(c).noalias() -= (lr * w / hidden_scale) * deltas[k - begin];
        }
      }
    }
    model.hidden_weights *= hidden_scale;
    const double loss = full_objective();
    if (!std::isfinite(loss)) {
      throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch + 1));
    }
    model.training.loss_history.push_back(loss);
    model.training.final_loss = loss;
  }
  model.training.epochs = hp.epochs;
  return model;
}

ScoringModel train(std::span<const corpus::AnswerRecord> train_set,
                   const corpus::PromptSpec& prompt, const HyperParams& hp) {
  if (train_set.empty()) {
    throw EmptyTrainSetError("no training answers for prompt '" + prompt.prompt_id + "'");
  }
  check_hyper(hp);
  const auto examples = to_examples(train_set, prompt, hp.feature_dim);
  return train_examples(examples, prompt, hp);
}

Prediction predict_features(const ScoringModel& model, const FeatureVector& features,
                            std::string answer_id) {
  if (features.dim != model.feature_dim) {
    throw DimensionMismatchError("feature dimension " + std::to_string(features.dim) +
                                 " != model dimension " + std::to_string(model.feature_dim));
  }
  Eigen::VectorXd hidden, probs;
  forward(model, compact_features(model, features), -1, hidden, probs);
  Prediction p;
  p.answer_id = std::move(answer_id);
  p.posterior.assign(probs.data(), probs.data() + probs.size());
  p.embedding.assign(hidden.data(), hidden.data() + hidden.size());
  p.predicted_score = argmax_lowest(p.posterior);
  return p;
}

Prediction predict(const ScoringModel& model, const corpus::AnswerRecord& record) {
  if (record.prompt_id != model.prompt_id) {
    throw PromptMismatchError("record '" + record.answer_id + "' belongs to prompt '" +
                              record.prompt_id + "', model was trained for '" +
                              model.prompt_id + "'");
  }
  return predict_features(model, featurize(record.text, model.feature_dim), record.answer_id);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json matrix_row_major(const Eigen::MatrixXd& m) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) flat.push_back(m(r, c));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

Eigen::MatrixXd matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ParseError("matrix data length does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  }
  return m;
}

json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

std::string model_to_json(const ScoringModel& m) {
  const json training = {{"epochs", m.training.epochs},
                         {"seed", m.training.seed},
                         {"learning_rate", m.training.learning_rate},
                         {"l2", m.training.l2},
                         {"batch_size", m.training.batch_size},
                         {"initial_loss", m.training.initial_loss},
                         {"final_loss", m.training.final_loss},
                         {"loss_history", m.training.loss_history}};
  const json j = {{"format", "tscore.scoring_model"},
                  {"version", kModelFormatVersion},
                  {"prompt_id", m.prompt_id},
                  {"max_score", m.max_score},
                  {"feature_dim", m.feature_dim},
                  {"hidden_dim", m.hidden_dim()},
                  {"feature_index", m.feature_index},
                  {"hidden_weights", matrix_row_major(m.hidden_weights)},
                  {"hidden_bias", vector_json(m.hidden_bias)},
                  {"head_weights", matrix_row_major(m.head_weights)},
                  {"head_bias", vector_json(m.head_bias)},
                  {"training", training}};
  return j.dump() + "\n";
}

ScoringModel model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "tscore.scoring_model") {
    throw ParseError("not a scoring model file");
  }
  if (!j.contains("version") || j["version"] != kModelFormatVersion) {
    throw VersionMismatchError("model format version " +
                               (j.contains("version") ? j["version"].dump() : "<missing>") +
                               ", expected " + std::to_string(kModelFormatVersion));
  }
  ScoringModel m;
  try {
    m.prompt_id = j.at("prompt_id").get<std::string>();
    m.max_score = j.at("max_score").get<int>();
    m.feature_dim = j.at("feature_dim").get<std::uint32_t>();
    m.feature_index = j.at("feature_index").get<std::vector<std::uint32_t>>();
    m.hidden_weights = matrix_from(j.at("hidden_weights"));
    m.hidden_bias = vector_from(j.at("hidden_bias"));
    m.head_weights = matrix_from(j.at("head_weights"));
    m.head_bias = vector_from(j.at("head_bias"));
    const auto& t = j.at("training");
    m.training.epochs = t.at("epochs").get<int>();
    m.training.seed = t.at("seed").get<std::uint64_t>();
    m.training.learning_rate = t.at("learning_rate").get<double>();
    m.training.l2 = t.at("l2").get<double>();
    m.training.batch_size = t.at("batch_size").get<int>();
    m.training.initial_loss = t.at("initial_loss").get<double>();
    m.training.final_loss = t.at("final_loss").get<double>();
    m.training.loss_history = t.at("loss_history").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  const auto d_h = m.hidden_bias.size();
  if (m.max_score < 1 || m.head_weights.rows() != m.max_score + 1 ||
      m.head_bias.size() != m.max_score + 1 || m.head_weights.cols() != d_h ||
      m.hidden_weights.rows() != d_h ||
      m.hidden_weights.cols() != static_cast<Eigen::Index>(m.feature_index.size()) ||
      !std::is_sorted(m.feature_index.begin(), m.feature_index.end())) {
    throw ParseError("model file: inconsistent parameter shapes");
  }
  const auto finite = [](const auto& x) { return x.allFinite(); };
  if (!finite(m.hidden_weights) || !finite(m.hidden_bias) || !finite(m.head_weights) ||
      !finite(m.head_bias)) {
    throw ParseError("model file: non-finite parameters");
  }
  return m;
}

}  // namespace tscore::scorer
