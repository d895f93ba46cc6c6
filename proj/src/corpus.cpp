#include "tscore/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "tscore/errors.hpp"
#include "tscore/io.hpp"
#include "tscore/rng.hpp"

namespace tscore::corpus {

using nlohmann::json;

namespace {

constexpr std::string_view kPromptsFile = "prompts.json";

void check_score(int score, const PromptSpec& prompt, const std::string& answer_id,
                 const char* field) {
  if (score < 0 || score > prompt.max_score) {
    throw RangeError(std::string(field) + " " + std::to_string(score) + " of answer '" +
                     answer_id + "' outside 0.." + std::to_string(prompt.max_score) +
                     " for prompt '" + prompt.prompt_id + "'");
  }
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

int parse_int(std::string_view field, std::size_t line_no, const char* name) {
  int value = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError(std::string("invalid integer for ") + name + ": '" +
                         std::string(field) + "'",
                     line_no);
  }
  return value;
}

AnswerRecord record_from_json(const json& j, std::size_t line_no) {
  if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
  AnswerRecord rec;
  auto get_string = [&](const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw ParseError(std::string("missing or non-string field '") + key + "'", line_no);
    }
    return it->get<std::string>();
  };
  rec.answer_id = get_string("answer_id");
  rec.prompt_id = get_string("prompt_id");
  rec.text = get_string("text");
  const auto gold = j.find("gold_score");
  if (gold == j.end() || !gold->is_number_integer()) {
    throw ParseError("missing or non-integer field 'gold_score'", line_no);
  }
  rec.gold_score = gold->get<int>();
  const auto r2 = j.find("rater2_score");
  if (r2 != j.end() && !r2->is_null()) {
    if (!r2->is_number_integer()) {
      throw ParseError("non-integer field 'rater2_score'", line_no);
    }
    rec.rater2_score = r2->get<int>();
  }
  return rec;
}

}  // namespace

const PromptSpec& Corpus::prompt(std::string_view prompt_id) const {
  for (const auto& p : prompts) {
    if (p.prompt_id == prompt_id) return p;
  }
  throw RangeError("unknown prompt '" + std::string(prompt_id) + "'");
}

std::vector<AnswerRecord> Corpus::records_for(std::string_view prompt_id) const {
  std::vector<AnswerRecord> out;
  for (const auto& r : records) {
    if (r.prompt_id == prompt_id) out.push_back(r);
  }
  return out;
}

bool Corpus::has_rater2() const {
  return std::any_of(records.begin(), records.end(),
                     [](const AnswerRecord& r) { return r.rater2_score.has_value(); });
}

Format parse_format(std::string_view name) {
  if (name == "jsonl") return Format::jsonl;
  if (name == "tsv") return Format::tsv;
  throw ConfigError("unknown corpus format '" + std::string(name) + "'");
}

std::string_view format_name(Format format) {
  return format == Format::jsonl ? "jsonl" : "tsv";
}

void validate(const Corpus& corpus) {
  std::map<std::string, const PromptSpec*> by_id;
  for (const auto& p : corpus.prompts) {
    if (p.max_score < 1) {
      throw RangeError("prompt '" + p.prompt_id + "' has max_score " +
                       std::to_string(p.max_score) + " < 1");
    }
    if (!by_id.emplace(p.prompt_id, &p).second) {
      throw DuplicateIdError("duplicate prompt id '" + p.prompt_id + "'");
    }
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& r : corpus.records) {
    const auto it = by_id.find(r.prompt_id);
    if (it == by_id.end()) {
      throw RangeError("answer '" + r.answer_id + "' references undeclared prompt '" +
                       r.prompt_id + "'");
    }
    check_score(r.gold_score, *it->second, r.answer_id, "gold_score");
    if (r.rater2_score) check_score(*r.rater2_score, *it->second, r.answer_id, "rater2_score");
    if (!seen.emplace(r.prompt_id, r.answer_id).second) {
      throw DuplicateIdError("duplicate answer id '" + r.answer_id + "' in prompt '" +
                             r.prompt_id + "'");
    }
  }
}

std::string prompts_to_json(std::span<const PromptSpec> prompts) {
  json arr = json::array();
  for (const auto& p : prompts) {
    json j = {{"prompt_id", p.prompt_id}, {"max_score", p.max_score}};
    if (!p.description.empty()) j["description"] = p.description;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::vector<PromptSpec> prompts_from_json(std::string_view text) {
  json arr;
  try {
    arr = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("prompts.json: ") + e.what());
  }
  if (!arr.is_array()) throw ParseError("prompts.json: expected an array");
  std::vector<PromptSpec> prompts;
  for (const auto& j : arr) {
    if (!j.is_object() || !j.contains("prompt_id") || !j["prompt_id"].is_string() ||
        !j.contains("max_score") || !j["max_score"].is_number_integer()) {
      throw ParseError("prompts.json: entries need string prompt_id and integer max_score");
    }
    PromptSpec p;
    p.prompt_id = j["prompt_id"].get<std::string>();
    p.max_score = j["max_score"].get<int>();
    if (j.contains("description") && j["description"].is_string()) {
      p.description = j["description"].get<std::string>();
    }
    prompts.push_back(std::move(p));
  }
  return prompts;
}

std::string records_to_string(std::span<const AnswerRecord> records, Format format) {
  std::ostringstream out;
  for (const auto& r : records) {
    if (format == Format::jsonl) {
      json j = {{"answer_id", r.answer_id},
                {"prompt_id", r.prompt_id},
                {"text", r.text},
                {"gold_score", r.gold_score}};
      if (r.rater2_score) j["rater2_score"] = *r.rater2_score;
      out << j.dump() << '\n';
    } else {
      for (const auto* field : {&r.answer_id, &r.prompt_id, &r.text}) {
        if (field->find_first_of("\t\n\r") != std::string::npos) {
          throw ConfigError("answer '" + r.answer_id +
                            "' contains a tab or newline; use the jsonl format");
        }
      }
      out << r.answer_id << '\t' << r.prompt_id << '\t' << r.gold_score << '\t';
      if (r.rater2_score) out << *r.rater2_score;
      out << '\t' << r.text << '\n';
    }
  }
  return out.str();
}

std::vector<AnswerRecord> records_from_string(std::string_view text, Format format) {
  std::vector<AnswerRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    if (format == Format::jsonl) {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
      }
      records.push_back(record_from_json(j, line_no));
    } else {
      const auto fields = split_tabs(line);
      if (fields.size() != 5) {
        throw ParseError("expected 5 tab-separated fields, got " +
                             std::to_string(fields.size()),
                         line_no);
      }
      AnswerRecord rec;
      rec.answer_id = std::string(fields[0]);
      rec.prompt_id = std::string(fields[1]);
      rec.gold_score = parse_int(fields[2], line_no, "gold_score");
      if (!fields[3].empty()) rec.rater2_score = parse_int(fields[3], line_no, "rater2_score");
      rec.text = std::string(fields[4]);
      if (rec.answer_id.empty() || rec.prompt_id.empty()) {
        throw ParseError("empty answer_id or prompt_id", line_no);
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

Corpus load_corpus(const std::filesystem::path& path, Format format) {
  const auto sidecar = path.parent_path() / kPromptsFile;
  Corpus corpus;
  corpus.prompts = prompts_from_json(io::read_file(sidecar));
  corpus.records = records_from_string(io::read_file(path), format);
  validate(corpus);
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, Format format) {
  validate(corpus);
  const auto body = records_to_string(corpus.records, format);
  io::write_file_atomic(path.parent_path() / kPromptsFile, prompts_to_json(corpus.prompts));
  io::write_file_atomic(path, body);
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::vector<std::string> shuffled_ids(std::span<const AnswerRecord> records,
                                      std::uint64_t seed) {
  if (records.empty()) throw InsufficientDataError("no records to split");
  const auto& prompt_id = records.front().prompt_id;
  std::vector<std::string> ids;
  ids.reserve(records.size());
  for (const auto& r : records) {
    if (r.prompt_id != prompt_id) {
      throw ConfigError("splits are made per prompt; got records of '" + prompt_id +
                        "' and '" + r.prompt_id + "'");
    }
    ids.push_back(r.answer_id);
  }
  // Sorting first makes the split independent of file order.
  std::sort(ids.begin(), ids.end());
  Rng rng(mix_seed(seed, io::fnv1a(prompt_id)));
  shuffle(std::span<std::string>(ids), rng);
  return ids;
}

}  // namespace

SplitSpec make_splits(std::span<const AnswerRecord> records, std::size_t train_n,
                      std::size_t dev_n, std::uint64_t seed) {
  auto splits = make_fold_splits(records, train_n, dev_n, 1, seed);
  return std::move(splits.front());
}

std::vector<SplitSpec> make_fold_splits(std::span<const AnswerRecord> records,
                                        std::size_t train_n, std::size_t dev_n,
                                        std::size_t folds, std::uint64_t seed) {
  if (folds == 0) throw ConfigError("folds must be >= 1");
  if (folds > 1 && train_n != (folds - 1) * dev_n) {
    throw ConfigError("with " + std::to_string(folds) + " folds train_n must equal " +
                      std::to_string(folds - 1) + " * dev_n");
  }
  if (train_n + dev_n > records.size()) {
    throw InsufficientDataError("train_n + dev_n = " + std::to_string(train_n + dev_n) +
                                " exceeds " + std::to_string(records.size()) + " records");
  }
  const auto ids = shuffled_ids(records, seed);
  const auto pool = train_n + dev_n;
  std::vector<std::string> test(ids.begin() + static_cast<std::ptrdiff_t>(pool), ids.end());

  std::vector<SplitSpec> out;
  for (std::size_t f = 0; f < folds; ++f) {
    SplitSpec split;
    split.prompt_id = records.front().prompt_id;
    split.fold_id = static_cast<int>(f);
    // Single fold: [train | dev | test]. Multiple folds: dev is chunk f of the pool.
    const std::size_t dev_begin = folds == 1 ? train_n : f * dev_n;
    for (std::size_t i = 0; i < pool; ++i) {
      if (i >= dev_begin && i < dev_begin + dev_n) {
        split.dev_ids.push_back(ids[i]);
      } else {
        split.train_ids.push_back(ids[i]);
      }
    }
    split.test_ids = test;
    out.push_back(std::move(split));
  }
  return out;
}

std::vector<AnswerRecord> select(std::span<const AnswerRecord> records,
                                 std::span<const std::string> ids) {
  std::map<std::string_view, const AnswerRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.answer_id, &r);
  std::vector<AnswerRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw RangeError("split references unknown answer '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

std::string split_to_json(const SplitSpec& split) {
  const json j = {{"prompt_id", split.prompt_id},
                  {"fold_id", split.fold_id},
                  {"train_ids", split.train_ids},
                  {"dev_ids", split.dev_ids},
                  {"test_ids", split.test_ids}};
  return j.dump() + "\n";
}

SplitSpec split_from_json(std::string_view text) {
  try {
    const auto j = json::parse(text);
    SplitSpec split;
    split.prompt_id = j.at("prompt_id").get<std::string>();
    split.fold_id = j.at("fold_id").get<int>();
    split.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    split.dev_ids = j.at("dev_ids").get<std::vector<std::string>>();
    split.test_ids = j.at("test_ids").get<std::vector<std::string>>();
    return split;
  } catch (const json::exception& e) {
    throw ParseError(std::string("split file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace {

constexpr std::size_t kKeywordsPerScore = 4;
constexpr std::size_t kMinFillers = 20;
constexpr double kDistractorRate = 0.35;

void check_rate(double rate, const char* name) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ConfigError(std::string(name) + " must be in [0, 1], got " + std::to_string(rate));
  }
}

void validate_config(const SynthConfig& c) {
  if (c.n_prompts == 0) throw ConfigError("n_prompts must be >= 1");
  if (c.n_answers == 0) throw ConfigError("n_answers must be >= 1");
  if (c.max_score < 1) throw ConfigError("max_score must be >= 1");
  const auto needed = static_cast<std::size_t>(c.max_score + 1) * kKeywordsPerScore + kMinFillers;
  if (c.vocab_size < needed) {
    throw ConfigError("vocab_size must be >= " + std::to_string(needed) +
                      " for max_score " + std::to_string(c.max_score));
  }
  check_rate(c.noise_rate, "noise_rate");
  check_rate(c.rater2_noise_rate, "rater2_noise_rate");
  for (const auto& p : c.profiles) {
    check_rate(p.noise_rate, "profile noise_rate");
    check_rate(p.rater2_noise_rate, "profile rater2_noise_rate");
  }
}

std::vector<std::string> make_vocabulary(std::size_t size, std::uint64_t seed) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  Rng rng(mix_seed(seed, 1));
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  while (words.size() < size) {
    const auto syllables = 2 + uniform_index(rng, 2);
    std::string w;
    for (std::uint64_t s = 0; s < syllables; ++s) {
      w += consonants[uniform_index(rng, consonants.size())];
      w += vowels[uniform_index(rng, vowels.size())];
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

struct Lexicon {
  std::vector<std::vector<std::string>> keywords;  // per score
  std::vector<std::string> fillers;
};

Lexicon make_lexicon(const SynthConfig& c, const std::vector<std::string>& vocab,
                     std::size_t prompt_index) {
  Rng rng(mix_seed(c.seed, 100 + prompt_index));
  std::vector<std::size_t> order(vocab.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(std::span<std::size_t>(order), rng);
  Lexicon lex;
  std::size_t next = 0;
  lex.keywords.resize(static_cast<std::size_t>(c.max_score + 1));
  for (auto& set : lex.keywords) {
    for (std::size_t k = 0; k < kKeywordsPerScore; ++k) set.push_back(vocab[order[next++]]);
  }
  for (; next < order.size(); ++next) lex.fillers.push_back(vocab[order[next]]);
  return lex;
}

int other_score(Rng& rng, int score, int max_score) {
  const auto pick = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_score)));
  return pick >= score ? pick + 1 : pick;
}

std::string prompt_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "prompt%02zu", index + 1);
  return buf;
}

}  // namespace

Corpus synthesize_corpus(const SynthConfig& config) {
  validate_config(config);
  const auto vocab = make_vocabulary(config.vocab_size, config.seed);
  Corpus corpus;
  for (std::size_t p = 0; p < config.n_prompts; ++p) {
    const auto lex = make_lexicon(config, vocab, p);
    NoiseProfile noise{config.noise_rate, config.rater2_noise_rate};
    if (!config.profiles.empty()) noise = config.profiles[p % config.profiles.size()];

    PromptSpec prompt;
    prompt.prompt_id = prompt_name(p);
    prompt.max_score = config.max_score;
    prompt.description = "synthetic keyword prompt";
    corpus.prompts.push_back(prompt);

    Rng rng(mix_seed(config.seed, 10000 + p));
    for (std::size_t i = 0; i < config.n_answers; ++i) {
      const auto score = static_cast<int>(
          uniform_index(rng, static_cast<std::uint64_t>(config.max_score + 1)));
      const auto& own = lex.keywords[static_cast<std::size_t>(score)];

      std::vector<std::string> tokens;
      std::vector<std::size_t> picks(own.size());
      for (std::size_t k = 0; k < picks.size(); ++k) picks[k] = k;
      shuffle(std::span<std::size_t>(picks), rng);
      const auto hits = 2 + uniform_index(rng, 2);
      for (std::uint64_t k = 0; k < hits; ++k) tokens.push_back(own[picks[k]]);

      if (bernoulli(rng, kDistractorRate)) {
        int neighbour = score == 0                  ? 1
                        : score == config.max_score ? score - 1
                        : bernoulli(rng, 0.5)       ? score - 1
                                                    : score + 1;
        const auto& other = lex.keywords[static_cast<std::size_t>(neighbour)];
        tokens.push_back(other[uniform_index(rng, other.size())]);
      }
      const auto n_fill = 3 + uniform_index(rng, 5);
      for (std::uint64_t k = 0; k < n_fill; ++k) {
        tokens.push_back(lex.fillers[uniform_index(rng, lex.fillers.size())]);
      }
      shuffle(std::span<std::string>(tokens), rng);

      AnswerRecord rec;
      char id[32];
      std::snprintf(id, sizeof id, "a%05zu", i);
      rec.answer_id = id;
      rec.prompt_id = prompt.prompt_id;
      for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (t) rec.text += ' ';
        rec.text += tokens[t];
      }
      rec.gold_score = score;
      if (bernoulli(rng, noise.noise_rate)) {
        rec.gold_score = other_score(rng, score, config.max_score);
      }
      rec.rater2_score = rec.gold_score;
      if (bernoulli(rng, noise.rater2_noise_rate)) {
        rec.rater2_score = other_score(rng, rec.gold_score, config.max_score);
      }
      corpus.records.push_back(std::move(rec));
    }
  }
  return corpus;
}

std::vector<int> keyword_oracle(const SynthConfig& config, const Corpus& corpus) {
  validate_config(config);
  const auto vocab = make_vocabulary(config.vocab_size, config.seed);
  std::map<std::string, std::map<std::string, int>> keyword_score;
  for (std::size_t p = 0; p < config.n_prompts; ++p) {
    const auto lex = make_lexicon(config, vocab, p);
    auto& table = keyword_score[prompt_name(p)];
    for (std::size_t s = 0; s < lex.keywords.size(); ++s) {
      for (const auto& w : lex.keywords[s]) table[w] = static_cast<int>(s);
    }
  }
  std::vector<int> out;
  out.reserve(corpus.records.size());
  for (const auto& r : corpus.records) {
    const auto& table = keyword_score.at(r.prompt_id);
    std::vector<int> counts(static_cast<std::size_t>(config.max_score + 1), 0);
    std::istringstream words(r.text);
    std::string w;
    while (words >> w) {
      const auto it = table.find(w);
      if (it != table.end()) ++counts[static_cast<std::size_t>(it->second)];
    }
    out.push_back(static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                                   counts.begin()));
  }
  return out;
}

}  // namespace tscore::corpus
