#include "prefopt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "prefopt/errors.hpp"
#include "prefopt/numerics.hpp"

namespace prefopt {

Vocab::Vocab(int size) : size_(size) {
  if (size < 4) {
    throw ConfigError("vocabulary size must be >= 4, got " + std::to_string(size));
  }
}

Sequence Sequence::prompt(std::vector<Token> tokens) {
  if (std::find(tokens.begin(), tokens.end(), kEos) != tokens.end()) {
    throw ConfigError("prompt must not contain EOS");
  }
  if (std::any_of(tokens.begin(), tokens.end(), [](Token t) { return t < 0; })) {
    throw ConfigError("negative token id in prompt");
  }
  return Sequence(std::move(tokens), SequenceKind::prompt);
}

Sequence Sequence::response(std::vector<Token> tokens) {
  if (tokens.empty() || tokens.back() != kEos) {
    throw ConfigError("response must end with EOS");
  }
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
    if (tokens[i] == kEos || tokens[i] == kBos || tokens[i] < 0) {
      throw ConfigError("response contains BOS, a negative id, or a non-final EOS");
    }
  }
  return Sequence(std::move(tokens), SequenceKind::response);
}

PreferenceTriplet::PreferenceTriplet(Sequence prompt, Sequence preferred, Sequence rejected,
                                     double reward_gap)
    : x(std::move(prompt)), yw(std::move(preferred)), yl(std::move(rejected)), gap(reward_gap) {
  if (x.kind() != SequenceKind::prompt || yw.kind() != SequenceKind::response ||
      yl.kind() != SequenceKind::response) {
    throw ConfigError("triplet requires (prompt, response, response)");
  }
  if (yw == yl) {
    throw ConfigError("triplet responses must differ");
  }
}

double oracle_reward(const OracleReward& oracle, const Sequence& x, const Sequence& y) {
  const Token anchor = x.empty() ? kBos : x.tokens().back();
  double total = 0.0;
  for (const Token t : y.tokens()) {
    if (const auto it = oracle.weights.find({anchor, t}); it != oracle.weights.end()) {
      total += it->second;
    }
  }
  return total - oracle.length_penalty * static_cast<double>(y.size());
}

bool bt_label(double r_w, double r_l, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return unit(rng) < sigmoid(r_w - r_l);
}

OracleReward planted_oracle(const Vocab& vocab, double unit, std::uint64_t seed) {
  if (!(unit > 0.0) || !std::isfinite(unit)) {
    throw ConfigError("planted oracle unit must be positive and finite");
  }
  Rng rng = make_rng(seed, Stream::sampling);
  std::bernoulli_distribution coin(0.5);
  OracleReward oracle;
  for (Token p = kBos; p < vocab.size(); ++p) {
    if (p == kEos) continue;
    for (Token t = kEos; t < vocab.size(); ++t) {
      oracle.weights[{p, t}] = coin(rng) ? 0.5 * unit : -0.5 * unit;
    }
  }
  return oracle;
}

namespace {

// Length L in [min_len, max_len] drawn so that every sequence over `alphabet`
// symbols with `offset` fixed positions is equally likely.
int draw_length(int min_len, int max_len, int alphabet, int offset, Rng& rng) {
  std::vector<double> weights;
  for (int len = min_len; len <= max_len; ++len) {
    weights.push_back(std::pow(static_cast<double>(alphabet), len - offset));
  }
  std::discrete_distribution<int> pick(weights.begin(), weights.end());
  return min_len + pick(rng);
}

std::vector<Token> draw_content(int count, const Vocab& vocab, Rng& rng) {
  std::uniform_int_distribution<Token> token(kFirstContentToken, vocab.size() - 1);
  std::vector<Token> out(static_cast<std::size_t>(count));
  for (auto& t : out) t = token(rng);
  return out;
}

Sequence draw_response(const Vocab& vocab, int max_len, Rng& rng) {
  const int len = draw_length(1, max_len, vocab.content_size(), 1, rng);
  auto tokens = draw_content(len - 1, vocab, rng);
  tokens.push_back(kEos);
  return Sequence::response(std::move(tokens));
}

}  // namespace

Dataset generate_dataset(const OracleReward& oracle, const Vocab& vocab,
                         const GenerateOptions& options, Rng& rng) {
  if (options.n == 0) {
    throw ConfigError("dataset size n must be >= 1");
  }
  if (options.max_prompt_len < 1 || options.max_resp_len < 1) {
    throw ConfigError("length bounds must be >= 1");
  }
  Dataset out;
  out.reserve(options.n);
  for (std::size_t i = 0; i < options.n; ++i) {
    const int prompt_len = draw_length(1, options.max_prompt_len, vocab.content_size(), 0, rng);
    Sequence x = Sequence::prompt(draw_content(prompt_len, vocab, rng));
    bool placed = false;
    for (int attempt = 0; attempt < options.max_retries && !placed; ++attempt) {
      Sequence a = draw_response(vocab, options.max_resp_len, rng);
      Sequence b = draw_response(vocab, options.max_resp_len, rng);
      if (a == b) continue;
      const double ra = oracle_reward(oracle, x, a);
      const double rb = oracle_reward(oracle, x, b);
      if (std::abs(ra - rb) < options.min_gap) continue;
      if (bt_label(ra, rb, rng)) {
        out.emplace_back(x, std::move(a), std::move(b), ra - rb);
      } else {
        out.emplace_back(x, std::move(b), std::move(a), rb - ra);
      }
      placed = true;
    }
    if (!placed) {
      throw ConfigError("could not draw a distinct response pair after " +
                        std::to_string(options.max_retries) +
                        " retries; vocabulary or length bounds are degenerate");
    }
  }
  return out;
}

Dataset planted_dataset(const Vocab& vocab, double unit, std::size_t n, std::uint64_t seed,
                        int max_prompt_len, int max_resp_len) {
  const OracleReward oracle = planted_oracle(vocab, unit, seed);
  GenerateOptions options;
  options.n = n;
  options.max_prompt_len = max_prompt_len;
  options.max_resp_len = max_resp_len;
  options.min_gap = unit;
  Rng rng = make_rng(seed, Stream::labeling);
  return generate_dataset(oracle, vocab, options, rng);
}

Dataset mixed_confidence_dataset(const Vocab& vocab, double high_unit, double low_unit,
                                 std::size_t n, std::uint64_t seed) {
  if (n < 2) {
    throw ConfigError("mixed-confidence dataset needs n >= 2");
  }
  // Same sign table for both halves; only the scale differs.
  const OracleReward unit_signs = planted_oracle(vocab, 1.0, seed);
  auto scaled = [&](double unit) {
    OracleReward o = unit_signs;
    for (auto& [key, w] : o.weights) w *= unit;
    return o;
  };
  GenerateOptions high;
  high.n = (n + 1) / 2;
  high.min_gap = high_unit;
  GenerateOptions low = high;
  low.n = n / 2;
  low.min_gap = low_unit;
  Rng rng = make_rng(seed, Stream::labeling);
  Dataset a = generate_dataset(scaled(high_unit), vocab, high, rng);
  Dataset b = generate_dataset(scaled(low_unit), vocab, low, rng);
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.push_back(std::move(a[i]));
    if (i < b.size()) out.push_back(std::move(b[i]));
  }
  return out;
}

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json tokens_json(const Sequence& s) {
  return ordered_json(std::vector<Token>(s.tokens().begin(), s.tokens().end()));
}

std::vector<Token> read_tokens(const nlohmann::json& record, const char* field, std::size_t line) {
  const auto it = record.find(field);
  if (it == record.end()) {
    throw FormatError("line " + std::to_string(line) + ": missing field \"" + field + "\"");
  }
  if (!it->is_array()) {
    throw FormatError("line " + std::to_string(line) + ": field \"" + field +
                      "\" must be an integer array");
  }
  std::vector<Token> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number_integer()) {
      throw FormatError("line " + std::to_string(line) + ": field \"" + field +
                        "\" must be an integer array");
    }
    out.push_back(v.get<Token>());
  }
  return out;
}

}  // namespace

void save_jsonl(const Dataset& dataset, std::ostream& out) {
  for (const auto& t : dataset) {
    ordered_json record;
    record["x"] = tokens_json(t.x);
    record["yw"] = tokens_json(t.yw);
    record["yl"] = tokens_json(t.yl);
    record["gap"] = t.gap;
    out << record.dump() << '\n';
  }
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  save_jsonl(dataset, out);
  if (!out) {
    throw Error("write failed: " + path.string());
  }
}

Dataset load_jsonl(std::istream& in) {
  Dataset out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
    }
    if (!record.is_object()) {
      throw FormatError("line " + std::to_string(line) + ": record must be a JSON object");
    }
    auto x = read_tokens(record, "x", line);
    auto yw = read_tokens(record, "yw", line);
    auto yl = read_tokens(record, "yl", line);
    const auto gap = record.find("gap");
    if (gap == record.end()) {
      throw FormatError("line " + std::to_string(line) + ": missing field \"gap\"");
    }
    if (!gap->is_number()) {
      throw FormatError("line " + std::to_string(line) + ": field \"gap\" must be a number");
    }
    try {
      out.emplace_back(Sequence::prompt(std::move(x)), Sequence::response(std::move(yw)),
                       Sequence::response(std::move(yl)), gap->get<double>());
    } catch (const ConfigError& e) {
      throw FormatError("line " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open dataset " + path.string());
  }
  return load_jsonl(in);
}

}  // namespace prefopt
