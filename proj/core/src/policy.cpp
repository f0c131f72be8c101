#include "prefopt/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "prefopt/errors.hpp"

namespace prefopt {

LogitTable::LogitTable(int vocab, int order) : vocab_(vocab), order_(order), rows_(1) {
  if (vocab < 4) {
    throw ConfigError("vocabulary size must be >= 4");
  }
  if (order < 1 || order > 4) {
    throw ConfigError("context order must be in [1, 4]");
  }
  for (int i = 0; i < order; ++i) rows_ *= static_cast<std::size_t>(vocab);
  values_.assign(rows_ * static_cast<std::size_t>(vocab), 0.0);
}

std::span<double> LogitTable::row(std::size_t r) noexcept {
  return std::span<double>(values_).subspan(r * vocab_, vocab_);
}

std::span<const double> LogitTable::row(std::size_t r) const noexcept {
  return std::span<const double>(values_).subspan(r * vocab_, vocab_);
}

std::size_t LogitTable::context_row(std::span<const Token> history) const noexcept {
  std::size_t r = 0;
  const auto k = static_cast<std::size_t>(order_);
  const std::size_t pad = history.size() >= k ? 0 : k - history.size();
  // Leading BOS padding contributes zero digits.
  for (std::size_t i = 0; i < pad; ++i) r *= vocab_;
  for (std::size_t i = history.size() - (k - pad); i < history.size(); ++i) {
    r = r * vocab_ + static_cast<std::size_t>(history[i]);
  }
  return r;
}

GradientTensor& GradientTensor::operator+=(const GradientTensor& other) {
  if (!same_shape(other)) {
    throw ConfigError("gradient shape mismatch");
  }
  auto dst = values();
  auto src = other.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return *this;
}

GradientTensor& GradientTensor::operator*=(double scale) noexcept {
  for (double& v : values()) v *= scale;
  return *this;
}

double GradientTensor::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values()) m = std::max(m, std::abs(v));
  return m;
}

double GradientTensor::l2_norm() const noexcept {
  double s = 0.0;
  for (double v : values()) s += v * v;
  return std::sqrt(s);
}

bool GradientTensor::all_finite() const noexcept {
  return std::all_of(values().begin(), values().end(), [](double v) { return std::isfinite(v); });
}

Policy::Policy(int vocab, int order) : LogitTable(vocab, order) {}

Policy Policy::gaussian(int vocab, int order, double stdev, std::uint64_t seed) {
  if (!(stdev >= 0.0) || !std::isfinite(stdev)) {
    throw ConfigError("init stdev must be finite and >= 0");
  }
  Policy p(vocab, order);
  Rng rng = make_rng(seed, Stream::init);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : p.values()) v = stdev * normal(rng);
  p.init_ = PolicyInit{PolicyInit::Kind::gaussian, stdev, seed};
  return p;
}

void Policy::row_log_softmax(std::size_t r, std::span<double> out) const {
  const auto logits = row(r);
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double log_sum = std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = (logits[i] - m) - log_sum;
}

namespace {

void check_tokens(const Policy& policy, std::span<const Token> tokens) {
  for (const Token t : tokens) {
    if (t < 0 || t >= policy.vocab()) {
      throw ConfigError("token id " + std::to_string(t) + " out of vocabulary of size " +
                        std::to_string(policy.vocab()));
    }
  }
}

// Calls visit(row, realized_token) for every scored response position.
template <typename Visit>
void walk(const Policy& policy, const Sequence& prefix, const Sequence& y, Visit&& visit) {
  check_tokens(policy, prefix.tokens());
  check_tokens(policy, y.tokens());
  std::vector<Token> history(prefix.tokens().begin(), prefix.tokens().end());
  history.reserve(prefix.size() + y.size());
  for (const Token t : y.tokens()) {
    visit(policy.context_row(history), t);
    history.push_back(t);
  }
}

double log_prob_at(const Policy& policy, std::size_t r, Token t) {
  const auto logits = policy.row(r);
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  return logits[t] - m - std::log(sum);
}

}  // namespace

double seq_logprob(const Policy& policy, const Sequence& prefix, const Sequence& y) {
  double total = 0.0;
  walk(policy, prefix, y, [&](std::size_t r, Token t) { total += log_prob_at(policy, r, t); });
  return total;
}

double seq_logprob_marginal(const Policy& policy, const Sequence& y) {
  static const Sequence empty = Sequence::prompt({});
  return seq_logprob(policy, empty, y);
}

void accumulate_seq_logprob_grad(const Policy& policy, const Sequence& prefix, const Sequence& y,
                                 double scale, GradientTensor& out) {
  if (!out.same_shape(policy)) {
    throw ConfigError("gradient shape does not match policy");
  }
  std::vector<double> probs(static_cast<std::size_t>(policy.vocab()));
  walk(policy, prefix, y, [&](std::size_t r, Token t) {
    policy.row_log_softmax(r, probs);
    auto g = out.row(r);
    for (std::size_t v = 0; v < probs.size(); ++v) g[v] -= scale * std::exp(probs[v]);
    g[t] += scale;
  });
}

GradientTensor seq_logprob_grad(const Policy& policy, const Sequence& prefix, const Sequence& y) {
  GradientTensor g(policy.vocab(), policy.order());
  accumulate_seq_logprob_grad(policy, prefix, y, 1.0, g);
  return g;
}

std::vector<std::size_t> visited_rows(const Policy& policy, const Sequence& prefix,
                                      const Sequence& y) {
  std::vector<std::size_t> rows;
  walk(policy, prefix, y, [&](std::size_t r, Token) { rows.push_back(r); });
  return rows;
}

Policy snapshot(const Policy& policy) { return policy; }

namespace {

const char* init_kind_name(PolicyInit::Kind k) {
  return k == PolicyInit::Kind::gaussian ? "gaussian" : "zero";
}

}  // namespace

void save_checkpoint(const Policy& policy, std::ostream& out) {
  nlohmann::ordered_json doc;
  doc["format"] = "prefopt-policy-v1";
  doc["vocab"] = policy.vocab();
  doc["order"] = policy.order();
  doc["init"] = {{"kind", init_kind_name(policy.init().kind)},
                 {"stdev", policy.init().stdev},
                 {"seed", policy.init().seed}};
  doc["logits"] = std::vector<double>(policy.values().begin(), policy.values().end());
  out << doc.dump() << '\n';
}

void save_checkpoint(const Policy& policy, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open " + path.string() + " for writing");
  }
  save_checkpoint(policy, out);
  if (!out) {
    throw Error("write failed: " + path.string());
  }
}

namespace {

Policy parse_checkpoint(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
  for (const char* field : {"vocab", "order", "init", "logits"}) {
    if (!doc.contains(field)) {
      throw FormatError(std::string("checkpoint missing field \"") + field + "\"");
    }
  }
  Policy policy(doc["vocab"].get<int>(), doc["order"].get<int>());
  const auto& logits = doc["logits"];
  if (!logits.is_array() || logits.size() != policy.size()) {
    throw FormatError("checkpoint logits have the wrong length");
  }
  auto values = policy.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = logits[i].get<double>();
    if (!std::isfinite(values[i])) {
      throw FormatError("checkpoint contains a non-finite logit at index " + std::to_string(i));
    }
  }
  const auto& init = doc["init"];
  PolicyInit meta;
  meta.kind = init.value("kind", "zero") == std::string("gaussian") ? PolicyInit::Kind::gaussian
                                                                     : PolicyInit::Kind::zero;
  meta.stdev = init.value("stdev", 0.0);
  meta.seed = init.value("seed", std::uint64_t{0});
  policy.set_init(meta);
  return policy;
}

}  // namespace

Policy load_checkpoint(std::istream& in) {
  try {
    return parse_checkpoint(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
}

Policy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open checkpoint " + path.string());
  }
  return load_checkpoint(in);
}

}  // namespace prefopt
