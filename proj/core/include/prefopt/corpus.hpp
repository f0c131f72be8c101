#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "prefopt/rng.hpp"

namespace prefopt {

using Token = std::int32_t;

inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kFirstContentToken = 2;

/// Token alphabet: BOS = 0, EOS = 1, content tokens 2..size-1.
class Vocab {
 public:
  explicit Vocab(int size);

  int size() const noexcept { return size_; }
  int content_size() const noexcept { return size_ - kFirstContentToken; }
  bool contains(Token t) const noexcept { return t >= 0 && t < size_; }

 private:
  int size_;
};

enum class SequenceKind { prompt, response };

/// A token sequence tagged as prompt or response.
///
/// Prompts never contain EOS. Responses end with exactly one EOS, contain no
/// BOS, and have length >= 1 (EOS counts toward the length).
class Sequence {
 public:
  static Sequence prompt(std::vector<Token> tokens);
  static Sequence response(std::vector<Token> tokens);

  SequenceKind kind() const noexcept { return kind_; }
  std::span<const Token> tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }

  friend bool operator==(const Sequence&, const Sequence&) = default;

 private:
  Sequence(std::vector<Token> tokens, SequenceKind kind)
      : tokens_(std::move(tokens)), kind_(kind) {}

  std::vector<Token> tokens_;
  SequenceKind kind_;
};

/// (prompt, preferred response, less-preferred response) plus the latent
/// oracle reward gap r*(yw) - r*(yl) recorded at generation time.
struct PreferenceTriplet {
  Sequence x;
  Sequence yw;
  Sequence yl;
  double gap = 0.0;

  PreferenceTriplet(Sequence prompt, Sequence preferred, Sequence rejected, double reward_gap = 0.0);

  friend bool operator==(const PreferenceTriplet&, const PreferenceTriplet&) = default;
};

using Dataset = std::vector<PreferenceTriplet>;

/// Planted ground-truth reward: a (last prompt token, response token) score
/// table plus a linear per-token length penalty. Missing entries score 0.
struct OracleReward {
  std::map<std::pair<Token, Token>, double> weights;
  double length_penalty = 0.0;
};

double oracle_reward(const OracleReward& oracle, const Sequence& x, const Sequence& y);

/// Bradley-Terry draw: true with probability sigmoid(r_w - r_l).
bool bt_label(double r_w, double r_l, Rng& rng);

/// Oracle whose table entries are +-unit/2 with seeded random signs, so every
/// nonzero reward difference between responses is a multiple of unit/2.
OracleReward planted_oracle(const Vocab& vocab, double unit, std::uint64_t seed);

struct GenerateOptions {
  std::size_t n = 1000;
  int max_prompt_len = 1;
  int max_resp_len = 3;
  /// Candidate pairs with |r_a - r_b| below this are redrawn.
  double min_gap = 0.0;
  int max_retries = 10000;
};

/// Samples prompts and candidate response pairs uniformly over valid
/// sequences and orders each pair with a Bradley-Terry draw on the oracle.
Dataset generate_dataset(const OracleReward& oracle, const Vocab& vocab,
                         const GenerateOptions& options, Rng& rng);

/// A dataset whose triplets all carry |gap| >= unit, drawn from
/// planted_oracle(vocab, unit, seed).
Dataset planted_dataset(const Vocab& vocab, double unit, std::size_t n, std::uint64_t seed,
                        int max_prompt_len = 1, int max_resp_len = 3);

/// Interleaves a high-unit and a low-unit planted dataset that share one sign
/// table; even indices come from the high-confidence half.
Dataset mixed_confidence_dataset(const Vocab& vocab, double high_unit, double low_unit,
                                 std::size_t n, std::uint64_t seed);

void save_jsonl(const Dataset& dataset, std::ostream& out);
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_jsonl(std::istream& in);
Dataset load_jsonl(const std::filesystem::path& path);

}  // namespace prefopt
