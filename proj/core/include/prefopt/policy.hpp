#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "prefopt/corpus.hpp"

namespace prefopt {

/// How a policy's logits were initialized; persisted in checkpoints.
struct PolicyInit {
  enum class Kind { zero, gaussian };
  Kind kind = Kind::zero;
  double stdev = 0.0;
  std::uint64_t seed = 0;

  friend bool operator==(const PolicyInit&, const PolicyInit&) = default;
};

/// Dense table over (context row, next token). A context is the last `order`
/// tokens of the history, left-padded with BOS, read as a base-V number.
class LogitTable {
 public:
  LogitTable(int vocab, int order);

  int vocab() const noexcept { return vocab_; }
  int order() const noexcept { return order_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> row(std::size_t r) noexcept;
  std::span<const double> row(std::size_t r) const noexcept;

  double& at(std::size_t r, Token t) noexcept { return values_[r * vocab_ + t]; }
  double at(std::size_t r, Token t) const noexcept { return values_[r * vocab_ + t]; }

  /// Row index of the context formed by the last `order` tokens of `history`.
  std::size_t context_row(std::span<const Token> history) const noexcept;
  bool same_shape(const LogitTable& other) const noexcept {
    return vocab_ == other.vocab_ && order_ == other.order_;
  }

  friend bool operator==(const LogitTable&, const LogitTable&) = default;

 private:
  int vocab_;
  int order_;
  std::size_t rows_;
  std::vector<double> values_;
};

/// Gradient with the index space of a policy's logits. Additive across
/// samples.
class GradientTensor : public LogitTable {
 public:
  using LogitTable::LogitTable;

  GradientTensor& operator+=(const GradientTensor& other);
  GradientTensor& operator*=(double scale) noexcept;
  double max_abs() const noexcept;
  double l2_norm() const noexcept;
  bool all_finite() const noexcept;
};

/// Tabular order-k softmax policy pi(token | last k tokens).
class Policy : public LogitTable {
 public:
  /// All-zero logits, i.e. the uniform policy.
  Policy(int vocab, int order = 2);

  static Policy gaussian(int vocab, int order, double stdev, std::uint64_t seed);

  const PolicyInit& init() const noexcept { return init_; }
  void set_init(const PolicyInit& init) noexcept { init_ = init; }

  /// Log-softmax of one row, written into `out` (size vocab()).
  void row_log_softmax(std::size_t r, std::span<double> out) const;

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  PolicyInit init_;
};

/// log pi(y | prefix): sum over response positions of the row log-softmax at
/// the realized token. An empty prefix gives the marginal pi(y).
double seq_logprob(const Policy& policy, const Sequence& prefix, const Sequence& y);
double seq_logprob_marginal(const Policy& policy, const Sequence& y);

/// Gradient of seq_logprob with respect to the logits.
GradientTensor seq_logprob_grad(const Policy& policy, const Sequence& prefix, const Sequence& y);

/// out += scale * grad seq_logprob(policy, prefix, y). Shapes must match.
void accumulate_seq_logprob_grad(const Policy& policy, const Sequence& prefix, const Sequence& y,
                                 double scale, GradientTensor& out);

/// Row indices visited while scoring y after prefix, in position order.
std::vector<std::size_t> visited_rows(const Policy& policy, const Sequence& prefix,
                                      const Sequence& y);

/// Deep copy used as a frozen reference model.
Policy snapshot(const Policy& policy);

void save_checkpoint(const Policy& policy, std::ostream& out);
void save_checkpoint(const Policy& policy, const std::filesystem::path& path);
Policy load_checkpoint(std::istream& in);
Policy load_checkpoint(const std::filesystem::path& path);

}  // namespace prefopt
