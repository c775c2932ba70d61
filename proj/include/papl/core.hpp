#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace papl {

// Tokens are 1-based; the last vocabulary symbol (== vocab size) is the mask.
// Positions are 0-based indices into a sequence.
using Token = int;
using StateId = std::uint32_t;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConstructionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class BudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vocab {
 public:
  explicit Vocab(int size);

  int size() const noexcept { return size_; }
  Token mask() const noexcept { return size_; }
  int num_clean() const noexcept { return size_ - 1; }
  bool is_mask(Token t) const noexcept { return t == size_; }
  bool is_clean(Token t) const noexcept { return t >= 1 && t < size_; }

 private:
  int size_;
};

class Sequence {
 public:
  Sequence() = default;
  explicit Sequence(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}
  Sequence(std::initializer_list<Token> tokens) : tokens_(tokens) {}

  int length() const noexcept { return static_cast<int>(tokens_.size()); }
  Token operator[](int i) const { return tokens_[static_cast<std::size_t>(i)]; }
  void set(int i, Token t) { tokens_[static_cast<std::size_t>(i)] = t; }
  std::span<const Token> tokens() const noexcept { return tokens_; }

  // Copy with position i replaced by t.
  Sequence with(int i, Token t) const {
    Sequence out = *this;
    out.set(i, t);
    return out;
  }

  auto operator<=>(const Sequence&) const = default;

 private:
  std::vector<Token> tokens_;
};

// Number of differing coordinates. Throws UsageError on length mismatch.
int hamming(const Sequence& x, const Sequence& y);

// A vocabulary together with a fixed sequence length. Owns the dense
// base-d encoding of V^L used as the state space of every chain.
class Problem {
 public:
  Problem(int vocab_size, int length);

  const Vocab& vocab() const noexcept { return vocab_; }
  int vocab_size() const noexcept { return vocab_.size(); }
  int length() const noexcept { return length_; }
  Token mask() const noexcept { return vocab_.mask(); }
  std::size_t num_states() const noexcept { return num_states_; }

  StateId encode(const Sequence& x) const;
  StateId encode(std::span<const Token> tokens) const;
  Sequence decode(StateId id) const;
  Token token_at(StateId id, int pos) const noexcept {
    return static_cast<Token>((id / strides_[static_cast<std::size_t>(pos)]) %
                              static_cast<StateId>(vocab_.size())) +
           1;
  }
  // Id of the state obtained by overwriting position pos with token t.
  StateId replace(StateId id, int pos, Token t) const noexcept {
    const auto stride = strides_[static_cast<std::size_t>(pos)];
    return id - static_cast<StateId>(token_at(id, pos) - 1) * stride +
           static_cast<StateId>(t - 1) * stride;
  }
  bool is_masked(StateId id, int pos) const noexcept { return token_at(id, pos) == mask(); }
  int num_masks(StateId id) const noexcept;
  std::uint32_t mask_bits(StateId id) const noexcept;

  int num_masks(const Sequence& x) const;
  std::vector<int> masked_positions(const Sequence& x) const;
  bool is_clean(const Sequence& x) const;
  Sequence all_masked() const;
  StateId all_masked_id() const;

  // Throws UsageError if x has the wrong length or out-of-range tokens.
  void validate(const Sequence& x) const;
  void validate_clean(const Sequence& x) const;

  // "1 2 m" style rendering.
  std::string format(const Sequence& x) const;
  std::string format(StateId id) const { return format(decode(id)); }

  bool operator==(const Problem& other) const noexcept {
    return vocab_.size() == other.vocab_.size() && length_ == other.length_;
  }

 private:
  Vocab vocab_;
  int length_;
  std::size_t num_states_;
  std::vector<StateId> strides_;
};

// All fully clean sequences of the problem in lexicographic order.
std::vector<Sequence> enumerate_clean_sequences(const Problem& problem);

// x0 with exactly k coordinates masked, one entry per k-subset of positions,
// subsets in lexicographic order.
std::vector<Sequence> enumerate_masked_states(const Problem& problem, const Sequence& x0, int k);

// All k-subsets of [0, n) in lexicographic order.
std::vector<std::vector<int>> combinations(int n, int k);

std::uint64_t binomial(int n, int k);

// X_k(x0) for every k in [0, L].
class MaskedStateIndex {
 public:
  MaskedStateIndex(const Problem& problem, const Sequence& x0);

  const std::vector<Sequence>& with_masks(int k) const;
  const Sequence& source() const noexcept { return x0_; }

 private:
  Sequence x0_;
  std::vector<std::vector<Sequence>> by_count_;
};

class DataDistribution {
 public:
  DataDistribution(const Problem& problem, std::vector<Sequence> support, std::vector<double> probs);

  const Problem& problem() const noexcept { return problem_; }
  const std::vector<Sequence>& support() const noexcept { return support_; }
  const std::vector<double>& probs() const noexcept { return probs_; }
  double probability(const Sequence& x) const;
  std::size_t size() const noexcept { return support_.size(); }

 private:
  Problem problem_;
  std::vector<Sequence> support_;
  std::vector<double> probs_;
};

// (masked state, position) -> categorical over the d-1 clean tokens.
using DenoiserTable = std::map<std::pair<Sequence, int>, std::vector<double>>;

// Per-(state, position) logits over clean tokens. Outputs at unmasked
// positions are fixed to the one-hot of the held token and carry no
// parameters. The flat parameter vector has one slot per
// (state, position, clean token); slots at unmasked positions are unused.
class TabularDenoiser {
 public:
  explicit TabularDenoiser(Problem problem);

  static TabularDenoiser from_table(Problem problem, const DenoiserTable& table);

  const Problem& problem() const noexcept { return problem_; }

  // Per-position categorical over clean tokens: softmax at masked
  // positions, one-hot of the held token elsewhere. Throws UsageError when
  // x has no masked position.
  std::vector<std::vector<double>> predict(const Sequence& x) const;

  // Cat(y; D^pos(x)) for clean y.
  double prob(StateId x, int pos, Token y) const noexcept {
    if (!problem_.is_masked(x, pos)) return problem_.token_at(x, pos) == y ? 1.0 : 0.0;
    return probs_[slot(x, pos) + static_cast<std::size_t>(y - 1)];
  }
  double log_prob(StateId x, int pos, Token y) const noexcept;

  // Softmax vector at a masked (state, position).
  std::span<const double> probs(StateId x, int pos) const noexcept {
    return {probs_.data() + slot(x, pos), static_cast<std::size_t>(num_clean_)};
  }
  std::span<const double> logits(StateId x, int pos) const noexcept {
    return {logits_.data() + slot(x, pos), static_cast<std::size_t>(num_clean_)};
  }
  void set_logits(StateId x, int pos, std::span<const double> values);

  std::size_t num_parameters() const noexcept { return logits_.size(); }
  std::span<const double> parameters() const noexcept { return logits_; }
  void set_parameters(std::span<const double> values);
  std::size_t parameter_index(StateId x, int pos, Token y) const noexcept {
    return slot(x, pos) + static_cast<std::size_t>(y - 1);
  }

  // parameters -= learning_rate * gradient
  void apply_update(std::span<const double> gradient, double learning_rate);

 private:
  std::size_t slot(StateId x, int pos) const noexcept {
    return (static_cast<std::size_t>(x) * static_cast<std::size_t>(problem_.length()) +
            static_cast<std::size_t>(pos)) *
           static_cast<std::size_t>(num_clean_);
  }
  void refresh(std::size_t slot_begin);
  void refresh_all();

  Problem problem_;
  int num_clean_;
  std::vector<double> logits_;
  std::vector<double> probs_;
  std::vector<double> log_probs_;
};

// Softmax of a logit vector, computed with max subtraction.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace papl
