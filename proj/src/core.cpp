#include "papl/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace papl {

namespace {

constexpr std::size_t kMaxStates = std::size_t{1} << 20;

}  // namespace

Vocab::Vocab(int size) : size_(size) {
  if (size < 2) throw UsageError("vocabulary needs at least one clean token plus the mask");
}

int hamming(const Sequence& x, const Sequence& y) {
  if (x.length() != y.length()) {
    throw UsageError("hamming: sequences have different lengths (" + std::to_string(x.length()) +
                     " vs " + std::to_string(y.length()) + ")");
  }
  int count = 0;
  for (int i = 0; i < x.length(); ++i) count += x[i] != y[i] ? 1 : 0;
  return count;
}

Problem::Problem(int vocab_size, int length) : vocab_(vocab_size), length_(length), num_states_(1) {
  if (length < 1) throw UsageError("sequence length must be positive");
  if (length > 32) throw BudgetError("sequence length above 32 is not supported");
  strides_.reserve(static_cast<std::size_t>(length));
  for (int i = 0; i < length; ++i) {
    strides_.push_back(static_cast<StateId>(num_states_));
    num_states_ *= static_cast<std::size_t>(vocab_size);
    if (num_states_ > kMaxStates) {
      throw BudgetError("state space d^L exceeds " + std::to_string(kMaxStates) + " states");
    }
  }
}

StateId Problem::encode(std::span<const Token> tokens) const {
  StateId id = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    id += static_cast<StateId>(tokens[i] - 1) * strides_[i];
  }
  return id;
}

StateId Problem::encode(const Sequence& x) const {
  validate(x);
  return encode(x.tokens());
}

Sequence Problem::decode(StateId id) const {
  std::vector<Token> tokens(static_cast<std::size_t>(length_));
  for (int i = 0; i < length_; ++i) tokens[static_cast<std::size_t>(i)] = token_at(id, i);
  return Sequence(std::move(tokens));
}

int Problem::num_masks(StateId id) const noexcept {
  int count = 0;
  for (int i = 0; i < length_; ++i) count += is_masked(id, i) ? 1 : 0;
  return count;
}

std::uint32_t Problem::mask_bits(StateId id) const noexcept {
  std::uint32_t bits = 0;
  for (int i = 0; i < length_; ++i) {
    if (is_masked(id, i)) bits |= std::uint32_t{1} << i;
  }
  return bits;
}

int Problem::num_masks(const Sequence& x) const {
  validate(x);
  int count = 0;
  for (Token t : x.tokens()) count += vocab_.is_mask(t) ? 1 : 0;
  return count;
}

std::vector<int> Problem::masked_positions(const Sequence& x) const {
  validate(x);
  std::vector<int> out;
  for (int i = 0; i < length_; ++i) {
    if (vocab_.is_mask(x[i])) out.push_back(i);
  }
  return out;
}

bool Problem::is_clean(const Sequence& x) const { return num_masks(x) == 0; }

Sequence Problem::all_masked() const {
  return Sequence(std::vector<Token>(static_cast<std::size_t>(length_), mask()));
}

StateId Problem::all_masked_id() const { return static_cast<StateId>(num_states_ - 1); }

void Problem::validate(const Sequence& x) const {
  if (x.length() != length_) {
    throw UsageError("sequence has length " + std::to_string(x.length()) + ", expected " +
                     std::to_string(length_));
  }
  for (Token t : x.tokens()) {
    if (t < 1 || t > vocab_.size()) {
      throw UsageError("token " + std::to_string(t) + " outside [1, " +
                       std::to_string(vocab_.size()) + "]");
    }
  }
}

void Problem::validate_clean(const Sequence& x) const {
  validate(x);
  for (Token t : x.tokens()) {
    if (vocab_.is_mask(t)) throw UsageError("expected a fully clean sequence, got " + format(x));
  }
}

std::string Problem::format(const Sequence& x) const {
  std::ostringstream out;
  for (int i = 0; i < x.length(); ++i) {
    if (i > 0) out << ' ';
    if (vocab_.is_mask(x[i])) {
      out << 'm';
    } else {
      out << x[i];
    }
  }
  return out.str();
}

std::vector<Sequence> enumerate_clean_sequences(const Problem& problem) {
  const int length = problem.length();
  const int clean = problem.vocab().num_clean();
  std::vector<Sequence> out;
  std::vector<Token> tokens(static_cast<std::size_t>(length), 1);
  while (true) {
    out.emplace_back(tokens);
    int pos = length - 1;
    while (pos >= 0 && tokens[static_cast<std::size_t>(pos)] == clean) {
      tokens[static_cast<std::size_t>(pos)] = 1;
      --pos;
    }
    if (pos < 0) break;
    ++tokens[static_cast<std::size_t>(pos)];
  }
  return out;
}

std::vector<std::vector<int>> combinations(int n, int k) {
  std::vector<std::vector<int>> out;
  if (k < 0 || k > n) return out;
  std::vector<int> current(static_cast<std::size_t>(k));
  std::iota(current.begin(), current.end(), 0);
  while (true) {
    out.push_back(current);
    int i = k - 1;
    while (i >= 0 && current[static_cast<std::size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++current[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < k; ++j) {
      current[static_cast<std::size_t>(j)] = current[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
  return out;
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t result = 1;
  for (int i = 1; i <= k; ++i) {
    result = result * static_cast<std::uint64_t>(n - k + i) / static_cast<std::uint64_t>(i);
  }
  return result;
}

std::vector<Sequence> enumerate_masked_states(const Problem& problem, const Sequence& x0, int k) {
  problem.validate_clean(x0);
  if (k < 0 || k > problem.length()) {
    throw UsageError("mask count " + std::to_string(k) + " outside [0, " +
                     std::to_string(problem.length()) + "]");
  }
  std::vector<Sequence> out;
  for (const auto& subset : combinations(problem.length(), k)) {
    Sequence x = x0;
    for (int i : subset) x.set(i, problem.mask());
    out.push_back(std::move(x));
  }
  return out;
}

MaskedStateIndex::MaskedStateIndex(const Problem& problem, const Sequence& x0) : x0_(x0) {
  for (int k = 0; k <= problem.length(); ++k) {
    by_count_.push_back(enumerate_masked_states(problem, x0, k));
  }
}

const std::vector<Sequence>& MaskedStateIndex::with_masks(int k) const {
  if (k < 0 || k >= static_cast<int>(by_count_.size())) {
    throw UsageError("mask count " + std::to_string(k) + " out of range");
  }
  return by_count_[static_cast<std::size_t>(k)];
}

DataDistribution::DataDistribution(const Problem& problem, std::vector<Sequence> support,
                                   std::vector<double> probs)
    : problem_(problem), support_(std::move(support)), probs_(std::move(probs)) {
  if (support_.empty()) throw ConstructionError("data distribution needs a non-empty support");
  if (support_.size() != probs_.size()) {
    throw ConstructionError("data distribution: support and probability lists differ in size");
  }
  std::set<Sequence> seen;
  double total = 0.0;
  for (std::size_t n = 0; n < support_.size(); ++n) {
    try {
      problem_.validate_clean(support_[n]);
    } catch (const UsageError& e) {
      throw ConstructionError(std::string("data distribution: ") + e.what());
    }
    if (!seen.insert(support_[n]).second) {
      throw ConstructionError("data distribution: duplicate support sequence " +
                              problem_.format(support_[n]));
    }
    if (!(probs_[n] >= 0.0)) throw ConstructionError("data distribution: negative probability");
    total += probs_[n];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ConstructionError("data distribution: probabilities sum to " + std::to_string(total));
  }
}

double DataDistribution::probability(const Sequence& x) const {
  for (std::size_t n = 0; n < support_.size(); ++n) {
    if (support_[n] == x) return probs_[n];
  }
  return 0.0;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] - top);
    total += out[c];
  }
  for (double& v : out) v /= total;
  return out;
}

TabularDenoiser::TabularDenoiser(Problem problem)
    : problem_(std::move(problem)), num_clean_(problem_.vocab().num_clean()) {
  const std::size_t n = problem_.num_states() * static_cast<std::size_t>(problem_.length()) *
                        static_cast<std::size_t>(num_clean_);
  logits_.assign(n, 0.0);
  probs_.assign(n, 0.0);
  log_probs_.assign(n, 0.0);
  refresh_all();
}

TabularDenoiser TabularDenoiser::from_table(Problem problem, const DenoiserTable& table) {
  TabularDenoiser out(problem);
  const int clean = problem.vocab().num_clean();
  std::set<std::pair<StateId, int>> covered;
  for (const auto& [key, probs] : table) {
    const auto& [state, pos] = key;
    StateId id = 0;
    try {
      id = problem.encode(state);
    } catch (const UsageError& e) {
      throw ConstructionError(std::string("denoiser table: ") + e.what());
    }
    if (pos < 0 || pos >= problem.length() || !problem.is_masked(id, pos)) {
      throw ConstructionError("denoiser table: position " + std::to_string(pos) +
                              " is not a masked position of " + problem.format(state));
    }
    if (static_cast<int>(probs.size()) != clean) {
      throw ConstructionError("denoiser table: entry for " + problem.format(state) + " has " +
                              std::to_string(probs.size()) + " probabilities, expected " +
                              std::to_string(clean));
    }
    double total = 0.0;
    for (double p : probs) {
      if (!(p > 0.0) || !std::isfinite(p)) {
        throw ConstructionError("denoiser table: entry for " + problem.format(state) +
                                " has a non-positive probability");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw ConstructionError("denoiser table: entry for " + problem.format(state) + " sums to " +
                              std::to_string(total));
    }
    std::vector<double> logits(probs.size());
    std::transform(probs.begin(), probs.end(), logits.begin(), [](double p) { return std::log(p); });
    out.set_logits(id, pos, logits);
    covered.emplace(id, pos);
  }
  for (StateId id = 0; id < problem.num_states(); ++id) {
    for (int pos = 0; pos < problem.length(); ++pos) {
      if (problem.is_masked(id, pos) && !covered.contains({id, pos})) {
        throw ConstructionError("denoiser table: missing entry for state " + problem.format(id) +
                                " position " + std::to_string(pos));
      }
    }
  }
  return out;
}

std::vector<std::vector<double>> TabularDenoiser::predict(const Sequence& x) const {
  const StateId id = problem_.encode(x);
  if (problem_.num_masks(id) == 0) {
    throw UsageError("denoiser_predict: " + problem_.format(x) + " has nothing to denoise");
  }
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(problem_.length()));
  for (int pos = 0; pos < problem_.length(); ++pos) {
    if (problem_.is_masked(id, pos)) {
      auto p = probs(id, pos);
      out.emplace_back(p.begin(), p.end());
    } else {
      std::vector<double> onehot(static_cast<std::size_t>(num_clean_), 0.0);
      onehot[static_cast<std::size_t>(x[pos] - 1)] = 1.0;
      out.push_back(std::move(onehot));
    }
  }
  return out;
}

double TabularDenoiser::log_prob(StateId x, int pos, Token y) const noexcept {
  if (!problem_.is_masked(x, pos)) {
    return problem_.token_at(x, pos) == y ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return log_probs_[slot(x, pos) + static_cast<std::size_t>(y - 1)];
}

void TabularDenoiser::set_logits(StateId x, int pos, std::span<const double> values) {
  if (static_cast<int>(values.size()) != num_clean_) {
    throw UsageError("set_logits: expected " + std::to_string(num_clean_) + " values");
  }
  const std::size_t begin = slot(x, pos);
  std::copy(values.begin(), values.end(), logits_.begin() + static_cast<std::ptrdiff_t>(begin));
  refresh(begin);
}

void TabularDenoiser::set_parameters(std::span<const double> values) {
  if (values.size() != logits_.size()) throw UsageError("set_parameters: size mismatch");
  std::copy(values.begin(), values.end(), logits_.begin());
  refresh_all();
}

void TabularDenoiser::apply_update(std::span<const double> gradient, double learning_rate) {
  if (gradient.size() != logits_.size()) throw UsageError("apply_update: size mismatch");
  for (std::size_t n = 0; n < logits_.size(); ++n) logits_[n] -= learning_rate * gradient[n];
  refresh_all();
}

void TabularDenoiser::refresh(std::size_t begin) {
  const std::size_t n = static_cast<std::size_t>(num_clean_);
  double top = logits_[begin];
  for (std::size_t c = 1; c < n; ++c) top = std::max(top, logits_[begin + c]);
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) total += std::exp(logits_[begin + c] - top);
  const double log_total = std::log(total) + top;
  for (std::size_t c = 0; c < n; ++c) {
    log_probs_[begin + c] = logits_[begin + c] - log_total;
    probs_[begin + c] = std::exp(log_probs_[begin + c]);
  }
}

void TabularDenoiser::refresh_all() {
  for (std::size_t begin = 0; begin < logits_.size(); begin += static_cast<std::size_t>(num_clean_)) {
    refresh(begin);
  }
}

}  // namespace papl
