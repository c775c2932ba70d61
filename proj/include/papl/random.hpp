#pragma once

#include <cstdint>
#include <limits>
#include <span>

#include "papl/core.hpp"

namespace papl {

// Counter-based generator: the n-th output of stream s under seed k is
// splitmix64(key(k, s) + n * golden_gamma). Streams are independent of
// each other, so work split across threads by stream index reproduces
// bit-for-bit. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Standard normal (Box-Muller; one value per call).
  double normal() noexcept;
  // Uniform integer in [0, n).
  int uniform_int(int n) noexcept;
  // Index drawn from a categorical with the given (normalized) weights.
  int categorical(std::span<const double> probs) noexcept;

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Tabular denoiser with i.i.d. N(0, logit_scale^2) logits at every masked
// (state, position).
TabularDenoiser random_denoiser(const Problem& problem, std::uint64_t seed, double logit_scale = 1.0);

// Random clean sequence, uniform over clean tokens per position.
Sequence random_clean_sequence(const Problem& problem, CounterRng& rng);

// Data distribution over `support_size` distinct random clean sequences
// with Dirichlet(1)-style weights.
DataDistribution random_data_distribution(const Problem& problem, int support_size, std::uint64_t seed);

}  // namespace papl
