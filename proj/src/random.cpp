#include "papl/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace papl {

namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream)
    : key_(splitmix64(splitmix64(seed + kGamma) ^ splitmix64(stream * 2 + 1))) {}

CounterRng::result_type CounterRng::operator()() noexcept {
  ++counter_;
  return splitmix64(key_ + counter_ * kGamma);
}

double CounterRng::uniform() noexcept {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() noexcept {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int CounterRng::uniform_int(int n) noexcept {
  const auto value = static_cast<int>(uniform() * static_cast<double>(n));
  return std::min(value, n - 1);
}

int CounterRng::categorical(std::span<const double> probs) noexcept {
  const double u = uniform();
  double cumulative = 0.0;
  int last_positive = 0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] <= 0.0) continue;
    cumulative += probs[c];
    last_positive = static_cast<int>(c);
    if (u < cumulative) return last_positive;
  }
  // Rounding left u above the total mass.
  return last_positive;
}

TabularDenoiser random_denoiser(const Problem& problem, std::uint64_t seed, double logit_scale) {
  TabularDenoiser out(problem);
  CounterRng rng(seed, 0x64656e6fULL);
  std::vector<double> logits(static_cast<std::size_t>(problem.vocab().num_clean()));
  for (StateId id = 0; id < problem.num_states(); ++id) {
    for (int pos = 0; pos < problem.length(); ++pos) {
      if (!problem.is_masked(id, pos)) continue;
      for (double& v : logits) v = logit_scale * rng.normal();
      out.set_logits(id, pos, logits);
    }
  }
  return out;
}

Sequence random_clean_sequence(const Problem& problem, CounterRng& rng) {
  std::vector<Token> tokens(static_cast<std::size_t>(problem.length()));
  for (Token& t : tokens) t = 1 + rng.uniform_int(problem.vocab().num_clean());
  return Sequence(std::move(tokens));
}

DataDistribution random_data_distribution(const Problem& problem, int support_size, std::uint64_t seed) {
  const auto total_clean = std::pow(static_cast<double>(problem.vocab().num_clean()), problem.length());
  if (support_size < 1 || static_cast<double>(support_size) > total_clean) {
    throw UsageError("random_data_distribution: support size out of range");
  }
  CounterRng rng(seed, 0x64617461ULL);
  std::set<Sequence> chosen;
  std::vector<Sequence> support;
  while (static_cast<int>(support.size()) < support_size) {
    Sequence x = random_clean_sequence(problem, rng);
    if (chosen.insert(x).second) support.push_back(std::move(x));
  }
  std::vector<double> weights(support.size());
  double total = 0.0;
  for (double& w : weights) {
    w = -std::log(1.0 - rng.uniform());
    total += w;
  }
  for (double& w : weights) w /= total;
  // Fold the rounding residue into the last weight so the sum is 1 to 1e-12.
  double partial = 0.0;
  for (std::size_t n = 0; n + 1 < weights.size(); ++n) partial += weights[n];
  weights.back() = 1.0 - partial;
  return DataDistribution(problem, std::move(support), std::move(weights));
}

}  // namespace papl
