#include "papl/planners.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "papl/random.hpp"

namespace papl {

namespace {

void check_candidate(const Problem& problem, const Sequence& z, const Sequence& x) {
  problem.validate(x);
  if (z.length() != problem.length()) throw UsageError("planner: candidate has wrong length");
  for (int pos = 0; pos < x.length(); ++pos) {
    if (x[pos] == problem.mask() && !problem.vocab().is_clean(z[pos])) {
      throw UsageError("planner: candidate must hold a clean token at every masked position");
    }
  }
}

std::string format_real(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

PositionPlanner PositionPlanner::soft_greedy(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw UsageError("soft greedy planner: tau must be positive");
  return PositionPlanner(Kind::soft_greedy, tau);
}

std::string PositionPlanner::name() const {
  switch (kind_) {
    case Kind::uniform:
      return "uniform";
    case Kind::greedy:
      return "greedy";
    case Kind::soft_greedy:
      return "soft_greedy(tau=" + format_real(tau_) + ")";
  }
  return "unknown";
}

void PositionPlanner::plan_into(const TabularDenoiser& denoiser, std::span<const Token> z, StateId x,
                                std::span<double> out) const {
  const Problem& problem = denoiser.problem();
  const int length = problem.length();
  std::fill(out.begin(), out.end(), 0.0);

  switch (kind_) {
    case Kind::uniform: {
      const int masks = problem.num_masks(x);
      for (int pos = 0; pos < length; ++pos) {
        if (problem.is_masked(x, pos)) out[static_cast<std::size_t>(pos)] = 1.0 / masks;
      }
      return;
    }
    case Kind::greedy: {
      int best = -1;
      double best_conf = -1.0;
      for (int pos = 0; pos < length; ++pos) {
        if (!problem.is_masked(x, pos)) continue;
        const double c = confidence(denoiser, x, pos, z[static_cast<std::size_t>(pos)]);
        if (c > best_conf) {
          best_conf = c;
          best = pos;
        }
      }
      out[static_cast<std::size_t>(best)] = 1.0;
      return;
    }
    case Kind::soft_greedy: {
      double top = -std::numeric_limits<double>::infinity();
      for (int pos = 0; pos < length; ++pos) {
        if (!problem.is_masked(x, pos)) continue;
        const double v = denoiser.log_prob(x, pos, z[static_cast<std::size_t>(pos)]) / tau_;
        out[static_cast<std::size_t>(pos)] = v;
        top = std::max(top, v);
      }
      double total = 0.0;
      for (int pos = 0; pos < length; ++pos) {
        if (!problem.is_masked(x, pos)) continue;
        auto& v = out[static_cast<std::size_t>(pos)];
        v = std::exp(v - top);
        total += v;
      }
      for (int pos = 0; pos < length; ++pos) {
        if (problem.is_masked(x, pos)) out[static_cast<std::size_t>(pos)] /= total;
      }
      return;
    }
  }
}

std::vector<double> PositionPlanner::plan(const TabularDenoiser& denoiser, const Sequence& z,
                                          const Sequence& x) const {
  const Problem& problem = denoiser.problem();
  check_candidate(problem, z, x);
  if (problem.num_masks(x) == 0) throw UsageError("planner: state has no masked position");
  std::vector<double> out(static_cast<std::size_t>(problem.length()));
  plan_into(denoiser, z.tokens(), problem.encode(x), out);
  return out;
}

std::vector<double> plan_uniform(const Problem& problem, const Sequence& z, const Sequence& x) {
  check_candidate(problem, z, x);
  const int masks = problem.num_masks(x);
  if (masks == 0) throw UsageError("planner: state has no masked position");
  std::vector<double> out(static_cast<std::size_t>(problem.length()), 0.0);
  for (int pos = 0; pos < x.length(); ++pos) {
    if (x[pos] == problem.mask()) out[static_cast<std::size_t>(pos)] = 1.0 / masks;
  }
  return out;
}

std::vector<double> plan_greedy(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x) {
  return PositionPlanner::greedy().plan(denoiser, z, x);
}

std::vector<double> plan_soft_greedy(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x,
                                     double tau) {
  return PositionPlanner::soft_greedy(tau).plan(denoiser, z, x);
}

SetPlanner SetPlanner::p2_topk(double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw UsageError("p2 top-k planner: eta must be non-negative");
  return SetPlanner(Kind::p2_topk, eta);
}

std::string SetPlanner::name() const {
  if (kind_ == Kind::rdm) return "rdm";
  return "p2_topk(eta=" + format_real(eta_) + ")";
}

void SetPlanner::scores_into(const TabularDenoiser& denoiser, std::span<const Token> z, StateId x,
                             std::span<double> out) const {
  const Problem& problem = denoiser.problem();
  for (int pos = 0; pos < problem.length(); ++pos) {
    const Token zi = z[static_cast<std::size_t>(pos)];
    double score = 0.0;
    if (problem.is_masked(x, pos)) {
      score = confidence(denoiser, x, pos, zi);
      if (kind_ == Kind::p2_topk) score *= eta_;
    } else {
      score = problem.token_at(x, pos) == zi ? 1.0 : 0.0;
    }
    out[static_cast<std::size_t>(pos)] = score;
  }
}

std::vector<double> SetPlanner::scores(const TabularDenoiser& denoiser, const Sequence& z,
                                       const Sequence& x) const {
  const Problem& problem = denoiser.problem();
  check_candidate(problem, z, x);
  std::vector<double> out(static_cast<std::size_t>(problem.length()));
  scores_into(denoiser, z.tokens(), problem.encode(x), out);
  return out;
}

std::uint32_t SetPlanner::top_set(std::span<const double> scores, int count) {
  std::array<int, 32> slots{};
  const auto order = std::span<int>(slots.data(), scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  std::uint32_t bits = 0;
  for (int n = 0; n < count; ++n) bits |= 1u << order[static_cast<std::size_t>(n)];
  return bits;
}

std::vector<int> SetPlanner::select(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x_k,
                                    int step_k) const {
  const Problem& problem = denoiser.problem();
  check_candidate(problem, z, x_k);
  const int length = problem.length();
  if (step_k < 0 || step_k >= length || problem.num_masks(x_k) != length - step_k) {
    throw UsageError("set planner: state at step k must hold exactly L-k masks");
  }
  const auto s = scores(denoiser, z, x_k);
  const std::uint32_t bits = top_set(s, step_k + 1);
  std::vector<int> out;
  for (int pos = 0; pos < length; ++pos) {
    if (bits & (1u << pos)) out.push_back(pos);
  }
  return out;
}

std::vector<int> plan_p2_topk(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x_k,
                              double eta, int step_k) {
  return SetPlanner::p2_topk(eta).select(denoiser, z, x_k, step_k);
}

Evaluation Evaluation::monte_carlo(int n_samples, std::uint64_t seed) {
  if (n_samples < 2) throw UsageError("monte carlo evaluation needs at least two samples");
  Evaluation out;
  out.mode = Mode::monte_carlo;
  out.n_samples = n_samples;
  out.seed = seed;
  return out;
}

double effective_planner_exact(const TabularDenoiser& denoiser, const PositionPlanner& planner, StateId x,
                               Token y, int i) {
  const Problem& problem = denoiser.problem();
  if (planner.kind() == PositionPlanner::Kind::uniform) return 1.0 / problem.num_masks(x);

  const int length = problem.length();
  const int clean = problem.vocab().num_clean();
  std::vector<int> free_positions;
  std::vector<Token> z(static_cast<std::size_t>(length));
  for (int pos = 0; pos < length; ++pos) {
    z[static_cast<std::size_t>(pos)] = problem.token_at(x, pos);
    if (pos != i && problem.is_masked(x, pos)) {
      free_positions.push_back(pos);
      z[static_cast<std::size_t>(pos)] = 1;
    }
  }
  z[static_cast<std::size_t>(i)] = y;

  std::vector<double> plan(static_cast<std::size_t>(length));
  double total = 0.0;
  while (true) {
    double weight = 1.0;
    for (int pos : free_positions) weight *= confidence(denoiser, x, pos, z[static_cast<std::size_t>(pos)]);
    planner.plan_into(denoiser, z, x, plan);
    total += weight * plan[static_cast<std::size_t>(i)];

    // Odometer over clean assignments of the free coordinates.
    std::size_t n = 0;
    for (; n < free_positions.size(); ++n) {
      auto& t = z[static_cast<std::size_t>(free_positions[n])];
      if (t < clean) {
        ++t;
        break;
      }
      t = 1;
    }
    if (n == free_positions.size()) break;
  }
  return total;
}

PlannerEstimate effective_planner_F(const TabularDenoiser& denoiser, const PositionPlanner& planner,
                                    const Sequence& x, Token y, int i, const Evaluation& eval) {
  const Problem& problem = denoiser.problem();
  problem.validate(x);
  if (i < 0 || i >= problem.length()) throw UsageError("effective planner: position out of range");
  if (x[i] != problem.mask()) throw UsageError("effective planner: position must be masked");
  if (!problem.vocab().is_clean(y)) throw UsageError("effective planner: token must be clean");

  const StateId id = problem.encode(x);
  if (eval.is_exact()) return {effective_planner_exact(denoiser, planner, id, y, i), 0.0, 0};
  if (!planner.depends_on_candidate()) {
    return {effective_planner_exact(denoiser, planner, id, y, i), 0.0, eval.n_samples};
  }

  const int length = problem.length();
  CounterRng rng(eval.seed, 0);
  std::vector<Token> z(x.tokens().begin(), x.tokens().end());
  std::vector<double> plan(static_cast<std::size_t>(length));
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int n = 0; n < eval.n_samples; ++n) {
    for (int pos = 0; pos < length; ++pos) {
      if (pos == i || !problem.is_masked(id, pos)) continue;
      z[static_cast<std::size_t>(pos)] = 1 + rng.categorical(denoiser.probs(id, pos));
    }
    z[static_cast<std::size_t>(i)] = y;
    planner.plan_into(denoiser, z, id, plan);
    const double v = plan[static_cast<std::size_t>(i)];
    sum += v;
    sum_sq += v * v;
  }
  const double n = eval.n_samples;
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), eval.n_samples};
}

double effective_set_planner_exact(const TabularDenoiser& denoiser, const SetPlanner& planner, StateId x_k,
                                   StateId y) {
  const Problem& problem = denoiser.problem();
  const int length = problem.length();
  const int clean = problem.vocab().num_clean();
  const int masks = problem.num_masks(x_k);
  if (masks == 0 || problem.num_masks(y) != masks - 1) {
    throw UsageError("effective set planner: successor must hold one mask fewer");
  }
  const int step_k = length - masks;
  const std::uint32_t target = ~problem.mask_bits(y) & ((1u << length) - 1u);

  std::vector<int> free_positions;
  std::vector<Token> z(static_cast<std::size_t>(length));
  for (int pos = 0; pos < length; ++pos) {
    if (target & (1u << pos)) {
      z[static_cast<std::size_t>(pos)] = problem.token_at(y, pos);
    } else if (problem.is_masked(x_k, pos)) {
      free_positions.push_back(pos);
      z[static_cast<std::size_t>(pos)] = 1;
    } else {
      z[static_cast<std::size_t>(pos)] = problem.token_at(x_k, pos);
    }
  }

  std::vector<double> scores(static_cast<std::size_t>(length));
  double total = 0.0;
  while (true) {
    planner.scores_into(denoiser, z, x_k, scores);
    if (SetPlanner::top_set(scores, step_k + 1) == target) {
      double weight = 1.0;
      for (int pos : free_positions) weight *= confidence(denoiser, x_k, pos, z[static_cast<std::size_t>(pos)]);
      total += weight;
    }
    std::size_t n = 0;
    for (; n < free_positions.size(); ++n) {
      auto& t = z[static_cast<std::size_t>(free_positions[n])];
      if (t < clean) {
        ++t;
        break;
      }
      t = 1;
    }
    if (n == free_positions.size()) break;
  }
  return total;
}

}  // namespace papl
