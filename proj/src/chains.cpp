#include "papl/chains.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <unordered_map>

namespace papl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

StateDistribution point_mass(StateId x) { return {{x, 1.0}}; }

std::vector<Token> tokens_of(const Problem& problem, const Sequence& x0) {
  problem.validate_clean(x0);
  return {x0.tokens().begin(), x0.tokens().end()};
}

}  // namespace

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::model_uniform:
      return "model_uniform";
    case KernelKind::model_planned:
      return "model_planned";
    case KernelKind::reference_vanilla:
      return "reference_vanilla";
    case KernelKind::reference_planned:
      return "reference_planned";
    case KernelKind::model_p2:
      return "model_p2";
    case KernelKind::reference_p2:
      return "reference_p2";
    case KernelKind::generic:
      return "generic";
  }
  return "unknown";
}

double TransitionKernel::probability(StateId y, StateId x, int step) const {
  double out = 0.0;
  for (const auto& t : row(x, step)) {
    if (t.to == y) out += t.prob;
  }
  return out;
}

TransitionKernel model_kernel(const TabularDenoiser& denoiser, const PositionPlanner& planner) {
  const auto* d = &denoiser;
  const auto kind =
      planner.kind() == PositionPlanner::Kind::uniform ? KernelKind::model_uniform : KernelKind::model_planned;
  return TransitionKernel(kind, [d, planner](StateId x, int) {
    const Problem& p = d->problem();
    std::vector<Transition> row;
    for (int pos = 0; pos < p.length(); ++pos) {
      if (!p.is_masked(x, pos)) continue;
      for (Token y = 1; y <= p.vocab().num_clean(); ++y) {
        const double q = d->prob(x, pos, y) * effective_planner_exact(*d, planner, x, y, pos);
        if (q > 0.0) row.push_back({p.replace(x, pos, y), q});
      }
    }
    return row;
  });
}

TransitionKernel reference_kernel(const TabularDenoiser& denoiser, const PositionPlanner& planner,
                                  const Sequence& x0) {
  const auto* d = &denoiser;
  const auto target = tokens_of(denoiser.problem(), x0);
  const auto kind = planner.kind() == PositionPlanner::Kind::uniform ? KernelKind::reference_vanilla
                                                                     : KernelKind::reference_planned;
  return TransitionKernel(kind, [d, planner, target](StateId x, int) {
    const Problem& p = d->problem();
    std::vector<Transition> row;
    if (p.num_masks(x) == 0) return row;
    std::vector<double> g(static_cast<std::size_t>(p.length()));
    planner.plan_into(*d, target, x, g);
    for (int pos = 0; pos < p.length(); ++pos) {
      const double gi = g[static_cast<std::size_t>(pos)];
      if (gi > 0.0) row.push_back({p.replace(x, pos, target[static_cast<std::size_t>(pos)]), gi});
    }
    return row;
  });
}

TransitionKernel model_p2_kernel(const TabularDenoiser& denoiser, const SetPlanner& planner) {
  const auto* d = &denoiser;
  return TransitionKernel(KernelKind::model_p2, [d, planner](StateId x, int) {
    const Problem& p = d->problem();
    const int length = p.length();
    const int clean = p.vocab().num_clean();
    std::vector<Transition> row;
    const int masks = p.num_masks(x);
    if (masks == 0) return row;
    const int keep = length - masks + 1;
    for (const auto& subset : combinations(length, keep)) {
      // Fresh tokens go to the kept positions that are masked in x; the
      // others keep the held token (the delta factor is 1).
      std::vector<int> fresh;
      StateId y = p.all_masked_id();
      for (int pos : subset) {
        if (p.is_masked(x, pos)) {
          fresh.push_back(pos);
          y = p.replace(y, pos, 1);
        } else {
          y = p.replace(y, pos, p.token_at(x, pos));
        }
      }
      while (true) {
        double q = 1.0;
        for (int pos : fresh) q *= d->prob(x, pos, p.token_at(y, pos));
        if (q > 0.0) q *= effective_set_planner_exact(*d, planner, x, y);
        if (q > 0.0) row.push_back({y, q});
        std::size_t n = 0;
        for (; n < fresh.size(); ++n) {
          const int pos = fresh[n];
          const Token t = p.token_at(y, pos);
          if (t < clean) {
            y = p.replace(y, pos, t + 1);
            break;
          }
          y = p.replace(y, pos, 1);
        }
        if (n == fresh.size()) break;
      }
    }
    return row;
  });
}

TransitionKernel reference_p2_kernel(const TabularDenoiser& denoiser, const SetPlanner& planner,
                                     const Sequence& x0) {
  const auto* d = &denoiser;
  const auto target = tokens_of(denoiser.problem(), x0);
  return TransitionKernel(KernelKind::reference_p2, [d, planner, target](StateId x, int) {
    const Problem& p = d->problem();
    std::vector<Transition> row;
    const int masks = p.num_masks(x);
    if (masks == 0) return row;
    std::vector<double> scores(static_cast<std::size_t>(p.length()));
    planner.scores_into(*d, target, x, scores);
    const std::uint32_t bits = SetPlanner::top_set(scores, p.length() - masks + 1);
    StateId y = p.all_masked_id();
    for (int pos = 0; pos < p.length(); ++pos) {
      if (bits & (1u << pos)) y = p.replace(y, pos, target[static_cast<std::size_t>(pos)]);
    }
    row.push_back({y, 1.0});
    return row;
  });
}

TransitionKernel dense_kernel(std::vector<std::vector<std::vector<double>>> matrices) {
  for (const auto& m : matrices) {
    for (const auto& r : m) {
      if (r.size() != m.size()) throw UsageError("dense kernel: matrices must be square");
    }
  }
  return TransitionKernel(KernelKind::generic, [matrices = std::move(matrices)](StateId x, int step) {
    if (step < 0 || static_cast<std::size_t>(step) >= matrices.size()) {
      throw UsageError("dense kernel: step out of range");
    }
    const auto& m = matrices[static_cast<std::size_t>(step)];
    if (x >= m.size()) throw UsageError("dense kernel: state out of range");
    std::vector<Transition> row;
    const auto& r = m[x];
    for (std::size_t y = 0; y < r.size(); ++y) {
      if (r[y] > 0.0) row.push_back({static_cast<StateId>(y), r[y]});
    }
    return row;
  });
}

std::vector<StateDistribution> propagate(const MarkovChain& chain, int steps) {
  std::vector<StateDistribution> out{chain.initial};
  for (int k = 0; k < steps; ++k) {
    StateDistribution next;
    for (const auto& [x, px] : out.back()) {
      if (px <= 0.0) continue;
      for (const auto& t : chain.kernel.row(x, k)) next[t.to] += px * t.prob;
    }
    out.push_back(std::move(next));
  }
  return out;
}

double kl_categorical(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw UsageError("kl_categorical: supports differ in size");
  double out = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (p[n] <= 0.0) continue;
    if (q[n] <= 0.0) return kInf;
    out += p[n] * std::log(p[n] / q[n]);
  }
  return out;
}

double kl_categorical(const StateDistribution& p, const StateDistribution& q) {
  double out = 0.0;
  for (const auto& [x, px] : p) {
    if (px <= 0.0) continue;
    const auto it = q.find(x);
    if (it == q.end() || it->second <= 0.0) return kInf;
    out += px * std::log(px / it->second);
  }
  return out;
}

PathKl path_kl(const MarkovChain& reference, const MarkovChain& model, int steps) {
  if (steps < 1) throw UsageError("path_kl: need at least one step");
  PathKl out;
  for (const auto& [x, px] : reference.initial) {
    if (px <= 0.0) continue;
    const auto it = model.initial.find(x);
    if (it == model.initial.end() || it->second <= 0.0) {
      out.value = kInf;
      out.violation = SupportViolation{-1, x, x};
      return out;
    }
    out.value += px * std::log(px / it->second);
  }

  const auto marginals = propagate(reference, steps - 1);
  for (int k = 0; k < steps; ++k) {
    for (const auto& [x, rx] : marginals[static_cast<std::size_t>(k)]) {
      if (rx <= 0.0) continue;
      std::unordered_map<StateId, double> q_row;
      for (const auto& t : model.kernel.row(x, k)) q_row[t.to] += t.prob;
      double local = 0.0;
      for (const auto& t : reference.kernel.row(x, k)) {
        if (t.prob <= 0.0) continue;
        const auto it = q_row.find(t.to);
        if (it == q_row.end() || it->second <= 0.0) {
          out.value = kInf;
          out.violation = SupportViolation{k, x, t.to};
          return out;
        }
        local += t.prob * std::log(t.prob / it->second);
      }
      out.value += rx * local;
    }
  }
  return out;
}

double elbo_from_reference_chain(const Problem& problem, const TransitionKernel& reference,
                                 const TransitionKernel& model) {
  const auto start = point_mass(problem.all_masked_id());
  return -path_kl({start, reference}, {start, model}, problem.length()).value;
}

std::vector<int> decode_order(std::uint64_t key, int length) {
  std::vector<int> out(static_cast<std::size_t>(length));
  for (int s = 0; s < length; ++s) {
    out[static_cast<std::size_t>(s)] = static_cast<int>((key >> (3 * (length - 1 - s))) & 7u);
  }
  return out;
}

std::vector<std::uint32_t> decode_trajectory(std::uint64_t key, int length) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(length));
  const std::uint64_t group = (1ull << length) - 1ull;
  for (int s = 0; s < length; ++s) {
    out[static_cast<std::size_t>(s)] = static_cast<std::uint32_t>((key >> (length * (length - 1 - s))) & group);
  }
  return out;
}

PathDistribution::PathDistribution(Problem problem, std::vector<PathRecord> paths)
    : problem_(std::move(problem)), paths_(std::move(paths)) {
  for (const auto& rec : paths_) marginal_[rec.terminal] += std::exp(rec.log_probability);
}

double PathDistribution::probability(StateId x) const {
  const auto it = marginal_.find(x);
  return it == marginal_.end() ? 0.0 : it->second;
}

double PathDistribution::probability(const Sequence& x) const { return probability(problem_.encode(x)); }

double PathDistribution::log_probability(const Sequence& x) const {
  const double p = probability(x);
  return p > 0.0 ? std::log(p) : -kInf;
}

double PathDistribution::total_mass() const {
  double out = 0.0;
  for (const auto& [x, p] : marginal_) out += p;
  return out;
}

void check_enumeration_budget(const Problem& problem, int max_vocab, int max_length, const std::string& what) {
  if (problem.vocab_size() > max_vocab || problem.length() > max_length) {
    throw BudgetError(what + ": enumeration budget is d <= " + std::to_string(max_vocab) + ", L <= " +
                      std::to_string(max_length) + " (got d = " + std::to_string(problem.vocab_size()) +
                      ", L = " + std::to_string(problem.length()) + ")");
  }
}

namespace {

struct Move {
  std::uint32_t label;  // position, or kept-set bitmask
  StateId to;
  double log_prob;
};

PathDistribution enumerate_paths(const Problem& problem, const TransitionKernel& kernel, int label_bits,
                                 const std::function<std::uint32_t(StateId, StateId)>& label_of) {
  std::unordered_map<StateId, std::vector<Move>> moves;
  std::vector<PathRecord> records;
  const int length = problem.length();

  std::function<void(StateId, std::uint64_t, double, int)> walk = [&](StateId x, std::uint64_t key, double lp,
                                                                      int step) {
    if (step == length) {
      records.push_back({x, key, lp});
      return;
    }
    auto it = moves.find(x);
    if (it == moves.end()) {
      std::vector<Move> out;
      for (const auto& t : kernel.row(x, step)) out.push_back({label_of(x, t.to), t.to, std::log(t.prob)});
      it = moves.emplace(x, std::move(out)).first;
    }
    for (const auto& mv : it->second) walk(mv.to, (key << label_bits) | mv.label, lp + mv.log_prob, step + 1);
  };
  walk(problem.all_masked_id(), 0, 0.0, 0);
  return PathDistribution(problem, std::move(records));
}

}  // namespace

PathDistribution exact_terminal_distribution(const TabularDenoiser& denoiser, const PositionPlanner& planner) {
  const Problem& p = denoiser.problem();
  check_enumeration_budget(p, 5, 6, "exact_terminal_distribution");
  return enumerate_paths(p, model_kernel(denoiser, planner), 3, [&p](StateId x, StateId y) {
    for (int pos = 0; pos < p.length(); ++pos) {
      if (p.token_at(x, pos) != p.token_at(y, pos)) return static_cast<std::uint32_t>(pos);
    }
    return 0u;
  });
}

StateDistribution terminal_distribution_by_composition(const TabularDenoiser& denoiser,
                                                       const PositionPlanner& planner) {
  const Problem& p = denoiser.problem();
  check_enumeration_budget(p, 5, 6, "terminal_distribution_by_composition");
  return propagate({point_mass(p.all_masked_id()), model_kernel(denoiser, planner)}, p.length()).back();
}

PathDistribution exact_terminal_distribution_p2(const TabularDenoiser& denoiser, const SetPlanner& planner) {
  const Problem& p = denoiser.problem();
  check_enumeration_budget(p, 3, 3, "exact_terminal_distribution_p2");
  return enumerate_paths(p, model_p2_kernel(denoiser, planner), p.length(), [&p](StateId, StateId y) {
    return ~p.mask_bits(y) & ((1u << p.length()) - 1u);
  });
}

StateDistribution terminal_distribution_p2_by_composition(const TabularDenoiser& denoiser,
                                                          const SetPlanner& planner) {
  const Problem& p = denoiser.problem();
  check_enumeration_budget(p, 3, 3, "terminal_distribution_p2_by_composition");
  return propagate({point_mass(p.all_masked_id()), model_p2_kernel(denoiser, planner)}, p.length()).back();
}

std::vector<StateDistribution> reference_chain_marginals(const TabularDenoiser& denoiser,
                                                         const PositionPlanner& planner, const Sequence& x0) {
  const Problem& p = denoiser.problem();
  return propagate({point_mass(p.all_masked_id()), reference_kernel(denoiser, planner, x0)}, p.length());
}

}  // namespace papl
