#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "papl/core.hpp"
#include "papl/planners.hpp"

namespace papl {

using StateDistribution = std::map<StateId, double>;

struct Transition {
  StateId to;
  double prob;
};

enum class KernelKind {
  model_uniform,
  model_planned,
  reference_vanilla,
  reference_planned,
  model_p2,
  reference_p2,
  generic,
};

std::string to_string(KernelKind kind);

// One-step transition rule of a time-indexed chain. Rows list the
// successors with positive probability; `step` is the index k of the
// transition x_k -> x_{k+1}.
class TransitionKernel {
 public:
  using RowFunction = std::function<std::vector<Transition>(StateId from, int step)>;

  TransitionKernel(KernelKind kind, RowFunction rows) : kind_(kind), rows_(std::move(rows)) {}

  KernelKind kind() const noexcept { return kind_; }
  std::vector<Transition> row(StateId from, int step) const { return rows_(from, step); }
  // Probability of moving from x to y at step k.
  double probability(StateId y, StateId x, int step) const;

 private:
  KernelKind kind_;
  RowFunction rows_;
};

// Kernels capture the denoiser by reference: it must outlive them.
TransitionKernel model_kernel(const TabularDenoiser& denoiser, const PositionPlanner& planner);
TransitionKernel reference_kernel(const TabularDenoiser& denoiser, const PositionPlanner& planner,
                                  const Sequence& x0);
TransitionKernel model_p2_kernel(const TabularDenoiser& denoiser, const SetPlanner& planner);
TransitionKernel reference_p2_kernel(const TabularDenoiser& denoiser, const SetPlanner& planner,
                                     const Sequence& x0);
// matrices[k][from][to] over states 0..n-1.
TransitionKernel dense_kernel(std::vector<std::vector<std::vector<double>>> matrices);

struct MarkovChain {
  StateDistribution initial;
  TransitionKernel kernel;
};

// Marginals r_0..r_steps by exact forward propagation over reachable states.
std::vector<StateDistribution> propagate(const MarkovChain& chain, int steps);

// sum p log(p/q) with 0 log 0 = 0; +inf when p charges a q-null point.
double kl_categorical(std::span<const double> p, std::span<const double> q);
double kl_categorical(const StateDistribution& p, const StateDistribution& q);

struct SupportViolation {
  int step;  // -1 for the initial distributions
  StateId from;
  StateId to;
};

struct PathKl {
  double value = 0.0;
  std::optional<SupportViolation> violation;
};

// KL between the path measures of two chains over `steps` transitions,
// via the chain rule: KL(mu||nu) + sum_k E_{x~r_k} KL(R_k(.|x) || Q_k(.|x)).
PathKl path_kl(const MarkovChain& reference, const MarkovChain& model, int steps);

// -path_kl of the chains started at the all-mask state and run L steps: a
// lower bound on log p(x0) whenever the reference chain ends at x0 a.s.
double elbo_from_reference_chain(const Problem& problem, const TransitionKernel& reference,
                                 const TransitionKernel& model);

struct PathRecord {
  StateId terminal;
  // Unmask order (3 bits per step) for position planners; kept-set bitmask
  // trajectory (L bits per step) for set planners. Step 0 is the most
  // significant group.
  std::uint64_t key;
  double log_probability;
};

std::vector<int> decode_order(std::uint64_t key, int length);
std::vector<std::uint32_t> decode_trajectory(std::uint64_t key, int length);

class PathDistribution {
 public:
  PathDistribution(Problem problem, std::vector<PathRecord> paths);

  const Problem& problem() const noexcept { return problem_; }
  const std::vector<PathRecord>& paths() const noexcept { return paths_; }
  const StateDistribution& marginal() const noexcept { return marginal_; }
  double probability(const Sequence& x) const;
  double probability(StateId x) const;
  double log_probability(const Sequence& x) const;
  double total_mass() const;

 private:
  Problem problem_;
  std::vector<PathRecord> paths_;
  StateDistribution marginal_;
};

// Enumerates every (terminal, order) path of the planned sampler with
// positive probability. Budget: d <= 5, L <= 6 (BudgetError otherwise).
PathDistribution exact_terminal_distribution(const TabularDenoiser& denoiser, const PositionPlanner& planner);

// Same marginal obtained by composing the one-step kernel L times.
StateDistribution terminal_distribution_by_composition(const TabularDenoiser& denoiser,
                                                       const PositionPlanner& planner);

// Paths of the remasking sampler keyed by kept-set trajectory.
// Budget: d <= 3, L <= 3.
PathDistribution exact_terminal_distribution_p2(const TabularDenoiser& denoiser, const SetPlanner& planner);
StateDistribution terminal_distribution_p2_by_composition(const TabularDenoiser& denoiser,
                                                          const SetPlanner& planner);

// r_0..r_L of the reference chain to x0 from the all-mask state.
std::vector<StateDistribution> reference_chain_marginals(const TabularDenoiser& denoiser,
                                                         const PositionPlanner& planner, const Sequence& x0);

void check_enumeration_budget(const Problem& problem, int max_vocab, int max_length, const std::string& what);

}  // namespace papl
