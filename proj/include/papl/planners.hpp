#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "papl/core.hpp"

namespace papl {

// Cat(z^pos; D^pos(x)): the denoiser's confidence in the candidate token.
inline double confidence(const TabularDenoiser& denoiser, StateId x, int pos, Token z) noexcept {
  return denoiser.prob(x, pos, z);
}

// Chooses one masked position to denoise given a candidate clean draw z
// and the current state x. Uniform ignores z; greedy takes the most
// confident masked position (ties to the lowest index); soft greedy
// samples positions with probability proportional to confidence^(1/tau).
class PositionPlanner {
 public:
  enum class Kind { uniform, greedy, soft_greedy };

  static PositionPlanner uniform() { return PositionPlanner(Kind::uniform, 0.0); }
  static PositionPlanner greedy() { return PositionPlanner(Kind::greedy, 0.0); }
  static PositionPlanner soft_greedy(double tau);

  Kind kind() const noexcept { return kind_; }
  double tau() const noexcept { return tau_; }
  bool depends_on_candidate() const noexcept { return kind_ != Kind::uniform; }
  std::string name() const;

  // Distribution over all L positions; zero at unmasked positions of x.
  // Throws UsageError when x has no mask.
  std::vector<double> plan(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x) const;

  // Allocation-free form for hot loops. `z` holds a token per position
  // (only masked coordinates of x are read); `out` has length L.
  void plan_into(const TabularDenoiser& denoiser, std::span<const Token> z, StateId x,
                 std::span<double> out) const;

 private:
  PositionPlanner(Kind kind, double tau) : kind_(kind), tau_(tau) {}

  Kind kind_;
  double tau_;
};

std::vector<double> plan_uniform(const Problem& problem, const Sequence& z, const Sequence& x);
std::vector<double> plan_greedy(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x);
std::vector<double> plan_soft_greedy(const TabularDenoiser& denoiser, const Sequence& z,
                                     const Sequence& x, double tau);

// P2-style planner: at step k+1 (state with L-k masks) keeps a set of k+1
// positions clean and remasks the rest. p2_topk scores masked positions by
// eta * confidence and unmasked positions by Cat(z^i; delta(x^i)); rdm
// scores every position by denoiser confidence. Top-(k+1) ties go to the
// lowest index.
class SetPlanner {
 public:
  enum class Kind { p2_topk, rdm };

  static SetPlanner p2_topk(double eta);
  static SetPlanner rdm() { return SetPlanner(Kind::rdm, 0.0); }

  Kind kind() const noexcept { return kind_; }
  double eta() const noexcept { return eta_; }
  std::string name() const;

  // Per-position unnormalized scores.
  std::vector<double> scores(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x) const;
  void scores_into(const TabularDenoiser& denoiser, std::span<const Token> z, StateId x,
                   std::span<double> out) const;

  // Sorted positions kept clean at step k+1 from x_k. Throws UsageError
  // unless x_k has exactly L-k masks.
  std::vector<int> select(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x_k,
                          int step_k) const;

  // Bitmask of the Top-`count` positions for the given scores.
  static std::uint32_t top_set(std::span<const double> scores, int count);

 private:
  SetPlanner(Kind kind, double eta) : kind_(kind), eta_(eta) {}

  Kind kind_;
  double eta_;
};

std::vector<int> plan_p2_topk(const TabularDenoiser& denoiser, const Sequence& z, const Sequence& x_k,
                              double eta, int step_k);

// How an expectation over the candidate draw z is evaluated.
struct Evaluation {
  enum class Mode { exact, monte_carlo };

  Mode mode = Mode::exact;
  int n_samples = 0;
  std::uint64_t seed = 0;

  static Evaluation exact() { return {}; }
  static Evaluation monte_carlo(int n_samples, std::uint64_t seed);
  bool is_exact() const noexcept { return mode == Mode::exact; }
};

struct PlannerEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n_samples = 0;  // 0 in exact mode
};

// F(x, y, i) = E_{z ~ D(x)}[ Cat(i; G(z^{-i,y}, x)) ], the probability that
// the planner picks i given the candidate at i is y. Exact mode enumerates
// clean assignments of the masked coordinates of x other than i.
// Throws UsageError if x^i is not masked or y is not a clean token.
PlannerEstimate effective_planner_F(const TabularDenoiser& denoiser, const PositionPlanner& planner,
                                    const Sequence& x, Token y, int i,
                                    const Evaluation& eval = Evaluation::exact());

double effective_planner_exact(const TabularDenoiser& denoiser, const PositionPlanner& planner, StateId x,
                               Token y, int i);

// F^{k+1}_2(x_k, y): probability that the set planner keeps exactly the
// clean positions of y, with the candidate pinned to y on those positions.
double effective_set_planner_exact(const TabularDenoiser& denoiser, const SetPlanner& planner, StateId x_k,
                                   StateId y);

}  // namespace papl
