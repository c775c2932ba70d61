#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "papl/core.hpp"
#include "papl/planners.hpp"

namespace papl {

// Standard bound averaged over all L! unmasking orders. Budget: L <= 6.
double elbo_uniform_permutation_form(const TabularDenoiser& denoiser, const Sequence& x0);
// Same bound as L * E_k E_{x_k ~ Unif(X_{L-k}(x0))}[ (1/(L-k)) sum_masked log Cat ].
double elbo_uniform_timestep_form(const TabularDenoiser& denoiser, const Sequence& x0);

struct PlannerElbo {
  double e1 = 0.0;
  double e2 = 0.0;
  double total = 0.0;
  // Standard errors and sample count are zero in exact mode.
  double e1_se = 0.0;
  double e2_se = 0.0;
  double total_se = 0.0;
  int n_samples = 0;
};

// Planner-aware bound: e1 is the planner-weighted cross-entropy along the
// reference chain, e2 = -E[sum_i G_i log(G_i / F(x_k, x0^i, i))]. F is not
// normalised over i, so e2 can be positive; it is at most E[log sum_i F].
// Exact mode enumerates the reference marginals and F (budget d <= 5,
// L <= 6). Monte Carlo mode samples (k, x_k) and estimates each F from
// 256 candidate draws, so its e2 carries the bias of a log of a mean.
PlannerElbo p_elbo(const TabularDenoiser& denoiser, const PositionPlanner& planner, const Sequence& x0,
                   const Evaluation& eval = Evaluation::exact());

struct GreedyElbo {
  double value = 0.0;
  std::vector<int> order;  // position unmasked at each step of the greedy path
};

// Sum of log-confidences in x0 at every masked position of every state on
// the greedy path.
GreedyElbo elbo_greedy(const TabularDenoiser& denoiser, const Sequence& x0);

struct SoftmaxElbo {
  double e1 = 0.0;
  double correction = 0.0;
  double total = 0.0;
  double e1_se = 0.0;
  double correction_se = 0.0;
  double total_se = 0.0;
  int n_samples = 0;
};

// Soft-greedy bound with the normaliser-ratio correction in place of the
// mismatch term. Exact mode budget: d <= 5, L <= 6.
SoftmaxElbo elbo_softmax(const TabularDenoiser& denoiser, double tau, const Sequence& x0,
                         const Evaluation& eval = Evaluation::exact());

struct SetPlannerElbo {
  double value = 0.0;
  std::vector<std::uint32_t> kept_sets;  // kept-set bitmask per step of the path
};

// Bound for the remasking sampler along its deterministic path with the
// candidate fixed to x0. Budget: d <= 3, L <= 3.
SetPlannerElbo elbo_p2(const TabularDenoiser& denoiser, const SetPlanner& planner, const Sequence& x0);
SetPlannerElbo elbo_p2_topk(const TabularDenoiser& denoiser, double eta, const Sequence& x0);

enum class BoundKind { uniform, planner, greedy, softmax, p2_topk };
std::string to_string(BoundKind kind);

// Bound together with the sampler it bounds.
struct BoundSpec {
  BoundKind kind = BoundKind::uniform;
  PositionPlanner planner = PositionPlanner::uniform();  // used by BoundKind::planner
  double tau = 1.0;                                      // softmax
  double eta = 0.0;                                      // p2_topk
  std::string name() const;
};

struct ElboReport {
  BoundKind bound_kind = BoundKind::uniform;
  std::string bound_name;
  double bound_value = 0.0;
  double exact_log_marginal = 0.0;
  double gap = 0.0;  // exact - bound
  Evaluation evaluation;
  double std_error = 0.0;

  std::string to_json() const;
};

// log p(x0) of the sampler matched to the bound, by exact enumeration.
double matched_log_marginal(const TabularDenoiser& denoiser, const BoundSpec& spec, const Sequence& x0);
ElboReport evaluate_bound(const TabularDenoiser& denoiser, const BoundSpec& spec, const Sequence& x0);

// Masking schedule alpha(t), decreasing from alpha(0) = 1 to alpha(1) = 0.
class NoiseSchedule {
 public:
  using Function = std::function<double(double)>;

  static NoiseSchedule linear();
  static NoiseSchedule cosine();
  static NoiseSchedule polynomial(double power);
  // Throws UsageError unless the endpoints hold and alpha is non-increasing
  // in [0, 1] on a 1001-point grid.
  static NoiseSchedule custom(std::string name, Function alpha, Function alpha_derivative);

  const std::string& name() const noexcept { return name_; }
  double alpha(double t) const { return alpha_(t); }
  double alpha_derivative(double t) const { return derivative_(t); }

 private:
  NoiseSchedule(std::string name, Function alpha, Function alpha_derivative);
  std::string name_;
  Function alpha_;
  Function derivative_;
};

struct BetaIdentity {
  double lhs = 0.0;
  double rhs = 0.0;
  double error_estimate = 0.0;
};

// lhs = int_0^1 beta_t a_t^k (1 - a_t)^(L-k) dt with a_t = exp(-int beta) =
// alpha(t), integrated in t by adaptive tanh-sinh quadrature (robust to the
// endpoint singularities of power schedules) after cancelling
// beta_t a_t = -alpha'(t); rhs = 1 / (k * C(L, k)). Requires 1 <= k <= L.
BetaIdentity beta_identity_check(int length, int k, const NoiseSchedule& schedule = NoiseSchedule::linear());

struct CounterexampleConstants {
  double c1 = 0.25;
  double c2 = 0.5;
  double c3 = 0.25;
  double c4 = 0.5;
  double c5 = 0.5;
  double c6 = 0.5;
};

// Two-position denoiser over clean tokens {1, 2}: Cat(1; .) is c1 at
// (m,m) position 0, c2 at (m,m) position 1, c3 at (m,1) position 0, c4 at
// (m,2) position 0, c5 at (1,m) position 1 and c6 at (2,m) position 1.
// Throws UsageError unless every constant lies in (0, 1).
TabularDenoiser counterexample_denoiser(const CounterexampleConstants& c = {});

struct CounterexampleReport {
  CounterexampleConstants constants;
  double elbo_uniform = 0.0;       // standard bound at x0 = (1, 1)
  double exp_elbo_uniform = 0.0;
  double p_greedy = 0.0;           // exact greedy-sampler probability of (1, 1)
  double log_p_greedy = 0.0;
  double hand_p_greedy = 0.0;      // c2 * c3 * (1 - c1)
  double proof_lhs = 0.0;          // (1 - c1)^2 * c2 * c3
  double proof_rhs = 0.0;          // c1 * c5
  double margin = 0.0;             // elbo_uniform - log_p_greedy
  std::vector<int> greedy_order;   // greedy path order at x0
  bool bound_exceeds_greedy = false;
  bool hand_matches_exact = false;

  std::string to_json() const;
};

CounterexampleReport counterexample_prop1(const CounterexampleConstants& c = {});

}  // namespace papl
