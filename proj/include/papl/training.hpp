#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "papl/core.hpp"
#include "papl/random.hpp"

namespace papl {

// A clean target x0, the step k and a state x_k in X_{L-k}(x0).
struct TrainingExample {
  Sequence x0;
  int step = 0;
  Sequence state;
};

using Batch = std::vector<TrainingExample>;

enum class LossKind { vanilla, papl, pure_planner };

struct LossSpec {
  LossKind kind = LossKind::vanilla;
  double alpha = 0.0;
  double tau = 1.0;
  // Treat the planner weights as constants when differentiating.
  bool detach_planner_weights = true;

  static LossSpec vanilla() { return {}; }
  static LossSpec papl(double alpha, double tau);
  static LossSpec pure_planner(double tau);
  std::string name() const;
  // Throws UsageError unless alpha >= 0 and tau > 0.
  void validate() const;
};

// Throws UsageError unless x_k agrees with x0 off its masks and carries
// exactly L - k of them.
void validate_example(const Problem& problem, const TrainingExample& example);

// Soft-greedy weights Cat(i; G^tau(x0, x_k)) over all positions (zero at
// unmasked ones).
std::vector<double> planner_weights(const TabularDenoiser& denoiser, const TrainingExample& example, double tau);

// Batch means of the per-example losses, each a sum over masked i of
//   vanilla:       -(1/(L-k)) log Cat(x0^i; D^i(x_k))
//   papl:          -(1/(L-k)) (1 + alpha w^i) log Cat(x0^i; D^i(x_k))
//   pure planner:  -w^i log Cat(x0^i; D^i(x_k))
// The overall factor L of the bound is left to the learning rate.
double loss_vanilla(const TabularDenoiser& denoiser, const Batch& batch);
double loss_papl(const TabularDenoiser& denoiser, const Batch& batch, double alpha, double tau);
double loss_pure_planner(const TabularDenoiser& denoiser, const Batch& batch, double tau);
double loss_value(const TabularDenoiser& denoiser, const LossSpec& spec, const Batch& batch);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // one entry per denoiser parameter
};

// Exact gradient over the logits. With detached weights each touched
// (state, position) receives coef * (softmax - onehot(x0^i)); otherwise the
// derivative of the weights is added.
LossAndGradient loss_and_gradient(const TabularDenoiser& denoiser, const LossSpec& spec, const Batch& batch);
std::vector<double> grad_analytic(const TabularDenoiser& denoiser, const LossSpec& spec, const Batch& batch);

// One draw of the masking scheme: x0 ~ p_data, k ~ Unif{0..L-1}, x_k
// uniform over X_{L-k}(x0).
TrainingExample sample_example(const DataDistribution& data, CounterRng& rng);
Batch sample_batch(const DataDistribution& data, int batch_size, CounterRng& rng);

struct TrainConfig {
  LossSpec loss;
  double learning_rate = 1.0;
  int steps = 1000;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int eval_every = 100;
  // Soft-greedy temperature of the planner-aware bound in the metrics;
  // independent of the training weight temperature.
  double inference_tau = 1.0;
  int variance_window = 50;

  void validate() const;
};

struct MetricsRow {
  int step = 0;
  double loss = 0.0;
  double kl_uniform = 0.0;
  double kl_greedy = 0.0;
  double elbo_uniform = 0.0;  // E_{p_data} of the standard bound
  double p_elbo = 0.0;        // E_{p_data} of the soft-greedy planner-aware bound
  double grad_norm = 0.0;
  double loss_var = 0.0;      // variance of the batch losses in the trailing window
};

class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int step() const noexcept { return step_; }

 private:
  int step_;
};

struct TrainResult {
  TabularDenoiser denoiser;
  std::vector<MetricsRow> history;
};

// KL(p_data || model terminal distribution) for the uniform and greedy
// samplers, plus both bounds averaged over p_data. Exact enumeration.
MetricsRow evaluate_model(const TabularDenoiser& denoiser, const DataDistribution& data, double inference_tau);

// Plain SGD. Metrics rows are emitted after every eval_every-th update and
// after the last one. Throws TrainingDivergence on a non-finite loss or
// gradient.
TrainResult train(TabularDenoiser initial, const DataDistribution& data, const TrainConfig& config);

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace papl
