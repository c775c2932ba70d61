#include "papl/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "papl/chains.hpp"
#include "papl/elbo.hpp"
#include "papl/planners.hpp"

namespace papl {

namespace {

constexpr int kMaxLength = 32;

std::string format_number(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// Per-example loss; when grad is non-null, adds scale * d(loss)/d(logits).
double accumulate_example(const TabularDenoiser& d, const LossSpec& spec, const TrainingExample& ex, double scale,
                          std::vector<double>* grad) {
  const Problem& p = d.problem();
  const StateId x = p.encode(ex.state);
  const int length = p.length();
  const int masks = length - ex.step;
  const auto len = static_cast<std::size_t>(length);

  std::array<double, kMaxLength> w{};
  std::array<double, kMaxLength> ell{};
  std::array<double, kMaxLength> coef{};
  const bool weighted = spec.kind != LossKind::vanilla;
  if (weighted) {
    PositionPlanner::soft_greedy(spec.tau).plan_into(d, ex.x0.tokens(), x, std::span(w.data(), len));
  }

  double loss = 0.0;
  double mean_ell = 0.0;
  for (int i = 0; i < length; ++i) {
    if (!p.is_masked(x, i)) continue;
    const auto s = static_cast<std::size_t>(i);
    ell[s] = d.log_prob(x, i, ex.x0[i]);
    switch (spec.kind) {
      case LossKind::vanilla:
        coef[s] = 1.0 / masks;
        break;
      case LossKind::papl:
        coef[s] = (1.0 + spec.alpha * w[s]) / masks;
        break;
      case LossKind::pure_planner:
        coef[s] = w[s];
        break;
    }
    loss -= coef[s] * ell[s];
    if (weighted) mean_ell += w[s] * ell[s];
  }
  if (grad == nullptr) return loss;

  // Scale of the weight-path term: d coef_i / d w_i.
  const double weight_scale = spec.kind == LossKind::papl ? spec.alpha / masks : 1.0;
  const bool through_weights = weighted && !spec.detach_planner_weights;
  const int clean = p.vocab().num_clean();
  for (int i = 0; i < length; ++i) {
    if (!p.is_masked(x, i)) continue;
    const auto s = static_cast<std::size_t>(i);
    double g = coef[s];
    if (through_weights) g += weight_scale * (w[s] / spec.tau) * (ell[s] - mean_ell);
    g *= scale;
    const auto probs = d.probs(x, i);
    for (Token t = 1; t <= clean; ++t) {
      const double onehot = t == ex.x0[i] ? 1.0 : 0.0;
      (*grad)[d.parameter_index(x, i, t)] += g * (probs[static_cast<std::size_t>(t - 1)] - onehot);
    }
  }
  return loss;
}

double batch_loss(const TabularDenoiser& d, const LossSpec& spec, const Batch& batch) {
  if (batch.empty()) throw UsageError("empty batch");
  spec.validate();
  double total = 0.0;
  for (const auto& ex : batch) {
    validate_example(d.problem(), ex);
    total += accumulate_example(d, spec, ex, 1.0, nullptr);
  }
  return total / static_cast<double>(batch.size());
}

double kl_from_data(const DataDistribution& data, const PathDistribution& model) {
  double out = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const double pd = data.probs()[n];
    if (pd <= 0.0) continue;
    const double pm = model.probability(data.support()[n]);
    if (pm <= 0.0) return std::numeric_limits<double>::infinity();
    out += pd * (std::log(pd) - std::log(pm));
  }
  return std::max(out, 0.0);
}

}  // namespace

LossSpec LossSpec::papl(double alpha, double tau) {
  LossSpec out{LossKind::papl, alpha, tau, true};
  out.validate();
  return out;
}

LossSpec LossSpec::pure_planner(double tau) {
  LossSpec out{LossKind::pure_planner, 0.0, tau, true};
  out.validate();
  return out;
}

std::string LossSpec::name() const {
  switch (kind) {
    case LossKind::vanilla:
      return "vanilla";
    case LossKind::papl:
      return "papl(alpha=" + format_number(alpha) + ",tau=" + format_number(tau) + ")";
    case LossKind::pure_planner:
      return "pure_planner(tau=" + format_number(tau) + ")";
  }
  return "unknown";
}

void LossSpec::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw UsageError("alpha must be >= 0");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw UsageError("tau must be > 0");
}

void validate_example(const Problem& problem, const TrainingExample& ex) {
  problem.validate_clean(ex.x0);
  problem.validate(ex.state);
  if (ex.step < 0 || ex.step >= problem.length()) throw UsageError("training example: step out of range");
  if (problem.num_masks(ex.state) != problem.length() - ex.step) {
    throw UsageError("training example: state must carry L - k masks");
  }
  for (int i = 0; i < problem.length(); ++i) {
    if (ex.state[i] != problem.mask() && ex.state[i] != ex.x0[i]) {
      throw UsageError("training example: state disagrees with x0 at position " + std::to_string(i));
    }
  }
}

std::vector<double> planner_weights(const TabularDenoiser& d, const TrainingExample& ex, double tau) {
  validate_example(d.problem(), ex);
  return PositionPlanner::soft_greedy(tau).plan(d, ex.x0, ex.state);
}

double loss_vanilla(const TabularDenoiser& d, const Batch& batch) { return batch_loss(d, LossSpec::vanilla(), batch); }

double loss_papl(const TabularDenoiser& d, const Batch& batch, double alpha, double tau) {
  return batch_loss(d, LossSpec::papl(alpha, tau), batch);
}

double loss_pure_planner(const TabularDenoiser& d, const Batch& batch, double tau) {
  return batch_loss(d, LossSpec::pure_planner(tau), batch);
}

double loss_value(const TabularDenoiser& d, const LossSpec& spec, const Batch& batch) {
  return batch_loss(d, spec, batch);
}

LossAndGradient loss_and_gradient(const TabularDenoiser& d, const LossSpec& spec, const Batch& batch) {
  if (batch.empty()) throw UsageError("empty batch");
  spec.validate();
  LossAndGradient out;
  out.gradient.assign(d.num_parameters(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    validate_example(d.problem(), ex);
    out.loss += accumulate_example(d, spec, ex, scale, &out.gradient);
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

std::vector<double> grad_analytic(const TabularDenoiser& d, const LossSpec& spec, const Batch& batch) {
  return loss_and_gradient(d, spec, batch).gradient;
}

TrainingExample sample_example(const DataDistribution& data, CounterRng& rng) {
  const Problem& p = data.problem();
  const int length = p.length();
  TrainingExample ex;
  ex.x0 = data.support()[static_cast<std::size_t>(rng.categorical(data.probs()))];
  ex.step = rng.uniform_int(length);
  std::array<int, kMaxLength> order{};
  for (int i = 0; i < length; ++i) order[static_cast<std::size_t>(i)] = i;
  const int masks = length - ex.step;
  for (int n = 0; n < masks; ++n) {
    const int j = n + rng.uniform_int(length - n);
    std::swap(order[static_cast<std::size_t>(n)], order[static_cast<std::size_t>(j)]);
  }
  ex.state = ex.x0;
  for (int n = 0; n < masks; ++n) ex.state.set(order[static_cast<std::size_t>(n)], p.mask());
  return ex;
}

Batch sample_batch(const DataDistribution& data, int batch_size, CounterRng& rng) {
  if (batch_size < 1) throw UsageError("batch_size must be positive");
  Batch out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int n = 0; n < batch_size; ++n) out.push_back(sample_example(data, rng));
  return out;
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning_rate must be > 0");
  if (steps < 1) throw UsageError("steps must be positive");
  if (batch_size < 1) throw UsageError("batch_size must be positive");
  if (eval_every < 1) throw UsageError("eval_every must be positive");
  if (variance_window < 2) throw UsageError("variance_window must be at least 2");
  if (!(inference_tau > 0.0)) throw UsageError("inference_tau must be > 0");
}

MetricsRow evaluate_model(const TabularDenoiser& d, const DataDistribution& data, double inference_tau) {
  MetricsRow row;
  row.kl_uniform = kl_from_data(data, exact_terminal_distribution(d, PositionPlanner::uniform()));
  row.kl_greedy = kl_from_data(data, exact_terminal_distribution(d, PositionPlanner::greedy()));
  const auto planner = PositionPlanner::soft_greedy(inference_tau);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const double pd = data.probs()[n];
    row.elbo_uniform += pd * elbo_uniform_timestep_form(d, data.support()[n]);
    row.p_elbo += pd * p_elbo(d, planner, data.support()[n]).total;
  }
  return row;
}

TrainResult train(TabularDenoiser initial, const DataDistribution& data, const TrainConfig& config) {
  config.validate();
  if (!(initial.problem() == data.problem())) throw UsageError("denoiser and data use different problems");
  TrainResult out{std::move(initial), {}};
  CounterRng rng(config.seed, 0x747261696eULL);
  std::deque<double> window;
  for (int step = 1; step <= config.steps; ++step) {
    const Batch batch = sample_batch(data, config.batch_size, rng);
    const auto lg = loss_and_gradient(out.denoiser, config.loss, batch);
    double norm_sq = 0.0;
    for (double g : lg.gradient) norm_sq += g * g;
    if (!std::isfinite(lg.loss) || !std::isfinite(norm_sq)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (" << config.loss.name() << "): loss=" << lg.loss
          << " grad_norm^2=" << norm_sq;
      throw TrainingDivergence(step, msg.str());
    }
    out.denoiser.apply_update(lg.gradient, config.learning_rate);
    for (double v : out.denoiser.parameters()) {
      if (!std::isfinite(v) && v != -std::numeric_limits<double>::infinity()) {
        throw TrainingDivergence(step, "training diverged at step " + std::to_string(step) + " (" +
                                           config.loss.name() + "): non-finite parameter after update");
      }
    }

    window.push_back(lg.loss);
    if (static_cast<int>(window.size()) > config.variance_window) window.pop_front();

    if (step % config.eval_every == 0 || step == config.steps) {
      MetricsRow row = evaluate_model(out.denoiser, data, config.inference_tau);
      row.step = step;
      row.loss = lg.loss;
      row.grad_norm = std::sqrt(norm_sq);
      double mean = 0.0;
      for (double v : window) mean += v;
      mean /= static_cast<double>(window.size());
      double var = 0.0;
      for (double v : window) var += (v - mean) * (v - mean);
      row.loss_var = window.size() > 1 ? var / static_cast<double>(window.size() - 1) : 0.0;
      out.history.push_back(row);
    }
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "step,loss,kl_uniform,kl_greedy,elbo_uniform,p_elbo,grad_norm,loss_var\r\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const auto& r : rows) {
    line.str("");
    line << r.step << ',' << r.loss << ',' << r.kl_uniform << ',' << r.kl_greedy << ',' << r.elbo_uniform << ','
         << r.p_elbo << ',' << r.grad_norm << ',' << r.loss_var << "\r\n";
    out << line.str();
  }
}

}  // namespace papl
