#include "papl/elbo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "json.hpp"
#include "papl/chains.hpp"
#include "papl/random.hpp"

namespace papl {

namespace {

constexpr int kMaxLength = 32;
constexpr int kInnerSamples = 256;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_x0(const Problem& p, const Sequence& x0) { p.validate_clean(x0); }

std::string format_number(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// Running mean and standard error.
struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  int n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return sum / n; }
  double std_error() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - n * m * m) / (n - 1));
    return std::sqrt(var / n);
  }
};

double log_sum_exp(std::span<const double> v) {
  double hi = kNegInf;
  for (double x : v) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

// Walks the reference chain k steps from the all-mask state with the
// planner evaluated at candidate x0.
StateId sample_reference_state(const TabularDenoiser& d, const PositionPlanner& planner, const Sequence& x0,
                               int k, CounterRng& rng) {
  const Problem& p = d.problem();
  const auto len = static_cast<std::size_t>(p.length());
  std::array<double, kMaxLength> g{};
  StateId x = p.all_masked_id();
  for (int step = 0; step < k; ++step) {
    planner.plan_into(d, x0.tokens(), x, std::span(g.data(), len));
    const int i = rng.categorical(std::span<const double>(g.data(), len));
    x = p.replace(x, i, x0[i]);
  }
  return x;
}

// Sum over masked i of G_i * log Cat(x0^i; D^i(x)).
double weighted_cross_entropy(const TabularDenoiser& d, std::span<const double> g, StateId x, const Sequence& x0) {
  const Problem& p = d.problem();
  double out = 0.0;
  for (int i = 0; i < p.length(); ++i) {
    const double w = g[static_cast<std::size_t>(i)];
    if (w > 0.0 && p.is_masked(x, i)) out += w * d.log_prob(x, i, x0[i]);
  }
  return out;
}

// E_z[ sum_i G_i log(C(x0, x) / C(z^{-i,x0^i}, x)) ] with z drawn over the
// masked coordinates of x; exact enumeration, or a single draw if rng set.
double normaliser_correction(const TabularDenoiser& d, double tau, std::span<const double> g, StateId x,
                             const Sequence& x0, CounterRng* rng) {
  const Problem& p = d.problem();
  std::vector<int> masked;
  for (int i = 0; i < p.length(); ++i) {
    if (p.is_masked(x, i)) masked.push_back(i);
  }
  const std::size_t n = masked.size();
  std::vector<double> a0(n), a(n), tmp(n);
  for (std::size_t j = 0; j < n; ++j) a0[j] = d.log_prob(x, masked[j], x0[masked[j]]) / tau;
  const double log_c0 = log_sum_exp(a0);

  auto term = [&](const std::vector<Token>& z) {
    for (std::size_t j = 0; j < n; ++j) a[j] = d.log_prob(x, masked[j], z[j]) / tau;
    double out = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = g[static_cast<std::size_t>(masked[j])];
      if (w <= 0.0) continue;
      tmp = a;
      tmp[j] = a0[j];
      out += w * (log_c0 - log_sum_exp(tmp));
    }
    return out;
  };

  std::vector<Token> z(n, 1);
  if (rng != nullptr) {
    for (std::size_t j = 0; j < n; ++j) z[j] = rng->categorical(d.probs(x, masked[j])) + 1;
    return term(z);
  }
  const int clean = p.vocab().num_clean();
  double out = 0.0;
  while (true) {
    double prob = 1.0;
    for (std::size_t j = 0; j < n; ++j) prob *= d.prob(x, masked[j], z[j]);
    out += prob * term(z);
    std::size_t j = 0;
    while (j < n && z[j] == clean) z[j++] = 1;
    if (j == n) break;
    ++z[j];
  }
  return out;
}

}  // namespace

double elbo_uniform_permutation_form(const TabularDenoiser& d, const Sequence& x0) {
  const Problem& p = d.problem();
  check_x0(p, x0);
  check_enumeration_budget(p, std::numeric_limits<int>::max(), 6, "elbo_uniform_permutation_form");
  std::vector<int> order(static_cast<std::size_t>(p.length()));
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  long count = 0;
  do {
    StateId x = p.all_masked_id();
    double path = 0.0;
    for (int i : order) {
      path += d.log_prob(x, i, x0[i]);
      x = p.replace(x, i, x0[i]);
    }
    total += path;
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  return total / static_cast<double>(count);
}

double elbo_uniform_timestep_form(const TabularDenoiser& d, const Sequence& x0) {
  const Problem& p = d.problem();
  check_x0(p, x0);
  const MaskedStateIndex index(p, x0);
  double total = 0.0;
  for (int k = 0; k < p.length(); ++k) {
    const int masks = p.length() - k;
    const auto& states = index.with_masks(masks);
    double sum = 0.0;
    for (const auto& x : states) {
      const StateId id = p.encode(x);
      for (int i = 0; i < p.length(); ++i) {
        if (p.is_masked(id, i)) sum += d.log_prob(id, i, x0[i]);
      }
    }
    total += sum / (static_cast<double>(states.size()) * masks);
  }
  return total;
}

PlannerElbo p_elbo(const TabularDenoiser& d, const PositionPlanner& planner, const Sequence& x0,
                   const Evaluation& eval) {
  const Problem& p = d.problem();
  check_x0(p, x0);
  const auto len = static_cast<std::size_t>(p.length());
  std::array<double, kMaxLength> g{};
  PlannerElbo out;

  if (eval.is_exact()) {
    check_enumeration_budget(p, 5, 6, "p_elbo");
    const auto marginals = reference_chain_marginals(d, planner, x0);
    for (int k = 0; k < p.length(); ++k) {
      for (const auto& [x, r] : marginals[static_cast<std::size_t>(k)]) {
        planner.plan_into(d, x0.tokens(), x, std::span(g.data(), len));
        out.e1 += r * weighted_cross_entropy(d, g, x, x0);
        for (int i = 0; i < p.length(); ++i) {
          const double w = g[static_cast<std::size_t>(i)];
          if (w <= 0.0) continue;
          const double f = effective_planner_exact(d, planner, x, x0[i], i);
          out.e2 -= r * w * std::log(w / f);
        }
      }
    }
    out.total = out.e1 + out.e2;
    return out;
  }

  Moments e1, e2, total;
  for (int s = 0; s < eval.n_samples; ++s) {
    CounterRng rng(eval.seed, static_cast<std::uint64_t>(s));
    const int k = rng.uniform_int(p.length());
    const StateId x = sample_reference_state(d, planner, x0, k, rng);
    planner.plan_into(d, x0.tokens(), x, std::span(g.data(), len));
    const double a = p.length() * weighted_cross_entropy(d, g, x, x0);
    double b = 0.0;
    const Sequence xs = p.decode(x);
    for (int i = 0; i < p.length(); ++i) {
      const double w = g[static_cast<std::size_t>(i)];
      if (w <= 0.0) continue;
      const std::uint64_t inner_seed =
          splitmix64(eval.seed ^ splitmix64(static_cast<std::uint64_t>(s) * 64 + static_cast<std::uint64_t>(i)));
      const auto f = effective_planner_F(d, planner, xs, x0[i], i, Evaluation::monte_carlo(kInnerSamples, inner_seed));
      b -= p.length() * w * std::log(w / f.value);
    }
    e1.add(a);
    e2.add(b);
    total.add(a + b);
  }
  out = {e1.mean(), e2.mean(), total.mean(), e1.std_error(), e2.std_error(), total.std_error(), eval.n_samples};
  return out;
}

GreedyElbo elbo_greedy(const TabularDenoiser& d, const Sequence& x0) {
  const Problem& p = d.problem();
  check_x0(p, x0);
  const auto len = static_cast<std::size_t>(p.length());
  const auto greedy = PositionPlanner::greedy();
  std::array<double, kMaxLength> g{};
  GreedyElbo out;
  StateId x = p.all_masked_id();
  for (int k = 0; k < p.length(); ++k) {
    for (int i = 0; i < p.length(); ++i) {
      if (p.is_masked(x, i)) out.value += d.log_prob(x, i, x0[i]);
    }
    greedy.plan_into(d, x0.tokens(), x, std::span(g.data(), len));
    const int j = static_cast<int>(std::max_element(g.begin(), g.begin() + p.length()) - g.begin());
    out.order.push_back(j);
    x = p.replace(x, j, x0[j]);
  }
  return out;
}

SoftmaxElbo elbo_softmax(const TabularDenoiser& d, double tau, const Sequence& x0, const Evaluation& eval) {
  const Problem& p = d.problem();
  check_x0(p, x0);
  const auto planner = PositionPlanner::soft_greedy(tau);
  const auto len = static_cast<std::size_t>(p.length());
  std::array<double, kMaxLength> g{};
  SoftmaxElbo out;

  if (eval.is_exact()) {
    check_enumeration_budget(p, 5, 6, "elbo_softmax");
    const auto marginals = reference_chain_marginals(d, planner, x0);
    for (int k = 0; k < p.length(); ++k) {
      for (const auto& [x, r] : marginals[static_cast<std::size_t>(k)]) {
        planner.plan_into(d, x0.tokens(), x, std::span(g.data(), len));
        out.e1 += r * weighted_cross_entropy(d, g, x, x0);
        out.correction += r * normaliser_correction(d, tau, g, x, x0, nullptr);
      }
    }
    out.total = out.e1 + out.correction;
    return out;
  }

  Moments e1, corr, total;
  for (int s = 0; s < eval.n_samples; ++s) {
    CounterRng rng(eval.seed, static_cast<std::uint64_t>(s));
    const int k = rng.uniform_int(p.length());
    const StateId x = sample_reference_state(d, planner, x0, k, rng);
    planner.plan_into(d, x0.tokens(), x, std::span(g.data(), len));
    const double a = p.length() * weighted_cross_entropy(d, g, x, x0);
    const double b = p.length() * normaliser_correction(d, tau, g, x, x0, &rng);
    e1.add(a);
    corr.add(b);
    total.add(a + b);
  }
  out = {e1.mean(), corr.mean(), total.mean(), e1.std_error(), corr.std_error(), total.std_error(), eval.n_samples};
  return out;
}

SetPlannerElbo elbo_p2(const TabularDenoiser& d, const SetPlanner& planner, const Sequence& x0) {
  const Problem& p = d.problem();
  check_x0(p, x0);
  check_enumeration_budget(p, 3, 3, "elbo_p2_topk");
  const auto len = static_cast<std::size_t>(p.length());
  std::array<double, kMaxLength> scores{};
  SetPlannerElbo out;
  StateId x = p.all_masked_id();
  for (int k = 0; k < p.length(); ++k) {
    for (int i = 0; i < p.length(); ++i) {
      if (p.is_masked(x, i)) out.value += d.log_prob(x, i, x0[i]);
    }
    planner.scores_into(d, x0.tokens(), x, std::span(scores.data(), len));
    const std::uint32_t kept = SetPlanner::top_set(std::span<const double>(scores.data(), len), k + 1);
    out.kept_sets.push_back(kept);
    for (int i = 0; i < p.length(); ++i) x = p.replace(x, i, (kept >> i) & 1u ? x0[i] : p.mask());
  }
  return out;
}

SetPlannerElbo elbo_p2_topk(const TabularDenoiser& d, double eta, const Sequence& x0) {
  return elbo_p2(d, SetPlanner::p2_topk(eta), x0);
}

std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::uniform:
      return "uniform";
    case BoundKind::planner:
      return "p_elbo";
    case BoundKind::greedy:
      return "greedy";
    case BoundKind::softmax:
      return "softmax";
    case BoundKind::p2_topk:
      return "p2_topk";
  }
  return "unknown";
}

std::string BoundSpec::name() const {
  switch (kind) {
    case BoundKind::planner:
      return "p_elbo(" + planner.name() + ")";
    case BoundKind::softmax:
      return "softmax(tau=" + format_number(tau) + ")";
    case BoundKind::p2_topk:
      return "p2_topk(eta=" + format_number(eta) + ")";
    default:
      return to_string(kind);
  }
}

std::string ElboReport::to_json() const {
  nlohmann::ordered_json j;
  j["bound_kind"] = to_string(bound_kind);
  j["bound"] = bound_name;
  j["bound_value"] = bound_value;
  j["exact_log_marginal"] = exact_log_marginal;
  j["gap"] = gap;
  if (evaluation.is_exact()) {
    j["evaluation_mode"] = "exact";
  } else {
    j["evaluation_mode"] = "monte_carlo";
    j["n_samples"] = evaluation.n_samples;
    j["seed"] = evaluation.seed;
    j["std_error"] = std_error;
  }
  return j.dump();
}

double matched_log_marginal(const TabularDenoiser& d, const BoundSpec& spec, const Sequence& x0) {
  switch (spec.kind) {
    case BoundKind::uniform:
      return exact_terminal_distribution(d, PositionPlanner::uniform()).log_probability(x0);
    case BoundKind::planner:
      return exact_terminal_distribution(d, spec.planner).log_probability(x0);
    case BoundKind::greedy:
      return exact_terminal_distribution(d, PositionPlanner::greedy()).log_probability(x0);
    case BoundKind::softmax:
      return exact_terminal_distribution(d, PositionPlanner::soft_greedy(spec.tau)).log_probability(x0);
    case BoundKind::p2_topk:
      return exact_terminal_distribution_p2(d, SetPlanner::p2_topk(spec.eta)).log_probability(x0);
  }
  throw UsageError("unknown bound kind");
}

ElboReport evaluate_bound(const TabularDenoiser& d, const BoundSpec& spec, const Sequence& x0) {
  ElboReport out;
  out.bound_kind = spec.kind;
  out.bound_name = spec.name();
  switch (spec.kind) {
    case BoundKind::uniform:
      out.bound_value = elbo_uniform_timestep_form(d, x0);
      break;
    case BoundKind::planner:
      out.bound_value = p_elbo(d, spec.planner, x0).total;
      break;
    case BoundKind::greedy:
      out.bound_value = elbo_greedy(d, x0).value;
      break;
    case BoundKind::softmax:
      out.bound_value = elbo_softmax(d, spec.tau, x0).total;
      break;
    case BoundKind::p2_topk:
      out.bound_value = elbo_p2_topk(d, spec.eta, x0).value;
      break;
  }
  out.exact_log_marginal = matched_log_marginal(d, spec, x0);
  out.gap = out.exact_log_marginal - out.bound_value;
  return out;
}

NoiseSchedule::NoiseSchedule(std::string name, Function alpha, Function alpha_derivative)
    : name_(std::move(name)), alpha_(std::move(alpha)), derivative_(std::move(alpha_derivative)) {}

NoiseSchedule NoiseSchedule::linear() {
  return NoiseSchedule("linear", [](double t) { return 1.0 - t; }, [](double) { return -1.0; });
}

NoiseSchedule NoiseSchedule::cosine() {
  constexpr double half_pi = 1.5707963267948966;
  return NoiseSchedule(
      "cosine", [](double t) { return t >= 1.0 ? 0.0 : std::cos(half_pi * t); },
      [](double t) { return -half_pi * std::sin(half_pi * t); });
}

NoiseSchedule NoiseSchedule::polynomial(double power) {
  if (!(power > 0.0) || !std::isfinite(power)) throw UsageError("polynomial schedule needs a positive power");
  return NoiseSchedule(
      "polynomial(" + format_number(power) + ")", [power](double t) { return 1.0 - std::pow(t, power); },
      [power](double t) { return t == 0.0 && power < 1.0 ? -std::numeric_limits<double>::infinity()
                                                         : -power * std::pow(t, power - 1.0); });
}

NoiseSchedule NoiseSchedule::custom(std::string name, Function alpha, Function alpha_derivative) {
  if (!alpha || !alpha_derivative) throw UsageError("schedule functions must be set");
  if (std::abs(alpha(0.0) - 1.0) > 1e-12 || std::abs(alpha(1.0)) > 1e-12) {
    throw UsageError("schedule must satisfy alpha(0) = 1 and alpha(1) = 0");
  }
  double prev = alpha(0.0);
  for (int n = 1; n <= 1000; ++n) {
    const double a = alpha(n / 1000.0);
    if (!std::isfinite(a) || a > prev + 1e-12 || a < -1e-12 || a > 1.0 + 1e-12) {
      throw UsageError("schedule must be non-increasing with values in [0, 1]");
    }
    prev = a;
  }
  return NoiseSchedule(std::move(name), std::move(alpha), std::move(alpha_derivative));
}

BetaIdentity beta_identity_check(int length, int k, const NoiseSchedule& schedule) {
  if (length < 1 || k < 1 || k > length) throw UsageError("beta identity needs 1 <= k <= L");
  auto integrand = [&](double t) {
    const double a = std::clamp(schedule.alpha(t), 0.0, 1.0);
    return -schedule.alpha_derivative(t) * std::pow(a, k - 1) * std::pow(1.0 - a, length - k);
  };
  BetaIdentity out;
  boost::math::quadrature::tanh_sinh<double> quad;
  out.lhs = quad.integrate(integrand, 0.0, 1.0, 1e-13, &out.error_estimate);
  out.rhs = 1.0 / (k * static_cast<double>(binomial(length, k)));
  return out;
}

TabularDenoiser counterexample_denoiser(const CounterexampleConstants& c) {
  for (double v : {c.c1, c.c2, c.c3, c.c4, c.c5, c.c6}) {
    if (!(v > 0.0 && v < 1.0)) throw UsageError("counterexample constants must lie in (0, 1)");
  }
  Problem p(3, 2);
  constexpr Token m = 3;
  const DenoiserTable table{
      {{{m, m}, 0}, {c.c1, 1.0 - c.c1}}, {{{m, m}, 1}, {c.c2, 1.0 - c.c2}}, {{{m, 1}, 0}, {c.c3, 1.0 - c.c3}},
      {{{m, 2}, 0}, {c.c4, 1.0 - c.c4}}, {{{1, m}, 1}, {c.c5, 1.0 - c.c5}}, {{{2, m}, 1}, {c.c6, 1.0 - c.c6}},
  };
  return TabularDenoiser::from_table(p, table);
}

CounterexampleReport counterexample_prop1(const CounterexampleConstants& c) {
  const auto d = counterexample_denoiser(c);
  const Sequence x0{1, 1};
  CounterexampleReport out;
  out.constants = c;
  out.elbo_uniform = elbo_uniform_permutation_form(d, x0);
  out.exp_elbo_uniform = std::exp(out.elbo_uniform);
  out.p_greedy = exact_terminal_distribution(d, PositionPlanner::greedy()).probability(x0);
  out.log_p_greedy = std::log(out.p_greedy);
  out.hand_p_greedy = c.c2 * c.c3 * (1.0 - c.c1);
  out.proof_lhs = (1.0 - c.c1) * (1.0 - c.c1) * c.c2 * c.c3;
  out.proof_rhs = c.c1 * c.c5;
  out.margin = out.elbo_uniform - out.log_p_greedy;
  out.greedy_order = elbo_greedy(d, x0).order;
  out.bound_exceeds_greedy = out.elbo_uniform > out.log_p_greedy;
  out.hand_matches_exact = std::abs(out.p_greedy - out.hand_p_greedy) <= 1e-12;
  return out;
}

std::string CounterexampleReport::to_json() const {
  // "N/128" when the value is an exact multiple of 1/128.
  auto over_128 = [](double v) -> nlohmann::ordered_json {
    const double n = v * 128.0;
    if (std::abs(n - std::round(n)) > 1e-9) return nullptr;
    return std::to_string(static_cast<long>(std::round(n))) + "/128";
  };
  nlohmann::ordered_json j;
  j["constants"] = {{"c1", constants.c1}, {"c2", constants.c2}, {"c3", constants.c3},
                    {"c4", constants.c4}, {"c5", constants.c5}, {"c6", constants.c6}};
  j["x0"] = {1, 1};
  j["elbo_uniform"] = elbo_uniform;
  j["exp_elbo_uniform"] = exp_elbo_uniform;
  j["exp_elbo_uniform_fraction"] = over_128(exp_elbo_uniform);
  j["p_greedy_exact"] = p_greedy;
  j["p_greedy_exact_fraction"] = over_128(p_greedy);
  j["log_p_greedy_exact"] = log_p_greedy;
  j["p_greedy_hand_formula"] = hand_p_greedy;
  j["p_greedy_hand_formula_fraction"] = over_128(hand_p_greedy);
  j["hand_matches_exact"] = hand_matches_exact;
  j["proof_lhs"] = proof_lhs;
  j["proof_lhs_fraction"] = over_128(proof_lhs);
  j["proof_rhs"] = proof_rhs;
  j["proof_rhs_fraction"] = over_128(proof_rhs);
  j["margin_nats"] = margin;
  j["greedy_order"] = greedy_order;
  j["bound_exceeds_log_p_greedy"] = bound_exceeds_greedy;
  return j.dump(2);
}

}  // namespace papl
