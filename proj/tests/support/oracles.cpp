#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Calls visit(z, weight) for every clean fill of the masked coordinates of
// x (other coordinates keep the tokens of x), weight = prod of confidences.
void for_each_candidate(const TabularDenoiser& d, StateId x,
                        const std::function<void(const Sequence&, double)>& visit) {
  const auto& p = d.problem();
  const Sequence base = p.decode(x);
  std::vector<int> masked;
  for (int pos = 0; pos < p.length(); ++pos) {
    if (base[pos] == p.mask()) masked.push_back(pos);
  }
  std::size_t total = 1;
  for (std::size_t n = 0; n < masked.size(); ++n) total *= static_cast<std::size_t>(p.vocab().num_clean());
  for (std::size_t code = 0; code < total; ++code) {
    Sequence z = base;
    std::size_t rest = code;
    double weight = 1.0;
    for (int pos : masked) {
      const Token t = static_cast<Token>(rest % static_cast<std::size_t>(p.vocab().num_clean())) + 1;
      rest /= static_cast<std::size_t>(p.vocab().num_clean());
      z.set(pos, t);
      weight *= d.prob(x, pos, t);
    }
    visit(z, weight);
  }
}

std::vector<int> top_positions(const std::vector<double>& scores, int count) {
  std::vector<std::pair<double, int>> ranked;
  for (int pos = 0; pos < static_cast<int>(scores.size()); ++pos) ranked.emplace_back(-scores[static_cast<std::size_t>(pos)], pos);
  std::sort(ranked.begin(), ranked.end());
  std::vector<int> out;
  for (int n = 0; n < count; ++n) out.push_back(ranked[static_cast<std::size_t>(n)].second);
  return out;
}

std::vector<double> p2_scores(const TabularDenoiser& d, bool rdm, double eta, const Sequence& z, const Sequence& x) {
  const auto& p = d.problem();
  const StateId id = p.encode(x);
  std::vector<double> scores(static_cast<std::size_t>(p.length()));
  for (int pos = 0; pos < p.length(); ++pos) {
    if (x[pos] == p.mask()) {
      const double c = d.prob(id, pos, z[pos]);
      scores[static_cast<std::size_t>(pos)] = rdm ? c : eta * c;
    } else {
      scores[static_cast<std::size_t>(pos)] = z[pos] == x[pos] ? 1.0 : 0.0;
    }
  }
  return scores;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  long double total = 0.0L;
  for (double l : logits) total += std::exp(static_cast<long double>(l));
  std::vector<double> out;
  for (double l : logits) out.push_back(static_cast<double>(std::exp(static_cast<long double>(l)) / total));
  return out;
}

std::vector<double> plan(const TabularDenoiser& d, Rule rule, double tau, const Sequence& z, const Sequence& x) {
  const auto& p = d.problem();
  const StateId id = p.encode(x);
  std::vector<double> out(static_cast<std::size_t>(p.length()), 0.0);
  std::vector<int> masked;
  for (int pos = 0; pos < p.length(); ++pos) {
    if (x[pos] == p.mask()) masked.push_back(pos);
  }
  if (rule == Rule::uniform) {
    for (int pos : masked) out[static_cast<std::size_t>(pos)] = 1.0 / static_cast<double>(masked.size());
  } else if (rule == Rule::greedy) {
    std::vector<std::pair<double, int>> ranked;
    for (int pos : masked) ranked.emplace_back(-d.prob(id, pos, z[pos]), pos);
    std::sort(ranked.begin(), ranked.end());
    out[static_cast<std::size_t>(ranked.front().second)] = 1.0;
  } else {
    double total = 0.0;
    for (int pos : masked) {
      out[static_cast<std::size_t>(pos)] = std::pow(d.prob(id, pos, z[pos]), 1.0 / tau);
      total += out[static_cast<std::size_t>(pos)];
    }
    for (int pos : masked) out[static_cast<std::size_t>(pos)] /= total;
  }
  return out;
}

Dist vanilla_row(const TabularDenoiser& d, StateId x) {
  const auto& p = d.problem();
  Dist row;
  const int masks = p.num_masks(x);
  for (int pos = 0; pos < p.length(); ++pos) {
    if (!p.is_masked(x, pos)) continue;
    for (Token t = 1; t <= p.vocab().num_clean(); ++t) row[p.replace(x, pos, t)] += d.prob(x, pos, t) / masks;
  }
  return row;
}

Dist planned_row(const TabularDenoiser& d, Rule rule, double tau, StateId x) {
  const auto& p = d.problem();
  const Sequence xs = p.decode(x);
  Dist row;
  for_each_candidate(d, x, [&](const Sequence& z, double weight) {
    const auto g = plan(d, rule, tau, z, xs);
    for (int pos = 0; pos < p.length(); ++pos) {
      if (xs[pos] != p.mask()) continue;
      row[p.replace(x, pos, z[pos])] += weight * g[static_cast<std::size_t>(pos)];
    }
  });
  return row;
}

Dist p2_row(const TabularDenoiser& d, bool rdm, double eta, StateId x) {
  const auto& p = d.problem();
  const Sequence xs = p.decode(x);
  const int step = p.length() - p.num_masks(x);
  Dist row;
  for_each_candidate(d, x, [&](const Sequence& z, double weight) {
    const auto keep = top_positions(p2_scores(d, rdm, eta, z, xs), step + 1);
    Sequence y = p.all_masked();
    for (int pos : keep) y.set(pos, z[pos]);
    row[p.encode(y)] += weight;
  });
  return row;
}

double effective_planner(const TabularDenoiser& d, Rule rule, double tau, const Sequence& x, Token y, int i) {
  double out = 0.0;
  for_each_candidate(d, d.problem().encode(x), [&](const Sequence& z, double weight) {
    out += weight * plan(d, rule, tau, z.with(i, y), x)[static_cast<std::size_t>(i)];
  });
  return out;
}

Dist terminal(const papl::Problem& problem, const std::function<Dist(StateId)>& row) {
  Dist current{{problem.all_masked_id(), 1.0}};
  for (int step = 0; step < problem.length(); ++step) {
    Dist next;
    for (const auto& [x, px] : current) {
      for (const auto& [y, q] : row(x)) next[y] += px * q;
    }
    current = std::move(next);
  }
  return current;
}

double reference_path_bound(const TabularDenoiser& d, Rule rule, double tau, const Sequence& x0) {
  const auto& p = d.problem();
  double total = 0.0;
  std::function<void(const Sequence&, double, double, double)> walk = [&](const Sequence& x, double r,
                                                                          double log_r, double log_q) {
    if (p.num_masks(x) == 0) {
      total += r * (log_q - log_r);
      return;
    }
    const auto g = plan(d, rule, tau, x0, x);
    const auto q_row = planned_row(d, rule, tau, p.encode(x));
    for (int pos = 0; pos < p.length(); ++pos) {
      const double gi = g[static_cast<std::size_t>(pos)];
      if (x[pos] != p.mask() || gi <= 0.0) continue;
      const Sequence y = x.with(pos, x0[pos]);
      const auto it = q_row.find(p.encode(y));
      const double q = it == q_row.end() ? 0.0 : it->second;
      walk(y, r * gi, log_r + std::log(gi), q > 0.0 ? log_q + std::log(q) : -kInf);
    }
  };
  walk(p.all_masked(), 1.0, 0.0, 0.0);
  return total;
}

double p2_reference_path_bound(const TabularDenoiser& d, bool rdm, double eta, const Sequence& x0) {
  const auto& p = d.problem();
  Sequence y = p.all_masked();
  double log_q = 0.0;
  for (int step = 0; step < p.length(); ++step) {
    const auto keep = top_positions(p2_scores(d, rdm, eta, x0, y), step + 1);
    Sequence next = p.all_masked();
    for (int pos : keep) next.set(pos, x0[pos]);
    const auto row = p2_row(d, rdm, eta, p.encode(y));
    const auto it = row.find(p.encode(next));
    if (it == row.end() || it->second <= 0.0) return -kInf;
    log_q += std::log(it->second);
    y = next;
  }
  return log_q;
}

double softmax_bound(const TabularDenoiser& d, double tau, const Sequence& x0) {
  const auto& p = d.problem();
  double total = 0.0;
  std::function<void(const Sequence&, double)> walk = [&](const Sequence& x, double r) {
    if (p.num_masks(x) == 0) return;
    const StateId id = p.encode(x);
    const auto g = plan(d, Rule::soft, tau, x0, x);
    for (int pos = 0; pos < p.length(); ++pos) {
      const double gi = g[static_cast<std::size_t>(pos)];
      if (x[pos] != p.mask() || gi <= 0.0) continue;
      double term = gi * std::log(d.prob(id, pos, x0[pos]));
      for_each_candidate(d, id, [&](const Sequence& z, double weight) {
        const auto gz = plan(d, Rule::soft, tau, z.with(pos, x0[pos]), x);
        term += weight * gi * std::log(gz[static_cast<std::size_t>(pos)] / gi);
      });
      total += r * term;
      walk(x.with(pos, x0[pos]), r * gi);
    }
  };
  walk(p.all_masked(), 1.0);
  return total;
}

double loss(const TabularDenoiser& d, Loss kind, double alpha, double tau, const std::vector<Example>& batch,
            const TabularDenoiser* weights_from) {
  const auto& p = d.problem();
  const TabularDenoiser& wd = weights_from != nullptr ? *weights_from : d;
  double total = 0.0;
  for (const auto& ex : batch) {
    const StateId id = p.encode(ex.x);
    const int masks = p.num_masks(ex.x);
    const auto w = plan(wd, Rule::soft, tau, ex.x0, ex.x);
    for (int pos = 0; pos < p.length(); ++pos) {
      if (ex.x[pos] != p.mask()) continue;
      const double ce = -std::log(d.prob(id, pos, ex.x0[pos]));
      const double wi = w[static_cast<std::size_t>(pos)];
      if (kind == Loss::vanilla) total += ce / masks;
      if (kind == Loss::papl) total += (1.0 + alpha * wi) * ce / masks;
      if (kind == Loss::pure) total += wi * ce;
    }
  }
  return total / static_cast<double>(batch.size());
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double out = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (p[n] <= 0.0) continue;
    if (q[n] <= 0.0) return kInf;
    out += p[n] * std::log(p[n] / q[n]);
  }
  return out;
}

double joint_path_kl(const DenseChain& r, const DenseChain& q) {
  const std::size_t states = r.initial.size();
  const std::size_t steps = r.steps.size();
  std::size_t paths = 1;
  for (std::size_t n = 0; n <= steps; ++n) paths *= states;
  double out = 0.0;
  for (std::size_t code = 0; code < paths; ++code) {
    std::vector<std::size_t> path;
    std::size_t rest = code;
    for (std::size_t n = 0; n <= steps; ++n) {
      path.push_back(rest % states);
      rest /= states;
    }
    double pr = r.initial[path[0]];
    double pq = q.initial[path[0]];
    for (std::size_t k = 0; k < steps; ++k) {
      pr *= r.steps[k][path[k]][path[k + 1]];
      pq *= q.steps[k][path[k]][path[k + 1]];
    }
    if (pr <= 0.0) continue;
    if (pq <= 0.0) return kInf;
    out += pr * std::log(pr / pq);
  }
  return out;
}

std::vector<double> terminal_marginal(const DenseChain& chain) {
  std::vector<double> current = chain.initial;
  for (const auto& matrix : chain.steps) {
    std::vector<double> next(current.size(), 0.0);
    for (std::size_t a = 0; a < current.size(); ++a) {
      for (std::size_t b = 0; b < current.size(); ++b) next[b] += current[a] * matrix[a][b];
    }
    current = std::move(next);
  }
  return current;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double eps) {
  std::vector<double> grad(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double saved = x[j];
    x[j] = saved + eps;
    const double up = f(x);
    x[j] = saved - eps;
    const double down = f(x);
    x[j] = saved;
    grad[j] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  double out = 0.0;
  for (std::size_t n = 0; n < p.size(); ++n) out += std::abs(p[n] - q[n]);
  return 0.5 * out;
}

}  // namespace oracle
