#include "papl/sampling.hpp"

#include <algorithm>
#include <array>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>
#include "json.hpp"

#include "papl/random.hpp"

namespace papl {

namespace {

constexpr int kMaxLength = 32;

// Candidate draw at every position: D at masked coordinates, the held
// token elsewhere.
void draw_candidate(const TabularDenoiser& d, StateId x, CounterRng& rng, std::span<Token> z) {
  const Problem& p = d.problem();
  for (int pos = 0; pos < p.length(); ++pos) {
    z[static_cast<std::size_t>(pos)] =
        p.is_masked(x, pos) ? rng.categorical(d.probs(x, pos)) + 1 : p.token_at(x, pos);
  }
}

template <typename Step>
SampleSet run_sampler(const TabularDenoiser& d, const SamplerConfig& config, PathKind kind, Step step) {
  if (config.n_samples < 1) throw UsageError("n_samples must be positive");
  const Problem& p = d.problem();
  SampleSet out{p, kind, std::vector<StateId>(static_cast<std::size_t>(config.n_samples)), {}};
  if (config.record_paths) out.paths.resize(static_cast<std::size_t>(config.n_samples));
  parallel_for(config.n_samples, config.jobs, [&](int n) {
    CounterRng rng(config.seed, static_cast<std::uint64_t>(n));
    StateId x = p.all_masked_id();
    std::vector<std::uint32_t> path;
    for (int k = 0; k < p.length(); ++k) {
      std::uint32_t label = 0;
      x = step(x, k, rng, label);
      if (config.record_paths) path.push_back(label);
    }
    out.terminals[static_cast<std::size_t>(n)] = x;
    if (config.record_paths) out.paths[static_cast<std::size_t>(n)] = std::move(path);
  });
  return out;
}

}  // namespace

std::map<StateId, std::uint64_t> SampleSet::counts() const {
  std::map<StateId, std::uint64_t> out;
  for (StateId x : terminals) ++out[x];
  return out;
}

StateDistribution SampleSet::empirical() const {
  StateDistribution out;
  const double n = static_cast<double>(terminals.size());
  for (const auto& [x, c] : counts()) out[x] = static_cast<double>(c) / n;
  return out;
}

SampleSet sample_vanilla(const TabularDenoiser& d, const SamplerConfig& config) {
  const Problem& p = d.problem();
  return run_sampler(d, config, PathKind::order, [&](StateId x, int, CounterRng& rng, std::uint32_t& label) {
    std::array<int, kMaxLength> masked{};
    int n = 0;
    for (int pos = 0; pos < p.length(); ++pos) {
      if (p.is_masked(x, pos)) masked[static_cast<std::size_t>(n++)] = pos;
    }
    const int i = masked[static_cast<std::size_t>(rng.uniform_int(n))];
    const Token y = rng.categorical(d.probs(x, i)) + 1;
    label = static_cast<std::uint32_t>(i);
    return p.replace(x, i, y);
  });
}

SampleSet sample_planned(const TabularDenoiser& d, const PositionPlanner& planner, const SamplerConfig& config) {
  const Problem& p = d.problem();
  const auto len = static_cast<std::size_t>(p.length());
  return run_sampler(d, config, PathKind::order, [&](StateId x, int, CounterRng& rng, std::uint32_t& label) {
    std::array<Token, kMaxLength> z{};
    std::array<double, kMaxLength> weights{};
    draw_candidate(d, x, rng, std::span(z.data(), len));
    planner.plan_into(d, std::span<const Token>(z.data(), len), x, std::span(weights.data(), len));
    const int i = rng.categorical(std::span<const double>(weights.data(), len));
    label = static_cast<std::uint32_t>(i);
    return p.replace(x, i, z[static_cast<std::size_t>(i)]);
  });
}

SampleSet sample_p2(const TabularDenoiser& d, const SetPlanner& planner, const SamplerConfig& config) {
  const Problem& p = d.problem();
  const auto len = static_cast<std::size_t>(p.length());
  return run_sampler(d, config, PathKind::kept_sets, [&](StateId x, int k, CounterRng& rng, std::uint32_t& label) {
    std::array<Token, kMaxLength> z{};
    std::array<double, kMaxLength> scores{};
    draw_candidate(d, x, rng, std::span(z.data(), len));
    planner.scores_into(d, std::span<const Token>(z.data(), len), x, std::span(scores.data(), len));
    const std::uint32_t kept = SetPlanner::top_set(std::span<const double>(scores.data(), len), k + 1);
    StateId y = x;
    for (int pos = 0; pos < p.length(); ++pos) {
      y = p.replace(y, pos, (kept >> pos) & 1u ? z[static_cast<std::size_t>(pos)] : p.mask());
    }
    label = kept;
    return y;
  });
}

void write_trace_ndjson(std::ostream& out, const SampleSet& samples) {
  const char* path_key = samples.path_kind == PathKind::order ? "order" : "kept_sets";
  for (std::size_t n = 0; n < samples.terminals.size(); ++n) {
    const Sequence x = samples.problem.decode(samples.terminals[n]);
    nlohmann::ordered_json rec;
    rec["sample"] = n;
    rec["terminal"] = std::vector<Token>(x.tokens().begin(), x.tokens().end());
    if (!samples.paths.empty()) rec[path_key] = samples.paths[n];
    out << rec.dump() << '\n';
  }
}

GofResult chi_square_gof(const std::map<StateId, std::uint64_t>& counts, const StateDistribution& expected,
                         double alpha) {
  GofResult out;
  for (const auto& [x, c] : counts) out.n += c;
  if (out.n == 0) throw UsageError("chi_square_gof: no observations");
  for (const auto& [x, c] : counts) {
    const auto it = expected.find(x);
    if (c > 0 && (it == expected.end() || it->second <= 0.0)) {
      out.support_violation = true;
      out.reject = true;
      out.p_value = 0.0;
      out.statistic = std::numeric_limits<double>::infinity();
      return out;
    }
  }

  const double n = static_cast<double>(out.n);
  struct Bin {
    double expected;
    double observed;
  };
  std::vector<Bin> bins;
  Bin pooled{0.0, 0.0};
  for (const auto& [x, prob] : expected) {
    if (prob <= 0.0) continue;
    const auto it = counts.find(x);
    const Bin b{prob * n, it == counts.end() ? 0.0 : static_cast<double>(it->second)};
    if (b.expected < 5.0) {
      pooled.expected += b.expected;
      pooled.observed += b.observed;
    } else {
      bins.push_back(b);
    }
  }
  if (pooled.expected > 0.0) {
    if (pooled.expected < 5.0 && !bins.empty()) {
      auto smallest = std::min_element(bins.begin(), bins.end(),
                                       [](const Bin& a, const Bin& b) { return a.expected < b.expected; });
      smallest->expected += pooled.expected;
      smallest->observed += pooled.observed;
    } else {
      bins.push_back(pooled);
    }
  }
  out.bins = static_cast<int>(bins.size());
  out.dof = out.bins - 1;
  for (const auto& b : bins) out.statistic += (b.observed - b.expected) * (b.observed - b.expected) / b.expected;
  if (out.dof < 1) {
    out.p_value = 1.0;
  } else {
    boost::math::chi_squared dist(out.dof);
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  }
  out.reject = out.p_value < alpha;
  return out;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
  if (n <= 0) return;
  jobs = std::clamp(jobs, 1, n);
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    const int begin = static_cast<int>(static_cast<long long>(n) * t / jobs);
    const int end = static_cast<int>(static_cast<long long>(n) * (t + 1) / jobs);
    workers.emplace_back([&, begin, end] {
      try {
        for (int i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace papl
