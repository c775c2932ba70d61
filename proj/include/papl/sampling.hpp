#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <vector>

#include "papl/chains.hpp"
#include "papl/core.hpp"
#include "papl/planners.hpp"

namespace papl {

struct SamplerConfig {
  std::uint64_t seed = 0;
  int n_samples = 1;
  bool record_paths = false;
  int jobs = 1;
};

enum class PathKind { order, kept_sets };

// Terminal states in sample order. Sample n uses stream n of the seed, so
// the output does not depend on `jobs`.
struct SampleSet {
  Problem problem;
  PathKind path_kind = PathKind::order;
  std::vector<StateId> terminals;
  // Per sample when record_paths: unmasked position per step, or the
  // kept-set bitmask per step for set planners.
  std::vector<std::vector<std::uint32_t>> paths;

  std::map<StateId, std::uint64_t> counts() const;
  StateDistribution empirical() const;
};

SampleSet sample_vanilla(const TabularDenoiser& denoiser, const SamplerConfig& config);
SampleSet sample_planned(const TabularDenoiser& denoiser, const PositionPlanner& planner,
                         const SamplerConfig& config);
SampleSet sample_p2(const TabularDenoiser& denoiser, const SetPlanner& planner, const SamplerConfig& config);

// One JSON object per line: {"sample":n,"terminal":[...],"order":[...]}
// ("kept_sets" for set planners; path omitted if not recorded).
void write_trace_ndjson(std::ostream& out, const SampleSet& samples);

struct GofResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  int bins = 0;
  std::uint64_t n = 0;
  // Samples landed on a state the oracle gives probability zero.
  bool support_violation = false;
  bool reject = false;
};

// Pearson chi-square goodness of fit. Bins with expected count below 5 are
// pooled into one bin (and that bin merged into the smallest remaining
// one if it is still below 5).
GofResult chi_square_gof(const std::map<StateId, std::uint64_t>& counts, const StateDistribution& expected,
                         double alpha);

// Runs body(i) for i in [0, n) over up to `jobs` threads. Work is split in
// contiguous blocks; callers write to slot i so results are independent of
// the thread count. The first exception thrown is rethrown.
void parallel_for(int n, int jobs, const std::function<void(int)>& body);

}  // namespace papl
