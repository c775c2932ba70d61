#include <bit>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "oracles.hpp"
#include "papl/random.hpp"
#include "papl/sampling.hpp"

using namespace papl;

namespace {

constexpr Token m = 3;

TabularDenoiser small_counterexample() {
  Problem p(3, 2);
  DenoiserTable table{
      {{{m, m}, 0}, {0.25, 0.75}}, {{{m, m}, 1}, {0.5, 0.5}}, {{{m, 1}, 0}, {0.25, 0.75}},
      {{{m, 2}, 0}, {0.5, 0.5}},   {{{1, m}, 1}, {0.5, 0.5}}, {{{2, m}, 1}, {0.5, 0.5}},
  };
  return TabularDenoiser::from_table(p, table);
}

// Every state of the oracle within 4 binomial standard deviations.
void check_within_4_sigma(const SampleSet& s, const oracle::Dist& exact) {
  const double n = static_cast<double>(s.terminals.size());
  const auto counts = s.counts();
  for (const auto& [x, c] : counts) CHECK(exact.count(x) == 1);
  for (const auto& [x, prob] : exact) {
    const auto it = counts.find(x);
    const double freq = it == counts.end() ? 0.0 : static_cast<double>(it->second) / n;
    const double sigma = std::sqrt(prob * (1.0 - prob) / n);
    CHECK(std::abs(freq - prob) <= 4.0 * sigma + 1e-12);
  }
}

// Pearson homogeneity test of two count tables.
double two_sample_p_value(const std::map<StateId, std::uint64_t>& a, const std::map<StateId, std::uint64_t>& b) {
  std::map<StateId, std::pair<double, double>> table;
  double na = 0.0, nb = 0.0;
  for (const auto& [x, c] : a) {
    table[x].first = static_cast<double>(c);
    na += static_cast<double>(c);
  }
  for (const auto& [x, c] : b) {
    table[x].second = static_cast<double>(c);
    nb += static_cast<double>(c);
  }
  double stat = 0.0;
  for (const auto& [x, row] : table) {
    const double total = row.first + row.second;
    const double ea = total * na / (na + nb), eb = total * nb / (na + nb);
    stat += (row.first - ea) * (row.first - ea) / ea + (row.second - eb) * (row.second - eb) / eb;
  }
  boost::math::chi_squared dist(static_cast<double>(table.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST_CASE("sample_vanilla examples") {
  SUBCASE("L = 1 follows the denoiser marginal") {
    Problem p(4, 1);
    const auto d = random_denoiser(p, 3);
    const auto s = sample_vanilla(d, {11, 100000, false, 1});
    oracle::Dist exact;
    for (Token t = 1; t <= 3; ++t) exact[p.encode(Sequence{t})] = d.prob(p.all_masked_id(), 0, t);
    check_within_4_sigma(s, exact);
  }
  SUBCASE("d = 3, L = 3 agrees with the exact uniform-order distribution") {
    Problem p(3, 3);
    const auto d = random_denoiser(p, 21);
    const auto s = sample_vanilla(d, {5, 100000, false, 1});
    const auto exact = exact_terminal_distribution(d, PositionPlanner::uniform()).marginal();
    check_within_4_sigma(s, exact);
    CHECK_FALSE(chi_square_gof(s.counts(), exact, 0.001).reject);
  }
  SUBCASE("fixed seed is reproducible") {
    Problem p(3, 3);
    const auto d = random_denoiser(p, 21);
    const auto a = sample_vanilla(d, {99, 2000, true, 1});
    const auto b = sample_vanilla(d, {99, 2000, true, 1});
    const auto c = sample_vanilla(d, {100, 2000, true, 1});
    CHECK(a.terminals == b.terminals);
    CHECK(a.paths == b.paths);
    CHECK(a.terminals != c.terminals);
  }
}

TEST_CASE("sample_planned examples") {
  SUBCASE("greedy on the small counterexample hits (1, 1) at the enumerated rate") {
    const auto d = small_counterexample();
    const auto s = sample_planned(d, PositionPlanner::greedy(), {2024, 100000, false, 1});
    const double n = static_cast<double>(s.terminals.size());
    const double target = 1.0 / 32.0;
    const auto counts = s.counts();
    const double freq = static_cast<double>(counts.at(d.problem().encode(Sequence{1, 1}))) / n;
    CHECK(std::abs(freq - target) <= 4.0 * std::sqrt(target * (1 - target) / n));
    // the published 3/32 sits far outside the sampling error
    CHECK(std::abs(freq - 3.0 / 32.0) > 20.0 * std::sqrt(target * (1 - target) / n));
  }
  SUBCASE("uniform planner matches the vanilla sampler in distribution") {
    Problem p(3, 3);
    const auto d = random_denoiser(p, 31);
    const auto a = sample_vanilla(d, {1, 100000, false, 1});
    const auto b = sample_planned(d, PositionPlanner::uniform(), {2, 100000, false, 1});
    CHECK(two_sample_p_value(a.counts(), b.counts()) > 0.001);
  }
  SUBCASE("single-mask state forces the planner") {
    Problem p(3, 1);
    const auto d = random_denoiser(p, 8);
    oracle::Dist exact;
    for (Token t = 1; t <= 2; ++t) exact[p.encode(Sequence{t})] = d.prob(p.all_masked_id(), 0, t);
    for (const auto& planner : {PositionPlanner::greedy(), PositionPlanner::soft_greedy(0.5)}) {
      check_within_4_sigma(sample_planned(d, planner, {4, 100000, false, 1}), exact);
    }
  }
  SUBCASE("greedy and soft greedy against the exact oracle") {
    Problem p(3, 3);
    const auto d = random_denoiser(p, 41, 1.5);
    for (const auto& planner : {PositionPlanner::greedy(), PositionPlanner::soft_greedy(1.0)}) {
      const auto s = sample_planned(d, planner, {6, 100000, false, 1});
      check_within_4_sigma(s, exact_terminal_distribution(d, planner).marginal());
    }
  }
}

TEST_CASE("sample_p2 examples") {
  Problem p(3, 3);
  const auto d = random_denoiser(p, 51, 2.0);
  for (const auto& sp : {SetPlanner::p2_topk(0.0), SetPlanner::p2_topk(5.0), SetPlanner::rdm()}) {
    const auto s = sample_p2(d, sp, {7, 100000, true, 1});
    check_within_4_sigma(s, exact_terminal_distribution_p2(d, sp).marginal());
    // step k+1 keeps k+1 positions, so x_k carries L-k masks
    for (std::size_t n = 0; n < 1000; ++n) {
      for (int k = 0; k < 3; ++k) CHECK(std::popcount(s.paths[n][static_cast<std::size_t>(k)]) == k + 1);
    }
  }
  Problem single(3, 1);
  const auto d1 = random_denoiser(single, 52);
  oracle::Dist exact;
  for (Token t = 1; t <= 2; ++t) exact[single.encode(Sequence{t})] = d1.prob(single.all_masked_id(), 0, t);
  check_within_4_sigma(sample_p2(d1, SetPlanner::p2_topk(5.0), {8, 100000, false, 1}), exact);
}

TEST_CASE("property: output does not depend on the thread count") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Problem p(3, 3);
    const auto d = random_denoiser(p, 60 + seed);
    const SamplerConfig one{seed, 3001, true, 1}, many{seed, 3001, true, 4};
    CHECK(sample_vanilla(d, one).terminals == sample_vanilla(d, many).terminals);
    const auto a = sample_planned(d, PositionPlanner::soft_greedy(0.5), one);
    const auto b = sample_planned(d, PositionPlanner::soft_greedy(0.5), many);
    CHECK(a.terminals == b.terminals);
    CHECK(a.paths == b.paths);
    std::ostringstream ta, tb;
    const auto pa = sample_p2(d, SetPlanner::p2_topk(5.0), one);
    write_trace_ndjson(ta, pa);
    write_trace_ndjson(tb, sample_p2(d, SetPlanner::p2_topk(5.0), many));
    CHECK(ta.str() == tb.str());
  }
}

TEST_CASE("write_trace_ndjson format") {
  Problem p(3, 2);
  SampleSet s{p, PathKind::order, {p.encode(Sequence{1, 2}), p.encode(Sequence{2, 2})}, {{1, 0}, {0, 1}}};
  std::ostringstream out;
  write_trace_ndjson(out, s);
  CHECK(out.str() ==
        "{\"sample\":0,\"terminal\":[1,2],\"order\":[1,0]}\n"
        "{\"sample\":1,\"terminal\":[2,2],\"order\":[0,1]}\n");
  s.paths.clear();
  s.path_kind = PathKind::kept_sets;
  std::ostringstream bare;
  write_trace_ndjson(bare, s);
  CHECK(bare.str().find("kept_sets") == std::string::npos);
}

TEST_CASE("chi_square_gof examples") {
  SUBCASE("hand-computed statistic") {
    // expected 50/30/20, observed 40/35/25 -> 2 + 5/6 + 5/4
    const auto r = chi_square_gof({{0, 40}, {1, 35}, {2, 25}}, {{0, 0.5}, {1, 0.3}, {2, 0.2}}, 0.001);
    CHECK(std::abs(r.statistic - (2.0 + 5.0 / 6.0 + 1.25)) < 1e-12);
    CHECK(r.dof == 2);
    CHECK(std::abs(r.p_value - std::exp(-r.statistic / 2.0)) < 1e-12);
    CHECK_FALSE(r.reject);
  }
  SUBCASE("small bins are pooled") {
    const auto r = chi_square_gof({{0, 97}, {1, 2}, {2, 1}}, {{0, 0.96}, {1, 0.02}, {2, 0.02}}, 0.001);
    CHECK(r.bins == 1);
    CHECK(r.p_value == 1.0);
    const auto r2 = chi_square_gof({{0, 900}, {1, 60}, {2, 40}}, {{0, 0.9}, {1, 0.06}, {2, 0.003}, {3, 0.037}}, 0.001);
    CHECK(r2.bins == 3);
  }
  SUBCASE("mass on an impossible state rejects") {
    const auto r = chi_square_gof({{0, 10}, {5, 1}}, {{0, 1.0}}, 0.001);
    CHECK(r.support_violation);
    CHECK(r.reject);
  }
  SUBCASE("biased sampler is rejected") {
    Problem p(3, 3);
    const auto d = random_denoiser(p, 70, 2.0);
    const auto s = sample_planned(d, PositionPlanner::greedy(), {1, 100000, false, 1});
    CHECK(chi_square_gof(s.counts(), exact_terminal_distribution(d, PositionPlanner::uniform()).marginal(), 0.001).reject);
  }
  CHECK_THROWS_AS(chi_square_gof({}, {{0, 1.0}}, 0.01), UsageError);
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hits(101, 0);
  parallel_for(101, 7, [&](int i) { hits[static_cast<std::size_t>(i)] += 1; });
  CHECK(std::count(hits.begin(), hits.end(), 1) == 101);
  CHECK_THROWS_AS(parallel_for(10, 3, [](int i) {
                    if (i == 6) throw UsageError("boom");
                  }),
                  UsageError);
  CHECK_THROWS_AS(sample_vanilla(TabularDenoiser(Problem(3, 2)), {0, 0, false, 1}), UsageError);
}
