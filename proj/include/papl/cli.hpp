#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "papl/core.hpp"
#include "papl/planners.hpp"

namespace papl::cli {

enum ExitCode : int { exit_pass = 0, exit_fail = 1, exit_usage = 2 };

// Planner named on the command line or in a config file: "uniform",
// "greedy", "soft_greedy:TAU" for the sampler path; "vanilla" samples the
// unplanned chain; "p2_topk:ETA" and "rdm" are the remasking samplers.
struct SamplerChoice {
  enum class Family { vanilla, position, set };

  Family family = Family::vanilla;
  PositionPlanner position = PositionPlanner::uniform();
  SetPlanner set = SetPlanner::rdm();
  std::string name;
};

SamplerChoice parse_sampler(const std::string& text);
PositionPlanner parse_position_planner(const std::string& text);

struct ExperimentConfig {
  struct Run {
    std::uint64_t seed = 0;
    std::string out = "papl-out";
    int jobs = 1;
  } run;
  struct ProblemSize {
    int vocab_size = 3;
    int length = 3;
  } problem;
  struct Denoiser {
    double logit_scale = 1.0;
    std::string table;  // JSON table file; replaces the random denoisers when set
  } denoiser;
  struct Counterexample {
    double c1 = 0.25, c2 = 0.5, c3 = 0.25, c4 = 0.5, c5 = 0.5, c6 = 0.5;
    std::string table;
  } counterexample;
  struct Bounds {
    int instances = 100;
    std::vector<std::string> kinds{"uniform", "p_elbo", "greedy", "softmax", "p2_topk"};
    std::vector<std::string> planners{"uniform", "greedy", "soft_greedy:1"};
    std::vector<double> softmax_taus{0.25, 1.0, 4.0};
    std::vector<double> p2_etas{0.0, 1.0, 5.0};
    double tolerance = 1e-8;
    double degeneracy_tolerance = 1e-10;
  } bounds;
  struct Sampler {
    std::string planner = "uniform";
    int n_samples = 100000;
    double significance = 0.001;
    int instances = 1;
    double min_pass_fraction = 0.95;
    bool biased = false;
  } sampler;
  struct Training {
    int steps = 2000;
    int batch_size = 16;
    double learning_rate = 1.0;
    double alpha = 1.0;
    double tau = 1.0;
    int seeds = 5;
    int eval_every = 100;
    double inference_tau = 1.0;
    double init_scale = 0.5;
    bool detach = true;
    bool control = true;
    int variance_window = 50;
    std::vector<double> alpha_sweep;
    std::vector<double> tau_sweep;
  } training;
  struct Data {
    std::vector<Sequence> modes{{1, 1, 2, 2}, {2, 3, 1, 3}, {3, 2, 3, 1}};
    std::vector<double> probs{0.5, 0.3, 0.2};
  } data;
  struct Beta {
    int max_length = 6;
    std::string schedule = "linear";
    double tolerance = 1e-8;
  } beta;
};

// Reads an INI file (may be empty for defaults), then applies
// "section.key=value" overrides in order. Unknown keys, malformed values
// and a missing file raise UsageError. `problem_default` seeds the problem
// size when neither the file nor an override sets it.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             ExperimentConfig::ProblemSize problem_default = {});

// Denoiser table as JSON:
//   {"vocab_size": d, "length": L,
//    "entries": [{"state": [..], "position": i, "probs": [..]}, ...]}
// State tokens are 1..d with d the mask. Throws UsageError when malformed.
TabularDenoiser read_denoiser_table(std::istream& in);
TabularDenoiser load_denoiser_table(const std::string& path);
void write_denoiser_table(std::ostream& out, const TabularDenoiser& denoiser);

// RFC-4180 field: quoted when it contains a comma, quote, CR or LF.
std::string csv_field(std::string_view text);
std::string csv_number(double value);

// Entry point of papl-lab. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace papl::cli
