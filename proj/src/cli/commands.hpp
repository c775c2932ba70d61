#pragma once

#include <iosfwd>

#include "papl/cli.hpp"

namespace papl::cli::detail {

// Each command writes its files under config.run.out, prints a short
// summary to `out` and returns an ExitCode.
int counterexample(const ExperimentConfig& config, std::ostream& out);
int validate_bounds(const ExperimentConfig& config, std::ostream& out);
int sampler_check(const ExperimentConfig& config, std::ostream& out);
int train_compare(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int beta_identity(const ExperimentConfig& config, std::ostream& out);

}  // namespace papl::cli::detail
