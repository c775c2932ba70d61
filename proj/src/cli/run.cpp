#include <ostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "papl/cli.hpp"
#include "papl/training.hpp"

namespace papl::cli {

namespace {

struct Parsed {
  std::string config_path;
  std::vector<std::string> overrides;  // "section.key=value", command-line order
};

// Option whose value becomes an override of a config key.
void key_option(CLI::App* app, Parsed& parsed, const std::string& flag, const std::string& key,
                const std::string& description) {
  app->add_option_function<std::string>(
         flag, [&parsed, key](const std::string& v) { parsed.overrides.push_back(key + "=" + v); }, description)
      ->trigger_on_parse();
}

void common_options(CLI::App* app, Parsed& parsed) {
  app->add_option("--config", parsed.config_path, "INI config file");
  key_option(app, parsed, "--seed", "run.seed", "base RNG seed");
  key_option(app, parsed, "--out", "run.out", "output directory");
  key_option(app, parsed, "--jobs", "run.jobs", "worker threads");
  app->add_option_function<std::vector<std::string>>(
         "--set",
         [&parsed](const std::vector<std::string>& items) {
           parsed.overrides.insert(parsed.overrides.end(), items.begin(), items.end());
         },
         "override any config key, section.key=value (repeatable)")
      ->trigger_on_parse();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exact validation and training experiments for planner-aware masked diffusion"};
  app.name("papl-lab");
  app.require_subcommand(1);
  Parsed parsed;

  auto* counterexample = app.add_subcommand("counterexample", "two-token counterexample to the standard bound");
  common_options(counterexample, parsed);
  for (int n = 1; n <= 6; ++n) {
    const std::string c = "c" + std::to_string(n);
    key_option(counterexample, parsed, "--" + c, "counterexample." + c, "denoiser constant " + c);
  }
  key_option(counterexample, parsed, "--table", "counterexample.table", "JSON denoiser table instead of constants");

  auto* bounds = app.add_subcommand("validate-bounds", "every bound against its exact log-likelihood");
  common_options(bounds, parsed);
  key_option(bounds, parsed, "--instances", "bounds.instances", "random instances");
  key_option(bounds, parsed, "--vocab-size", "problem.vocab_size", "vocabulary size d (mask included)");
  key_option(bounds, parsed, "--length", "problem.length", "sequence length L");
  key_option(bounds, parsed, "--kinds", "bounds.kinds", "comma list of uniform,p_elbo,greedy,softmax,p2_topk");
  key_option(bounds, parsed, "--planners", "bounds.planners", "planners of the p_elbo rows");
  key_option(bounds, parsed, "--tolerance", "bounds.tolerance", "allowed negative gap");
  key_option(bounds, parsed, "--table", "denoiser.table", "JSON denoiser table used for every instance");

  auto* sampler = app.add_subcommand("sampler-check", "chi-square test of a sampler against its exact law");
  common_options(sampler, parsed);
  key_option(sampler, parsed, "--planner", "sampler.planner",
             "vanilla, uniform, greedy, soft_greedy:TAU, p2_topk:ETA or rdm");
  key_option(sampler, parsed, "--n-samples", "sampler.n_samples", "samples per instance");
  key_option(sampler, parsed, "--instances", "sampler.instances", "random instances");
  key_option(sampler, parsed, "--significance", "sampler.significance", "test level");
  key_option(sampler, parsed, "--vocab-size", "problem.vocab_size", "vocabulary size d (mask included)");
  key_option(sampler, parsed, "--length", "problem.length", "sequence length L");
  key_option(sampler, parsed, "--table", "denoiser.table", "JSON denoiser table used for every instance");
  sampler->add_flag_callback("--biased", [&parsed] { parsed.overrides.push_back("sampler.biased=true"); },
                             "sample from a mismatched planner (harness self-test)")
      ->trigger_on_parse();

  auto* train = app.add_subcommand("train-compare", "paired vanilla and planner-aware training runs");
  common_options(train, parsed);
  key_option(train, parsed, "--steps", "training.steps", "SGD steps per run");
  key_option(train, parsed, "--seeds", "training.seeds", "paired seeds");
  key_option(train, parsed, "--alpha", "training.alpha", "planner-aware weight strength");
  key_option(train, parsed, "--tau", "training.tau", "training planner temperature");
  key_option(train, parsed, "--learning-rate", "training.learning_rate", "SGD step size");
  key_option(train, parsed, "--alpha-sweep", "training.alpha_sweep", "extra arms, comma list of alpha");
  key_option(train, parsed, "--tau-sweep", "training.tau_sweep", "extra arms, comma list of tau");

  auto* beta = app.add_subcommand("beta-identity", "quadrature check of the schedule integral");
  common_options(beta, parsed);
  key_option(beta, parsed, "--max-length", "beta.max_length", "largest L");
  key_option(beta, parsed, "--schedule", "beta.schedule", "linear, cosine or polynomial:P");
  key_option(beta, parsed, "--tolerance", "beta.tolerance", "allowed |lhs - rhs|");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_pass : exit_usage;
  } catch (const UsageError& e) {
    err << "papl-lab: " << e.what() << '\n';
    return exit_usage;
  }

  try {
    if (counterexample->parsed()) {
      return detail::counterexample(load_config(parsed.config_path, parsed.overrides), out);
    }
    if (bounds->parsed()) return detail::validate_bounds(load_config(parsed.config_path, parsed.overrides), out);
    if (sampler->parsed()) return detail::sampler_check(load_config(parsed.config_path, parsed.overrides), out);
    if (train->parsed()) {
      return detail::train_compare(load_config(parsed.config_path, parsed.overrides, {4, 4}), out, err);
    }
    if (beta->parsed()) return detail::beta_identity(load_config(parsed.config_path, parsed.overrides), out);
  } catch (const UsageError& e) {
    err << "papl-lab: " << e.what() << '\n';
    return exit_usage;
  } catch (const ConstructionError& e) {
    err << "papl-lab: " << e.what() << '\n';
    return exit_usage;
  } catch (const BudgetError& e) {
    err << "papl-lab: " << e.what() << '\n';
    return exit_usage;
  } catch (const TrainingDivergence& e) {
    err << "papl-lab: " << e.what() << '\n';
    return exit_fail;
  } catch (const std::exception& e) {
    err << "papl-lab: " << e.what() << '\n';
    return exit_fail;
  }
  return exit_usage;
}

}  // namespace papl::cli
