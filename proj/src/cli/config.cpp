#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "papl/cli.hpp"

namespace papl::cli {

namespace {

namespace pt = boost::property_tree;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "run.seed", "run.out", "run.jobs",
      "problem.vocab_size", "problem.length",
      "denoiser.logit_scale", "denoiser.table",
      "counterexample.c1", "counterexample.c2", "counterexample.c3",
      "counterexample.c4", "counterexample.c5", "counterexample.c6", "counterexample.table",
      "bounds.instances", "bounds.kinds", "bounds.planners", "bounds.softmax_taus", "bounds.p2_etas",
      "bounds.tolerance", "bounds.degeneracy_tolerance",
      "sampler.planner", "sampler.n_samples", "sampler.significance", "sampler.instances",
      "sampler.min_pass_fraction", "sampler.biased",
      "training.steps", "training.batch_size", "training.learning_rate", "training.alpha", "training.tau",
      "training.seeds", "training.eval_every", "training.inference_tau", "training.init_scale",
      "training.detach", "training.control", "training.variance_window", "training.alpha_sweep",
      "training.tau_sweep",
      "data.modes", "data.probs",
      "beta.max_length", "beta.schedule", "beta.tolerance",
  };
  return keys;
}

std::string trim(std::string_view s) {
  auto begin = s.begin();
  auto end = s.end();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end != begin && std::isspace(static_cast<unsigned char>(*(end - 1)))) --end;
  return std::string(begin, end);
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("config " + key + ": expected a number, got '" + text + "'");
  }
}

long long parse_integer(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("config " + key + ": expected an integer, got '" + text + "'");
  }
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) const {
    if (auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'))) return trim(*v);
    return std::nullopt;
  }

  void read(const std::string& key, std::string& target) const {
    if (auto v = raw(key)) target = *v;
  }
  void read(const std::string& key, double& target) const {
    if (auto v = raw(key)) target = parse_double(key, *v);
  }
  void read(const std::string& key, int& target) const {
    if (auto v = raw(key)) {
      const long long n = parse_integer(key, *v);
      if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
        throw UsageError("config " + key + ": out of range");
      }
      target = static_cast<int>(n);
    }
  }
  void read(const std::string& key, std::uint64_t& target) const {
    if (auto v = raw(key)) {
      const long long n = parse_integer(key, *v);
      if (n < 0) throw UsageError("config " + key + ": must be non-negative");
      target = static_cast<std::uint64_t>(n);
    }
  }
  void read(const std::string& key, bool& target) const {
    if (auto v = raw(key)) {
      std::string s = *v;
      std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
      if (s == "true" || s == "1" || s == "yes" || s == "on") {
        target = true;
      } else if (s == "false" || s == "0" || s == "no" || s == "off") {
        target = false;
      } else {
        throw UsageError("config " + key + ": expected a boolean, got '" + *v + "'");
      }
    }
  }
  void read(const std::string& key, std::vector<std::string>& target) const {
    if (auto v = raw(key)) target = split(*v, ',');
  }
  void read(const std::string& key, std::vector<double>& target) const {
    if (auto v = raw(key)) {
      target.clear();
      for (const auto& item : split(*v, ',')) target.push_back(parse_double(key, item));
    }
  }

 private:
  const pt::ptree& tree_;
};

void check_keys(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw UsageError("config: key '" + section + "' must live in a [section]");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!known_keys().contains(full)) throw UsageError("config: unknown key '" + full + "'");
    }
  }
}

void apply_override(pt::ptree& tree, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw UsageError("override '" + text + "' must look like section.key=value");
  const std::string key = trim(std::string_view(text).substr(0, eq));
  const std::string value = trim(std::string_view(text).substr(eq + 1));
  if (!known_keys().contains(key)) throw UsageError("unknown config key '" + key + "'");
  tree.put(pt::ptree::path_type(key, '.'), value);
}

std::vector<Sequence> parse_modes(const std::string& text) {
  std::vector<Sequence> out;
  for (const auto& row : split(text, ';')) {
    std::vector<Token> tokens;
    std::istringstream in(row);
    std::string item;
    while (in >> item) tokens.push_back(static_cast<Token>(parse_integer("data.modes", item)));
    out.emplace_back(std::move(tokens));
  }
  return out;
}

std::vector<double> parse_probs(const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (in >> item) out.push_back(parse_double("data.probs", item));
  return out;
}

void validate(const ExperimentConfig& c) {
  if (c.run.jobs < 1) throw UsageError("run.jobs must be at least 1");
  if (c.run.out.empty()) throw UsageError("run.out must not be empty");
  Problem(c.problem.vocab_size, c.problem.length);
  if (!(c.denoiser.logit_scale >= 0.0)) throw UsageError("denoiser.logit_scale must be >= 0");
  if (c.bounds.instances < 1) throw UsageError("bounds.instances must be positive");
  if (!(c.bounds.tolerance >= 0.0)) throw UsageError("bounds.tolerance must be >= 0");
  for (const auto& k : c.bounds.kinds) {
    static const std::set<std::string> kinds{"uniform", "p_elbo", "greedy", "softmax", "p2_topk"};
    if (!kinds.contains(k)) throw UsageError("bounds.kinds: unknown bound '" + k + "'");
  }
  for (const auto& p : c.bounds.planners) parse_position_planner(p);
  for (double t : c.bounds.softmax_taus) {
    if (!(t > 0.0)) throw UsageError("bounds.softmax_taus must be positive");
  }
  for (double e : c.bounds.p2_etas) {
    if (!(e >= 0.0)) throw UsageError("bounds.p2_etas must be >= 0");
  }
  parse_sampler(c.sampler.planner);
  if (c.sampler.n_samples < 1) throw UsageError("sampler.n_samples must be positive");
  if (c.sampler.instances < 1) throw UsageError("sampler.instances must be positive");
  if (!(c.sampler.significance > 0.0 && c.sampler.significance < 1.0)) {
    throw UsageError("sampler.significance must lie in (0, 1)");
  }
  if (!(c.sampler.min_pass_fraction >= 0.0 && c.sampler.min_pass_fraction <= 1.0)) {
    throw UsageError("sampler.min_pass_fraction must lie in [0, 1]");
  }
  if (c.training.seeds < 1) throw UsageError("training.seeds must be positive");
  if (!(c.training.init_scale >= 0.0)) throw UsageError("training.init_scale must be >= 0");
  for (double a : c.training.alpha_sweep) {
    if (!(a >= 0.0)) throw UsageError("training.alpha_sweep entries must be >= 0");
  }
  for (double t : c.training.tau_sweep) {
    if (!(t > 0.0)) throw UsageError("training.tau_sweep entries must be > 0");
  }
  if (c.beta.max_length < 1) throw UsageError("beta.max_length must be positive");
}

}  // namespace

PositionPlanner parse_position_planner(const std::string& text) {
  const auto choice = parse_sampler(text);
  if (choice.family != SamplerChoice::Family::position) {
    throw UsageError("'" + text + "' is not a position planner (uniform, greedy, soft_greedy:TAU)");
  }
  return choice.position;
}

SamplerChoice parse_sampler(const std::string& text) {
  const std::string s = trim(text);
  const auto colon = s.find(':');
  const std::string head = s.substr(0, colon);
  const bool has_arg = colon != std::string::npos;
  const std::string arg = has_arg ? s.substr(colon + 1) : "";
  SamplerChoice out;
  out.name = s;
  auto no_arg = [&] {
    if (has_arg) throw UsageError("planner '" + head + "' takes no parameter");
  };
  if (head == "vanilla") {
    no_arg();
  } else if (head == "uniform") {
    no_arg();
    out.family = SamplerChoice::Family::position;
  } else if (head == "greedy") {
    no_arg();
    out.family = SamplerChoice::Family::position;
    out.position = PositionPlanner::greedy();
  } else if (head == "soft_greedy") {
    if (!has_arg) throw UsageError("soft_greedy needs a temperature, e.g. soft_greedy:0.5");
    out.family = SamplerChoice::Family::position;
    out.position = PositionPlanner::soft_greedy(parse_double("planner", arg));
  } else if (head == "p2_topk") {
    if (!has_arg) throw UsageError("p2_topk needs eta, e.g. p2_topk:1");
    out.family = SamplerChoice::Family::set;
    out.set = SetPlanner::p2_topk(parse_double("planner", arg));
  } else if (head == "rdm") {
    no_arg();
    out.family = SamplerChoice::Family::set;
  } else {
    throw UsageError("unknown planner '" + s + "'");
  }
  return out;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                             ExperimentConfig::ProblemSize problem_default) {
  pt::ptree tree;
  if (!path.empty()) {
    if (!std::filesystem::is_regular_file(path)) throw UsageError("config file not found: " + path);
    try {
      pt::read_ini(path, tree);
    } catch (const pt::ini_parser_error& e) {
      throw UsageError(std::string("config: ") + e.what());
    }
    check_keys(tree);
  }
  for (const auto& o : overrides) apply_override(tree, o);

  ExperimentConfig c;
  c.problem = problem_default;
  const Reader r(tree);
  r.read("run.seed", c.run.seed);
  r.read("run.out", c.run.out);
  r.read("run.jobs", c.run.jobs);
  r.read("problem.vocab_size", c.problem.vocab_size);
  r.read("problem.length", c.problem.length);
  r.read("denoiser.logit_scale", c.denoiser.logit_scale);
  r.read("denoiser.table", c.denoiser.table);
  r.read("counterexample.c1", c.counterexample.c1);
  r.read("counterexample.c2", c.counterexample.c2);
  r.read("counterexample.c3", c.counterexample.c3);
  r.read("counterexample.c4", c.counterexample.c4);
  r.read("counterexample.c5", c.counterexample.c5);
  r.read("counterexample.c6", c.counterexample.c6);
  r.read("counterexample.table", c.counterexample.table);
  r.read("bounds.instances", c.bounds.instances);
  r.read("bounds.kinds", c.bounds.kinds);
  r.read("bounds.planners", c.bounds.planners);
  r.read("bounds.softmax_taus", c.bounds.softmax_taus);
  r.read("bounds.p2_etas", c.bounds.p2_etas);
  r.read("bounds.tolerance", c.bounds.tolerance);
  r.read("bounds.degeneracy_tolerance", c.bounds.degeneracy_tolerance);
  r.read("sampler.planner", c.sampler.planner);
  r.read("sampler.n_samples", c.sampler.n_samples);
  r.read("sampler.significance", c.sampler.significance);
  r.read("sampler.instances", c.sampler.instances);
  r.read("sampler.min_pass_fraction", c.sampler.min_pass_fraction);
  r.read("sampler.biased", c.sampler.biased);
  r.read("training.steps", c.training.steps);
  r.read("training.batch_size", c.training.batch_size);
  r.read("training.learning_rate", c.training.learning_rate);
  r.read("training.alpha", c.training.alpha);
  r.read("training.tau", c.training.tau);
  r.read("training.seeds", c.training.seeds);
  r.read("training.eval_every", c.training.eval_every);
  r.read("training.inference_tau", c.training.inference_tau);
  r.read("training.init_scale", c.training.init_scale);
  r.read("training.detach", c.training.detach);
  r.read("training.control", c.training.control);
  r.read("training.variance_window", c.training.variance_window);
  r.read("training.alpha_sweep", c.training.alpha_sweep);
  r.read("training.tau_sweep", c.training.tau_sweep);
  if (auto v = r.raw("data.modes")) c.data.modes = parse_modes(*v);
  if (auto v = r.raw("data.probs")) c.data.probs = parse_probs(*v);
  r.read("beta.max_length", c.beta.max_length);
  r.read("beta.schedule", c.beta.schedule);
  r.read("beta.tolerance", c.beta.tolerance);
  validate(c);
  return c;
}

}  // namespace papl::cli
