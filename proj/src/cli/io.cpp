#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "papl/cli.hpp"

namespace papl::cli {

TabularDenoiser read_denoiser_table(std::istream& in) {
  using nlohmann::json;
  try {
    const json j = json::parse(in);
    const Problem problem(j.at("vocab_size").get<int>(), j.at("length").get<int>());
    DenoiserTable table;
    for (const auto& entry : j.at("entries")) {
      Sequence state(entry.at("state").get<std::vector<Token>>());
      problem.validate(state);
      const int position = entry.at("position").get<int>();
      auto probs = entry.at("probs").get<std::vector<double>>();
      if (!table.emplace(std::make_pair(std::move(state), position), std::move(probs)).second) {
        throw UsageError("malformed table file: duplicate entry");
      }
    }
    return TabularDenoiser::from_table(problem, table);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed table file: ") + e.what());
  } catch (const ConstructionError& e) {
    throw UsageError(std::string("malformed table file: ") + e.what());
  }
}

TabularDenoiser load_denoiser_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open table file: " + path);
  return read_denoiser_table(in);
}

void write_denoiser_table(std::ostream& out, const TabularDenoiser& d) {
  const Problem& p = d.problem();
  nlohmann::ordered_json j;
  j["vocab_size"] = p.vocab_size();
  j["length"] = p.length();
  auto entries = nlohmann::ordered_json::array();
  for (StateId x = 0; x < p.num_states(); ++x) {
    const Sequence s = p.decode(x);
    for (int i = 0; i < p.length(); ++i) {
      if (!p.is_masked(x, i)) continue;
      const auto probs = d.probs(x, i);
      entries.push_back({{"state", std::vector<Token>(s.tokens().begin(), s.tokens().end())},
                         {"position", i},
                         {"probs", std::vector<double>(probs.begin(), probs.end())}});
    }
  }
  j["entries"] = std::move(entries);
  out << j.dump(1) << '\n';
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(17) << value;
  return s.str();
}

}  // namespace papl::cli
