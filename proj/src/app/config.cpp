#include "consensus/app/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "consensus/errors.hpp"

namespace consensus::app {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"scenario", {"name", "source", "n", "seed", "matrix_file", "blocks", "kernel", "kernel_file", "kernel_dim"}},
      {"initial", {"kind", "lo", "hi", "file", "values"}},
      {"integration", {"method", "dt", "t_end", "steps", "stride", "window_fraction", "lyapunov"}},
      {"control", {"kind", "alpha", "perturbation", "beta"}},
      {"kernel", {"sizes"}},
      {"output", {"formats", "timing"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void field_error(const std::string& section, const std::string& key, const std::string& msg) {
  throw ConfigError("config field [" + section + "] " + key + ": " + msg);
}

double as_double(const std::string& section, const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    field_error(section, key, "expected a number, got '" + s + "'");
  }
  return out;
}

std::uint64_t as_unsigned(const std::string& section, const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    field_error(section, key, "expected a nonnegative integer, got '" + s + "'");
  }
  return out;
}

bool as_bool(const std::string& section, const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  field_error(section, key, "expected true/false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::string token;
  for (const char c : raw) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!token.empty()) out.push_back(token);
      token.clear();
    } else {
      token.push_back(c);
    }
  }
  if (!token.empty()) out.push_back(token);
  return out;
}

template <typename Enum>
Enum as_enum(const std::string& section, const std::string& key, const std::string& raw,
             const std::map<std::string, Enum>& choices) {
  const std::string s = trim(raw);
  const auto it = choices.find(s);
  if (it == choices.end()) {
    std::string known;
    for (const auto& [name, value] : choices) known += (known.empty() ? "" : ", ") + name;
    field_error(section, key, "unknown value '" + s + "' (expected one of: " + known + ")");
  }
  return it->second;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& raw) {
  std::filesystem::path p(trim(raw));
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

}  // namespace

std::set<Format> parse_formats(std::string_view list) {
  static const std::map<std::string, Format> choices{{"csv", Format::kCsv}, {"json", Format::kJson},
                                                      {"svg", Format::kSvg}};
  std::set<Format> out;
  for (const auto& token : split_list(std::string(list))) out.insert(as_enum("output", "formats", token, choices));
  if (out.empty()) field_error("output", "formats", "no output format given");
  return out;
}

ScenarioConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error at line " + std::to_string(e.line()) + ": " + e.message());
  }

  ScenarioConfig cfg;
  for (const auto& [section, body] : tree) {
    const auto known = schema().find(section);
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' appears outside of any section");
    }
    if (known == schema().end()) throw ConfigError("config has unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      if (!known->second.contains(key)) field_error(section, key, "unknown key");
      const std::string& value = node.data();

      if (section == "scenario") {
        if (key == "name") {
          cfg.name = trim(value);
          if (cfg.name.empty()) field_error(section, key, "must not be empty");
        } else if (key == "source") {
          cfg.source = as_enum<SourceKind>(section, key, value,
                                           {{"matrix_file", SourceKind::kMatrixFile},
                                            {"fully_connected", SourceKind::kFullyConnected},
                                            {"ring", SourceKind::kRing},
                                            {"blocks", SourceKind::kBlocks},
                                            {"kernel", SourceKind::kKernel}});
        } else if (key == "n") {
          cfg.n = as_unsigned(section, key, value);
        } else if (key == "seed") {
          cfg.seed = as_unsigned(section, key, value);
        } else if (key == "matrix_file") {
          cfg.matrix_file = resolve(base_dir, value);
        } else if (key == "blocks") {
          cfg.blocks = as_unsigned(section, key, value);
          if (cfg.blocks == 0) field_error(section, key, "must be at least 1");
        } else if (key == "kernel") {
          cfg.kernel = trim(value);
        } else if (key == "kernel_file") {
          cfg.kernel_file = resolve(base_dir, value);
        } else if (key == "kernel_dim") {
          const auto d = as_unsigned(section, key, value);
          if (d != 1 && d != 2) field_error(section, key, "only 1 and 2 are supported");
          cfg.kernel_dim = static_cast<int>(d);
        }
      } else if (section == "initial") {
        if (key == "kind") {
          cfg.initial = as_enum<InitialKind>(
              section, key, value,
              {{"uniform", InitialKind::kUniform}, {"file", InitialKind::kFile}, {"list", InitialKind::kList}});
        } else if (key == "lo") {
          cfg.lo = as_double(section, key, value);
        } else if (key == "hi") {
          cfg.hi = as_double(section, key, value);
        } else if (key == "file") {
          cfg.initial_file = resolve(base_dir, value);
        } else if (key == "values") {
          cfg.initial_values.clear();
          for (const auto& token : split_list(value)) cfg.initial_values.push_back(as_double(section, key, token));
        }
      } else if (section == "integration") {
        if (key == "method") {
          cfg.method = as_enum<Method>(section, key, value,
                                       {{"rk4", Method::kRk4}, {"discrete", Method::kDiscrete}, {"both", Method::kBoth}});
        } else if (key == "dt") {
          cfg.dt = as_double(section, key, value);
          if (cfg.dt < 0.0) field_error(section, key, "must be nonnegative (0 selects automatically)");
        } else if (key == "t_end") {
          cfg.t_end = as_double(section, key, value);
          if (cfg.t_end < 0.0) field_error(section, key, "must be nonnegative (0 selects automatically)");
        } else if (key == "steps") {
          cfg.steps = as_unsigned(section, key, value);
        } else if (key == "stride") {
          cfg.stride = as_unsigned(section, key, value);
          if (cfg.stride == 0) field_error(section, key, "must be at least 1");
        } else if (key == "window_fraction") {
          cfg.window_fraction = as_double(section, key, value);
          if (!(cfg.window_fraction > 0.0 && cfg.window_fraction <= 1.0)) field_error(section, key, "must lie in (0, 1]");
        } else if (key == "lyapunov") {
          cfg.lyapunov = as_bool(section, key, value);
        }
      } else if (section == "control") {
        if (key == "kind") {
          cfg.control = as_enum<ControlKind>(section, key, value,
                                             {{"none", ControlKind::kNone},
                                              {"jurdjevic_quinn", ControlKind::kJurdjevicQuinn},
                                              {"nonlinear", ControlKind::kNonlinear}});
        } else if (key == "alpha") {
          cfg.alpha = as_double(section, key, value);
          if (cfg.alpha < 0.0) field_error(section, key, "must be nonnegative");
        } else if (key == "perturbation") {
          cfg.perturbation = trim(value);
        } else if (key == "beta") {
          cfg.beta = as_double(section, key, value);
        }
      } else if (section == "kernel") {
        cfg.kernel_sizes.clear();
        for (const auto& token : split_list(value)) cfg.kernel_sizes.push_back(as_unsigned(section, key, token));
      } else if (section == "output") {
        if (key == "formats") {
          cfg.formats = parse_formats(value);
        } else if (key == "timing") {
          cfg.timing = as_bool(section, key, value);
        }
      }
    }
  }

  if (cfg.source == SourceKind::kMatrixFile && cfg.matrix_file.empty()) {
    field_error("scenario", "matrix_file", "required when source = matrix_file");
  }
  const bool sized_by_file =
      cfg.source == SourceKind::kMatrixFile || (cfg.source == SourceKind::kKernel && !cfg.kernel_file.empty());
  if (!sized_by_file && cfg.n < 2) {
    field_error("scenario", "n", "builtin sources need n >= 2");
  }
  if (cfg.initial == InitialKind::kFile && cfg.initial_file.empty()) {
    field_error("initial", "file", "required when kind = file");
  }
  if (cfg.initial == InitialKind::kList && cfg.initial_values.empty()) {
    field_error("initial", "values", "required when kind = list");
  }
  if (cfg.initial == InitialKind::kUniform && !(cfg.lo <= cfg.hi)) {
    field_error("initial", "hi", "must be >= lo");
  }
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::kMatrixFile: return "matrix_file";
    case SourceKind::kFullyConnected: return "fully_connected";
    case SourceKind::kRing: return "ring";
    case SourceKind::kBlocks: return "blocks";
    case SourceKind::kKernel: return "kernel";
  }
  return "unknown";
}

std::string to_string(ControlKind kind) {
  switch (kind) {
    case ControlKind::kNone: return "none";
    case ControlKind::kJurdjevicQuinn: return "jurdjevic_quinn";
    case ControlKind::kNonlinear: return "nonlinear";
  }
  return "unknown";
}

}  // namespace consensus::app
