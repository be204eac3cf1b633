#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "consensus/app/config.hpp"
#include "consensus/app/scenario.hpp"
#include "consensus/errors.hpp"

namespace fs = std::filesystem;
using namespace consensus::app;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<double> t_end;
  std::optional<double> alpha;
  std::string formats;
  bool timing = false;
};

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("consensus_lab");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("CONSENSUS_LAB_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string(level) != "off") {
      spdlog::warn("CONSENSUS_LAB_LOG='{}' is not a log level; keeping 'warn'", level);
    } else {
      spdlog::set_level(parsed);
    }
  }
}

void apply(const Overrides& o, ScenarioConfig& cfg) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.dt) cfg.dt = *o.dt;
  if (o.t_end) cfg.t_end = *o.t_end;
  if (o.alpha) {
    cfg.alpha = *o.alpha;
    if (cfg.control == ControlKind::kNone) cfg.control = ControlKind::kJurdjevicQuinn;
  }
  if (!o.formats.empty()) cfg.formats = parse_formats(o.formats);
  if (o.timing) cfg.timing = true;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "PRNG seed for builtin scenarios");
  cmd->add_option("--dt", o.dt, "time step (default: half the RK4 stability limit)")->check(CLI::PositiveNumber);
  cmd->add_option("--t-end", o.t_end, "time horizon")->check(CLI::PositiveNumber);
  cmd->add_option("--alpha", o.alpha, "Jurdjevic-Quinn gain")->check(CLI::NonNegativeNumber);
  cmd->add_option("--format", o.formats, "comma separated subset of csv,json,svg");
  cmd->add_flag("--timing", o.timing, "record wall-clock runtime in the summary");
}

int report(const ScenarioOutcome& outcome, const std::string& name) {
  if (outcome.exit_code != kExitOk) {
    std::cerr << "consensus_lab: " << name << ": " << outcome.stage << ": " << outcome.message << '\n';
  }
  return outcome.exit_code;
}

int run_single(const fs::path& config_path, const fs::path& out, Mode mode, const Overrides& o) {
  ScenarioConfig cfg;
  try {
    cfg = load_config(config_path);
    apply(o, cfg);
  } catch (const std::exception& e) {
    std::cerr << "consensus_lab: config: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return report(run_scenario(cfg, mode, out), cfg.name);
}

int run_many(const std::vector<fs::path>& configs, const fs::path& out, Mode mode, unsigned jobs,
             const Overrides& o) {
  std::vector<BatchJob> batch;
  std::map<std::string, int> seen;
  int worst = kExitOk;
  for (const fs::path& path : configs) {
    try {
      ScenarioConfig cfg = load_config(path);
      apply(o, cfg);
      const int count = seen[cfg.name]++;
      const std::string dir = count == 0 ? cfg.name : cfg.name + "_" + std::to_string(count);
      batch.push_back({std::move(cfg), out / dir});
    } catch (const std::exception& e) {
      std::cerr << "consensus_lab: config: " << e.what() << '\n';
      worst = std::max(worst, exit_code_for(e));
    }
  }
  if (worst != kExitOk) return worst;
  const auto outcomes = run_batch(batch, mode, jobs);
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    worst = std::max(worst, report(outcomes[k], batch[k].config.name));
    if (outcomes[k].exit_code == kExitOk) std::cout << batch[k].out_dir.string() << '\n';
  }
  return worst;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Analysis and simulation of linear consensus dynamics ydot = A y"};
  app.require_subcommand(1);

  Overrides o;
  fs::path config;
  fs::path out = "out";

  struct Single {
    const char* name;
    const char* help;
    Mode mode;
  };
  const Single singles[] = {
      {"analyze", "graph, weight and spectrum only", Mode::kAnalyze},
      {"simulate", "full pipeline: weight, spectrum, integration, decay fit", Mode::kSimulate},
      {"discrete", "discrete-time iteration with the Euler matrix", Mode::kDiscrete},
      {"kernel", "kernel discretization and refinement study", Mode::kKernel},
  };
  std::map<CLI::App*, Mode> modes;
  for (const Single& s : singles) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    cmd->add_option("--config", config, "scenario file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output directory");
    add_common(cmd, o);
    modes[cmd] = s.mode;
  }

  std::vector<fs::path> configs;
  std::string batch_mode = "simulate";
  unsigned jobs = 0;
  CLI::App* batch = app.add_subcommand("batch", "run several scenarios concurrently, one directory each");
  batch->add_option("configs", configs, "scenario files")->check(CLI::ExistingFile);
  batch->add_option("--config", configs, "scenario file (repeatable)")->check(CLI::ExistingFile);
  batch->add_option("--out", out, "parent output directory");
  batch->add_option("--mode", batch_mode, "pipeline to run for every scenario")
      ->check(CLI::IsMember({"analyze", "simulate", "discrete", "kernel"}));
  batch->add_option("--jobs", jobs, "worker threads (0: one per core)");
  add_common(batch, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (batch->parsed()) {
    if (configs.empty()) {
      std::cerr << "consensus_lab: batch: no scenario files given\n";
      return kExitConfig;
    }
    const std::map<std::string, Mode> by_name = {{"analyze", Mode::kAnalyze},
                                                 {"simulate", Mode::kSimulate},
                                                 {"discrete", Mode::kDiscrete},
                                                 {"kernel", Mode::kKernel}};
    return run_many(configs, out, by_name.at(batch_mode), jobs, o);
  }
  for (const auto& [cmd, mode] : modes) {
    if (cmd->parsed()) return run_single(config, out, mode, o);
  }
  return kExitConfig;
}
