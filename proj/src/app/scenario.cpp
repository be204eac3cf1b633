#include "consensus/app/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "consensus/dynamics.hpp"
#include "consensus/errors.hpp"
#include "consensus/graph.hpp"
#include "consensus/kernel.hpp"
#include "consensus/operator.hpp"
#include "consensus/spectral.hpp"

namespace consensus::app {

using nlohmann::json;

int exit_code_for(const std::exception& error) noexcept {
  if (dynamic_cast<const ConnectivityError*>(&error)) return kExitConnectivity;
  if (dynamic_cast<const NumericalError*>(&error)) return kExitNumerical;
  if (dynamic_cast<const IoError*>(&error)) return kExitIo;
  if (dynamic_cast<const ConfigError*>(&error) || dynamic_cast<const ValidationError*>(&error) ||
      dynamic_cast<const DimensionError*>(&error) || dynamic_cast<const PreconditionError*>(&error)) {
    return kExitConfig;
  }
  return kExitNumerical;
}

namespace {

double open_unit(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  double x = 0.0;
  while (x == 0.0) x = dist(rng);
  return x;
}

Eigen::MatrixXd fully_connected_from(std::size_t n, std::mt19937_64& rng) {
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i != j) s(i, j) = open_unit(rng);
    }
  }
  return s;
}

Eigen::MatrixXd ring_from(std::size_t n, std::mt19937_64& rng) {
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) s(i, (i + 1) % m) = open_unit(rng);
  return s;
}

Eigen::MatrixXd blocks_from(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  if (k == 0 || k > n) throw ConfigError("blocks: need 1 <= k <= n");
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  Eigen::Index start = 0;
  for (std::size_t b = 0; b < k; ++b) {
    const auto size = static_cast<Eigen::Index>(n / k + (b < n % k ? 1 : 0));
    for (Eigen::Index i = start; i < start + size; ++i) {
      for (Eigen::Index j = start; j < start + size; ++j) {
        if (i != j) s(i, j) = open_unit(rng);
      }
    }
    start += size;
  }
  return s;
}

double ramp(std::span<const double> x, double lo, double hi) { return lo + (hi - lo) * x[0]; }

KernelGrid kernel_grid(const ScenarioConfig& cfg) {
  if (!cfg.kernel_file.empty()) return grid_from_samples(read_matrix(cfg.kernel_file));
  return sample_kernel(builtin_kernel(cfg.kernel), cfg.n, cfg.kernel_dim);
}

json complex_json(std::complex<double> z) { return json::array({z.real(), z.imag()}); }

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

template <class T>
json optional_json(const std::optional<T>& value) {
  return value ? json(*value) : json(nullptr);
}

json decay_json(const DecayFit& fit) {
  return {{"t_start", fit.t_start},
          {"t_end", fit.t_end},
          {"slope", fit.slope},
          {"predicted", std::isfinite(fit.predicted) ? json(fit.predicted) : json(nullptr)},
          {"relative_gap", std::isfinite(fit.relative_gap) ? json(fit.relative_gap) : json(nullptr)},
          {"samples", fit.samples},
          {"underflow_truncated", fit.underflow_truncated},
          {"envelope", fit.envelope}};
}

json spectrum_json(const SpectralReport& report) {
  json eig = json::array();
  for (const auto& z : report.eigenvalues) eig.push_back(complex_json(z));
  return {{"s_A2", report.spectral_bound_A2},
          {"lambda2", complex_json(report.lambda2)},
          {"fiedler", optional_json(report.fiedler)},
          {"gershgorin_ok", report.gershgorin_ok},
          {"eigenvalues", eig}};
}

ControlSpec control_from(const ScenarioConfig& cfg) {
  switch (cfg.control) {
    case ControlKind::kNone:
      return NoControl{};
    case ControlKind::kJurdjevicQuinn:
      return JurdjevicQuinn{cfg.alpha};
    case ControlKind::kNonlinear:
      return make_nonlinear(cfg.perturbation, cfg.beta);
  }
  return NoControl{};
}

double gain(const ScenarioConfig& cfg) { return cfg.control == ControlKind::kJurdjevicQuinn ? cfg.alpha : 0.0; }

// Half the largest step the RK4 guard allows.
double auto_dt(const ScenarioConfig& cfg, double norm_inf) {
  if (cfg.dt > 0.0) return cfg.dt;
  const double rate = norm_inf + gain(cfg);
  return rate > 0.0 ? 0.5 / rate : 1.0;
}

// Long enough for var_v to fall by about 1e-24, capped at 2e5 steps.
double auto_t_end(const ScenarioConfig& cfg, double s_A2, double dt) {
  if (cfg.t_end > 0.0) return cfg.t_end;
  const double rate = std::abs(s_A2) + gain(cfg);
  const double wanted = rate > 0.0 ? 28.0 / rate : 100.0 * dt;
  return std::min(wanted, 2e5 * dt);
}

std::size_t step_count(const ScenarioConfig& cfg, double t_end, double dt) {
  if (cfg.steps > 0) return cfg.steps;
  return static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));
}

class Pipeline {
 public:
  Pipeline(const ScenarioConfig& cfg, Mode mode, ScenarioOutcome& out) : cfg_(cfg), mode_(mode), out_(out) {}

  void run() {
    stage_ = "cli";
    json& s = summary();
    s["scenario"] = cfg_.name;
    s["source"] = to_string(cfg_.source);
    s["seed"] = cfg_.seed;
    s["prng"] = kPrngName;
    s["runtime"] = nullptr;
    out_.artifacts.provenance = {cfg_.name, cfg_.seed, kPrngName};

    if (mode_ == Mode::kKernel) {
      run_kernel();
      return;
    }
    const ScenarioInputs inputs = build_inputs(cfg_);
    stage_ = "operator";
    const InteractionMatrix sigma(inputs.sigma);
    s["n"] = sigma.size();

    stage_ = "graph";
    const DiGraphSummary graph = analyze_graph(sigma.entries());
    s["is_strongly_connected"] = graph.is_strongly_connected;
    s["component_count"] = graph.component_count;
    s["closed_class_count"] = graph.closed_classes.size();

    if (graph.is_strongly_connected) {
      run_connected(sigma, inputs.y_in);
    } else if (graph.closed_classes.size() == graph.component_count && mode_ != Mode::kDiscrete) {
      run_clusters(sigma, inputs.y_in, graph);
    } else {
      require_strong_connectivity(graph);
    }
  }

  const std::string& stage() const { return stage_; }

 private:
  json& summary() { return out_.artifacts.summary; }

  void add_weight(const Weight& v, const State& y_in) {
    json& s = summary();
    s["v"] = vector_json(v.values());
    s["v_min"] = v.min();
    s["v_max"] = v.max();
    s["consensus_value"] = weighted_mean(y_in, v);
  }

  void run_connected(const InteractionMatrix& sigma, const State& y_in) {
    json& s = summary();
    stage_ = "operator";
    const Generator gen(sigma);
    const Weight v = compute_weight(gen);
    add_weight(v, y_in);
    s["weight_residual"] = v.residual();

    stage_ = "spectral";
    const SpectralReport report = full_spectrum(gen);
    s["s_A2"] = report.spectral_bound_A2;
    s["spectrum"] = spectrum_json(report);
    s["fitted_slope"] = nullptr;
    s["relative_gap"] = nullptr;

    std::optional<LyapunovMonitor> monitor;
    if (cfg_.lyapunov && sigma.size() >= 2) {
      RestrictedOperator restricted = restrict_A2(gen, v);
      LyapunovCertificate cert = solve_lyapunov(restricted);
      s["lyapunov"] = {{"residual", cert.residual}, {"min_eig_P", cert.min_eig_P}, {"lambda_max", cert.lambda_max}};
      monitor = LyapunovMonitor{std::move(restricted), std::move(cert)};
    }
    if (mode_ == Mode::kAnalyze) return;

    const double dt = auto_dt(cfg_, gen.norm_inf());
    const double t_end = auto_t_end(cfg_, report.spectral_bound_A2, dt);
    s["dt"] = dt;
    s["t_end"] = t_end;
    IntegrationOptions iopts;
    iopts.stride = cfg_.stride;

    const bool continuous = mode_ == Mode::kSimulate && cfg_.method != Method::kDiscrete;
    const bool discrete = mode_ == Mode::kDiscrete || cfg_.method != Method::kRk4;

    if (continuous) {
      stage_ = "dynamics";
      const ControlSpec control = control_from(cfg_);
      s["control"] = {{"kind", to_string(cfg_.control)}, {"alpha", gain(cfg_)}};
      if (cfg_.control == ControlKind::kJurdjevicQuinn) {
        const JqRateCheck jq = jurdjevic_quinn_rate_check(gen, v, cfg_.alpha);
        s["control"]["uncontrolled_bound"] = jq.uncontrolled_bound;
        s["control"]["controlled_bound"] = jq.controlled_bound;
      }
      spdlog::info("{}: RK4 dt={} t_end={}", cfg_.name, dt, t_end);
      out_.artifacts.trajectory =
          integrate_rk4(gen, y_in, dt, t_end, v, control, monitor ? &*monitor : nullptr, iopts);
      const DecayFit fit = fit_or_empty(out_.artifacts.trajectory, decay_options_for(report, gain(cfg_), cfg_.window_fraction));
      s["fitted_slope"] = fit_slope_json(fit);
      s["relative_gap"] = std::isfinite(fit.relative_gap) ? json(fit.relative_gap) : json(nullptr);
      if (fit.samples > 0) s["decay"] = decay_json(fit);
    }

    if (discrete) {
      stage_ = "dynamics";
      const Eigen::MatrixXd gamma = euler_gamma(sigma, dt);
      const double rho = subdominant_radius(gamma, dt);
      const std::size_t steps = step_count(cfg_, t_end, dt);
      spdlog::info("{}: discrete dt={} steps={}", cfg_.name, dt, steps);
      Trajectory traj = iterate_discrete(gamma, dt, y_in, steps, v, iopts);
      DecayFitOptions dopts;
      dopts.window_fraction = cfg_.window_fraction;
      dopts.predicted = rho > 0.0 ? 2.0 * std::log(rho) / dt : std::numeric_limits<double>::quiet_NaN();
      const DecayFit fit = fit_or_empty(traj, dopts);
      json d = {{"dt", dt}, {"steps", steps}, {"rho_star", rho}, {"fitted_slope", fit_slope_json(fit)}};
      if (fit.samples > 0) d["decay"] = decay_json(fit);
      s["discrete"] = d;
      if (!continuous) {
        s["fitted_slope"] = d["fitted_slope"];
        s["relative_gap"] = std::isfinite(fit.relative_gap) ? json(fit.relative_gap) : json(nullptr);
        out_.artifacts.trajectory = std::move(traj);
      } else {
        out_.artifacts.discrete = std::move(traj);
      }
    }
  }

  void run_clusters(const InteractionMatrix& sigma, const State& y_in, const DiGraphSummary& graph) {
    json& s = summary();
    stage_ = "dynamics";
    double norm = 0.0;
    {
      const Generator gen(sigma);
      norm = gen.norm_inf();
    }
    const double dt = auto_dt(cfg_, norm);
    double slowest = 0.0;
    bool have_spectrum = false;
    if (cfg_.t_end <= 0.0) {
      // horizon from the slowest class
      for (std::size_t c = 0; c < graph.component_count; ++c) {
        const auto members = graph.members(c);
        if (members.size() < 2) continue;
        const auto m = static_cast<Eigen::Index>(members.size());
        Eigen::MatrixXd sub(m, m);
        for (Eigen::Index a = 0; a < m; ++a) {
          for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = sigma(members[a], members[b]);
        }
        const double bound = full_spectrum(Generator(InteractionMatrix(sub))).spectral_bound_A2;
        slowest = have_spectrum ? std::max(slowest, bound) : bound;
        have_spectrum = true;
      }
    }
    const double t_end = auto_t_end(cfg_, have_spectrum ? slowest : 0.0, dt);
    s["dt"] = dt;
    s["t_end"] = t_end;

    IntegrationOptions iopts;
    iopts.stride = cfg_.stride;
    ClusterRun run;
    // analyze only needs the class weights and spectra: one step suffices
    run = run_per_cluster(sigma, y_in, dt, mode_ == Mode::kAnalyze ? dt : t_end, control_from(cfg_), iopts);
    add_weight(run.global_weight, y_in);

    json classes = json::array();
    std::optional<double> s_max;
    for (const ClassRun& cls : run.classes) {
      json c = {{"members", cls.members},
                {"v", vector_json(cls.weight.values())},
                {"consensus_value", cls.consensus},
                {"s_A2", nullptr},
                {"fitted_slope", nullptr}};
      if (cls.spectrum) {
        c["s_A2"] = cls.spectrum->spectral_bound_A2;
        s_max = s_max ? std::max(*s_max, cls.spectrum->spectral_bound_A2) : cls.spectrum->spectral_bound_A2;
      }
      if (cls.decay && mode_ != Mode::kAnalyze) {
        c["fitted_slope"] = cls.decay->slope;
        c["decay"] = decay_json(*cls.decay);
      }
      if (!cls.trajectory.empty()) {
        c["weighted_mean_final"] = cls.trajectory.monitors.back().weighted_mean;
      }
      classes.push_back(c);
    }
    s["classes"] = classes;
    s["s_A2"] = optional_json(s_max);
    s["fitted_slope"] = nullptr;
    s["relative_gap"] = nullptr;
    if (mode_ != Mode::kAnalyze) out_.artifacts.trajectory = std::move(run.global);
  }

  void run_kernel() {
    json& s = summary();
    stage_ = "kernel";
    if (cfg_.source != SourceKind::kKernel) throw ConfigError("the kernel subcommand needs [scenario] source = kernel");
    const bool sampled = !cfg_.kernel_file.empty();
    const KernelGrid grid = kernel_grid(cfg_);
    const InteractionMatrix sigma = discretize(grid);
    s["n"] = sigma.size();
    s["kernel"] = {{"name", sampled ? cfg_.kernel_file.string() : cfg_.kernel},
                   {"dim", grid.dim},
                   {"delta_hat", grid.delta_hat}};

    const ConstantSReport cs = constant_S_check(grid);
    s["constant_S"] = {{"applicable", cs.applicable},
                       {"passed", cs.passed},
                       {"delta", cs.delta},
                       {"max_deviation", cs.max_deviation},
                       {"note", cs.note}};

    const ScenarioInputs inputs = build_inputs(cfg_);
    s["is_strongly_connected"] = true;
    s["component_count"] = 1;
    stage_ = "operator";
    const Generator gen(sigma);
    const Weight v = compute_weight(gen);
    add_weight(v, inputs.y_in);
    stage_ = "spectral";
    const SpectralReport report = full_spectrum(gen);
    s["s_A2"] = report.spectral_bound_A2;
    s["spectrum"] = spectrum_json(report);
    s["fitted_slope"] = nullptr;
    s["relative_gap"] = nullptr;

    if (!cfg_.kernel_sizes.empty() && sampled) {
      spdlog::warn("{}: refinement study needs a builtin kernel; skipped for sampled input", cfg_.name);
    } else if (!cfg_.kernel_sizes.empty()) {
      stage_ = "kernel";
      const Kernel kernel = builtin_kernel(cfg_.kernel);
      const double lo = cfg_.lo, hi = cfg_.hi;
      const auto rows = refinement_study(kernel, cfg_.kernel_sizes, [lo, hi](std::span<const double> x) {
        return ramp(x, lo, hi);
      }, cfg_.kernel_dim);
      json table = json::array();
      for (const RefinementEntry& e : rows) {
        table.push_back({{"n", e.n}, {"consensus", e.consensus}, {"s_A2", e.s_A2}, {"delta_hat", e.delta_hat}});
      }
      s["refinement"] = table;
    }
  }

  static DecayFit fit_or_empty(const Trajectory& traj, const DecayFitOptions& opts) {
    try {
      return fit_decay(traj, opts);
    } catch (const PreconditionError& e) {
      spdlog::warn("decay fit skipped: {}", e.what());
      DecayFit none;
      none.predicted = opts.predicted;
      return none;
    }
  }

  static json fit_slope_json(const DecayFit& fit) { return fit.samples > 0 ? json(fit.slope) : json(nullptr); }

  const ScenarioConfig& cfg_;
  Mode mode_;
  ScenarioOutcome& out_;
  std::string stage_;
};

}  // namespace

Eigen::MatrixXd fully_connected_sigma(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return fully_connected_from(n, rng);
}

Eigen::MatrixXd ring_sigma(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ring_from(n, rng);
}

Eigen::MatrixXd blocks_sigma(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return blocks_from(n, k, rng);
}

ScenarioInputs build_inputs(const ScenarioConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  ScenarioInputs in;
  Eigen::MatrixXd nodes;
  switch (cfg.source) {
    case SourceKind::kMatrixFile:
      in.sigma = read_matrix(cfg.matrix_file);
      break;
    case SourceKind::kFullyConnected:
      in.sigma = fully_connected_from(cfg.n, rng);
      break;
    case SourceKind::kRing:
      in.sigma = ring_from(cfg.n, rng);
      break;
    case SourceKind::kBlocks:
      in.sigma = blocks_from(cfg.n, cfg.blocks, rng);
      break;
    case SourceKind::kKernel: {
      const KernelGrid grid = kernel_grid(cfg);
      in.sigma = discretize(grid).entries();
      nodes = grid.nodes;
      break;
    }
  }
  const auto n = in.sigma.rows();
  switch (cfg.initial) {
    case InitialKind::kUniform:
      in.y_in.resize(n);
      if (cfg.source == SourceKind::kKernel) {
        // a profile on the grid, not random draws
        for (Eigen::Index i = 0; i < n; ++i) {
          const double x0 = nodes(i, 0);
          in.y_in(i) = ramp(std::span<const double>(&x0, 1), cfg.lo, cfg.hi);
        }
      } else {
        std::uniform_real_distribution<double> dist(cfg.lo, cfg.hi);
        for (Eigen::Index i = 0; i < n; ++i) in.y_in(i) = dist(rng);
      }
      break;
    case InitialKind::kFile:
      in.y_in = read_vector(cfg.initial_file);
      break;
    case InitialKind::kList:
      in.y_in = Eigen::Map<const Eigen::VectorXd>(cfg.initial_values.data(),
                                                  static_cast<Eigen::Index>(cfg.initial_values.size()));
      break;
  }
  if (in.y_in.size() != n) {
    throw ConfigError("initial state has " + std::to_string(in.y_in.size()) + " entries but the system has " +
                      std::to_string(n) + " agents");
  }
  return in;
}

ScenarioOutcome run_scenario(const ScenarioConfig& config, Mode mode,
                             const std::optional<std::filesystem::path>& out_dir) {
  ScenarioOutcome out;
  Pipeline pipeline(config, mode, out);
  const auto start = std::chrono::steady_clock::now();
  try {
    pipeline.run();
    if (config.timing) {
      out.artifacts.summary["runtime"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (out_dir) {
      out.stage = "cli";
      emit_outputs(out.artifacts, *out_dir, config.formats);
    }
    out.stage.clear();
  } catch (const std::exception& e) {
    out.exit_code = exit_code_for(e);
    out.stage = out.stage.empty() ? pipeline.stage() : out.stage;
    out.message = e.what();
    spdlog::error("{} [{}]: {}", config.name, out.stage, out.message);
  }
  return out;
}

std::vector<ScenarioOutcome> run_batch(const std::vector<BatchJob>& jobs, Mode mode, unsigned threads) {
  std::vector<ScenarioOutcome> outcomes(jobs.size());
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, jobs.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      outcomes[k] = run_scenario(jobs[k].config, mode, jobs[k].out_dir);
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  return outcomes;
}

}  // namespace consensus::app
