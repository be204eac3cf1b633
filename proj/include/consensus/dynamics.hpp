#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "consensus/graph.hpp"
#include "consensus/operator.hpp"
#include "consensus/spectral.hpp"

namespace consensus {

struct MonitorRecord {
  double weighted_mean = 0.0;
  double var_v = 0.0;
  std::optional<double> var_P;
  double min_state = 0.0;
  double max_state = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<MonitorRecord> monitors;

  std::size_t size() const noexcept { return times.size(); }
  bool empty() const noexcept { return times.empty(); }
  std::size_t agents() const noexcept { return states.empty() ? 0 : static_cast<std::size_t>(states.front().size()); }
};

// ---------------------------------------------------------------------------
// Controls

struct NoControl {};

// u = -alpha pi y. Shifts the restricted spectrum by -alpha.
struct JurdjevicQuinn {
  double alpha = 0.0;
};

// ydot = A y + f(y). f must keep <e, f(y)>_v = 0 and <y, f(y)>_v <= 0; both
// are asserted at every step.
struct NonlinearPerturbation {
  std::string name;
  std::function<State(const State&, const Weight&)> f;
};

using ControlSpec = std::variant<NoControl, JurdjevicQuinn, NonlinearPerturbation>;

// Registry: "zero" (f = 0) and "cubic_shrink" (f = -beta ||pi y||_v^2 pi y).
NonlinearPerturbation make_nonlinear(std::string_view name, double beta = 1.0);

// ---------------------------------------------------------------------------
// Continuous time

// Var_P monitoring; both members must come from the same generator and weight.
struct LyapunovMonitor {
  RestrictedOperator restricted;
  LyapunovCertificate certificate;
};

struct IntegrationOptions {
  bool check_invariants = true;
  // Store every k-th step (the final step is always stored). Monitors are
  // checked at every step regardless.
  std::size_t stride = 1;
};

// Classical RK4 on ydot = A y + u(y) with fixed step dt up to t_end.
// Requires dt (||A||_inf + alpha) <= 1. Throws ConfigError on the step guard
// and IntegrityError when a monitored invariant breaks.
Trajectory integrate_rk4(const Generator& gen, const State& y_in, double dt, double t_end, const Weight& v,
                         const ControlSpec& control = NoControl{}, const LyapunovMonitor* lyapunov = nullptr,
                         const IntegrationOptions& options = {});

// ---------------------------------------------------------------------------
// Discrete time

// Gamma for which dt Gamma = I + dt A, i.e. explicit Euler on sigma.
Eigen::MatrixXd euler_gamma(const InteractionMatrix& sigma, double dt);

// Generator built from the off-diagonal part of Gamma.
Generator discrete_generator(const Eigen::MatrixXd& gamma);

// rho* = max |mu| over the spectrum of dt Gamma with the unit eigenvalue removed.
double subdominant_radius(const Eigen::MatrixXd& gamma, double dt);

// y^{n+1} = (dt Gamma) y^n. dt Gamma must be row-stochastic (ConfigError).
Trajectory iterate_discrete(const Eigen::MatrixXd& gamma, double dt, const State& y_in, std::size_t steps,
                            const Weight& v, const IntegrationOptions& options = {});

// ---------------------------------------------------------------------------
// Decay fitting

struct DecayFitOptions {
  double window_fraction = 0.5;
  // 2 s(A2) (or 2 (s(A2) - alpha) under control); NaN when unknown.
  double predicted = std::numeric_limits<double>::quiet_NaN();
  // lambda2 has a nonzero imaginary part: fit the upper envelope of log var_v.
  bool oscillatory = false;
};

struct DecayFit {
  double t_start = 0.0;
  double t_end = 0.0;
  double slope = 0.0;  // d/dt log var_v
  double intercept = 0.0;
  double predicted = std::numeric_limits<double>::quiet_NaN();
  double relative_gap = std::numeric_limits<double>::quiet_NaN();
  std::size_t samples = 0;
  bool underflow_truncated = false;
  bool envelope = false;
};

// Least-squares slope of log var_v over the trailing window of the samples
// with var_v > 1e2 eps var_v(0). Throws PreconditionError when fewer than two
// usable samples remain.
DecayFit fit_decay(const Trajectory& traj, const DecayFitOptions& options = {});

DecayFitOptions decay_options_for(const SpectralReport& report, double alpha = 0.0, double window_fraction = 0.5);

struct JqRateCheck {
  double uncontrolled_bound = 0.0;
  double controlled_bound = 0.0;
};

// Spectral bound of A2 - alpha I against s(A2).
JqRateCheck jurdjevic_quinn_rate_check(const Generator& gen, const Weight& v, double alpha);

// ---------------------------------------------------------------------------
// Clusters

struct ClassRun {
  std::vector<std::size_t> members;
  Weight weight;
  double consensus = 0.0;
  std::optional<SpectralReport> spectrum;  // empty for single-agent classes
  std::optional<DecayFit> decay;
  Trajectory trajectory;
};

struct ClusterRun {
  DiGraphSummary graph;
  std::vector<ClassRun> classes;
  // Concatenation of the class trajectories. Its monitors use the weight that
  // mixes class weights in proportion to class size.
  Trajectory global;
  Weight global_weight = Weight::uniform(1);
};

// Runs each closed class as an autonomous subsystem. Throws PreconditionError
// when some arc joins two different classes.
ClusterRun run_per_cluster(const InteractionMatrix& sigma, const State& y_in, double dt, double t_end,
                           const ControlSpec& control = NoControl{}, const IntegrationOptions& options = {});

}  // namespace consensus
