#include "consensus/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace consensus {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

struct InvariantChecker {
  double mean0 = 0.0;
  double var0 = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double overshoot_tol = 0.0;
  double var_floor = 0.0;
  double prev_var = 0.0;

  InvariantChecker(const State& y_in, const MonitorRecord& first) {
    mean0 = first.weighted_mean;
    var0 = first.var_v;
    prev_var = first.var_v;
    lo = y_in.minCoeff();
    hi = y_in.maxCoeff();
    const double scale = std::max(std::abs(lo), std::abs(hi));
    // Explicit slack: RK4 satisfies the maximum principle only up to rounding.
    overshoot_tol = 1e-8 * (hi - lo) + 16.0 * kEps * scale;
    var_floor = 1e-12 * var0 + static_cast<double>(y_in.size()) * (16.0 * kEps * scale) * (16.0 * kEps * scale);
  }

  void check(const MonitorRecord& rec, std::size_t step) {
    if (!std::isfinite(rec.weighted_mean) || !std::isfinite(rec.var_v)) {
      throw IntegrityError("trajectory became non-finite", step);
    }
    if (std::abs(rec.weighted_mean - mean0) > 1e-10 * (1.0 + std::abs(mean0))) {
      std::ostringstream os;
      os << "weighted mean drifted from " << mean0 << " to " << rec.weighted_mean;
      throw IntegrityError(os.str(), step);
    }
    if (rec.var_v > prev_var + var_floor) {
      std::ostringstream os;
      os << "weighted variance increased from " << prev_var << " to " << rec.var_v;
      throw IntegrityError(os.str(), step);
    }
    if (rec.min_state < lo - overshoot_tol || rec.max_state > hi + overshoot_tol) {
      std::ostringstream os;
      os << "maximum principle violated: state range [" << rec.min_state << ", " << rec.max_state
         << "] leaves [" << lo << ", " << hi << "]";
      throw IntegrityError(os.str(), step);
    }
    prev_var = rec.var_v;
  }
};

MonitorRecord observe(const State& y, const Weight& v, const LyapunovMonitor* lyapunov) {
  MonitorRecord rec;
  rec.weighted_mean = v.values().dot(y);
  rec.var_v = (v.values().array() * (y.array() - rec.weighted_mean).square()).sum();
  rec.min_state = y.minCoeff();
  rec.max_state = y.maxCoeff();
  if (lyapunov != nullptr) {
    const Eigen::VectorXd c = lyapunov->restricted.coordinates(y);
    rec.var_P = c.dot(lyapunov->certificate.P * c);
  }
  return rec;
}

// sum_j sigma_ij (y_j - y_i), evaluated in difference form so that constant
// states are exact equilibria. sigma_t holds sigma transposed (rows contiguous).
void consensus_rhs(const Eigen::MatrixXd& sigma_t, const State& y, State& out) {
  const Eigen::Index n = y.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    out(i) = (sigma_t.col(i).array() * (y.array() - y(i))).sum();
  }
}

double control_gain(const ControlSpec& control) {
  if (const auto* jq = std::get_if<JurdjevicQuinn>(&control)) return jq->alpha;
  return 0.0;
}

void check_perturbation(const NonlinearPerturbation& pert, const State& y, const State& fy, const Weight& v,
                        std::size_t step) {
  const double along_e = v.values().dot(fy);
  const double scale = std::max(1.0, fy.cwiseAbs().maxCoeff());
  if (std::abs(along_e) > 1e-10 * scale) {
    throw IntegrityError("perturbation '" + pert.name + "' leaves im A (<e, f(y)>_v != 0)", step);
  }
  const double dissipation = (v.values().array() * y.array() * fy.array()).sum();
  if (dissipation > 1e-12) {
    throw IntegrityError("perturbation '" + pert.name + "' is not dissipative (<y, f(y)>_v > 0)", step);
  }
}

}  // namespace

NonlinearPerturbation make_nonlinear(std::string_view name, double beta) {
  if (name == "zero") {
    return {"zero", [](const State& y, const Weight&) -> State { return State::Zero(y.size()); }};
  }
  if (name == "cubic_shrink") {
    if (!(beta > 0.0)) throw ConfigError("cubic_shrink: beta must be positive");
    return {"cubic_shrink", [beta](const State& y, const Weight& v) -> State {
              const State z = project_pi(y, v);
              const double norm2 = (v.values().array() * z.array().square()).sum();
              return -beta * norm2 * z;
            }};
  }
  throw ConfigError("unknown nonlinear perturbation '" + std::string(name) + "' (known: zero, cubic_shrink)");
}

Trajectory integrate_rk4(const Generator& gen, const State& y_in, double dt, double t_end, const Weight& v,
                         const ControlSpec& control, const LyapunovMonitor* lyapunov,
                         const IntegrationOptions& options) {
  const Eigen::Index n = static_cast<Eigen::Index>(gen.size());
  if (y_in.size() != n || static_cast<Eigen::Index>(v.size()) != n) {
    throw DimensionError("integrate_rk4: state, weight and generator sizes differ");
  }
  if (!(dt > 0.0) || !(t_end > 0.0) || !std::isfinite(dt) || !std::isfinite(t_end)) {
    throw ConfigError("integrate_rk4: dt and t_end must be positive and finite");
  }
  if (!y_in.allFinite()) throw ValidationError("integrate_rk4: initial state is not finite");
  const double alpha = control_gain(control);
  if (alpha < 0.0) throw ConfigError("integrate_rk4: control gain alpha must be nonnegative");
  const double guard = dt * (gen.norm_inf() + alpha);
  if (guard > 1.0 + 1e-12) {
    std::ostringstream os;
    os << "integrate_rk4: dt (||A||_inf + alpha) = " << guard << " > 1; use dt <= "
       << 1.0 / (gen.norm_inf() + alpha);
    throw ConfigError(os.str());
  }
  const std::size_t stride = std::max<std::size_t>(1, options.stride);

  const Eigen::MatrixXd sigma_t = gen.interactions().transpose();
  const auto* pert = std::get_if<NonlinearPerturbation>(&control);
  if (pert != nullptr && !pert->f) throw ConfigError("integrate_rk4: nonlinear perturbation has no function");
  const Eigen::VectorXd& w = v.values();

  auto rhs = [&](const State& y, State& out) {
    consensus_rhs(sigma_t, y, out);
    if (alpha > 0.0) out.array() -= alpha * (y.array() - w.dot(y));
    if (pert != nullptr) out += pert->f(y, v);
  };

  const auto steps = static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));

  Trajectory traj;
  traj.times.reserve(steps / stride + 2);
  traj.states.reserve(steps / stride + 2);
  traj.monitors.reserve(steps / stride + 2);

  State y = y_in;
  State k1(n), k2(n), k3(n), k4(n), tmp(n);
  MonitorRecord rec = observe(y, v, lyapunov);
  InvariantChecker checker(y_in, rec);
  traj.times.push_back(0.0);
  traj.states.push_back(y);
  traj.monitors.push_back(rec);

  for (std::size_t k = 1; k <= steps; ++k) {
    const double t0 = static_cast<double>(k - 1) * dt;
    const double h = (k == steps) ? t_end - t0 : dt;
    if (pert != nullptr && options.check_invariants) check_perturbation(*pert, y, pert->f(y, v), v, k - 1);

    rhs(y, k1);
    tmp = y + 0.5 * h * k1;
    rhs(tmp, k2);
    tmp = y + 0.5 * h * k2;
    rhs(tmp, k3);
    tmp = y + h * k3;
    rhs(tmp, k4);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    rec = observe(y, v, lyapunov);
    if (options.check_invariants) checker.check(rec, k);
    if (k % stride == 0 || k == steps) {
      traj.times.push_back(k == steps ? t_end : static_cast<double>(k) * dt);
      traj.states.push_back(y);
      traj.monitors.push_back(rec);
    }
  }
  return traj;
}

Eigen::MatrixXd euler_gamma(const InteractionMatrix& sigma, double dt) {
  if (!(dt > 0.0)) throw ConfigError("euler_gamma: dt must be positive");
  Eigen::MatrixXd gamma = sigma.entries();
  gamma.diagonal() = (1.0 / dt) - gamma.rowwise().sum().array();
  return gamma;
}

Generator discrete_generator(const Eigen::MatrixXd& gamma) {
  Eigen::MatrixXd off = gamma;
  off.diagonal().setZero();
  return Generator(InteractionMatrix(std::move(off)));
}

double subdominant_radius(const Eigen::MatrixXd& gamma, double dt) {
  const auto ev = dense_eigenvalues(dt * gamma);
  if (ev.size() < 2) return 0.0;
  std::size_t unit = 0;
  for (std::size_t k = 1; k < ev.size(); ++k) {
    if (std::abs(ev[k] - 1.0) < std::abs(ev[unit] - 1.0)) unit = k;
  }
  double rho = 0.0;
  for (std::size_t k = 0; k < ev.size(); ++k) {
    if (k != unit) rho = std::max(rho, std::abs(ev[k]));
  }
  return rho;
}

Trajectory iterate_discrete(const Eigen::MatrixXd& gamma, double dt, const State& y_in, std::size_t steps,
                            const Weight& v, const IntegrationOptions& options) {
  const Eigen::Index n = gamma.rows();
  if (gamma.cols() != n) throw DimensionError("iterate_discrete: Gamma must be square");
  if (y_in.size() != n || static_cast<Eigen::Index>(v.size()) != n) {
    throw DimensionError("iterate_discrete: state, weight and Gamma sizes differ");
  }
  if (!(dt > 0.0)) throw ConfigError("iterate_discrete: dt must be positive");

  const Eigen::MatrixXd step_matrix = dt * gamma;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!std::isfinite(step_matrix(i, j)) || step_matrix(i, j) < -1e-12) {
        std::ostringstream os;
        os << "iterate_discrete: dt Gamma(" << i << "," << j << ") = " << step_matrix(i, j)
           << " is negative; the stability condition max_i(sum_{j!=i} gamma_ij) dt <= 1 fails";
        throw ConfigError(os.str());
      }
    }
    const double row = step_matrix.row(i).sum();
    if (std::abs(row - 1.0) > 1e-10) {
      std::ostringstream os;
      os << "iterate_discrete: row " << i << " of dt Gamma sums to " << row << ", expected 1";
      throw ConfigError(os.str());
    }
  }
  const std::size_t stride = std::max<std::size_t>(1, options.stride);

  // y_i + sum_{j != i} P_ij (y_j - y_i), identical to P y for stochastic P.
  Eigen::MatrixXd off_t = step_matrix.transpose();
  off_t.diagonal().setZero();

  Trajectory traj;
  State y = y_in;
  State next(n);
  MonitorRecord rec = observe(y, v, nullptr);
  InvariantChecker checker(y_in, rec);
  traj.times.push_back(0.0);
  traj.states.push_back(y);
  traj.monitors.push_back(rec);
  for (std::size_t k = 1; k <= steps; ++k) {
    consensus_rhs(off_t, y, next);
    y += next;
    rec = observe(y, v, nullptr);
    if (options.check_invariants) checker.check(rec, k);
    if (k % stride == 0 || k == steps) {
      traj.times.push_back(static_cast<double>(k) * dt);
      traj.states.push_back(y);
      traj.monitors.push_back(rec);
    }
  }
  return traj;
}

namespace {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LineFit least_squares(const std::vector<double>& t, const std::vector<double>& y) {
  const double m = static_cast<double>(t.size());
  double tm = 0.0, ym = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    tm += t[k];
    ym += y[k];
  }
  tm /= m;
  ym /= m;
  double stt = 0.0, sty = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    stt += (t[k] - tm) * (t[k] - tm);
    sty += (t[k] - tm) * (y[k] - ym);
  }
  LineFit fit;
  fit.slope = stt > 0.0 ? sty / stt : 0.0;
  fit.intercept = ym - fit.slope * tm;
  return fit;
}

}  // namespace

DecayFit fit_decay(const Trajectory& traj, const DecayFitOptions& options) {
  if (!(options.window_fraction > 0.0 && options.window_fraction <= 1.0)) {
    throw PreconditionError("fit_decay: window_fraction must lie in (0, 1]");
  }
  if (traj.monitors.size() < 2) throw PreconditionError("fit_decay: need at least two samples");
  const double var0 = traj.monitors.front().var_v;
  if (!(var0 > 0.0)) throw PreconditionError("fit_decay: var_v(0) is not positive");

  const double threshold = 1e2 * kEps * var0;
  std::size_t usable = 0;
  while (usable < traj.monitors.size() && traj.monitors[usable].var_v > threshold) ++usable;

  DecayFit fit;
  fit.underflow_truncated = usable < traj.monitors.size();
  if (usable < 2) throw PreconditionError("fit_decay: var_v underflows before two samples are available");

  const auto wanted = static_cast<std::size_t>(std::ceil(options.window_fraction * static_cast<double>(usable)));
  const std::size_t count = std::clamp<std::size_t>(wanted, 2, usable);
  const std::size_t first = usable - count;

  std::vector<double> t, lv;
  t.reserve(count);
  lv.reserve(count);
  for (std::size_t k = first; k < usable; ++k) {
    t.push_back(traj.times[k]);
    lv.push_back(std::log(traj.monitors[k].var_v));
  }
  LineFit line = least_squares(t, lv);

  if (options.oscillatory && count >= 5) {
    // The oscillation of log var_v is periodic around its trend; its local
    // maxima sit at a fixed phase, so a line through them has the envelope slope.
    std::vector<double> pt, pv;
    for (std::size_t k = 1; k + 1 < count; ++k) {
      const double r_prev = lv[k - 1] - (line.intercept + line.slope * t[k - 1]);
      const double r = lv[k] - (line.intercept + line.slope * t[k]);
      const double r_next = lv[k + 1] - (line.intercept + line.slope * t[k + 1]);
      if (r >= r_prev && r > r_next) {
        pt.push_back(t[k]);
        pv.push_back(lv[k]);
      }
    }
    if (pt.size() >= 3) {
      line = least_squares(pt, pv);
      fit.envelope = true;
    }
  }

  fit.t_start = t.front();
  fit.t_end = t.back();
  fit.slope = line.slope;
  fit.intercept = line.intercept;
  fit.samples = count;
  fit.predicted = options.predicted;
  if (std::isfinite(options.predicted) && options.predicted != 0.0) {
    fit.relative_gap = std::abs(fit.slope - options.predicted) / std::abs(options.predicted);
  }
  return fit;
}

DecayFitOptions decay_options_for(const SpectralReport& report, double alpha, double window_fraction) {
  DecayFitOptions opts;
  opts.window_fraction = window_fraction;
  opts.predicted = 2.0 * (report.spectral_bound_A2 - alpha);
  opts.oscillatory = std::abs(report.lambda2.imag()) > 1e-9 * std::abs(report.lambda2);
  return opts;
}

JqRateCheck jurdjevic_quinn_rate_check(const Generator& gen, const Weight& v, double alpha) {
  if (alpha < 0.0) throw PreconditionError("jurdjevic_quinn_rate_check: alpha must be nonnegative");
  const RestrictedOperator restricted = restrict_A2(gen, v);
  const Eigen::Index m = restricted.A2.rows();
  JqRateCheck out;
  out.uncontrolled_bound = spectral_abscissa(restricted.A2);
  out.controlled_bound = spectral_abscissa(restricted.A2 - alpha * Eigen::MatrixXd::Identity(m, m));
  return out;
}

ClusterRun run_per_cluster(const InteractionMatrix& sigma, const State& y_in, double dt, double t_end,
                           const ControlSpec& control, const IntegrationOptions& options) {
  const auto n = static_cast<Eigen::Index>(sigma.size());
  if (y_in.size() != n) throw DimensionError("run_per_cluster: state and interaction matrix sizes differ");

  ClusterRun run;
  run.graph = analyze_graph(sigma.entries());
  if (run.graph.closed_classes.size() != run.graph.component_count) {
    std::ostringstream os;
    os << "run_per_cluster: " << run.graph.component_count - run.graph.closed_classes.size()
       << " component(s) have arcs into other components, so classes are not autonomous; run the full system";
    throw PreconditionError(os.str());
  }

  const double alpha = control_gain(control);
  Eigen::VectorXd global_w(n);
  for (std::size_t c = 0; c < run.graph.component_count; ++c) {
    ClassRun cls{run.graph.members(c), Weight::uniform(1), 0.0, std::nullopt, std::nullopt, {}};
    const auto m = static_cast<Eigen::Index>(cls.members.size());
    Eigen::MatrixXd sub(m, m);
    State y_sub(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      y_sub(a) = y_in(static_cast<Eigen::Index>(cls.members[static_cast<std::size_t>(a)]));
      for (Eigen::Index b = 0; b < m; ++b) {
        sub(a, b) = sigma(cls.members[static_cast<std::size_t>(a)], cls.members[static_cast<std::size_t>(b)]);
      }
    }
    const Generator gen(InteractionMatrix(std::move(sub)));
    cls.weight = compute_weight(gen);
    cls.consensus = weighted_mean(y_sub, cls.weight);
    cls.trajectory = integrate_rk4(gen, y_sub, dt, t_end, cls.weight, control, nullptr, options);
    if (m >= 2) {
      cls.spectrum = full_spectrum(gen);
      try {
        cls.decay = fit_decay(cls.trajectory, decay_options_for(*cls.spectrum, alpha));
      } catch (const PreconditionError&) {
        // consensus already reached at t = 0
      }
    }
    for (Eigen::Index a = 0; a < m; ++a) {
      global_w(static_cast<Eigen::Index>(cls.members[static_cast<std::size_t>(a)])) =
          cls.weight[static_cast<std::size_t>(a)] * static_cast<double>(m) / static_cast<double>(n);
    }
    run.classes.push_back(std::move(cls));
  }
  global_w /= global_w.sum();
  run.global_weight = Weight(global_w);

  const Trajectory& ref = run.classes.front().trajectory;
  run.global.times = ref.times;
  run.global.states.assign(ref.size(), State(n));
  for (const ClassRun& cls : run.classes) {
    for (std::size_t k = 0; k < ref.size(); ++k) {
      for (std::size_t a = 0; a < cls.members.size(); ++a) {
        run.global.states[k](static_cast<Eigen::Index>(cls.members[a])) =
            cls.trajectory.states[k](static_cast<Eigen::Index>(a));
      }
    }
  }
  run.global.monitors.reserve(ref.size());
  for (const State& y : run.global.states) run.global.monitors.push_back(observe(y, run.global_weight, nullptr));
  return run;
}

}  // namespace consensus
