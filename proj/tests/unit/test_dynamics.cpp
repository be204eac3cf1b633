#include <doctest.h>

#include <cmath>
#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "consensus/dynamics.hpp"
#include "test_support.hpp"

using namespace consensus;
using namespace consensus::testing;

namespace {

Eigen::MatrixXd two_sigma(double a, double b) {
  Eigen::MatrixXd s(2, 2);
  s << 0.0, a, b, 0.0;
  return s;
}

double safe_dt(const Generator& g, double alpha = 0.0) { return 0.5 / (g.norm_inf() + alpha); }

Eigen::MatrixXd blocks(const std::vector<Eigen::Index>& sizes, std::mt19937_64& rng) {
  Eigen::Index n = 0;
  for (auto s : sizes) n += s;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  Eigen::Index start = 0;
  for (auto s : sizes) {
    out.block(start, start, s, s) = random_dense(static_cast<std::size_t>(s), rng);
    start += s;
  }
  return out;
}

}  // namespace

TEST_SUITE("dynamics") {
  TEST_CASE("constant state is an exact equilibrium") {
    std::mt19937_64 rng(41);
    const Generator g(InteractionMatrix(random_connected(10, rng)));
    const Weight v = compute_weight(g);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 0.123456789);
    const Trajectory t = integrate_rk4(g, y, safe_dt(g), 2.0, v);
    for (const auto& s : t.states) CHECK((s - y).cwiseAbs().maxCoeff() == 0.0);
    for (const auto& m : t.monitors) CHECK(m.var_v == 0.0);
  }

  TEST_CASE("2x2 trajectory matches the closed form") {
    const double a = 0.3, b = 0.7;
    const Generator g{InteractionMatrix(two_sigma(a, b))};
    const Weight v = compute_weight(g);
    const Eigen::Vector2d y0(1.0, 0.0);
    const double dt = 0.01;
    const Trajectory t = integrate_rk4(g, y0, dt, 5.0, v);
    const double mean = b / (a + b);
    for (std::size_t k = 0; k < t.size(); ++k) {
      const Eigen::Vector2d exact = mean * Eigen::Vector2d::Ones() + std::exp(-(a + b) * t.times[k]) * (y0 - mean * Eigen::Vector2d::Ones());
      CHECK((t.states[k] - exact).cwiseAbs().maxCoeff() <= 1e-9);
      CHECK(t.monitors[k].weighted_mean == doctest::Approx(mean).epsilon(1e-13));
    }
    CHECK(t.times.back() == 5.0);
  }

  TEST_CASE("trajectory invariants on random systems") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 2 + rng() % 30;
      const Generator g(InteractionMatrix(random_connected(n, rng, 0.2)));
      const Weight v = compute_weight(g);
      const Eigen::VectorXd y0 = random_state(n, rng, -2.0, 3.0);
      const Trajectory t = integrate_rk4(g, y0, safe_dt(g), 10.0, v);
      const double m0 = weighted_mean(y0, v);
      const double range = y0.maxCoeff() - y0.minCoeff();
      for (std::size_t k = 1; k < t.size(); ++k) {
        CHECK(std::abs(t.monitors[k].weighted_mean - m0) <= 1e-10 * (1.0 + std::abs(m0)));
        CHECK(t.monitors[k].var_v <= t.monitors[k - 1].var_v + 1e-12 * t.monitors[0].var_v);
        CHECK(t.monitors[k].min_state >= y0.minCoeff() - 1e-8 * range);
        CHECK(t.monitors[k].max_state <= y0.maxCoeff() + 1e-8 * range);
      }
    }
  }

  TEST_CASE("stride keeps the final sample") {
    const Generator g{InteractionMatrix(two_sigma(1.0, 2.0))};
    IntegrationOptions opts;
    opts.stride = 7;
    const Trajectory t = integrate_rk4(g, Eigen::Vector2d(0.0, 1.0), 0.1, 2.05, compute_weight(g), NoControl{}, nullptr, opts);
    CHECK(t.times.front() == 0.0);
    CHECK(t.times.back() == 2.05);
    CHECK(t.size() == 4);  // 0, step 7, step 14, final step 21
  }

  TEST_CASE("step guard") {
    const Generator g{InteractionMatrix(two_sigma(1.0, 3.0))};
    const Weight v = compute_weight(g);
    CHECK_THROWS_AS(integrate_rk4(g, Eigen::Vector2d(0, 1), 0.2, 1.0, v), ConfigError);
    CHECK_NOTHROW(integrate_rk4(g, Eigen::Vector2d(0, 1), 1.0 / 6.0, 1.0, v));
    CHECK_THROWS_AS(integrate_rk4(g, Eigen::Vector2d(0, 1), 1.0 / 6.0, 1.0, v, JurdjevicQuinn{1.0}), ConfigError);
    CHECK_THROWS_AS(integrate_rk4(g, Eigen::Vector2d(0, 1), -0.1, 1.0, v), ConfigError);
    CHECK_THROWS_AS(integrate_rk4(g, Eigen::Vector3d(0, 1, 2), 0.1, 1.0, v), DimensionError);
  }

  TEST_CASE("Jurdjevic-Quinn control accelerates decay and stays in im A") {
    std::mt19937_64 rng(43);
    const std::size_t n = 8;
    const Generator g(InteractionMatrix(random_connected(n, rng, 0.3)));
    const Weight v = compute_weight(g);
    const Eigen::VectorXd y0 = random_state(n, rng);
    const double alpha = 1.5;
    const Eigen::VectorXd u = -alpha * project_pi(y0, v);
    CHECK(std::abs(weighted_mean(u, v)) <= 1e-10);
    const double dt = 0.05 / (g.norm_inf() + alpha);
    const Trajectory free = integrate_rk4(g, y0, dt, 3.0, v);
    const Trajectory ctl = integrate_rk4(g, y0, dt, 3.0, v, JurdjevicQuinn{alpha});
    CHECK(ctl.monitors.back().weighted_mean == doctest::Approx(free.monitors.back().weighted_mean).epsilon(1e-12));
    // exact: pi y decays with an extra factor exp(-alpha t)
    const Eigen::VectorXd expected = project_pi(free.states.back(), v) * std::exp(-alpha * 3.0);
    CHECK((project_pi(ctl.states.back(), v) - expected).norm() <= 1e-8);
  }

  TEST_CASE("jurdjevic_quinn_rate_check") {
    const Generator g{InteractionMatrix(two_sigma(0.3, 0.7))};
    const Weight v = compute_weight(g);
    const auto zero = jurdjevic_quinn_rate_check(g, v, 0.0);
    CHECK(zero.controlled_bound == zero.uncontrolled_bound);
    const auto one = jurdjevic_quinn_rate_check(g, v, 1.0);
    CHECK(one.controlled_bound == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK_THROWS_AS(jurdjevic_quinn_rate_check(g, v, -1.0), PreconditionError);
  }

  TEST_CASE("nonlinear perturbations") {
    std::mt19937_64 rng(44);
    const std::size_t n = 12;
    const Generator g(InteractionMatrix(random_connected(n, rng, 0.3)));
    const Weight v = compute_weight(g);
    const Eigen::VectorXd y0 = random_state(n, rng, -1.0, 1.0);
    const double dt = safe_dt(g);
    SUBCASE("cubic shrink keeps the mean and speeds up decay") {
      const Trajectory lin = integrate_rk4(g, y0, dt, 2.0, v);
      const Trajectory non = integrate_rk4(g, y0, dt, 2.0, v, make_nonlinear("cubic_shrink", 2.0));
      for (std::size_t k = 1; k < non.size(); ++k) {
        CHECK(non.monitors[k].var_v <= non.monitors[k - 1].var_v);
        CHECK(non.monitors[k].var_v <= lin.monitors[k].var_v * (1.0 + 1e-12));
      }
      CHECK(non.monitors.back().weighted_mean == doctest::Approx(weighted_mean(y0, v)).epsilon(1e-12));
    }
    SUBCASE("zero perturbation is the linear run") {
      const Trajectory lin = integrate_rk4(g, y0, dt, 1.0, v);
      const Trajectory zero = integrate_rk4(g, y0, dt, 1.0, v, make_nonlinear("zero"));
      CHECK((lin.states.back() - zero.states.back()).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("registry errors") {
      CHECK_THROWS_AS(make_nonlinear("nope"), ConfigError);
      CHECK_THROWS_AS(make_nonlinear("cubic_shrink", 0.0), ConfigError);
    }
    SUBCASE("a perturbation leaving im A is rejected with the step index") {
      NonlinearPerturbation drift{"drift", [](const State& y, const Weight&) -> State {
                                    return State::Constant(y.size(), 0.1);
                                  }};
      try {
        integrate_rk4(g, y0, dt, 1.0, v, drift);
        FAIL("expected IntegrityError");
      } catch (const IntegrityError& e) {
        CHECK(e.step() == 0);
      }
    }
    SUBCASE("an anti-dissipative perturbation is rejected") {
      NonlinearPerturbation push{"push", [](const State& y, const Weight& w) -> State { return project_pi(y, w); }};
      CHECK_THROWS_AS(integrate_rk4(g, y0, dt, 1.0, v, push), IntegrityError);
    }
  }

  TEST_CASE("Var_P decays at rate |z|^2") {
    std::mt19937_64 rng(45);
    const std::size_t n = 6;
    const Generator g(InteractionMatrix(random_connected(n, rng, 0.3)));
    const Weight v = compute_weight(g);
    LyapunovMonitor mon{restrict_A2(g, v), {}};
    mon.certificate = solve_lyapunov(mon.restricted);
    const double dt = 0.01 / g.norm_inf();
    const Trajectory t = integrate_rk4(g, random_state(n, rng), dt, 1.0, v, NoControl{}, &mon);
    for (std::size_t k = 1; k + 1 < t.size(); k += 10) {
      const double deriv = (*t.monitors[k + 1].var_P - *t.monitors[k - 1].var_P) / (t.times[k + 1] - t.times[k - 1]);
      CHECK(deriv == doctest::Approx(-t.monitors[k].var_v).epsilon(1e-4));
    }
  }

  TEST_CASE("Euler matrix and discrete iteration") {
    SUBCASE("identity iteration") {
      const Eigen::MatrixXd gamma = 4.0 * Eigen::MatrixXd::Identity(3, 3);
      const Eigen::Vector3d y0(0.1, 0.5, 0.9);
      const Trajectory t = iterate_discrete(gamma, 0.25, y0, 5, Weight::uniform(3));
      for (const auto& s : t.states) CHECK((s - y0).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("rank-one averaging matrix reaches consensus in one step") {
      const Eigen::MatrixXd gamma = Eigen::MatrixXd::Constant(2, 2, 0.5);
      const Trajectory t = iterate_discrete(gamma, 1.0, Eigen::Vector2d(0.0, 1.0), 3, Weight::uniform(2));
      CHECK(t.states[1](0) == doctest::Approx(0.5));
      CHECK(t.states[1](1) == doctest::Approx(0.5));
      CHECK(subdominant_radius(gamma, 1.0) <= 1e-15);
    }
    SUBCASE("non-stochastic step matrices are rejected") {
      const Eigen::MatrixXd sigma = Eigen::MatrixXd::Ones(3, 3);
      const Eigen::MatrixXd gamma = euler_gamma(InteractionMatrix(sigma), 0.6);  // 0.6 * 2 > 1
      CHECK_THROWS_AS(iterate_discrete(gamma, 0.6, Eigen::Vector3d(0, 1, 2), 2, Weight::uniform(3)), ConfigError);
      Eigen::MatrixXd bad = euler_gamma(InteractionMatrix(sigma), 0.1);
      bad(0, 0) += 1.0;
      CHECK_THROWS_AS(iterate_discrete(bad, 0.1, Eigen::Vector3d(0, 1, 2), 2, Weight::uniform(3)), ConfigError);
    }
    SUBCASE("Euler Gamma reproduces sigma off the diagonal") {
      std::mt19937_64 rng(46);
      const Eigen::MatrixXd s = random_connected(7, rng);
      const Eigen::MatrixXd gamma = euler_gamma(InteractionMatrix(s), 0.05);
      Eigen::MatrixXd off = gamma;
      off.diagonal().setZero();
      CHECK((off - s).cwiseAbs().maxCoeff() == 0.0);
      CHECK(((0.05 * gamma).rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-14);
      const Generator g{InteractionMatrix(s)};
      CHECK((discrete_generator(gamma).matrix() - g.matrix()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }

  TEST_CASE("discrete iteration conserves the weighted mean and contracts at rho*") {
    std::mt19937_64 rng(47);
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t n = 3 + rng() % 15;
      const InteractionMatrix sigma(random_connected(n, rng, 0.3));
      const Generator g(sigma);
      const double dt = 1.0 / g.row_sums().maxCoeff();  // tight stability condition
      const Eigen::MatrixXd gamma = euler_gamma(sigma, dt);
      const Weight v = compute_weight(discrete_generator(gamma));
      const Eigen::VectorXd y0 = random_state(n, rng);
      const Trajectory t = iterate_discrete(gamma, dt, y0, 200, v);
      const double rho = subdominant_radius(gamma, dt);
      CHECK(rho < 1.0);
      const double mean = weighted_mean(y0, v);
      for (const auto& m : t.monitors) CHECK(std::abs(m.weighted_mean - mean) <= 1e-10 * (1.0 + std::abs(mean)));
      // fitted per-step contraction of the deviation, above the rounding floor
      std::vector<double> n_k, log_dev;
      const double dev0 = (y0.array() - mean).matrix().norm();
      for (std::size_t k = 0; k < t.size(); ++k) {
        const double dev = (t.states[k].array() - mean).matrix().norm();
        if (dev < 1e-10 * dev0) break;
        n_k.push_back(static_cast<double>(k));
        log_dev.push_back(std::log(dev));
      }
      REQUIRE(n_k.size() >= 5);
      const std::size_t half = n_k.size() / 2;
      const double slope = (log_dev.back() - log_dev[half]) / (n_k.back() - n_k[half]);
      CHECK(std::exp(slope) <= rho + 0.05);
    }
  }

  TEST_CASE("fit_decay") {
    SUBCASE("exact exponential") {
      Trajectory t;
      for (int k = 0; k <= 100; ++k) {
        t.times.push_back(0.05 * k);
        t.states.push_back(Eigen::VectorXd::Zero(1));
        MonitorRecord m;
        m.var_v = 3.0 * std::exp(-1.7 * t.times.back());
        t.monitors.push_back(m);
      }
      DecayFitOptions opts;
      opts.predicted = -1.7;
      const DecayFit fit = fit_decay(t, opts);
      CHECK(fit.slope == doctest::Approx(-1.7).epsilon(1e-9));
      CHECK(fit.relative_gap <= 1e-9);
      CHECK_FALSE(fit.underflow_truncated);
      CHECK(fit.t_end == doctest::Approx(5.0));
      CHECK(fit.samples == 51);
    }
    SUBCASE("underflow tail is excluded and flagged") {
      Trajectory t;
      for (int k = 0; k <= 100; ++k) {
        t.times.push_back(k);
        t.states.push_back(Eigen::VectorXd::Zero(1));
        MonitorRecord m;
        m.var_v = k < 60 ? std::exp(-0.5 * k) : 0.0;
        t.monitors.push_back(m);
      }
      const DecayFit fit = fit_decay(t);
      CHECK(fit.underflow_truncated);
      CHECK(fit.slope == doctest::Approx(-0.5).epsilon(1e-9));
      CHECK(fit.t_end < 60.0);
    }
    SUBCASE("errors") {
      Trajectory t;
      CHECK_THROWS_AS(fit_decay(t), PreconditionError);
      DecayFitOptions opts;
      opts.window_fraction = 0.0;
      CHECK_THROWS_AS(fit_decay(t, opts), PreconditionError);
    }
    SUBCASE("2x2 slope is -2(a+b)") {
      const Generator g{InteractionMatrix(two_sigma(0.3, 0.7))};
      const Trajectory t = integrate_rk4(g, Eigen::Vector2d(1.0, 0.0), 0.01, 10.0, compute_weight(g));
      const DecayFit fit = fit_decay(t, decay_options_for(full_spectrum(g)));
      CHECK(fit.slope == doctest::Approx(-2.0).epsilon(1e-6));
      CHECK(fit.slope < 0.0);
    }
  }

  TEST_CASE("exponential envelope with fitted M") {
    std::mt19937_64 rng(48);
    for (int trial = 0; trial < 5; ++trial) {
      const std::size_t n = 3 + rng() % 12;
      const Generator g(InteractionMatrix(random_connected(n, rng, 0.2)));
      const Weight v = compute_weight(g);
      const double s = full_spectrum(g).spectral_bound_A2;
      const double eps = 0.01 * std::abs(s);
      const Eigen::VectorXd y0 = random_state(n, rng);
      const Trajectory t = integrate_rk4(g, y0, safe_dt(g), 15.0 / std::abs(s), v);
      const double mean = weighted_mean(y0, v);
      std::vector<double> scaled;
      for (std::size_t k = 0; k < t.size(); ++k) {
        const double dev = (t.states[k].array() - mean).matrix().norm();
        scaled.push_back(dev * std::exp(-(s + eps) * t.times[k]));
      }
      // M = max over the first half must bound the second half
      const auto half = scaled.begin() + static_cast<std::ptrdiff_t>(scaled.size() / 2);
      CHECK(*std::max_element(half, scaled.end()) <= *std::max_element(scaled.begin(), half));
    }
  }

  TEST_CASE("per-cluster runs") {
    std::mt19937_64 rng(49);
    const Eigen::MatrixXd s = blocks({4, 5, 3}, rng);
    const Eigen::VectorXd y0 = random_state(12, rng);
    const ClusterRun run = run_per_cluster(InteractionMatrix(s), y0, 0.02, 3.0);
    REQUIRE(run.classes.size() == 3);
    std::vector<double> values;
    for (const ClassRun& c : run.classes) {
      Eigen::MatrixXd sub(c.members.size(), c.members.size());
      Eigen::VectorXd ysub(c.members.size());
      for (std::size_t a = 0; a < c.members.size(); ++a) {
        ysub(a) = y0(c.members[a]);
        for (std::size_t b = 0; b < c.members.size(); ++b) sub(a, b) = s(c.members[a], c.members[b]);
      }
      const Eigen::VectorXd w = svd_null_weight(generator_of(sub));
      CHECK(c.consensus == doctest::Approx(w.dot(ysub)).epsilon(1e-10));
      CHECK(c.trajectory.monitors.back().weighted_mean == doctest::Approx(c.consensus).epsilon(1e-10));
      REQUIRE(c.spectrum.has_value());
      REQUIRE(c.decay.has_value());
      values.push_back(c.consensus);
    }
    std::sort(values.begin(), values.end());
    CHECK(std::adjacent_find(values.begin(), values.end()) == values.end());
    CHECK(run.global.agents() == 12);
    CHECK(run.global_weight.values().sum() == doctest::Approx(1.0));
    // global weighted mean is conserved too
    for (const auto& m : run.global.monitors) {
      CHECK(m.weighted_mean == doctest::Approx(run.global.monitors.front().weighted_mean).epsilon(1e-12));
    }
  }

  TEST_CASE("per-cluster run of a single class equals the global run") {
    std::mt19937_64 rng(50);
    const Eigen::MatrixXd s = random_connected(9, rng);
    const Eigen::VectorXd y0 = random_state(9, rng);
    const ClusterRun run = run_per_cluster(InteractionMatrix(s), y0, 0.02, 2.0);
    const Generator g{InteractionMatrix(s)};
    const Trajectory direct = integrate_rk4(g, y0, 0.02, 2.0, compute_weight(g));
    REQUIRE(run.classes.size() == 1);
    CHECK((run.global.states.back() - direct.states.back()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("per-cluster run refuses inter-class arcs") {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 4);
    s(0, 1) = s(1, 0) = s(2, 3) = s(3, 2) = 1.0;
    s(0, 2) = 0.5;
    CHECK_THROWS_AS(run_per_cluster(InteractionMatrix(s), Eigen::Vector4d(0, 1, 2, 3), 0.1, 1.0), PreconditionError);
  }
}
