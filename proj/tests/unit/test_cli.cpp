#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <unistd.h>

#include "consensus/app/config.hpp"
#include "consensus/app/io.hpp"
#include "consensus/app/scenario.hpp"
#include "consensus/errors.hpp"
#include "consensus/graph.hpp"

using namespace consensus;
using namespace consensus::app;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("consensus_lab_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

ScenarioConfig small(SourceKind source, std::size_t n = 6, std::uint64_t seed = 3) {
  ScenarioConfig cfg;
  cfg.name = "small";
  cfg.source = source;
  cfg.n = n;
  cfg.seed = seed;
  cfg.formats = {Format::kCsv, Format::kJson, Format::kSvg};
  return cfg;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config: full schema") {
    const ScenarioConfig cfg = parse_config(R"(
# comment
[scenario]
name = demo
source = blocks
blocks = 4
n = 40
seed = 18446744073709551615

[initial]
kind = list
values = 1, 2.5, -3

[integration]
method = both
dt = 0.01
t_end = 2
stride = 5
lyapunov = yes

[control]
kind = jurdjevic_quinn
alpha = 1.5

[kernel]
sizes = 8,16,32

[output]
formats = json, svg
timing = true
)");
    CHECK(cfg.name == "demo");
    CHECK(cfg.source == SourceKind::kBlocks);
    CHECK(cfg.blocks == 4);
    CHECK(cfg.n == 40);
    CHECK(cfg.seed == 18446744073709551615ull);
    CHECK(cfg.initial == InitialKind::kList);
    CHECK(cfg.initial_values == std::vector<double>{1.0, 2.5, -3.0});
    CHECK(cfg.method == Method::kBoth);
    CHECK(cfg.dt == 0.01);
    CHECK(cfg.stride == 5);
    CHECK(cfg.lyapunov);
    CHECK(cfg.control == ControlKind::kJurdjevicQuinn);
    CHECK(cfg.alpha == 1.5);
    CHECK(cfg.kernel_sizes == std::vector<std::size_t>{8, 16, 32});
    CHECK(cfg.formats == std::set<Format>{Format::kJson, Format::kSvg});
    CHECK(cfg.timing);
  }

  TEST_CASE("config: diagnostics name the line or the field") {
    CHECK(error_of("[scenario]\nn = 5\nthis line is broken\n").find("line 3") != std::string::npos);
    CHECK(error_of("[scenario]\nn = five\n").find("[scenario] n") != std::string::npos);
    CHECK(error_of("[scenario]\nn = 5\nsource = hexagon\n").find("[scenario] source") != std::string::npos);
    CHECK(error_of("[scenario]\nn = 5\ncolour = red\n").find("unknown key") != std::string::npos);
    CHECK(error_of("[bogus]\nx = 1\n").find("bogus") != std::string::npos);
    CHECK(error_of("[scenario]\nsource = ring\nn = 1\n").find("[scenario] n") != std::string::npos);
    CHECK(error_of("[scenario]\nsource = matrix_file\n").find("matrix_file") != std::string::npos);
    CHECK(error_of("[scenario]\nn = 4\n[initial]\nkind = file\n").find("[initial] file") != std::string::npos);
    CHECK(error_of("[scenario]\nn = 4\n[initial]\nlo = 2\nhi = 1\n").find("[initial] hi") != std::string::npos);
    CHECK(error_of("[scenario]\nn = 4\n[output]\nformats = pdf\n").find("[output] formats") != std::string::npos);
    CHECK(error_of("[scenario]\nn = 4\n[integration]\nlyapunov = maybe\n").find("lyapunov") != std::string::npos);
  }

  TEST_CASE("config: relative paths resolve against the config directory") {
    const ScenarioConfig cfg = parse_config("[scenario]\nsource = matrix_file\nmatrix_file = sigma.txt\n", "/data/run");
    CHECK(cfg.matrix_file == fs::path("/data/run/sigma.txt"));
    CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), ConfigError);
  }

  TEST_CASE("matrix and vector files") {
    TempDir tmp("files");
    std::ofstream(tmp.path / "m.txt") << "# header\n0 1 2\n3, 0, 4  # trailing\n\n5 6 0\n";
    const Eigen::MatrixXd m = read_matrix(tmp.path / "m.txt");
    CHECK(m.rows() == 3);
    CHECK(m(1, 2) == 4.0);
    std::ofstream(tmp.path / "ragged.txt") << "1 2\n3\n";
    CHECK_THROWS_AS(read_matrix(tmp.path / "ragged.txt"), ConfigError);
    std::ofstream(tmp.path / "junk.txt") << "1 x\n";
    CHECK_THROWS_AS(read_matrix(tmp.path / "junk.txt"), ConfigError);
    std::ofstream(tmp.path / "v.txt") << "1\n2 3\n";
    CHECK(read_vector(tmp.path / "v.txt").size() == 3);
    CHECK_THROWS_AS(read_matrix(tmp.path / "missing.txt"), IoError);
  }

  TEST_CASE("builtin random families") {
    const Eigen::MatrixXd fc = fully_connected_sigma(10, 5);
    for (Eigen::Index i = 0; i < 10; ++i) {
      for (Eigen::Index j = 0; j < 10; ++j) {
        if (i == j) {
          CHECK(fc(i, j) == 0.0);
        } else {
          CHECK(fc(i, j) > 0.0);
          CHECK(fc(i, j) < 1.0);
        }
      }
    }
    const Eigen::MatrixXd ring = ring_sigma(7, 5);
    for (Eigen::Index i = 0; i < 7; ++i) {
      for (Eigen::Index j = 0; j < 7; ++j) {
        const bool arc = j == (i + 1) % 7;
        CHECK((ring(i, j) > 0.0) == arc);
      }
    }
    CHECK(analyze_graph(ring).is_strongly_connected);
    const Eigen::MatrixXd blocks = blocks_sigma(10, 3, 5);
    const auto g = analyze_graph(blocks);
    CHECK(g.component_count == 3);
    CHECK(g.closed_classes.size() == 3);
    CHECK(g.members(0).size() == 4);
    CHECK((fully_connected_sigma(10, 5) - fc).cwiseAbs().maxCoeff() == 0.0);
    CHECK((fully_connected_sigma(10, 6) - fc).cwiseAbs().maxCoeff() > 0.0);
  }

  TEST_CASE("CSV layout and round trip") {
    TempDir tmp("csv");
    ScenarioConfig cfg = small(SourceKind::kFullyConnected, 2);
    cfg.t_end = 1.0;
    const ScenarioOutcome out = run_scenario(cfg, Mode::kSimulate, tmp.path);
    REQUIRE(out.exit_code == 0);
    std::ifstream in(tmp.path / "trajectory.csv");
    std::string first, header;
    std::getline(in, first);
    std::getline(in, header);
    CHECK(first.find("seed=3") != std::string::npos);
    CHECK(header == "t,y_1,y_2,weighted_mean,var_v,min_state,max_state");
    const Trajectory back = read_csv(tmp.path / "trajectory.csv");
    const Trajectory& orig = out.artifacts.trajectory;
    REQUIRE(back.size() == orig.size());
    for (std::size_t k = 0; k < orig.size(); ++k) {
      CHECK(back.times[k] == orig.times[k]);
      CHECK((back.states[k] - orig.states[k]).cwiseAbs().maxCoeff() == 0.0);
      CHECK(back.monitors[k].weighted_mean == orig.monitors[k].weighted_mean);
      CHECK(back.monitors[k].var_v == orig.monitors[k].var_v);
      CHECK(back.monitors[k].min_state == orig.monitors[k].min_state);
      CHECK(back.monitors[k].max_state == orig.monitors[k].max_state);
    }
  }

  TEST_CASE("CSV with var_P column round-trips") {
    TempDir tmp("csvp");
    ScenarioConfig cfg = small(SourceKind::kRing, 5);
    cfg.lyapunov = true;
    cfg.t_end = 2.0;
    const ScenarioOutcome out = run_scenario(cfg, Mode::kSimulate, tmp.path);
    REQUIRE(out.exit_code == 0);
    const Trajectory back = read_csv(tmp.path / "trajectory.csv");
    REQUIRE(back.monitors.front().var_P.has_value());
    CHECK(*back.monitors.back().var_P == *out.artifacts.trajectory.monitors.back().var_P);
  }

  TEST_CASE("empty trajectory: header-only CSV and JSON with nulls") {
    TempDir tmp("empty");
    RunArtifacts art;
    art.provenance = {"empty", 9, kPrngName};
    art.summary = {{"fitted_slope", nullptr}, {"seed", 9}};
    emit_outputs(art, tmp.path, {Format::kCsv, Format::kJson, Format::kSvg});
    std::ifstream in(tmp.path / "trajectory.csv");
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 2);
    CHECK(lines[1] == "t,weighted_mean,var_v,min_state,max_state");
    const auto doc = nlohmann::json::parse(slurp(tmp.path / "summary.json"));
    CHECK(doc["fitted_slope"].is_null());
    CHECK(read_csv(tmp.path / "trajectory.csv").empty());
    CHECK(fs::exists(tmp.path / "states.svg"));
  }

  TEST_CASE("non-finite JSON values are refused") {
    nlohmann::json doc = {{"a", 1.0}, {"b", {{"c", std::numeric_limits<double>::infinity()}}}};
    try {
      require_finite(doc);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("summary.b.c") != std::string::npos);
    }
    TempDir tmp("nan");
    RunArtifacts art;
    art.summary = {{"x", std::nan("")}};
    CHECK_THROWS_AS(emit_outputs(art, tmp.path, {Format::kJson}), NumericalError);
  }

  TEST_CASE("unwritable output path is an I/O error") {
    TempDir tmp("io");
    std::ofstream(tmp.path / "file") << "x";
    RunArtifacts art;
    CHECK_THROWS_AS(emit_outputs(art, tmp.path / "file" / "sub", {Format::kJson}), IoError);
    const ScenarioOutcome out = run_scenario(small(SourceKind::kRing), Mode::kAnalyze, tmp.path / "file" / "sub");
    CHECK(out.exit_code == kExitIo);
  }

  TEST_CASE("deterministic artifacts; seed recorded everywhere") {
    TempDir a("det_a"), b("det_b");
    ScenarioConfig cfg = small(SourceKind::kFullyConnected, 8, 77);
    cfg.lyapunov = true;
    cfg.method = Method::kBoth;
    REQUIRE(run_scenario(cfg, Mode::kSimulate, a.path).exit_code == 0);
    REQUIRE(run_scenario(cfg, Mode::kSimulate, b.path).exit_code == 0);
    for (const char* f : {"trajectory.csv", "discrete.csv", "summary.json", "states.svg", "variance.svg"}) {
      CHECK(slurp(a.path / f) == slurp(b.path / f));
      CHECK(slurp(a.path / f).find("77") != std::string::npos);
    }
    const auto doc = nlohmann::json::parse(slurp(a.path / "summary.json"));
    CHECK(doc["seed"] == 77);
    CHECK(doc["prng"] == kPrngName);
    CHECK(doc["runtime"].is_null());
  }

  TEST_CASE("summary contents of a connected run") {
    ScenarioConfig cfg = small(SourceKind::kFullyConnected, 10);
    const ScenarioOutcome out = run_scenario(cfg, Mode::kSimulate);
    REQUIRE(out.exit_code == 0);
    const auto& s = out.artifacts.summary;
    for (const char* key : {"is_strongly_connected", "component_count", "v", "v_min", "v_max", "consensus_value",
                            "s_A2", "fitted_slope", "relative_gap", "runtime"}) {
      CHECK_MESSAGE(s.contains(key), key);
    }
    CHECK(s["v"].size() == 10);
    CHECK(s["is_strongly_connected"] == true);
    CHECK(s["fitted_slope"].get<double>() < 0.0);
    const double consensus = s["consensus_value"];
    const auto& last = out.artifacts.trajectory.states.back();
    CHECK((last.array() - consensus).abs().maxCoeff() <= 1e-6);
    cfg.timing = true;
    CHECK(run_scenario(cfg, Mode::kAnalyze).artifacts.summary["runtime"].is_number());
  }

  TEST_CASE("clustered and disconnected scenarios") {
    ScenarioConfig cfg = small(SourceKind::kBlocks, 12);
    const ScenarioOutcome out = run_scenario(cfg, Mode::kSimulate);
    REQUIRE(out.exit_code == 0);
    CHECK(out.artifacts.summary["classes"].size() == 3);
    CHECK(out.artifacts.summary["is_strongly_connected"] == false);
    CHECK(run_scenario(cfg, Mode::kDiscrete).exit_code == kExitConnectivity);

    TempDir tmp("chain");
    std::ofstream(tmp.path / "chain.txt") << "0 1 0\n0 0 1\n0 0 0\n";
    ScenarioConfig chain;
    chain.source = SourceKind::kMatrixFile;
    chain.matrix_file = tmp.path / "chain.txt";
    const ScenarioOutcome bad = run_scenario(chain, Mode::kSimulate);
    CHECK(bad.exit_code == kExitConnectivity);
    CHECK(bad.stage == "graph");
  }

  TEST_CASE("exit codes") {
    CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
    CHECK(exit_code_for(ValidationError("x")) == kExitConfig);
    CHECK(exit_code_for(ConnectivityError("x")) == kExitConnectivity);
    CHECK(exit_code_for(NumericalDegeneracy("x")) == kExitNumerical);
    CHECK(exit_code_for(IntegrityError("x", 3)) == kExitNumerical);
    CHECK(exit_code_for(IoError("x")) == kExitIo);

    ScenarioConfig cfg = small(SourceKind::kRing, 5);
    cfg.dt = 10.0;  // violates the step guard
    const ScenarioOutcome out = run_scenario(cfg, Mode::kSimulate);
    CHECK(out.exit_code == kExitConfig);
    CHECK(out.stage == "dynamics");
  }

  TEST_CASE("initial state sources") {
    TempDir tmp("init");
    std::ofstream(tmp.path / "y.txt") << "0.1\n0.2\n0.3\n";
    ScenarioConfig cfg = small(SourceKind::kFullyConnected, 3);
    cfg.initial = InitialKind::kFile;
    cfg.initial_file = tmp.path / "y.txt";
    CHECK(build_inputs(cfg).y_in(2) == 0.3);
    cfg.initial = InitialKind::kList;
    cfg.initial_values = {1.0, 2.0};
    CHECK_THROWS_AS(build_inputs(cfg), ConfigError);
    cfg.initial = InitialKind::kUniform;
    cfg.lo = 5.0;
    cfg.hi = 6.0;
    const Eigen::VectorXd y = build_inputs(cfg).y_in;
    CHECK(y.minCoeff() >= 5.0);
    CHECK(y.maxCoeff() < 6.0);
  }

  TEST_CASE("discrete and kernel modes") {
    ScenarioConfig cfg = small(SourceKind::kRing, 6);
    cfg.t_end = 5.0;
    const ScenarioOutcome d = run_scenario(cfg, Mode::kDiscrete);
    REQUIRE(d.exit_code == 0);
    CHECK(d.artifacts.summary["discrete"]["rho_star"].get<double>() < 1.0);

    ScenarioConfig k = small(SourceKind::kKernel, 16);
    k.kernel = "constant";
    k.kernel_sizes = {8, 16, 32};
    const ScenarioOutcome kr = run_scenario(k, Mode::kKernel);
    REQUIRE(kr.exit_code == 0);
    CHECK(kr.artifacts.summary["constant_S"]["passed"] == true);
    CHECK(kr.artifacts.summary["refinement"].size() == 3);
    CHECK(std::abs(kr.artifacts.summary["consensus_value"].get<double>() - 0.5) <= 1e-12);
    CHECK(run_scenario(small(SourceKind::kRing), Mode::kKernel).exit_code == kExitConfig);
  }

  TEST_CASE("batch runs write one directory per scenario") {
    TempDir tmp("batch");
    std::vector<BatchJob> jobs;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      ScenarioConfig cfg = small(SourceKind::kFullyConnected, 6, seed);
      jobs.push_back({cfg, tmp.path / ("s" + std::to_string(seed))});
    }
    const auto outcomes = run_batch(jobs, Mode::kSimulate, 3);
    REQUIRE(outcomes.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(outcomes[k].exit_code == 0);
      CHECK(fs::exists(jobs[k].out_dir / "summary.json"));
      const ScenarioOutcome serial = run_scenario(jobs[k].config, Mode::kSimulate);
      CHECK(serial.artifacts.summary.dump() == outcomes[k].artifacts.summary.dump());
    }
  }
}
