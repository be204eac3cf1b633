#include "consensus/app/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "consensus/errors.hpp"

namespace consensus::app {

namespace {

std::vector<std::vector<double>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> row;
    std::string token;
    while (ls >> token) {
      char* end = nullptr;
      const double value = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size()) {
        throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": cannot parse '" + token + "'");
      }
      row.push_back(value);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt4(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed while writing '" + path.string() + "'");
}

std::string provenance_line(const Provenance& prov) {
  return "scenario=" + prov.scenario + " seed=" + std::to_string(prov.seed) + " prng=" + prov.prng;
}

}  // namespace

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  const auto rows = read_rows(path);
  if (rows.empty()) throw ConfigError(path.string() + ": matrix file is empty");
  const std::size_t cols = rows.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) {
      throw ConfigError(path.string() + ": row " + std::to_string(i + 1) + " has " + std::to_string(rows[i].size()) +
                        " entries, expected " + std::to_string(cols));
    }
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

Eigen::VectorXd read_vector(const std::filesystem::path& path) {
  std::vector<double> flat;
  for (const auto& row : read_rows(path)) flat.insert(flat.end(), row.begin(), row.end());
  if (flat.empty()) throw ConfigError(path.string() + ": vector file is empty");
  return Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

void write_csv(const Trajectory& traj, const std::filesystem::path& path, const Provenance& prov) {
  auto out = open_out(path);
  const std::size_t n = traj.agents();
  const bool has_p = !traj.monitors.empty() && traj.monitors.front().var_P.has_value();
  out << "# " << provenance_line(prov) << "\n";
  out << "t";
  for (std::size_t i = 1; i <= n; ++i) out << ",y_" << i;
  out << ",weighted_mean,var_v";
  if (has_p) out << ",var_P";
  out << ",min_state,max_state\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    out << fmt17(traj.times[k]);
    for (Eigen::Index i = 0; i < traj.states[k].size(); ++i) out << ',' << fmt17(traj.states[k](i));
    const MonitorRecord& m = traj.monitors[k];
    out << ',' << fmt17(m.weighted_mean) << ',' << fmt17(m.var_v);
    if (has_p) out << ',' << fmt17(m.var_P.value_or(std::nan("")));
    out << ',' << fmt17(m.min_state) << ',' << fmt17(m.max_state) << '\n';
  }
  close_out(out, path);
}

Trajectory read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) header.push_back(col);
    break;
  }
  if (header.empty() || header.front() != "t") throw IoError(path.string() + ": missing CSV header");
  const bool has_p = std::find(header.begin(), header.end(), "var_P") != header.end();
  const std::size_t monitor_cols = has_p ? 5 : 4;
  if (header.size() < 1 + monitor_cols) throw IoError(path.string() + ": CSV header too short");
  const std::size_t n = header.size() - 1 - monitor_cols;

  Trajectory traj;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> values;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) values.push_back(std::strtod(cell.c_str(), nullptr));
    if (values.size() != header.size()) throw IoError(path.string() + ": ragged CSV row");
    traj.times.push_back(values[0]);
    State y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i)) = values[1 + i];
    traj.states.push_back(std::move(y));
    MonitorRecord m;
    std::size_t c = 1 + n;
    m.weighted_mean = values[c++];
    m.var_v = values[c++];
    if (has_p) m.var_P = values[c++];
    m.min_state = values[c++];
    m.max_state = values[c++];
    traj.monitors.push_back(m);
  }
  return traj;
}

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 480.0;
constexpr double kMargin = 60.0;
constexpr std::size_t kMaxPoints = 800;

struct Frame {
  double t0, t1, y0, y1;
  double x(double t) const { return kMargin + (t - t0) / (t1 - t0) * (kWidth - 2 * kMargin); }
  double y(double v) const { return kHeight - kMargin - (v - y0) / (y1 - y0) * (kHeight - 2 * kMargin); }
};

std::vector<std::size_t> sample_indices(std::size_t count) {
  std::vector<std::size_t> idx;
  if (count == 0) return idx;
  const std::size_t step = std::max<std::size_t>(1, count / kMaxPoints);
  for (std::size_t k = 0; k < count; k += step) idx.push_back(k);
  if (idx.back() != count - 1) idx.push_back(count - 1);
  return idx;
}

void svg_open(std::ostream& out, const std::string& title, const Provenance& prov, const Frame& f,
              const std::string& ylabel) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  out << "<desc>" << provenance_line(prov) << "</desc>\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"25\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  out << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kWidth - 2 * kMargin << "\" height=\""
      << kHeight - 2 * kMargin << "\" fill=\"none\" stroke=\"black\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\" font-size=\"12\">time ["
      << fmt4(f.t0) << ", " << fmt4(f.t1) << "]</text>\n";
  out << "<text x=\"15\" y=\"" << kHeight / 2 << "\" font-size=\"12\" transform=\"rotate(-90 15 " << kHeight / 2
      << ")\" text-anchor=\"middle\">" << ylabel << " [" << fmt4(f.y0) << ", " << fmt4(f.y1) << "]</text>\n";
}

void polyline(std::ostream& out, const std::vector<std::pair<double, double>>& pts, const Frame& f,
              const std::string& colour, double width) {
  if (pts.empty()) return;
  out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"" << width << "\" points=\"";
  for (const auto& [t, v] : pts) out << fmt4(f.x(t)) << ',' << fmt4(f.y(v)) << ' ';
  out << "\"/>\n";
}

Frame make_frame(double t0, double t1, double y0, double y1) {
  if (!(t1 > t0)) t1 = t0 + 1.0;
  if (!(y1 > y0)) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  return {t0, t1, y0, y1};
}

const char* palette(std::size_t i) {
  static const char* colours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colours[i % 10];
}

}  // namespace

void write_states_svg(const Trajectory& traj, const std::filesystem::path& path, const Provenance& prov) {
  auto out = open_out(path);
  double lo = 0.0, hi = 1.0;
  if (!traj.empty()) {
    lo = traj.monitors.front().min_state;
    hi = traj.monitors.front().max_state;
    for (const auto& m : traj.monitors) {
      lo = std::min(lo, m.min_state);
      hi = std::max(hi, m.max_state);
    }
  }
  const Frame f = make_frame(traj.empty() ? 0.0 : traj.times.front(), traj.empty() ? 1.0 : traj.times.back(), lo, hi);
  svg_open(out, "states", prov, f, "y_i");
  const auto idx = sample_indices(traj.size());
  for (std::size_t i = 0; i < traj.agents(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const std::size_t k : idx) pts.emplace_back(traj.times[k], traj.states[k](static_cast<Eigen::Index>(i)));
    polyline(out, pts, f, palette(i), 0.8);
  }
  std::vector<std::pair<double, double>> mean;
  for (const std::size_t k : idx) mean.emplace_back(traj.times[k], traj.monitors[k].weighted_mean);
  polyline(out, mean, f, "black", 2.0);
  out << "</svg>\n";
  close_out(out, path);
}

void write_variance_svg(const Trajectory& traj, const std::filesystem::path& path, const Provenance& prov) {
  auto out = open_out(path);
  const auto idx = sample_indices(traj.size());
  std::vector<std::pair<double, double>> var_v, var_p;
  for (const std::size_t k : idx) {
    const auto& m = traj.monitors[k];
    if (m.var_v > 0.0) var_v.emplace_back(traj.times[k], std::log10(m.var_v));
    if (m.var_P && *m.var_P > 0.0) var_p.emplace_back(traj.times[k], std::log10(*m.var_P));
  }
  double lo = 0.0, hi = 1.0;
  if (!var_v.empty() || !var_p.empty()) {
    lo = std::numeric_limits<double>::infinity();
    hi = -lo;
    for (const auto* series : {&var_v, &var_p}) {
      for (const auto& [t, v] : *series) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  const Frame f = make_frame(traj.empty() ? 0.0 : traj.times.front(), traj.empty() ? 1.0 : traj.times.back(), lo, hi);
  svg_open(out, "log10 variance (blue: var_v, orange: var_P)", prov, f, "log10 variance");
  polyline(out, var_v, f, palette(0), 1.5);
  polyline(out, var_p, f, palette(1), 1.5);
  out << "</svg>\n";
  close_out(out, path);
}

void require_finite(const nlohmann::json& doc, const std::string& where) {
  if (doc.is_number_float() && !std::isfinite(doc.get<double>())) {
    throw NumericalError("non-finite number in " + where);
  }
  if (doc.is_object()) {
    for (const auto& [key, value] : doc.items()) require_finite(value, where + "." + key);
  } else if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) require_finite(doc[i], where + "[" + std::to_string(i) + "]");
  }
}

void emit_outputs(const RunArtifacts& artifacts, const std::filesystem::path& dir, const std::set<Format>& formats) {
  require_finite(artifacts.summary);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());

  if (formats.contains(Format::kCsv)) {
    write_csv(artifacts.trajectory, dir / "trajectory.csv", artifacts.provenance);
    if (artifacts.discrete) write_csv(*artifacts.discrete, dir / "discrete.csv", artifacts.provenance);
  }
  if (formats.contains(Format::kJson)) {
    const auto path = dir / "summary.json";
    auto out = open_out(path);
    out << artifacts.summary.dump(2) << '\n';
    close_out(out, path);
  }
  if (formats.contains(Format::kSvg)) {
    write_states_svg(artifacts.trajectory, dir / "states.svg", artifacts.provenance);
    write_variance_svg(artifacts.trajectory, dir / "variance.svg", artifacts.provenance);
  }
}

}  // namespace consensus::app
