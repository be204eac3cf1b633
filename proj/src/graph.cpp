#include "consensus/graph.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

namespace consensus {

namespace {

constexpr std::size_t kUnvisited = std::numeric_limits<std::size_t>::max();

using Adjacency = std::vector<std::vector<std::size_t>>;

Adjacency build_arcs(const Eigen::MatrixXd& sigma, double tolerance_zero) {
  const auto n = static_cast<std::size_t>(sigma.rows());
  Adjacency succ(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && sigma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) > tolerance_zero) {
        succ[i].push_back(j);
      }
    }
  }
  return succ;
}

// Tarjan's algorithm with an explicit call stack. Returns the raw component
// label of each vertex (labels are in reverse topological order).
std::vector<std::size_t> tarjan(const Adjacency& succ, std::size_t& count) {
  const std::size_t n = succ.size();
  std::vector<std::size_t> index(n, kUnvisited);
  std::vector<std::size_t> low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> label(n, kUnvisited);
  // (vertex, next successor position)
  std::vector<std::pair<std::size_t, std::size_t>> frames;
  std::size_t next_index = 0;
  count = 0;

  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != kUnvisited) continue;
    frames.emplace_back(root, 0);
    index[root] = low[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = true;

    while (!frames.empty()) {
      auto& [u, pos] = frames.back();
      if (pos < succ[u].size()) {
        const std::size_t w = succ[u][pos++];
        if (index[w] == kUnvisited) {
          index[w] = low[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = true;
          frames.emplace_back(w, 0);
        } else if (on_stack[w]) {
          low[u] = std::min(low[u], index[w]);
        }
        continue;
      }
      const std::size_t done = u;
      frames.pop_back();
      if (low[done] == index[done]) {
        std::size_t w = kUnvisited;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          label[w] = count;
        } while (w != done);
        ++count;
      }
      if (!frames.empty()) {
        const std::size_t parent = frames.back().first;
        low[parent] = std::min(low[parent], low[done]);
      }
    }
  }
  return label;
}

}  // namespace

std::vector<std::size_t> DiGraphSummary::members(std::size_t component) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scc_assignment.size(); ++i) {
    if (scc_assignment[i] == component) out.push_back(i);
  }
  return out;
}

bool DiGraphSummary::is_closed(std::size_t component) const {
  return std::find(closed_classes.begin(), closed_classes.end(), component) != closed_classes.end();
}

DiGraphSummary analyze_graph(const Eigen::MatrixXd& sigma, double tolerance_zero) {
  if (sigma.rows() != sigma.cols()) {
    throw DimensionError("analyze_graph: interaction matrix is " + std::to_string(sigma.rows()) + "x" +
                         std::to_string(sigma.cols()) + ", expected square");
  }
  if (tolerance_zero < 0.0) {
    throw ValidationError("analyze_graph: tolerance_zero must be nonnegative");
  }

  const Adjacency succ = build_arcs(sigma, tolerance_zero);
  std::size_t count = 0;
  const std::vector<std::size_t> raw = tarjan(succ, count);

  DiGraphSummary summary;
  summary.n = succ.size();
  summary.component_count = count;
  summary.is_strongly_connected = (count == 1);

  // Renumber by smallest member so that ids do not depend on DFS order.
  std::vector<std::size_t> remap(count, kUnvisited);
  std::size_t next = 0;
  summary.scc_assignment.resize(summary.n);
  for (std::size_t i = 0; i < summary.n; ++i) {
    if (remap[raw[i]] == kUnvisited) remap[raw[i]] = next++;
    summary.scc_assignment[i] = remap[raw[i]];
  }

  std::vector<bool> has_exit(count, false);
  for (std::size_t i = 0; i < summary.n; ++i) {
    for (const std::size_t j : succ[i]) {
      if (summary.scc_assignment[i] != summary.scc_assignment[j]) has_exit[summary.scc_assignment[i]] = true;
    }
  }
  for (std::size_t c = 0; c < count; ++c) {
    if (!has_exit[c]) summary.closed_classes.push_back(c);
  }
  return summary;
}

namespace {

std::string describe(const DiGraphSummary& s) {
  std::ostringstream os;
  os << "interaction graph is not strongly connected: " << s.component_count << " components, "
     << s.closed_classes.size() << " closed (";
  for (std::size_t k = 0; k < s.closed_classes.size(); ++k) {
    const auto m = s.members(s.closed_classes[k]);
    os << (k ? ", " : "") << "#" << s.closed_classes[k] << ":" << m.size() << " agents";
  }
  os << ")";
  return os.str();
}

}  // namespace

NotStronglyConnected::NotStronglyConnected(DiGraphSummary summary)
    : ConnectivityError(describe(summary)), summary_(std::move(summary)) {}

void require_strong_connectivity(const DiGraphSummary& summary) {
  if (!summary.is_strongly_connected) throw NotStronglyConnected(summary);
}

}  // namespace consensus
