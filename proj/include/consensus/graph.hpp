#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "consensus/errors.hpp"

namespace consensus {

// Directed interaction graph of sigma: arc i -> j iff sigma(i, j) > tolerance
// (i != j). Components are numbered in order of their smallest member.
struct DiGraphSummary {
  std::size_t n = 0;
  std::vector<std::size_t> scc_assignment;
  std::size_t component_count = 0;
  bool is_strongly_connected = false;
  // Components with no arc leaving them. Each one evolves on its own.
  std::vector<std::size_t> closed_classes;

  std::vector<std::size_t> members(std::size_t component) const;
  bool is_closed(std::size_t component) const;
};

DiGraphSummary analyze_graph(const Eigen::MatrixXd& sigma, double tolerance_zero = 0.0);

class NotStronglyConnected : public ConnectivityError {
 public:
  explicit NotStronglyConnected(DiGraphSummary summary);

  const DiGraphSummary& summary() const noexcept { return summary_; }

 private:
  DiGraphSummary summary_;
};

// Throws NotStronglyConnected (carrying the partition) unless the graph is a
// single component.
void require_strong_connectivity(const DiGraphSummary& summary);

}  // namespace consensus
