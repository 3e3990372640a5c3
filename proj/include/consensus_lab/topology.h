#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

namespace consensus_lab {

struct WeightedEdge {
  int from = 0;
  int to = 0;
  double weight = 1.0;
};

/// Undirected weighted communication graph on N >= 2 agents.
class Topology {
 public:
  /// Rejects non-square, asymmetric (directed), negative or self-looped
  /// adjacency matrices with Error{kInvalidTopology}.
  explicit Topology(Eigen::MatrixXd adjacency);

  static Topology FromEdges(int num_agents,
                            const std::vector<WeightedEdge>& edges);
  static Topology Complete(int num_agents);
  static Topology Path(int num_agents);
  static Topology Star(int num_agents);
  static Topology Ring(int num_agents);
  static Topology Edgeless(int num_agents);

  int num_agents() const { return static_cast<int>(adjacency_.rows()); }
  const Eigen::MatrixXd& adjacency() const { return adjacency_; }

 private:
  Eigen::MatrixXd adjacency_;
};

/// L = D - A.
Eigen::MatrixXd laplacian(const Topology& topo);

/// Eigen-decomposition of the Laplacian. The modal basis is orthogonal, its
/// first column is 1/sqrt(N), and every other column has its
/// largest-magnitude entry positive.
struct LaplacianSpectrum {
  Eigen::VectorXd eigenvalues;  // ascending
  Eigen::MatrixXd modal_basis;

  int num_agents() const { return static_cast<int>(eigenvalues.size()); }
  double lambda2() const { return eigenvalues(1); }
  double lambdaN() const { return eigenvalues(eigenvalues.size() - 1); }
};

LaplacianSpectrum spectrum(const Topology& topo);

/// 1e-9 * max(1, lambda_N).
double default_connectivity_tol(const LaplacianSpectrum& spec);

bool is_connected(const LaplacianSpectrum& spec,
                  std::optional<double> tol = std::nullopt);

/// 1 - ((lambda_N - lambda_2) / (lambda_N + lambda_2))^2. Throws
/// Error{kDisconnected} when lambda_2 is not above the connectivity tolerance.
double graph_factor(const LaplacianSpectrum& spec);

}  // namespace consensus_lab
