#include "consensus_lab/topology.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "consensus_lab/error.h"

namespace consensus_lab {

Topology::Topology(Eigen::MatrixXd adjacency) : adjacency_(std::move(adjacency)) {
  const auto N = adjacency_.rows();
  if (N != adjacency_.cols()) {
    throw Error(ErrorCode::kInvalidTopology, "adjacency must be square");
  }
  if (N < 2) {
    throw Error(ErrorCode::kInvalidTopology, "need at least two agents");
  }
  if (!adjacency_.allFinite()) {
    throw Error(ErrorCode::kInvalidTopology, "adjacency must be finite");
  }
  for (Eigen::Index i = 0; i < N; ++i) {
    if (adjacency_(i, i) != 0.0) {
      throw Error(ErrorCode::kInvalidTopology,
                  fmt::format("self-loop weight at agent {}", i));
    }
    for (Eigen::Index j = 0; j < N; ++j) {
      if (adjacency_(i, j) < 0.0) {
        throw Error(ErrorCode::kInvalidTopology,
                    fmt::format("negative weight a({},{})", i, j));
      }
      if (adjacency_(i, j) != adjacency_(j, i)) {
        throw Error(ErrorCode::kInvalidTopology,
                    fmt::format("directed edge: a({0},{1}) != a({1},{0})", i, j));
      }
    }
  }
}

Topology Topology::FromEdges(int num_agents,
                             const std::vector<WeightedEdge>& edges) {
  if (num_agents < 2) {
    throw Error(ErrorCode::kInvalidTopology, "need at least two agents");
  }
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(num_agents, num_agents);
  for (const auto& e : edges) {
    if (e.from < 0 || e.to < 0 || e.from >= num_agents || e.to >= num_agents) {
      throw Error(ErrorCode::kInvalidTopology,
                  fmt::format("edge ({}, {}) out of range for N = {}", e.from,
                              e.to, num_agents));
    }
    if (e.from == e.to) {
      throw Error(ErrorCode::kInvalidTopology,
                  fmt::format("self-loop at agent {}", e.from));
    }
    if (!(e.weight >= 0.0)) {
      throw Error(ErrorCode::kInvalidTopology,
                  fmt::format("edge ({}, {}) has negative weight", e.from, e.to));
    }
    adj(e.from, e.to) += e.weight;
    adj(e.to, e.from) += e.weight;
  }
  return Topology(std::move(adj));
}

Topology Topology::Complete(int num_agents) {
  std::vector<WeightedEdge> edges;
  for (int i = 0; i < num_agents; ++i)
    for (int j = i + 1; j < num_agents; ++j) edges.push_back({i, j, 1.0});
  return FromEdges(num_agents, edges);
}

Topology Topology::Path(int num_agents) {
  std::vector<WeightedEdge> edges;
  for (int i = 0; i + 1 < num_agents; ++i) edges.push_back({i, i + 1, 1.0});
  return FromEdges(num_agents, edges);
}

Topology Topology::Star(int num_agents) {
  std::vector<WeightedEdge> edges;
  for (int i = 1; i < num_agents; ++i) edges.push_back({0, i, 1.0});
  return FromEdges(num_agents, edges);
}

Topology Topology::Ring(int num_agents) {
  if (num_agents < 3) return Path(num_agents);
  std::vector<WeightedEdge> edges;
  for (int i = 0; i < num_agents; ++i)
    edges.push_back({i, (i + 1) % num_agents, 1.0});
  return FromEdges(num_agents, edges);
}

Topology Topology::Edgeless(int num_agents) { return FromEdges(num_agents, {}); }

Eigen::MatrixXd laplacian(const Topology& topo) {
  const Eigen::MatrixXd& adj = topo.adjacency();
  Eigen::MatrixXd L = -adj;
  L.diagonal() = adj.rowwise().sum();
  return L;
}

namespace {

// Flip each column so that its largest-magnitude entry is positive. Near-ties
// resolve to the lowest row index.
void canonicalize_signs(Eigen::MatrixXd& basis, Eigen::Index first_col) {
  for (Eigen::Index c = first_col; c < basis.cols(); ++c) {
    const double peak = basis.col(c).cwiseAbs().maxCoeff();
    for (Eigen::Index r = 0; r < basis.rows(); ++r) {
      if (std::abs(basis(r, c)) >= peak * (1.0 - 1e-9)) {
        if (basis(r, c) < 0.0) basis.col(c) *= -1.0;
        break;
      }
    }
  }
}

}  // namespace

LaplacianSpectrum spectrum(const Topology& topo) {
  const Eigen::MatrixXd L = laplacian(topo);
  const Eigen::Index N = L.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::kEigenFailure, "Laplacian eigen-decomposition failed");
  }

  LaplacianSpectrum spec;
  spec.eigenvalues = es.eigenvalues();
  const double tol = 1e-9 * std::max(1.0, spec.eigenvalues(N - 1));
  for (Eigen::Index i = 0; i < N; ++i) {
    if (std::abs(spec.eigenvalues(i)) <= tol) spec.eigenvalues(i) = 0.0;
  }

  // The all-ones direction always lies in the kernel. Rebuild the kernel
  // block so that it leads with the normalized ones vector.
  Eigen::Index kernel_dim = 0;
  while (kernel_dim < N && spec.eigenvalues(kernel_dim) == 0.0) ++kernel_dim;
  kernel_dim = std::max<Eigen::Index>(kernel_dim, 1);

  const Eigen::VectorXd ones = Eigen::VectorXd::Constant(N, 1.0 / std::sqrt(double(N)));
  spec.modal_basis.resize(N, N);
  spec.modal_basis.col(0) = ones;
  if (kernel_dim > 1) {
    const Eigen::MatrixXd V0 = es.eigenvectors().leftCols(kernel_dim);
    const Eigen::MatrixXd W = V0 - ones * (ones.transpose() * V0);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeThinU);
    spec.modal_basis.middleCols(1, kernel_dim - 1) =
        svd.matrixU().leftCols(kernel_dim - 1);
  }
  spec.modal_basis.rightCols(N - kernel_dim) =
      es.eigenvectors().rightCols(N - kernel_dim);
  canonicalize_signs(spec.modal_basis, 1);
  return spec;
}

double default_connectivity_tol(const LaplacianSpectrum& spec) {
  return 1e-9 * std::max(1.0, spec.lambdaN());
}

bool is_connected(const LaplacianSpectrum& spec, std::optional<double> tol) {
  return spec.lambda2() > tol.value_or(default_connectivity_tol(spec));
}

double graph_factor(const LaplacianSpectrum& spec) {
  if (!is_connected(spec)) {
    throw Error(ErrorCode::kDisconnected,
                fmt::format("lambda_2 = {} is not positive", spec.lambda2()));
  }
  const double l2 = spec.lambda2();
  const double lN = spec.lambdaN();
  const double ratio = (lN - l2) / (lN + l2);
  return 1.0 - ratio * ratio;
}

}  // namespace consensus_lab
