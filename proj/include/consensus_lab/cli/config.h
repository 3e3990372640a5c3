#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "consensus_lab/analysis.h"
#include "consensus_lab/model.h"
#include "consensus_lab/riccati.h"
#include "consensus_lab/simulator.h"
#include "consensus_lab/topology.h"

namespace consensus_lab::cli {

inline constexpr int kSchemaVersion = 1;

struct GraphConfig {
  int num_agents = 0;
  /// complete | path | star | ring; empty when an edge list is given.
  std::string generator;
  std::vector<WeightedEdge> edges;
};

struct SimSection {
  int horizon = 200;
  int runs = 200;
  std::uint64_t seed = 0;
  std::optional<std::vector<Eigen::VectorXd>> x0;
  std::optional<std::vector<std::vector<Eigen::VectorXd>>> u_hist;
};

struct SolverSection {
  double tol = 1e-9;
  int max_iter = 100000;
  double gamma_tol = 1e-4;
  bool classic_mode = false;
  std::optional<double> divergence_cap;
};

struct SweepSection {
  std::string parameter;  // p | d | gamma
  std::vector<double> grid;
};

/// Parsed experiment file. Dimensions are cross-checked by build(), before
/// any computation.
struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  int delay = 0;
  double p = 0.0;
  GraphConfig graph;
  std::optional<Eigen::MatrixXd> Q;
  std::optional<Eigen::MatrixXd> R;
  std::optional<std::vector<Eigen::VectorXd>> formation;
  std::optional<Eigen::MatrixXd> gain;
  SimSection sim;
  SolverSection solver;
  std::optional<SweepSection> sweep;
};

/// Throws Error{kParseError} on malformed or missing fields.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// Validated domain objects built from a config.
struct Experiment {
  PlantModel plant;
  ChannelModel channel;
  Topology topology;
  Weights weights;
  std::optional<FormationSpec> formation;
  InitialConditions initial;
  SimConfig sim;
  AnalysisOptions analysis;
};

/// Throws Error with the failing component's code.
Experiment build(const ExperimentConfig& cfg);

Topology build_topology(const GraphConfig& graph);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& M);
nlohmann::json vectors_to_json(const std::vector<Eigen::VectorXd>& vs);

}  // namespace consensus_lab::cli
