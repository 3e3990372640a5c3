#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "consensus_lab/analysis.h"
#include "consensus_lab/model.h"
#include "consensus_lab/topology.h"

namespace consensus_lab {

struct InitialConditions {
  /// x_i(0) for each agent.
  std::vector<Eigen::VectorXd> x0;
  /// Per agent, the d inputs u_i(-d), ..., u_i(-1), oldest first.
  std::vector<std::vector<Eigen::VectorXd>> u_hist;

  /// Zero input history and the given initial states.
  static InitialConditions FromStates(std::vector<Eigen::VectorXd> x0, int m,
                                      int delay);
};

/// Throws Error{kHistoryLengthMismatch} or Error{kDimensionMismatch}.
void check_initial_conditions(const InitialConditions& init, int num_agents,
                              const PlantModel& plant);

struct SimConfig {
  int horizon = 200;  // T
  int runs = 200;     // M
  std::uint64_t seed = 0;
  bool record_inputs = true;
  /// Worker threads for Monte Carlo; 0 means hardware concurrency.
  int threads = 0;
};

struct SimTrace {
  /// states[k] is n x N (column i = agent i), k = 0..T.
  std::vector<Eigen::MatrixXd> states;
  /// inputs[k] is m x N: the input u(k - d) consumed at step k, k = 0..T-1.
  /// Empty unless SimConfig::record_inputs.
  std::vector<Eigen::MatrixXd> inputs;
  /// gamma(k) in {0, 1}, shared by all agents, k = 0..T-1.
  std::vector<std::uint8_t> gamma;
};

struct DeviationCurve {
  /// Monte Carlo estimate of E|delta(k)|^2, k = 0..T.
  std::vector<double> ms_dev;
  std::vector<double> std_error;
  /// Mean over agent pairs of E|(x_i - H_i) - (x_j - H_j)|^2.
  std::vector<double> pairwise;
};

/// SplitMix64 finalizer applied to seed + (run_index + 1) * 0x9E3779B97F4A7C15.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t run_index);

/// A^d x(k-d) + mu sum_{j=1}^{d} A^{j-1} B u(k-d-j), with `inputs` holding
/// u(k-2d), ..., u(k-d-1) oldest first.
Eigen::VectorXd predictor(const Eigen::Ref<const Eigen::VectorXd>& x_past,
                          std::span<const Eigen::VectorXd> inputs,
                          const PlantModel& plant, const ChannelModel& ch);

/// u_i = K sum_j a_ij [(xhat_j - H_j) - (xhat_i - H_i)]. `predictors` is
/// n x N; the result is m x N.
Eigen::MatrixXd protocol_input(const Eigen::Ref<const Eigen::MatrixXd>& predictors,
                               const Topology& topo,
                               const Eigen::Ref<const Eigen::MatrixXd>& K,
                               const FormationSpec* formation = nullptr);

/// One sample path of x_i(k+1) = A x_i(k) + gamma(k) B u_i(k-d) under the
/// predictor protocol. The drop stream is seeded by mix_seed(cfg.seed,
/// run_index).
SimTrace run_trace(const PlantModel& plant, const Topology& topo,
                   const ChannelModel& ch, const Eigen::Ref<const Eigen::MatrixXd>& K,
                   const InitialConditions& init, const SimConfig& cfg,
                   std::uint64_t run_index,
                   const FormationSpec* formation = nullptr);

/// |delta(k)|^2 per step for one trace, delta_i = (x_i - H_i) - (xbar - Hbar).
std::vector<double> squared_deviation(const SimTrace& trace,
                                      const FormationSpec* formation = nullptr);

/// Averages over cfg.runs independent traces (run_index 0..M-1).
/// Aggregation order is by run index, independent of thread count.
DeviationCurve monte_carlo_deviation(const PlantModel& plant, const Topology& topo,
                                     const ChannelModel& ch,
                                     const Eigen::Ref<const Eigen::MatrixXd>& K,
                                     const InitialConditions& init,
                                     const SimConfig& cfg,
                                     const FormationSpec* formation = nullptr);

struct CheckReport {
  bool average_ok = true;
  bool modal_ok = true;
  bool replay_ok = true;
  double max_average_error = 0.0;  // relative
  double max_modal_error = 0.0;    // relative
  std::optional<int> first_bad_step;
  std::string detail;

  bool ok() const { return average_ok && modal_ok && replay_ok; }
  /// Throws Error{kCheckFailed} naming the first offending step.
  void require() const;
};

/// (a) xbar(k+1) = A xbar(k) to 1e-10 relative; (b) the first modal
/// component of delta vanishes to 1e-10 relative to |X|; (c) replaying the recorded
/// inputs and drops reproduces the states bit for bit.
CheckReport structural_checks(const SimTrace& trace, const Topology& topo,
                              const PlantModel& plant,
                              const FormationSpec* formation = nullptr);

struct UnbiasednessResult {
  double max_abs_error = 0.0;
  /// Largest |empirical mean - predictor| in units of its standard error.
  double max_z = 0.0;
  double max_std_error = 0.0;
  bool passed = false;  // max_z <= 4
};

/// Freezes a sample path up to time k - d, then re-samples gamma(k-d..k-1)
/// over `branches` continuations and compares the empirical mean of x_i(k)
/// with the predictor. Requires k >= 2d and branches >= 10^4.
UnbiasednessResult predictor_unbiasedness_check(
    const PlantModel& plant, const Topology& topo, const ChannelModel& ch,
    const Eigen::Ref<const Eigen::MatrixXd>& K, const InitialConditions& init,
    std::uint64_t seed, int k, int branches);

/// Header: k,gamma,x1_1,x1_2,...,xN_n. The last row (k = T) leaves gamma empty.
void write_trace_csv(std::ostream& out, const SimTrace& trace);

/// Header: k,ms_dev,stderr.
void write_deviation_csv(std::ostream& out, const DeviationCurve& curve);

}  // namespace consensus_lab
