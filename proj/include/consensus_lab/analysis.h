#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "consensus_lab/model.h"
#include "consensus_lab/riccati.h"
#include "consensus_lab/topology.h"

namespace consensus_lab {

/// Tri-state outcome of a strict inequality test, plus a guard value for
/// tests that do not apply to the given plant.
enum class Verdict { kHolds, kFails, kInconclusive, kNotApplicable };

const char* to_string(Verdict v);
inline bool holds(Verdict v) { return v == Verdict::kHolds; }

/// Relative margin for strict inequalities; closer calls are Inconclusive.
inline constexpr double kStrictMargin = 1e-9;

/// lhs > rhs with margin kStrictMargin * max(1, |lhs|, |rhs|).
Verdict strictly_greater(double lhs, double rhs);

struct AnalysisOptions {
  SolverOptions solver;
  /// Width of the gamma_c bisection bracket. gamma_2 within 2 * gamma_tol of
  /// gamma_c is reported Inconclusive.
  double gamma_tol = 1e-4;
  RiccatiMode mode = RiccatiMode::kDelayAware;
};

struct ModalGammas {
  /// gamma_i for modes i = 2..N; gamma_i[0] is mode 2.
  std::vector<double> gamma_i;
  double gamma_2 = 0.0;
};

/// gamma_i = mu^2/(mu^2+sigma^2) * 4(l_i(l_2+l_N) - l_i^2)/(l_2+l_N)^2.
/// gamma_2 is computed through the graph-factor product form and checked
/// against gamma_i[0].
ModalGammas modal_gammas(const LaplacianSpectrum& spec, const ChannelModel& ch);

struct SufficiencyResult {
  Verdict verdict = Verdict::kInconclusive;
  double gamma_2 = 0.0;
  /// (1 - p) * graph_factor, the same quantity evaluated the other way.
  double gamma_2_from_p = 0.0;
  CriticalValue critical;
};

/// gamma_2 > gamma_c. Throws Error{kNotStabilizable} or Error{kDisconnected}
/// when the corresponding standing assumption fails.
SufficiencyResult check_sufficient(const PlantModel& plant,
                                   const Weights& weights,
                                   const LaplacianSpectrum& spec,
                                   const ChannelModel& ch,
                                   const AnalysisOptions& opts = {});

/// Prod |lambda^u(A)|^2 < ((1 + l_2/l_N) / (1 - l_2/l_N))^2 for rank(B) = 1;
/// kNotApplicable otherwise. l_2 = l_N makes the bound infinite.
Verdict check_necessary_rank1(const PlantModel& plant,
                              const LaplacianSpectrum& spec);

/// Exact scalar condition
///   mu^2/(mu^2 + a^{2d} sigma^2) * graph_factor > 1 - 1/a^2.
/// Requires a >= 1 and b > 0 (Error{kPreconditionViolated}).
Verdict check_scalar_exact(double a, double b, int delay, const ChannelModel& ch,
                           const LaplacianSpectrum& spec);

/// Closed-form scalar consensus gain
///   k = 2 mu a / ((mu^2 + sigma^2 a^{2d}) (l_2 + l_N) b).
double scalar_consensus_gain(double a, double b, int delay,
                             const ChannelModel& ch,
                             const LaplacianSpectrum& spec);

struct ModalCheck {
  int mode = 0;  // 2..N
  double lambda = 0.0;
  /// P - F1'PF1 - sigma^2 F2'PF2 > 0.
  bool lyapunov_ok = false;
  /// rho(F1 (x) F1 + sigma^2 F2 (x) F2): the delay-free equivalent is
  /// mean-square stable iff this is below one.
  double kron_radius = 0.0;
  /// Spectral radius of the second-moment recursion of the predictor,
  ///   S(k+1) = F1 S(k) F1' + sigma^2 F2 S(k-d) F2',
  /// i.e. the asymptotic per-step decay factor of E|delta_i(k)|^2 under the
  /// delayed protocol. Equals kron_radius when d = 0.
  double delayed_moment_radius = 0.0;

  bool stable() const { return kron_radius < 1.0; }
};

/// Per-mode check with F1 = A - l_i mu B K and F2 = l_i A^d B K.
std::vector<ModalCheck> verify_modal_stability(
    const Eigen::Ref<const Eigen::MatrixXd>& K,
    const Eigen::Ref<const Eigen::MatrixXd>& P, const PlantModel& plant,
    const ChannelModel& ch, const LaplacianSpectrum& spec);

/// Decay factor of the delayed second-moment recursion for one mode.
double delayed_moment_radius(const Eigen::Ref<const Eigen::MatrixXd>& F1,
                             const Eigen::Ref<const Eigen::MatrixXd>& F2,
                             double sigma2, int delay);

struct GainSynthesis {
  Eigen::MatrixXd K;
  Eigen::MatrixXd P;
  double gamma = 0.0;  // gamma at which P solves the PARE (gamma_2)
  std::vector<ModalCheck> modes;
};

/// Solves the PARE at gamma_2 and sets
///   K = 2 mu/(l_2 + l_N) [mu^2 B'PB + sigma^2 B'(A')^d P A^d B + eps I]^{-1} B'PA.
/// Throws Error{kPreconditionViolated} unless `sufficiency` holds and
/// Error{kSynthesisFailed} if any mode fails verify_modal_stability.
GainSynthesis synthesize_gain(const PlantModel& plant, const Weights& weights,
                              const LaplacianSpectrum& spec,
                              const ChannelModel& ch,
                              const SufficiencyResult& sufficiency,
                              const AnalysisOptions& opts = {},
                              double regularization = 0.0);

/// Runs check_sufficient first.
GainSynthesis synthesize_gain(const PlantModel& plant, const Weights& weights,
                              const LaplacianSpectrum& spec,
                              const ChannelModel& ch,
                              const AnalysisOptions& opts = {});

/// Formation offsets H_1..H_N, each in R^n.
struct FormationSpec {
  std::vector<Eigen::VectorXd> H;
};

/// |(A - I)(H_i - Hbar)| <= tol (1 + |H_i - Hbar|) for every agent.
bool formation_admissible(const PlantModel& plant, const FormationSpec& formation,
                          double tol = 1e-9);

struct ConsensusReport {
  double gamma_2 = 0.0;
  std::optional<CriticalValue> critical;
  Verdict sufficient = Verdict::kInconclusive;
  Verdict necessary_rank1 = Verdict::kNotApplicable;
  Verdict scalar_exact = Verdict::kNotApplicable;
  /// Present iff `sufficient` holds.
  std::optional<Eigen::MatrixXd> gain;
  std::optional<Eigen::MatrixXd> riccati_P;
  /// Per-mode checks of the synthesized gain, or of the closed-form scalar
  /// gain when sufficiency fails on a scalar plant.
  std::vector<ModalCheck> modal;
  bool modal_from_scalar_gain = false;
  Verdict formation = Verdict::kNotApplicable;
  std::vector<std::string> notes;

  bool consensusable() const { return holds(sufficient); }
  /// kHolds when sufficiency holds, kFails when a necessary condition fails,
  /// kInconclusive otherwise.
  Verdict overall() const;
  std::vector<bool> modal_stable() const;
};

ConsensusReport full_report(const PlantModel& plant, const Weights& weights,
                            const Topology& topo, const ChannelModel& ch,
                            const std::optional<FormationSpec>& formation = std::nullopt,
                            const AnalysisOptions& opts = {});

}  // namespace consensus_lab
