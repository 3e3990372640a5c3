#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "consensus_lab/model.h"

namespace consensus_lab {

/// kDelayAware keeps the B'(A')^d P A^d B term in the bracket of g_gamma.
/// kClassic drops it, giving the modified ARE of the intermittent-observation
/// literature.
enum class RiccatiMode { kDelayAware, kClassic };

struct PareProblem {
  PareProblem(PlantModel plant, Weights weights, double gamma,
              RiccatiMode mode = RiccatiMode::kDelayAware);

  PlantModel plant;
  Weights weights;
  double gamma;
  RiccatiMode mode;
};

/// R + B'PB + B'(A')^d P A^d B (classic mode: R + B'PB).
Eigen::MatrixXd pare_bracket(const Eigen::Ref<const Eigen::MatrixXd>& P,
                             const PareProblem& prob);

/// K_P = -bracket(P)^{-1} B'PA, the minimizer of Phi(., P).
Eigen::MatrixXd optimal_gain(const Eigen::Ref<const Eigen::MatrixXd>& P,
                             const PareProblem& prob);

/// g_gamma(P) = A'PA + Q - gamma A'PB bracket(P)^{-1} B'PA, symmetrized.
Eigen::MatrixXd g_gamma(const Eigen::Ref<const Eigen::MatrixXd>& P,
                        const PareProblem& prob);

struct PhiPsi {
  Eigen::MatrixXd Phi;
  Eigen::MatrixXd Psi;
};

/// Phi(K,P) = (1-gamma)(A'PA + Q) + gamma Psi(K,P),
/// Psi(K,P) = F1'PF1 + F2'PF2 + K'RK + Q with F1 = A + BK, F2 = A^d B K.
/// F2 is omitted in classic mode.
PhiPsi phi_psi(const Eigen::Ref<const Eigen::MatrixXd>& K,
               const Eigen::Ref<const Eigen::MatrixXd>& P,
               const PareProblem& prob);

struct SolverOptions {
  /// Relative step tolerance: stop when |P+ - P|_F <= tol (1 + |P|_F).
  double tol = 1e-9;
  int max_iter = 100000;
  /// Absolute cap on trace(P_t). Defaults to 1e12 * trace(Q).
  std::optional<double> divergence_cap;
};

enum class PareStatus { kConverged, kDivergent, kStalled };

const char* to_string(PareStatus status);

struct PareSolution {
  Eigen::MatrixXd P;
  Eigen::MatrixXd K_P;
  double gamma = 0.0;
  int iterations = 0;
  /// |P - g_gamma(P)|_F at the returned P.
  double residual = 0.0;
  RiccatiMode mode = RiccatiMode::kDelayAware;
};

struct PareOutcome {
  PareStatus status = PareStatus::kStalled;
  int iterations = 0;
  double final_trace = 0.0;
  std::optional<PareSolution> solution;  // set iff converged

  bool converged() const { return status == PareStatus::kConverged; }
};

/// Iterates P_{t+1} = g_gamma(P_t), from zero unless `initial` is given.
/// Divergent means trace(P_t) exceeded the cap, or the budget ran out while
/// trace(P_t) was still growing by more than 1e-6 per step over the last 50
/// steps. Stalled means the budget ran out otherwise.
PareOutcome solve_pare(const PareProblem& prob, const SolverOptions& opts = {},
                       const std::optional<Eigen::MatrixXd>& initial = std::nullopt);

struct GammaProbe {
  double gamma = 0.0;
  PareStatus status = PareStatus::kStalled;
  int iterations = 0;
};

struct CriticalValue {
  double gamma_c = 0.0;
  double lower_bound = 0.0;
  double bracket_width = 0.0;
  bool feasible_at_one = false;
  /// Every evaluated gamma, in evaluation order.
  std::vector<GammaProbe> probes;
};

/// max(0, 1 - 1/rho(A)^2): below it even the gain-free floor recursion
/// (1 - gamma) A'SA + Q = S has no PSD solution.
double gamma_lower_bound(const Eigen::Ref<const Eigen::MatrixXd>& A);

/// Bisection on PARE boundedness over [gamma_lower_bound(A), 1]. Feasible
/// means solve_pare converges from zero; divergent and stalled probes both
/// count as infeasible. Throws Error{kNotStabilizable} if gamma = 1 is
/// infeasible.
CriticalValue critical_gamma(const PlantModel& plant, const Weights& weights,
                             double tol, const SolverOptions& opts = {},
                             RiccatiMode mode = RiccatiMode::kDelayAware);

/// critical_gamma in RiccatiMode::kClassic.
CriticalValue critical_gamma_classic(const PlantModel& plant,
                                     const Weights& weights, double tol,
                                     const SolverOptions& opts = {});

/// The PARE converges at gamma = 1.
bool ms_stabilizable(const PlantModel& plant, const Weights& weights,
                     const SolverOptions& opts = {},
                     RiccatiMode mode = RiccatiMode::kDelayAware);

/// Block matrix
///   [ Y                 sqrt(g)(AY+BZ)'  sqrt(g)(A^dBZ)'  sqrt(1-g)(AY)' ]
///   [ sqrt(g)(AY+BZ)    Y                0                0              ]
///   [ sqrt(g)A^dBZ      0                Y                0              ]
///   [ sqrt(1-g)AY       0                0                Y              ]
/// The A^dBZ row and column are absent in classic mode. Z is m x n.
Eigen::MatrixXd lmi_block(const Eigen::Ref<const Eigen::MatrixXd>& Y,
                          const Eigen::Ref<const Eigen::MatrixXd>& Z,
                          double gamma, const PlantModel& plant,
                          RiccatiMode mode = RiccatiMode::kDelayAware);

/// True iff lmi_block(Y, Z) is positive definite and 0 <= Y <= I.
bool lmi_certificate_check(const Eigen::Ref<const Eigen::MatrixXd>& Y,
                           const Eigen::Ref<const Eigen::MatrixXd>& Z,
                           double gamma, const PlantModel& plant,
                           RiccatiMode mode = RiccatiMode::kDelayAware);

struct LmiCertificate {
  Eigen::MatrixXd Y;
  Eigen::MatrixXd Z;
};

/// Y = 0.99 lambda_min(P) P^{-1}, Z = K_P Y. Throws Error{kSingularP} unless
/// P is positive definite, and Error{kPreconditionViolated} when gamma <= 0.
LmiCertificate certificate_from_solution(const PareSolution& sol);

enum class CertificateStatus { kCertified, kBoundaryInconclusive };

/// Builds the certificate from `sol` and checks it. A failure is reported as
/// kBoundaryInconclusive: near gamma_c strictness is lost numerically.
CertificateStatus certify(const PareSolution& sol, const PlantModel& plant);

/// max |lambda_i(M)|.
double spectral_radius(const Eigen::Ref<const Eigen::MatrixXd>& M);

/// Product of |lambda|^2 over eigenvalues with |lambda| >= 1 - tol; 1 when
/// there are none.
double unstable_product(const Eigen::Ref<const Eigen::MatrixXd>& A,
                        double tol = kUnitCircleTolerance);

}  // namespace consensus_lab
