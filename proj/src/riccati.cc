#include "consensus_lab/riccati.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <fmt/format.h>

#include "consensus_lab/error.h"

namespace consensus_lab {

namespace {

constexpr double kGrowthRatio = 1.0 + 1e-6;
constexpr int kGrowthWindow = 50;

// Cached operands of g_gamma for one problem. The iteration calls apply()
// up to max_iter times, so temporaries are kept as members.
class PareOperator {
 public:
  explicit PareOperator(const PareProblem& prob)
      : A_(prob.plant.A()),
        At_(prob.plant.A().transpose()),
        B_(prob.plant.B()),
        AdB_(prob.plant.A_pow_d_B()),
        Q_(prob.weights.Q()),
        R_(prob.weights.R()),
        gamma_(prob.gamma),
        delay_aware_(prob.mode == RiccatiMode::kDelayAware) {}

  Eigen::MatrixXd bracket(const Eigen::Ref<const Eigen::MatrixXd>& P) const {
    Eigen::MatrixXd M = R_ + B_.transpose() * P * B_;
    if (delay_aware_) M.noalias() += AdB_.transpose() * P * AdB_;
    return M;
  }

  // B'PA.
  Eigen::MatrixXd cross(const Eigen::Ref<const Eigen::MatrixXd>& P) const {
    return B_.transpose() * P * A_;
  }

  Eigen::MatrixXd gain(const Eigen::Ref<const Eigen::MatrixXd>& P) const {
    return -factor(bracket(P)).solve(cross(P));
  }

  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& P) const {
    const Eigen::MatrixXd BtPA = cross(P);
    Eigen::MatrixXd out = At_ * P * A_ + Q_;
    if (gamma_ != 0.0) {
      const auto llt = factor(bracket(P));
      out.noalias() -= gamma_ * (BtPA.transpose() * llt.solve(BtPA));
    }
    return 0.5 * (out + out.transpose());
  }

 private:
  static Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& M) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success) {
      throw Error(ErrorCode::kSingularBracket,
                  "R + B'PB (+ delay term) is not positive definite");
    }
    return llt;
  }

  const Eigen::MatrixXd& A_;
  Eigen::MatrixXd At_;
  const Eigen::MatrixXd& B_;
  const Eigen::MatrixXd& AdB_;
  const Eigen::MatrixXd& Q_;
  const Eigen::MatrixXd& R_;
  double gamma_;
  bool delay_aware_;
};

void check_square(const Eigen::Ref<const Eigen::MatrixXd>& P, int n,
                  const char* name) {
  if (P.rows() != n || P.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("{} must be {}x{}, got {}x{}", name, n, n, P.rows(),
                            P.cols()));
  }
}

}  // namespace

PareProblem::PareProblem(PlantModel plant_in, Weights weights_in,
                         double gamma_in, RiccatiMode mode_in)
    : plant(std::move(plant_in)),
      weights(std::move(weights_in)),
      gamma(gamma_in),
      mode(mode_in) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("gamma must lie in [0, 1], got {}", gamma));
  }
  check_weights_match(plant, weights);
}

Eigen::MatrixXd pare_bracket(const Eigen::Ref<const Eigen::MatrixXd>& P,
                             const PareProblem& prob) {
  check_square(P, prob.plant.n(), "P");
  return PareOperator(prob).bracket(P);
}

Eigen::MatrixXd optimal_gain(const Eigen::Ref<const Eigen::MatrixXd>& P,
                             const PareProblem& prob) {
  check_square(P, prob.plant.n(), "P");
  return PareOperator(prob).gain(P);
}

Eigen::MatrixXd g_gamma(const Eigen::Ref<const Eigen::MatrixXd>& P,
                        const PareProblem& prob) {
  check_square(P, prob.plant.n(), "P");
  return PareOperator(prob).apply(P);
}

PhiPsi phi_psi(const Eigen::Ref<const Eigen::MatrixXd>& K,
               const Eigen::Ref<const Eigen::MatrixXd>& P,
               const PareProblem& prob) {
  const auto& plant = prob.plant;
  check_square(P, plant.n(), "P");
  if (K.rows() != plant.m() || K.cols() != plant.n()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("K must be {}x{}", plant.m(), plant.n()));
  }
  const Eigen::MatrixXd& A = plant.A();
  const Eigen::MatrixXd& Q = prob.weights.Q();
  const Eigen::MatrixXd F1 = A + plant.B() * K;
  Eigen::MatrixXd Psi =
      F1.transpose() * P * F1 + K.transpose() * prob.weights.R() * K + Q;
  if (prob.mode == RiccatiMode::kDelayAware) {
    const Eigen::MatrixXd F2 = plant.A_pow_d_B() * K;
    Psi.noalias() += F2.transpose() * P * F2;
  }
  Psi = 0.5 * (Psi + Psi.transpose()).eval();
  Eigen::MatrixXd Phi =
      (1.0 - prob.gamma) * (A.transpose() * P * A + Q) + prob.gamma * Psi;
  Phi = 0.5 * (Phi + Phi.transpose()).eval();
  return {std::move(Phi), std::move(Psi)};
}

const char* to_string(PareStatus status) {
  switch (status) {
    case PareStatus::kConverged: return "converged";
    case PareStatus::kDivergent: return "divergent";
    case PareStatus::kStalled: return "stalled";
  }
  return "unknown";
}

PareOutcome solve_pare(const PareProblem& prob, const SolverOptions& opts,
                       const std::optional<Eigen::MatrixXd>& initial) {
  const int n = prob.plant.n();
  const PareOperator op(prob);
  const double cap =
      opts.divergence_cap.value_or(1e12 * prob.weights.Q().trace());

  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  if (initial) {
    check_square(*initial, n, "initial P");
    P = 0.5 * (*initial + initial->transpose());
  }

  PareOutcome outcome;
  int growth_streak = 0;
  double trace = P.trace();
  for (int t = 1; t <= opts.max_iter; ++t) {
    Eigen::MatrixXd next = op.apply(P);
    const double next_trace = next.trace();
    outcome.iterations = t;
    outcome.final_trace = next_trace;
    if (!std::isfinite(next_trace) || next_trace > cap) {
      outcome.status = PareStatus::kDivergent;
      return outcome;
    }
    const double step = (next - P).norm();
    if (step <= opts.tol * (1.0 + P.norm())) {
      PareSolution sol;
      sol.P = std::move(next);
      sol.K_P = op.gain(sol.P);
      sol.gamma = prob.gamma;
      sol.iterations = t;
      sol.residual = (sol.P - op.apply(sol.P)).norm();
      sol.mode = prob.mode;
      outcome.status = PareStatus::kConverged;
      outcome.solution = std::move(sol);
      return outcome;
    }
    if (trace > 0.0 && next_trace > kGrowthRatio * trace) {
      ++growth_streak;
    } else {
      growth_streak = 0;
    }
    P = std::move(next);
    trace = next_trace;
  }
  outcome.status = growth_streak >= kGrowthWindow ? PareStatus::kDivergent
                                                  : PareStatus::kStalled;
  return outcome;
}

double gamma_lower_bound(const Eigen::Ref<const Eigen::MatrixXd>& A) {
  const double rho = spectral_radius(A);
  if (rho <= 1.0) return 0.0;
  return std::max(0.0, 1.0 - 1.0 / (rho * rho));
}

CriticalValue critical_gamma(const PlantModel& plant, const Weights& weights,
                             double tol, const SolverOptions& opts,
                             RiccatiMode mode) {
  if (!(tol > 0.0)) {
    throw Error(ErrorCode::kOutOfRange, "bisection tolerance must be positive");
  }
  check_weights_match(plant, weights);

  CriticalValue cv;
  auto feasible = [&](double gamma) {
    const PareOutcome out =
        solve_pare(PareProblem(plant, weights, gamma, mode), opts);
    cv.probes.push_back({gamma, out.status, out.iterations});
    return out.converged();
  };

  cv.lower_bound = gamma_lower_bound(plant.A());
  cv.feasible_at_one = feasible(1.0);
  if (!cv.feasible_at_one) {
    throw Error(ErrorCode::kNotStabilizable,
                "the Riccati iteration is unbounded at gamma = 1");
  }
  if (feasible(cv.lower_bound)) {
    // Only reachable for Schur-stable A, where lower_bound = 0.
    cv.gamma_c = cv.lower_bound;
    cv.bracket_width = 0.0;
    return cv;
  }
  double lo = cv.lower_bound;
  double hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (feasible(mid) ? hi : lo) = mid;
  }
  cv.gamma_c = 0.5 * (lo + hi);
  cv.bracket_width = hi - lo;
  return cv;
}

CriticalValue critical_gamma_classic(const PlantModel& plant,
                                     const Weights& weights, double tol,
                                     const SolverOptions& opts) {
  return critical_gamma(plant, weights, tol, opts, RiccatiMode::kClassic);
}

bool ms_stabilizable(const PlantModel& plant, const Weights& weights,
                     const SolverOptions& opts, RiccatiMode mode) {
  return solve_pare(PareProblem(plant, weights, 1.0, mode), opts).converged();
}

Eigen::MatrixXd lmi_block(const Eigen::Ref<const Eigen::MatrixXd>& Y,
                          const Eigen::Ref<const Eigen::MatrixXd>& Z,
                          double gamma, const PlantModel& plant,
                          RiccatiMode mode) {
  const int n = plant.n();
  check_square(Y, n, "Y");
  if (Z.rows() != plant.m() || Z.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("Z must be {}x{}, got {}x{}", plant.m(), n, Z.rows(),
                            Z.cols()));
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::kOutOfRange, "gamma must lie in [0, 1]");
  }
  const bool delay_aware = mode == RiccatiMode::kDelayAware;
  const int blocks = delay_aware ? 4 : 3;
  const double sg = std::sqrt(gamma);
  const double sc = std::sqrt(1.0 - gamma);

  const Eigen::MatrixXd AY = plant.A() * Y;
  std::vector<Eigen::MatrixXd> column;  // first block column below the diagonal
  column.push_back(sg * (AY + plant.B() * Z));
  if (delay_aware) column.push_back(sg * (plant.A_pow_d_B() * Z));
  column.push_back(sc * AY);

  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(blocks * n, blocks * n);
  for (int b = 0; b < blocks; ++b) G.block(b * n, b * n, n, n) = Y;
  for (int b = 1; b < blocks; ++b) {
    G.block(b * n, 0, n, n) = column[b - 1];
    G.block(0, b * n, n, n) = column[b - 1].transpose();
  }
  return G;
}

bool lmi_certificate_check(const Eigen::Ref<const Eigen::MatrixXd>& Y,
                           const Eigen::Ref<const Eigen::MatrixXd>& Z,
                           double gamma, const PlantModel& plant,
                           RiccatiMode mode) {
  const Eigen::MatrixXd G = lmi_block(Y, Z, gamma, plant, mode);
  const Eigen::MatrixXd Ysym = 0.5 * (Y + Y.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ysym, Eigen::EigenvaluesOnly);
  const double eps = 1e-12;
  if (es.eigenvalues().minCoeff() < -eps || es.eigenvalues().maxCoeff() > 1.0 + eps) {
    return false;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (G + G.transpose()));
  if (llt.info() != Eigen::Success) return false;
  return (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all();
}

LmiCertificate certificate_from_solution(const PareSolution& sol) {
  if (!(sol.gamma > 0.0)) {
    throw Error(ErrorCode::kPreconditionViolated,
                "certificate needs a solution at gamma > 0");
  }
  const Eigen::MatrixXd P = 0.5 * (sol.P + sol.P.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) {
    throw Error(ErrorCode::kSingularP, "P is not positive definite");
  }
  // P^{-1} from the eigen-decomposition; lambda_max(P^{-1}) = 1/lambda_min(P).
  const Eigen::MatrixXd& V = es.eigenvectors();
  const Eigen::MatrixXd P_inv =
      V * es.eigenvalues().cwiseInverse().asDiagonal() * V.transpose();
  const double scale = 0.99 * es.eigenvalues().minCoeff();
  LmiCertificate cert;
  cert.Y = scale * 0.5 * (P_inv + P_inv.transpose());
  cert.Z = sol.K_P * cert.Y;
  return cert;
}

CertificateStatus certify(const PareSolution& sol, const PlantModel& plant) {
  const LmiCertificate cert = certificate_from_solution(sol);
  return lmi_certificate_check(cert.Y, cert.Z, sol.gamma, plant, sol.mode)
             ? CertificateStatus::kCertified
             : CertificateStatus::kBoundaryInconclusive;
}

namespace {

Eigen::VectorXcd eigenvalues_of(const Eigen::Ref<const Eigen::MatrixXd>& M) {
  if (M.rows() != M.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "matrix must be square");
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::kEigenFailure, "eigenvalue computation failed");
  }
  return es.eigenvalues();
}

}  // namespace

double spectral_radius(const Eigen::Ref<const Eigen::MatrixXd>& M) {
  if (M.size() == 0) return 0.0;
  return eigenvalues_of(M).cwiseAbs().maxCoeff();
}

double unstable_product(const Eigen::Ref<const Eigen::MatrixXd>& A, double tol) {
  double product = 1.0;
  for (const auto& lambda : eigenvalues_of(A)) {
    const double modulus = std::abs(lambda);
    if (modulus >= 1.0 - tol) product *= modulus * modulus;
  }
  return product;
}

}  // namespace consensus_lab
