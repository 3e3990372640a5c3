#include "consensus_lab/model.h"

#include <cmath>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <fmt/format.h>

#include "consensus_lab/error.h"

namespace consensus_lab {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kRankDeficientB: return "RankDeficientB";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kInvalidWeights: return "InvalidWeights";
    case ErrorCode::kInvalidTopology: return "InvalidTopology";
    case ErrorCode::kDisconnected: return "Disconnected";
    case ErrorCode::kEigenFailure: return "EigenFailure";
    case ErrorCode::kSingularBracket: return "SingularBracket";
    case ErrorCode::kNotStabilizable: return "NotStabilizable";
    case ErrorCode::kSingularP: return "SingularP";
    case ErrorCode::kHistoryLengthMismatch: return "HistoryLengthMismatch";
    case ErrorCode::kSynthesisFailed: return "SynthesisFailed";
    case ErrorCode::kPreconditionViolated: return "PreconditionViolated";
    case ErrorCode::kCheckFailed: return "CheckFailed";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

int numerical_rank(const Eigen::Ref<const Eigen::MatrixXd>& M,
                   double relative_tol) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& s = svd.singularValues();
  const double largest = s(0);
  if (largest == 0.0) return 0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > relative_tol * largest) ++rank;
  }
  return rank;
}

ValidationReport validate_plant(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                const Eigen::Ref<const Eigen::MatrixXd>& B,
                                int delay) {
  if (A.rows() < 1 || A.rows() != A.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("A must be square and non-empty, got {}x{}",
                            A.rows(), A.cols()));
  }
  if (B.rows() != A.rows() || B.cols() < 1) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("B must be {}xm with m >= 1, got {}x{}", A.rows(),
                            B.rows(), B.cols()));
  }
  if (B.cols() > B.rows()) {
    throw Error(ErrorCode::kRankDeficientB,
                fmt::format("B has more columns ({}) than rows ({})", B.cols(),
                            B.rows()));
  }
  if (delay < 0) {
    throw Error(ErrorCode::kOutOfRange, "delay must be nonnegative");
  }
  if (!A.allFinite() || !B.allFinite()) {
    throw Error(ErrorCode::kOutOfRange, "A and B must be finite");
  }

  ValidationReport report;
  report.rank_B = numerical_rank(B);
  if (report.rank_B < B.cols()) {
    throw Error(ErrorCode::kRankDeficientB,
                fmt::format("rank(B) = {} < m = {}", report.rank_B, B.cols()));
  }

  Eigen::EigenSolver<Eigen::MatrixXd> es(A, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::kEigenFailure, "eigenvalues of A did not converge");
  }
  const Eigen::VectorXd moduli = es.eigenvalues().cwiseAbs();
  report.spectral_radius_A = moduli.maxCoeff();
  report.eigenvalues_on_or_outside_unit_circle =
      (moduli.array() >= 1.0 - kUnitCircleTolerance).all();
  if (!report.eigenvalues_on_or_outside_unit_circle) {
    report.warnings.push_back(fmt::format(
        "A has eigenvalues strictly inside the unit circle (min modulus {:.6g}); "
        "consensusability verdicts remain valid but may be conservative",
        moduli.minCoeff()));
  }
  return report;
}

ValidationReport validate_plant(const PlantModel& plant) {
  return validate_plant(plant.A(), plant.B(), plant.delay());
}

Eigen::MatrixXd matrix_power(const Eigen::Ref<const Eigen::MatrixXd>& M,
                             int k) {
  if (M.rows() != M.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "matrix_power needs a square matrix");
  }
  if (k < 0) throw Error(ErrorCode::kOutOfRange, "negative matrix power");
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(M.rows(), M.cols());
  Eigen::MatrixXd base = M;
  while (k > 0) {
    if (k & 1) result = result * base;
    k >>= 1;
    if (k > 0) base = base * base;
  }
  return result;
}

double scalar_power(double a, int k) {
  if (k < 0) throw Error(ErrorCode::kOutOfRange, "negative power");
  double result = 1.0;
  while (k > 0) {
    if (k & 1) result *= a;
    k >>= 1;
    if (k > 0) a *= a;
  }
  return result;
}

PlantModel::PlantModel(Eigen::MatrixXd A, Eigen::MatrixXd B, int delay)
    : A_(std::move(A)), B_(std::move(B)), delay_(delay) {
  validate_plant(A_, B_, delay_);
  A_pow_d_ = matrix_power(A_, delay_);
  A_pow_d_B_ = A_pow_d_ * B_;
}

ChannelModel::ChannelModel(double p) : p_(p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("dropout rate must lie in [0, 1), got {}", p));
  }
}

ChannelModel channel_from_p(double p) { return ChannelModel(p); }

namespace {

void require_spd(const Eigen::MatrixXd& M, const char* name) {
  if (M.rows() < 1 || M.rows() != M.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("{} must be square and non-empty", name));
  }
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::kInvalidWeights,
                fmt::format("{} must be symmetric", name));
  }
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kInvalidWeights,
                fmt::format("{} must be positive definite", name));
  }
}

}  // namespace

Weights::Weights(Eigen::MatrixXd Q, Eigen::MatrixXd R)
    : Q_(std::move(Q)), R_(std::move(R)) {
  require_spd(Q_, "Q");
  require_spd(R_, "R");
  Q_ = 0.5 * (Q_ + Q_.transpose()).eval();
  R_ = 0.5 * (R_ + R_.transpose()).eval();
}

Weights Weights::Identity(int n, int m) {
  return Weights(Eigen::MatrixXd::Identity(n, n),
                 Eigen::MatrixXd::Identity(m, m));
}

void check_weights_match(const PlantModel& plant, const Weights& weights) {
  if (weights.Q().rows() != plant.n() || weights.R().rows() != plant.m()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("weights are Q {}x{}, R {}x{} but plant has n={}, m={}",
                            weights.Q().rows(), weights.Q().cols(),
                            weights.R().rows(), weights.R().cols(), plant.n(),
                            plant.m()));
  }
}

}  // namespace consensus_lab
