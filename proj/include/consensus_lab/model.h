#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace consensus_lab {

/// Outcome of validating (A, B, d). Construction of a PlantModel throws on
/// the same conditions that make `valid` false here.
struct ValidationReport {
  int rank_B = 0;
  double spectral_radius_A = 0.0;
  /// True when every eigenvalue of A has modulus >= 1 - eps.
  bool eigenvalues_on_or_outside_unit_circle = false;
  std::vector<std::string> warnings;
};

/// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankTolerance = 1e-10;

/// Margin used when classifying eigenvalues against the unit circle.
inline constexpr double kUnitCircleTolerance = 1e-9;

/// Throws Error{kDimensionMismatch} or Error{kRankDeficientB}. Stable
/// eigenvalues of A only add a warning.
ValidationReport validate_plant(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                const Eigen::Ref<const Eigen::MatrixXd>& B,
                                int delay);

int numerical_rank(const Eigen::Ref<const Eigen::MatrixXd>& M,
                   double relative_tol = kRankTolerance);

/// Agent dynamics x(k+1) = A x(k) + gamma(k) B u(k - d).
class PlantModel {
 public:
  PlantModel(Eigen::MatrixXd A, Eigen::MatrixXd B, int delay);

  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& B() const { return B_; }
  int delay() const { return delay_; }
  int n() const { return static_cast<int>(A_.rows()); }
  int m() const { return static_cast<int>(B_.cols()); }
  bool is_scalar() const { return n() == 1 && m() == 1; }

  /// A^d, computed once by repeated squaring.
  const Eigen::MatrixXd& A_pow_d() const { return A_pow_d_; }
  /// A^d B.
  const Eigen::MatrixXd& A_pow_d_B() const { return A_pow_d_B_; }

 private:
  Eigen::MatrixXd A_;
  Eigen::MatrixXd B_;
  int delay_;
  Eigen::MatrixXd A_pow_d_;
  Eigen::MatrixXd A_pow_d_B_;
};

ValidationReport validate_plant(const PlantModel& plant);

/// Bernoulli packet channel. mu and sigma2 are derived from p and cannot be
/// set independently.
class ChannelModel {
 public:
  /// Requires 0 <= p < 1; throws Error{kOutOfRange} otherwise.
  explicit ChannelModel(double p);

  double p() const { return p_; }
  double mu() const { return 1.0 - p_; }
  double sigma2() const { return p_ * (1.0 - p_); }

 private:
  double p_;
};

ChannelModel channel_from_p(double p);

/// LQ-style weights of the Riccati iteration; both symmetric positive
/// definite.
class Weights {
 public:
  Weights(Eigen::MatrixXd Q, Eigen::MatrixXd R);
  static Weights Identity(int n, int m);

  const Eigen::MatrixXd& Q() const { return Q_; }
  const Eigen::MatrixXd& R() const { return R_; }

 private:
  Eigen::MatrixXd Q_;
  Eigen::MatrixXd R_;
};

/// Checks that Q is n x n and R is m x m.
void check_weights_match(const PlantModel& plant, const Weights& weights);

/// M^k by repeated squaring. k >= 0.
Eigen::MatrixXd matrix_power(const Eigen::Ref<const Eigen::MatrixXd>& M,
                             int k);

/// a^k by repeated squaring. k >= 0.
double scalar_power(double a, int k);

}  // namespace consensus_lab
