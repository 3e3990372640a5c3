#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include <Eigen/Dense>

#include "consensus_lab/model.h"
#include "consensus_lab/riccati.h"

namespace consensus_lab {
namespace test {

inline Eigen::MatrixXd Scalar(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

inline Eigen::MatrixXd RandomMatrix(int rows, int cols, std::mt19937_64* rng,
                                    double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd M(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) M(i, j) = normal(*rng);
  return M;
}

// W'W + shift I.
inline Eigen::MatrixXd RandomPsd(int n, std::mt19937_64* rng, double shift = 0.0,
                                 double scale = 1.0) {
  const Eigen::MatrixXd W = RandomMatrix(n, n, rng, scale);
  Eigen::MatrixXd P = W.transpose() * W + shift * Eigen::MatrixXd::Identity(n, n);
  return 0.5 * (P + P.transpose());
}

inline double MinEigenvalue(const Eigen::MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Independent scalar evaluation of the Riccati map
//   g(x) = a^2 x + q - gamma a^2 b^2 x^2 / (r + b^2 x + [a^{2d} b^2 x]).
inline double ScalarG(double x, double a, double b, int d, double q, double r,
                      double gamma, bool classic = false) {
  const double a2d = std::pow(a, 2.0 * d);
  const double denom = r + b * b * x + (classic ? 0.0 : a2d * b * b * x);
  return a * a * x + q - gamma * a * a * b * b * x * x / denom;
}

// Fixed point of the scalar map by bisection on g(x) - x, or nullopt when
// g(x) > x for all x up to 1e15 (no bounded solution).
inline std::optional<double> ScalarFixedPoint(double a, double b, int d, double q,
                                              double r, double gamma,
                                              bool classic = false) {
  auto f = [&](double x) { return ScalarG(x, a, b, d, q, r, gamma, classic) - x; };
  double lo = 0.0;
  double hi = 1.0;
  while (f(hi) >= 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e15) return std::nullopt;
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) >= 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Critical value from the large-x slope of the scalar map:
// a^2 (1 - gamma / (1 + a^{2d})) = 1.
inline double ScalarSlopeGammaC(double a, int d) {
  return (1.0 + std::pow(a, 2.0 * d)) * (1.0 - 1.0 / (a * a));
}

// Random problem data for order-property checks.
struct RandomInstance {
  PlantModel plant;
  Weights weights;
  Eigen::MatrixXd P;
  Eigen::MatrixXd P2;  // P + W'W
  Eigen::MatrixXd K;
  double gamma;
  double gamma2;  // >= gamma
  double alpha;
};

inline RandomInstance MakeRandomInstance(std::mt19937_64* rng, int max_n = 4,
                                         int max_m = 2, int max_d = 3) {
  std::uniform_int_distribution<int> n_dist(1, max_n);
  const int n = n_dist(*rng);
  const int m = std::uniform_int_distribution<int>(1, std::min(n, max_m))(*rng);
  const int d = std::uniform_int_distribution<int>(0, max_d)(*rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd B;
  do {
    B = RandomMatrix(n, m, rng);
  } while (numerical_rank(B) < m);
  PlantModel plant(RandomMatrix(n, n, rng, 0.6), B, d);
  Weights weights(RandomPsd(n, rng, 0.1), RandomPsd(m, rng, 0.1));
  const Eigen::MatrixXd P = RandomPsd(n, rng);
  const Eigen::MatrixXd P2 = P + RandomPsd(n, rng);
  const double g1 = unit(*rng);
  const double g2 = g1 + (1.0 - g1) * unit(*rng);
  const double alphas[] = {0.25, 0.5, 0.75};
  return RandomInstance{std::move(plant), std::move(weights), P, P2,
                        RandomMatrix(m, n, rng), g1, g2,
                        alphas[std::uniform_int_distribution<int>(0, 2)(*rng)]};
}

// Minimum eigenvalues of the differences that must be PSD, one per property:
// minimization, monotonicity in P, anti-monotonicity in gamma, concavity and
// the floor bound.
struct OrderMargins {
  double minimization;
  double monotone_P;
  double antimonotone_gamma;
  double concavity;
  double floor;
};

inline OrderMargins EvaluateOrderMargins(const RandomInstance& inst) {
  const PareProblem prob(inst.plant, inst.weights, inst.gamma);
  const PareProblem prob2(inst.plant, inst.weights, inst.gamma2);
  const Eigen::MatrixXd& A = inst.plant.A();
  const Eigen::MatrixXd g = g_gamma(inst.P, prob);
  OrderMargins out;
  out.minimization = MinEigenvalue(phi_psi(inst.K, inst.P, prob).Phi - g);
  out.monotone_P = MinEigenvalue(g_gamma(inst.P2, prob) - g);
  out.antimonotone_gamma = MinEigenvalue(g - g_gamma(inst.P, prob2));
  const double a = inst.alpha;
  const Eigen::MatrixXd mix = a * inst.P + (1.0 - a) * inst.P2;
  out.concavity =
      MinEigenvalue(g_gamma(mix, prob) - (a * g + (1.0 - a) * g_gamma(inst.P2, prob)));
  out.floor = MinEigenvalue(
      g - ((1.0 - inst.gamma) * A.transpose() * inst.P * A + inst.weights.Q()));
  return out;
}

}  // namespace test
}  // namespace consensus_lab
