#include "consensus_lab/riccati.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "consensus_lab/error.h"
#include "test_util.h"

namespace consensus_lab {
namespace {

using Eigen::MatrixXd;
using test::Scalar;

PareProblem ScalarProblem(double a, double b, int d, double gamma,
                          RiccatiMode mode = RiccatiMode::kDelayAware) {
  return PareProblem(PlantModel(Scalar(a), Scalar(b), d), Weights::Identity(1, 1), gamma, mode);
}

GTEST_TEST(GGamma, ZeroPGivesQ) {
  std::mt19937_64 rng(2);
  const MatrixXd Q = test::RandomPsd(3, &rng, 0.5);
  const PlantModel plant(test::RandomMatrix(3, 3, &rng), test::RandomMatrix(3, 2, &rng), 2);
  for (double gamma : {0.0, 0.4, 1.0}) {
    const PareProblem prob(plant, Weights(Q, MatrixXd::Identity(2, 2)), gamma);
    EXPECT_TRUE(g_gamma(MatrixXd::Zero(3, 3), prob).isApprox(Q, 1e-14));
  }
}

GTEST_TEST(GGamma, ZeroGammaIsLyapunovStep) {
  std::mt19937_64 rng(3);
  const MatrixXd A = test::RandomMatrix(3, 3, &rng);
  const PareProblem prob(PlantModel(A, test::RandomMatrix(3, 1, &rng), 1),
                         Weights::Identity(3, 1), 0.0);
  const MatrixXd P = test::RandomPsd(3, &rng);
  EXPECT_TRUE(g_gamma(P, prob).isApprox(A.transpose() * P * A + MatrixXd::Identity(3, 3), 1e-12));
}

GTEST_TEST(GGamma, ScalarOracle) {
  const PareProblem prob = ScalarProblem(1.1, 1.0, 1, 1.0);
  const double expected = test::ScalarG(1.0, 1.1, 1.0, 1, 1.0, 1.0, 1.0);
  EXPECT_NEAR(g_gamma(Scalar(1.0), prob)(0, 0), expected, 1e-14);
  EXPECT_NEAR(expected, 2.21 - 1.21 / (1.0 + 1.0 + 1.21), 1e-14);
}

GTEST_TEST(GGamma, ClassicModeDropsDelayTerm) {
  const PareProblem prob = ScalarProblem(1.3, 0.7, 2, 0.6, RiccatiMode::kClassic);
  EXPECT_NEAR(g_gamma(Scalar(2.5), prob)(0, 0),
              test::ScalarG(2.5, 1.3, 0.7, 2, 1.0, 1.0, 0.6, true), 1e-13);
  EXPECT_NEAR(pare_bracket(Scalar(2.5), prob)(0, 0), 1.0 + 0.49 * 2.5, 1e-14);
}

GTEST_TEST(GGamma, GammaOutOfRange) {
  EXPECT_THROW(ScalarProblem(1.0, 1.0, 0, 1.5), Error);
  EXPECT_THROW(ScalarProblem(1.0, 1.0, 0, -0.1), Error);
}

GTEST_TEST(PhiPsi, ZeroGain) {
  std::mt19937_64 rng(5);
  const MatrixXd A = test::RandomMatrix(2, 2, &rng);
  const PareProblem prob(PlantModel(A, test::RandomMatrix(2, 1, &rng), 1),
                         Weights::Identity(2, 1), 0.3);
  const MatrixXd P = test::RandomPsd(2, &rng);
  const PhiPsi pp = phi_psi(MatrixXd::Zero(1, 2), P, prob);
  EXPECT_TRUE(pp.Phi.isApprox(A.transpose() * P * A + MatrixXd::Identity(2, 2), 1e-12));
}

GTEST_TEST(PhiPsi, UnitGammaEndpoint) {
  std::mt19937_64 rng(6);
  const PareProblem prob(PlantModel(test::RandomMatrix(3, 3, &rng), test::RandomMatrix(3, 2, &rng), 2),
                         Weights::Identity(3, 2), 1.0);
  const PhiPsi pp = phi_psi(test::RandomMatrix(2, 3, &rng), test::RandomPsd(3, &rng), prob);
  EXPECT_TRUE(pp.Phi.isApprox(pp.Psi, 1e-12));
}

GTEST_TEST(PhiPsi, OptimalGainAttainsG) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const test::RandomInstance inst = test::MakeRandomInstance(&rng);
    const PareProblem prob(inst.plant, inst.weights, inst.gamma);
    const MatrixXd K = optimal_gain(inst.P, prob);
    const MatrixXd g = g_gamma(inst.P, prob);
    EXPECT_LT((phi_psi(K, inst.P, prob).Phi - g).norm(), 1e-9 * (1.0 + g.norm()));
  }
}

GTEST_TEST(OrderProperties, RandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const test::RandomInstance inst = test::MakeRandomInstance(&rng);
    const test::OrderMargins margins = test::EvaluateOrderMargins(inst);
    EXPECT_GE(margins.minimization, -1e-9) << trial;
    EXPECT_GE(margins.monotone_P, -1e-9) << trial;
    EXPECT_GE(margins.antimonotone_gamma, -1e-9) << trial;
    EXPECT_GE(margins.concavity, -1e-9) << trial;
    EXPECT_GE(margins.floor, -1e-9) << trial;
  }
}

GTEST_TEST(SolvePare, StableLyapunovFixedPoint) {
  const PareOutcome out = solve_pare(ScalarProblem(0.5, 1.0, 0, 0.0));
  ASSERT_TRUE(out.converged());
  EXPECT_NEAR(out.solution->P(0, 0), 4.0 / 3.0, 1e-8);
}

GTEST_TEST(SolvePare, OpenLoopUnstableDiverges) {
  const PareOutcome out = solve_pare(ScalarProblem(1.1, 1.0, 0, 0.0));
  EXPECT_EQ(out.status, PareStatus::kDivergent);
  EXPECT_FALSE(out.solution.has_value());
}

GTEST_TEST(SolvePare, ScalarFixedPointOracle) {
  const PareOutcome out = solve_pare(ScalarProblem(1.1, 1.0, 1, 0.9));
  ASSERT_TRUE(out.converged());
  const auto oracle = test::ScalarFixedPoint(1.1, 1.0, 1, 1.0, 1.0, 0.9);
  ASSERT_TRUE(oracle.has_value());
  EXPECT_NEAR(out.solution->P(0, 0), *oracle, 1e-7 * *oracle);
  EXPECT_LT(out.solution->residual, 1e-7);
  EXPECT_NEAR(out.solution->K_P(0, 0),
              -1.1 * *oracle / (1.0 + (1.0 + 1.21) * *oracle), 1e-7);
}

GTEST_TEST(SolvePare, StalledWhenBudgetTooSmall) {
  SolverOptions opts;
  opts.max_iter = 3;
  EXPECT_EQ(solve_pare(ScalarProblem(1.1, 1.0, 1, 0.9), opts).status, PareStatus::kStalled);
}

GTEST_TEST(SolvePare, CustomDivergenceCap) {
  SolverOptions opts;
  opts.divergence_cap = 10.0;
  const PareOutcome out = solve_pare(ScalarProblem(1.1, 1.0, 0, 0.0), opts);
  EXPECT_EQ(out.status, PareStatus::kDivergent);
  EXPECT_LT(out.iterations, 20);
}

GTEST_TEST(SolvePare, InitialConditionIndependence) {
  std::mt19937_64 rng(13);
  MatrixXd A(2, 2);
  A << 1.05, 0.2, 0.0, 0.95;
  MatrixXd B(2, 1);
  B << 0.3, 1.0;
  const PareProblem prob(PlantModel(A, B, 2), Weights::Identity(2, 1), 0.9);
  const PareOutcome base = solve_pare(prob);
  ASSERT_TRUE(base.converged());
  const SolverOptions opts;
  for (int trial = 0; trial < 5; ++trial) {
    const PareOutcome other = solve_pare(prob, opts, test::RandomPsd(2, &rng, 0.0, 3.0));
    ASSERT_TRUE(other.converged());
    EXPECT_LT((other.solution->P - base.solution->P).norm(),
              10.0 * opts.tol * (1.0 + base.solution->P.norm()));
  }
  const MatrixXd step = g_gamma(base.solution->P, prob);
  EXPECT_LT((step - base.solution->P).norm(), opts.tol * (1.0 + base.solution->P.norm()));
}

GTEST_TEST(SolvePare, InitialGuessDimensionChecked) {
  EXPECT_THROW(solve_pare(ScalarProblem(1.1, 1.0, 1, 0.9), {}, MatrixXd::Zero(2, 2)), Error);
}

GTEST_TEST(CriticalGamma, ScalarSlopeOracle) {
  for (int d : {0, 1, 2}) {
    const CriticalValue cv = critical_gamma(PlantModel(Scalar(1.1), Scalar(1.0), d),
                                            Weights::Identity(1, 1), 1e-4);
    EXPECT_NEAR(cv.gamma_c, test::ScalarSlopeGammaC(1.1, d), 1e-3) << d;
    EXPECT_LE(cv.bracket_width, 1e-4);
    EXPECT_TRUE(cv.feasible_at_one);
    EXPECT_FALSE(cv.probes.empty());
  }
  EXPECT_NEAR(test::ScalarSlopeGammaC(1.1, 1), 0.38355, 1e-5);
}

GTEST_TEST(CriticalGamma, MarginallyStableScalar) {
  const CriticalValue cv =
      critical_gamma(PlantModel(Scalar(1.0), Scalar(1.0), 1), Weights::Identity(1, 1), 1e-4);
  EXPECT_EQ(cv.lower_bound, 0.0);
  // Every gamma > 0 is feasible; convergence slows as gamma -> 0, so the
  // bisection stops within a small multiple of its tolerance.
  EXPECT_NEAR(cv.gamma_c, 0.0, 1e-3);
}

GTEST_TEST(CriticalGamma, NotStabilizable) {
  try {
    critical_gamma(PlantModel(Scalar(2.0), Scalar(1.0), 1), Weights::Identity(1, 1), 1e-4);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotStabilizable);
  }
}

GTEST_TEST(CriticalGamma, ClassicClosedForm) {
  const CriticalValue cv = critical_gamma_classic(PlantModel(Scalar(2.0), Scalar(1.0), 0),
                                                  Weights::Identity(1, 1), 1e-4);
  EXPECT_NEAR(cv.gamma_c, 0.75, 1e-3);
  const CriticalValue unit = critical_gamma_classic(PlantModel(Scalar(1.0), Scalar(1.0), 0),
                                                    Weights::Identity(1, 1), 1e-4);
  EXPECT_NEAR(unit.gamma_c, 0.0, 1e-3);
}

GTEST_TEST(CriticalGamma, ClassicDiagonalSweep) {
  // With A diagonal and B = Q = R = I the classic recursion decouples into
  // scalar channels, each checked by the scalar fixed-point oracle.
  MatrixXd A = MatrixXd::Zero(2, 2);
  A.diagonal() << 2.0, 1.5;
  const PlantModel plant(A, MatrixXd::Identity(2, 2), 0);
  const Weights weights = Weights::Identity(2, 2);
  const CriticalValue cv = critical_gamma_classic(plant, weights, 1e-4);
  EXPECT_NEAR(cv.gamma_c, 0.75, 1e-3);
  for (int j = 1; j < 40; ++j) {
    const double gamma = j / 40.0 + 0.003;
    const bool oracle = test::ScalarFixedPoint(2.0, 1.0, 0, 1.0, 1.0, gamma, true).has_value() &&
                        test::ScalarFixedPoint(1.5, 1.0, 0, 1.0, 1.0, gamma, true).has_value();
    const bool solver =
        solve_pare(PareProblem(plant, weights, gamma, RiccatiMode::kClassic)).converged();
    EXPECT_EQ(solver, oracle) << gamma;
  }
}

GTEST_TEST(CriticalGamma, LowerBound) {
  EXPECT_EQ(gamma_lower_bound(Scalar(0.5)), 0.0);
  EXPECT_NEAR(gamma_lower_bound(Scalar(2.0)), 0.75, 1e-15);
  EXPECT_THROW(critical_gamma(PlantModel(Scalar(1.1), Scalar(1.0), 0), Weights::Identity(1, 1), 0.0),
               Error);
}

GTEST_TEST(CriticalGamma, ThresholdSandwichAndMonotoneFeasibility) {
  MatrixXd A(2, 2);
  A << 1.2, 0.5, 0.0, 1.05;
  MatrixXd B(2, 1);
  B << 0.0, 1.0;
  const PlantModel plant(A, B, 1);
  const Weights weights = Weights::Identity(2, 1);
  const CriticalValue cv = critical_gamma(plant, weights, 1e-4);
  EXPECT_LE(cv.lower_bound, cv.gamma_c);
  bool seen_feasible = false;
  for (int j = 0; j <= 50; ++j) {
    const double gamma = j / 50.0;
    const PareOutcome out = solve_pare(PareProblem(plant, weights, gamma));
    if (seen_feasible) {
      EXPECT_TRUE(out.converged()) << gamma;
    }
    if (out.converged()) {
      seen_feasible = true;
      if (gamma > 0.0 && certify(*out.solution, plant) == CertificateStatus::kCertified) {
        EXPECT_LE(cv.gamma_c, gamma + cv.bracket_width);
      }
    }
  }
  EXPECT_TRUE(seen_feasible);
}

GTEST_TEST(MsStabilizable, Examples) {
  const Weights w = Weights::Identity(1, 1);
  EXPECT_TRUE(ms_stabilizable(PlantModel(Scalar(1.1), Scalar(1.0), 1), w));
  EXPECT_FALSE(ms_stabilizable(PlantModel(Scalar(2.0), Scalar(1.0), 1), w));
  for (int d : {0, 3, 7}) EXPECT_TRUE(ms_stabilizable(PlantModel(Scalar(0.5), Scalar(-2.0), d), w));
}

GTEST_TEST(Lmi, StableOpenLoopWithZeroGain) {
  const PlantModel plant(Scalar(0.5), Scalar(1.0), 1);
  int passing = 0;
  for (double eps : {1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0}) {
    if (lmi_certificate_check(Scalar(eps), Scalar(0.0), 1.0, plant)) ++passing;
  }
  EXPECT_EQ(passing, 6);
}

GTEST_TEST(Lmi, ZeroYFails) {
  const PlantModel plant(Scalar(0.5), Scalar(1.0), 1);
  EXPECT_FALSE(lmi_certificate_check(Scalar(0.0), Scalar(0.3), 0.5, plant));
  EXPECT_FALSE(lmi_certificate_check(Scalar(0.0), Scalar(0.0), 1.0, plant));
}

GTEST_TEST(Lmi, YAboveIdentityFails) {
  const PlantModel plant(Scalar(0.5), Scalar(1.0), 1);
  EXPECT_FALSE(lmi_certificate_check(Scalar(1.5), Scalar(0.0), 1.0, plant));
}

GTEST_TEST(Lmi, BlockStructure) {
  std::mt19937_64 rng(17);
  const PlantModel plant(test::RandomMatrix(2, 2, &rng), test::RandomMatrix(2, 1, &rng), 2);
  const MatrixXd Y = test::RandomPsd(2, &rng, 0.1);
  const MatrixXd Z = test::RandomMatrix(1, 2, &rng);
  const MatrixXd G = lmi_block(Y, Z, 0.7, plant);
  ASSERT_EQ(G.rows(), 8);
  EXPECT_TRUE(G.isApprox(G.transpose(), 1e-14));
  EXPECT_TRUE(G.block(0, 0, 2, 2).isApprox(Y));
  EXPECT_TRUE(G.block(2, 0, 2, 2).isApprox(std::sqrt(0.7) * (plant.A() * Y + plant.B() * Z)));
  EXPECT_TRUE(G.block(4, 0, 2, 2).isApprox(std::sqrt(0.7) * plant.A_pow_d_B() * Z));
  EXPECT_TRUE(G.block(6, 0, 2, 2).isApprox(std::sqrt(0.3) * plant.A() * Y));
  EXPECT_EQ(lmi_block(Y, Z, 0.7, plant, RiccatiMode::kClassic).rows(), 6);
  EXPECT_THROW(lmi_block(Y, MatrixXd::Zero(2, 1), 0.7, plant), Error);
}

GTEST_TEST(Certificate, FromScalarSolution) {
  const PareProblem prob = ScalarProblem(1.1, 1.0, 1, 0.9);
  const PareOutcome out = solve_pare(prob);
  ASSERT_TRUE(out.converged());
  const LmiCertificate cert = certificate_from_solution(*out.solution);
  EXPECT_TRUE(lmi_certificate_check(cert.Y, cert.Z, 0.9, prob.plant));
  EXPECT_EQ(certify(*out.solution, prob.plant), CertificateStatus::kCertified);
}

GTEST_TEST(Certificate, IdentityPlant) {
  const PareProblem prob = ScalarProblem(1.0, 1.0, 0, 1.0);
  const PareOutcome out = solve_pare(prob);
  ASSERT_TRUE(out.converged());
  const LmiCertificate cert = certificate_from_solution(*out.solution);
  EXPECT_TRUE(lmi_certificate_check(cert.Y, cert.Z, 1.0, prob.plant));
}

GTEST_TEST(Certificate, NearBoundaryDoesNotThrow) {
  const PlantModel plant(Scalar(1.1), Scalar(1.0), 1);
  const CriticalValue cv = critical_gamma(plant, Weights::Identity(1, 1), 1e-4);
  const double gamma = std::min(1.0, cv.gamma_c + cv.bracket_width);
  const PareOutcome out = solve_pare(PareProblem(plant, Weights::Identity(1, 1), gamma));
  if (out.converged()) {
    const CertificateStatus status = certify(*out.solution, plant);
    EXPECT_TRUE(status == CertificateStatus::kCertified ||
                status == CertificateStatus::kBoundaryInconclusive);
  }
}

GTEST_TEST(Certificate, Preconditions) {
  PareSolution sol;
  sol.P = Scalar(1.0);
  sol.K_P = Scalar(0.0);
  sol.gamma = 0.0;
  try {
    certificate_from_solution(sol);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPreconditionViolated);
  }
  sol.gamma = 0.5;
  sol.P = Scalar(0.0);
  try {
    certificate_from_solution(sol);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingularP);
  }
}

GTEST_TEST(SpectralRadius, Examples) {
  EXPECT_NEAR(spectral_radius(MatrixXd::Identity(3, 3)), 1.0, 1e-15);
  MatrixXd nil(2, 2);
  nil << 0, 1, 0, 0;
  EXPECT_EQ(spectral_radius(nil), 0.0);
  const double theta = 0.7;
  MatrixXd rot(2, 2);
  rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  // det(sI - 1.3 R) = s^2 - 2.6 cos(theta) s + 1.69: |s|^2 = 1.69.
  EXPECT_NEAR(spectral_radius(1.3 * rot), 1.3, 1e-12);
}

GTEST_TEST(UnstableProduct, Examples) {
  MatrixXd A = MatrixXd::Zero(2, 2);
  A.diagonal() << 2.0, 0.5;
  EXPECT_NEAR(unstable_product(A), 4.0, 1e-12);
  EXPECT_NEAR(unstable_product(MatrixXd::Identity(2, 2)), 1.0, 1e-12);
  MatrixXd companion(2, 2);
  companion << 2.0, -1.25, 1.0, 0.0;
  EXPECT_NEAR(unstable_product(companion), 1.5625, 1e-12);
  EXPECT_EQ(unstable_product(0.5 * MatrixXd::Identity(3, 3)), 1.0);
}

}  // namespace
}  // namespace consensus_lab
