#include "consensus_lab/analysis.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Cholesky>
#include <unsupported/Eigen/KroneckerProduct>
#include <fmt/format.h>

#include "consensus_lab/error.h"

namespace consensus_lab {

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kHolds: return "holds";
    case Verdict::kFails: return "fails";
    case Verdict::kInconclusive: return "inconclusive";
    case Verdict::kNotApplicable: return "not_applicable";
  }
  return "unknown";
}

Verdict strictly_greater(double lhs, double rhs) {
  if (std::isinf(lhs) || std::isinf(rhs)) {
    if (lhs == rhs) return Verdict::kInconclusive;
    return lhs > rhs ? Verdict::kHolds : Verdict::kFails;
  }
  const double margin =
      kStrictMargin * std::max({1.0, std::abs(lhs), std::abs(rhs)});
  const double diff = lhs - rhs;
  if (diff > margin) return Verdict::kHolds;
  if (diff < -margin) return Verdict::kFails;
  return Verdict::kInconclusive;
}

namespace {

double channel_ratio(const ChannelModel& ch) {
  const double mu2 = ch.mu() * ch.mu();
  return mu2 / (mu2 + ch.sigma2());
}

void require_connected(const LaplacianSpectrum& spec) {
  if (!is_connected(spec)) {
    throw Error(ErrorCode::kDisconnected,
                fmt::format("lambda_2 = {} is not positive", spec.lambda2()));
  }
}

}  // namespace

ModalGammas modal_gammas(const LaplacianSpectrum& spec, const ChannelModel& ch) {
  require_connected(spec);
  const double ratio = channel_ratio(ch);
  const double l2 = spec.lambda2();
  const double lN = spec.lambdaN();
  const double sum = l2 + lN;

  ModalGammas out;
  for (int i = 1; i < spec.num_agents(); ++i) {
    const double li = spec.eigenvalues(i);
    out.gamma_i.push_back(ratio * 4.0 * (li * sum - li * li) / (sum * sum));
  }
  out.gamma_2 = ratio * graph_factor(spec);
  if (std::abs(out.gamma_2 - out.gamma_i.front()) > 1e-12) {
    throw Error(ErrorCode::kCheckFailed,
                fmt::format("gamma_2 forms disagree: {} vs {}", out.gamma_2,
                            out.gamma_i.front()));
  }
  return out;
}

SufficiencyResult check_sufficient(const PlantModel& plant,
                                   const Weights& weights,
                                   const LaplacianSpectrum& spec,
                                   const ChannelModel& ch,
                                   const AnalysisOptions& opts) {
  SufficiencyResult result;
  result.gamma_2 = modal_gammas(spec, ch).gamma_2;
  result.gamma_2_from_p = (1.0 - ch.p()) * graph_factor(spec);
  if (std::abs(result.gamma_2 - result.gamma_2_from_p) > 1e-12) {
    throw Error(ErrorCode::kCheckFailed,
                fmt::format("gamma_2 = {} but (1-p) * graph_factor = {}",
                            result.gamma_2, result.gamma_2_from_p));
  }
  result.critical =
      critical_gamma(plant, weights, opts.gamma_tol, opts.solver, opts.mode);

  const double guard = 2.0 * opts.gamma_tol;
  const double diff = result.gamma_2 - result.critical.gamma_c;
  if (diff > guard) {
    result.verdict = Verdict::kHolds;
  } else if (diff < -guard) {
    result.verdict = Verdict::kFails;
  } else {
    result.verdict = Verdict::kInconclusive;
  }
  return result;
}

Verdict check_necessary_rank1(const PlantModel& plant,
                              const LaplacianSpectrum& spec) {
  if (numerical_rank(plant.B()) != 1) return Verdict::kNotApplicable;
  require_connected(spec);
  const double ratio = spec.lambda2() / spec.lambdaN();
  const double product = unstable_product(plant.A());
  if (std::abs(1.0 - ratio) <= kStrictMargin) return Verdict::kHolds;
  const double bound = std::pow((1.0 + ratio) / (1.0 - ratio), 2);
  return strictly_greater(bound, product);
}

Verdict check_scalar_exact(double a, double b, int delay, const ChannelModel& ch,
                           const LaplacianSpectrum& spec) {
  if (!(a >= 1.0) || !(b > 0.0) || delay < 0) {
    throw Error(ErrorCode::kPreconditionViolated,
                fmt::format("scalar test needs a >= 1, b > 0, d >= 0 (a={}, b={}, d={})",
                            a, b, delay));
  }
  const double mu2 = ch.mu() * ch.mu();
  const double a2d = scalar_power(a * a, delay);
  const double lhs = mu2 / (mu2 + a2d * ch.sigma2()) * graph_factor(spec);
  const double rhs = 1.0 - 1.0 / (a * a);
  return strictly_greater(lhs, rhs);
}

double scalar_consensus_gain(double a, double b, int delay,
                             const ChannelModel& ch,
                             const LaplacianSpectrum& spec) {
  require_connected(spec);
  const double mu = ch.mu();
  const double a2d = scalar_power(a * a, delay);
  return 2.0 * mu * a /
         ((mu * mu + ch.sigma2() * a2d) * (spec.lambda2() + spec.lambdaN()) * b);
}

double delayed_moment_radius(const Eigen::Ref<const Eigen::MatrixXd>& F1,
                             const Eigen::Ref<const Eigen::MatrixXd>& F2,
                             double sigma2, int delay) {
  const Eigen::MatrixXd K1 = Eigen::kroneckerProduct(F1, F1).eval();
  const Eigen::MatrixXd K2 = sigma2 * Eigen::kroneckerProduct(F2, F2).eval();
  const Eigen::Index s = K1.rows();
  const Eigen::Index blocks = delay + 1;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(blocks * s, blocks * s);
  C.topLeftCorner(s, s) = K1;
  C.block(0, delay * s, s, s) += K2;
  for (Eigen::Index b = 1; b < blocks; ++b) {
    C.block(b * s, (b - 1) * s, s, s).setIdentity();
  }
  return spectral_radius(C);
}

std::vector<ModalCheck> verify_modal_stability(
    const Eigen::Ref<const Eigen::MatrixXd>& K,
    const Eigen::Ref<const Eigen::MatrixXd>& P, const PlantModel& plant,
    const ChannelModel& ch, const LaplacianSpectrum& spec) {
  const int n = plant.n();
  if (K.rows() != plant.m() || K.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("K must be {}x{}, got {}x{}", plant.m(), n, K.rows(),
                            K.cols()));
  }
  if (P.rows() != n || P.cols() != n) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("P must be {}x{}, got {}x{}", n, n, P.rows(), P.cols()));
  }
  const Eigen::MatrixXd Psym = 0.5 * (P + P.transpose());
  if (Eigen::LLT<Eigen::MatrixXd>(Psym).info() != Eigen::Success) {
    throw Error(ErrorCode::kPreconditionViolated, "P must be positive definite");
  }

  const Eigen::MatrixXd BK = plant.B() * K;
  const Eigen::MatrixXd AdBK = plant.A_pow_d_B() * K;
  std::vector<ModalCheck> checks;
  for (int i = 1; i < spec.num_agents(); ++i) {
    ModalCheck c;
    c.mode = i + 1;
    c.lambda = spec.eigenvalues(i);
    const Eigen::MatrixXd F1 = plant.A() - c.lambda * ch.mu() * BK;
    const Eigen::MatrixXd F2 = c.lambda * AdBK;
    Eigen::MatrixXd gap = Psym - F1.transpose() * Psym * F1 -
                          ch.sigma2() * F2.transpose() * Psym * F2;
    gap = 0.5 * (gap + gap.transpose()).eval();
    c.lyapunov_ok = Eigen::LLT<Eigen::MatrixXd>(gap).info() == Eigen::Success;
    c.kron_radius = spectral_radius(
        Eigen::kroneckerProduct(F1, F1).eval() +
        ch.sigma2() * Eigen::kroneckerProduct(F2, F2).eval());
    c.delayed_moment_radius =
        delayed_moment_radius(F1, F2, ch.sigma2(), plant.delay());
    checks.push_back(c);
  }
  return checks;
}

GainSynthesis synthesize_gain(const PlantModel& plant, const Weights& weights,
                              const LaplacianSpectrum& spec,
                              const ChannelModel& ch,
                              const SufficiencyResult& sufficiency,
                              const AnalysisOptions& opts,
                              double regularization) {
  if (!holds(sufficiency.verdict)) {
    throw Error(ErrorCode::kPreconditionViolated,
                fmt::format("gain synthesis needs gamma_2 > gamma_c (gamma_2 = {}, "
                            "gamma_c = {}, verdict {})",
                            sufficiency.gamma_2, sufficiency.critical.gamma_c,
                            to_string(sufficiency.verdict)));
  }
  GainSynthesis out;
  out.gamma = sufficiency.gamma_2;
  const PareOutcome solved =
      solve_pare(PareProblem(plant, weights, out.gamma, opts.mode), opts.solver);
  if (!solved.converged()) {
    throw Error(ErrorCode::kSynthesisFailed,
                fmt::format("PARE at gamma_2 = {} is {} after {} iterations",
                            out.gamma, to_string(solved.status), solved.iterations));
  }
  out.P = solved.solution->P;

  const double mu = ch.mu();
  const Eigen::MatrixXd& B = plant.B();
  const Eigen::MatrixXd& AdB = plant.A_pow_d_B();
  Eigen::MatrixXd M = mu * mu * (B.transpose() * out.P * B) +
                      ch.sigma2() * (AdB.transpose() * out.P * AdB);
  M.diagonal().array() += regularization;
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (M + M.transpose()));
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kSynthesisFailed, "gain bracket is not positive definite");
  }
  const double scale = 2.0 * mu / (spec.lambda2() + spec.lambdaN());
  out.K = scale * llt.solve(B.transpose() * out.P * plant.A());

  out.modes = verify_modal_stability(out.K, out.P, plant, ch, spec);
  for (const auto& c : out.modes) {
    if (!c.lyapunov_ok || !c.stable()) {
      throw Error(ErrorCode::kSynthesisFailed,
                  fmt::format("mode {} (lambda = {}) fails verification: "
                              "lyapunov_ok = {}, kron_radius = {}",
                              c.mode, c.lambda, c.lyapunov_ok, c.kron_radius));
    }
  }
  return out;
}

GainSynthesis synthesize_gain(const PlantModel& plant, const Weights& weights,
                              const LaplacianSpectrum& spec,
                              const ChannelModel& ch,
                              const AnalysisOptions& opts) {
  return synthesize_gain(plant, weights, spec, ch,
                         check_sufficient(plant, weights, spec, ch, opts), opts);
}

bool formation_admissible(const PlantModel& plant, const FormationSpec& formation,
                          double tol) {
  const int n = plant.n();
  if (formation.H.empty()) {
    throw Error(ErrorCode::kDimensionMismatch, "formation has no offsets");
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  for (const auto& h : formation.H) {
    if (h.size() != n) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("formation offset has size {}, expected {}", h.size(), n));
    }
    mean += h;
  }
  mean /= static_cast<double>(formation.H.size());
  const Eigen::MatrixXd AmI = plant.A() - Eigen::MatrixXd::Identity(n, n);
  for (const auto& h : formation.H) {
    const Eigen::VectorXd v = h - mean;
    if ((AmI * v).norm() > tol * (1.0 + v.norm())) return false;
  }
  return true;
}

Verdict ConsensusReport::overall() const {
  if (holds(sufficient) || holds(scalar_exact)) return Verdict::kHolds;
  if (scalar_exact == Verdict::kFails || necessary_rank1 == Verdict::kFails) {
    return Verdict::kFails;
  }
  return Verdict::kInconclusive;
}

std::vector<bool> ConsensusReport::modal_stable() const {
  std::vector<bool> out;
  for (const auto& c : modal) out.push_back(c.stable());
  return out;
}

ConsensusReport full_report(const PlantModel& plant, const Weights& weights,
                            const Topology& topo, const ChannelModel& ch,
                            const std::optional<FormationSpec>& formation,
                            const AnalysisOptions& opts) {
  check_weights_match(plant, weights);
  ConsensusReport report;
  const LaplacianSpectrum spec = spectrum(topo);
  if (!is_connected(spec)) {
    report.sufficient = Verdict::kFails;
    report.notes.push_back("graph is disconnected (lambda_2 = 0)");
    return report;
  }
  for (const auto& w : validate_plant(plant).warnings) report.notes.push_back(w);

  std::optional<SufficiencyResult> sufficiency;
  report.gamma_2 = modal_gammas(spec, ch).gamma_2;
  try {
    sufficiency = check_sufficient(plant, weights, spec, ch, opts);
    report.critical = sufficiency->critical;
    report.sufficient = sufficiency->verdict;
    if (sufficiency->verdict == Verdict::kInconclusive) {
      report.notes.push_back(fmt::format(
          "gamma_2 = {} is within the bisection guard of gamma_c = {}",
          report.gamma_2, sufficiency->critical.gamma_c));
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotStabilizable) throw;
    report.sufficient = Verdict::kFails;
    report.notes.push_back(
        "(A, B, 0, A^d B) is not mean-square stabilizable: PARE diverges at gamma = 1");
  }

  report.necessary_rank1 = check_necessary_rank1(plant, spec);
  if (report.necessary_rank1 == Verdict::kInconclusive) {
    report.notes.push_back("rank-1 necessary condition is at equality");
  }

  const bool scalar_applicable =
      plant.is_scalar() && plant.A()(0, 0) >= 1.0 && plant.B()(0, 0) > 0.0;
  if (scalar_applicable) {
    report.scalar_exact = check_scalar_exact(plant.A()(0, 0), plant.B()(0, 0),
                                             plant.delay(), ch, spec);
  } else if (plant.is_scalar()) {
    report.notes.push_back("scalar exact test needs a >= 1 and b > 0");
  }

  if (holds(report.sufficient)) {
    try {
      GainSynthesis syn =
          synthesize_gain(plant, weights, spec, ch, *sufficiency, opts);
      report.gain = std::move(syn.K);
      report.riccati_P = std::move(syn.P);
      report.modal = std::move(syn.modes);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSynthesisFailed) throw;
      report.sufficient = Verdict::kInconclusive;
      report.notes.push_back(e.what());
    }
  } else if (scalar_applicable) {
    const double k = scalar_consensus_gain(plant.A()(0, 0), plant.B()(0, 0),
                                           plant.delay(), ch, spec);
    report.modal = verify_modal_stability(Eigen::MatrixXd::Constant(1, 1, k),
                                          Eigen::MatrixXd::Identity(1, 1), plant,
                                          ch, spec);
    report.modal_from_scalar_gain = true;
    report.notes.push_back(
        fmt::format("modal checks use the closed-form scalar gain k = {}", k));
  }

  if (formation) {
    if (static_cast<int>(formation->H.size()) != topo.num_agents()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("formation has {} offsets for {} agents",
                              formation->H.size(), topo.num_agents()));
    }
    if (!formation_admissible(plant, *formation)) {
      report.formation = Verdict::kFails;
      report.notes.push_back("formation offsets are not fixed by A");
    } else {
      report.formation = report.overall();
    }
  }
  return report;
}

}  // namespace consensus_lab
