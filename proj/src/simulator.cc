#include "consensus_lab/simulator.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <random>
#include <thread>
#include <utility>

#include <fmt/format.h>

#include "consensus_lab/error.h"

namespace consensus_lab {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t run_index) {
  std::uint64_t z = seed + (run_index + 1) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

// Bernoulli drop stream: gamma(k) = 0 with probability p. The uniform draw is
// the top 53 bits of the engine output, so the stream is bit-exact across
// standard libraries.
class DropStream {
 public:
  DropStream(std::uint64_t seed, double p) : engine_(seed), p_(p) {}

  std::uint8_t next() {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return u < p_ ? 0 : 1;
  }

 private:
  std::mt19937_64 engine_;
  double p_;
};

// x(k+1) = A x(k) + gamma B u. Shared by the simulator and the replay check
// so both evaluate the same floating-point expression.
Eigen::MatrixXd advance(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                        const Eigen::MatrixXd& X, const Eigen::MatrixXd& U,
                        std::uint8_t gamma) {
  Eigen::MatrixXd next = A * X;
  if (gamma != 0) next.noalias() += B * U;
  return next;
}

Eigen::MatrixXd stack_columns(const std::vector<Eigen::VectorXd>& vs) {
  Eigen::MatrixXd M(vs.front().size(), static_cast<Eigen::Index>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) M.col(static_cast<Eigen::Index>(i)) = vs[i];
  return M;
}

// Closed-loop state at time t: X = x(t) and the input queue u(t-d), ..., u(t).
// u(t) is computed as soon as x(t) is known and consumed d steps later.
class Stepper {
 public:
  Stepper(const PlantModel& plant, const Topology& topo, const ChannelModel& ch,
          const Eigen::MatrixXd& K, const InitialConditions& init,
          const FormationSpec* formation)
      : plant_(&plant), ch_(&ch), K_(&K), L_(laplacian(topo)) {
    const int d = plant.delay();
    Eigen::MatrixXd Aj = Eigen::MatrixXd::Identity(plant.n(), plant.n());
    for (int j = 0; j < d; ++j) {
      A_pow_B_.push_back(Aj * plant.B());
      Aj = Aj * plant.A();
    }
    if (formation) {
      offsets_ = stack_columns(formation->H);
    } else {
      offsets_ = Eigen::MatrixXd::Zero(plant.n(), topo.num_agents());
    }
    X_ = stack_columns(init.x0);
    const int N = topo.num_agents();
    for (int s = 0; s < d; ++s) {
      Eigen::MatrixXd U(plant.m(), N);
      for (int i = 0; i < N; ++i) U.col(i) = init.u_hist[i][s];
      queue_.push_back(std::move(U));
    }
    queue_.push_back(feedback());
  }

  const Eigen::MatrixXd& state() const { return X_; }
  // u(t - d), the input the plant consumes at this step.
  const Eigen::MatrixXd& due_input() const { return queue_.front(); }

  // xhat(t + d | t) from x(t) and u(t-d), ..., u(t-1).
  Eigen::MatrixXd predictor_now() const {
    const int d = plant_->delay();
    Eigen::MatrixXd Xhat = plant_->A_pow_d() * X_;
    // queue_[d - j] holds u(t - j).
    for (int j = 1; j <= d; ++j) {
      Xhat.noalias() += ch_->mu() * (A_pow_B_[j - 1] * queue_[d - j]);
    }
    return Xhat;
  }

  void step(std::uint8_t gamma) {
    X_ = advance(plant_->A(), plant_->B(), X_, queue_.front(), gamma);
    queue_.pop_front();
    queue_.push_back(feedback());
  }

 private:
  Eigen::MatrixXd feedback() const {
    // u = -K (Xhat - H) L, i.e. u_i = K sum_j a_ij [(xhat_j - H_j) - (xhat_i - H_i)].
    return -(*K_) * (predictor_now() - offsets_) * L_;
  }

  const PlantModel* plant_;
  const ChannelModel* ch_;
  const Eigen::MatrixXd* K_;
  Eigen::MatrixXd L_;
  std::vector<Eigen::MatrixXd> A_pow_B_;  // A^{j-1} B, j = 1..d
  Eigen::MatrixXd offsets_;
  Eigen::MatrixXd X_;
  std::deque<Eigen::MatrixXd> queue_;
};

void check_gain(const Eigen::Ref<const Eigen::MatrixXd>& K, const PlantModel& plant) {
  if (K.rows() != plant.m() || K.cols() != plant.n()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("K must be {}x{}, got {}x{}", plant.m(), plant.n(),
                            K.rows(), K.cols()));
  }
}

void check_formation(const FormationSpec* formation, int num_agents, int n) {
  if (!formation) return;
  if (static_cast<int>(formation->H.size()) != num_agents) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("formation has {} offsets for {} agents",
                            formation->H.size(), num_agents));
  }
  for (const auto& h : formation->H) {
    if (h.size() != n) {
      throw Error(ErrorCode::kDimensionMismatch, "formation offset has wrong size");
    }
  }
}

// Columns of X - H minus their mean.
Eigen::MatrixXd deviation(const Eigen::MatrixXd& X, const Eigen::MatrixXd* offsets) {
  Eigen::MatrixXd shifted = offsets ? Eigen::MatrixXd(X - *offsets) : X;
  const Eigen::VectorXd mean = shifted.rowwise().mean();
  shifted.colwise() -= mean;
  return shifted;
}

}  // namespace

InitialConditions InitialConditions::FromStates(std::vector<Eigen::VectorXd> x0,
                                                int m, int delay) {
  InitialConditions init;
  init.u_hist.assign(x0.size(), std::vector<Eigen::VectorXd>(
                                    delay, Eigen::VectorXd::Zero(m)));
  init.x0 = std::move(x0);
  return init;
}

void check_initial_conditions(const InitialConditions& init, int num_agents,
                              const PlantModel& plant) {
  if (static_cast<int>(init.x0.size()) != num_agents ||
      static_cast<int>(init.u_hist.size()) != num_agents) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("initial conditions cover {} states and {} histories "
                            "for {} agents",
                            init.x0.size(), init.u_hist.size(), num_agents));
  }
  for (int i = 0; i < num_agents; ++i) {
    if (init.x0[i].size() != plant.n()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("x0 of agent {} has size {}, expected {}", i,
                              init.x0[i].size(), plant.n()));
    }
    if (static_cast<int>(init.u_hist[i].size()) != plant.delay()) {
      throw Error(ErrorCode::kHistoryLengthMismatch,
                  fmt::format("agent {} has {} past inputs, delay is {}", i,
                              init.u_hist[i].size(), plant.delay()));
    }
    for (const auto& u : init.u_hist[i]) {
      if (u.size() != plant.m()) {
        throw Error(ErrorCode::kDimensionMismatch,
                    fmt::format("past input of agent {} has size {}, expected {}",
                                i, u.size(), plant.m()));
      }
    }
  }
}

Eigen::VectorXd predictor(const Eigen::Ref<const Eigen::VectorXd>& x_past,
                          std::span<const Eigen::VectorXd> inputs,
                          const PlantModel& plant, const ChannelModel& ch) {
  const int d = plant.delay();
  if (static_cast<int>(inputs.size()) != d) {
    throw Error(ErrorCode::kHistoryLengthMismatch,
                fmt::format("predictor needs {} inputs, got {}", d, inputs.size()));
  }
  if (x_past.size() != plant.n()) {
    throw Error(ErrorCode::kDimensionMismatch, "state has wrong size");
  }
  Eigen::VectorXd out = plant.A_pow_d() * x_past;
  Eigen::MatrixXd AjB = plant.B();  // A^{j-1} B
  for (int j = 1; j <= d; ++j) {
    const Eigen::VectorXd& u = inputs[d - j];  // u(k-d-j)
    if (u.size() != plant.m()) {
      throw Error(ErrorCode::kDimensionMismatch, "input has wrong size");
    }
    out.noalias() += ch.mu() * (AjB * u);
    AjB = plant.A() * AjB;
  }
  return out;
}

Eigen::MatrixXd protocol_input(const Eigen::Ref<const Eigen::MatrixXd>& predictors,
                               const Topology& topo,
                               const Eigen::Ref<const Eigen::MatrixXd>& K,
                               const FormationSpec* formation) {
  const int N = topo.num_agents();
  if (predictors.cols() != N || K.cols() != predictors.rows()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("predictors {}x{} and K {}x{} do not fit {} agents",
                            predictors.rows(), predictors.cols(), K.rows(),
                            K.cols(), N));
  }
  check_formation(formation, N, static_cast<int>(predictors.rows()));
  Eigen::MatrixXd shifted = predictors;
  if (formation) shifted -= stack_columns(formation->H);
  return -K * shifted * laplacian(topo);
}

SimTrace run_trace(const PlantModel& plant, const Topology& topo,
                   const ChannelModel& ch, const Eigen::Ref<const Eigen::MatrixXd>& K,
                   const InitialConditions& init, const SimConfig& cfg,
                   std::uint64_t run_index, const FormationSpec* formation) {
  check_gain(K, plant);
  check_initial_conditions(init, topo.num_agents(), plant);
  check_formation(formation, topo.num_agents(), plant.n());
  if (cfg.horizon < plant.delay() + 1) {
    throw Error(ErrorCode::kOutOfRange,
                fmt::format("horizon {} must be at least d + 1 = {}", cfg.horizon,
                            plant.delay() + 1));
  }

  const Eigen::MatrixXd gain = K;
  Stepper stepper(plant, topo, ch, gain, init, formation);
  DropStream drops(mix_seed(cfg.seed, run_index), ch.p());

  SimTrace trace;
  trace.states.reserve(cfg.horizon + 1);
  trace.gamma.reserve(cfg.horizon);
  trace.states.push_back(stepper.state());
  for (int k = 0; k < cfg.horizon; ++k) {
    const std::uint8_t g = drops.next();
    trace.gamma.push_back(g);
    if (cfg.record_inputs) trace.inputs.push_back(stepper.due_input());
    stepper.step(g);
    trace.states.push_back(stepper.state());
  }
  return trace;
}

std::vector<double> squared_deviation(const SimTrace& trace,
                                      const FormationSpec* formation) {
  std::optional<Eigen::MatrixXd> offsets;
  if (formation) offsets = stack_columns(formation->H);
  std::vector<double> out;
  out.reserve(trace.states.size());
  for (const auto& X : trace.states) {
    out.push_back(deviation(X, offsets ? &*offsets : nullptr).squaredNorm());
  }
  return out;
}

DeviationCurve monte_carlo_deviation(const PlantModel& plant, const Topology& topo,
                                     const ChannelModel& ch,
                                     const Eigen::Ref<const Eigen::MatrixXd>& K,
                                     const InitialConditions& init,
                                     const SimConfig& cfg,
                                     const FormationSpec* formation) {
  if (cfg.runs < 1) throw Error(ErrorCode::kOutOfRange, "need at least one run");
  const int M = cfg.runs;
  const int N = topo.num_agents();
  std::optional<Eigen::MatrixXd> offsets;
  if (formation) {
    check_formation(formation, N, plant.n());
    offsets = stack_columns(formation->H);
  }

  std::vector<std::vector<double>> dev(M);
  std::vector<std::vector<double>> pair(M);
  SimConfig run_cfg = cfg;
  run_cfg.record_inputs = false;
  auto work = [&](int run) {
    const SimTrace trace = run_trace(plant, topo, ch, K, init, run_cfg,
                                     static_cast<std::uint64_t>(run), formation);
    dev[run] = squared_deviation(trace, formation);
    pair[run].reserve(trace.states.size());
    for (const auto& X : trace.states) {
      const Eigen::MatrixXd S = offsets ? Eigen::MatrixXd(X - *offsets) : X;
      double total = 0.0;
      for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j) total += (S.col(i) - S.col(j)).squaredNorm();
      pair[run].push_back(total / (0.5 * N * (N - 1)));
    }
  };

  int threads = cfg.threads > 0 ? cfg.threads
                                : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, M);
  if (threads == 1) {
    for (int r = 0; r < M; ++r) work(r);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (int r = t; r < M; r += threads) work(r);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const std::size_t steps = dev.front().size();
  DeviationCurve curve;
  curve.ms_dev.assign(steps, 0.0);
  curve.std_error.assign(steps, 0.0);
  curve.pairwise.assign(steps, 0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    double sum = 0.0, pair_sum = 0.0;
    for (int r = 0; r < M; ++r) {
      sum += dev[r][k];
      pair_sum += pair[r][k];
    }
    const double mean = sum / M;
    double sq = 0.0;
    for (int r = 0; r < M; ++r) sq += (dev[r][k] - mean) * (dev[r][k] - mean);
    curve.ms_dev[k] = mean;
    curve.std_error[k] = M > 1 ? std::sqrt(sq / (M - 1) / M) : 0.0;
    curve.pairwise[k] = pair_sum / M;
  }
  return curve;
}

void CheckReport::require() const {
  if (ok()) return;
  throw Error(ErrorCode::kCheckFailed,
              fmt::format("structural check failed at step {}: {}",
                          first_bad_step.value_or(-1), detail));
}

CheckReport structural_checks(const SimTrace& trace, const Topology& topo,
                              const PlantModel& plant,
                              const FormationSpec* formation) {
  const int N = topo.num_agents();
  check_formation(formation, N, plant.n());
  std::optional<Eigen::MatrixXd> offsets;
  if (formation) offsets = stack_columns(formation->H);

  CheckReport report;
  auto fail = [&](bool& flag, int k, std::string what) {
    if (flag) {
      flag = false;
      if (!report.first_bad_step || k < *report.first_bad_step) {
        report.first_bad_step = k;
        report.detail = std::move(what);
      }
    }
  };

  const double a_norm = plant.A().norm();
  const Eigen::VectorXd phi1 = Eigen::VectorXd::Constant(N, 1.0 / std::sqrt(double(N)));
  const int T = static_cast<int>(trace.gamma.size());
  for (int k = 0; k <= T; ++k) {
    const Eigen::MatrixXd& X = trace.states[k];
    const Eigen::MatrixXd delta = deviation(X, offsets ? &*offsets : nullptr);
    // delta is formed from X, so its round-off scales with |X|, not |delta|.
    const double modal = (delta * phi1).norm() / (1.0 + X.norm());
    report.max_modal_error = std::max(report.max_modal_error, modal);
    if (modal > 1e-10) fail(report.modal_ok, k, "first modal deviation is nonzero");

    if (k == T) break;
    const Eigen::MatrixXd& Xn = trace.states[k + 1];
    const Eigen::VectorXd avg_err =
        Xn.rowwise().mean() - plant.A() * X.rowwise().mean();
    const double scale =
        1.0 + (Xn.norm() + a_norm * X.norm()) / std::sqrt(double(N));
    const double rel = avg_err.norm() / scale;
    report.max_average_error = std::max(report.max_average_error, rel);
    if (rel > 1e-10) fail(report.average_ok, k, "average does not follow A");

    if (trace.inputs.empty()) {
      fail(report.replay_ok, k, "trace has no recorded inputs");
    } else {
      const Eigen::MatrixXd replay =
          advance(plant.A(), plant.B(), X, trace.inputs[k], trace.gamma[k]);
      if (replay != Xn) fail(report.replay_ok, k + 1, "state does not replay");
    }
  }
  return report;
}

UnbiasednessResult predictor_unbiasedness_check(
    const PlantModel& plant, const Topology& topo, const ChannelModel& ch,
    const Eigen::Ref<const Eigen::MatrixXd>& K, const InitialConditions& init,
    std::uint64_t seed, int k, int branches) {
  const int d = plant.delay();
  if (k < 2 * d) {
    throw Error(ErrorCode::kPreconditionViolated,
                fmt::format("step k = {} must be at least 2d = {}", k, 2 * d));
  }
  if (branches < 10000) {
    throw Error(ErrorCode::kPreconditionViolated, "need at least 10^4 branches");
  }
  check_gain(K, plant);
  check_initial_conditions(init, topo.num_agents(), plant);

  const Eigen::MatrixXd gain = K;
  Stepper frozen(plant, topo, ch, gain, init, nullptr);
  DropStream path(mix_seed(seed, 0), ch.p());
  for (int t = 0; t < k - d; ++t) frozen.step(path.next());
  const Eigen::MatrixXd predicted = frozen.predictor_now();

  DropStream branch_drops(mix_seed(seed, 1), ch.p());
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(predicted.rows(), predicted.cols());
  Eigen::MatrixXd sum_sq = sum;
  for (int b = 0; b < branches; ++b) {
    Stepper branch = frozen;
    for (int t = 0; t < d; ++t) branch.step(branch_drops.next());
    // Center on the predictor to keep the variance sum well conditioned.
    const Eigen::MatrixXd diff = branch.state() - predicted;
    sum += diff;
    sum_sq += diff.cwiseProduct(diff);
  }

  UnbiasednessResult result;
  const double B = branches;
  for (Eigen::Index r = 0; r < sum.rows(); ++r) {
    for (Eigen::Index c = 0; c < sum.cols(); ++c) {
      const double mean_diff = sum(r, c) / B;
      const double var = std::max(0.0, (sum_sq(r, c) / B - mean_diff * mean_diff) *
                                           B / (B - 1.0));
      const double se = std::sqrt(var / B);
      const double err = std::abs(mean_diff);
      result.max_abs_error = std::max(result.max_abs_error, err);
      result.max_std_error = std::max(result.max_std_error, se);
      // A zero standard error means every branch saw the same drops; the
      // remaining difference is round-off between the two evaluation orders.
      const double roundoff = 1e-12 * (1.0 + std::abs(predicted(r, c)));
      double z = 0.0;
      if (se > 0.0) {
        z = err / se;
      } else if (err > roundoff) {
        z = std::numeric_limits<double>::infinity();
      }
      result.max_z = std::max(result.max_z, z);
    }
  }
  result.passed = result.max_z <= 4.0;
  return result;
}

void write_trace_csv(std::ostream& out, const SimTrace& trace) {
  const Eigen::Index n = trace.states.front().rows();
  const Eigen::Index N = trace.states.front().cols();
  out << "k,gamma";
  for (Eigen::Index i = 0; i < N; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out << fmt::format(",x{}_{}", i + 1, j + 1);
  out << '\n';
  for (std::size_t k = 0; k < trace.states.size(); ++k) {
    out << k << ',';
    if (k < trace.gamma.size()) out << static_cast<int>(trace.gamma[k]);
    const auto& X = trace.states[k];
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < n; ++j) out << fmt::format(",{}", X(j, i));
    out << '\n';
  }
}

void write_deviation_csv(std::ostream& out, const DeviationCurve& curve) {
  out << "k,ms_dev,stderr\n";
  for (std::size_t k = 0; k < curve.ms_dev.size(); ++k) {
    out << fmt::format("{},{},{}\n", k, curve.ms_dev[k], curve.std_error[k]);
  }
}

}  // namespace consensus_lab
