#include "consensus_lab/cli/commands.h"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "consensus_lab/error.h"

namespace consensus_lab::cli {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ExperimentConfig effective_config(const ExperimentConfig& cfg, const CommandOptions& opts) {
  ExperimentConfig out = cfg;
  if (opts.seed) out.sim.seed = *opts.seed;
  if (opts.classic) out.solver.classic_mode = true;
  return out;
}

Experiment build_experiment(const ExperimentConfig& cfg, const CommandOptions& opts) {
  Experiment ex = build(cfg);
  ex.sim.threads = opts.threads;
  return ex;
}

std::ofstream open_output(const CommandOptions& opts, const std::string& name) {
  std::filesystem::create_directories(opts.out_dir);
  const auto path = opts.out_dir / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kParseError, fmt::format("cannot write '{}'", path.string()));
  }
  return out;
}

void write_json(const CommandOptions& opts, const std::string& name, const json& doc) {
  auto out = open_output(opts, name);
  out << doc.dump(2) << '\n';
}

json critical_to_json(const CriticalValue& cv) {
  json probes = json::array();
  for (const auto& probe : cv.probes) {
    probes.push_back({{"gamma", probe.gamma},
                      {"status", to_string(probe.status)},
                      {"iterations", probe.iterations}});
  }
  return {{"gamma_c", cv.gamma_c},
          {"lower_bound", cv.lower_bound},
          {"bracket_width", cv.bracket_width},
          {"feasible_at_one", cv.feasible_at_one},
          {"probes", std::move(probes)}};
}

json modal_to_json(const std::vector<ModalCheck>& modes) {
  json out = json::array();
  for (const auto& mc : modes) {
    out.push_back({{"mode", mc.mode},
                   {"lambda", mc.lambda},
                   {"lyapunov_ok", mc.lyapunov_ok},
                   {"kron_radius", mc.kron_radius},
                   {"delayed_moment_radius", mc.delayed_moment_radius},
                   {"stable", mc.stable()}});
  }
  return out;
}

double decay_ratio(const std::vector<double>& curve) {
  if (curve.empty() || curve.front() == 0.0) return 0.0;
  return curve.back() / curve.front();
}

// Sufficiency of a (possibly modified) config, mapping a plant that is not
// mean-square stabilizable to a failed verdict without gamma_c.
struct SweepPoint {
  double gamma_2 = 0.0;
  std::optional<double> gamma_c;
  Verdict sufficient = Verdict::kFails;
  Verdict scalar_exact = Verdict::kNotApplicable;
};

SweepPoint evaluate_point(const ExperimentConfig& cfg, const CommandOptions& opts) {
  const Experiment ex = build_experiment(cfg, opts);
  const LaplacianSpectrum spec = spectrum(ex.topology);
  SweepPoint point;
  point.gamma_2 = modal_gammas(spec, ex.channel).gamma_2;
  try {
    const SufficiencyResult s =
        check_sufficient(ex.plant, ex.weights, spec, ex.channel, ex.analysis);
    point.gamma_c = s.critical.gamma_c;
    point.sufficient = s.verdict;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotStabilizable) throw;
    spdlog::info("not mean-square stabilizable: {}", e.what());
  }
  if (ex.plant.is_scalar()) {
    const double a = ex.plant.A()(0, 0);
    const double b = ex.plant.B()(0, 0);
    if (a >= 1.0 && b > 0.0) {
      point.scalar_exact = check_scalar_exact(a, b, ex.plant.delay(), ex.channel, spec);
    }
  }
  return point;
}

void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorCode::kOutOfRange, "sweep grid is empty");
  bool increasing = true;
  bool decreasing = true;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i])) {
      throw Error(ErrorCode::kOutOfRange, "sweep grid has a non-finite value");
    }
    if (i > 0) {
      increasing = increasing && grid[i] > grid[i - 1];
      decreasing = decreasing && grid[i] < grid[i - 1];
    }
  }
  if (!increasing && !decreasing) {
    throw Error(ErrorCode::kOutOfRange, "sweep grid must be strictly monotone");
  }
}

template <typename F>
CommandResult guarded(F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    std::cerr << error_document(e).dump() << '\n';
    return CommandResult{kExitError, error_document(e)};
  }
}

}  // namespace

const char* to_string(GainSource source) {
  switch (source) {
    case GainSource::kSynthesized: return "synthesized";
    case GainSource::kExplicit: return "explicit";
    case GainSource::kZero: return "zero";
  }
  return "unknown";
}

json error_document(const std::exception& e) {
  std::string code = "internal";
  if (const auto* err = dynamic_cast<const Error*>(&e)) code = std::string(to_string(err->code()));
  return {{"error", {{"code", code}, {"message", e.what()}}}};
}

json report_to_json(const ConsensusReport& report) {
  json j;
  j["gamma_2"] = report.gamma_2;
  j["critical"] = report.critical ? critical_to_json(*report.critical) : json(nullptr);
  j["sufficient"] = to_string(report.sufficient);
  j["necessary_rank1"] = to_string(report.necessary_rank1);
  j["scalar_exact"] = to_string(report.scalar_exact);
  j["overall"] = to_string(report.overall());
  j["consensusable"] = report.consensusable();
  j["gain"] = report.gain ? matrix_to_json(*report.gain) : json(nullptr);
  j["riccati_P"] = report.riccati_P ? matrix_to_json(*report.riccati_P) : json(nullptr);
  j["modal"] = modal_to_json(report.modal);
  j["modal_from_scalar_gain"] = report.modal_from_scalar_gain;
  j["formation"] = to_string(report.formation);
  j["notes"] = report.notes;
  return j;
}

CommandResult cmd_analyze(const ExperimentConfig& config, const CommandOptions& opts) {
  return guarded([&] {
    const ExperimentConfig cfg = effective_config(config, opts);
    const Experiment ex = build_experiment(cfg, opts);
    const auto start = Clock::now();
    const ConsensusReport report = full_report(ex.plant, ex.weights, ex.topology, ex.channel,
                                               ex.formation, ex.analysis);
    const double elapsed = seconds_since(start);

    json diagnostics = json::object();
    if (report.critical) {
      int total = 0;
      for (const auto& probe : report.critical->probes) total += probe.iterations;
      diagnostics["bisection_probes"] = report.critical->probes.size();
      diagnostics["bisection_iterations"] = total;
    }
    if (report.riccati_P) {
      const PareProblem prob(ex.plant, ex.weights, report.gamma_2, ex.analysis.mode);
      diagnostics["riccati_residual"] =
          (*report.riccati_P - g_gamma(*report.riccati_P, prob)).norm();
    }

    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["config"] = to_json(cfg);
    doc["report"] = report_to_json(report);
    doc["timing"] = {{"analysis_seconds", elapsed}};
    doc["diagnostics"] = std::move(diagnostics);
    write_json(opts, "report.json", doc);

    fmt::print(stderr, "sufficient: {} (gamma_2 = {:.6g}", to_string(report.sufficient),
               report.gamma_2);
    if (report.critical) fmt::print(stderr, ", gamma_c = {:.6g}", report.critical->gamma_c);
    fmt::print(stderr, ")\n");
    for (const auto& note : report.notes) fmt::print(stderr, "note: {}\n", note);
    return CommandResult{report.consensusable() ? kExitConsensusable : kExitNotConsensusable,
                         std::move(doc)};
  });
}

CommandResult cmd_simulate(const ExperimentConfig& config, GainSource source,
                           const CommandOptions& opts) {
  return guarded([&] {
    const ExperimentConfig cfg = effective_config(config, opts);
    const Experiment ex = build_experiment(cfg, opts);
    const int n = ex.plant.n();
    const int m = ex.plant.m();

    Eigen::MatrixXd K;
    switch (source) {
      case GainSource::kZero:
        K = Eigen::MatrixXd::Zero(m, n);
        break;
      case GainSource::kExplicit:
        if (!cfg.gain) {
          throw Error(ErrorCode::kPreconditionViolated, "explicit gain requested but config has no 'gain'");
        }
        K = *cfg.gain;
        break;
      case GainSource::kSynthesized: {
        const LaplacianSpectrum spec = spectrum(ex.topology);
        const SufficiencyResult s =
            check_sufficient(ex.plant, ex.weights, spec, ex.channel, ex.analysis);
        if (!holds(s.verdict)) {
          fmt::print(stderr, "sufficient condition {}; no gain synthesized\n",
                     to_string(s.verdict));
          return CommandResult{kExitNotConsensusable,
                               json{{"sufficient", to_string(s.verdict)}}};
        }
        K = synthesize_gain(ex.plant, ex.weights, spec, ex.channel, s, ex.analysis).K;
        break;
      }
    }

    const FormationSpec* formation = ex.formation ? &*ex.formation : nullptr;
    const SimTrace trace =
        run_trace(ex.plant, ex.topology, ex.channel, K, ex.initial, ex.sim, 0, formation);
    {
      auto out = open_output(opts, "trace.csv");
      write_trace_csv(out, trace);
    }
    const DeviationCurve curve =
        monte_carlo_deviation(ex.plant, ex.topology, ex.channel, K, ex.initial, ex.sim, formation);
    {
      auto out = open_output(opts, "deviation.csv");
      write_deviation_csv(out, curve);
    }

    const double ratio = decay_ratio(curve.ms_dev);
    fmt::print(stderr, "final ms_dev = {:.6e}, decay ratio ms_dev(T)/ms_dev(0) = {:.6e}\n",
               curve.ms_dev.back(), ratio);
    json doc = {{"gain_source", to_string(source)},
                {"gain", matrix_to_json(K)},
                {"initial_ms_dev", curve.ms_dev.front()},
                {"final_ms_dev", curve.ms_dev.back()},
                {"decay_ratio", ratio},
                {"horizon", ex.sim.horizon},
                {"runs", ex.sim.runs},
                {"seed", ex.sim.seed}};
    return CommandResult{kExitConsensusable, std::move(doc)};
  });
}

CommandResult cmd_sweep(const ExperimentConfig& config, const std::string& parameter,
                        const std::vector<double>& grid, const CommandOptions& opts) {
  return guarded([&] {
    const ExperimentConfig cfg = effective_config(config, opts);
    check_grid(grid);
    std::ostringstream csv;
    json rows = json::array();

    if (parameter == "gamma") {
      const Experiment ex = build_experiment(cfg, opts);
      csv << "gamma,status,iterations,feasible\n";
      for (double gamma : grid) {
        if (gamma < 0.0 || gamma > 1.0) {
          throw Error(ErrorCode::kOutOfRange, fmt::format("gamma {} outside [0, 1]", gamma));
        }
        const PareProblem prob(ex.plant, ex.weights, gamma, ex.analysis.mode);
        const PareOutcome outcome = solve_pare(prob, ex.analysis.solver);
        csv << fmt::format("{},{},{},{}\n", gamma, to_string(outcome.status),
                           outcome.iterations, outcome.converged() ? 1 : 0);
        rows.push_back({{"gamma", gamma},
                        {"status", to_string(outcome.status)},
                        {"feasible", outcome.converged()}});
      }
    } else if (parameter == "p" || parameter == "d") {
      csv << "value,gamma_2,gamma_c,sufficient,scalar_exact\n";
      std::vector<Verdict> verdicts;
      for (double value : grid) {
        ExperimentConfig point_cfg = cfg;
        if (parameter == "p") {
          point_cfg.p = value;
        } else {
          if (value < 0.0 || value != std::floor(value)) {
            throw Error(ErrorCode::kOutOfRange,
                        fmt::format("delay {} is not a nonnegative integer", value));
          }
          point_cfg.delay = static_cast<int>(value);
        }
        const SweepPoint point = evaluate_point(point_cfg, opts);
        verdicts.push_back(point.sufficient);
        csv << fmt::format("{},{},{},{},{}\n", value, point.gamma_2,
                           point.gamma_c ? fmt::format("{}", *point.gamma_c) : std::string(),
                           to_string(point.sufficient), to_string(point.scalar_exact));
        rows.push_back({{"value", value},
                        {"gamma_2", point.gamma_2},
                        {"gamma_c", point.gamma_c ? json(*point.gamma_c) : json(nullptr)},
                        {"sufficient", to_string(point.sufficient)},
                        {"scalar_exact", to_string(point.scalar_exact)}});
      }
      if (parameter == "d" && cfg.p == 0.0 && numerical_rank(cfg.B) == 1) {
        bool constant = true;
        for (Verdict v : verdicts) constant = constant && v == verdicts.front();
        if (!constant) {
          spdlog::warn(
              "sufficient verdict varies with the delay at p = 0; the delay-aware bracket "
              "grows with d (use --classic-mare for the delay-free critical value)");
        }
      }
    } else {
      throw Error(ErrorCode::kOutOfRange,
                  fmt::format("unknown sweep parameter '{}' (expected p, d or gamma)", parameter));
    }

    {
      auto out = open_output(opts, "sweep.csv");
      out << csv.str();
    }
    std::cout << csv.str();
    return CommandResult{kExitConsensusable,
                         json{{"parameter", parameter}, {"rows", std::move(rows)}}};
  });
}

CommandResult cmd_formation(const ExperimentConfig& config, const CommandOptions& opts) {
  return guarded([&] {
    const ExperimentConfig cfg = effective_config(config, opts);
    if (!cfg.formation) {
      throw Error(ErrorCode::kPreconditionViolated, "config has no 'formation' section");
    }
    const Experiment ex = build_experiment(cfg, opts);
    if (!formation_admissible(ex.plant, *ex.formation)) {
      fmt::print(stderr, "formation offsets are not admissible: (A - I)(H_i - Hbar) != 0\n");
      return CommandResult{kExitNotConsensusable, json{{"admissible", false}}};
    }

    const ConsensusReport report = full_report(ex.plant, ex.weights, ex.topology, ex.channel,
                                               ex.formation, ex.analysis);
    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["config"] = to_json(cfg);
    doc["report"] = report_to_json(report);
    doc["admissible"] = true;
    if (!report.consensusable() || !report.gain) {
      write_json(opts, "report.json", doc);
      fmt::print(stderr, "formation not achievable: sufficient condition {}\n",
                 to_string(report.sufficient));
      return CommandResult{kExitNotConsensusable, std::move(doc)};
    }

    const FormationSpec* formation = &*ex.formation;
    const SimTrace trace = run_trace(ex.plant, ex.topology, ex.channel, *report.gain,
                                     ex.initial, ex.sim, 0, formation);
    {
      auto out = open_output(opts, "trace.csv");
      write_trace_csv(out, trace);
    }
    const DeviationCurve curve = monte_carlo_deviation(ex.plant, ex.topology, ex.channel,
                                                       *report.gain, ex.initial, ex.sim, formation);
    {
      auto out = open_output(opts, "formation_deviation.csv");
      out << "k,pairwise,ms_dev,stderr\n";
      for (std::size_t k = 0; k < curve.ms_dev.size(); ++k) {
        out << fmt::format("{},{},{},{}\n", k, curve.pairwise[k], curve.ms_dev[k],
                           curve.std_error[k]);
      }
    }
    const double ratio = decay_ratio(curve.pairwise);
    doc["pairwise_initial"] = curve.pairwise.front();
    doc["pairwise_final"] = curve.pairwise.back();
    doc["pairwise_ratio"] = ratio;
    write_json(opts, "report.json", doc);
    fmt::print(stderr, "formation pairwise deviation ratio = {:.6e}\n", ratio);
    return CommandResult{kExitConsensusable, std::move(doc)};
  });
}

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("consensus_lab");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* level = std::getenv("CONSENSUS_LAB_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, fmt::format("bad grid value '{}'", item));
    }
  }
  return grid;
}

}  // namespace

int run_cli(int argc, char** argv) {
  if (!spdlog::get("consensus_lab")) configure_logging();

  CLI::App app{"Consensus analysis and simulation for delayed lossy multi-agent networks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool classic = false;
  std::string gain = "synthesized";
  std::string param;
  std::string grid_text;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--seed", seed, "Override sim.seed");
    sub->add_option("--threads", threads, "Monte Carlo worker threads (0 = all cores)")
        ->check(CLI::NonNegativeNumber);
    sub->add_flag("--classic-mare", classic, "Use the delay-free modified Riccati recursion");
  };

  auto* analyze = app.add_subcommand("analyze", "Check consensusability and synthesize a gain");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo simulation of the protocol");
  auto* sweep = app.add_subcommand("sweep", "Sweep p, d or gamma");
  auto* formation = app.add_subcommand("formation", "Formation analysis and simulation");
  for (auto* sub : {analyze, simulate, sweep, formation}) add_common(sub);
  simulate->add_option("--gain", gain, "Gain source")
      ->check(CLI::IsMember({"synthesized", "explicit", "zero"}));
  sweep->add_option("--param", param, "Sweep parameter")->check(CLI::IsMember({"p", "d", "gamma"}));
  sweep->add_option("--grid", grid_text, "Comma-separated grid values");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitError;
  }

  CommandOptions opts;
  opts.out_dir = out_dir;
  opts.seed = seed;
  opts.threads = threads;
  opts.classic = classic;

  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << error_document(e).dump() << '\n';
    return kExitError;
  }

  if (analyze->parsed()) return cmd_analyze(cfg, opts).exit_code;
  if (formation->parsed()) return cmd_formation(cfg, opts).exit_code;
  if (simulate->parsed()) {
    const GainSource source = gain == "zero"       ? GainSource::kZero
                              : gain == "explicit" ? GainSource::kExplicit
                                                   : GainSource::kSynthesized;
    return cmd_simulate(cfg, source, opts).exit_code;
  }

  std::vector<double> grid;
  try {
    if (param.empty() && cfg.sweep) param = cfg.sweep->parameter;
    if (!grid_text.empty()) {
      grid = parse_grid(grid_text);
    } else if (cfg.sweep) {
      grid = cfg.sweep->grid;
    }
    if (param.empty()) throw Error(ErrorCode::kParseError, "sweep needs --param or a 'sweep' section");
  } catch (const std::exception& e) {
    std::cerr << error_document(e).dump() << '\n';
    return kExitError;
  }
  return cmd_sweep(cfg, param, grid, opts).exit_code;
}

}  // namespace consensus_lab::cli
