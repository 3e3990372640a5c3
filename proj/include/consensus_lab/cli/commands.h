#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "consensus_lab/cli/config.h"

namespace consensus_lab::cli {

inline constexpr int kExitConsensusable = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConsensusable = 2;

struct CommandOptions {
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;
  /// 0 means hardware concurrency.
  int threads = 0;
  /// Forces the classic modified Riccati recursion.
  bool classic = false;
};

struct CommandResult {
  int exit_code = kExitError;
  /// Report document (analyze, formation) or run summary (simulate, sweep).
  nlohmann::json document;
};

/// Writes report.json. Exit 0 when the sufficient condition holds, 2 when it
/// fails or is inconclusive.
CommandResult cmd_analyze(const ExperimentConfig& cfg, const CommandOptions& opts);

enum class GainSource { kSynthesized, kExplicit, kZero };

const char* to_string(GainSource source);

/// Writes trace.csv (run 0) and deviation.csv (all runs). kExplicit reads
/// the config `gain`; kSynthesized requires the sufficient condition.
CommandResult cmd_simulate(const ExperimentConfig& cfg, GainSource source,
                           const CommandOptions& opts);

/// Writes sweep.csv. parameter p or d: value,gamma_2,gamma_c,sufficient,
/// scalar_exact. parameter gamma: gamma,status,iterations,feasible.
/// The grid must be nonempty, finite and strictly monotone.
CommandResult cmd_sweep(const ExperimentConfig& cfg, const std::string& parameter,
                        const std::vector<double>& grid, const CommandOptions& opts);

/// Rejects inadmissible offsets before simulating, then analyzes,
/// synthesizes and simulates with the formation protocol. Writes report.json
/// and formation_deviation.csv (k,pairwise,ms_dev,stderr).
CommandResult cmd_formation(const ExperimentConfig& cfg, const CommandOptions& opts);

/// Error document {"error": {"code": ..., "message": ...}}.
nlohmann::json error_document(const std::exception& e);

nlohmann::json report_to_json(const ConsensusReport& report);

/// Entry point of the consensus_lab executable.
int run_cli(int argc, char** argv);

}  // namespace consensus_lab::cli
