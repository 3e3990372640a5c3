#include "consensus_lab/cli/config.h"

#include <fstream>
#include <random>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "consensus_lab/error.h"

namespace consensus_lab::cli {

using nlohmann::json;

namespace {

[[noreturn]] void parse_error(const std::string& what) {
  throw Error(ErrorCode::kParseError, what);
}

void reject_unknown(const json& j, const std::string& where,
                    const std::set<std::string>& allowed) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) parse_error(fmt::format("unknown key '{}' in {}", key, where));
  }
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    parse_error(fmt::format("missing '{}' in {}", key, where));
  }
  return j.at(key);
}

double number(const json& j, const std::string& where) {
  if (!j.is_number()) parse_error(fmt::format("{} must be a number", where));
  return j.get<double>();
}

int integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) parse_error(fmt::format("{} must be an integer", where));
  return j.get<int>();
}

Eigen::VectorXd vector_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    parse_error(fmt::format("{} must be a non-empty array of numbers", where));
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = number(j[i], fmt::format("{}[{}]", where, i));
  }
  return v;
}

// Row-major array of arrays; a bare number is accepted as a 1x1 matrix.
Eigen::MatrixXd matrix_from(const json& j, const std::string& where) {
  if (j.is_number()) return Eigen::MatrixXd::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) {
    parse_error(fmt::format("{} must be a non-empty array of rows", where));
  }
  const std::size_t rows = j.size();
  if (!j[0].is_array() || j[0].empty()) {
    parse_error(fmt::format("{}[0] must be a non-empty row", where));
  }
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd M(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      parse_error(fmt::format("{} row {} has {} entries, expected {}", where, r,
                              j[r].is_array() ? j[r].size() : 0, cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      M(r, c) = number(j[r][c], fmt::format("{}[{}][{}]", where, r, c));
    }
  }
  return M;
}

std::vector<Eigen::VectorXd> vectors_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    parse_error(fmt::format("{} must be a non-empty array of vectors", where));
  }
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(vector_from(j[i], fmt::format("{}[{}]", where, i)));
  }
  return out;
}

GraphConfig graph_from(const json& j) {
  reject_unknown(j, "graph", {"N", "generator", "edges"});
  GraphConfig g;
  g.num_agents = integer(require(j, "N", "graph"), "graph.N");
  if (j.contains("generator") == j.contains("edges")) {
    parse_error("graph needs exactly one of 'generator' or 'edges'");
  }
  if (j.contains("generator")) {
    if (!j["generator"].is_string()) parse_error("graph.generator must be a string");
    g.generator = j["generator"].get<std::string>();
    static const std::set<std::string> known{"complete", "path", "star", "ring"};
    if (!known.count(g.generator)) {
      parse_error(fmt::format("unknown graph generator '{}'", g.generator));
    }
  } else {
    const json& edges = j["edges"];
    if (!edges.is_array()) parse_error("graph.edges must be an array");
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const json& item = edges[e];
      const std::string where = fmt::format("graph.edges[{}]", e);
      if (!item.is_array() || item.size() < 2 || item.size() > 3) {
        parse_error(where + " must be [from, to] or [from, to, weight]");
      }
      WeightedEdge edge;
      edge.from = integer(item[0], where);
      edge.to = integer(item[1], where);
      edge.weight = item.size() == 3 ? number(item[2], where) : 1.0;
      g.edges.push_back(edge);
    }
  }
  return g;
}

}  // namespace

json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vectors_to_json(const std::vector<Eigen::VectorXd>& vs) {
  json out = json::array();
  for (const auto& v : vs) out.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return out;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) parse_error("config must be a JSON object");
  reject_unknown(j, "config",
                 {"schema_version", "plant", "channel", "graph", "weights",
                  "formation", "gain", "sim", "solver", "sweep"});
  ExperimentConfig cfg;
  cfg.schema_version = integer(require(j, "schema_version", "config"), "schema_version");
  if (cfg.schema_version != kSchemaVersion) {
    parse_error(fmt::format("unsupported schema_version {}", cfg.schema_version));
  }

  const json& plant = require(j, "plant", "config");
  reject_unknown(plant, "plant", {"A", "B", "d"});
  cfg.A = matrix_from(require(plant, "A", "plant"), "plant.A");
  cfg.B = matrix_from(require(plant, "B", "plant"), "plant.B");
  cfg.delay = integer(require(plant, "d", "plant"), "plant.d");

  const json& channel = require(j, "channel", "config");
  reject_unknown(channel, "channel", {"p"});
  cfg.p = number(require(channel, "p", "channel"), "channel.p");

  cfg.graph = graph_from(require(j, "graph", "config"));

  if (j.contains("weights")) {
    const json& w = j["weights"];
    reject_unknown(w, "weights", {"Q", "R"});
    if (w.contains("Q")) cfg.Q = matrix_from(w["Q"], "weights.Q");
    if (w.contains("R")) cfg.R = matrix_from(w["R"], "weights.R");
  }
  if (j.contains("formation")) {
    const json& f = j["formation"];
    reject_unknown(f, "formation", {"H"});
    cfg.formation = vectors_from(require(f, "H", "formation"), "formation.H");
  }
  if (j.contains("gain")) cfg.gain = matrix_from(j["gain"], "gain");

  if (j.contains("sim")) {
    const json& s = j["sim"];
    reject_unknown(s, "sim", {"T", "M", "seed", "x0", "u_hist"});
    if (s.contains("T")) cfg.sim.horizon = integer(s["T"], "sim.T");
    if (s.contains("M")) cfg.sim.runs = integer(s["M"], "sim.M");
    if (s.contains("seed")) {
      if (!s["seed"].is_number_integer() || s["seed"].is_number_float()) {
        parse_error("sim.seed must be an unsigned integer");
      }
      if (s["seed"].is_number_unsigned()) {
        cfg.sim.seed = s["seed"].get<std::uint64_t>();
      } else if (s["seed"].get<std::int64_t>() >= 0) {
        cfg.sim.seed = static_cast<std::uint64_t>(s["seed"].get<std::int64_t>());
      } else {
        parse_error("sim.seed must be nonnegative");
      }
    }
    if (s.contains("x0")) cfg.sim.x0 = vectors_from(s["x0"], "sim.x0");
    if (s.contains("u_hist")) {
      const json& h = s["u_hist"];
      if (!h.is_array()) parse_error("sim.u_hist must be an array per agent");
      std::vector<std::vector<Eigen::VectorXd>> hist;
      for (std::size_t i = 0; i < h.size(); ++i) {
        const std::string where = fmt::format("sim.u_hist[{}]", i);
        if (!h[i].is_array()) parse_error(where + " must be an array");
        std::vector<Eigen::VectorXd> agent;
        for (std::size_t s_idx = 0; s_idx < h[i].size(); ++s_idx) {
          agent.push_back(vector_from(h[i][s_idx], fmt::format("{}[{}]", where, s_idx)));
        }
        hist.push_back(std::move(agent));
      }
      cfg.sim.u_hist = std::move(hist);
    }
  }

  if (j.contains("solver")) {
    const json& s = j["solver"];
    reject_unknown(s, "solver",
                   {"tol", "max_iter", "gamma_tol", "classic_mode", "divergence_cap"});
    if (s.contains("tol")) cfg.solver.tol = number(s["tol"], "solver.tol");
    if (s.contains("max_iter")) cfg.solver.max_iter = integer(s["max_iter"], "solver.max_iter");
    if (s.contains("gamma_tol")) cfg.solver.gamma_tol = number(s["gamma_tol"], "solver.gamma_tol");
    if (s.contains("classic_mode")) {
      if (!s["classic_mode"].is_boolean()) parse_error("solver.classic_mode must be a boolean");
      cfg.solver.classic_mode = s["classic_mode"].get<bool>();
    }
    if (s.contains("divergence_cap")) {
      cfg.solver.divergence_cap = number(s["divergence_cap"], "solver.divergence_cap");
    }
  }

  if (j.contains("sweep")) {
    const json& s = j["sweep"];
    reject_unknown(s, "sweep", {"parameter", "grid"});
    SweepSection sweep;
    const json& param = require(s, "parameter", "sweep");
    if (!param.is_string()) parse_error("sweep.parameter must be a string");
    sweep.parameter = param.get<std::string>();
    const Eigen::VectorXd grid = vector_from(require(s, "grid", "sweep"), "sweep.grid");
    sweep.grid.assign(grid.data(), grid.data() + grid.size());
    cfg.sweep = std::move(sweep);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) parse_error(fmt::format("cannot open config '{}'", path));
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    parse_error(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["plant"] = {{"A", matrix_to_json(cfg.A)}, {"B", matrix_to_json(cfg.B)}, {"d", cfg.delay}};
  j["channel"] = {{"p", cfg.p}};
  json graph = {{"N", cfg.graph.num_agents}};
  if (!cfg.graph.generator.empty()) {
    graph["generator"] = cfg.graph.generator;
  } else {
    json edges = json::array();
    for (const auto& e : cfg.graph.edges) edges.push_back({e.from, e.to, e.weight});
    graph["edges"] = std::move(edges);
  }
  j["graph"] = std::move(graph);
  if (cfg.Q || cfg.R) {
    json w = json::object();
    if (cfg.Q) w["Q"] = matrix_to_json(*cfg.Q);
    if (cfg.R) w["R"] = matrix_to_json(*cfg.R);
    j["weights"] = std::move(w);
  }
  if (cfg.formation) j["formation"] = {{"H", vectors_to_json(*cfg.formation)}};
  if (cfg.gain) j["gain"] = matrix_to_json(*cfg.gain);

  json sim = {{"T", cfg.sim.horizon}, {"M", cfg.sim.runs}, {"seed", cfg.sim.seed}};
  if (cfg.sim.x0) sim["x0"] = vectors_to_json(*cfg.sim.x0);
  if (cfg.sim.u_hist) {
    json hist = json::array();
    for (const auto& agent : *cfg.sim.u_hist) hist.push_back(vectors_to_json(agent));
    sim["u_hist"] = std::move(hist);
  }
  j["sim"] = std::move(sim);

  json solver = {{"tol", cfg.solver.tol},
                 {"max_iter", cfg.solver.max_iter},
                 {"gamma_tol", cfg.solver.gamma_tol},
                 {"classic_mode", cfg.solver.classic_mode}};
  if (cfg.solver.divergence_cap) solver["divergence_cap"] = *cfg.solver.divergence_cap;
  j["solver"] = std::move(solver);

  if (cfg.sweep) j["sweep"] = {{"parameter", cfg.sweep->parameter}, {"grid", cfg.sweep->grid}};
  return j;
}

namespace {

bool same(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

bool same(const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || a[i] != b[i]) return false;
  }
  return true;
}

template <typename T, typename Eq>
bool same_optional(const std::optional<T>& a, const std::optional<T>& b, Eq eq) {
  if (a.has_value() != b.has_value()) return false;
  return !a || eq(*a, *b);
}

}  // namespace

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  auto mat = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) { return same(x, y); };
  auto vecs = [](const auto& x, const auto& y) { return same(x, y); };
  auto hist = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!same(x[i], y[i])) return false;
    return true;
  };
  auto edges_equal = [](const std::vector<WeightedEdge>& x, const std::vector<WeightedEdge>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].from != y[i].from || x[i].to != y[i].to || x[i].weight != y[i].weight) return false;
    }
    return true;
  };
  auto sweep_equal = [](const SweepSection& x, const SweepSection& y) {
    return x.parameter == y.parameter && x.grid == y.grid;
  };
  return a.schema_version == b.schema_version && same(a.A, b.A) && same(a.B, b.B) &&
         a.delay == b.delay && a.p == b.p && a.graph.num_agents == b.graph.num_agents &&
         a.graph.generator == b.graph.generator && edges_equal(a.graph.edges, b.graph.edges) &&
         same_optional(a.Q, b.Q, mat) && same_optional(a.R, b.R, mat) &&
         same_optional(a.formation, b.formation, vecs) && same_optional(a.gain, b.gain, mat) &&
         a.sim.horizon == b.sim.horizon && a.sim.runs == b.sim.runs &&
         a.sim.seed == b.sim.seed && same_optional(a.sim.x0, b.sim.x0, vecs) &&
         same_optional(a.sim.u_hist, b.sim.u_hist, hist) && a.solver.tol == b.solver.tol &&
         a.solver.max_iter == b.solver.max_iter && a.solver.gamma_tol == b.solver.gamma_tol &&
         a.solver.classic_mode == b.solver.classic_mode &&
         a.solver.divergence_cap == b.solver.divergence_cap &&
         same_optional(a.sweep, b.sweep, sweep_equal);
}

Topology build_topology(const GraphConfig& graph) {
  if (graph.generator == "complete") return Topology::Complete(graph.num_agents);
  if (graph.generator == "path") return Topology::Path(graph.num_agents);
  if (graph.generator == "star") return Topology::Star(graph.num_agents);
  if (graph.generator == "ring") return Topology::Ring(graph.num_agents);
  return Topology::FromEdges(graph.num_agents, graph.edges);
}

namespace {

// Default initial states: uniform on [-1, 1], drawn from a stream that is
// disjoint from every drop stream of the same seed.
std::vector<Eigen::VectorXd> default_states(std::uint64_t seed, int num_agents, int n) {
  std::mt19937_64 engine(mix_seed(seed, ~std::uint64_t{0}));
  std::vector<Eigen::VectorXd> x0;
  for (int i = 0; i < num_agents; ++i) {
    Eigen::VectorXd x(n);
    for (int c = 0; c < n; ++c) {
      x(c) = 2.0 * (static_cast<double>(engine() >> 11) * 0x1.0p-53) - 1.0;
    }
    x0.push_back(std::move(x));
  }
  return x0;
}

}  // namespace

Experiment build(const ExperimentConfig& cfg) {
  PlantModel plant(cfg.A, cfg.B, cfg.delay);
  ChannelModel channel(cfg.p);
  Topology topology = build_topology(cfg.graph);
  Weights weights(cfg.Q.value_or(Eigen::MatrixXd::Identity(plant.n(), plant.n())),
                  cfg.R.value_or(Eigen::MatrixXd::Identity(plant.m(), plant.m())));
  check_weights_match(plant, weights);

  std::optional<FormationSpec> formation;
  if (cfg.formation) {
    if (static_cast<int>(cfg.formation->size()) != topology.num_agents()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("formation has {} offsets for {} agents",
                              cfg.formation->size(), topology.num_agents()));
    }
    for (const auto& h : *cfg.formation) {
      if (h.size() != plant.n()) {
        throw Error(ErrorCode::kDimensionMismatch, "formation offset has wrong size");
      }
    }
    formation = FormationSpec{*cfg.formation};
  }
  if (cfg.gain && (cfg.gain->rows() != plant.m() || cfg.gain->cols() != plant.n())) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("gain must be {}x{}", plant.m(), plant.n()));
  }

  InitialConditions initial;
  initial.x0 = cfg.sim.x0.value_or(
      default_states(cfg.sim.seed, topology.num_agents(), plant.n()));
  if (cfg.sim.u_hist) {
    initial.u_hist = *cfg.sim.u_hist;
  } else {
    initial.u_hist.assign(initial.x0.size(), std::vector<Eigen::VectorXd>(
                                                 plant.delay(), Eigen::VectorXd::Zero(plant.m())));
  }
  check_initial_conditions(initial, topology.num_agents(), plant);

  if (cfg.sim.runs < 1 || cfg.sim.horizon < plant.delay() + 1) {
    throw Error(ErrorCode::kOutOfRange, "sim needs M >= 1 and T >= d + 1");
  }
  SimConfig sim;
  sim.horizon = cfg.sim.horizon;
  sim.runs = cfg.sim.runs;
  sim.seed = cfg.sim.seed;

  AnalysisOptions analysis;
  analysis.solver.tol = cfg.solver.tol;
  analysis.solver.max_iter = cfg.solver.max_iter;
  analysis.solver.divergence_cap = cfg.solver.divergence_cap;
  analysis.gamma_tol = cfg.solver.gamma_tol;
  analysis.mode = cfg.solver.classic_mode ? RiccatiMode::kClassic : RiccatiMode::kDelayAware;

  return Experiment{std::move(plant), channel,      std::move(topology),
                    std::move(weights), std::move(formation), std::move(initial),
                    sim, analysis};
}

}  // namespace consensus_lab::cli
