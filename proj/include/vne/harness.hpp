#ifndef VNE_HARNESS_HPP_
#define VNE_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vne/netmodel.hpp"
#include "vne/trainer.hpp"

namespace vne {

struct TopologySource {
  enum class Kind { file, waxman };
  Kind kind = Kind::waxman;
  std::filesystem::path path;  // file
  int nodes = 100;             // waxman
  int links = 500;
  double alpha = 0.5;
};

struct ScenarioConfig {
  TopologySource topology;
  CapacityConfig capacity;
  VnrConfig vnrs;
  std::uint64_t seed = 0;
};

// "greedy", "reject-all" or "policy:DIR", optionally prefixed by "LABEL=".
struct SolverBinding {
  std::string label;
  enum class Kind { greedy, reject_all, policy };
  Kind kind = Kind::greedy;
  std::filesystem::path policy;
};
SolverBinding parse_solver_binding(const std::string& text);
std::string to_string(const SolverBinding& b);

struct ExperimentPlan {
  ScenarioConfig scenario;
  std::vector<double> etas{0.001, 0.002, 0.003, 0.004, 0.005, 0.006};
  std::vector<SolverBinding> solvers{parse_solver_binding("greedy")};
  int repetitions = 1;
  std::filesystem::path out = "results";
  TrainerConfig trainer;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// JSON with sections "scenario", "experiment" and "trainer". Unknown keys,
// type mismatches and range violations are all collected into one
// ConfigError. Only scenario.topology.kind (and path for files) is required.
ExperimentPlan parse_config_text(const std::string& text);
ExperimentPlan parse_config(const std::filesystem::path& path);
std::string format_config(const ExperimentPlan& plan);
std::string emit_defaults();
std::vector<std::string> validate(const ExperimentPlan& plan);

// "2..12" or "2,5,12"
std::vector<int> parse_size_list(const std::string& text);

PhysicalNetwork build_substrate(const ScenarioConfig& scenario);

// Pure function of the base seed and the cell coordinates. The stream seed
// leaves out the solver so every solver sees the same requests.
std::uint64_t stream_seed(std::uint64_t base, double eta, int repetition);
std::uint64_t cell_seed(std::uint64_t base, const std::string& solver_label, double eta, int repetition);

struct CellMetrics {
  int arrived = 0;
  int accepted = 0;
  double rac = 0.0;
  double lar = 0.0;
  double lt_r2c = 0.0;
};

struct CellResult {
  std::string solver;
  double eta = 0.0;
  int repetition = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  CellMetrics metrics;
  std::filesystem::path metrics_csv;
  std::filesystem::path events_jsonl;
};

std::string cell_name(const std::string& solver_label, double eta, int repetition);

// One simulation. Writes <dir>/<cell>.csv and <dir>/<cell>.jsonl when dir
// is non-empty. policies is required for policy bindings.
CellResult run_cell(const PhysicalNetwork& pn, const ScenarioConfig& scenario, const SolverBinding& solver,
                    const PolicySet* policies, double eta, int repetition, const std::filesystem::path& dir);

struct ExperimentResult {
  std::vector<CellResult> cells;
  bool ok() const;
};

// Cells solver x eta x repetition, run on up to `jobs` threads. Writes
// <out>/cells/*.csv, <out>/cells/*.jsonl, <out>/summary.csv and, when some
// cell failed, <out>/failures.jsonl.
ExperimentResult run_experiment(const ExperimentPlan& plan, int jobs = 1);

inline constexpr const char* kSummaryCsvSchema = "# vne-lab summary-csv v1";
inline constexpr const char* kSummaryCsvHeader = "solver,eta,repetition,seed,status,arrived,accepted,rac,lar,lt_r2c";
void write_summary_csv(const std::vector<CellResult>& cells, std::ostream& out);

}  // namespace vne

#endif  // VNE_HARNESS_HPP_
