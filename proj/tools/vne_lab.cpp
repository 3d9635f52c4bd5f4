#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "vne/harness.hpp"
#include "vne/trainer.hpp"

namespace fs = std::filesystem;
using namespace vne;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void print_cells(const std::vector<CellResult>& cells) {
  for (const auto& c : cells) {
    if (c.ok) {
      fmt::print("{:<16} eta={:<8} rep={} rac={:.4f} lar={:.4f} lt_r2c={:.4f}\n", c.solver, c.eta, c.repetition,
                 c.metrics.rac, c.metrics.lar, c.metrics.lt_r2c);
    } else {
      fmt::print("{:<16} eta={:<8} rep={} FAILED: {}\n", c.solver, c.eta, c.repetition, c.error);
    }
  }
}

PhysicalNetwork substrate(const ScenarioConfig& s) {
  auto pn = build_substrate(s);
  fmt::print(stderr, "substrate: {} nodes, {} links\n", pn.node_count(), pn.link_count());
  return pn;
}

ExperimentPlan load_plan(const std::string& config) {
  if (config.empty()) return ExperimentPlan{};
  return parse_config(config);
}

void apply_topology(ScenarioConfig& s, const std::string& topology) {
  if (topology.empty()) return;
  s.topology.kind = TopologySource::Kind::file;
  s.topology.path = topology;
}

int cmd_gen_topology(const Common& c, int nodes, int links, double alpha) {
  if (c.out.empty()) throw std::invalid_argument("--out FILE is required");
  WaxmanParams params;
  params.alpha = alpha;
  const auto pn = generate_waxman(nodes, links, c.seed.value_or(0), CapacityConfig{}, params);
  save_topology(pn, c.out);
  fmt::print("{} nodes, {} links, density {:.4f} -> {}\n", pn.node_count(), pn.link_count(), pn.density(), c.out);
  return 0;
}

struct SimulateArgs {
  std::string config, topology, solver = "greedy";
  std::optional<double> eta;
  std::optional<int> count;
  int repetition = 0;
};

int cmd_simulate(const Common& c, const SimulateArgs& a) {
  auto plan = load_plan(a.config);
  auto& s = plan.scenario;
  apply_topology(s, a.topology);
  if (c.seed) s.seed = *c.seed;
  if (a.count) s.vnrs.count = *a.count;
  const double eta = a.eta.value_or(s.vnrs.arrival_rate);
  if (!(eta > 0)) throw std::invalid_argument("--eta must be > 0");
  const auto binding = parse_solver_binding(a.solver);
  std::optional<PolicySet> policies;
  if (binding.kind == SolverBinding::Kind::policy) policies.emplace(PolicySet::load(binding.policy));
  const auto pn = substrate(s);
  const fs::path dir = c.out.empty() ? fs::path("simulate_out") : fs::path(c.out);
  auto cell = run_cell(pn, s, binding, policies ? &*policies : nullptr, eta, a.repetition, dir);
  print_cells({cell});
  if (cell.ok) fmt::print("metrics: {}\nevents:  {}\n", cell.metrics_csv.string(), cell.events_jsonl.string());
  return cell.ok ? 0 : 1;
}

int cmd_train(const Common& c, const std::string& config) {
  auto plan = load_plan(config);
  if (c.seed) plan.trainer.seed = *c.seed;
  const fs::path out = c.out.empty() ? fs::path("train_out") : fs::path(c.out);
  fs::create_directories(out);
  write_file(out / "config.json", format_config(plan));
  const auto pn = substrate(plan.scenario);
  std::ofstream log(out / "train_log.jsonl", std::ios::binary);
  auto result = train(plan.trainer, pn, plan.scenario.vnrs, &log, c.jobs);
  result.policies.save(out / "policy_set");
  fmt::print("{} iterations, {} episodes, curriculum reached task {}\npolicy set: {}\n", result.iterations,
             result.episodes, result.curriculum.tasks.back(), (out / "policy_set").string());
  return 0;
}

struct FineTuneArgs {
  std::string config, meta, sizes = "2..12";
  std::optional<int> simulations, vnrs;
};

int cmd_fine_tune(const Common& c, const FineTuneArgs& a) {
  auto plan = load_plan(a.config);
  if (c.seed) plan.trainer.seed = *c.seed;
  const auto start = PolicySet::load(a.meta);
  FineTuneBudget budget{a.simulations.value_or(plan.trainer.fine_tune_simulations),
                        a.vnrs.value_or(plan.trainer.vnrs_per_simulation), plan.trainer.episodes_per_iteration};
  const fs::path out = c.out.empty() ? fs::path("fine_tune_out") : fs::path(c.out);
  fs::create_directories(out);
  const auto pn = substrate(plan.scenario);
  std::ofstream log(out / "fine_tune_log.jsonl", std::ios::binary);
  auto result = fine_tune(start, pn, plan.scenario.vnrs, parse_size_list(a.sizes), budget, plan.trainer.alpha,
                          plan.trainer.ppo, plan.trainer.seed, &log, c.jobs);
  result.policies.save(out / "policy_set");
  for (const auto& [size, history] : result.acceptance) {
    const auto accepted = std::count(history.begin(), history.end(), true);
    fmt::print("size {:>2}: {} episodes, {} accepted\n", size, history.size(), accepted);
  }
  fmt::print("policy set: {}\n", (out / "policy_set").string());
  return 0;
}

struct EvaluateArgs {
  std::string config, policy_set, topology;
  std::optional<double> eta;
  std::optional<int> count;
  int repetitions = 1;
};

int cmd_evaluate(const Common& c, const EvaluateArgs& a) {
  auto plan = load_plan(a.config);
  apply_topology(plan.scenario, a.topology);
  if (c.seed) plan.scenario.seed = *c.seed;
  if (a.count) plan.scenario.vnrs.count = *a.count;
  plan.etas = {a.eta.value_or(plan.scenario.vnrs.arrival_rate)};
  plan.repetitions = a.repetitions;
  plan.solvers = {parse_solver_binding("flagvne=policy:" + a.policy_set), parse_solver_binding("greedy")};
  plan.out = c.out.empty() ? fs::path("evaluate_out") : fs::path(c.out);
  substrate(plan.scenario);
  auto result = run_experiment(plan, c.jobs);
  print_cells(result.cells);
  fmt::print("summary: {}\n", (plan.out / "summary.csv").string());
  return result.ok() ? 0 : 1;
}

int cmd_sweep(const Common& c, const std::string& config) {
  auto plan = load_plan(config);
  if (c.seed) plan.scenario.seed = *c.seed;
  if (!c.out.empty()) plan.out = c.out;
  substrate(plan.scenario);
  auto result = run_experiment(plan, c.jobs);
  print_cells(result.cells);
  fmt::print("summary: {}\n", (plan.out / "summary.csv").string());
  return result.ok() ? 0 : 1;
}

int cmd_emit_defaults(const Common& c) {
  if (c.out.empty()) {
    std::cout << emit_defaults();
  } else {
    write_file(c.out, emit_defaults());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Virtual network embedding lab: simulation, training and sweeps"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "Base seed");
  app.add_option("--out", common.out, "Output file or directory");
  app.add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-topology", "Write a Waxman topology file");
  int nodes = 100, links = 500;
  double alpha = 0.5;
  gen->add_option("--nodes", nodes)->check(CLI::Range(2, 100000));
  gen->add_option("--links", links)->check(CLI::PositiveNumber);
  gen->add_option("--alpha", alpha);

  auto* sim = app.add_subcommand("simulate", "Run one simulation and write its metrics CSV");
  SimulateArgs sa;
  sim->add_option("--config", sa.config, "Experiment config (defaults otherwise)");
  sim->add_option("--topology", sa.topology, "Topology file");
  sim->add_option("--eta", sa.eta, "Arrival rate");
  sim->add_option("--count", sa.count, "Number of VNRs")->check(CLI::PositiveNumber);
  sim->add_option("--solver", sa.solver, "greedy | reject-all | policy:DIR");
  sim->add_option("--repetition", sa.repetition, "Repetition index for seed derivation");

  auto* tr = app.add_subcommand("train", "Meta-train a policy set");
  std::string train_config;
  tr->add_option("--config", train_config, "Experiment config")->required();

  auto* ft = app.add_subcommand("fine-tune", "Fine-tune a trained policy per VNR size");
  FineTuneArgs fa;
  ft->add_option("--meta", fa.meta, "Policy or policy-set directory")->required();
  ft->add_option("--sizes", fa.sizes, "Sizes as LO..HI or a comma list");
  ft->add_option("--config", fa.config, "Experiment config (defaults otherwise)");
  ft->add_option("--simulations", fa.simulations)->check(CLI::NonNegativeNumber);
  ft->add_option("--vnrs", fa.vnrs, "VNRs per simulation")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("evaluate", "Compare a policy set with the greedy baseline");
  EvaluateArgs ea;
  ev->add_option("--policy-set", ea.policy_set)->required();
  ev->add_option("--config", ea.config);
  ev->add_option("--topology", ea.topology);
  ev->add_option("--eta", ea.eta);
  ev->add_option("--count", ea.count)->check(CLI::PositiveNumber);
  ev->add_option("--repetitions", ea.repetitions)->check(CLI::PositiveNumber);

  auto* sw = app.add_subcommand("sweep", "Run every solver x eta x repetition cell of a config");
  std::string sweep_config;
  sw->add_option("--config", sweep_config)->required();

  app.add_subcommand("emit-defaults", "Print the default config");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen-topology") return cmd_gen_topology(common, nodes, links, alpha);
    if (name == "simulate") return cmd_simulate(common, sa);
    if (name == "train") return cmd_train(common, train_config);
    if (name == "fine-tune") return cmd_fine_tune(common, fa);
    if (name == "evaluate") return cmd_evaluate(common, ea);
    if (name == "sweep") return cmd_sweep(common, sweep_config);
    if (name == "emit-defaults") return cmd_emit_defaults(common);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
