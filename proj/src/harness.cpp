#include "vne/harness.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vne/heuristics.hpp"
#include "vne/parallel.hpp"

namespace vne {

using nlohmann::json;

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error([&] {
        std::string msg = fmt::format("{} configuration problem(s):", problems.size());
        for (const auto& p : problems) msg += "\n  " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

SolverBinding parse_solver_binding(const std::string& text) {
  SolverBinding b;
  std::string spec = text;
  if (auto eq = text.find('='); eq != std::string::npos) {
    b.label = text.substr(0, eq);
    spec = text.substr(eq + 1);
    if (b.label.empty()) throw std::invalid_argument("empty solver label in '" + text + "'");
  }
  if (spec == "greedy") {
    b.kind = SolverBinding::Kind::greedy;
  } else if (spec == "reject-all") {
    b.kind = SolverBinding::Kind::reject_all;
  } else if (spec.rfind("policy:", 0) == 0 && spec.size() > 7) {
    b.kind = SolverBinding::Kind::policy;
    b.policy = spec.substr(7);
  } else {
    throw std::invalid_argument("unknown solver '" + text + "' (greedy, reject-all, policy:DIR)");
  }
  if (b.label.empty()) {
    b.label = b.kind == SolverBinding::Kind::policy ? "policy-" + b.policy.filename().string() : spec;
  }
  for (char c : b.label) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
      throw std::invalid_argument("solver label '" + b.label + "' may only use [A-Za-z0-9._-]");
    }
  }
  return b;
}

std::string to_string(const SolverBinding& b) {
  std::string spec;
  switch (b.kind) {
    case SolverBinding::Kind::greedy: spec = "greedy"; break;
    case SolverBinding::Kind::reject_all: spec = "reject-all"; break;
    case SolverBinding::Kind::policy: spec = "policy:" + b.policy.string(); break;
  }
  return b.label + "=" + spec;
}

// ------------------------------------------------------------------ parsing

namespace {

// Walks a JSON document and collects every problem with its dotted path.
class Reader {
 public:
  std::vector<std::string> errors;

  bool object(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) {
      errors.push_back(path + ": expected an object");
      return false;
    }
    for (const auto& item : j.items()) {
      bool known = false;
      for (const char* k : keys) known = known || item.key() == k;
      if (!known) errors.push_back(join(path, item.key()) + ": unknown key");
    }
    return true;
  }

  // Returns the member if present; records a problem when a required one is missing.
  const json* member(const json& obj, const std::string& path, const char* key, bool required = false) {
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) errors.push_back(join(path, key) + ": missing required field");
      return nullptr;
    }
    return &*it;
  }

  template <typename T>
  void get(const json& obj, const std::string& path, const char* key, T& out, bool required = false) {
    if (const json* v = member(obj, path, key, required)) read(*v, join(path, key), out);
  }

  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }

  void read(const json& v, const std::string& p, int& out) {
    if (v.is_number_integer()) {
      out = v.get<int>();
    } else {
      mismatch(p, "an integer");
    }
  }
  void read(const json& v, const std::string& p, std::uint64_t& out) {
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
    } else {
      mismatch(p, "a non-negative integer");
    }
  }
  void read(const json& v, const std::string& p, double& out) {
    if (v.is_number()) {
      out = v.get<double>();
    } else {
      mismatch(p, "a number");
    }
  }
  void read(const json& v, const std::string& p, bool& out) {
    if (v.is_boolean()) {
      out = v.get<bool>();
    } else {
      mismatch(p, "a boolean");
    }
  }
  void read(const json& v, const std::string& p, std::string& out) {
    if (v.is_string()) {
      out = v.get<std::string>();
    } else {
      mismatch(p, "a string");
    }
  }
  void read(const json& v, const std::string& p, Range<int>& out) {
    if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer()) {
      out = {v[0].get<int>(), v[1].get<int>()};
    } else {
      mismatch(p, "[lo, hi] integers");
    }
  }
  template <typename T>
  void read(const json& v, const std::string& p, std::vector<T>& out) {
    if (!v.is_array()) {
      mismatch(p, "an array");
      return;
    }
    std::vector<T> tmp(v.size());
    const size_t before = errors.size();
    for (size_t i = 0; i < v.size(); ++i) read(v[i], fmt::format("{}[{}]", p, i), tmp[i]);
    if (errors.size() == before) out = std::move(tmp);
  }

 private:
  void mismatch(const std::string& p, const char* want) { errors.push_back(p + ": expected " + want); }
};

void read_topology(Reader& r, const json& j, TopologySource& t) {
  const std::string p = "scenario.topology";
  if (!r.object(j, p, {"kind", "path", "nodes", "links", "alpha"})) return;
  std::string kind;
  r.get(j, p, "kind", kind, true);
  if (kind == "file") {
    t.kind = TopologySource::Kind::file;
    std::string path;
    r.get(j, p, "path", path, true);
    t.path = path;
  } else if (kind == "waxman") {
    t.kind = TopologySource::Kind::waxman;
  } else if (!kind.empty()) {
    r.errors.push_back(p + ".kind: expected \"file\" or \"waxman\"");
  }
  r.get(j, p, "nodes", t.nodes);
  r.get(j, p, "links", t.links);
  r.get(j, p, "alpha", t.alpha);
}

void read_scenario(Reader& r, const json& j, ScenarioConfig& s) {
  const std::string p = "scenario";
  if (!r.object(j, p, {"topology", "capacity", "vnrs", "seed"})) return;
  if (const json* t = r.member(j, p, "topology", true)) read_topology(r, *t, s.topology);
  if (const json* c = r.member(j, p, "capacity")) {
    if (r.object(*c, "scenario.capacity", {"node", "link"})) {
      r.get(*c, "scenario.capacity", "node", s.capacity.node);
      r.get(*c, "scenario.capacity", "link", s.capacity.link);
    }
  }
  if (const json* v = r.member(j, p, "vnrs")) {
    const std::string q = "scenario.vnrs";
    if (r.object(*v, q, {"count", "size", "node_demand", "link_demand", "link_probability", "mean_lifetime",
                         "arrival_rate"})) {
      r.get(*v, q, "count", s.vnrs.count);
      r.get(*v, q, "size", s.vnrs.size);
      r.get(*v, q, "node_demand", s.vnrs.node_demand);
      r.get(*v, q, "link_demand", s.vnrs.link_demand);
      r.get(*v, q, "link_probability", s.vnrs.link_probability);
      r.get(*v, q, "mean_lifetime", s.vnrs.mean_lifetime);
      r.get(*v, q, "arrival_rate", s.vnrs.arrival_rate);
    }
  }
  r.get(j, p, "seed", s.seed);
}

void read_experiment(Reader& r, const json& j, ExperimentPlan& plan) {
  const std::string p = "experiment";
  if (!r.object(j, p, {"etas", "solvers", "repetitions", "out"})) return;
  r.get(j, p, "etas", plan.etas);
  std::vector<std::string> solvers;
  if (const json* v = r.member(j, p, "solvers")) {
    r.read(*v, "experiment.solvers", solvers);
    plan.solvers.clear();
    for (size_t i = 0; i < solvers.size(); ++i) {
      try {
        plan.solvers.push_back(parse_solver_binding(solvers[i]));
      } catch (const std::invalid_argument& e) {
        r.errors.push_back(fmt::format("experiment.solvers[{}]: {}", i, e.what()));
      }
    }
  }
  r.get(j, p, "repetitions", plan.repetitions);
  std::string out;
  r.get(j, p, "out", out);
  if (!out.empty()) plan.out = out;
}

void read_trainer(Reader& r, const json& j, TrainerConfig& t) {
  const std::string p = "trainer";
  if (!r.object(j, p, {"policy", "action_mode", "training_mode", "curriculum", "meta_simulations",
                       "fine_tune_simulations", "vnrs_per_simulation", "episodes_per_iteration", "ppo", "alpha",
                       "beta", "meta_optimizer", "delta", "entropy_ema", "fine_tune_sizes", "seed", "log_episodes"})) {
    return;
  }
  if (const json* v = r.member(j, p, "policy")) {
    if (r.object(*v, "trainer.policy", {"hidden", "gcn_layers", "feature_scale"})) {
      r.get(*v, "trainer.policy", "hidden", t.policy.hidden);
      r.get(*v, "trainer.policy", "gcn_layers", t.policy.gcn_layers);
      r.get(*v, "trainer.policy", "feature_scale", t.policy.feature_scale);
    }
  }
  std::string text;
  if (const json* v = r.member(j, p, "action_mode")) {
    text.clear();
    r.read(*v, "trainer.action_mode", text);
    try {
      if (!text.empty()) t.action_mode = ActionMode::parse(text);
    } catch (const std::exception& e) {
      r.errors.push_back(std::string("trainer.action_mode: ") + e.what());
    }
  }
  if (const json* v = r.member(j, p, "training_mode")) {
    text.clear();
    r.read(*v, "trainer.training_mode", text);
    try {
      if (!text.empty()) t.training_mode = parse_training_mode(text);
    } catch (const std::exception& e) {
      r.errors.push_back(std::string("trainer.training_mode: ") + e.what());
    }
  }
  r.get(j, p, "curriculum", t.curriculum);
  r.get(j, p, "meta_simulations", t.meta_simulations);
  r.get(j, p, "fine_tune_simulations", t.fine_tune_simulations);
  r.get(j, p, "vnrs_per_simulation", t.vnrs_per_simulation);
  r.get(j, p, "episodes_per_iteration", t.episodes_per_iteration);
  if (const json* v = r.member(j, p, "ppo")) {
    const std::string q = "trainer.ppo";
    if (r.object(*v, q, {"clip", "epochs", "minibatch", "gamma", "gae_lambda", "value_coef", "entropy_coef"})) {
      r.get(*v, q, "clip", t.ppo.clip);
      r.get(*v, q, "epochs", t.ppo.epochs);
      r.get(*v, q, "minibatch", t.ppo.minibatch);
      r.get(*v, q, "gamma", t.ppo.gamma);
      r.get(*v, q, "gae_lambda", t.ppo.gae_lambda);
      r.get(*v, q, "value_coef", t.ppo.value_coef);
      r.get(*v, q, "entropy_coef", t.ppo.entropy_coef);
    }
  }
  r.get(j, p, "alpha", t.alpha);
  r.get(j, p, "beta", t.beta);
  if (const json* v = r.member(j, p, "meta_optimizer")) {
    text.clear();
    r.read(*v, "trainer.meta_optimizer", text);
    if (text == "adam") {
      t.meta_optimizer = MetaOptimizer::Kind::adam;
    } else if (text == "sgd") {
      t.meta_optimizer = MetaOptimizer::Kind::sgd;
    } else if (!text.empty()) {
      r.errors.push_back("trainer.meta_optimizer: expected \"adam\" or \"sgd\"");
    }
  }
  r.get(j, p, "delta", t.delta);
  r.get(j, p, "entropy_ema", t.entropy_ema);
  r.get(j, p, "fine_tune_sizes", t.fine_tune_sizes);
  r.get(j, p, "seed", t.seed);
  r.get(j, p, "log_episodes", t.log_episodes);
}

json to_json(const ExperimentPlan& plan) {
  const auto& s = plan.scenario;
  json topo{{"kind", s.topology.kind == TopologySource::Kind::file ? "file" : "waxman"}};
  if (s.topology.kind == TopologySource::Kind::file) {
    topo["path"] = s.topology.path.string();
  } else {
    topo["nodes"] = s.topology.nodes;
    topo["links"] = s.topology.links;
    topo["alpha"] = s.topology.alpha;
  }
  auto range = [](Range<int> r) { return json::array({r.lo, r.hi}); };
  json scenario{{"topology", topo},
                {"capacity", {{"node", range(s.capacity.node)}, {"link", range(s.capacity.link)}}},
                {"vnrs",
                 {{"count", s.vnrs.count},
                  {"size", range(s.vnrs.size)},
                  {"node_demand", range(s.vnrs.node_demand)},
                  {"link_demand", range(s.vnrs.link_demand)},
                  {"link_probability", s.vnrs.link_probability},
                  {"mean_lifetime", s.vnrs.mean_lifetime},
                  {"arrival_rate", s.vnrs.arrival_rate}}},
                {"seed", s.seed}};
  std::vector<std::string> solvers;
  for (const auto& b : plan.solvers) solvers.push_back(to_string(b));
  json experiment{{"etas", plan.etas}, {"solvers", solvers}, {"repetitions", plan.repetitions},
                  {"out", plan.out.string()}};
  const auto& t = plan.trainer;
  json trainer{{"policy",
                {{"hidden", t.policy.hidden},
                 {"gcn_layers", t.policy.gcn_layers},
                 {"feature_scale", t.policy.feature_scale}}},
               {"action_mode", t.action_mode.to_string()},
               {"training_mode", to_string(t.training_mode)},
               {"curriculum", t.curriculum},
               {"meta_simulations", t.meta_simulations},
               {"fine_tune_simulations", t.fine_tune_simulations},
               {"vnrs_per_simulation", t.vnrs_per_simulation},
               {"episodes_per_iteration", t.episodes_per_iteration},
               {"ppo",
                {{"clip", t.ppo.clip},
                 {"epochs", t.ppo.epochs},
                 {"minibatch", t.ppo.minibatch},
                 {"gamma", t.ppo.gamma},
                 {"gae_lambda", t.ppo.gae_lambda},
                 {"value_coef", t.ppo.value_coef},
                 {"entropy_coef", t.ppo.entropy_coef}}},
               {"alpha", t.alpha},
               {"beta", t.beta},
               {"meta_optimizer", t.meta_optimizer == MetaOptimizer::Kind::adam ? "adam" : "sgd"},
               {"delta", t.delta},
               {"entropy_ema", t.entropy_ema},
               {"fine_tune_sizes", t.fine_tune_sizes},
               {"seed", t.seed},
               {"log_episodes", t.log_episodes}};
  return json{{"scenario", scenario}, {"experiment", experiment}, {"trainer", trainer}};
}

}  // namespace

std::vector<std::string> validate(const ExperimentPlan& plan) {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  const auto& s = plan.scenario;
  if (s.topology.kind == TopologySource::Kind::waxman) {
    need(s.topology.nodes >= 2, "scenario.topology.nodes must be >= 2");
    const long max_links = static_cast<long>(s.topology.nodes) * (s.topology.nodes - 1) / 2;
    need(s.topology.links >= s.topology.nodes - 1 && s.topology.links <= max_links,
         "scenario.topology.links must allow a connected simple graph");
    need(s.topology.alpha > 0, "scenario.topology.alpha must be > 0");
  } else {
    need(!s.topology.path.empty(), "scenario.topology.path must not be empty");
  }
  need(s.capacity.node.valid() && s.capacity.node.lo >= 0, "scenario.capacity.node must be a non-empty range >= 0");
  need(s.capacity.link.valid() && s.capacity.link.lo >= 0, "scenario.capacity.link must be a non-empty range >= 0");
  const auto& v = s.vnrs;
  need(v.count >= 1, "scenario.vnrs.count must be >= 1");
  need(v.size.valid() && v.size.lo >= 1, "scenario.vnrs.size must be a non-empty range >= 1");
  need(v.node_demand.valid() && v.node_demand.lo >= 0, "scenario.vnrs.node_demand must be a non-empty range >= 0");
  need(v.link_demand.valid() && v.link_demand.lo >= 0, "scenario.vnrs.link_demand must be a non-empty range >= 0");
  need(v.link_probability >= 0 && v.link_probability <= 1, "scenario.vnrs.link_probability must be in [0, 1]");
  need(v.mean_lifetime > 0, "scenario.vnrs.mean_lifetime must be > 0");
  need(v.arrival_rate > 0, "scenario.vnrs.arrival_rate must be > 0");
  need(!plan.etas.empty(), "experiment.etas must not be empty");
  for (size_t i = 0; i < plan.etas.size(); ++i) {
    need(plan.etas[i] > 0, fmt::format("experiment.etas[{}] must be > 0", i));
  }
  need(!plan.solvers.empty(), "experiment.solvers must not be empty");
  for (size_t i = 0; i < plan.solvers.size(); ++i) {
    for (size_t k = 0; k < i; ++k) {
      need(plan.solvers[k].label != plan.solvers[i].label,
           fmt::format("experiment.solvers[{}]: duplicate label '{}'", i, plan.solvers[i].label));
    }
  }
  need(plan.repetitions >= 1, "experiment.repetitions must be >= 1");
  for (const auto& e : validate(plan.trainer)) errs.push_back("trainer." + e);
  return errs;
}

ExperimentPlan parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("malformed JSON: ") + e.what()});
  }
  Reader r;
  ExperimentPlan plan;
  if (r.object(doc, "", {"scenario", "experiment", "trainer"})) {
    if (const json* s = r.member(doc, "", "scenario", true)) read_scenario(r, *s, plan.scenario);
    if (const json* e = r.member(doc, "", "experiment")) read_experiment(r, *e, plan);
    if (const json* t = r.member(doc, "", "trainer")) read_trainer(r, *t, plan.trainer);
  }
  for (auto& e : validate(plan)) r.errors.push_back(std::move(e));
  if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
  return plan;
}

ExperimentPlan parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot read " + path.string()});
  std::stringstream buf;
  buf << in.rdbuf();
  auto plan = parse_config_text(buf.str());
  // Relative topology paths are resolved against the config's directory.
  auto& topo = plan.scenario.topology;
  if (topo.kind == TopologySource::Kind::file && topo.path.is_relative() && !std::filesystem::exists(topo.path)) {
    const auto beside = path.parent_path() / topo.path;
    if (std::filesystem::exists(beside)) topo.path = beside;
  }
  return plan;
}

std::string format_config(const ExperimentPlan& plan) { return to_json(plan).dump(2) + "\n"; }

std::string emit_defaults() { return format_config(ExperimentPlan{}); }

std::vector<int> parse_size_list(const std::string& text) {
  std::vector<int> out;
  auto to_int = [&](const std::string& s) {
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || v < 1) throw std::invalid_argument("bad size list '" + text + "'");
    return v;
  };
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const int lo = to_int(text.substr(0, dots));
    const int hi = to_int(text.substr(dots + 2));
    if (lo > hi) throw std::invalid_argument("bad size range '" + text + "'");
    for (int s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_int(item));
  if (out.empty()) throw std::invalid_argument("empty size list");
  return out;
}

// ---------------------------------------------------------------- running

PhysicalNetwork build_substrate(const ScenarioConfig& s) {
  if (s.topology.kind == TopologySource::Kind::file) return load_topology(s.topology.path, s.capacity, s.seed);
  WaxmanParams params;
  params.alpha = s.topology.alpha;
  return generate_waxman(s.topology.nodes, s.topology.links, s.seed, s.capacity, params);
}

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t base, double eta, int repetition) {
  return derive_seed(base, {1, std::bit_cast<std::uint64_t>(eta), static_cast<std::uint64_t>(repetition)});
}

std::uint64_t cell_seed(std::uint64_t base, const std::string& solver_label, double eta, int repetition) {
  return derive_seed(base,
                     {2, fnv1a(solver_label), std::bit_cast<std::uint64_t>(eta), static_cast<std::uint64_t>(repetition)});
}

std::string cell_name(const std::string& solver_label, double eta, int repetition) {
  return fmt::format("{}_eta{}_rep{}", solver_label, eta, repetition);
}

CellResult run_cell(const PhysicalNetwork& pn, const ScenarioConfig& scenario, const SolverBinding& solver,
                    const PolicySet* policies, double eta, int repetition, const std::filesystem::path& dir) {
  CellResult cell;
  cell.solver = solver.label;
  cell.eta = eta;
  cell.repetition = repetition;
  cell.seed = cell_seed(scenario.seed, solver.label, eta, repetition);
  try {
    VnrConfig vnr_cfg = scenario.vnrs;
    vnr_cfg.arrival_rate = eta;
    const auto vnrs = sample_vnr_stream(vnr_cfg, stream_seed(scenario.seed, eta, repetition));
    std::unique_ptr<Solver> impl;
    switch (solver.kind) {
      case SolverBinding::Kind::greedy: impl = std::make_unique<GreedySolver>(); break;
      case SolverBinding::Kind::reject_all: impl = std::make_unique<RejectAllSolver>(); break;
      case SolverBinding::Kind::policy:
        if (!policies) throw std::invalid_argument("no policy set loaded for " + solver.label);
        impl = std::make_unique<PolicySolver>(*policies, SelectMode::greedy, cell.seed);
        break;
    }
    const auto ledger = run_simulation(pn, vnrs, *impl);
    // Same convention as the per-cell CSV: an undefined metric reads 0.
    auto or_zero = [&](double (*metric)(const MetricsLedger&)) {
      try {
        return metric(ledger);
      } catch (const MetricUndefined&) {
        return 0.0;
      }
    };
    cell.metrics = {ledger.arrived_count, ledger.accepted_count, or_zero(rac), or_zero(lar), or_zero(lt_r2c)};
    if (!dir.empty()) {
      std::filesystem::create_directories(dir);
      const auto name = cell_name(solver.label, eta, repetition);
      cell.metrics_csv = dir / (name + ".csv");
      cell.events_jsonl = dir / (name + ".jsonl");
      std::ofstream csv(cell.metrics_csv);
      std::ofstream events(cell.events_jsonl);
      if (!csv || !events) throw std::runtime_error("cannot write cell outputs in " + dir.string());
      write_metrics_csv(ledger, csv);
      write_solution_dump(ledger, pn, events);
    }
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.error = e.what();
  }
  return cell;
}

bool ExperimentResult::ok() const {
  return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
}

void write_summary_csv(const std::vector<CellResult>& cells, std::ostream& out) {
  out << kSummaryCsvSchema << '\n' << kSummaryCsvHeader << '\n';
  for (const auto& c : cells) {
    if (c.ok) {
      out << fmt::format("{},{},{},{},ok,{},{},{},{},{}\n", c.solver, c.eta, c.repetition, c.seed, c.metrics.arrived,
                         c.metrics.accepted, c.metrics.rac, c.metrics.lar, c.metrics.lt_r2c);
    } else {
      out << fmt::format("{},{},{},{},failed,,,,,\n", c.solver, c.eta, c.repetition, c.seed);
    }
  }
}

ExperimentResult run_experiment(const ExperimentPlan& plan, int jobs) {
  if (auto errs = validate(plan); !errs.empty()) throw ConfigError(std::move(errs));
  const auto pn = build_substrate(plan.scenario);

  std::vector<std::optional<PolicySet>> policies(plan.solvers.size());
  std::vector<std::string> load_errors(plan.solvers.size());
  for (size_t i = 0; i < plan.solvers.size(); ++i) {
    if (plan.solvers[i].kind != SolverBinding::Kind::policy) continue;
    try {
      policies[i].emplace(PolicySet::load(plan.solvers[i].policy));
    } catch (const std::exception& e) {
      load_errors[i] = e.what();
    }
  }

  struct Coord {
    size_t solver;
    double eta;
    int rep;
  };
  std::vector<Coord> coords;
  for (size_t s = 0; s < plan.solvers.size(); ++s) {
    for (double eta : plan.etas) {
      for (int rep = 0; rep < plan.repetitions; ++rep) coords.push_back({s, eta, rep});
    }
  }
  const auto cell_dir = plan.out / "cells";
  std::filesystem::create_directories(cell_dir);
  ExperimentResult result;
  result.cells.resize(coords.size());
  auto errors = parallel_for(static_cast<int>(coords.size()), jobs, [&](int i) {
    const auto& c = coords[static_cast<size_t>(i)];
    const auto& binding = plan.solvers[c.solver];
    auto& cell = result.cells[static_cast<size_t>(i)];
    if (!load_errors[c.solver].empty()) {
      cell.solver = binding.label;
      cell.eta = c.eta;
      cell.repetition = c.rep;
      cell.seed = cell_seed(plan.scenario.seed, binding.label, c.eta, c.rep);
      cell.error = "cannot load policy set: " + load_errors[c.solver];
      return;
    }
    cell = run_cell(pn, plan.scenario, binding, policies[c.solver] ? &*policies[c.solver] : nullptr, c.eta, c.rep,
                    cell_dir);
  });
  rethrow_first(errors);

  std::ofstream summary(plan.out / "summary.csv");
  if (!summary) throw std::runtime_error("cannot write " + (plan.out / "summary.csv").string());
  write_summary_csv(result.cells, summary);
  const auto failures_path = plan.out / "failures.jsonl";
  std::filesystem::remove(failures_path);
  if (!result.ok()) {
    std::ofstream failures(failures_path);
    for (const auto& c : result.cells) {
      if (c.ok) continue;
      failures << json{{"solver", c.solver}, {"eta", c.eta}, {"repetition", c.repetition}, {"error", c.error}}.dump()
               << '\n';
    }
  }
  return result;
}

}  // namespace vne
