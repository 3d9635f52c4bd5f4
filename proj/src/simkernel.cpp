#include "vne/simkernel.hpp"

#include <map>
#include <queue>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>

namespace vne {

double rac(const MetricsLedger& ledger) {
  if (ledger.arrived_count == 0) throw MetricUndefined("RAC undefined: no arrivals");
  return static_cast<double>(ledger.accepted_count) / ledger.arrived_count;
}

double lar(const MetricsLedger& ledger) {
  if (!(ledger.horizon > 0.0)) throw MetricUndefined("LAR undefined: empty horizon");
  return ledger.revenue_weighted_sum / ledger.horizon;
}

double lt_r2c(const MetricsLedger& ledger) {
  if (ledger.cost_weighted_sum == 0.0) throw MetricUndefined("LT-R2C undefined: zero cost");
  return ledger.revenue_weighted_sum / ledger.cost_weighted_sum;
}

namespace {

struct QueuedEvent {
  SimEvent event;
  long sequence;
};

struct Later {
  bool operator()(const QueuedEvent& a, const QueuedEvent& b) const {
    // Min-heap on (time, departures first, insertion order).
    auto key = [](const QueuedEvent& e) {
      return std::make_tuple(e.event.time, e.event.kind == EventKind::arrival ? 1 : 0, e.sequence);
    };
    return key(a) > key(b);
  }
};

}  // namespace

struct Simulator::Impl {
  const PhysicalNetwork& pn;
  const std::vector<VirtualNetworkRequest>& vnrs;
  Solver& solver;
  SimulationOptions options;
  MetricsLedger ledger;
  SubstrateState state;
  std::priority_queue<QueuedEvent, std::vector<QueuedEvent>, Later> queue;
  long sequence = 0;
  std::map<int, EmbeddingSolution> active;  // by stream index

  Impl(const PhysicalNetwork& p, const std::vector<VirtualNetworkRequest>& v, Solver& s, SimulationOptions o)
      : pn(p), vnrs(v), solver(s), options(std::move(o)), state(p) {
    for (size_t i = 0; i < vnrs.size(); ++i) {
      vnrs[i].validate();
      queue.push({{vnrs[i].arrival_time, EventKind::arrival, static_cast<int>(i)}, sequence++});
    }
  }

  void record(const SimEvent& ev, const VirtualNetworkRequest& vnr, bool accepted, double ratio) {
    EventRecord r;
    r.time = ev.time;
    r.kind = ev.kind;
    r.vnr_id = vnr.id;
    r.size = vnr.node_count();
    r.accepted = accepted;
    r.r2c = ratio;
    r.running_rac = ledger.arrived_count ? static_cast<double>(ledger.accepted_count) / ledger.arrived_count : 0.0;
    r.running_lar = ev.time > 0.0 ? ledger.revenue_weighted_sum / ev.time : 0.0;
    r.running_lt_r2c = ledger.cost_weighted_sum > 0.0 ? ledger.revenue_weighted_sum / ledger.cost_weighted_sum : 0.0;
    ledger.per_event_log.push_back(r);
  }

  void arrive(const SimEvent& ev, const VirtualNetworkRequest& vnr) {
    ++ledger.arrived_count;
    auto solution = solver.solve(state, vnr);
    Decision decision{ev.time, vnr.id, std::nullopt, 0.0, 0.0, 0.0};
    if (solution) {
      if (!solution->feasible) throw IntegrityError(fmt::format("solver returned an unfinished solution for VNR {}", vnr.id));
      if (options.verify) {
        std::vector<EmbeddedRequest> held;
        held.reserve(active.size() + 1);
        for (const auto& [idx, sol] : active) held.push_back({&vnrs[static_cast<size_t>(idx)], &sol});
        held.push_back({&vnr, &*solution});
        auto violations = verify_solution(pn, held);
        if (!violations.empty()) {
          throw IntegrityError(fmt::format("solver '{}' produced an invalid embedding for VNR {}: {} ({})",
                                           solver.name(), vnr.id, to_string(violations.front().kind),
                                           violations.front().detail));
        }
      }
      ++ledger.accepted_count;
      decision.revenue = revenue(vnr);
      decision.cost = cost(vnr, *solution);
      decision.r2c = r2c(vnr, *solution);
      ledger.revenue_weighted_sum += decision.revenue * vnr.lifetime;
      ledger.cost_weighted_sum += decision.cost * vnr.lifetime;
      decision.solution = *solution;
      active.emplace(ev.vnr_index, std::move(*solution));
      queue.push({{ev.time + vnr.lifetime, EventKind::departure, ev.vnr_index}, sequence++});
    } else if (state.holds(vnr.id)) {
      throw IntegrityError(fmt::format("solver '{}' rejected VNR {} without rolling back", solver.name(), vnr.id));
    }
    record(ev, vnr, decision.solution.has_value(), decision.r2c);
    ledger.decisions.push_back(std::move(decision));
  }

  void depart(const SimEvent& ev, const VirtualNetworkRequest& vnr) {
    auto it = active.find(ev.vnr_index);
    if (it == active.end()) throw IntegrityError(fmt::format("departure of unknown VNR {}", vnr.id));
    release(state, it->second);
    active.erase(it);
    record(ev, vnr, true, 0.0);
  }
};

Simulator::Simulator(const PhysicalNetwork& pn, const std::vector<VirtualNetworkRequest>& vnrs, Solver& solver,
                     SimulationOptions options)
    : impl_(std::make_unique<Impl>(pn, vnrs, solver, std::move(options))) {}

Simulator::~Simulator() = default;

bool Simulator::done() const { return impl_->queue.empty(); }

SimEvent Simulator::step() {
  if (done()) throw std::logic_error("simulation already finished");
  const SimEvent ev = impl_->queue.top().event;
  impl_->queue.pop();
  const auto& vnr = impl_->vnrs[static_cast<size_t>(ev.vnr_index)];
  impl_->ledger.horizon = ev.time;
  if (ev.kind == EventKind::departure) {
    impl_->depart(ev, vnr);
  } else {
    impl_->arrive(ev, vnr);
  }
  if (impl_->options.observer) impl_->options.observer(ev, impl_->state);
  return ev;
}

int Simulator::run_arrivals(int count) {
  int handled = 0;
  while (handled < count && !done()) {
    if (step().kind == EventKind::arrival) ++handled;
  }
  return handled;
}

const SubstrateState& Simulator::state() const { return impl_->state; }
const MetricsLedger& Simulator::ledger() const { return impl_->ledger; }

MetricsLedger Simulator::finish() {
  while (!done()) step();
  if (!impl_->state.pristine()) throw IntegrityError("substrate not restored after all departures");
  return std::move(impl_->ledger);
}

MetricsLedger run_simulation(const PhysicalNetwork& pn, const std::vector<VirtualNetworkRequest>& vnrs, Solver& solver,
                             const SimulationOptions& options) {
  return Simulator(pn, vnrs, solver, options).finish();
}

void write_metrics_csv(const MetricsLedger& ledger, std::ostream& out) {
  out << kMetricsCsvSchema << '\n' << kMetricsCsvHeader << '\n';
  for (const auto& r : ledger.per_event_log) {
    out << fmt::format("{},{},{},{},{},{},{},{},{}\n", r.time, r.kind == EventKind::arrival ? "arrival" : "departure",
                       r.vnr_id, r.size, r.accepted ? 1 : 0, r.r2c, r.running_rac, r.running_lar, r.running_lt_r2c);
  }
  auto or_zero = [&](double (*metric)(const MetricsLedger&)) {
    try {
      return metric(ledger);
    } catch (const MetricUndefined&) {
      return 0.0;
    }
  };
  out << fmt::format("{},summary,,{},{},,{},{},{}\n", ledger.horizon, ledger.arrived_count, ledger.accepted_count,
                     or_zero(rac), or_zero(lar), or_zero(lt_r2c));
}

void write_solution_dump(const MetricsLedger& ledger, const PhysicalNetwork& pn, std::ostream& out) {
  for (const auto& d : ledger.decisions) {
    nlohmann::json j;
    j["vnr_id"] = d.vnr_id;
    j["time"] = d.time;
    j["psi"] = d.solution.has_value() ? 1 : 0;
    auto node_map = nlohmann::json::array();
    auto link_paths = nlohmann::json::array();
    if (d.solution) {
      for (const auto& m : d.solution->node_map) node_map.push_back(m ? *m : -1);
      for (const auto& p : d.solution->link_paths) {
        auto path = nlohmann::json::array();
        if (p) {
          for (LinkId l : *p) path.push_back({pn.graph.link(l).u, pn.graph.link(l).v});
        }
        link_paths.push_back(path);
      }
    }
    j["node_map"] = node_map;
    j["link_paths"] = link_paths;
    j["revenue"] = d.revenue;
    j["cost"] = d.cost;
    j["r2c"] = d.r2c;
    out << j.dump() << '\n';
  }
}

}  // namespace vne
