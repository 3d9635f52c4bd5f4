#include <doctest.h>

#include <sstream>

#include "test_helpers.hpp"
#include "vne/heuristics.hpp"
#include "vne/simkernel.hpp"

using namespace vne;
using namespace vne::testing;

TEST_CASE("always-reject run") {
  auto pn = uniform_network(path_graph(3), {50, 50, 50}, 100);
  std::vector<VirtualNetworkRequest> vnrs{make_vnr(0, 2, {{0, 1, 5}}, {1, 1, 1}, 10, 1)};
  RejectAllSolver solver;
  auto ledger = run_simulation(pn, vnrs, solver);
  CHECK(ledger.arrived_count == 1);
  CHECK(ledger.accepted_count == 0);
  CHECK(rac(ledger) == 0.0);
  CHECK(ledger.revenue_weighted_sum == 0.0);
  CHECK(ledger.cost_weighted_sum == 0.0);
  CHECK_THROWS_AS(lt_r2c(ledger), MetricUndefined);
  CHECK(ledger.horizon > 0.0);
}

TEST_CASE("empty stream leaves metrics undefined") {
  auto pn = uniform_network(path_graph(3), {50, 50, 50}, 100);
  RejectAllSolver solver;
  auto ledger = run_simulation(pn, {}, solver);
  CHECK_THROWS_AS(rac(ledger), MetricUndefined);
  CHECK_THROWS_AS(lar(ledger), MetricUndefined);
}

TEST_CASE("departure frees resources for a later identical request") {
  auto pn = uniform_network(path_graph(2), {20, 20, 20}, 30);
  // Each request uses the whole substrate.
  std::vector<VirtualNetworkRequest> vnrs{make_vnr(0, 2, {{0, 1, 30}}, {20, 20, 20}, 10, 1),
                                          make_vnr(1, 2, {{0, 1, 30}}, {20, 20, 20}, 10, 11)};
  GreedySolver greedy;
  auto ledger = run_simulation(pn, vnrs, greedy);
  CHECK(ledger.accepted_count == 2);

  // Arrival exactly at the departure instant: departure is processed first.
  vnrs[1].arrival_time = 11;
  auto tie = run_simulation(pn, vnrs, greedy);
  CHECK(tie.accepted_count == 2);

  vnrs[1].arrival_time = 5;
  auto overlap = run_simulation(pn, vnrs, greedy);
  CHECK(overlap.accepted_count == 1);
}

TEST_CASE("hand-computed metrics on five requests") {
  auto sc = five_vnr_scenario();
  ScriptedSolver solver(sc.plan);
  auto ledger = run_simulation(sc.pn, sc.vnrs, solver);
  CHECK(ledger.arrived_count == 5);
  CHECK(ledger.accepted_count == 3);
  CHECK(ledger.horizon == 340.0);
  CHECK(rac(ledger) == 0.6);
  CHECK(lar(ledger) == 13200.0 / 340.0);
  CHECK(lt_r2c(ledger) == 13200.0 / 13700.0);
}

TEST_CASE("metric examples") {
  MetricsLedger l;
  l.arrived_count = 4;
  l.accepted_count = 3;
  CHECK(rac(l) == 0.75);
  l.revenue_weighted_sum = 40 * 500;
  l.cost_weighted_sum = 40 * 500;
  l.horizon = 1000;
  CHECK(lar(l) == 20.0);
  CHECK(lt_r2c(l) == 1.0);
}

TEST_CASE("conservation audited at every event of a 100-VNR run") {
  auto pn = generate_waxman(20, 40, 3);
  VnrConfig cfg;
  cfg.count = 100;
  cfg.arrival_rate = 0.05;
  auto vnrs = sample_vnr_stream(cfg, 4);
  GreedySolver greedy;

  const auto ledger = run_simulation(pn, vnrs, greedy);
  std::vector<std::optional<EmbeddingSolution>> held(vnrs.size());
  int audits = 0;

  // Replay with an independent accounting of reservations taken from the
  // decision log, compared against the live state at every event.
  SimulationOptions audit;
  std::vector<ResourceVector> allocated(static_cast<size_t>(pn.node_count()));
  std::vector<double> allocated_bw(static_cast<size_t>(pn.link_count()), 0.0);
  size_t decision_index = 0;
  audit.observer = [&](const SimEvent& ev, const SubstrateState& state) {
    const auto& vnr = vnrs[static_cast<size_t>(ev.vnr_index)];
    if (ev.kind == EventKind::arrival) {
      const auto& d = ledger.decisions[decision_index++];
      REQUIRE(d.vnr_id == vnr.id);
      if (d.solution) {
        for (NodeId nv = 0; nv < vnr.node_count(); ++nv) {
          allocated[static_cast<size_t>(*d.solution->node_map[static_cast<size_t>(nv)])] += vnr.demand[static_cast<size_t>(nv)];
        }
        for (LinkId lv = 0; lv < vnr.link_count(); ++lv) {
          for (LinkId l : *d.solution->link_paths[static_cast<size_t>(lv)]) {
            allocated_bw[static_cast<size_t>(l)] += vnr.graph.link(lv).bandwidth;
          }
        }
        held[static_cast<size_t>(ev.vnr_index)] = d.solution;
      }
    } else {
      const auto& sol = *held[static_cast<size_t>(ev.vnr_index)];
      for (NodeId nv = 0; nv < vnr.node_count(); ++nv) {
        auto& a = allocated[static_cast<size_t>(*sol.node_map[static_cast<size_t>(nv)])];
        a = ResourceVector{a.cpu - vnr.demand[static_cast<size_t>(nv)].cpu,
                           a.storage - vnr.demand[static_cast<size_t>(nv)].storage,
                           a.gpu - vnr.demand[static_cast<size_t>(nv)].gpu};
      }
      for (LinkId lv = 0; lv < vnr.link_count(); ++lv) {
        for (LinkId l : *sol.link_paths[static_cast<size_t>(lv)]) {
          allocated_bw[static_cast<size_t>(l)] -= vnr.graph.link(lv).bandwidth;
        }
      }
    }
    for (NodeId n = 0; n < pn.node_count(); ++n) {
      CHECK(allocated[static_cast<size_t>(n)] + state.avail_node(n) == pn.capacity[static_cast<size_t>(n)]);
    }
    for (LinkId l = 0; l < pn.link_count(); ++l) {
      CHECK(allocated_bw[static_cast<size_t>(l)] + state.avail_bandwidth(l) == pn.graph.link(l).bandwidth);
    }
    ++audits;
  };
  auto replay = run_simulation(pn, vnrs, greedy, audit);
  CHECK(audits == 100 + replay.accepted_count);
  CHECK(replay.accepted_count > 10);
  CHECK(replay.accepted_count == ledger.accepted_count);
}

namespace {

// Claims success without reserving anything and with a broken path.
class CheatingSolver : public Solver {
 public:
  std::optional<EmbeddingSolution> solve(SubstrateState&, const VirtualNetworkRequest& vnr) override {
    auto sol = EmbeddingSolution::empty_for(vnr);
    for (NodeId nv = 0; nv < vnr.node_count(); ++nv) sol.node_map[static_cast<size_t>(nv)] = 0;
    for (auto& p : sol.link_paths) p = Path{};
    sol.feasible = true;
    return sol;
  }
  std::string name() const override { return "cheat"; }
};

class LeakySolver : public Solver {
 public:
  std::optional<EmbeddingSolution> solve(SubstrateState& state, const VirtualNetworkRequest& vnr) override {
    auto sol = EmbeddingSolution::empty_for(vnr);
    place_node(state, vnr, sol, 0, 0);
    return std::nullopt;
  }
  std::string name() const override { return "leaky"; }
};

}  // namespace

TEST_CASE("integrity errors") {
  auto pn = uniform_network(path_graph(3), {50, 50, 50}, 100);
  std::vector<VirtualNetworkRequest> vnrs{make_vnr(0, 2, {{0, 1, 5}}, {1, 1, 1}, 10, 1)};
  CheatingSolver cheat;
  CHECK_THROWS_AS(run_simulation(pn, vnrs, cheat), IntegrityError);
  LeakySolver leaky;
  CHECK_THROWS_AS(run_simulation(pn, vnrs, leaky), IntegrityError);
}

TEST_CASE("determinism, no leaks and rejected requests contribute nothing") {
  auto pn = generate_waxman(15, 30, 8);
  VnrConfig cfg;
  cfg.count = 300;
  cfg.arrival_rate = 0.1;
  auto vnrs = sample_vnr_stream(cfg, 12);
  GreedySolver greedy;
  auto a = run_simulation(pn, vnrs, greedy);
  auto b = run_simulation(pn, vnrs, greedy);
  std::ostringstream ca, cb;
  write_metrics_csv(a, ca);
  write_metrics_csv(b, cb);
  CHECK(ca.str() == cb.str());
  CHECK(a.accepted_count < a.arrived_count);

  double rev = 0.0;
  for (const auto& d : a.decisions) {
    if (!d.solution) {
      CHECK(d.revenue == 0.0);
      CHECK(d.cost == 0.0);
      continue;
    }
    rev += d.revenue * vnrs[static_cast<size_t>(d.vnr_id)].lifetime;
  }
  CHECK(rev == doctest::Approx(a.revenue_weighted_sum));
}

TEST_CASE("metrics CSV and solution dump formats") {
  auto sc = five_vnr_scenario();
  ScriptedSolver solver(sc.plan);
  auto ledger = run_simulation(sc.pn, sc.vnrs, solver);
  std::ostringstream csv;
  write_metrics_csv(ledger, csv);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "# vne-lab metrics-csv v1");
  std::getline(lines, line);
  CHECK(line == "event_time,event,vnr_id,size,accepted,r2c,running_rac,running_lar,running_lt_r2c");
  std::getline(lines, line);
  CHECK(line == "10,arrival,0,2,1,1,1,400,1");
  std::vector<std::string> rest;
  while (std::getline(lines, line)) rest.push_back(line);
  REQUIRE(rest.size() == 8);
  CHECK(rest.back().rfind("340,summary,,5,3,,0.6,", 0) == 0);

  std::ostringstream dump;
  write_solution_dump(ledger, sc.pn, dump);
  std::istringstream dl(dump.str());
  std::getline(dl, line);
  CHECK(line == R"({"cost":40.0,"link_paths":[[[0,1]]],"node_map":[0,1],"psi":1,"r2c":1.0,"revenue":40.0,"time":10.0,"vnr_id":0})");
  std::getline(dl, line);
  CHECK(line == R"({"cost":26.0,"link_paths":[[[0,1],[1,2]]],"node_map":[0,2],"psi":1,"r2c":0.6153846153846154,"revenue":16.0,"time":20.0,"vnr_id":1})");
  std::getline(dl, line);
  CHECK(line == R"({"cost":0.0,"link_paths":[],"node_map":[],"psi":0,"r2c":0.0,"revenue":0.0,"time":30.0,"vnr_id":2})");
}

TEST_CASE("stepwise simulator matches a full run") {
  auto pn = generate_waxman(12, 20, 5);
  VnrConfig cfg;
  cfg.count = 120;
  cfg.arrival_rate = 0.05;
  auto vnrs = sample_vnr_stream(cfg, 6);
  GreedySolver greedy;
  auto full = run_simulation(pn, vnrs, greedy);

  Simulator sim(pn, vnrs, greedy);
  int total = 0;
  while (!sim.done()) {
    const int got = sim.run_arrivals(25);
    total += got;
    CHECK(sim.ledger().arrived_count == total);
    if (got < 25) break;
  }
  auto chunked = sim.finish();
  CHECK(total == 120);
  std::ostringstream a, b;
  write_metrics_csv(full, a);
  write_metrics_csv(chunked, b);
  CHECK(a.str() == b.str());
}
