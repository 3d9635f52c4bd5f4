#include <doctest.h>

#include <algorithm>
#include <functional>
#include <limits>

#include "vne/embedding.hpp"
#include "vne/netmodel.hpp"
#include "test_helpers.hpp"

using namespace vne;
using namespace vne::testing;

namespace {

// Smallest hop count over all simple paths whose links all carry >= bw.
std::optional<size_t> min_hops_all_simple_paths(const SubstrateState& s, NodeId from, NodeId to, double bw) {
  const auto& g = s.network().graph;
  std::optional<size_t> best;
  std::vector<char> on_path(static_cast<size_t>(g.node_count()), 0);
  std::function<void(NodeId, size_t)> dfs = [&](NodeId cur, size_t hops) {
    if (cur == to) {
      if (!best || hops < *best) best = hops;
      return;
    }
    on_path[static_cast<size_t>(cur)] = 1;
    for (const auto& l : g.links()) {
      const LinkId id = *g.find_link(l.u, l.v);
      if (l.u != cur && l.v != cur) continue;
      const NodeId nxt = l.other(cur);
      if (on_path[static_cast<size_t>(nxt)] || s.avail_bandwidth(id) < bw) continue;
      dfs(nxt, hops + 1);
    }
    on_path[static_cast<size_t>(cur)] = 0;
  };
  dfs(from, 0);
  return best;
}

double revenue_reference(const VirtualNetworkRequest& v) {
  double total = 0.0;
  for (NodeId n = 0; n < v.node_count(); ++n) {
    const auto& d = v.demand[static_cast<size_t>(n)];
    total += (d.cpu + d.storage + d.gpu) / 3.0;
  }
  for (const auto& l : v.graph.links()) total += l.bandwidth;
  return total;
}

// Totals of available + reserved quantities must equal the raw capacities.
void check_conservation(const SubstrateState& s, const std::vector<EmbeddingSolution>& held) {
  const auto& pn = s.network();
  std::vector<ResourceVector> allocated(static_cast<size_t>(pn.node_count()));
  std::vector<double> allocated_bw(static_cast<size_t>(pn.link_count()), 0.0);
  for (const auto& sol : held) {
    for (const auto& r : sol.node_reservations) allocated[static_cast<size_t>(r.host)] += r.amount;
    for (const auto& r : sol.link_reservations) allocated_bw[static_cast<size_t>(r.link)] += r.amount;
  }
  for (NodeId n = 0; n < pn.node_count(); ++n) {
    CHECK(allocated[static_cast<size_t>(n)] + s.avail_node(n) == pn.capacity[static_cast<size_t>(n)]);
  }
  for (LinkId l = 0; l < pn.link_count(); ++l) {
    CHECK(allocated_bw[static_cast<size_t>(l)] + s.avail_bandwidth(l) == pn.graph.link(l).bandwidth);
  }
}

}  // namespace

TEST_CASE("feasible_hosts") {
  auto pn = uniform_network(path_graph(4), {50, 50, 50}, 100);
  SubstrateState s(pn);
  auto vnr = make_vnr(0, 2, {{0, 1, 10}}, {10, 10, 10});
  auto partial = EmbeddingSolution::empty_for(vnr);

  CHECK(feasible_hosts(s, vnr, 0, partial) == std::vector<NodeId>{0, 1, 2, 3});

  pn.capacity[2].gpu = 5;
  SubstrateState s2(pn);
  CHECK(feasible_hosts(s2, vnr, 0, partial) == std::vector<NodeId>{0, 1, 3});

  REQUIRE_FALSE(place_node(s2, vnr, partial, 0, 1));
  CHECK(feasible_hosts(s2, vnr, 1, partial) == std::vector<NodeId>{0, 3});
}

TEST_CASE("feasible_hosts equals a brute-force predicate filter") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto pn = generate_waxman(8, 12, static_cast<std::uint64_t>(trial), {{0, 30}, {0, 60}});
    SubstrateState s(pn);
    VnrConfig cfg;
    auto vnr = sample_vnr(cfg, 3, rng);
    auto partial = EmbeddingSolution::empty_for(vnr);
    if (place_and_route(s, vnr, partial, 0, static_cast<NodeId>(rng() % 8)) != StepOutcome::placed) continue;
    for (NodeId nv = 1; nv < 3; ++nv) {
      std::vector<NodeId> expected;
      for (NodeId p = 0; p < 8; ++p) {
        const auto& a = s.avail_node(p);
        const auto& d = vnr.demand[static_cast<size_t>(nv)];
        const bool fits = a.cpu >= d.cpu && a.storage >= d.storage && a.gpu >= d.gpu;
        const bool used = partial.node_map[0] && *partial.node_map[0] == p;
        if (fits && !used) expected.push_back(p);
      }
      CHECK(feasible_hosts(s, vnr, nv, partial) == expected);
    }
  }
}

TEST_CASE("place_node") {
  auto pn = uniform_network(path_graph(3), {50, 50, 50}, 100);
  SubstrateState s(pn);
  auto vnr = make_vnr(0, 2, {{0, 1, 10}}, {20, 20, 20});
  auto partial = EmbeddingSolution::empty_for(vnr);

  CHECK_FALSE(place_node(s, vnr, partial, 0, 0));
  CHECK(s.avail_node(0) == ResourceVector{30, 30, 30});
  CHECK(partial.node_map[0] == 0);

  const SubstrateState snapshot = s;
  CHECK(place_node(s, vnr, partial, 1, 0) == PlaceFailure::exclusivity);
  CHECK(s.same_resources(snapshot));
  CHECK_THROWS_AS(place_node(s, vnr, partial, 0, 1), std::logic_error);

  auto big = make_vnr(1, 1, {}, {60, 10, 10});
  auto p2 = EmbeddingSolution::empty_for(big);
  CHECK(place_node(s, big, p2, 0, 1) == PlaceFailure::resources);
  CHECK(s.same_resources(snapshot));
  CHECK_FALSE(p2.node_map[0].has_value());
}

TEST_CASE("route_link") {
  SUBCASE("adjacent hosts give a one-hop path") {
    auto pn = uniform_network(path_graph(3), {50, 50, 50}, 100);
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 30}}, {1, 1, 1});
    auto partial = EmbeddingSolution::empty_for(vnr);
    REQUIRE(place_and_route(s, vnr, partial, 0, 1) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vnr, partial, 1, 2) == StepOutcome::placed);
    REQUIRE(partial.link_paths[0]);
    CHECK(partial.link_paths[0]->size() == 1);
    CHECK(s.avail_bandwidth(*pn.graph.find_link(1, 2)) == 70);
  }
  SUBCASE("4-cycle detours around a thin direct link") {
    Graph g(4);
    g.add_link(0, 1, 10);  // direct but too thin
    g.add_link(1, 2, 100);
    g.add_link(2, 3, 100);
    g.add_link(3, 0, 100);
    PhysicalNetwork pn{g, std::vector<ResourceVector>(4, {50, 50, 50})};
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 40}}, {1, 1, 1});
    auto partial = EmbeddingSolution::empty_for(vnr);
    REQUIRE(place_and_route(s, vnr, partial, 0, 0) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vnr, partial, 1, 1) == StepOutcome::placed);
    REQUIRE(partial.link_paths[0]);
    CHECK(partial.link_paths[0]->size() == 3);
  }
  SUBCASE("saturated substrate fails") {
    auto pn = uniform_network(path_graph(3), {50, 50, 50}, 10);
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 30}}, {1, 1, 1});
    auto partial = EmbeddingSolution::empty_for(vnr);
    REQUIRE(place_and_route(s, vnr, partial, 0, 0) == StepOutcome::placed);
    CHECK(place_and_route(s, vnr, partial, 1, 2) == StepOutcome::route_failed);
  }
  SUBCASE("unplaced endpoint is a contract violation") {
    auto pn = uniform_network(path_graph(3), {50, 50, 50}, 100);
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 30}}, {1, 1, 1});
    auto partial = EmbeddingSolution::empty_for(vnr);
    CHECK_THROWS_AS(route_link(s, vnr, partial, 0), std::logic_error);
  }
}

TEST_CASE("route_link hop count equals the all-simple-paths minimum") {
  Rng rng(17);
  int compared = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto pn = generate_waxman(8, 8 + static_cast<int>(rng() % 12), rng(), {{50, 100}, {0, 60}});
    SubstrateState s(pn);
    const double bw = static_cast<double>(rng() % 50);
    const NodeId a = static_cast<NodeId>(rng() % 8);
    NodeId b = static_cast<NodeId>(rng() % 8);
    if (a == b) b = (b + 1) % 8;
    auto got = shortest_feasible_path(s, a, b, bw);
    auto expected = min_hops_all_simple_paths(s, a, b, bw);
    REQUIRE(got.has_value() == expected.has_value());
    if (got) {
      CHECK(got->size() == *expected);
      ++compared;
    }
  }
  CHECK(compared > 100);
}

TEST_CASE("release restores the snapshot") {
  auto pn = uniform_network(ring_graph(5), {60, 60, 60}, 100);
  SubstrateState s(pn);
  const SubstrateState snapshot = s;

  SUBCASE("full embedding") {
    auto vnr = make_vnr(3, 3, {{0, 1, 20}, {1, 2, 20}, {0, 2, 5}}, {10, 20, 30});
    auto sol = EmbeddingSolution::empty_for(vnr);
    REQUIRE(place_and_route(s, vnr, sol, 0, 0) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vnr, sol, 1, 2) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vnr, sol, 2, 3) == StepOutcome::placed);
    finalize(vnr, sol);
    CHECK_FALSE(s.same_resources(snapshot));
    release(s, sol);
    CHECK(s.same_resources(snapshot));
    CHECK(s.pristine());
    CHECK_THROWS_AS(release(s, sol), std::logic_error);
  }
  SUBCASE("partial embedding of 2 of 4 nodes") {
    auto vnr = make_vnr(4, 4, {{0, 1, 20}, {1, 2, 20}, {2, 3, 20}}, {10, 10, 10});
    auto sol = EmbeddingSolution::empty_for(vnr);
    REQUIRE(place_and_route(s, vnr, sol, 0, 1) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vnr, sol, 1, 3) == StepOutcome::placed);
    release(s, sol);
    CHECK(s.same_resources(snapshot));
  }
  SUBCASE("interleaved requests") {
    auto va = make_vnr(1, 2, {{0, 1, 20}}, {10, 10, 10});
    auto vb = make_vnr(2, 2, {{0, 1, 30}}, {15, 5, 5});
    auto sa = EmbeddingSolution::empty_for(va);
    auto sb = EmbeddingSolution::empty_for(vb);
    REQUIRE(place_and_route(s, va, sa, 0, 0) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vb, sb, 0, 0) == StepOutcome::placed);
    REQUIRE(place_and_route(s, va, sa, 1, 2) == StepOutcome::placed);
    REQUIRE(place_and_route(s, vb, sb, 1, 1) == StepOutcome::placed);

    // Reference: only B applied.
    SubstrateState only_b(pn);
    auto sb2 = EmbeddingSolution::empty_for(vb);
    REQUIRE(place_and_route(only_b, vb, sb2, 0, 0) == StepOutcome::placed);
    REQUIRE(place_and_route(only_b, vb, sb2, 1, 1) == StepOutcome::placed);

    check_conservation(s, {sa, sb});
    release(s, sa);
    CHECK(s.avail_nodes() == only_b.avail_nodes());
    CHECK(s.avail_bandwidths() == only_b.avail_bandwidths());
    CHECK(s.holds(2));
    CHECK_FALSE(s.holds(1));
    check_conservation(s, {sb});
  }
}

TEST_CASE("conservation over random place/route/release sequences") {
  Rng rng(3);
  auto pn = generate_waxman(12, 24, 1);
  SubstrateState s(pn);
  VnrConfig cfg;
  std::vector<VirtualNetworkRequest> vnrs;
  std::vector<EmbeddingSolution> held;
  for (int i = 0; i < 300; ++i) {
    if (!held.empty() && rng() % 3 == 0) {
      const size_t k = rng() % held.size();
      release(s, held[k]);
      held.erase(held.begin() + static_cast<long>(k));
    } else {
      auto vnr = sample_vnr(cfg, 2 + static_cast<int>(rng() % 4), rng);
      vnr.id = i;
      auto sol = EmbeddingSolution::empty_for(vnr);
      bool ok = true;
      for (NodeId nv = 0; nv < vnr.node_count() && ok; ++nv) {
        auto hosts = feasible_hosts(s, vnr, nv, sol);
        ok = !hosts.empty() && place_and_route(s, vnr, sol, nv, hosts[rng() % hosts.size()]) == StepOutcome::placed;
      }
      if (ok) {
        finalize(vnr, sol);
        held.push_back(sol);
      } else {
        release(s, sol);
      }
    }
    check_conservation(s, held);
  }
  for (auto& sol : held) release(s, sol);
  CHECK(s.pristine());
}

TEST_CASE("revenue, cost and r2c") {
  auto vnr = make_vnr(0, 2, {{0, 1, 20}}, {10, 10, 10});
  CHECK(revenue(vnr) == doctest::Approx(40.0));
  CHECK(revenue(make_vnr(1, 1, {}, {5, 5, 5})) == doctest::Approx(5.0));

  EmbeddingSolution one_hop = EmbeddingSolution::empty_for(vnr);
  one_hop.node_map = {0, 1};
  one_hop.link_paths = {Path{0}};
  one_hop.feasible = true;
  CHECK(cost(vnr, one_hop) == doctest::Approx(revenue(vnr)));
  CHECK(r2c(vnr, one_hop) == doctest::Approx(1.0));

  EmbeddingSolution two_hop = one_hop;
  two_hop.link_paths = {Path{0, 1}};
  CHECK(cost(vnr, two_hop) == doctest::Approx(60.0));
  CHECK(r2c(vnr, two_hop) == doctest::Approx(2.0 / 3.0));

  EmbeddingSolution rejected = EmbeddingSolution::empty_for(vnr);
  CHECK(r2c(vnr, rejected) == 0.0);
  CHECK_THROWS_AS(cost(vnr, rejected), std::invalid_argument);

  Rng rng(8);
  VnrConfig cfg;
  for (int i = 0; i < 100; ++i) {
    auto v = sample_vnr(cfg, 2 + static_cast<int>(rng() % 9), rng);
    CHECK(revenue(v) == doctest::Approx(revenue_reference(v)));
  }
}

TEST_CASE("cost matches recomputation from link paths; r2c stays in [0, 1]") {
  Rng rng(21);
  auto pn = generate_waxman(20, 40, 2);
  VnrConfig cfg;
  int checked = 0;
  for (int i = 0; i < 200; ++i) {
    SubstrateState s(pn);
    auto vnr = sample_vnr(cfg, 2 + static_cast<int>(rng() % 6), rng);
    auto sol = EmbeddingSolution::empty_for(vnr);
    bool ok = true;
    for (NodeId nv = 0; nv < vnr.node_count() && ok; ++nv) {
      auto hosts = feasible_hosts(s, vnr, nv, sol);
      ok = !hosts.empty() && place_and_route(s, vnr, sol, nv, hosts[rng() % hosts.size()]) == StepOutcome::placed;
    }
    if (!ok) continue;
    finalize(vnr, sol);
    double reference = 0.0;
    for (const auto& d : vnr.demand) reference += (d.cpu + d.storage + d.gpu) / 3.0;
    for (LinkId lv = 0; lv < vnr.link_count(); ++lv) {
      for (size_t h = 0; h < sol.link_paths[static_cast<size_t>(lv)]->size(); ++h) {
        reference += vnr.graph.link(lv).bandwidth;
      }
    }
    CHECK(cost(vnr, sol) == doctest::Approx(reference));
    CHECK(r2c(vnr, sol) >= 0.0);
    CHECK(r2c(vnr, sol) <= 1.0 + 1e-12);
    EmbeddedRequest req{&vnr, &sol};
    CHECK(verify_solution(pn, std::span<const EmbeddedRequest>(&req, 1)).empty());
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("verify_solution") {
  Graph g(4);
  g.add_link(0, 1, 30);
  g.add_link(1, 2, 30);
  g.add_link(2, 3, 30);
  PhysicalNetwork pn{g, std::vector<ResourceVector>(4, {50, 50, 50})};
  auto vnr = make_vnr(0, 2, {{0, 1, 20}}, {10, 10, 10});

  EmbeddingSolution ok = EmbeddingSolution::empty_for(vnr);
  ok.node_map = {0, 1};
  ok.link_paths = {Path{0}};
  ok.feasible = true;
  EmbeddedRequest one{&vnr, &ok};
  CHECK(verify_solution(pn, std::span<const EmbeddedRequest>(&one, 1)).empty());

  auto kinds = [&](std::vector<EmbeddedRequest> reqs) {
    std::vector<ViolationKind> out;
    for (const auto& v : verify_solution(pn, reqs)) out.push_back(v.kind);
    return out;
  };
  auto contains = [](const std::vector<ViolationKind>& ks, ViolationKind k) {
    return std::find(ks.begin(), ks.end(), k) != ks.end();
  };

  EmbeddingSolution doubled = ok;
  doubled.node_map = {1, 1};
  doubled.link_paths = {Path{}};
  CHECK(contains(kinds({{&vnr, &doubled}}), ViolationKind::one_to_one));

  auto vnr2 = make_vnr(1, 2, {{0, 1, 20}}, {10, 10, 10});
  EmbeddingSolution other = EmbeddingSolution::empty_for(vnr2);
  other.node_map = {1, 0};
  other.link_paths = {Path{0}};
  other.feasible = true;
  CHECK(contains(kinds({{&vnr, &ok}, {&vnr2, &other}}), ViolationKind::bandwidth));

  EmbeddingSolution wrong_end = ok;
  wrong_end.link_paths = {Path{0, 1}};
  CHECK(contains(kinds({{&vnr, &wrong_end}}), ViolationKind::path_endpoints));

  EmbeddingSolution loop = ok;
  loop.node_map = {0, 2};
  loop.link_paths = {Path{0, 1, 2, 2}};
  CHECK(contains(kinds({{&vnr, &loop}}), ViolationKind::loop));

  EmbeddingSolution missing = ok;
  missing.link_paths = {std::nullopt};
  CHECK(contains(kinds({{&vnr, &missing}}), ViolationKind::incomplete));

  auto heavy = make_vnr(2, 1, {}, {45, 10, 10});
  EmbeddingSolution heavy_sol = EmbeddingSolution::empty_for(heavy);
  heavy_sol.node_map = {0};
  CHECK(contains(kinds({{&vnr, &ok}, {&heavy, &heavy_sol}}), ViolationKind::node_resources));
}

TEST_CASE("exhaustive_best") {
  SUBCASE("order-insensitive instance") {
    auto pn = uniform_network(complete_graph(5), {100, 100, 100}, 1000);
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 3, {{0, 1, 10}, {1, 2, 10}}, {5, 5, 5});
    auto free = exhaustive_best(s, vnr, FreeOrder{});
    auto fixed = exhaustive_best(s, vnr, FixedOrder{{2, 0, 1}});
    REQUIRE(free);
    REQUIRE(fixed);
    CHECK(r2c(vnr, *free) == 1.0);
    CHECK(r2c(vnr, *fixed) == 1.0);
    CHECK(s.pristine());
  }
  SUBCASE("infeasible instance") {
    auto pn = uniform_network(path_graph(4), {50, 50, 50}, 100);
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 10}}, {60, 60, 60});
    CHECK_FALSE(exhaustive_best(s, vnr, FreeOrder{}));
    CHECK_FALSE(exhaustive_best(s, vnr, FixedOrder{{0, 1}}));
  }
  SUBCASE("size limits and ordering validation") {
    auto pn = uniform_network(path_graph(9), {50, 50, 50}, 100);
    SubstrateState s(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 10}}, {1, 1, 1});
    CHECK_THROWS_AS(exhaustive_best(s, vnr, FreeOrder{}), std::invalid_argument);
    auto pn8 = uniform_network(path_graph(8), {50, 50, 50}, 100);
    SubstrateState s8(pn8);
    CHECK_THROWS_AS(exhaustive_best(s8, vnr, FixedOrder{{0, 0}}), std::invalid_argument);
    auto big = make_vnr(0, 5, {{0, 1, 1}}, {1, 1, 1});
    CHECK_THROWS_AS(exhaustive_best(s8, big, FreeOrder{}), std::invalid_argument);
  }
  SUBCASE("free order dominates every fixed ordering on random tiny instances") {
    Rng rng(44);
    VnrConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
      auto pn = generate_waxman(8, 9 + static_cast<int>(rng() % 6), rng(), {{20, 60}, {20, 70}});
      SubstrateState s(pn);
      auto vnr = sample_vnr(cfg, 3 + static_cast<int>(rng() % 2), rng);
      auto free = exhaustive_best(s, vnr, FreeOrder{});
      std::vector<NodeId> order(static_cast<size_t>(vnr.node_count()));
      std::iota(order.begin(), order.end(), 0);
      do {
        auto fixed = exhaustive_best(s, vnr, FixedOrder{order});
        if (fixed) {
          REQUIRE(free);
          CHECK(r2c(vnr, *free) >= r2c(vnr, *fixed));
        }
      } while (std::next_permutation(order.begin(), order.end()));
    }
  }
}
