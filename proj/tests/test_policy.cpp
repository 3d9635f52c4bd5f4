#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "test_helpers.hpp"
#include "vne/policy.hpp"

using namespace vne;
using namespace vne::testing;

namespace {

PolicyConfig small_config() {
  PolicyConfig cfg;
  cfg.hidden = 16;
  return cfg;
}

// A substrate with some background load, a fresh VNR and a partial
// placement of a random prefix of its nodes.
struct RandomState {
  PhysicalNetwork pn;
  VirtualNetworkRequest vnr;
  std::unique_ptr<SubstrateState> state;
  EmbeddingSolution partial;
};

RandomState random_state(Rng& rng) {
  RandomState rs;
  std::uniform_int_distribution<int> np_dist(4, 12), nv_dist(2, 6);
  const int np = np_dist(rng);
  rs.pn = generate_waxman(np, std::min(np * (np - 1) / 2, np + 4), rng());
  rs.state = std::make_unique<SubstrateState>(rs.pn);
  VnrConfig cfg;
  cfg.node_demand = {0, 60};
  for (int k = 0; k < 3; ++k) {
    auto bg = sample_vnr(cfg, 2, rng);
    bg.id = 100 + k;
    auto sol = EmbeddingSolution::empty_for(bg);
    for (NodeId v = 0; v < 2; ++v) {
      auto hosts = feasible_hosts(*rs.state, bg, v, sol);
      if (hosts.empty() || place_and_route(*rs.state, bg, sol, v, hosts[rng() % hosts.size()]) != StepOutcome::placed) {
        release(*rs.state, sol);
        break;
      }
    }
  }
  rs.vnr = sample_vnr(cfg, std::min(nv_dist(rng), np), rng);
  rs.partial = EmbeddingSolution::empty_for(rs.vnr);
  const int prefix = static_cast<int>(rng() % static_cast<std::uint64_t>(rs.vnr.node_count()));
  for (NodeId v = 0; v < prefix; ++v) {
    auto hosts = feasible_hosts(*rs.state, rs.vnr, v, rs.partial);
    if (hosts.empty()) break;
    if (place_and_route(*rs.state, rs.vnr, rs.partial, v, hosts[rng() % hosts.size()]) != StepOutcome::placed) {
      release(*rs.state, rs.partial);
      rs.partial = EmbeddingSolution::empty_for(rs.vnr);
      break;
    }
  }
  return rs;
}

std::vector<double> column(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

TEST_CASE("feature construction") {
  auto pn = uniform_network(path_graph(3), {80, 60, 40}, 50);
  SubstrateState state(pn);
  auto vnr = make_vnr(0, 3, {{0, 1, 10}, {0, 2, 30}}, {20, 10, 5});
  auto partial = EmbeddingSolution::empty_for(vnr);
  auto f = build_features(state, vnr, partial, 100.0);
  REQUIRE(f.x_v.rows() == 3);
  REQUIRE(f.x_v.cols() == 7);
  CHECK(f.x_v(0, 0) == 0.20);
  CHECK(f.x_v(0, 2) == 0.05);
  CHECK(f.x_v(0, 3) == doctest::Approx(0.30).epsilon(1e-15));
  CHECK(f.x_v(0, 4) == doctest::Approx(0.20).epsilon(1e-15));
  CHECK(f.x_v(0, 5) == doctest::Approx(0.40).epsilon(1e-15));
  CHECK(f.x_v.col(6).sum() == 0.0);
  CHECK(f.x_p.col(6).sum() == 0.0);
  CHECK(f.x_p(1, 3) == 0.5);   // middle node: two links of 50
  CHECK(f.x_p(1, 5) == 1.0);
  CHECK(f.x_p(0, 1) == 0.6);

  REQUIRE_FALSE(place_and_route(state, vnr, partial, 1, 2) != StepOutcome::placed);
  f = build_features(state, vnr, partial, 100.0);
  CHECK(f.x_v.col(6).sum() == 1.0);
  CHECK(f.x_v(1, 6) == 1.0);
  CHECK(f.x_p.col(6).sum() == 1.0);
  CHECK(f.x_p(2, 6) == 1.0);
  CHECK(f.x_p(2, 0) == doctest::Approx(0.6));
  CHECK(f.placed == std::vector<bool>{false, true, false});
}

TEST_CASE("encoder contracts") {
  Rng rng(4);
  auto rs = random_state(rng);
  auto f = build_features(*rs.state, rs.vnr, rs.partial, 100.0);

  SUBCASE("shape for the default width") {
    PolicyConfig cfg;
    auto ps = init_policy_params(cfg, 1);
    auto enc = encode(f, ps, cfg, "actor");
    CHECK(enc.z_v.shape() == std::vector<Eigen::Index>{rs.vnr.node_count(), 128});
    CHECK(enc.z_p.shape() == std::vector<Eigen::Index>{rs.pn.node_count(), 128});
  }
  SUBCASE("zero graph layers leave the residual path") {
    auto cfg = small_config();
    auto ps = init_policy_params(cfg, 2);
    for (const auto& name : ps.names()) {
      if (name.find(".gcn") != std::string::npos) ps.get(name).mutable_value().setZero();
    }
    auto enc = encode(f, ps, cfg, "actor");
    auto initial = linear(ps, "actor.enc_p.in1", relu(linear(ps, "actor.enc_p.in0", Tensor(f.x_p))));
    CHECK(enc.z_p.value() == initial.value());
  }
}

TEST_CASE("node relabeling equivariance") {
  auto cfg = small_config();
  auto ps = init_policy_params(cfg, 3);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    VnrConfig vc;
    auto vnr = sample_vnr(vc, 5, rng);
    auto pn = generate_waxman(8, 12, static_cast<std::uint64_t>(trial));
    std::vector<NodeId> perm{3, 0, 4, 1, 2};
    VirtualNetworkRequest moved;
    moved.graph = Graph(5);
    moved.demand.resize(5);
    for (NodeId v = 0; v < 5; ++v) moved.demand[static_cast<size_t>(perm[static_cast<size_t>(v)])] = vnr.demand[static_cast<size_t>(v)];
    for (const auto& l : vnr.graph.links()) {
      moved.graph.add_link(perm[static_cast<size_t>(l.u)], perm[static_cast<size_t>(l.v)], l.bandwidth);
    }
    moved.lifetime = vnr.lifetime;
    SubstrateState state(pn);
    auto fa = build_features(state, vnr, EmbeddingSolution::empty_for(vnr), 100.0);
    auto fb = build_features(state, moved, EmbeddingSolution::empty_for(moved), 100.0);
    auto ea = encode(fa, ps, cfg, "actor");
    auto eb = encode(fb, ps, cfg, "actor");
    auto pa = column(masked_softmax(high_level_scores(ea, ps), fa.placed).value());
    auto pb = column(masked_softmax(high_level_scores(eb, ps), fb.placed).value());
    for (NodeId v = 0; v < 5; ++v) {
      const auto w = static_cast<size_t>(perm[static_cast<size_t>(v)]);
      CHECK(pb[w] == doctest::Approx(pa[static_cast<size_t>(v)]).epsilon(1e-12));
      CHECK((eb.z_v.value().row(static_cast<Eigen::Index>(w)) - ea.z_v.value().row(v)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    // Physical relabeling: low-level probabilities follow the hosts.
    std::vector<NodeId> pperm{7, 6, 5, 4, 3, 2, 1, 0};
    PhysicalNetwork flipped;
    flipped.graph = Graph(8);
    flipped.capacity.resize(8);
    for (NodeId p = 0; p < 8; ++p) flipped.capacity[static_cast<size_t>(pperm[static_cast<size_t>(p)])] = pn.capacity[static_cast<size_t>(p)];
    for (const auto& l : pn.graph.links()) {
      flipped.graph.add_link(pperm[static_cast<size_t>(l.u)], pperm[static_cast<size_t>(l.v)], l.bandwidth);
    }
    SubstrateState fstate(flipped);
    auto fc = build_features(fstate, vnr, EmbeddingSolution::empty_for(vnr), 100.0);
    auto ec = encode(fc, ps, cfg, "actor");
    auto mask_a = low_level_mask(state, vnr, 0, EmbeddingSolution::empty_for(vnr));
    auto mask_c = low_level_mask(fstate, vnr, 0, EmbeddingSolution::empty_for(vnr));
    if (std::all_of(mask_a.begin(), mask_a.end(), [](bool m) { return m; })) continue;
    auto la = column(masked_softmax(low_level_scores(ea, ps, 0), mask_a).value());
    auto lc = column(masked_softmax(low_level_scores(ec, ps, 0), mask_c).value());
    for (NodeId p = 0; p < 8; ++p) {
      CHECK(lc[static_cast<size_t>(pperm[static_cast<size_t>(p)])] == doctest::Approx(la[static_cast<size_t>(p)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("high and low level distribution examples") {
  auto cfg = small_config();
  auto ps = init_policy_params(cfg, 6);
  Rng rng(1);

  SUBCASE("identical virtual nodes give a uniform high level") {
    auto pn = uniform_network(ring_graph(5), {90, 90, 90}, 90);
    SubstrateState state(pn);
    auto vnr = make_vnr(0, 4, {{0, 1, 5}, {1, 2, 5}, {2, 3, 5}, {3, 0, 5}}, {7, 7, 7});
    auto f = build_features(state, vnr, EmbeddingSolution::empty_for(vnr), 100.0);
    auto p = column(masked_softmax(high_level_scores(encode(f, ps, cfg, "actor"), ps), f.placed).value());
    for (double x : p) CHECK(x == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("last unplaced node and single feasible host") {
    auto pn = uniform_network(path_graph(3), {50, 50, 50}, 90);
    pn.capacity[0] = {5, 5, 5};
    SubstrateState state(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 5}}, {10, 10, 10});
    auto partial = EmbeddingSolution::empty_for(vnr);
    REQUIRE(place_and_route(state, vnr, partial, 0, 1) == StepOutcome::placed);
    auto f = build_features(state, vnr, partial, 100.0);
    auto d = decide(cfg, ActionMode{}, ps, f, state, vnr, partial, {}, SelectMode::sample, rng);
    CHECK(d.nv == 1);
    CHECK(d.dist.high == std::vector<double>{0.0, 1.0});
    REQUIRE(d.np);
    CHECK(*d.np == 2);
    CHECK(d.dist.low == std::vector<double>{0.0, 0.0, 1.0});
    CHECK(d.log_prob == 0.0);
    CHECK(d.entropy == 0.0);
  }
  SUBCASE("empty feasible set") {
    auto pn = uniform_network(path_graph(2), {5, 5, 5}, 90);
    SubstrateState state(pn);
    auto vnr = make_vnr(0, 2, {{0, 1, 5}}, {10, 10, 10});
    auto partial = EmbeddingSolution::empty_for(vnr);
    auto f = build_features(state, vnr, partial, 100.0);
    auto d = decide(cfg, ActionMode{}, ps, f, state, vnr, partial, {}, SelectMode::sample, rng);
    CHECK_FALSE(d.np);
    CHECK(d.log_prob == doctest::Approx(std::log(d.dist.high[static_cast<size_t>(d.nv)])));
    auto eval = evaluate_action(cfg, ActionMode{}, ps, f, d.nv, d.np, d.low_mask);
    CHECK(eval.log_prob.item() == doctest::Approx(d.log_prob).epsilon(1e-12));
  }
}

TEST_CASE("distribution audits over random states") {
  auto cfg = small_config();
  auto ps = init_policy_params(cfg, 7);
  Rng rng(77);
  int with_low = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto rs = random_state(rng);
    auto f = build_features(*rs.state, rs.vnr, rs.partial, 100.0);
    if (rs.partial.all_nodes_placed()) continue;
    auto enc = encode(f, ps, cfg, "actor");
    auto high = column(masked_softmax(high_level_scores(enc, ps), f.placed).value());
    double h_total = 0.0;
    for (size_t v = 0; v < high.size(); ++v) {
      if (f.placed[v]) CHECK(high[v] == 0.0);
      h_total += high[v];
    }
    CHECK(std::abs(h_total - 1.0) <= 1e-9);

    double joint = 0.0;
    bool every_low = true;
    for (NodeId nv = 0; nv < rs.vnr.node_count(); ++nv) {
      if (f.placed[static_cast<size_t>(nv)]) continue;
      const auto feasible = feasible_hosts(*rs.state, rs.vnr, nv, rs.partial);
      const auto mask = low_level_mask(*rs.state, rs.vnr, nv, rs.partial);
      if (feasible.empty()) {
        every_low = false;
        CHECK_THROWS_AS(masked_softmax(low_level_scores(enc, ps, nv), mask), EmptySupportError);
        continue;
      }
      auto low = column(masked_softmax(low_level_scores(enc, ps, nv), mask).value());
      std::vector<NodeId> support;
      double l_total = 0.0;
      for (size_t p = 0; p < low.size(); ++p) {
        if (low[p] > 0.0) support.push_back(static_cast<NodeId>(p));
        if (mask[p]) CHECK(low[p] == 0.0);
        l_total += low[p];
      }
      CHECK(support == feasible);
      CHECK(std::abs(l_total - 1.0) <= 1e-9);
      for (double q : low) joint += high[static_cast<size_t>(nv)] * q;
      ++with_low;
    }
    if (every_low) CHECK(std::abs(joint - 1.0) <= 1e-8);
  }
  CHECK(with_low > 1000);
}

TEST_CASE("action selection") {
  Rng rng(12);
  BilevelDistribution dist{{0.7, 0.3}, {0.1, 0.9}};
  auto a = select_action(dist, SelectMode::greedy, rng);
  CHECK(a.nv == 0);
  CHECK(a.np == 1);
  CHECK(a.log_prob == doctest::Approx(std::log(0.63)).epsilon(1e-14));

  BilevelDistribution forced{{0.0, 1.0, 0.0}, {0.0, 0.0, 0.0, 1.0}};
  for (auto mode : {SelectMode::greedy, SelectMode::sample}) {
    auto f = select_action(forced, mode, rng);
    CHECK(f.nv == 1);
    CHECK(f.np == 3);
    CHECK(f.log_prob == 0.0);
  }
  BilevelDistribution tie{{0.5, 0.5}, {0.25, 0.25, 0.5}};
  CHECK(select_action(tie, SelectMode::greedy, rng).nv == 0);
  CHECK_THROWS_AS(pick_index({0.0, 0.0}, SelectMode::sample, rng), EmptySupportError);

  const std::vector<double> probs{0.05, 0.0, 0.45, 0.2, 0.3};
  std::vector<int> counts(probs.size(), 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[pick_index(probs, SelectMode::sample, rng)];
  for (size_t i = 0; i < probs.size(); ++i) {
    const double sigma = std::sqrt(n * probs[i] * (1.0 - probs[i]));
    CHECK(std::abs(counts[i] - n * probs[i]) <= 3.0 * sigma);
  }
  CHECK(counts[1] == 0);
}

TEST_CASE("entropy") {
  BilevelDistribution uniform{std::vector<double>(4, 0.25), std::vector<double>(8, 0.125)};
  CHECK(policy_entropy(uniform) == doctest::Approx(std::log(4.0) + std::log(8.0)).epsilon(1e-14));
  CHECK(policy_entropy({{0.0, 1.0}, {1.0, 0.0, 0.0}}) == 0.0);
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(1 + trial % 9);
    double total = 0.0;
    for (auto& x : p) total += (x = u(rng));
    double naive = 0.0;
    for (auto& x : p) {
      x /= total;
      naive += -x * std::log(x);
    }
    CHECK(entropy_of(p) == doctest::Approx(naive).epsilon(1e-12));
  }
}

TEST_CASE("value head") {
  auto cfg = small_config();
  Rng rng(8);
  auto ps = init_policy_params(cfg, 9);
  for (int trial = 0; trial < 50; ++trial) {
    auto rs = random_state(rng);
    auto f = build_features(*rs.state, rs.vnr, rs.partial, 100.0);
    CHECK(std::isfinite(evaluate_value(f, ps, cfg).item()));
  }
  ps.get("critic.value.l1.w").mutable_value().setZero();
  ps.get("critic.value.l1.b").mutable_value().setZero();
  for (int trial = 0; trial < 10; ++trial) {
    auto rs = random_state(rng);
    CHECK(evaluate_value(build_features(*rs.state, rs.vnr, rs.partial, 100.0), ps, cfg).item() == 0.0);
  }
}

TEST_CASE("actor and critic gradients match finite differences") {
  PolicyConfig cfg;
  cfg.hidden = 6;
  Rng rng(31);
  for (std::uint64_t point = 0; point < 3; ++point) {
    auto ps = init_policy_params(cfg, 50 + point);
    RandomState rs = random_state(rng);
    while (rs.partial.all_nodes_placed()) rs = random_state(rng);
    auto f = build_features(*rs.state, rs.vnr, rs.partial, 100.0);
    auto d = decide(cfg, ActionMode{}, ps, f, *rs.state, rs.vnr, rs.partial, {}, SelectMode::sample, rng);
    auto actor_loss = [&] {
      auto e = evaluate_action(cfg, ActionMode{}, ps, f, d.nv, d.np, d.low_mask);
      return add(scale(e.log_prob, -0.8), scale(e.entropy, 0.1));
    };
    auto critic_loss = [&] {
      auto v = add_scalar(evaluate_value(f, ps, cfg), -0.7);
      return mul(v, v);
    };
    CHECK(gradient_check(ps, actor_loss) <= 1e-4);
    CHECK(gradient_check(ps, critic_loss) <= 1e-4);
  }
}

TEST_CASE("evaluate_action agrees with decide") {
  auto cfg = small_config();
  auto ps = init_policy_params(cfg, 10);
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    auto rs = random_state(rng);
    if (rs.partial.all_nodes_placed()) continue;
    auto f = build_features(*rs.state, rs.vnr, rs.partial, 100.0);
    for (ActionMode mode : {ActionMode{}, ActionMode::parse("uni:nrm")}) {
      auto order = virtual_node_order(rs.vnr, mode.order);
      auto d = decide(cfg, mode, ps, f, *rs.state, rs.vnr, rs.partial, order, SelectMode::sample, rng);
      auto e = evaluate_action(cfg, mode, ps, f, d.nv, d.np, d.low_mask);
      CHECK(e.log_prob.item() == doctest::Approx(d.log_prob).epsilon(1e-10));
      CHECK(e.entropy.item() == doctest::Approx(d.entropy).epsilon(1e-10));
      if (!mode.bidirectional()) {
        for (NodeId v : order) {
          if (!f.placed[static_cast<size_t>(v)]) {
            CHECK(d.nv == v);
            break;
          }
        }
      }
    }
  }
}

TEST_CASE("action mode parsing and policy persistence") {
  CHECK(ActionMode::parse("bi").bidirectional());
  CHECK(ActionMode::parse("uni:id").order == UniOrder::id);
  CHECK(ActionMode::parse("uni:nrm").to_string() == "uni:nrm");
  CHECK_THROWS_AS(ActionMode::parse("both"), std::invalid_argument);

  auto cfg = small_config();
  auto model = PolicyModel::create(cfg, ActionMode::parse("uni:id"), 14);
  const auto dir = std::filesystem::temp_directory_path() / "vne_policy_roundtrip";
  std::filesystem::remove_all(dir);
  save_policy(model, dir);
  auto loaded = load_policy(dir);
  CHECK(loaded.config == cfg);
  CHECK(loaded.mode == model.mode);
  CHECK(loaded.params.same_values(model.params));

  auto other = PolicyModel::create(PolicyConfig{8, 3, 100.0}, ActionMode{}, 1);
  CHECK_THROWS_AS(load_params_into(other.params, dir / "params.txt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}
