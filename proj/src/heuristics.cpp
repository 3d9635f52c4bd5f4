#include "vne/heuristics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace vne {

double nrm_score_physical(const SubstrateState& state, NodeId node) {
  double bandwidth = 0.0;
  for (const auto& a : state.network().graph.neighbors(node)) bandwidth += state.avail_bandwidth(a.link);
  return state.avail_node(node).mean() * bandwidth;
}

double nrm_score_virtual(const VirtualNetworkRequest& vnr, NodeId node) {
  double bandwidth = 0.0;
  for (const auto& a : vnr.graph.neighbors(node)) bandwidth += vnr.graph.link(a.link).bandwidth;
  return vnr.demand.at(static_cast<size_t>(node)).mean() * bandwidth;
}

std::vector<NodeId> rank_by_score(const std::vector<double>& scores) {
  std::vector<NodeId> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
    return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
  });
  return order;
}

std::string to_string(UniOrder order) { return order == UniOrder::id ? "id" : "nrm"; }

UniOrder parse_uni_order(const std::string& text) {
  if (text == "id") return UniOrder::id;
  if (text == "nrm") return UniOrder::nrm;
  throw std::invalid_argument("unknown ordering '" + text + "' (expected id or nrm)");
}

std::vector<NodeId> virtual_node_order(const VirtualNetworkRequest& vnr, UniOrder order) {
  std::vector<double> scores(static_cast<size_t>(vnr.node_count()), 0.0);
  if (order == UniOrder::nrm) {
    for (NodeId n = 0; n < vnr.node_count(); ++n) scores[static_cast<size_t>(n)] = nrm_score_virtual(vnr, n);
  }
  return rank_by_score(scores);
}

std::optional<EmbeddingSolution> greedy_solve(SubstrateState& state, const VirtualNetworkRequest& vnr) {
  std::vector<double> host_scores(static_cast<size_t>(state.network().node_count()));
  for (NodeId p = 0; p < state.network().node_count(); ++p) {
    host_scores[static_cast<size_t>(p)] = nrm_score_physical(state, p);
  }
  const auto host_rank = rank_by_score(host_scores);

  auto solution = EmbeddingSolution::empty_for(vnr);
  for (NodeId nv : virtual_node_order(vnr, UniOrder::nrm)) {
    const auto feasible = feasible_hosts(state, vnr, nv, solution);
    auto best = std::find_if(host_rank.begin(), host_rank.end(), [&](NodeId p) {
      return std::binary_search(feasible.begin(), feasible.end(), p);
    });
    if (best == host_rank.end() || place_and_route(state, vnr, solution, nv, *best) != StepOutcome::placed) {
      release(state, solution);
      return std::nullopt;
    }
  }
  finalize(vnr, solution);
  return solution;
}

}  // namespace vne
