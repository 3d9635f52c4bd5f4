#include "vne/embedding.hpp"

#include <algorithm>
#include <functional>
#include <queue>

#include <fmt/format.h>

namespace vne {

EmbeddingSolution EmbeddingSolution::empty_for(const VirtualNetworkRequest& vnr) {
  EmbeddingSolution s;
  s.vnr_id = vnr.id;
  s.node_map.assign(static_cast<size_t>(vnr.node_count()), std::nullopt);
  s.link_paths.assign(static_cast<size_t>(vnr.link_count()), std::nullopt);
  return s;
}

bool EmbeddingSolution::all_nodes_placed() const {
  return std::all_of(node_map.begin(), node_map.end(), [](const auto& m) { return m.has_value(); });
}

bool EmbeddingSolution::all_links_routed() const {
  return std::all_of(link_paths.begin(), link_paths.end(), [](const auto& p) { return p.has_value(); });
}

int EmbeddingSolution::placed_count() const {
  return static_cast<int>(std::count_if(node_map.begin(), node_map.end(), [](const auto& m) { return m.has_value(); }));
}

bool EmbeddingSolution::hosts(NodeId p) const {
  return std::any_of(node_map.begin(), node_map.end(), [p](const auto& m) { return m && *m == p; });
}

SubstrateState::SubstrateState(const PhysicalNetwork& network)
    : network_(&network), avail_node_(network.capacity), occupancy_(static_cast<size_t>(network.node_count())) {
  avail_bandwidth_.reserve(static_cast<size_t>(network.link_count()));
  for (const auto& l : network.graph.links()) avail_bandwidth_.push_back(l.bandwidth);
}

bool SubstrateState::same_resources(const SubstrateState& other) const {
  return avail_node_ == other.avail_node_ && avail_bandwidth_ == other.avail_bandwidth_ &&
         occupancy_ == other.occupancy_ && reservations_ == other.reservations_;
}

bool SubstrateState::pristine() const {
  if (avail_node_ != network_->capacity || !reservations_.empty()) return false;
  for (size_t l = 0; l < avail_bandwidth_.size(); ++l) {
    if (avail_bandwidth_[l] != network_->graph.links()[l].bandwidth) return false;
  }
  return std::all_of(occupancy_.begin(), occupancy_.end(), [](const auto& o) { return o.empty(); });
}

void SubstrateState::count_reservation(int vnr_id, int delta) {
  auto& count = reservations_[vnr_id];
  count += delta;
  if (count < 0) throw std::logic_error(fmt::format("VNR {} released more than it reserved", vnr_id));
  if (count == 0) reservations_.erase(vnr_id);
}

void SubstrateState::reserve_node(NodeId n, const ResourceVector& amount, int vnr_id, NodeId nv) {
  auto& avail = avail_node_.at(static_cast<size_t>(n));
  avail -= amount;
  occupancy_[static_cast<size_t>(n)].emplace_back(vnr_id, nv);
  count_reservation(vnr_id, +1);
}

void SubstrateState::free_node(NodeId n, const ResourceVector& amount, int vnr_id, NodeId nv) {
  auto& occ = occupancy_.at(static_cast<size_t>(n));
  auto it = std::find(occ.begin(), occ.end(), std::pair<int, NodeId>{vnr_id, nv});
  if (it == occ.end()) throw std::logic_error(fmt::format("node {} does not host VNR {} node {}", n, vnr_id, nv));
  auto restored = avail_node_[static_cast<size_t>(n)] + amount;
  if (!network_->capacity[static_cast<size_t>(n)].covers(restored)) {
    throw std::logic_error(fmt::format("release on node {} would exceed its capacity", n));
  }
  avail_node_[static_cast<size_t>(n)] = restored;
  occ.erase(it);
  count_reservation(vnr_id, -1);
}

void SubstrateState::reserve_link(LinkId l, double amount, int vnr_id) {
  auto& avail = avail_bandwidth_.at(static_cast<size_t>(l));
  if (avail < amount) throw std::logic_error(fmt::format("bandwidth underflow on link {}", l));
  avail -= amount;
  count_reservation(vnr_id, +1);
}

void SubstrateState::free_link(LinkId l, double amount, int vnr_id) {
  auto& avail = avail_bandwidth_.at(static_cast<size_t>(l));
  if (avail + amount > network_->graph.link(l).bandwidth) {
    throw std::logic_error(fmt::format("release on link {} would exceed its capacity", l));
  }
  avail += amount;
  count_reservation(vnr_id, -1);
}

std::string to_string(PlaceFailure f) {
  switch (f) {
    case PlaceFailure::resources:
      return "resources";
    case PlaceFailure::exclusivity:
      return "exclusivity";
  }
  return "unknown";
}

std::vector<NodeId> feasible_hosts(const SubstrateState& state, const VirtualNetworkRequest& vnr, NodeId nv,
                                   const EmbeddingSolution& partial) {
  const auto& demand = vnr.demand.at(static_cast<size_t>(nv));
  std::vector<char> taken(static_cast<size_t>(state.network().node_count()), 0);
  for (const auto& m : partial.node_map) {
    if (m) taken[static_cast<size_t>(*m)] = 1;
  }
  std::vector<NodeId> out;
  for (NodeId p = 0; p < state.network().node_count(); ++p) {
    if (!taken[static_cast<size_t>(p)] && state.avail_node(p).covers(demand)) out.push_back(p);
  }
  return out;
}

std::optional<PlaceFailure> place_node(SubstrateState& state, const VirtualNetworkRequest& vnr,
                                       EmbeddingSolution& partial, NodeId nv, NodeId np) {
  if (nv < 0 || nv >= vnr.node_count()) throw std::out_of_range(fmt::format("virtual node {} out of range", nv));
  if (np < 0 || np >= state.network().node_count()) {
    throw std::out_of_range(fmt::format("physical node {} out of range", np));
  }
  auto& slot = partial.node_map.at(static_cast<size_t>(nv));
  if (slot) throw std::logic_error(fmt::format("virtual node {} is already placed", nv));
  if (partial.hosts(np)) return PlaceFailure::exclusivity;
  const auto& demand = vnr.demand[static_cast<size_t>(nv)];
  if (!state.avail_node(np).covers(demand)) return PlaceFailure::resources;

  state.reserve_node(np, demand, vnr.id, nv);
  slot = np;
  partial.node_reservations.push_back({np, demand});
  return std::nullopt;
}

std::optional<Path> shortest_feasible_path(const SubstrateState& state, NodeId from, NodeId to, double bandwidth) {
  const auto& g = state.network().graph;
  if (from == to) return Path{};
  std::vector<LinkId> via(static_cast<size_t>(g.node_count()), -1);
  std::vector<char> seen(static_cast<size_t>(g.node_count()), 0);
  std::queue<NodeId> frontier;
  frontier.push(from);
  seen[static_cast<size_t>(from)] = 1;
  while (!frontier.empty()) {
    const NodeId cur = frontier.front();
    frontier.pop();
    for (const auto& a : g.neighbors(cur)) {
      if (seen[static_cast<size_t>(a.node)] || state.avail_bandwidth(a.link) < bandwidth) continue;
      seen[static_cast<size_t>(a.node)] = 1;
      via[static_cast<size_t>(a.node)] = a.link;
      if (a.node == to) {
        Path path;
        for (NodeId n = to; n != from;) {
          const LinkId l = via[static_cast<size_t>(n)];
          path.push_back(l);
          n = g.link(l).other(n);
        }
        std::reverse(path.begin(), path.end());
        return path;
      }
      frontier.push(a.node);
    }
  }
  return std::nullopt;
}

std::optional<Path> route_link(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial,
                               LinkId lv) {
  const auto& vl = vnr.graph.link(lv);
  const auto& src = partial.node_map.at(static_cast<size_t>(vl.u));
  const auto& dst = partial.node_map.at(static_cast<size_t>(vl.v));
  if (!src || !dst) throw std::logic_error(fmt::format("virtual link {} has an unplaced endpoint", lv));
  if (partial.link_paths.at(static_cast<size_t>(lv))) {
    throw std::logic_error(fmt::format("virtual link {} is already routed", lv));
  }
  auto path = shortest_feasible_path(state, *src, *dst, vl.bandwidth);
  if (!path) return std::nullopt;
  for (LinkId l : *path) {
    state.reserve_link(l, vl.bandwidth, vnr.id);
    partial.link_reservations.push_back({l, vl.bandwidth});
  }
  partial.link_paths[static_cast<size_t>(lv)] = *path;
  return path;
}

StepOutcome place_and_route(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial,
                            NodeId nv, NodeId np) {
  if (place_node(state, vnr, partial, nv, np)) return StepOutcome::place_failed;
  std::vector<LinkId> pending;
  for (const auto& a : vnr.graph.neighbors(nv)) {
    if (partial.node_map[static_cast<size_t>(a.node)]) pending.push_back(a.link);
  }
  std::sort(pending.begin(), pending.end());
  for (LinkId lv : pending) {
    if (!route_link(state, vnr, partial, lv)) return StepOutcome::route_failed;
  }
  return StepOutcome::placed;
}

void release(SubstrateState& state, EmbeddingSolution& solution) {
  const bool has_reservations = !solution.node_reservations.empty() || !solution.link_reservations.empty();
  if (!has_reservations) {
    if (solution.placed_count() > 0) {
      throw std::logic_error(fmt::format("VNR {} released twice", solution.vnr_id));
    }
    return;
  }
  if (!state.holds(solution.vnr_id)) {
    throw std::logic_error(fmt::format("VNR {} holds no reservations on this substrate", solution.vnr_id));
  }
  for (auto it = solution.link_reservations.rbegin(); it != solution.link_reservations.rend(); ++it) {
    state.free_link(it->link, it->amount, solution.vnr_id);
  }
  for (auto it = solution.node_reservations.rbegin(); it != solution.node_reservations.rend(); ++it) {
    NodeId nv = -1;
    for (size_t i = 0; i < solution.node_map.size(); ++i) {
      if (solution.node_map[i] && *solution.node_map[i] == it->host) nv = static_cast<NodeId>(i);
    }
    state.free_node(it->host, it->amount, solution.vnr_id, nv);
  }
  solution.node_reservations.clear();
  solution.link_reservations.clear();
}

double revenue(const VirtualNetworkRequest& vnr) {
  double node_sum = 0.0;
  for (const auto& d : vnr.demand) node_sum += d.sum();
  double link_sum = 0.0;
  for (const auto& l : vnr.graph.links()) link_sum += l.bandwidth;
  return node_sum / kResourceTypes + link_sum;
}

double cost(const VirtualNetworkRequest& vnr, const EmbeddingSolution& solution) {
  if (!solution.feasible) throw std::invalid_argument("cost of an infeasible solution");
  double node_sum = 0.0;
  for (const auto& d : vnr.demand) node_sum += d.sum();
  double link_sum = 0.0;
  for (LinkId lv = 0; lv < vnr.link_count(); ++lv) {
    const auto& path = solution.link_paths.at(static_cast<size_t>(lv));
    link_sum += static_cast<double>(path->size()) * vnr.graph.link(lv).bandwidth;
  }
  return node_sum / kResourceTypes + link_sum;
}

double r2c(const VirtualNetworkRequest& vnr, const EmbeddingSolution& solution) {
  if (!solution.feasible) return 0.0;
  const double c = cost(vnr, solution);
  // A request with no demand at all costs nothing and earns nothing.
  if (c == 0.0) return 1.0;
  return revenue(vnr) / c;
}

void finalize(const VirtualNetworkRequest& vnr, EmbeddingSolution& solution) {
  if (!solution.all_nodes_placed() || !solution.all_links_routed()) {
    throw std::logic_error(fmt::format("VNR {} finalized before completion", vnr.id));
  }
  solution.feasible = true;
  solution.revenue = revenue(vnr);
  solution.cost = cost(vnr, solution);
}

std::string to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::incomplete:
      return "incomplete";
    case ViolationKind::one_to_one:
      return "one-to-one";
    case ViolationKind::node_resources:
      return "node-resources";
    case ViolationKind::path_endpoints:
      return "path-endpoints";
    case ViolationKind::loop:
      return "loop";
    case ViolationKind::bandwidth:
      return "bandwidth";
    case ViolationKind::unknown_link:
      return "unknown-link";
  }
  return "unknown";
}

std::vector<Violation> verify_solution(const PhysicalNetwork& pn, std::span<const EmbeddedRequest> concurrent) {
  std::vector<Violation> out;
  const auto node_count = static_cast<size_t>(pn.node_count());
  std::vector<ResourceVector> used(node_count);
  std::vector<double> used_bw(static_cast<size_t>(pn.link_count()), 0.0);

  for (const auto& req : concurrent) {
    const auto& vnr = *req.vnr;
    const auto& sol = *req.solution;
    const int id = vnr.id;
    if (static_cast<int>(sol.node_map.size()) != vnr.node_count() ||
        static_cast<int>(sol.link_paths.size()) != vnr.link_count()) {
      out.push_back({ViolationKind::incomplete, id, "solution shape does not match the request"});
      continue;
    }
    std::vector<int> host_count(node_count, 0);
    for (size_t nv = 0; nv < sol.node_map.size(); ++nv) {
      const auto& m = sol.node_map[nv];
      if (!m) {
        out.push_back({ViolationKind::incomplete, id, fmt::format("virtual node {} unplaced", nv)});
        continue;
      }
      if (*m < 0 || *m >= pn.node_count()) {
        out.push_back({ViolationKind::incomplete, id, fmt::format("virtual node {} on unknown host {}", nv, *m)});
        continue;
      }
      if (++host_count[static_cast<size_t>(*m)] == 2) {
        out.push_back({ViolationKind::one_to_one, id, fmt::format("physical node {} hosts two virtual nodes", *m)});
      }
      used[static_cast<size_t>(*m)] += vnr.demand[nv];
    }
    for (LinkId lv = 0; lv < vnr.link_count(); ++lv) {
      const auto& path = sol.link_paths[static_cast<size_t>(lv)];
      const auto& vl = vnr.graph.link(lv);
      if (!path) {
        out.push_back({ViolationKind::incomplete, id, fmt::format("virtual link {} unrouted", lv)});
        continue;
      }
      const auto& src = sol.node_map[static_cast<size_t>(vl.u)];
      const auto& dst = sol.node_map[static_cast<size_t>(vl.v)];
      if (!src || !dst) continue;
      NodeId cur = *src;
      std::vector<NodeId> visited{cur};
      bool broken = false;
      for (LinkId l : *path) {
        if (l < 0 || l >= pn.link_count()) {
          out.push_back({ViolationKind::unknown_link, id, fmt::format("virtual link {} uses unknown link {}", lv, l)});
          broken = true;
          break;
        }
        const auto& pl = pn.graph.link(l);
        if (pl.u != cur && pl.v != cur) {
          out.push_back({ViolationKind::path_endpoints, id,
                         fmt::format("virtual link {}: physical link {} does not continue from node {}", lv, l, cur)});
          broken = true;
          break;
        }
        cur = pl.other(cur);
        if (std::find(visited.begin(), visited.end(), cur) != visited.end()) {
          out.push_back({ViolationKind::loop, id, fmt::format("virtual link {} revisits node {}", lv, cur)});
        }
        visited.push_back(cur);
        used_bw[static_cast<size_t>(l)] += vl.bandwidth;
      }
      if (!broken && cur != *dst) {
        out.push_back({ViolationKind::path_endpoints, id,
                       fmt::format("virtual link {} ends at {} instead of {}", lv, cur, *dst)});
      }
    }
  }

  for (size_t n = 0; n < node_count; ++n) {
    if (!pn.capacity[n].covers(used[n])) {
      out.push_back({ViolationKind::node_resources, -1, fmt::format("physical node {} is over-committed", n)});
    }
  }
  for (LinkId l = 0; l < pn.link_count(); ++l) {
    if (used_bw[static_cast<size_t>(l)] > pn.graph.link(l).bandwidth) {
      out.push_back({ViolationKind::bandwidth, -1,
                     fmt::format("physical link {} carries {} > {}", l, used_bw[static_cast<size_t>(l)],
                                 pn.graph.link(l).bandwidth)});
    }
  }
  return out;
}

std::optional<EmbeddingSolution> exhaustive_best(const SubstrateState& state, const VirtualNetworkRequest& vnr,
                                                 const SearchMode& mode) {
  const int nv_count = vnr.node_count();
  const int np_count = state.network().node_count();
  if (nv_count > kExhaustiveMaxVirtual || np_count > kExhaustiveMaxPhysical) {
    throw std::invalid_argument(fmt::format("exhaustive search limited to {} virtual / {} physical nodes",
                                            kExhaustiveMaxVirtual, kExhaustiveMaxPhysical));
  }
  const auto* fixed = std::get_if<FixedOrder>(&mode);
  if (fixed) {
    auto sorted = fixed->ordering;
    std::sort(sorted.begin(), sorted.end());
    bool permutation = static_cast<int>(sorted.size()) == nv_count;
    for (int i = 0; permutation && i < nv_count; ++i) permutation = sorted[static_cast<size_t>(i)] == i;
    if (!permutation) throw std::invalid_argument("fixed ordering must be a permutation of the virtual nodes");
  }

  std::optional<EmbeddingSolution> best;
  double best_r2c = -1.0;

  std::function<void(const SubstrateState&, const EmbeddingSolution&, int)> search =
      [&](const SubstrateState& s, const EmbeddingSolution& partial, int depth) {
        std::vector<NodeId> candidates;
        if (fixed) {
          candidates.push_back(fixed->ordering[static_cast<size_t>(depth)]);
        } else {
          for (NodeId nv = 0; nv < nv_count; ++nv) {
            if (!partial.node_map[static_cast<size_t>(nv)]) candidates.push_back(nv);
          }
        }
        for (NodeId nv : candidates) {
          for (NodeId np = 0; np < np_count; ++np) {
            SubstrateState next = s;
            EmbeddingSolution trial = partial;
            if (place_and_route(next, vnr, trial, nv, np) != StepOutcome::placed) continue;
            if (depth + 1 == nv_count) {
              finalize(vnr, trial);
              const double ratio = r2c(vnr, trial);
              if (ratio > best_r2c) {
                best_r2c = ratio;
                best = std::move(trial);
              }
            } else {
              search(next, trial, depth + 1);
            }
          }
        }
      };
  if (nv_count == 0) return std::nullopt;
  search(state, EmbeddingSolution::empty_for(vnr), 0);
  return best;
}

}  // namespace vne
