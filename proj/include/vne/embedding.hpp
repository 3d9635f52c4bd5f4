#ifndef VNE_EMBEDDING_HPP_
#define VNE_EMBEDDING_HPP_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vne/netmodel.hpp"

namespace vne {

using Path = std::vector<LinkId>;

// Node map, link paths and the resource reservations that were applied to
// a SubstrateState while building it. Link paths are indexed by the VNR's
// link ids.
struct EmbeddingSolution {
  int vnr_id = 0;
  std::vector<std::optional<NodeId>> node_map;
  std::vector<std::optional<Path>> link_paths;
  bool feasible = false;
  double revenue = 0.0;
  double cost = 0.0;

  struct NodeReservation {
    NodeId host;
    ResourceVector amount;
  };
  struct LinkReservation {
    LinkId link;
    double amount;
  };
  std::vector<NodeReservation> node_reservations;
  std::vector<LinkReservation> link_reservations;

  static EmbeddingSolution empty_for(const VirtualNetworkRequest& vnr);

  bool all_nodes_placed() const;
  bool all_links_routed() const;
  int placed_count() const;
  bool hosts(NodeId p) const;
};

// Available resources over a PhysicalNetwork. The network must outlive the
// state.
class SubstrateState {
 public:
  explicit SubstrateState(const PhysicalNetwork& network);

  const PhysicalNetwork& network() const { return *network_; }
  const ResourceVector& avail_node(NodeId n) const { return avail_node_.at(static_cast<size_t>(n)); }
  double avail_bandwidth(LinkId l) const { return avail_bandwidth_.at(static_cast<size_t>(l)); }
  const std::vector<ResourceVector>& avail_nodes() const { return avail_node_; }
  const std::vector<double>& avail_bandwidths() const { return avail_bandwidth_; }
  // (vnr id, virtual node) pairs currently hosted on physical node n.
  const std::vector<std::pair<int, NodeId>>& occupants(NodeId n) const { return occupancy_.at(static_cast<size_t>(n)); }
  // Whether any reservation for vnr_id is currently applied.
  bool holds(int vnr_id) const { return reservations_.count(vnr_id) > 0; }
  int active_vnr_count() const { return static_cast<int>(reservations_.size()); }

  // Same available quantities and occupancy as other.
  bool same_resources(const SubstrateState& other) const;
  // avail equals capacity everywhere and nothing is hosted.
  bool pristine() const;

  // Low-level bookkeeping used by the embedding operations. reserve_* throw
  // std::logic_error instead of driving a quantity negative; free_* throw if
  // a quantity would exceed its capacity.
  void reserve_node(NodeId n, const ResourceVector& amount, int vnr_id, NodeId nv);
  void free_node(NodeId n, const ResourceVector& amount, int vnr_id, NodeId nv);
  void reserve_link(LinkId l, double amount, int vnr_id);
  void free_link(LinkId l, double amount, int vnr_id);

 private:
  void count_reservation(int vnr_id, int delta);

  const PhysicalNetwork* network_;
  std::vector<ResourceVector> avail_node_;
  std::vector<double> avail_bandwidth_;
  std::vector<std::vector<std::pair<int, NodeId>>> occupancy_;
  std::map<int, int> reservations_;  // vnr id -> number of node/link reservations
};

enum class PlaceFailure { resources, exclusivity };

std::string to_string(PlaceFailure f);

std::vector<NodeId> feasible_hosts(const SubstrateState& state, const VirtualNetworkRequest& vnr, NodeId nv,
                                   const EmbeddingSolution& partial);

// Places nv on np and reserves its demand. Leaves the state untouched on
// failure. Throws std::logic_error if nv is already mapped.
std::optional<PlaceFailure> place_node(SubstrateState& state, const VirtualNetworkRequest& vnr,
                                       EmbeddingSolution& partial, NodeId nv, NodeId np);

// Minimum-hop path between the hosts of virtual link lv over links with
// enough available bandwidth. BFS expands neighbours by ascending id. On
// success the bandwidth is reserved along the path.
std::optional<Path> route_link(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial,
                               LinkId lv);

// Shortest bandwidth-feasible path search without side effects.
std::optional<Path> shortest_feasible_path(const SubstrateState& state, NodeId from, NodeId to, double bandwidth);

// Reverses every reservation recorded in solution. Throws std::logic_error
// when the solution holds no reservations on this state (double release).
void release(SubstrateState& state, EmbeddingSolution& solution);

// Marks a complete solution as feasible and fills revenue/cost.
void finalize(const VirtualNetworkRequest& vnr, EmbeddingSolution& solution);

double revenue(const VirtualNetworkRequest& vnr);
// Throws std::invalid_argument for infeasible solutions.
double cost(const VirtualNetworkRequest& vnr, const EmbeddingSolution& solution);
double r2c(const VirtualNetworkRequest& vnr, const EmbeddingSolution& solution);

enum class ViolationKind { incomplete, one_to_one, node_resources, path_endpoints, loop, bandwidth, unknown_link };

struct Violation {
  ViolationKind kind;
  int vnr_id;
  std::string detail;
};

std::string to_string(ViolationKind k);

struct EmbeddedRequest {
  const VirtualNetworkRequest* vnr;
  const EmbeddingSolution* solution;
};

// Re-checks a set of concurrently held solutions from scratch against raw
// capacities. An empty result means every constraint holds.
std::vector<Violation> verify_solution(const PhysicalNetwork& pn, std::span<const EmbeddedRequest> concurrent);

struct FreeOrder {};
struct FixedOrder {
  std::vector<NodeId> ordering;
};
using SearchMode = std::variant<FreeOrder, FixedOrder>;

inline constexpr int kExhaustiveMaxVirtual = 4;
inline constexpr int kExhaustiveMaxPhysical = 8;

// Best-R2C outcome over every decision sequence the environment can take,
// replaying placement and incremental routing exactly. The returned
// solution's reservations refer to a scratch copy; state is not modified.
std::optional<EmbeddingSolution> exhaustive_best(const SubstrateState& state, const VirtualNetworkRequest& vnr,
                                                 const SearchMode& mode);

// Places nv on np and routes every link between nv and already placed
// neighbours, ascending by link id. This is the transition used by all
// solvers; on failure the caller is expected to roll back.
enum class StepOutcome { placed, place_failed, route_failed };
StepOutcome place_and_route(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial,
                            NodeId nv, NodeId np);

}  // namespace vne

#endif  // VNE_EMBEDDING_HPP_
