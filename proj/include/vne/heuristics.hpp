#ifndef VNE_HEURISTICS_HPP_
#define VNE_HEURISTICS_HPP_

#include <optional>
#include <string>
#include <vector>

#include "vne/embedding.hpp"
#include "vne/simkernel.hpp"

namespace vne {

// NRM-style node score: mean resource quantity across the resource types
// times the summed bandwidth of the adjacent links. Physical nodes use
// available quantities, virtual nodes their demands. This is a stand-in for
// the published NRM metric, not a replication of it.
double nrm_score_physical(const SubstrateState& state, NodeId node);
double nrm_score_virtual(const VirtualNetworkRequest& vnr, NodeId node);

// Node ids sorted by descending score, ties by ascending id.
std::vector<NodeId> rank_by_score(const std::vector<double>& scores);

enum class UniOrder { id, nrm };
std::string to_string(UniOrder order);
UniOrder parse_uni_order(const std::string& text);

// Fixed virtual-node decision sequence used by the unidirectional mode.
std::vector<NodeId> virtual_node_order(const VirtualNetworkRequest& vnr, UniOrder order);

// Greedy matching: virtual nodes by descending NRM score, each on the
// highest-scoring feasible host, links routed as soon as both ends are
// placed. Any failure rejects the request and rolls the state back.
std::optional<EmbeddingSolution> greedy_solve(SubstrateState& state, const VirtualNetworkRequest& vnr);

class GreedySolver : public Solver {
 public:
  std::optional<EmbeddingSolution> solve(SubstrateState& state, const VirtualNetworkRequest& vnr) override {
    return greedy_solve(state, vnr);
  }
  std::string name() const override { return "greedy-nrm"; }
};

}  // namespace vne

#endif  // VNE_HEURISTICS_HPP_
