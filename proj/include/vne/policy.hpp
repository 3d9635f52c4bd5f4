#ifndef VNE_POLICY_HPP_
#define VNE_POLICY_HPP_

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vne/embedding.hpp"
#include "vne/heuristics.hpp"
#include "vne/tensor.hpp"

namespace vne {

constexpr int kFeatureColumns = 7;

struct PolicyConfig {
  int hidden = 128;
  int gcn_layers = 3;
  // Resource and bandwidth features are divided by this.
  double feature_scale = 100.0;
  bool operator==(const PolicyConfig&) const = default;
};

// bi: the policy picks the virtual node too. uni: virtual nodes follow a
// fixed ordering and only the placement level is learned.
struct ActionMode {
  enum class Kind { bi, uni };
  Kind kind = Kind::bi;
  UniOrder order = UniOrder::nrm;

  bool bidirectional() const { return kind == Kind::bi; }
  std::string to_string() const;  // "bi", "uni:id", "uni:nrm"
  static ActionMode parse(const std::string& text);
  bool operator==(const ActionMode&) const = default;
};

struct FeatureMatrices {
  Matrix x_v;  // |N^v| x 7
  Matrix x_p;  // |N^p| x 7
  std::shared_ptr<const Matrix> a_v;  // normalized adjacencies
  std::shared_ptr<const Matrix> a_p;
  std::vector<bool> placed;    // per virtual node
  std::vector<bool> selected;  // per physical node: hosts part of this VNR
};

// Columns: 3 resources, max/mean/sum of adjacent bandwidth, flag. The
// adjacency matrices are recomputed unless supplied.
FeatureMatrices build_features(const SubstrateState& state, const VirtualNetworkRequest& vnr,
                               const EmbeddingSolution& partial, double feature_scale,
                               std::shared_ptr<const Matrix> a_v = nullptr, std::shared_ptr<const Matrix> a_p = nullptr);

// Parameters under "actor." and "critic."; each side holds its own
// virtual and physical encoders.
ParamStore init_policy_params(const PolicyConfig& cfg, std::uint64_t seed);

struct Encoding {
  Tensor z_v;
  Tensor z_p;
};

// Z = GCN^K(MLP(X)) + MLP(X) for both graphs, using prefix "actor" or "critic".
Encoding encode(const FeatureMatrices& f, const ParamStore& params, const PolicyConfig& cfg, const std::string& prefix);

// Per-virtual-node scores MLP(Z_v + GMP(Z_p)), |N^v| x 1.
Tensor high_level_scores(const Encoding& enc, const ParamStore& params);
// Per-physical-node scores MLP(Z_p + GMP(Z_v) + z_nv), |N^p| x 1.
Tensor low_level_scores(const Encoding& enc, const ParamStore& params, NodeId nv);
// true where the host is infeasible for nv.
std::vector<bool> low_level_mask(const SubstrateState& state, const VirtualNetworkRequest& vnr, NodeId nv,
                                 const EmbeddingSolution& partial);

// MLP(concat(GMP(Z_v), GMP(Z_p))) over the critic's own encoders, as 1x1.
Tensor evaluate_value(const FeatureMatrices& f, const ParamStore& params, const PolicyConfig& cfg);

struct BilevelDistribution {
  std::vector<double> high;  // over virtual nodes
  std::vector<double> low;   // over physical nodes, given the chosen virtual node
};

enum class SelectMode { sample, greedy };

struct Action {
  NodeId nv = 0;
  NodeId np = 0;
  double log_prob = 0.0;
};

// Greedy takes the first maximum; sample inverts the CDF. Throws
// EmptySupportError when all probabilities are zero.
size_t pick_index(const std::vector<double>& probs, SelectMode mode, Rng& rng);
Action select_action(const BilevelDistribution& dist, SelectMode mode, Rng& rng);
double entropy_of(const std::vector<double>& probs);
double policy_entropy(const BilevelDistribution& dist);

struct PolicyModel {
  PolicyConfig config;
  ActionMode mode;
  ParamStore params;

  static PolicyModel create(const PolicyConfig& cfg, ActionMode mode, std::uint64_t seed);
  PolicyModel clone() const { return {config, mode, params.clone()}; }
};

// One MDP decision. np is empty when no host is feasible for nv, in which
// case log_prob and entropy cover the high level only.
struct ActorDecision {
  NodeId nv = 0;
  std::optional<NodeId> np;
  double log_prob = 0.0;
  double entropy = 0.0;
  BilevelDistribution dist;
  std::vector<bool> low_mask;
};

ActorDecision decide(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params, const FeatureMatrices& f,
                     const SubstrateState& state,
                     const VirtualNetworkRequest& vnr, const EmbeddingSolution& partial,
                     const std::vector<NodeId>& fixed_order, SelectMode select, Rng& rng);

// Differentiable log-probability and entropy of a recorded decision.
struct ActionEval {
  Tensor log_prob;
  Tensor entropy;
};
ActionEval evaluate_action(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params, const FeatureMatrices& f,
                           NodeId nv, std::optional<NodeId> np, const std::vector<bool>& low_mask);

// Directory with params.txt and manifest.json.
void save_policy(const PolicyModel& model, const std::filesystem::path& dir);
PolicyModel load_policy(const std::filesystem::path& dir);

}  // namespace vne

#endif  // VNE_POLICY_HPP_
