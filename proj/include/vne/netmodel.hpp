#ifndef VNE_NETMODEL_HPP_
#define VNE_NETMODEL_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vne {

using NodeId = int;
using LinkId = int;
using Rng = std::mt19937_64;

// Pure seed derivation: splitmix64 folded over the coordinates.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords);

inline constexpr int kResourceTypes = 3;

// Node resources: CPU, storage and GPU, in abstract units.
struct ResourceVector {
  double cpu = 0.0;
  double storage = 0.0;
  double gpu = 0.0;

  double operator[](int i) const { return i == 0 ? cpu : (i == 1 ? storage : gpu); }
  double sum() const { return cpu + storage + gpu; }
  double mean() const { return sum() / kResourceTypes; }

  // True when every component of *this covers the matching component of other.
  bool covers(const ResourceVector& other) const {
    return cpu >= other.cpu && storage >= other.storage && gpu >= other.gpu;
  }
  bool non_negative() const { return cpu >= 0.0 && storage >= 0.0 && gpu >= 0.0; }

  ResourceVector& operator+=(const ResourceVector& o) {
    cpu += o.cpu;
    storage += o.storage;
    gpu += o.gpu;
    return *this;
  }
  // Throws std::logic_error if a component would go negative.
  ResourceVector& operator-=(const ResourceVector& o);

  friend ResourceVector operator+(ResourceVector a, const ResourceVector& b) { return a += b; }
  friend bool operator==(const ResourceVector&, const ResourceVector&) = default;
};

struct Link {
  NodeId u = 0;
  NodeId v = 0;
  double bandwidth = 0.0;

  NodeId other(NodeId n) const { return n == u ? v : u; }
  friend bool operator==(const Link&, const Link&) = default;
};

struct Adjacent {
  NodeId node;
  LinkId link;
};

// Undirected simple graph with bandwidth-weighted links. Neighbour lists are
// kept sorted by node id so traversals are deterministic.
class Graph {
 public:
  Graph() = default;
  explicit Graph(int node_count);

  // Throws std::invalid_argument on self-loops, parallel links, bad endpoints
  // or negative bandwidth.
  LinkId add_link(NodeId u, NodeId v, double bandwidth);

  int node_count() const { return static_cast<int>(adjacency_.size()); }
  int link_count() const { return static_cast<int>(links_.size()); }
  const std::vector<Link>& links() const { return links_; }
  const Link& link(LinkId id) const { return links_.at(static_cast<size_t>(id)); }
  const std::vector<Adjacent>& neighbors(NodeId n) const { return adjacency_.at(static_cast<size_t>(n)); }
  std::optional<LinkId> find_link(NodeId u, NodeId v) const;
  int degree(NodeId n) const { return static_cast<int>(neighbors(n).size()); }
  bool connected() const;

  friend bool operator==(const Graph& a, const Graph& b) { return a.links_ == b.links_ && a.adjacency_.size() == b.adjacency_.size(); }

 private:
  std::vector<Link> links_;
  std::vector<std::vector<Adjacent>> adjacency_;
};

struct PhysicalNetwork {
  Graph graph;
  std::vector<ResourceVector> capacity;

  int node_count() const { return graph.node_count(); }
  int link_count() const { return graph.link_count(); }
  double density() const;
  // Checks the structural invariants; throws std::invalid_argument.
  void validate() const;

  friend bool operator==(const PhysicalNetwork&, const PhysicalNetwork&) = default;
};

struct VirtualNetworkRequest {
  int id = 0;
  Graph graph;
  std::vector<ResourceVector> demand;
  double arrival_time = 0.0;
  double lifetime = 1.0;

  int node_count() const { return graph.node_count(); }
  int link_count() const { return graph.link_count(); }
  void validate() const;
};

template <typename T>
struct Range {
  T lo{};
  T hi{};
  bool valid() const { return lo <= hi; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct CapacityConfig {
  Range<int> node{50, 100};
  Range<int> link{50, 100};
  friend bool operator==(const CapacityConfig&, const CapacityConfig&) = default;
};

// VNR stream parameters. Defaults follow the standard simulation protocol.
struct VnrConfig {
  int count = 1000;
  Range<int> size{2, 10};
  Range<int> node_demand{0, 20};
  Range<int> link_demand{0, 50};
  double link_probability = 0.5;
  double mean_lifetime = 500.0;
  double arrival_rate = 0.001;

  // Returns a list of human readable problems; empty when valid.
  std::vector<std::string> problems() const;
  friend bool operator==(const VnrConfig&, const VnrConfig&) = default;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

struct WaxmanParams {
  double alpha = 0.5;
  int max_attempts = 20000;
};

PhysicalNetwork generate_waxman(int node_count, int target_link_count, std::uint64_t seed,
                                const CapacityConfig& caps = {}, const WaxmanParams& params = {});

// Topology text format:
//   nodes <N>
//   node <id> <cpu> <storage> <gpu>      (optional)
//   edge <u> <v> [bandwidth]
// Blank lines and '#' comments are ignored. Missing capacities are drawn
// from caps using seed.
PhysicalNetwork load_topology(const std::filesystem::path& path, const CapacityConfig& caps = {},
                              std::uint64_t seed = 0);
PhysicalNetwork parse_topology(const std::string& text, const CapacityConfig& caps = {},
                               std::uint64_t seed = 0);
std::string format_topology(const PhysicalNetwork& net);
void save_topology(const PhysicalNetwork& net, const std::filesystem::path& path);

std::vector<VirtualNetworkRequest> sample_vnr_stream(const VnrConfig& cfg, std::uint64_t seed);
// One VNR with the given node count drawn under cfg's demand/link parameters.
VirtualNetworkRequest sample_vnr(const VnrConfig& cfg, int node_count, Rng& rng);

}  // namespace vne

#endif  // VNE_NETMODEL_HPP_
