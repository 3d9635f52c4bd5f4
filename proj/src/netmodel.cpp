#include "vne/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <sstream>

#include <fmt/format.h>

namespace vne {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = splitmix64(base);
  for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

ResourceVector& ResourceVector::operator-=(const ResourceVector& o) {
  if (!covers(o)) {
    throw std::logic_error(fmt::format("resource underflow: ({}, {}, {}) - ({}, {}, {})", cpu,
                                       storage, gpu, o.cpu, o.storage, o.gpu));
  }
  cpu -= o.cpu;
  storage -= o.storage;
  gpu -= o.gpu;
  return *this;
}

Graph::Graph(int node_count) {
  if (node_count < 0) throw std::invalid_argument("negative node count");
  adjacency_.resize(static_cast<size_t>(node_count));
}

LinkId Graph::add_link(NodeId u, NodeId v, double bandwidth) {
  const int n = node_count();
  if (u < 0 || v < 0 || u >= n || v >= n) {
    throw std::invalid_argument(fmt::format("link ({}, {}) has an endpoint outside [0, {})", u, v, n));
  }
  if (u == v) throw std::invalid_argument(fmt::format("self-loop on node {}", u));
  if (!(bandwidth >= 0.0)) throw std::invalid_argument(fmt::format("negative bandwidth on ({}, {})", u, v));
  if (find_link(u, v)) throw std::invalid_argument(fmt::format("duplicate link ({}, {})", u, v));

  const auto id = static_cast<LinkId>(links_.size());
  links_.push_back({std::min(u, v), std::max(u, v), bandwidth});
  auto insert_sorted = [](std::vector<Adjacent>& adj, Adjacent a) {
    auto pos = std::lower_bound(adj.begin(), adj.end(), a,
                                [](const Adjacent& x, const Adjacent& y) { return x.node < y.node; });
    adj.insert(pos, a);
  };
  insert_sorted(adjacency_[static_cast<size_t>(u)], {v, id});
  insert_sorted(adjacency_[static_cast<size_t>(v)], {u, id});
  return id;
}

std::optional<LinkId> Graph::find_link(NodeId u, NodeId v) const {
  if (u < 0 || u >= node_count()) return std::nullopt;
  const auto& adj = adjacency_[static_cast<size_t>(u)];
  auto pos = std::lower_bound(adj.begin(), adj.end(), v,
                              [](const Adjacent& x, NodeId key) { return x.node < key; });
  if (pos != adj.end() && pos->node == v) return pos->link;
  return std::nullopt;
}

bool Graph::connected() const {
  const int n = node_count();
  if (n <= 1) return true;
  std::vector<char> seen(static_cast<size_t>(n), 0);
  std::queue<NodeId> frontier;
  frontier.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!frontier.empty()) {
    const NodeId cur = frontier.front();
    frontier.pop();
    for (const auto& a : neighbors(cur)) {
      if (!seen[static_cast<size_t>(a.node)]) {
        seen[static_cast<size_t>(a.node)] = 1;
        ++reached;
        frontier.push(a.node);
      }
    }
  }
  return reached == n;
}

double PhysicalNetwork::density() const {
  const double n = node_count();
  if (n < 2) return 0.0;
  return 2.0 * link_count() / (n * (n - 1.0));
}

void PhysicalNetwork::validate() const {
  if (static_cast<int>(capacity.size()) != node_count()) {
    throw std::invalid_argument("capacity list size differs from node count");
  }
  for (size_t i = 0; i < capacity.size(); ++i) {
    if (!capacity[i].non_negative()) throw std::invalid_argument(fmt::format("negative capacity on node {}", i));
  }
}

void VirtualNetworkRequest::validate() const {
  if (node_count() < 1) throw std::invalid_argument("VNR without nodes");
  if (static_cast<int>(demand.size()) != node_count()) {
    throw std::invalid_argument("demand list size differs from node count");
  }
  for (const auto& d : demand) {
    if (!d.non_negative()) throw std::invalid_argument("negative node demand");
  }
  if (!(lifetime > 0.0)) throw std::invalid_argument("VNR lifetime must be positive");
  if (!(arrival_time >= 0.0)) throw std::invalid_argument("VNR arrival time must be non-negative");
}

std::vector<std::string> VnrConfig::problems() const {
  std::vector<std::string> out;
  if (count < 1) out.emplace_back("count must be >= 1");
  if (!size.valid() || size.lo < 1) out.emplace_back("size range must be non-empty with lo >= 1");
  if (!node_demand.valid() || node_demand.lo < 0) out.emplace_back("node_demand range must be non-empty and non-negative");
  if (!link_demand.valid() || link_demand.lo < 0) out.emplace_back("link_demand range must be non-empty and non-negative");
  if (!(link_probability >= 0.0 && link_probability <= 1.0)) out.emplace_back("link_probability must lie in [0, 1]");
  if (!(mean_lifetime > 0.0)) out.emplace_back("mean_lifetime must be > 0");
  if (!(arrival_rate > 0.0)) out.emplace_back("arrival_rate must be > 0");
  return out;
}

ParseError::ParseError(int line, const std::string& what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

namespace {

int uniform_int(Rng& rng, Range<int> r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng); }

ResourceVector draw_resources(Rng& rng, Range<int> r) {
  const double cpu = uniform_int(rng, r);
  const double storage = uniform_int(rng, r);
  const double gpu = uniform_int(rng, r);
  return {cpu, storage, gpu};
}

struct Point {
  double x, y;
};

double expected_links(const std::vector<double>& dist, double max_dist, double alpha, double beta) {
  double total = 0.0;
  for (double d : dist) total += std::min(1.0, alpha * std::exp(-d / (beta * max_dist)));
  return total;
}

}  // namespace

PhysicalNetwork generate_waxman(int node_count, int target_link_count, std::uint64_t seed,
                                const CapacityConfig& caps, const WaxmanParams& params) {
  if (node_count < 2) throw std::invalid_argument("waxman: node_count must be >= 2");
  const long long pairs = static_cast<long long>(node_count) * (node_count - 1) / 2;
  if (target_link_count > pairs) {
    throw std::invalid_argument(fmt::format("waxman: {} links exceed the {} possible pairs", target_link_count, pairs));
  }
  if (target_link_count < node_count - 1) {
    throw std::invalid_argument("waxman: too few links for a connected graph");
  }
  if (!caps.node.valid() || !caps.link.valid()) throw std::invalid_argument("waxman: empty capacity range");

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto n = static_cast<size_t>(node_count);

  // Dense targets need a larger alpha than the classic 0.5 to be reachable.
  double alpha = params.alpha;
  const double fill = static_cast<double>(target_link_count) / static_cast<double>(pairs);
  if (alpha < fill * 1.1) alpha = std::min(1.0, fill * 1.1);

  std::optional<Graph> found;
  for (int attempt = 0; attempt < params.max_attempts && !found; ++attempt) {
    std::vector<Point> pos(n);
    for (auto& p : pos) p = {unit(rng), unit(rng)};
    std::vector<double> dist;
    dist.reserve(static_cast<size_t>(pairs));
    double max_dist = 0.0;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        const double d = std::hypot(pos[i].x - pos[j].x, pos[i].y - pos[j].y);
        dist.push_back(d);
        max_dist = std::max(max_dist, d);
      }
    }
    if (max_dist <= 0.0) max_dist = 1.0;

    // Rescale beta (bisection in log space) so the expected count hits the target.
    double lo = std::log(1e-4), hi = std::log(1e6);
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (expected_links(dist, max_dist, alpha, std::exp(mid)) < target_link_count) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    const double beta = std::exp(hi);

    Graph g(node_count);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j, ++k) {
        const double p = target_link_count == pairs ? 1.0 : std::min(1.0, alpha * std::exp(-dist[k] / (beta * max_dist)));
        if (unit(rng) < p) g.add_link(static_cast<NodeId>(i), static_cast<NodeId>(j), 0.0);
      }
    }
    if (g.link_count() == target_link_count && g.connected()) found = std::move(g);
  }
  if (!found) {
    throw GenerationError(fmt::format("waxman: no connected {}-node graph with exactly {} links after {} attempts",
                                      node_count, target_link_count, params.max_attempts));
  }

  PhysicalNetwork net;
  net.graph = Graph(node_count);
  for (const auto& l : found->links()) net.graph.add_link(l.u, l.v, uniform_int(rng, caps.link));
  net.capacity.reserve(n);
  for (size_t i = 0; i < n; ++i) net.capacity.push_back(draw_resources(rng, caps.node));
  return net;
}

PhysicalNetwork parse_topology(const std::string& text, const CapacityConfig& caps, std::uint64_t seed) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::optional<int> node_count;
  std::vector<std::optional<ResourceVector>> node_caps;
  struct PendingEdge {
    NodeId u, v;
    std::optional<double> bw;
    int line;
  };
  std::vector<PendingEdge> edges;

  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string keyword;
    if (!(ls >> keyword)) continue;

    auto expect_end = [&]() {
      std::string extra;
      if (ls >> extra) throw ParseError(line_no, fmt::format("unexpected token '{}'", extra));
    };

    if (keyword == "nodes") {
      if (node_count) throw ParseError(line_no, "duplicate 'nodes' header");
      int count = 0;
      if (!(ls >> count) || count < 1) throw ParseError(line_no, "expected 'nodes <N>' with N >= 1");
      expect_end();
      node_count = count;
      node_caps.assign(static_cast<size_t>(count), std::nullopt);
    } else if (keyword == "node") {
      if (!node_count) throw ParseError(line_no, "'node' before 'nodes' header");
      int id = 0;
      ResourceVector r;
      if (!(ls >> id >> r.cpu >> r.storage >> r.gpu)) throw ParseError(line_no, "expected 'node <id> <cpu> <storage> <gpu>'");
      expect_end();
      if (id < 0 || id >= *node_count) throw ParseError(line_no, fmt::format("node id {} out of range", id));
      if (!r.non_negative()) throw ParseError(line_no, "negative node capacity");
      if (node_caps[static_cast<size_t>(id)]) throw ParseError(line_no, fmt::format("duplicate node {}", id));
      node_caps[static_cast<size_t>(id)] = r;
    } else if (keyword == "edge") {
      if (!node_count) throw ParseError(line_no, "'edge' before 'nodes' header");
      PendingEdge e{0, 0, std::nullopt, line_no};
      if (!(ls >> e.u >> e.v)) throw ParseError(line_no, "expected 'edge <u> <v> [bandwidth]'");
      std::string bw_token;
      if (ls >> bw_token) {
        try {
          size_t used = 0;
          e.bw = std::stod(bw_token, &used);
          if (used != bw_token.size()) throw std::invalid_argument(bw_token);
        } catch (const std::exception&) {
          throw ParseError(line_no, fmt::format("bad bandwidth '{}'", bw_token));
        }
        expect_end();
      }
      edges.push_back(e);
    } else {
      throw ParseError(line_no, fmt::format("unknown keyword '{}'", keyword));
    }
  }
  if (!node_count) throw ParseError(line_no, "missing 'nodes <N>' header");

  Rng rng(seed);
  PhysicalNetwork net;
  net.graph = Graph(*node_count);
  for (const auto& e : edges) {
    const double bw = e.bw ? *e.bw : uniform_int(rng, caps.link);
    try {
      net.graph.add_link(e.u, e.v, bw);
    } catch (const std::invalid_argument& err) {
      throw ParseError(e.line, err.what());
    }
  }
  for (auto& c : node_caps) net.capacity.push_back(c ? *c : draw_resources(rng, caps.node));
  return net;
}

PhysicalNetwork load_topology(const std::filesystem::path& path, const CapacityConfig& caps, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open topology file '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_topology(buffer.str(), caps, seed);
}

std::string format_topology(const PhysicalNetwork& net) {
  std::string out = fmt::format("nodes {}\n", net.node_count());
  for (int i = 0; i < net.node_count(); ++i) {
    const auto& c = net.capacity[static_cast<size_t>(i)];
    out += fmt::format("node {} {} {} {}\n", i, c.cpu, c.storage, c.gpu);
  }
  for (const auto& l : net.graph.links()) out += fmt::format("edge {} {} {}\n", l.u, l.v, l.bandwidth);
  return out;
}

void save_topology(const PhysicalNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write topology file '{}'", path.string()));
  out << format_topology(net);
}

VirtualNetworkRequest sample_vnr(const VnrConfig& cfg, int node_count, Rng& rng) {
  VirtualNetworkRequest vnr;
  vnr.graph = Graph(node_count);
  const auto n = static_cast<size_t>(node_count);
  std::bernoulli_distribution coin(cfg.link_probability);

  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (NodeId i = 0; i < node_count; ++i) {
    for (NodeId j = i + 1; j < node_count; ++j) {
      if (coin(rng)) pairs.emplace_back(i, j);
    }
  }

  // Join disconnected components with one random edge each.
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<size_t>(x)] != x) x = parent[static_cast<size_t>(x)] = parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
    return x;
  };
  for (auto [u, v] : pairs) parent[static_cast<size_t>(find(u))] = find(v);
  std::vector<std::vector<NodeId>> components;
  std::vector<int> comp_of_root(n, -1);
  for (NodeId i = 0; i < node_count; ++i) {
    const int r = find(i);
    if (comp_of_root[static_cast<size_t>(r)] < 0) {
      comp_of_root[static_cast<size_t>(r)] = static_cast<int>(components.size());
      components.emplace_back();
    }
    components[static_cast<size_t>(comp_of_root[static_cast<size_t>(r)])].push_back(i);
  }
  if (components.size() > 1) {
    std::shuffle(components.begin(), components.end(), rng);
    for (size_t c = 1; c < components.size(); ++c) {
      const auto& a = components[c - 1];
      const auto& b = components[c];
      const NodeId u = a[std::uniform_int_distribution<size_t>(0, a.size() - 1)(rng)];
      const NodeId v = b[std::uniform_int_distribution<size_t>(0, b.size() - 1)(rng)];
      pairs.emplace_back(std::min(u, v), std::max(u, v));
    }
  }

  for (auto [u, v] : pairs) vnr.graph.add_link(u, v, uniform_int(rng, cfg.link_demand));
  vnr.demand.reserve(n);
  for (size_t i = 0; i < n; ++i) vnr.demand.push_back(draw_resources(rng, cfg.node_demand));

  std::exponential_distribution<double> life(1.0 / cfg.mean_lifetime);
  do {
    vnr.lifetime = life(rng);
  } while (!(vnr.lifetime > 0.0));
  return vnr;
}

std::vector<VirtualNetworkRequest> sample_vnr_stream(const VnrConfig& cfg, std::uint64_t seed) {
  if (auto issues = cfg.problems(); !issues.empty()) {
    throw std::invalid_argument("invalid VNR config: " + issues.front());
  }
  Rng rng(seed);
  std::exponential_distribution<double> gap(cfg.arrival_rate);
  std::uniform_int_distribution<int> size(cfg.size.lo, cfg.size.hi);
  std::vector<VirtualNetworkRequest> out;
  out.reserve(static_cast<size_t>(cfg.count));
  double t = 0.0;
  for (int i = 0; i < cfg.count; ++i) {
    t += gap(rng);
    auto vnr = sample_vnr(cfg, size(rng), rng);
    vnr.id = i;
    vnr.arrival_time = t;
    out.push_back(std::move(vnr));
  }
  return out;
}

}  // namespace vne
