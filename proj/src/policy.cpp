#include "vne/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

namespace vne {

std::string ActionMode::to_string() const { return kind == Kind::bi ? "bi" : "uni:" + vne::to_string(order); }

ActionMode ActionMode::parse(const std::string& text) {
  if (text == "bi") return {};
  if (text == "uni") return {Kind::uni, UniOrder::nrm};
  if (text.rfind("uni:", 0) == 0) return {Kind::uni, parse_uni_order(text.substr(4))};
  throw std::invalid_argument("unknown action mode '" + text + "' (expected bi, uni:id or uni:nrm)");
}

namespace {

void bandwidth_aggregates(const std::vector<double>& bw, double scale, Matrix& x, Eigen::Index row) {
  if (bw.empty()) return;  // isolated node: zeros
  double hi = 0.0, total = 0.0;
  for (double b : bw) {
    hi = std::max(hi, b);
    total += b;
  }
  x(row, 3) = hi / scale;
  x(row, 4) = total / static_cast<double>(bw.size()) / scale;
  x(row, 5) = total / scale;
}

}  // namespace

FeatureMatrices build_features(const SubstrateState& state, const VirtualNetworkRequest& vnr,
                               const EmbeddingSolution& partial, double feature_scale,
                               std::shared_ptr<const Matrix> a_v, std::shared_ptr<const Matrix> a_p) {
  FeatureMatrices f;
  const auto nv = vnr.node_count();
  const auto np = state.network().node_count();
  f.x_v = Matrix::Zero(nv, kFeatureColumns);
  f.x_p = Matrix::Zero(np, kFeatureColumns);
  f.placed.assign(static_cast<size_t>(nv), false);
  f.selected.assign(static_cast<size_t>(np), false);

  std::vector<double> bw;
  for (NodeId v = 0; v < nv; ++v) {
    const auto& d = vnr.demand[static_cast<size_t>(v)];
    for (int r = 0; r < kResourceTypes; ++r) f.x_v(v, r) = d[r] / feature_scale;
    bw.clear();
    for (const auto& a : vnr.graph.neighbors(v)) bw.push_back(vnr.graph.link(a.link).bandwidth);
    bandwidth_aggregates(bw, feature_scale, f.x_v, v);
    const bool placed = partial.node_map[static_cast<size_t>(v)].has_value();
    f.placed[static_cast<size_t>(v)] = placed;
    f.x_v(v, 6) = placed ? 1.0 : 0.0;
  }
  for (NodeId p = 0; p < np; ++p) {
    const auto& avail = state.avail_node(p);
    for (int r = 0; r < kResourceTypes; ++r) f.x_p(p, r) = avail[r] / feature_scale;
    bw.clear();
    for (const auto& a : state.network().graph.neighbors(p)) bw.push_back(state.avail_bandwidth(a.link));
    bandwidth_aggregates(bw, feature_scale, f.x_p, p);
    const bool selected = partial.hosts(p);
    f.selected[static_cast<size_t>(p)] = selected;
    f.x_p(p, 6) = selected ? 1.0 : 0.0;
  }
  f.a_v = a_v ? std::move(a_v) : std::make_shared<const Matrix>(normalized_adjacency(vnr.graph));
  f.a_p = a_p ? std::move(a_p) : std::make_shared<const Matrix>(normalized_adjacency(state.network().graph));
  return f;
}

namespace {

void add_encoder(ParamStore& ps, const std::string& name, const PolicyConfig& cfg, Rng& rng) {
  add_linear(ps, name + ".in0", kFeatureColumns, cfg.hidden, rng);
  add_linear(ps, name + ".in1", cfg.hidden, cfg.hidden, rng);
  for (int k = 0; k < cfg.gcn_layers; ++k) add_linear(ps, fmt::format("{}.gcn{}", name, k), cfg.hidden, cfg.hidden, rng);
}

Tensor run_encoder(const Matrix& x, const Matrix& a_hat, const ParamStore& ps, const std::string& name,
                   const PolicyConfig& cfg) {
  const Tensor initial = linear(ps, name + ".in1", relu(linear(ps, name + ".in0", Tensor(x))));
  const Tensor adj(a_hat);
  Tensor h = initial;
  for (int k = 0; k < cfg.gcn_layers; ++k) {
    const auto layer = fmt::format("{}.gcn{}", name, k);
    h = gcn_layer(h, adj, ps.get(layer + ".w"), ps.get(layer + ".b"),
                  k + 1 < cfg.gcn_layers ? Activation::relu : Activation::none);
  }
  return add(h, initial);
}

Tensor mlp2(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return linear(ps, name + ".l1", relu(linear(ps, name + ".l0", x)));
}

}  // namespace

ParamStore init_policy_params(const PolicyConfig& cfg, std::uint64_t seed) {
  if (cfg.hidden < 1 || cfg.gcn_layers < 0 || !(cfg.feature_scale > 0.0)) {
    throw std::invalid_argument("invalid policy architecture");
  }
  Rng rng(seed);
  ParamStore ps;
  for (const std::string side : {"actor", "critic"}) {
    add_encoder(ps, side + ".enc_v", cfg, rng);
    add_encoder(ps, side + ".enc_p", cfg, rng);
  }
  add_linear(ps, "actor.high.l0", cfg.hidden, cfg.hidden, rng);
  add_linear(ps, "actor.high.l1", cfg.hidden, 1, rng);
  add_linear(ps, "actor.low.l0", cfg.hidden, cfg.hidden, rng);
  add_linear(ps, "actor.low.l1", cfg.hidden, 1, rng);
  add_linear(ps, "critic.value.l0", 2 * cfg.hidden, cfg.hidden, rng);
  add_linear(ps, "critic.value.l1", cfg.hidden, 1, rng);
  return ps;
}

Encoding encode(const FeatureMatrices& f, const ParamStore& params, const PolicyConfig& cfg, const std::string& prefix) {
  if (f.x_v.cols() != kFeatureColumns || f.x_p.cols() != kFeatureColumns) {
    throw std::invalid_argument("encode: feature matrices must have 7 columns");
  }
  return {run_encoder(f.x_v, *f.a_v, params, prefix + ".enc_v", cfg),
          run_encoder(f.x_p, *f.a_p, params, prefix + ".enc_p", cfg)};
}

Tensor high_level_scores(const Encoding& enc, const ParamStore& params) {
  return mlp2(params, "actor.high", add(enc.z_v, graph_mean_pool(enc.z_p)));
}

Tensor low_level_scores(const Encoding& enc, const ParamStore& params, NodeId nv) {
  const Tensor context = add(graph_mean_pool(enc.z_v), gather_rows(enc.z_v, {nv}));
  return mlp2(params, "actor.low", add(enc.z_p, context));
}

std::vector<bool> low_level_mask(const SubstrateState& state, const VirtualNetworkRequest& vnr, NodeId nv,
                                 const EmbeddingSolution& partial) {
  std::vector<bool> masked(static_cast<size_t>(state.network().node_count()), true);
  for (NodeId p : feasible_hosts(state, vnr, nv, partial)) masked[static_cast<size_t>(p)] = false;
  return masked;
}

Tensor evaluate_value(const FeatureMatrices& f, const ParamStore& params, const PolicyConfig& cfg) {
  const auto enc = encode(f, params, cfg, "critic");
  return mlp2(params, "critic.value", concat_cols(graph_mean_pool(enc.z_v), graph_mean_pool(enc.z_p)));
}

size_t pick_index(const std::vector<double>& probs, SelectMode mode, Rng& rng) {
  double total = 0.0;
  for (double p : probs) total += p;
  if (probs.empty() || !(total > 0.0)) throw EmptySupportError("no probability mass");
  if (mode == SelectMode::greedy) {
    return static_cast<size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  size_t last = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last = i;
    if (u < acc) return i;
  }
  return last;  // rounding at the top end
}

Action select_action(const BilevelDistribution& dist, SelectMode mode, Rng& rng) {
  const auto nv = pick_index(dist.high, mode, rng);
  const auto np = pick_index(dist.low, mode, rng);
  return {static_cast<NodeId>(nv), static_cast<NodeId>(np), std::log(dist.high[nv]) + std::log(dist.low[np])};
}

double entropy_of(const std::vector<double>& probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double policy_entropy(const BilevelDistribution& dist) { return entropy_of(dist.high) + entropy_of(dist.low); }

PolicyModel PolicyModel::create(const PolicyConfig& cfg, ActionMode mode, std::uint64_t seed) {
  return {cfg, mode, init_policy_params(cfg, seed)};
}

namespace {

std::vector<double> to_vector(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

NodeId next_in_order(const std::vector<NodeId>& order, const std::vector<bool>& placed) {
  for (NodeId v : order) {
    if (!placed.at(static_cast<size_t>(v))) return v;
  }
  throw std::logic_error("all virtual nodes are placed");
}

}  // namespace

ActorDecision decide(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params, const FeatureMatrices& f,
                     const SubstrateState& state, const VirtualNetworkRequest& vnr, const EmbeddingSolution& partial,
                     const std::vector<NodeId>& fixed_order, SelectMode select, Rng& rng) {
  NoGradGuard no_grad;
  const auto enc = encode(f, params, cfg, "actor");
  ActorDecision d;
  if (mode.bidirectional()) {
    const Tensor scores = high_level_scores(enc, params);
    d.dist.high = to_vector(masked_softmax(scores, f.placed).value());
    d.nv = static_cast<NodeId>(pick_index(d.dist.high, select, rng));
    d.log_prob = std::log(d.dist.high[static_cast<size_t>(d.nv)]);
    d.entropy = entropy_of(d.dist.high);
  } else {
    d.nv = next_in_order(fixed_order, f.placed);
    d.dist.high.assign(f.placed.size(), 0.0);
    d.dist.high[static_cast<size_t>(d.nv)] = 1.0;
  }
  d.low_mask = low_level_mask(state, vnr, d.nv, partial);
  if (std::all_of(d.low_mask.begin(), d.low_mask.end(), [](bool m) { return m; })) return d;

  d.dist.low = to_vector(masked_softmax(low_level_scores(enc, params, d.nv), d.low_mask).value());
  const auto np = pick_index(d.dist.low, select, rng);
  d.np = static_cast<NodeId>(np);
  d.log_prob += std::log(d.dist.low[np]);
  d.entropy += entropy_of(d.dist.low);
  return d;
}

ActionEval evaluate_action(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params, const FeatureMatrices& f,
                           NodeId nv, std::optional<NodeId> np, const std::vector<bool>& low_mask) {
  const auto enc = encode(f, params, cfg, "actor");
  Tensor log_prob = Tensor::scalar(0.0);
  Tensor entropy = Tensor::scalar(0.0);
  if (mode.bidirectional()) {
    const Tensor scores = high_level_scores(enc, params);
    log_prob = element(masked_log_softmax(scores, f.placed), nv, 0);
    entropy = masked_entropy(scores, f.placed);
  }
  if (np) {
    const Tensor scores = low_level_scores(enc, params, nv);
    log_prob = add(log_prob, element(masked_log_softmax(scores, low_mask), *np, 0));
    entropy = add(entropy, masked_entropy(scores, low_mask));
  }
  return {log_prob, entropy};
}

void save_policy(const PolicyModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_params(model.params, dir / "params.txt");
  nlohmann::json manifest{{"format", "vne-policy v1"},
                          {"hidden", model.config.hidden},
                          {"gcn_layers", model.config.gcn_layers},
                          {"feature_scale", model.config.feature_scale},
                          {"action_mode", model.mode.to_string()}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

PolicyModel load_policy(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no policy manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "vne-policy v1") {
    throw std::runtime_error("unsupported policy manifest in " + dir.string());
  }
  PolicyConfig cfg;
  cfg.hidden = manifest.at("hidden").get<int>();
  cfg.gcn_layers = manifest.at("gcn_layers").get<int>();
  cfg.feature_scale = manifest.at("feature_scale").get<double>();
  auto model = PolicyModel::create(cfg, ActionMode::parse(manifest.at("action_mode").get<std::string>()), 0);
  load_params_into(model.params, dir / "params.txt");
  return model;
}

}  // namespace vne
