#include "vne/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vne/parallel.hpp"

namespace vne {

using nlohmann::json;

// ---------------------------------------------------------------- environment

StepResult env_step(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial, NodeId nv,
                    NodeId np) {
  if (nv < 0 || nv >= vnr.node_count() || partial.node_map.at(static_cast<size_t>(nv))) {
    throw ContractViolation(fmt::format("VNR {}: virtual node {} is not an open choice", vnr.id, nv));
  }
  const auto hosts = feasible_hosts(state, vnr, nv, partial);
  if (std::find(hosts.begin(), hosts.end(), np) == hosts.end()) {
    throw ContractViolation(fmt::format("VNR {}: host {} is masked for virtual node {}", vnr.id, np, nv));
  }
  const double unit = 1.0 / vnr.node_count();
  if (place_and_route(state, vnr, partial, nv, np) != StepOutcome::placed) {
    release(state, partial);
    return {-unit, true, false};
  }
  if (partial.all_nodes_placed()) {
    finalize(vnr, partial);
    return {r2c(vnr, partial), true, true};
  }
  return {unit, false, false};
}

StepResult env_reject(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial) {
  release(state, partial);
  return {-1.0 / vnr.node_count(), true, false};
}

std::vector<double> expected_rewards(int size, bool accepted, int steps, double r2c) {
  const double unit = 1.0 / size;
  std::vector<double> out(static_cast<size_t>(std::max(steps - 1, 0)), unit);
  out.push_back(accepted ? r2c : -unit);
  return out;
}

bool reward_schema_holds(const Trajectory& t) {
  const int n = static_cast<int>(t.steps.size());
  if (n == 0 || n > t.size) return false;
  if (t.accepted && n != t.size) return false;
  for (int i = 0; i < n; ++i) {
    if (t.steps[static_cast<size_t>(i)].done != (i == n - 1)) return false;
  }
  const auto want = expected_rewards(t.size, t.accepted, n, t.final_r2c);
  for (int i = 0; i < n; ++i) {
    if (t.steps[static_cast<size_t>(i)].reward != want[static_cast<size_t>(i)]) return false;
  }
  return true;
}

std::optional<EmbeddingSolution> run_episode(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params,
                                             SubstrateState& state, const VirtualNetworkRequest& vnr,
                                             SelectMode select, Rng& rng, Trajectory* record,
                                             std::shared_ptr<const Matrix> a_p) {
  auto partial = EmbeddingSolution::empty_for(vnr);
  std::vector<NodeId> order;
  if (!mode.bidirectional()) order = virtual_node_order(vnr, mode.order);
  auto a_v = std::make_shared<const Matrix>(normalized_adjacency(vnr.graph));
  if (!a_p) a_p = std::make_shared<const Matrix>(normalized_adjacency(state.network().graph));
  if (record) {
    *record = Trajectory{};
    record->vnr_id = vnr.id;
    record->size = vnr.node_count();
  }
  for (;;) {
    auto f = build_features(state, vnr, partial, cfg.feature_scale, a_v, a_p);
    auto d = decide(cfg, mode, params, f, state, vnr, partial, order, select, rng);
    double value = 0.0;
    if (record) {
      NoGradGuard no_grad;
      value = evaluate_value(f, params, cfg).item();
    }
    const StepResult r = d.np ? env_step(state, vnr, partial, d.nv, *d.np) : env_reject(state, vnr, partial);
    if (record) {
      StepRecord s;
      s.features = std::move(f);
      s.nv = d.nv;
      s.np = d.np;
      s.low_mask = std::move(d.low_mask);
      s.log_prob = d.log_prob;
      s.entropy = d.entropy;
      s.reward = r.reward;
      s.value = value;
      s.done = r.done;
      record->steps.push_back(std::move(s));
    }
    if (r.done) {
      if (record) {
        record->accepted = r.accepted;
        record->final_r2c = r.accepted ? r.reward : 0.0;
      }
      if (r.accepted) return partial;
      return std::nullopt;
    }
  }
}

// ---------------------------------------------------------------- policy set

PolicySet::PolicySet(PolicyConfig cfg, ActionMode mode, ParamStore meta)
    : config_(cfg), mode_(mode), meta_(std::move(meta)) {}

void PolicySet::set(int size, ParamStore params) { by_size_.insert_or_assign(size, std::move(params)); }

ParamStore& PolicySet::at(int size) {
  auto it = by_size_.find(size);
  if (it == by_size_.end()) throw std::out_of_range(fmt::format("no policy for size {}", size));
  return it->second;
}

const ParamStore& PolicySet::for_size(int size) const {
  auto it = by_size_.find(size);
  return it == by_size_.end() ? meta_ : it->second;
}

std::vector<int> PolicySet::sizes() const {
  std::vector<int> out;
  for (const auto& [s, p] : by_size_) out.push_back(s);
  return out;
}

PolicySet PolicySet::clone() const {
  PolicySet out(config_, mode_, meta_.clone());
  for (const auto& [s, p] : by_size_) out.set(s, p.clone());
  return out;
}

void PolicySet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_policy({config_, mode_, meta_.clone()}, dir / "meta");
  for (const auto& [s, p] : by_size_) save_policy({config_, mode_, p.clone()}, dir / fmt::format("size_{}", s));
  json manifest{{"format", "vne-policy-set v1"},
                {"hidden", config_.hidden},
                {"gcn_layers", config_.gcn_layers},
                {"feature_scale", config_.feature_scale},
                {"action_mode", mode_.to_string()},
                {"sizes", sizes()}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

PolicySet PolicySet::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest in " + dir.string());
  const auto manifest = json::parse(in);
  const auto format = manifest.value("format", "");
  if (format == "vne-policy v1") {
    auto model = load_policy(dir);
    return PolicySet(model.config, model.mode, std::move(model.params));
  }
  if (format != "vne-policy-set v1") throw std::runtime_error("unsupported manifest in " + dir.string());
  auto meta = load_policy(dir / "meta");
  PolicySet set(meta.config, meta.mode, std::move(meta.params));
  for (int s : manifest.at("sizes").get<std::vector<int>>()) {
    auto p = load_policy(dir / fmt::format("size_{}", s));
    if (!(p.config == set.config_) || !(p.mode == set.mode_)) {
      throw std::runtime_error(fmt::format("size_{} does not match the set's architecture", s));
    }
    set.set(s, std::move(p.params));
  }
  return set;
}

// -------------------------------------------------------------- policy solver

PolicySolver::PolicySolver(const PolicyConfig& cfg, ActionMode mode, Lookup params_for, SelectMode select,
                           std::uint64_t seed, bool record)
    : cfg_(cfg), mode_(mode), params_for_(std::move(params_for)), select_(select), rng_(seed), record_(record) {}

PolicySolver::PolicySolver(const PolicySet& set, SelectMode select, std::uint64_t seed, bool record)
    : PolicySolver(set.config(), set.mode(), [&set](int size) -> const ParamStore& { return set.for_size(size); },
                   select, seed, record) {}

std::optional<EmbeddingSolution> PolicySolver::solve(SubstrateState& state, const VirtualNetworkRequest& vnr) {
  if (cached_for_ != &state.network()) {
    cached_for_ = &state.network();
    a_p_ = std::make_shared<const Matrix>(normalized_adjacency(state.network().graph));
  }
  const ParamStore& params = params_for_(vnr.node_count());
  if (!record_) return run_episode(cfg_, mode_, params, state, vnr, select_, rng_, nullptr, a_p_);
  Trajectory t;
  auto out = run_episode(cfg_, mode_, params, state, vnr, select_, rng_, &t, a_p_);
  trajectories_.push_back(std::move(t));
  return out;
}

std::vector<Trajectory> PolicySolver::take_trajectories() { return std::exchange(trajectories_, {}); }

std::vector<Trajectory> collect_rollouts(const PolicyConfig& cfg, ActionMode mode, const PolicySolver::Lookup& params_for,
                                         const PhysicalNetwork& pn, const VnrConfig& vnr_cfg, int budget,
                                         std::uint64_t seed) {
  if (budget <= 0) return {};
  VnrConfig stream_cfg = vnr_cfg;
  stream_cfg.count = budget;
  const auto vnrs = sample_vnr_stream(stream_cfg, derive_seed(seed, {0}));
  PolicySolver solver(cfg, mode, params_for, SelectMode::sample, derive_seed(seed, {1}), true);
  run_simulation(pn, vnrs, solver);
  return solver.take_trajectories();
}

// ------------------------------------------------------------------------ PPO

void compute_advantages(std::vector<Trajectory>& batch, double gamma, double gae_lambda) {
  for (auto& t : batch) {
    double next_value = 0.0;
    double next_adv = 0.0;
    for (auto it = t.steps.rbegin(); it != t.steps.rend(); ++it) {
      const double live = it->done ? 0.0 : 1.0;
      const double delta = it->reward + gamma * next_value * live - it->value;
      it->advantage = delta + gamma * gae_lambda * live * next_adv;
      it->ret = it->advantage + it->value;
      next_value = it->value;
      next_adv = it->advantage;
    }
  }
}

std::vector<double> normalized_advantages(const std::vector<const StepRecord*>& samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto* s : samples) out.push_back(s->advantage);
  if (out.empty()) return out;
  const double n = static_cast<double>(out.size());
  const double mu = std::accumulate(out.begin(), out.end(), 0.0) / n;
  double var = 0.0;
  for (double a : out) var += (a - mu) * (a - mu);
  const double sd = std::sqrt(var / n);
  for (double& a : out) a = (a - mu) / (sd + 1e-8);
  return out;
}

std::vector<const StepRecord*> flatten_steps(const std::vector<const Trajectory*>& episodes) {
  std::vector<const StepRecord*> out;
  for (const auto* t : episodes) {
    for (const auto& s : t->steps) out.push_back(&s);
  }
  return out;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

LossParts ppo_sample_loss(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params, const StepRecord& s,
                          double advantage, const PpoConfig& ppo) {
  const auto ev = evaluate_action(cfg, mode, params, s.features, s.nv, s.np, s.low_mask);
  const Tensor ratio = exp(add_scalar(ev.log_prob, -s.log_prob));
  const Tensor surrogate =
      minimum(scale(ratio, advantage), scale(clamp(ratio, 1.0 - ppo.clip, 1.0 + ppo.clip), advantage));
  const Tensor err = add_scalar(evaluate_value(s.features, params, cfg), -s.ret);
  const Tensor value_loss = mul(err, err);
  Tensor loss = add(scale(surrogate, -1.0), scale(value_loss, ppo.value_coef));
  if (ppo.entropy_coef != 0.0) loss = sub(loss, scale(ev.entropy, ppo.entropy_coef));
  return {loss, ratio.item(), surrogate.item(), value_loss.item(), ev.entropy.item()};
}

namespace {

void restore(ParamStore& params, const ParamStore& snapshot) {
  params.assign_flat(snapshot.flatten());
  params.zero_grad();
}

}  // namespace

PpoStats ppo_update(const PolicyConfig& cfg, ActionMode mode, ParamStore& params, Adam& opt,
                    const std::vector<const StepRecord*>& samples, const PpoConfig& ppo, Rng& rng) {
  if (samples.empty()) throw std::invalid_argument("ppo_update on an empty batch");
  PpoStats stats;
  stats.samples = static_cast<int>(samples.size());
  const auto adv = normalized_advantages(samples);
  const auto snapshot = params.clone();
  std::vector<size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t mb = static_cast<size_t>(std::max(ppo.minibatch, 1));

  for (int epoch = 0; epoch < ppo.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double surr = 0.0, vloss = 0.0, ent = 0.0;
    for (size_t start = 0; start < idx.size(); start += mb) {
      const size_t stop = std::min(start + mb, idx.size());
      params.zero_grad();
      Tensor total = Tensor::scalar(0.0);
      double ratio_sum = 0.0;
      for (size_t k = start; k < stop; ++k) {
        const auto parts = ppo_sample_loss(cfg, mode, params, *samples[idx[k]], adv[idx[k]], ppo);
        total = add(total, parts.loss);
        ratio_sum += parts.ratio;
        surr += parts.surrogate;
        vloss += parts.value_loss;
        ent += parts.entropy;
      }
      const Tensor loss = scale(total, 1.0 / static_cast<double>(stop - start));
      if (epoch == 0 && start == 0) stats.first_pass_mean_ratio = ratio_sum / static_cast<double>(stop - start);
      if (!std::isfinite(loss.item())) {
        restore(params, snapshot);
        stats.aborted = true;
        stats.diagnostics = fmt::format("non-finite loss at epoch {}, sample offset {}", epoch, start);
        return stats;
      }
      backward(loss);
      try {
        opt.step(params);
      } catch (const NonFiniteError& e) {
        restore(params, snapshot);
        stats.aborted = true;
        stats.diagnostics = fmt::format("epoch {}: {}", epoch, e.what());
        return stats;
      }
      ++stats.gradient_steps;
    }
    const double n = static_cast<double>(samples.size());
    stats.surrogate = surr / n;
    stats.value_loss = vloss / n;
    stats.entropy = ent / n;
  }
  params.zero_grad();
  return stats;
}

LossGradient ppo_loss_gradient(const PolicyConfig& cfg, ActionMode mode, ParamStore& params,
                               const std::vector<const StepRecord*>& samples, const PpoConfig& ppo) {
  if (samples.empty()) throw std::invalid_argument("ppo_loss_gradient on an empty batch");
  const auto adv = normalized_advantages(samples);
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  const size_t mb = static_cast<size_t>(std::max(ppo.minibatch, 1));
  LossGradient out;
  params.zero_grad();
  for (size_t start = 0; start < samples.size(); start += mb) {
    const size_t stop = std::min(start + mb, samples.size());
    Tensor total = Tensor::scalar(0.0);
    for (size_t k = start; k < stop; ++k) {
      const auto parts = ppo_sample_loss(cfg, mode, params, *samples[k], adv[k], ppo);
      total = add(total, parts.loss);
      out.entropy += parts.entropy * inv_n;
    }
    const Tensor loss = scale(total, inv_n);
    out.loss += loss.item();
    backward(loss);
  }
  out.grads = params.gradients();
  params.zero_grad();
  return out;
}

// ----------------------------------------------------------------------- meta

ParamStore inner_loop_adapt(const PolicyConfig& cfg, ActionMode mode, const ParamStore& phi,
                            const std::vector<const StepRecord*>& support, double alpha, const PpoConfig& ppo, Rng& rng,
                            PpoStats* stats) {
  auto theta = phi.clone();
  Adam opt(AdamConfig{alpha});
  auto s = ppo_update(cfg, mode, theta, opt, support, ppo, rng);
  if (stats) *stats = std::move(s);
  return theta;
}

void MetaOptimizer::apply(ParamStore& phi, const GradMap& grads) {
  if (kind_ == Kind::adam) {
    adam_.step(phi, grads);
  } else {
    sgd_step(phi, grads, beta_);
  }
}

GradMap average_gradients(const std::vector<GradMap>& task_grads) {
  if (task_grads.empty()) throw std::invalid_argument("no task gradients to average");
  GradMap out = task_grads.front();
  for (size_t i = 1; i < task_grads.size(); ++i) {
    for (const auto& [name, g] : task_grads[i]) {
      auto it = out.find(name);
      if (it == out.end()) {
        out.emplace(name, g);
      } else {
        it->second += g;
      }
    }
  }
  for (auto& [name, g] : out) g /= static_cast<double>(task_grads.size());
  return out;
}

void meta_update(ParamStore& phi, const std::vector<GradMap>& task_grads, MetaOptimizer& opt) {
  opt.apply(phi, average_gradients(task_grads));
}

// ----------------------------------------------------------------- curriculum

void record_entropy(CurriculumState& cur, int task, double entropy) {
  auto [it, fresh] = cur.entropy_ema.try_emplace(task, entropy);
  if (!fresh) it->second = cur.ema_factor * it->second + (1.0 - cur.ema_factor) * entropy;
}

CurriculumState curriculum_step(const CurriculumState& cur) {
  CurriculumState next = cur;
  const int k = cur.tasks.back();
  auto it = cur.entropy_ema.find(k);
  if (it != cur.entropy_ema.end() && it->second < cur.delta && k < cur.task_count) next.tasks.push_back(k + 1);
  return next;
}

// ------------------------------------------------------------------- training

std::string to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::meta: return "meta";
    case TrainingMode::single: return "single";
    case TrainingMode::multi: return "multi";
  }
  return "?";
}

TrainingMode parse_training_mode(const std::string& text) {
  if (text == "meta") return TrainingMode::meta;
  if (text == "single") return TrainingMode::single;
  if (text == "multi") return TrainingMode::multi;
  throw std::invalid_argument("unknown training mode '" + text + "'");
}

std::vector<std::string> validate(const TrainerConfig& c) {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  need(c.policy.hidden >= 1, "policy.hidden must be >= 1");
  need(c.policy.gcn_layers >= 0, "policy.gcn_layers must be >= 0");
  need(c.policy.feature_scale > 0, "policy.feature_scale must be > 0");
  need(c.meta_simulations >= 0, "meta_simulations must be >= 0");
  need(c.fine_tune_simulations >= 0, "fine_tune_simulations must be >= 0");
  need(c.vnrs_per_simulation >= 1, "vnrs_per_simulation must be >= 1");
  need(c.episodes_per_iteration >= 1, "episodes_per_iteration must be >= 1");
  need(c.ppo.clip > 0 && c.ppo.clip < 1, "ppo.clip must be in (0, 1)");
  need(c.ppo.epochs >= 1, "ppo.epochs must be >= 1");
  need(c.ppo.minibatch >= 1, "ppo.minibatch must be >= 1");
  need(c.ppo.gamma >= 0 && c.ppo.gamma <= 1, "ppo.gamma must be in [0, 1]");
  need(c.ppo.gae_lambda >= 0 && c.ppo.gae_lambda <= 1, "ppo.gae_lambda must be in [0, 1]");
  need(c.ppo.value_coef >= 0, "ppo.value_coef must be >= 0");
  need(c.ppo.entropy_coef >= 0, "ppo.entropy_coef must be >= 0");
  need(c.alpha >= 0, "alpha must be >= 0");
  need(c.beta >= 0, "beta must be >= 0");
  need(c.delta > 0, "delta must be > 0");
  need(c.entropy_ema >= 0 && c.entropy_ema < 1, "entropy_ema must be in [0, 1)");
  for (int s : c.fine_tune_sizes) need(s >= 1, fmt::format("fine_tune_sizes: size {} must be >= 1", s));
  need(!(c.training_mode != TrainingMode::meta && c.curriculum),
       fmt::format("training_mode {} cannot be combined with curriculum", to_string(c.training_mode)));
  return errs;
}

ParamStore initial_meta_params(const TrainerConfig& cfg) {
  return init_policy_params(cfg.policy, derive_seed(cfg.seed, {0}));
}

namespace {

json task_list(const std::vector<int>& tasks) { return json(tasks); }

double mean_reward(const std::vector<const Trajectory*>& eps) {
  double total = 0.0;
  for (const auto* t : eps) {
    for (const auto& s : t->steps) total += s.reward;
  }
  return eps.empty() ? 0.0 : total / static_cast<double>(eps.size());
}

double acceptance(const std::vector<const Trajectory*>& eps) {
  const auto n = std::count_if(eps.begin(), eps.end(), [](const Trajectory* t) { return t->accepted; });
  return eps.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(eps.size());
}

void check_rewards(const std::vector<Trajectory>& batch) {
  for (const auto& t : batch) {
    if (!reward_schema_holds(t)) {
      throw std::logic_error(fmt::format("VNR {}: reward sequence breaks the reward schema", t.vnr_id));
    }
  }
}

void log_episodes(std::ostream* log, const std::vector<Trajectory>& batch, const json& where) {
  if (!log) return;
  for (const auto& t : batch) {
    std::vector<double> rewards;
    for (const auto& s : t.steps) rewards.push_back(s.reward);
    json line = where;
    line["type"] = "episode";
    line["vnr_id"] = t.vnr_id;
    line["size"] = t.size;
    line["accepted"] = t.accepted;
    line["final_r2c"] = t.final_r2c;
    line["rewards"] = rewards;
    *log << line.dump() << '\n';
  }
}

struct Trainer {
  const TrainerConfig& cfg;
  const PhysicalNetwork& pn;
  const VnrConfig& vnr_cfg;
  std::ostream* log;
  int task_count;
  ParamStore phi;
  std::map<int, ParamStore> per_size;  // multi mode
  std::map<int, Adam> per_size_opt;
  Adam single_opt;
  MetaOptimizer meta_opt;
  CurriculumState cur;
  int iteration = 0;
  int episodes = 0;

  Trainer(const TrainerConfig& c, const PhysicalNetwork& p, const VnrConfig& v, std::ostream* l)
      : cfg(c),
        pn(p),
        vnr_cfg(v),
        log(l),
        task_count(v.size.hi - v.size.lo + 1),
        phi(initial_meta_params(c)),
        single_opt(AdamConfig{c.alpha}),
        meta_opt(c.meta_optimizer, c.beta) {
    cur.task_count = task_count;
    cur.delta = c.delta;
    cur.ema_factor = c.entropy_ema;
    if (!c.curriculum) {
      cur.tasks.clear();
      for (int k = 1; k <= task_count; ++k) cur.tasks.push_back(k);
    }
    if (c.training_mode == TrainingMode::multi) {
      for (int k = 1; k <= task_count; ++k) {
        per_size.emplace(size_of(k), init_policy_params(c.policy, derive_seed(c.seed, {0, static_cast<std::uint64_t>(k)})));
        per_size_opt.emplace(size_of(k), Adam(AdamConfig{c.alpha}));
      }
    }
  }

  int size_of(int task) const { return vnr_cfg.size.lo + task - 1; }
  int task_of(int size) const { return size - vnr_cfg.size.lo + 1; }

  const ParamStore& lookup(int size) const {
    if (cfg.training_mode == TrainingMode::multi) {
      auto it = per_size.find(size);
      if (it != per_size.end()) return it->second;
    }
    return phi;
  }

  void emit(const json& line) {
    if (log) *log << line.dump() << '\n';
  }

  json task_line(int sim, int task, const std::vector<const Trajectory*>& eps, const PpoStats& st) {
    return json{{"type", "task_update"}, {"iteration", iteration},    {"simulation", sim},
                {"task", task},          {"size", size_of(task)},     {"episodes", eps.size()},
                {"mean_reward", mean_reward(eps)}, {"acceptance", acceptance(eps)}, {"entropy", st.entropy},
                {"surrogate", st.surrogate}, {"value_loss", st.value_loss}, {"first_pass_ratio", st.first_pass_mean_ratio},
                {"aborted", st.aborted}, {"tasks", task_list(cur.tasks)}};
  }

  void update(int sim, std::vector<Trajectory>& batch) {
    check_rewards(batch);
    log_episodes(cfg.log_episodes ? log : nullptr, batch, json{{"iteration", iteration}, {"simulation", sim}});
    episodes += static_cast<int>(batch.size());
    compute_advantages(batch, cfg.ppo.gamma, cfg.ppo.gae_lambda);
    std::map<int, std::vector<const Trajectory*>> by_task;
    for (const auto& t : batch) by_task[task_of(t.size)].push_back(&t);
    json distribution = json::object();
    for (const auto& [k, eps] : by_task) distribution[std::to_string(size_of(k))] = eps.size();

    switch (cfg.training_mode) {
      case TrainingMode::single: update_single(sim, batch); break;
      case TrainingMode::multi: update_multi(sim, by_task); break;
      case TrainingMode::meta: update_meta(sim, by_task); break;
    }

    const auto before = cur.tasks;
    const int k = before.back();
    const auto ema = cur.entropy_ema.find(k);
    if (cfg.curriculum) cur = curriculum_step(cur);
    emit(json{{"type", "iteration"},
              {"iteration", iteration},
              {"simulation", sim},
              {"episodes", batch.size()},
              {"acceptance", acceptance([&] {
                 std::vector<const Trajectory*> all;
                 for (const auto& t : batch) all.push_back(&t);
                 return all;
               }())},
              {"curriculum_before", task_list(before)},
              {"curriculum_after", task_list(cur.tasks)},
              {"max_task", k},
              {"max_task_entropy_ema", ema == cur.entropy_ema.end() ? json(nullptr) : json(ema->second)},
              {"delta", cur.delta},
              {"task_distribution", distribution}});
    ++iteration;
  }

  void update_single(int sim, const std::vector<Trajectory>& batch) {
    std::vector<const Trajectory*> eps;
    for (const auto& t : batch) eps.push_back(&t);
    Rng rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(iteration)}));
    const auto st = ppo_update(cfg.policy, cfg.action_mode, phi, single_opt, flatten_steps(eps), cfg.ppo, rng);
    emit(task_line(sim, 0, eps, st));
  }

  void update_multi(int sim, const std::map<int, std::vector<const Trajectory*>>& by_task) {
    for (const auto& [k, eps] : by_task) {
      Rng rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(k)}));
      const auto st = ppo_update(cfg.policy, cfg.action_mode, per_size.at(size_of(k)), per_size_opt.at(size_of(k)),
                                 flatten_steps(eps), cfg.ppo, rng);
      record_entropy(cur, k, st.entropy);
      emit(task_line(sim, k, eps, st));
    }
  }

  void update_meta(int sim, const std::map<int, std::vector<const Trajectory*>>& by_task) {
    std::vector<GradMap> grads;
    for (int k : cur.tasks) {
      auto it = by_task.find(k);
      if (it == by_task.end()) continue;
      const auto& eps = it->second;
      std::vector<const Trajectory*> support, query;
      for (size_t i = 0; i < eps.size(); ++i) (i % 2 == 0 ? support : query).push_back(eps[i]);
      if (query.empty()) query = support;
      Rng rng(derive_seed(cfg.seed, {3, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(k)}));
      PpoStats st;
      auto theta = inner_loop_adapt(cfg.policy, cfg.action_mode, phi, flatten_steps(support), cfg.alpha, cfg.ppo, rng, &st);
      auto lg = ppo_loss_gradient(cfg.policy, cfg.action_mode, theta, flatten_steps(query), cfg.ppo);
      record_entropy(cur, k, lg.entropy);
      json line = task_line(sim, k, eps, st);
      line["support"] = support.size();
      line["query"] = query.size();
      line["query_loss"] = lg.loss;
      line["query_entropy"] = lg.entropy;
      line["entropy_ema"] = cur.entropy_ema.at(k);
      emit(line);
      grads.push_back(std::move(lg.grads));
    }
    if (!grads.empty()) meta_update(phi, grads, meta_opt);
  }

  void run() {
    for (int sim = 0; sim < cfg.meta_simulations; ++sim) {
      VnrConfig stream_cfg = vnr_cfg;
      stream_cfg.count = cfg.vnrs_per_simulation;
      const auto vnrs = sample_vnr_stream(stream_cfg, derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(sim)}));
      PolicySolver solver(cfg.policy, cfg.action_mode, [this](int s) -> const ParamStore& { return lookup(s); },
                          SelectMode::sample, derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(sim)}), true);
      Simulator simulator(pn, vnrs, solver);
      while (!simulator.done()) {
        simulator.run_arrivals(cfg.episodes_per_iteration);
        auto batch = solver.take_trajectories();
        if (!batch.empty()) update(sim, batch);
      }
      simulator.finish();
    }
  }
};

}  // namespace

TrainingResult train(const TrainerConfig& cfg, const PhysicalNetwork& pn, const VnrConfig& vnr_cfg, std::ostream* log,
                     int jobs) {
  const auto errs = validate(cfg);
  if (!errs.empty()) {
    std::string msg = "invalid trainer config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw std::invalid_argument(msg);
  }
  if (const auto probs = vnr_cfg.problems(); !probs.empty()) {
    throw std::invalid_argument("invalid VNR config: " + probs.front());
  }
  Trainer t(cfg, pn, vnr_cfg, log);
  t.run();

  TrainingResult out{PolicySet(cfg.policy, cfg.action_mode, t.phi.clone()), t.cur, t.iteration, t.episodes};
  if (cfg.training_mode == TrainingMode::multi) {
    for (auto& [s, p] : t.per_size) out.policies.set(s, std::move(p));
  } else if (cfg.training_mode == TrainingMode::meta && cfg.fine_tune_simulations > 0) {
    std::vector<int> sizes = cfg.fine_tune_sizes;
    if (sizes.empty()) {
      for (int s = vnr_cfg.size.lo; s <= vnr_cfg.size.hi; ++s) sizes.push_back(s);
    }
    FineTuneBudget budget{cfg.fine_tune_simulations, cfg.vnrs_per_simulation, cfg.episodes_per_iteration};
    auto ft = fine_tune(out.policies, pn, vnr_cfg, sizes, budget, cfg.alpha, cfg.ppo, derive_seed(cfg.seed, {4}), log,
                        jobs);
    out.policies = std::move(ft.policies);
  }
  return out;
}

FineTuneResult fine_tune(const PolicySet& start, const PhysicalNetwork& pn, const VnrConfig& vnr_cfg,
                         const std::vector<int>& sizes, const FineTuneBudget& budget, double alpha,
                         const PpoConfig& ppo, std::uint64_t seed, std::ostream* log, int jobs) {
  struct Slot {
    int size;
    ParamStore theta;
    std::vector<bool> accepted;
    std::ostringstream log;
  };
  std::vector<Slot> slots;
  for (int s : sizes) {
    if (s < 1) throw std::invalid_argument(fmt::format("fine-tune size {} must be >= 1", s));
    slots.push_back(Slot{s, start.for_size(s).clone(), {}, {}});
  }
  const auto cfg = start.config();
  const auto mode = start.mode();

  auto errors = parallel_for(static_cast<int>(slots.size()), jobs, [&](int i) {
    auto& slot = slots[static_cast<size_t>(i)];
    const auto s = static_cast<std::uint64_t>(slot.size);
    Adam opt(AdamConfig{alpha});
    VnrConfig stream_cfg = vnr_cfg;
    stream_cfg.size = {slot.size, slot.size};
    stream_cfg.count = budget.vnrs_per_simulation;
    int iteration = 0;
    for (int sim = 0; sim < budget.simulations; ++sim) {
      const auto u = static_cast<std::uint64_t>(sim);
      const auto vnrs = sample_vnr_stream(stream_cfg, derive_seed(seed, {s, 0, u}));
      PolicySolver solver(cfg, mode, [&](int) -> const ParamStore& { return slot.theta; }, SelectMode::sample,
                          derive_seed(seed, {s, 1, u}), true);
      Simulator simulator(pn, vnrs, solver);
      while (!simulator.done()) {
        simulator.run_arrivals(budget.episodes_per_iteration);
        auto batch = solver.take_trajectories();
        if (batch.empty()) continue;
        check_rewards(batch);
        compute_advantages(batch, ppo.gamma, ppo.gae_lambda);
        std::vector<const Trajectory*> eps;
        for (const auto& t : batch) {
          eps.push_back(&t);
          slot.accepted.push_back(t.accepted);
        }
        Rng rng(derive_seed(seed, {s, 2, static_cast<std::uint64_t>(iteration)}));
        const auto st = ppo_update(cfg, mode, slot.theta, opt, flatten_steps(eps), ppo, rng);
        slot.log << json{{"type", "fine_tune"},     {"size", slot.size},
                         {"iteration", iteration},  {"simulation", sim},
                         {"episodes", eps.size()},  {"mean_reward", mean_reward(eps)},
                         {"acceptance", acceptance(eps)}, {"entropy", st.entropy},
                         {"surrogate", st.surrogate}, {"value_loss", st.value_loss},
                         {"first_pass_ratio", st.first_pass_mean_ratio}, {"aborted", st.aborted}}
                        .dump()
                 << '\n';
        ++iteration;
      }
      simulator.finish();
    }
  });
  rethrow_first(errors);

  FineTuneResult out{start.clone(), {}};
  for (auto& slot : slots) {
    if (log) *log << slot.log.str();
    out.acceptance[slot.size] = std::move(slot.accepted);
    out.policies.set(slot.size, std::move(slot.theta));
  }
  return out;
}

}  // namespace vne
