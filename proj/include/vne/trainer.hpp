#ifndef VNE_TRAINER_HPP_
#define VNE_TRAINER_HPP_

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vne/policy.hpp"
#include "vne/simkernel.hpp"

namespace vne {

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------- environment

struct StepResult {
  double reward = 0.0;
  bool done = false;
  bool accepted = false;
};

// Places nv on np, then routes every link of nv whose other end is placed.
// Intermediate success: +1/n. Any failure: -1/n, rollback, done. Last node
// placed and routed: reward R2C, done, reservations kept.
StepResult env_step(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial, NodeId nv,
                    NodeId np);
// Rejection when the chosen virtual node has no feasible host.
StepResult env_reject(SubstrateState& state, const VirtualNetworkRequest& vnr, EmbeddingSolution& partial);

struct StepRecord {
  FeatureMatrices features;
  NodeId nv = 0;
  std::optional<NodeId> np;
  std::vector<bool> low_mask;
  double log_prob = 0.0;  // behaviour policy
  double entropy = 0.0;
  double reward = 0.0;
  double value = 0.0;
  bool done = false;
  double advantage = 0.0;  // raw GAE, filled by compute_advantages
  double ret = 0.0;
};

struct Trajectory {
  int vnr_id = 0;
  int size = 0;
  std::vector<StepRecord> steps;
  bool accepted = false;
  double final_r2c = 0.0;
};

// Closed-form rewards for an episode of `steps` steps on a size-n VNR.
std::vector<double> expected_rewards(int size, bool accepted, int steps, double r2c);
bool reward_schema_holds(const Trajectory& t);

// Greedy or sampled episode. Records the trajectory (with critic values)
// when `record` is non-null. a_p may carry the substrate's cached adjacency.
std::optional<EmbeddingSolution> run_episode(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params,
                                             SubstrateState& state, const VirtualNetworkRequest& vnr,
                                             SelectMode select, Rng& rng, Trajectory* record = nullptr,
                                             std::shared_ptr<const Matrix> a_p = nullptr);

// Per-size parameter sets with the meta-policy as fallback.
class PolicySet {
 public:
  PolicySet(PolicyConfig cfg, ActionMode mode, ParamStore meta);
  PolicySet(PolicySet&&) = default;
  PolicySet& operator=(PolicySet&&) = default;

  const PolicyConfig& config() const { return config_; }
  ActionMode mode() const { return mode_; }
  const ParamStore& meta() const { return meta_; }
  ParamStore& meta() { return meta_; }
  void set(int size, ParamStore params);
  bool has(int size) const { return by_size_.count(size) != 0; }
  ParamStore& at(int size);
  // Dispatch: the size-specific parameters, or the meta-policy.
  const ParamStore& for_size(int size) const;
  std::vector<int> sizes() const;
  PolicySet clone() const;

  // dir/manifest.json, dir/meta/, dir/size_<n>/
  void save(const std::filesystem::path& dir) const;
  // Accepts a policy-set directory or a single policy directory.
  static PolicySet load(const std::filesystem::path& dir);

 private:
  PolicyConfig config_;
  ActionMode mode_;
  ParamStore meta_;
  std::map<int, ParamStore> by_size_;
};

// Runs one MDP episode per arriving VNR through a parameter lookup.
class PolicySolver : public Solver {
 public:
  using Lookup = std::function<const ParamStore&(int size)>;
  PolicySolver(const PolicyConfig& cfg, ActionMode mode, Lookup params_for, SelectMode select, std::uint64_t seed,
               bool record);
  PolicySolver(const PolicySet& set, SelectMode select, std::uint64_t seed, bool record = false);

  std::optional<EmbeddingSolution> solve(SubstrateState& state, const VirtualNetworkRequest& vnr) override;
  std::string name() const override { return "flagvne"; }
  std::vector<Trajectory> take_trajectories();

 private:
  PolicyConfig cfg_;
  ActionMode mode_;
  Lookup params_for_;
  SelectMode select_;
  Rng rng_;
  bool record_;
  std::vector<Trajectory> trajectories_;
  const PhysicalNetwork* cached_for_ = nullptr;
  std::shared_ptr<const Matrix> a_p_;
};

// Simulates a fresh stream of `budget` VNRs from `vnr_cfg` with the policy
// sampling its actions; one trajectory per arrival, in arrival order.
std::vector<Trajectory> collect_rollouts(const PolicyConfig& cfg, ActionMode mode, const PolicySolver::Lookup& params_for,
                                         const PhysicalNetwork& pn, const VnrConfig& vnr_cfg, int budget,
                                         std::uint64_t seed);

// ------------------------------------------------------------------------ PPO

struct PpoConfig {
  double clip = 0.2;
  int epochs = 10;
  int minibatch = 128;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
};

// Raw GAE advantages and return targets, per trajectory.
void compute_advantages(std::vector<Trajectory>& batch, double gamma, double gae_lambda);
// Zero mean, unit variance over the given samples.
std::vector<double> normalized_advantages(const std::vector<const StepRecord*>& samples);
std::vector<const StepRecord*> flatten_steps(const std::vector<const Trajectory*>& episodes);

// min(r*A, clip(r, 1-eps, 1+eps)*A)
double clipped_surrogate(double ratio, double advantage, double eps);

struct LossParts {
  Tensor loss;  // -surrogate + value_coef*value_loss - entropy_coef*entropy
  double ratio = 1.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};
LossParts ppo_sample_loss(const PolicyConfig& cfg, ActionMode mode, const ParamStore& params, const StepRecord& s,
                          double advantage, const PpoConfig& ppo);

struct PpoStats {
  int samples = 0;
  int gradient_steps = 0;
  // Mean ratio over the first minibatch, before any step.
  double first_pass_mean_ratio = 1.0;
  double surrogate = 0.0;   // last epoch means
  double value_loss = 0.0;
  double entropy = 0.0;
  bool aborted = false;
  std::string diagnostics;
};

// Clipped-surrogate PPO over `samples` (advantages normalized over them).
// A non-finite loss restores the parameters and reports aborted.
PpoStats ppo_update(const PolicyConfig& cfg, ActionMode mode, ParamStore& params, Adam& opt,
                    const std::vector<const StepRecord*>& samples, const PpoConfig& ppo, Rng& rng);

struct LossGradient {
  GradMap grads;  // mean over samples
  double loss = 0.0;
  double entropy = 0.0;
};
LossGradient ppo_loss_gradient(const PolicyConfig& cfg, ActionMode mode, ParamStore& params,
                               const std::vector<const StepRecord*>& samples, const PpoConfig& ppo);

// ----------------------------------------------------------------------- meta

// theta = copy of phi, then one ppo_update with learning rate alpha.
ParamStore inner_loop_adapt(const PolicyConfig& cfg, ActionMode mode, const ParamStore& phi,
                            const std::vector<const StepRecord*>& support, double alpha, const PpoConfig& ppo, Rng& rng,
                            PpoStats* stats = nullptr);

// First-order outer step: phi moves along the mean of the task gradients.
class MetaOptimizer {
 public:
  enum class Kind { adam, sgd };
  MetaOptimizer(Kind kind, double beta) : kind_(kind), beta_(beta), adam_(AdamConfig{beta}) {}
  void apply(ParamStore& phi, const GradMap& grads);
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
  double beta_;
  Adam adam_;
};
GradMap average_gradients(const std::vector<GradMap>& task_grads);
void meta_update(ParamStore& phi, const std::vector<GradMap>& task_grads, MetaOptimizer& opt);

// ----------------------------------------------------------------- curriculum

struct CurriculumState {
  std::vector<int> tasks{1};  // contiguous prefix of task ids
  int task_count = 1;         // |M|
  double delta = 2.0;
  double ema_factor = 0.9;
  std::map<int, double> entropy_ema;
};

// The first observation seeds the average.
void record_entropy(CurriculumState& cur, int task, double entropy);
CurriculumState curriculum_step(const CurriculumState& cur);

// ------------------------------------------------------------------- training

enum class TrainingMode { meta, single, multi };
std::string to_string(TrainingMode m);
TrainingMode parse_training_mode(const std::string& text);

struct TrainerConfig {
  PolicyConfig policy;
  ActionMode action_mode;
  TrainingMode training_mode = TrainingMode::meta;
  bool curriculum = true;
  int meta_simulations = 20;
  int fine_tune_simulations = 10;
  int vnrs_per_simulation = 1000;
  int episodes_per_iteration = 100;
  // Adds an "episode" line with the reward sequence of every episode.
  bool log_episodes = false;
  PpoConfig ppo;
  double alpha = 1e-3;
  double beta = 1e-3;
  MetaOptimizer::Kind meta_optimizer = MetaOptimizer::Kind::adam;
  double delta = 2.0;
  double entropy_ema = 0.9;
  std::vector<int> fine_tune_sizes;  // empty: the training size range
  std::uint64_t seed = 1;
};

std::vector<std::string> validate(const TrainerConfig& cfg);
// Starting point of phi for a training run.
ParamStore initial_meta_params(const TrainerConfig& cfg);

struct TrainingResult {
  PolicySet policies;
  CurriculumState curriculum;
  int iterations = 0;
  int episodes = 0;
};

// Writes JSON lines to `log` when given. Sizes of the VNR configuration
// define the tasks: task i <-> size = size.lo + i - 1.
TrainingResult train(const TrainerConfig& cfg, const PhysicalNetwork& pn, const VnrConfig& vnr_cfg,
                     std::ostream* log = nullptr, int jobs = 1);

struct FineTuneBudget {
  int simulations = 10;
  int vnrs_per_simulation = 1000;
  int episodes_per_iteration = 100;
};

struct FineTuneResult {
  PolicySet policies;
  std::map<int, std::vector<bool>> acceptance;  // per size, per episode
};

// Each size gets a copy of its starting parameters (the set's entry for the
// size if present, else the meta-policy), trained on rollouts of that size
// only. Sizes are independent and run on up to `jobs` threads.
FineTuneResult fine_tune(const PolicySet& start, const PhysicalNetwork& pn, const VnrConfig& vnr_cfg,
                         const std::vector<int>& sizes, const FineTuneBudget& budget, double alpha,
                         const PpoConfig& ppo, std::uint64_t seed, std::ostream* log = nullptr, int jobs = 1);

}  // namespace vne

#endif  // VNE_TRAINER_HPP_
