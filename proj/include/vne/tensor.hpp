#ifndef VNE_TENSOR_HPP_
#define VNE_TENSOR_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vne/netmodel.hpp"

namespace vne {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Raised by the masked distribution ops when every entry is masked.
class EmptySupportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A 2-D value with an optional place on the autodiff tape. Copies share the
// underlying node; use detach() or ParamStore::clone() for independent data.
class Tensor {
 public:
  struct Node;

  Tensor() = default;
  explicit Tensor(Matrix value, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  // Direct write access; only meaningful for leaves (parameters).
  Matrix& mutable_value();
  // Accumulated gradient; zero-sized until a backward pass reaches it.
  const Matrix& grad() const;
  void zero_grad();
  bool requires_grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  double item() const;
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend Tensor make_result(Matrix value, const std::vector<Tensor>& parents, std::function<void(Node&)> backward);
  std::shared_ptr<Node> node_;
};

struct Tensor::Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents.
  std::function<void(Node&)> backward;
};

// Adds g into p's gradient if p tracks gradients.
void accumulate_grad(Tensor::Node& p, const Matrix& g);

// Builds an op result; records the tape only if some parent needs gradients
// and no NoGradGuard is active on this thread.
Tensor make_result(Matrix value, const std::vector<Tensor>& parents, std::function<void(Tensor::Node&)> backward);

// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Reverse pass from a 1x1 loss. Leaf gradients accumulate across calls.
void backward(const Tensor& loss);

Tensor matmul(const Tensor& a, const Tensor& b);
// Same shape, or b a single row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double k);
Tensor add_scalar(const Tensor& a, double k);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor gather_rows(const Tensor& a, const std::vector<Eigen::Index>& rows);
Tensor element(const Tensor& a, Eigen::Index r, Eigen::Index c);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& a, double lo, double hi);

// Column-wise mean over rows: (n x c) -> (1 x c).
Tensor graph_mean_pool(const Tensor& z);

// Distribution ops over a vector of scores (n x 1 or 1 x n). masked[i] true
// excludes entry i. Masked probabilities are exactly 0; masked log-probs are
// -inf and receive no gradient.
Tensor masked_softmax(const Tensor& scores, const std::vector<bool>& masked);
Tensor masked_log_softmax(const Tensor& scores, const std::vector<bool>& masked);
// Shannon entropy (natural log) of masked_softmax(scores, masked), as 1x1.
Tensor masked_entropy(const Tensor& scores, const std::vector<bool>& masked);

// D^-1/2 (A + I) D^-1/2 for an unweighted graph.
Matrix normalized_adjacency(const Graph& g);

enum class Activation { none, relu };
// activation(A_hat * H * W + b)
Tensor gcn_layer(const Tensor& h, const Tensor& a_hat, const Tensor& w, const Tensor& b, Activation act);

using GradMap = std::map<std::string, Matrix>;

// Named parameters in lexicographic name order. Move-only: copying would
// alias the parameter nodes, so copies go through clone().
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Tensor& add(const std::string& name, Matrix init);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::vector<std::string> names() const;
  size_t size() const { return params_.size(); }
  Eigen::Index element_count() const;

  // Independent copy of all values; gradients start empty.
  ParamStore clone() const;
  void zero_grad();
  // Current gradients (zeros where none have been accumulated).
  GradMap gradients() const;
  void check_finite() const;
  bool same_values(const ParamStore& other) const;

  // Flattened view in name order, for finite differences and comparisons.
  std::vector<double> flatten() const;
  void assign_flat(const std::vector<double>& values);

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Uniform in +-sqrt(1/fan_in).
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);
void add_linear(ParamStore& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);
// x * W + b using parameters name.w and name.b.
Tensor linear(const ParamStore& ps, const std::string& name, const Tensor& x);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  // Applies the given gradients (descent). Names absent from grads are left
  // untouched. Throws NonFiniteError, leaving params unchanged, if any
  // gradient or resulting value is not finite.
  void step(ParamStore& params, const GradMap& grads);
  void step(ParamStore& params) { step(params, params.gradients()); }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

void sgd_step(ParamStore& params, const GradMap& grads, double lr);

// Text checkpoint: "vne-params v1", count, then per parameter a
// "name rows cols" line followed by the row-major values.
void write_params(const ParamStore& ps, std::ostream& out);
void save_params(const ParamStore& ps, const std::filesystem::path& path);
// Fills an existing store; names and shapes must match exactly.
void read_params_into(ParamStore& ps, std::istream& in);
void load_params_into(ParamStore& ps, const std::filesystem::path& path);

}  // namespace vne

#endif  // VNE_TENSOR_HPP_
