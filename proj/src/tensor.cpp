#include "vne/tensor.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

namespace vne {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const Tensor& t) { return fmt::format("{}x{}", t.rows(), t.cols()); }

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_defined(const Tensor& t, const char* op) {
  require(t.defined(), fmt::format("{}: undefined tensor", op));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a), shape_str(b)));
}

bool is_vector(const Tensor& t) { return t.rows() == 1 || t.cols() == 1; }

}  // namespace

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v) { return Tensor(Matrix::Constant(1, 1, v)); }

const Matrix& Tensor::value() const {
  if (!node_) throw std::invalid_argument("undefined tensor");
  return node_->value;
}

Matrix& Tensor::mutable_value() {
  if (!node_) throw std::invalid_argument("undefined tensor");
  return node_->value;
}

const Matrix& Tensor::grad() const {
  if (!node_) throw std::invalid_argument("undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
  require(rows() == 1 && cols() == 1, "item: tensor is " + shape_str(*this));
  return value()(0, 0);
}

Tensor Tensor::detach() const { return Tensor(value(), false); }

void accumulate_grad(Tensor::Node& p, const Matrix& g) {
  if (!p.requires_grad) return;
  if (p.grad.size() == 0) {
    p.grad = g;
  } else {
    p.grad += g;
  }
}

Tensor make_result(Matrix value, const std::vector<Tensor>& parents, std::function<void(Tensor::Node&)> backward) {
  Tensor out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (const auto& p : parents) out.node_->parents.push_back(p.node());
  out.node_->backward = std::move(backward);
  return out;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  require(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be scalar, got " + shape_str(loss));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  using Node = Tensor::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  accumulate_grad(*loss.node(), Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require(a.cols() == b.rows(), fmt::format("matmul: shape mismatch {} * {}", shape_str(a), shape_str(b)));
  return make_result(a.value() * b.value(), {a, b}, [](Tensor::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) accumulate_grad(pa, self.grad * pb.value.transpose());
    if (pb.requires_grad) accumulate_grad(pb, pa.value.transpose() * self.grad);
  });
}

namespace {

Tensor add_impl(const Tensor& a, const Tensor& b, double sign, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return make_result(a.value() + sign * b.value(), {a, b}, [sign](Tensor::Node& self) {
      accumulate_grad(*self.parents[0], self.grad);
      accumulate_grad(*self.parents[1], sign * self.grad);
    });
  }
  require(b.rows() == 1 && b.cols() == a.cols(),
          fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a), shape_str(b)));
  Matrix out = a.value();
  out.rowwise() += sign * b.value().row(0);
  return make_result(std::move(out), {a, b}, [sign](Tensor::Node& self) {
    accumulate_grad(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) accumulate_grad(*self.parents[1], sign * self.grad.colwise().sum());
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Tensor::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) accumulate_grad(pa, self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) accumulate_grad(pb, self.grad.cwiseProduct(pa.value));
  });
}

Tensor scale(const Tensor& a, double k) {
  require_defined(a, "scale");
  return make_result(a.value() * k, {a}, [k](Tensor::Node& self) { accumulate_grad(*self.parents[0], self.grad * k); });
}

Tensor add_scalar(const Tensor& a, double k) {
  require_defined(a, "add_scalar");
  return make_result(a.value().array() + k, {a}, [](Tensor::Node& self) { accumulate_grad(*self.parents[0], self.grad); });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  return make_result(a.value().cwiseMax(0.0), {a}, [](Tensor::Node& self) {
    const auto& x = self.parents[0]->value;
    accumulate_grad(*self.parents[0], (x.array() > 0.0).select(self.grad, 0.0));
  });
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  return make_result(a.value().array().log(), {a}, [](Tensor::Node& self) {
    accumulate_grad(*self.parents[0], self.grad.cwiseQuotient(self.parents[0]->value));
  });
}

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  return make_result(a.value().array().exp(), {a},
                     [](Tensor::Node& self) { accumulate_grad(*self.parents[0], self.grad.cwiseProduct(self.value)); });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  return make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Tensor::Node& self) {
    const auto& x = self.parents[0]->value;
    accumulate_grad(*self.parents[0], Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  require(a.value().size() > 0, "mean: empty tensor");
  return make_result(Matrix::Constant(1, 1, a.value().mean()), {a}, [](Tensor::Node& self) {
    const auto& x = self.parents[0]->value;
    accumulate_grad(*self.parents[0],
                    Matrix::Constant(x.rows(), x.cols(), self.grad(0, 0) / static_cast<double>(x.size())));
  });
}

Tensor gather_rows(const Tensor& a, const std::vector<Eigen::Index>& rows) {
  require_defined(a, "gather_rows");
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), fmt::format("gather_rows: row {} out of range for {}", rows[i], shape_str(a)));
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  return make_result(std::move(out), {a}, [rows](Tensor::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    accumulate_grad(p, g);
  });
}

Tensor element(const Tensor& a, Eigen::Index r, Eigen::Index c) {
  require_defined(a, "element");
  require(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(),
          fmt::format("element: ({}, {}) out of range for {}", r, c, shape_str(a)));
  return make_result(Matrix::Constant(1, 1, a.value()(r, c)), {a}, [r, c](Tensor::Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    g(r, c) = self.grad(0, 0);
    accumulate_grad(p, g);
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_cols");
  require_defined(b, "concat_cols");
  require(a.rows() == b.rows(), fmt::format("concat_cols: shape mismatch {} vs {}", shape_str(a), shape_str(b)));
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto split = a.cols();
  return make_result(std::move(out), {a, b}, [split](Tensor::Node& self) {
    accumulate_grad(*self.parents[0], self.grad.leftCols(split));
    accumulate_grad(*self.parents[1], self.grad.rightCols(self.grad.cols() - split));
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_defined(a, "concat_rows");
  require_defined(b, "concat_rows");
  require(a.cols() == b.cols(), fmt::format("concat_rows: shape mismatch {} vs {}", shape_str(a), shape_str(b)));
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  const auto split = a.rows();
  return make_result(std::move(out), {a, b}, [split](Tensor::Node& self) {
    accumulate_grad(*self.parents[0], self.grad.topRows(split));
    accumulate_grad(*self.parents[1], self.grad.bottomRows(self.grad.rows() - split));
  });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  return make_result(a.value().cwiseMin(b.value()), {a, b}, [](Tensor::Node& self) {
    const auto take_a = (self.parents[0]->value.array() <= self.parents[1]->value.array());
    accumulate_grad(*self.parents[0], take_a.select(self.grad, 0.0));
    accumulate_grad(*self.parents[1], take_a.select(0.0, self.grad));
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require_defined(a, "clamp");
  require(lo <= hi, "clamp: lo > hi");
  return make_result(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [lo, hi](Tensor::Node& self) {
    const auto& x = self.parents[0]->value.array();
    accumulate_grad(*self.parents[0], (x >= lo && x <= hi).select(self.grad, 0.0));
  });
}

Tensor graph_mean_pool(const Tensor& z) {
  require_defined(z, "graph_mean_pool");
  require(z.rows() > 0 && z.cols() > 0, "graph_mean_pool: empty matrix");
  return make_result(z.value().colwise().mean(), {z}, [](Tensor::Node& self) {
    const auto n = self.parents[0]->value.rows();
    accumulate_grad(*self.parents[0], self.grad.replicate(n, 1) / static_cast<double>(n));
  });
}

namespace {

struct SoftmaxParts {
  Matrix prob;      // 0 on masked entries
  Matrix log_prob;  // -inf on masked entries
};

SoftmaxParts softmax_parts(const Matrix& s, const std::vector<bool>& masked) {
  const auto n = s.size();
  require(static_cast<size_t>(n) == masked.size(),
          fmt::format("masked softmax: {} scores but {} mask entries", n, masked.size()));
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!masked[static_cast<size_t>(i)]) hi = std::max(hi, s.data()[i]);
  }
  if (hi == -std::numeric_limits<double>::infinity()) throw EmptySupportError("all entries masked");
  SoftmaxParts out{Matrix::Zero(s.rows(), s.cols()),
                   Matrix::Constant(s.rows(), s.cols(), -std::numeric_limits<double>::infinity())};
  double z = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (masked[static_cast<size_t>(i)]) continue;
    out.prob.data()[i] = std::exp(s.data()[i] - hi);
    z += out.prob.data()[i];
  }
  const double log_z = std::log(z);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (masked[static_cast<size_t>(i)]) continue;
    out.prob.data()[i] /= z;
    out.log_prob.data()[i] = s.data()[i] - hi - log_z;
  }
  return out;
}

}  // namespace

Tensor masked_softmax(const Tensor& scores, const std::vector<bool>& masked) {
  require_defined(scores, "masked_softmax");
  require(is_vector(scores), "masked_softmax: scores must be a vector, got " + shape_str(scores));
  return make_result(softmax_parts(scores.value(), masked).prob, {scores}, [](Tensor::Node& self) {
    const double dot = self.grad.cwiseProduct(self.value).sum();
    accumulate_grad(*self.parents[0], self.value.cwiseProduct((self.grad.array() - dot).matrix()));
  });
}

Tensor masked_log_softmax(const Tensor& scores, const std::vector<bool>& masked) {
  require_defined(scores, "masked_log_softmax");
  require(is_vector(scores), "masked_log_softmax: scores must be a vector, got " + shape_str(scores));
  auto parts = softmax_parts(scores.value(), masked);
  return make_result(std::move(parts.log_prob), {scores}, [masked, p = std::move(parts.prob)](Tensor::Node& self) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < self.grad.size(); ++i) {
      if (!masked[static_cast<size_t>(i)]) total += self.grad.data()[i];
    }
    Matrix g(self.grad.rows(), self.grad.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g.data()[i] = masked[static_cast<size_t>(i)] ? 0.0 : self.grad.data()[i] - p.data()[i] * total;
    }
    accumulate_grad(*self.parents[0], g);
  });
}

Tensor masked_entropy(const Tensor& scores, const std::vector<bool>& masked) {
  require_defined(scores, "masked_entropy");
  require(is_vector(scores), "masked_entropy: scores must be a vector, got " + shape_str(scores));
  auto parts = softmax_parts(scores.value(), masked);
  double h = 0.0;
  for (Eigen::Index i = 0; i < parts.prob.size(); ++i) {
    if (!masked[static_cast<size_t>(i)]) h -= parts.prob.data()[i] * parts.log_prob.data()[i];
  }
  return make_result(Matrix::Constant(1, 1, h), {scores}, [masked, parts = std::move(parts), h](Tensor::Node& self) {
    // dH/ds_j = -p_j (log p_j + H)
    Matrix g(parts.prob.rows(), parts.prob.cols());
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      g.data()[i] = masked[static_cast<size_t>(i)]
                        ? 0.0
                        : -parts.prob.data()[i] * (parts.log_prob.data()[i] + h) * self.grad(0, 0);
    }
    accumulate_grad(*self.parents[0], g);
  });
}

Matrix normalized_adjacency(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.node_count());
  Matrix a = Matrix::Identity(n, n);
  for (const auto& l : g.links()) {
    a(l.u, l.v) = 1.0;
    a(l.v, l.u) = 1.0;
  }
  Eigen::VectorXd inv_sqrt = a.rowwise().sum().array().rsqrt();
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

Tensor gcn_layer(const Tensor& h, const Tensor& a_hat, const Tensor& w, const Tensor& b, Activation act) {
  require_defined(h, "gcn_layer");
  require_defined(a_hat, "gcn_layer");
  require(a_hat.rows() == a_hat.cols() && a_hat.rows() == h.rows(),
          fmt::format("gcn_layer: adjacency {} does not match features {}", shape_str(a_hat), shape_str(h)));
  Tensor out = add(matmul(a_hat, matmul(h, w)), b);
  return act == Activation::relu ? relu(out) : out;
}

Tensor& ParamStore::add(const std::string& name, Matrix init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  return params_.emplace(name, Tensor(std::move(init), true)).first->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

Eigen::Index ParamStore::element_count() const {
  Eigen::Index n = 0;
  for (const auto& [name, t] : params_) n += t.value().size();
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : params_) out.add(name, t.value());
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

GradMap ParamStore::gradients() const {
  GradMap out;
  for (const auto& [name, t] : params_) {
    out[name] = t.grad().size() ? t.grad() : Matrix::Zero(t.rows(), t.cols());
  }
  return out;
}

void ParamStore::check_finite() const {
  for (const auto& [name, t] : params_) {
    if (!t.value().allFinite()) throw NonFiniteError("parameter '" + name + "' is not finite");
  }
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (names() != other.names()) return false;
  for (const auto& [name, t] : params_) {
    const auto& o = other.get(name).value();
    if (o.rows() != t.rows() || o.cols() != t.cols() || o != t.value()) return false;
  }
  return true;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(element_count()));
  for (const auto& [name, t] : params_) out.insert(out.end(), t.value().data(), t.value().data() + t.value().size());
  return out;
}

void ParamStore::assign_flat(const std::vector<double>& values) {
  if (static_cast<Eigen::Index>(values.size()) != element_count()) {
    throw std::invalid_argument(fmt::format("assign_flat: {} values for {} parameters", values.size(), element_count()));
  }
  size_t k = 0;
  for (auto& [name, t] : params_) {
    auto& v = t.mutable_value();
    std::copy(values.begin() + static_cast<long>(k), values.begin() + static_cast<long>(k + static_cast<size_t>(v.size())),
              v.data());
    k += static_cast<size_t>(v.size());
  }
}

Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

void add_linear(ParamStore& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  ps.add(name + ".w", uniform_init(in, out, in, rng));
  ps.add(name + ".b", uniform_init(1, out, in, rng));
}

Tensor linear(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return add(matmul(x, ps.get(name + ".w")), ps.get(name + ".b"));
}

void Adam::step(ParamStore& params, const GradMap& grads) {
  // Validate everything before touching state.
  for (const auto& [name, g] : grads) {
    const auto& p = params.get(name);
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument(fmt::format("gradient shape mismatch for '{}'", name));
    }
    if (!g.allFinite()) throw NonFiniteError("gradient for '" + name + "' is not finite");
  }
  const long t = t_ + 1;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  std::map<std::string, std::pair<Matrix, Matrix>> moments;
  std::map<std::string, Matrix> values;
  for (const auto& [name, g] : grads) {
    auto it = moments_.find(name);
    Matrix m = it == moments_.end() ? Matrix::Zero(g.rows(), g.cols()) : it->second.first;
    Matrix v = it == moments_.end() ? Matrix::Zero(g.rows(), g.cols()) : it->second.second;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Matrix update = (m / c1).array() / ((v / c2).array().sqrt() + cfg_.eps);
    Matrix next = params.get(name).value() - cfg_.lr * update;
    if (!next.allFinite()) throw NonFiniteError("update for '" + name + "' is not finite");
    moments[name] = {std::move(m), std::move(v)};
    values[name] = std::move(next);
  }
  for (auto& [name, v] : values) params.get(name).mutable_value() = std::move(v);
  for (auto& [name, mv] : moments) moments_[name] = std::move(mv);
  t_ = t;
}

void sgd_step(ParamStore& params, const GradMap& grads, double lr) {
  std::map<std::string, Matrix> values;
  for (const auto& [name, g] : grads) {
    const auto& p = params.get(name);
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument(fmt::format("gradient shape mismatch for '{}'", name));
    }
    Matrix next = p.value() - lr * g;
    if (!next.allFinite()) throw NonFiniteError("update for '" + name + "' is not finite");
    values[name] = std::move(next);
  }
  for (auto& [name, v] : values) params.get(name).mutable_value() = std::move(v);
}

namespace {
constexpr const char* kParamsMagic = "vne-params v1";
}

void write_params(const ParamStore& ps, std::ostream& out) {
  out << kParamsMagic << '\n' << ps.size() << '\n';
  for (const auto& [name, t] : ps) {
    out << fmt::format("{} {} {}\n", name, t.rows(), t.cols());
    const auto& v = t.value();
    for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << fmt::format("{}", v.data()[i]);
    out << '\n';
  }
}

void save_params(const ParamStore& ps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_params(ps, out);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void read_params_into(ParamStore& ps, std::istream& in) {
  std::string magic;
  std::getline(in, magic);
  if (magic != kParamsMagic) throw std::runtime_error("not a parameter checkpoint (bad header '" + magic + "')");
  size_t count = 0;
  if (!(in >> count)) throw std::runtime_error("checkpoint: missing parameter count");
  std::map<std::string, Matrix> loaded;
  for (size_t k = 0; k < count; ++k) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) throw std::runtime_error("checkpoint: truncated parameter header");
    if (!ps.contains(name)) throw std::runtime_error("checkpoint: unexpected parameter '" + name + "'");
    const auto& target = ps.get(name);
    if (rows != target.rows() || cols != target.cols()) {
      throw std::runtime_error(fmt::format("checkpoint: shape mismatch for '{}': file {}x{}, expected {}x{}", name, rows,
                                           cols, target.rows(), target.cols()));
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::string tok;
      if (!(in >> tok)) throw std::runtime_error("checkpoint: truncated values for '" + name + "'");
      m.data()[i] = std::stod(tok);
    }
    loaded[name] = std::move(m);
  }
  if (loaded.size() != ps.size()) {
    std::string missing;
    for (const auto& n : ps.names()) {
      if (!loaded.count(n)) missing += (missing.empty() ? "" : ", ") + n;
    }
    throw std::runtime_error("checkpoint: missing parameters " + missing);
  }
  for (auto& [name, m] : loaded) ps.get(name).mutable_value() = std::move(m);
  ps.check_finite();
}

void load_params_into(ParamStore& ps, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  read_params_into(ps, in);
}

}  // namespace vne
