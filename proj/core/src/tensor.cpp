#include "regdrop/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

#include "regdrop/errors.hpp"

namespace regdrop {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_mac_count = 0;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a 2-d tensor, got " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

bool wants_grad(const NodePtr& n) { return n && n->requires_grad; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::uint64_t mac_count() { return t_mac_count; }
void reset_mac_count() { t_mac_count = 0; }
void add_macs(std::uint64_t n) { t_mac_count += n; }

// ---- detail ------------------------------------------------------------------

namespace detail {

std::vector<double>& grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  const bool record =
      t_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return wants_grad(p); });
  if (record) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

// ---- Tensor --------------------------------------------------------------------

Tensor::Tensor() = default;
Tensor::Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + shape_to_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  Tensor t(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return from(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape empty;
  return node_ ? node_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("Tensor::dim: axis out of range for " + shape_to_string(shape()));
  return shape()[axis];
}

std::size_t Tensor::rows() const { return dim(0); }
std::size_t Tensor::cols() const { return rank() == 1 ? 1 : dim(1); }
std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("Tensor::item: tensor holds " + std::to_string(numel()) + " values");
  return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_2d(*this, "Tensor::at");
  if (row >= rows() || col >= cols()) throw ShapeError("Tensor::at: index out of range");
  return node_->data[row * cols() + col];
}

std::vector<double> Tensor::row(std::size_t r) const {
  require_2d(*this, "Tensor::row");
  if (r >= rows()) throw ShapeError("Tensor::row: index out of range");
  const auto begin = node_->data.begin() + static_cast<std::ptrdiff_t>(r * cols());
  return {begin, begin + static_cast<std::ptrdiff_t>(cols())};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) return;
  node_->requires_grad = flag;
  if (flag) {
    detail::grad_of(*node_);
  } else {
    node_->grad.clear();
  }
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!node_) return {};
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) return {};
  return detail::grad_of(*node_);
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  detail::grad_of(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return from(node_->shape, node_->data, false);
}

Tensor Tensor::clone(bool requires_grad) const {
  if (!node_) return {};
  return from(node_->shape, node_->data, requires_grad);
}

// ---- linear algebra --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t r = a.rows(), inner = a.cols(), p = b.cols();
  if (b.rows() != inner) {
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  std::vector<double> out(r * p);
  if (r && p) {
    MutMap(out.data(), r, p).noalias() = ConstMap(a.data().data(), r, inner) * ConstMap(b.data().data(), inner, p);
  }
  add_macs(static_cast<std::uint64_t>(r) * inner * p);
  return detail::make_result({r, p}, std::move(out), {a.node(), b.node()}, [r, inner, p](Node& self) {
    ConstMap g(self.grad.data(), r, p);
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      MutMap(detail::grad_of(*pa).data(), r, inner).noalias() += g * ConstMap(pb->data.data(), inner, p).transpose();
    }
    if (wants_grad(pb)) {
      MutMap(detail::grad_of(*pb).data(), inner, p).noalias() += ConstMap(pa->data.data(), r, inner).transpose() * g;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t r = a.rows(), inner = a.cols(), p = b.rows();
  if (b.cols() != inner) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()) + "^T");
  }
  std::vector<double> out(r * p);
  if (r && p) {
    MutMap(out.data(), r, p).noalias() =
        ConstMap(a.data().data(), r, inner) * ConstMap(b.data().data(), p, inner).transpose();
  }
  add_macs(static_cast<std::uint64_t>(r) * inner * p);
  return detail::make_result({r, p}, std::move(out), {a.node(), b.node()}, [r, inner, p](Node& self) {
    ConstMap g(self.grad.data(), r, p);
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      MutMap(detail::grad_of(*pa).data(), r, inner).noalias() += g * ConstMap(pb->data.data(), p, inner);
    }
    if (wants_grad(pb)) {
      MutMap(detail::grad_of(*pb).data(), p, inner).noalias() += g.transpose() * ConstMap(pa->data.data(), r, inner);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(a.data().data(), r, c).transpose();
  return detail::make_result({c, r}, std::move(out), {a.node()}, [r, c](Node& self) {
    auto& pa = self.parents[0];
    MutMap(detail::grad_of(*pa).data(), r, c) += ConstMap(self.grad.data(), c, r).transpose();
  });
}

// ---- elementwise ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!wants_grad(p)) continue;
      auto& g = detail::grad_of(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (wants_grad(self.parents[0])) {
      auto& g = detail::grad_of(*self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self.parents[1])) {
      auto& g = detail::grad_of(*self.parents[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (wants_grad(pa)) {
      auto& g = detail::grad_of(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (wants_grad(pb)) {
      auto& g = detail::grad_of(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return detail::make_result(a.shape(), std::move(out), {a.node()}, [factor](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_bias");
  const std::size_t r = a.rows(), c = a.cols();
  if (bias.numel() != c) {
    throw ShapeError("add_bias: bias has " + std::to_string(bias.numel()) + " values for " + std::to_string(c) +
                     " columns");
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return detail::make_result(a.shape(), std::move(out), {a.node(), bias.node()}, [r, c](Node& self) {
    if (wants_grad(self.parents[0])) {
      auto& g = detail::grad_of(*self.parents[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self.parents[1])) {
      auto& g = detail::grad_of(*self.parents[1]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
    }
  });
}

Tensor silu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / (1.0 + std::exp(-x[i]));
  return detail::make_result(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = detail::grad_of(*p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p->data[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      g[i] += self.grad[i] * s * (1.0 + x * (1.0 - s));
    }
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
  return detail::make_result(a.shape(), std::move(out), {a.node()}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = detail::grad_of(*p);
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      g[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

// ---- softmax / normalization --------------------------------------------------------

namespace {

void softmax_backward(Node& self, std::size_t r, std::size_t c) {
  auto& p = self.parents[0];
  auto& g = detail::grad_of(*p);
  for (std::size_t i = 0; i < r; ++i) {
    const double* y = self.data.data() + i * c;
    const double* dy = self.grad.data() + i * c;
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
    double* dx = g.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) dx[j] += y[j] * (dy[j] - dot);
  }
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double* dst = out.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (dst[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) dst[j] /= total;
  }
  return detail::make_result(x.shape(), std::move(out), {x.node()}, [r, c](Node& self) { softmax_backward(self, r, c); });
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const double> additive_mask) {
  require_2d(x, "masked_softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (additive_mask.size() != r * c) {
    throw ShapeError("masked_softmax_rows: mask has " + std::to_string(additive_mask.size()) + " entries for " +
                     shape_to_string(x.shape()));
  }
  constexpr double kCutoff = kMaskedScore / 2;
  std::vector<double> out(r * c, 0.0);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    const double* mrow = additive_mask.data() + i * c;
    double* dst = out.data() + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (mrow[j] > kCutoff) mx = std::max(mx, row[j] + mrow[j]);
    if (!std::isfinite(mx)) throw ContractError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (mrow[j] > kCutoff) total += (dst[j] = std::exp(row[j] + mrow[j] - mx));
    for (std::size_t j = 0; j < c; ++j) dst[j] /= total;
  }
  return detail::make_result(x.shape(), std::move(out), {x.node()}, [r, c](Node& self) { softmax_backward(self, r, c); });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_2d(x, "rms_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c) throw ShapeError("rms_norm: gain size does not match width " + std::to_string(c));
  std::vector<double> inv(r);
  std::vector<double> out(r * c);
  const auto in = x.data();
  const auto gw = gain.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = in.data() + i * c;
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += row[j] * row[j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] * inv[i] * gw[j];
  }
  return detail::make_result(x.shape(), std::move(out), {x.node(), gain.node()},
                             [r, c, inv = std::move(inv)](Node& self) {
                               auto& px = self.parents[0];
                               auto& pg = self.parents[1];
                               for (std::size_t i = 0; i < r; ++i) {
                                 const double* xr = px->data.data() + i * c;
                                 const double* dy = self.grad.data() + i * c;
                                 if (wants_grad(px)) {
                                   double proj = 0.0;
                                   for (std::size_t j = 0; j < c; ++j) proj += dy[j] * pg->data[j] * xr[j];
                                   const double k = inv[i] * inv[i] * inv[i] * proj / static_cast<double>(c);
                                   double* dx = detail::grad_of(*px).data() + i * c;
                                   for (std::size_t j = 0; j < c; ++j) dx[j] += dy[j] * pg->data[j] * inv[i] - k * xr[j];
                                 }
                                 if (wants_grad(pg)) {
                                   auto& dg = detail::grad_of(*pg);
                                   for (std::size_t j = 0; j < c; ++j) dg[j] += dy[j] * xr[j] * inv[i];
                                 }
                               }
                             });
}

// ---- indexing -------------------------------------------------------------------------

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding");
  const std::size_t v = table.rows(), c = table.cols();
  std::vector<double> out(ids.size() * c);
  const auto t = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw ContractError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(v));
    }
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return detail::make_result({ids.size(), c}, std::move(out), {table.node()}, [c, idx = std::move(idx)](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[static_cast<std::size_t>(idx[i]) * c + j] += self.grad[i * c + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  std::size_t c = 0, r = 0;
  bool first = true;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (first) {
      c = p.cols();
      first = false;
    } else if (p.cols() != c) {
      throw ShapeError("concat_rows: width mismatch " + std::to_string(p.cols()) + " vs " + std::to_string(c));
    }
    r += p.rows();
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(r * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_result({r, c}, std::move(out), std::move(parents), [](Node& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->data.size();
      if (wants_grad(p)) {
        auto& g = detail::grad_of(*p);
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_rows");
  if (begin > end || end > x.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     std::to_string(x.rows()) + " rows");
  }
  const std::size_t c = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return detail::make_result({end - begin, c}, std::move(out), {x.node()}, [begin, c](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_2d(x, "gather_rows");
  const std::size_t c = x.cols();
  std::vector<double> out(indices.size() * c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.rows()) throw ShapeError("gather_rows: index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return detail::make_result({indices.size(), c}, std::move(out), {x.node()}, [c, idx = std::move(idx)](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_2d(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (begin + count > c) throw ShapeError("slice_cols: columns out of range");
  std::vector<double> out(r * count);
  const auto in = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i * c + begin), count,
                out.begin() + static_cast<std::ptrdiff_t>(i * count));
  return detail::make_result({r, count}, std::move(out), {x.node()}, [r, c, begin, count](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    c += p.cols();
    parents.push_back(p.node());
  }
  std::vector<double> out(r * c);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * c + offset));
    offset += w;
  }
  return detail::make_result({r, c}, std::move(out), std::move(parents), [r, c, widths = std::move(widths)](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t w = widths[k];
      auto& p = self.parents[k];
      if (wants_grad(p)) {
        auto& g = detail::grad_of(*p);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) g[i * w + j] += self.grad[i * c + offset + j];
      }
      offset += w;
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x.node()}, [](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor mean_rows(const Tensor& x, std::span<const std::pair<std::size_t, std::size_t>> chunks) {
  require_2d(x, "mean_rows");
  const std::size_t c = x.cols();
  std::vector<double> out(chunks.size() * c, 0.0);
  const auto in = x.data();
  for (std::size_t k = 0; k < chunks.size(); ++k) {
    const auto [b, e] = chunks[k];
    if (b >= e || e > x.rows()) throw ShapeError("mean_rows: empty or out-of-range chunk");
    const double w = 1.0 / static_cast<double>(e - b);
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < c; ++j) out[k * c + j] += in[i * c + j];
    for (std::size_t j = 0; j < c; ++j) out[k * c + j] *= w;
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans(chunks.begin(), chunks.end());
  return detail::make_result({chunks.size(), c}, std::move(out), {x.node()}, [c, spans = std::move(spans)](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (std::size_t k = 0; k < spans.size(); ++k) {
      const auto [b, e] = spans[k];
      const double w = 1.0 / static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[k * c + j] * w;
    }
  });
}

// ---- reductions / losses ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto in = x.data();
  const double total = std::accumulate(in.begin(), in.end(), 0.0);
  return detail::make_result({1}, {total}, {x.node()}, [](Node& self) {
    auto& g = detail::grad_of(*self.parents[0]);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_2d(logits, "cross_entropy");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw ShapeError("cross_entropy: one target per row required");
  if (r == 0) throw ShapeError("cross_entropy: no rows");
  std::vector<double> probs(r * c);
  double loss = 0.0;
  const auto in = logits.data();
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) throw ShapeError("cross_entropy: target out of range");
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += (probs[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
    loss += -(row[targets[i]] - mx - std::log(total));
  }
  loss /= static_cast<double>(r);
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_result({1}, {loss}, {logits.node()},
                             [r, c, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                               auto& g = detail::grad_of(*self.parents[0]);
                               const double w = self.grad[0] / static_cast<double>(r);
                               for (std::size_t i = 0; i < r; ++i) {
                                 for (std::size_t j = 0; j < c; ++j) g[i * c + j] += w * probs[i * c + j];
                                 g[i * c + static_cast<std::size_t>(tgt[i])] -= w;
                               }
                             });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  Tensor probe = x.detach();
  std::vector<double> out(x.numel());
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double original = values[i];
    values[i] = original + eps;
    const double up = f(probe);
    values[i] = original - eps;
    const double down = f(probe);
    values[i] = original;
    out[i] = (up - down) / (2.0 * eps);
  }
  return Tensor::from(x.shape(), std::move(out));
}

}  // namespace regdrop
