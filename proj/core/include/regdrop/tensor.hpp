#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace regdrop {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

// Additive score for disallowed attention entries.
inline constexpr double kMaskedScore = -1e30;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major tensor of doubles with reverse-mode differentiation.
//
// A Tensor is a cheap handle; copies share storage. Operations that consume a
// tensor with requires_grad() record themselves on the result so that
// backward() on a scalar replays the recorded graph in reverse topological
// order. Recording is skipped inside a NoGradGuard.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access is meant for leaves (parameters, inputs); mutating a tensor
  // that already feeds a recorded graph invalidates that graph.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t row, std::size_t col) const;
  std::vector<double> row(std::size_t r) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Populates gradients of every requires_grad ancestor. Loss must hold exactly
  // one element.
  void backward() const;

  // Same values, no graph, no grad.
  Tensor detach() const;
  Tensor clone(bool requires_grad = false) const;

  explicit Tensor(std::shared_ptr<detail::Node> node);
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
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

// Multiply-accumulate counter for matrix products on the current thread.
// Used to check analytic FLOP formulas against what the kernels execute.
std::uint64_t mac_count();
void reset_mac_count();
void add_macs(std::uint64_t n);

// ---- operations --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a · bᵀ without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[r×c] + bias broadcast over rows; bias holds c values.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor softmax_rows(const Tensor& x);
// Row softmax of (x + mask). Entries whose mask is at or below the masked
// sentinel come out as exact zeros.
Tensor masked_softmax_rows(const Tensor& x, std::span<const double> additive_mask);

// x * gain / sqrt(mean(x²) + eps), row-wise.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);

Tensor embedding(const Tensor& table, std::span<const int> ids);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);
// Column means over rows [begin, end) for each chunk; returns [chunks×c].
Tensor mean_rows(const Tensor& x, std::span<const std::pair<std::size_t, std::size_t>> chunks);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean negative log-likelihood of targets under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Central-difference estimate of df/dx, coordinate by coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

// ---- building blocks for ops defined in other translation units ---------

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

std::vector<double>& grad_of(Node& n);

// Wraps values into a result tensor and records `backward` when gradients are
// enabled and any parent requires them.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward);

}  // namespace detail

}  // namespace regdrop
