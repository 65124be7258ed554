#pragma once

// Reverse-mode autodiff over dense float64 tensors.
//
// Every op records its inputs and a backward closure on the output node. The
// backward closures are themselves written in terms of recorded ops, so a
// gradient computed with `create_graph = true` is an ordinary differentiable
// tensor. Differentiating a loss built from such a gradient gives mixed
// partials (Hessian-vector products) without forming any Hessian.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tsxil::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// Receives the gradient of the output and a flag per input telling whether
// that input's gradient is needed. Returns one gradient per input; entries for
// unneeded inputs may be left undefined.
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

struct Node {
  std::uint64_t id = 0;
  std::string op;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool twice_differentiable = true;
  // Created while executing a create_graph backward pass.
  bool from_backward = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(std::vector<double> values, Shape shape, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const;
  std::span<const double> values() const;
  double item() const;
  double at(std::size_t flat_index) const;

  bool requires_grad() const;
  // Only valid on leaves.
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  const std::string& op() const;
  std::uint64_t id() const;

  // In-place access for optimizer updates on leaf parameters. Any record built
  // from the old values is stale afterwards.
  std::vector<double>& mutable_values();

  // Same values, no history, no grad.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  friend Tensor make_op(std::string, std::vector<double>, Shape, std::vector<Tensor>, BackwardFn, bool);
  friend Tensor make_leaf(std::vector<double>, Shape, bool);

  std::shared_ptr<Node> node_;
};

Tensor make_leaf(std::vector<double> values, Shape shape, bool requires_grad);

// Record an op. If recording is disabled or no input requires grad the result
// is a constant leaf and `backward` is dropped.
Tensor make_op(std::string name, std::vector<double> value, Shape shape, std::vector<Tensor> inputs,
               BackwardFn backward, bool twice_differentiable = true);

bool grad_enabled();

// Scoped override of the recording flag.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

class NoGradGuard : public GradModeGuard {
 public:
  NoGradGuard() : GradModeGuard(false) {}
};

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor shift(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// ---- shape and reductions --------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
// 2-D transpose.
Tensor transpose(const Tensor& a);
// Sum of all elements, rank-0 result.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum down to `shape`, which must have a's rank with some extents equal to 1.
Tensor sum_to(const Tensor& a, const Shape& shape);
// Broadcast size-1 extents of `a` up to `shape` (same rank).
Tensor expand(const Tensor& a, const Shape& shape);

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// 1-D convolution (cross-correlation), stride 1, "same" zero padding with
// left pad (K-1)/2. x: [N, Cin, T], w: [Cout, Cin, K] -> [N, Cout, T].
Tensor conv1d(const Tensor& x, const Tensor& w);
// Adjoint of conv1d in x: g [N, Cout, T], w [Cout, Cin, K] -> [N, Cin, T].
Tensor conv1d_input_grad(const Tensor& g, const Tensor& w);
// Adjoint of conv1d in w: x [N, Cin, T], g [N, Cout, T] -> [Cout, Cin, K].
Tensor conv1d_weight_grad(const Tensor& x, const Tensor& g, std::size_t kernel);

// Row-wise log-softmax of a [N, K] matrix.
Tensor log_softmax(const Tensor& logits);

// ---- differentiation -------------------------------------------------------

struct GradOptions {
  // Record the backward pass so the returned gradients are differentiable.
  bool create_graph = false;
};

// Gradient of a single-element `output` with respect to each tensor in `wrt`.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, GradOptions opts = {});
Tensor grad(const Tensor& output, const Tensor& wrt, GradOptions opts = {});

// Gradient of a loss that was built from a create_graph gradient (e.g. a
// right-reason penalty on input-gradient attributions) with respect to the
// parameters. The second-order term is a reverse-over-reverse Hessian-vector
// product through the recorded backward pass.
std::vector<Tensor> mixed_partial_grad(const Tensor& rr_loss, const std::vector<Tensor>& wrt_params);

// ---- introspection ---------------------------------------------------------

struct RecordEntry {
  std::uint64_t output = 0;
  std::string op;
  std::vector<std::uint64_t> inputs;
  bool from_backward = false;
  bool twice_differentiable = true;
};

// Ordered (topological, inputs first) view of the record that produced `output`.
struct ComputationRecord {
  std::vector<RecordEntry> entries;

  bool contains(std::uint64_t id) const;
  bool has_second_order() const;
};

ComputationRecord trace(const Tensor& output);

}  // namespace tsxil::ad
