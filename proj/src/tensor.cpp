#include "tsxil/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tsxil/error.hpp"

namespace tsxil::ad {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;
thread_local bool t_in_graph_backward = false;

std::shared_ptr<Node> new_node(std::string op, std::vector<double> value, Shape shape) {
  if (numel(shape) != value.size()) {
    throw ShapeError(op + ": " + std::to_string(value.size()) + " values for shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class F>
std::vector<double> map_unary(const Tensor& a, F f) {
  auto in = a.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}

template <class F>
std::vector<double> map_binary(const Tensor& a, const Tensor& b, F f) {
  auto x = a.values();
  auto y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double stable_softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

// Flat-index map from an output of `big` shape to an input of `small` shape
// where small broadcasts to big (same rank, size-1 extents repeat).
std::vector<std::size_t> broadcast_index(const Shape& small, const Shape& big) {
  const std::size_t rank = big.size();
  std::vector<std::size_t> small_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t d = rank; d-- > 0;) {
    small_stride[d] = small[d] == 1 ? 0 : s;
    s *= small[d];
  }
  std::vector<std::size_t> idx(numel(big));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    idx[flat] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += small_stride[d];
      if (counter[d] < big[d]) break;
      offset -= small_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

void check_broadcastable(const char* op, const Shape& small, const Shape& big) {
  bool ok = small.size() == big.size();
  for (std::size_t d = 0; ok && d < small.size(); ++d) ok = small[d] == big[d] || small[d] == 1;
  if (!ok) throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(small) + " to " + shape_str(big));
}

struct ConvDims {
  std::size_t n, cin, cout, t, k, pad;
};

void conv_forward(std::span<const double> x, std::span<const double> w, std::span<double> y, const ConvDims& d) {
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.cout; ++o) {
      double* yrow = y.data() + (n * d.cout + o) * d.t;
      for (std::size_t i = 0; i < d.cin; ++i) {
        const double* xrow = x.data() + (n * d.cin + i) * d.t;
        const double* wrow = w.data() + (o * d.cin + i) * d.k;
        for (std::size_t k = 0; k < d.k; ++k) {
          const double wk = wrow[k];
          // y[t] += wk * x[t + k - pad] for valid indices
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(d.pad);
          const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t t1 = shift > 0 ? d.t - std::min<std::size_t>(d.t, shift) : d.t;
          if (t1 <= t0) continue;
          const double* xs = xrow + (static_cast<std::ptrdiff_t>(t0) + shift);
          double* ys = yrow + t0;
          for (std::size_t t = 0; t < t1 - t0; ++t) ys[t] += wk * xs[t];
        }
      }
    }
  }
}

void conv_input_adjoint(std::span<const double> g, std::span<const double> w, std::span<double> gx,
                        const ConvDims& d) {
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.cout; ++o) {
      const double* grow = g.data() + (n * d.cout + o) * d.t;
      for (std::size_t i = 0; i < d.cin; ++i) {
        double* xrow = gx.data() + (n * d.cin + i) * d.t;
        const double* wrow = w.data() + (o * d.cin + i) * d.k;
        for (std::size_t k = 0; k < d.k; ++k) {
          const double wk = wrow[k];
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(d.pad);
          const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t t1 = shift > 0 ? d.t - std::min<std::size_t>(d.t, shift) : d.t;
          if (t1 <= t0) continue;
          double* xs = xrow + (static_cast<std::ptrdiff_t>(t0) + shift);
          const double* gs = grow + t0;
          for (std::size_t t = 0; t < t1 - t0; ++t) xs[t] += wk * gs[t];
        }
      }
    }
  }
}

void conv_weight_adjoint(std::span<const double> x, std::span<const double> g, std::span<double> gw,
                         const ConvDims& d) {
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t o = 0; o < d.cout; ++o) {
      const double* grow = g.data() + (n * d.cout + o) * d.t;
      for (std::size_t i = 0; i < d.cin; ++i) {
        const double* xrow = x.data() + (n * d.cin + i) * d.t;
        double* wrow = gw.data() + (o * d.cin + i) * d.k;
        for (std::size_t k = 0; k < d.k; ++k) {
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(d.pad);
          const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t t1 = shift > 0 ? d.t - std::min<std::size_t>(d.t, shift) : d.t;
          if (t1 <= t0) continue;
          const double* xs = xrow + (static_cast<std::ptrdiff_t>(t0) + shift);
          const double* gs = grow + t0;
          double acc = 0.0;
          for (std::size_t t = 0; t < t1 - t0; ++t) acc += gs[t] * xs[t];
          wrow[k] += acc;
        }
      }
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor make_leaf(std::vector<double> values, Shape shape, bool requires_grad) {
  auto n = new_node("leaf", std::move(values), std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<double> values, Shape shape, bool requires_grad) {
  return make_leaf(std::move(values), std::move(shape), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return make_leaf(std::vector<double>(n, 0.0), std::move(shape), requires_grad);
}

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  const auto n = numel(shape);
  return make_leaf(std::vector<double>(n, v), std::move(shape), false);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return make_leaf({v}, {}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw ContractViolation("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw ShapeError("dim " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

std::size_t Tensor::size() const {
  if (!node_) throw ContractViolation("use of undefined tensor");
  return node_->value.size();
}

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractViolation("use of undefined tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractViolation("set_requires_grad on non-leaf tensor");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

const std::string& Tensor::op() const {
  if (!node_) throw ContractViolation("use of undefined tensor");
  return node_->op;
}

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

std::vector<double>& Tensor::mutable_values() {
  if (!is_leaf()) throw ContractViolation("in-place update of a recorded (non-leaf) tensor");
  return node_->value;
}

Tensor Tensor::detach() const { return make_leaf(node_->value, node_->shape, false); }

Tensor make_op(std::string name, std::vector<double> value, Shape shape, std::vector<Tensor> inputs,
               BackwardFn backward, bool twice_differentiable) {
  auto n = new_node(std::move(name), std::move(value), std::move(shape));
  const bool any_grad =
      t_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any_grad) {
    n->requires_grad = true;
    n->twice_differentiable = twice_differentiable;
    n->from_backward = t_in_graph_backward;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

bool grad_enabled() { return t_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : prev_(t_grad_enabled) { t_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { t_grad_enabled = prev_; }

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return make_op("add", map_binary(a, b, [](double x, double y) { return x + y; }), a.shape(), {a, b},
                 [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return make_op("sub", map_binary(a, b, [](double x, double y) { return x - y; }), a.shape(), {a, b},
                 [](const Tensor& g, const std::vector<bool>& needs) {
                   return std::vector<Tensor>{g, needs[1] ? neg(g) : Tensor{}};
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  return make_op("mul", map_binary(a, b, [](double x, double y) { return x * y; }), a.shape(), {a, b},
                 [a, b](const Tensor& g, const std::vector<bool>& needs) {
                   return std::vector<Tensor>{needs[0] ? mul(g, b) : Tensor{}, needs[1] ? mul(g, a) : Tensor{}};
                 });
}

Tensor neg(const Tensor& a) {
  return make_op("neg", map_unary(a, [](double x) { return -x; }), a.shape(), {a},
                 [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{neg(g)}; });
}

Tensor scale(const Tensor& a, double c) {
  return make_op("scale", map_unary(a, [c](double x) { return x * c; }), a.shape(), {a},
                 [c](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{scale(g, c)}; });
}

Tensor shift(const Tensor& a, double c) {
  return make_op("shift", map_unary(a, [c](double x) { return x + c; }), a.shape(), {a},
                 [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; });
}

Tensor exp(const Tensor& a) {
  return make_op("exp", map_unary(a, [](double x) { return std::exp(x); }), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, exp(a))}; });
}

Tensor log(const Tensor& a) {
  return make_op("log", map_unary(a, [](double x) { return std::log(x); }), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, reciprocal(a))}; });
}

Tensor reciprocal(const Tensor& a) {
  return make_op("reciprocal", map_unary(a, [](double x) { return 1.0 / x; }), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) {
                   const Tensor r = reciprocal(a);
                   return std::vector<Tensor>{neg(mul(g, mul(r, r)))};
                 });
}

Tensor square(const Tensor& a) {
  return make_op("square", map_unary(a, [](double x) { return x * x; }), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, scale(a, 2.0))}; });
}

Tensor sigmoid(const Tensor& a) {
  return make_op("sigmoid", map_unary(a, stable_sigmoid), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) {
                   const Tensor s = sigmoid(a);
                   return std::vector<Tensor>{mul(g, mul(s, shift(neg(s), 1.0)))};
                 });
}

Tensor softplus(const Tensor& a) {
  return make_op("softplus", map_unary(a, stable_softplus), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{mul(g, sigmoid(a))}; });
}

Tensor tanh(const Tensor& a) {
  return make_op("tanh", map_unary(a, [](double x) { return std::tanh(x); }), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) {
                   const Tensor t = tanh(a);
                   return std::vector<Tensor>{mul(g, shift(neg(mul(t, t)), 1.0))};
                 });
}

Tensor relu(const Tensor& a) {
  return make_op("relu", map_unary(a, [](double x) { return x > 0 ? x : 0.0; }), a.shape(), {a},
                 [a](const Tensor& g, const std::vector<bool>&) {
                   // The step mask is locally constant, so the second derivative is zero a.e.
                   Tensor step = Tensor::from(map_unary(a, [](double x) { return x > 0 ? 1.0 : 0.0; }), a.shape());
                   return std::vector<Tensor>{mul(g, step)};
                 });
}

// ---- shape and reductions --------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  const Shape from = a.shape();
  std::vector<double> v(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(v), std::move(shape), {a},
                 [from](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{reshape(g, from)}; });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto in = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_op("transpose", std::move(out), {c, r}, {a},
                 [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{transpose(g)}; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const Shape from = a.shape();
  return make_op("sum", {s}, {}, {a}, [from](const Tensor& g, const std::vector<bool>&) {
    Shape ones(from.size(), 1);
    return std::vector<Tensor>{expand(reshape(g, ones), from)};
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_to(const Tensor& a, const Shape& shape) {
  check_broadcastable("sum_to", shape, a.shape());
  if (shape == a.shape()) return a;
  const auto idx = broadcast_index(shape, a.shape());
  std::vector<double> out(numel(shape), 0.0);
  auto in = a.values();
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] += in[i];
  const Shape from = a.shape();
  return make_op("sum_to", std::move(out), shape, {a},
                 [from](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{expand(g, from)}; });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  check_broadcastable("expand", a.shape(), shape);
  if (shape == a.shape()) return a;
  const auto idx = broadcast_index(a.shape(), shape);
  std::vector<double> out(idx.size());
  auto in = a.values();
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = in[idx[i]];
  const Shape from = a.shape();
  return make_op("expand", std::move(out), shape, {a},
                 [from](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{sum_to(g, from)}; });
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto x = a.values();
  auto y = b.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yrow[j];
    }
  }
  return make_op("matmul", std::move(out), {n, m}, {a, b}, [a, b](const Tensor& g, const std::vector<bool>& needs) {
    return std::vector<Tensor>{needs[0] ? matmul(g, transpose(b)) : Tensor{},
                               needs[1] ? matmul(transpose(a), g) : Tensor{}};
  });
}

namespace {
ConvDims conv_dims(const char* op, const Shape& x, const Shape& w) {
  if (x.size() != 3 || w.size() != 3 || x[1] != w[1]) {
    throw ShapeError(std::string(op) + ": input " + shape_str(x) + " vs kernel " + shape_str(w));
  }
  return ConvDims{x[0], x[1], w[0], x[2], w[2], (w[2] - 1) / 2};
}
}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w) {
  const auto d = conv_dims("conv1d", x.shape(), w.shape());
  std::vector<double> out(d.n * d.cout * d.t, 0.0);
  conv_forward(x.values(), w.values(), out, d);
  return make_op("conv1d", std::move(out), {d.n, d.cout, d.t}, {x, w},
                 [x, w, k = d.k](const Tensor& g, const std::vector<bool>& needs) {
                   return std::vector<Tensor>{needs[0] ? conv1d_input_grad(g, w) : Tensor{},
                                              needs[1] ? conv1d_weight_grad(x, g, k) : Tensor{}};
                 });
}

Tensor conv1d_input_grad(const Tensor& g, const Tensor& w) {
  if (g.rank() != 3 || w.rank() != 3 || g.dim(1) != w.dim(0)) {
    throw ShapeError("conv1d_input_grad: " + shape_str(g.shape()) + " vs kernel " + shape_str(w.shape()));
  }
  const ConvDims d{g.dim(0), w.dim(1), w.dim(0), g.dim(2), w.dim(2), (w.dim(2) - 1) / 2};
  std::vector<double> out(d.n * d.cin * d.t, 0.0);
  conv_input_adjoint(g.values(), w.values(), out, d);
  return make_op("conv1d_input_grad", std::move(out), {d.n, d.cin, d.t}, {g, w},
                 [g, w](const Tensor& h, const std::vector<bool>& needs) {
                   return std::vector<Tensor>{needs[0] ? conv1d(h, w) : Tensor{},
                                              needs[1] ? conv1d_weight_grad(h, g, w.dim(2)) : Tensor{}};
                 });
}

Tensor conv1d_weight_grad(const Tensor& x, const Tensor& g, std::size_t kernel) {
  if (x.rank() != 3 || g.rank() != 3 || x.dim(0) != g.dim(0) || x.dim(2) != g.dim(2) || kernel == 0) {
    throw ShapeError("conv1d_weight_grad: " + shape_str(x.shape()) + " vs " + shape_str(g.shape()));
  }
  const ConvDims d{x.dim(0), x.dim(1), g.dim(1), x.dim(2), kernel, (kernel - 1) / 2};
  std::vector<double> out(d.cout * d.cin * d.k, 0.0);
  conv_weight_adjoint(x.values(), g.values(), out, d);
  return make_op("conv1d_weight_grad", std::move(out), {d.cout, d.cin, d.k}, {x, g},
                 [x, g](const Tensor& h, const std::vector<bool>& needs) {
                   return std::vector<Tensor>{needs[0] ? conv1d_input_grad(g, h) : Tensor{},
                                              needs[1] ? conv1d(x, h) : Tensor{}};
                 });
}

Tensor log_softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("log_softmax expects [N, K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> row_max(n);
  auto v = logits.values();
  for (std::size_t i = 0; i < n; ++i) row_max[i] = *std::max_element(v.begin() + i * k, v.begin() + (i + 1) * k);
  // The shift cancels analytically, so it enters as a constant.
  const Tensor m = expand(Tensor::from(std::move(row_max), {n, 1}), {n, k});
  const Tensor shifted = sub(logits, m);
  const Tensor lse = log(sum_to(exp(shifted), {n, 1}));
  return sub(shifted, expand(lse, {n, k}));
}

// ---- differentiation -------------------------------------------------------

namespace {

// Post-order over nodes that carry history, so inputs precede consumers.
std::vector<Node*> topo_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].node();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

class BackwardScope {
 public:
  explicit BackwardScope(bool create_graph) : grad_(t_grad_enabled), graph_(t_in_graph_backward) {
    t_grad_enabled = create_graph;
    t_in_graph_backward = create_graph;
  }
  ~BackwardScope() {
    t_grad_enabled = grad_;
    t_in_graph_backward = graph_;
  }
  BackwardScope(const BackwardScope&) = delete;
  BackwardScope& operator=(const BackwardScope&) = delete;

 private:
  bool grad_;
  bool graph_;
};

}  // namespace

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, GradOptions opts) {
  if (!output.defined() || output.size() != 1) {
    throw ContractViolation("grad: output must be a single value, got shape " +
                            (output.defined() ? shape_str(output.shape()) : std::string("<undefined>")));
  }
  std::unordered_set<Node*> targets;
  for (const auto& w : wrt) {
    if (!w.defined()) throw ContractViolation("grad: undefined tensor in wrt");
    targets.insert(w.node());
  }

  std::vector<Node*> order;
  if (output.requires_grad()) order = topo_order(output.node());

  std::unordered_map<Node*, bool> relevant;
  relevant.reserve(order.size());
  for (Node* n : order) {
    bool r = targets.count(n) > 0;
    for (const auto& in : n->inputs) {
      auto it = relevant.find(in.node());
      if (it != relevant.end() && it->second) r = true;
    }
    relevant[n] = r;
  }
  for (const auto& w : wrt) {
    if (!relevant.count(w.node())) {
      throw DetachedInputError("grad: input tensor (op '" + w.op() + "', shape " + shape_str(w.shape()) +
                               ") is detached from the output");
    }
  }

  std::unordered_map<Node*, Tensor> grads;
  grads.emplace(output.node(), Tensor::ones(output.shape()));

  BackwardScope scope(opts.create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!relevant[n] || !n->backward) continue;
    auto gi = grads.find(n);
    if (gi == grads.end()) continue;
    std::vector<bool> needs(n->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].node();
      needs[i] = in && in->requires_grad && relevant[in];
      any = any || needs[i];
    }
    if (!any) continue;
    if (opts.create_graph && !n->twice_differentiable) {
      throw NonTwiceDifferentiableError("op '" + n->op + "' only supports first-order gradients");
    }
    const Tensor g = gi->second;
    if (!targets.count(n)) grads.erase(gi);
    auto in_grads = n->backward(g, needs);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (!needs[i]) continue;
      const Tensor& contrib = in_grads.at(i);
      if (!contrib.defined()) continue;
      if (contrib.shape() != n->inputs[i].shape()) {
        throw ShapeError("backward of '" + n->op + "' produced " + shape_str(contrib.shape()) + " for input " +
                         shape_str(n->inputs[i].shape()));
      }
      Node* in = n->inputs[i].node();
      auto [slot, inserted] = grads.try_emplace(in, contrib);
      if (!inserted) slot->second = add(slot->second, contrib);
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.node());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(w.shape()));
  }
  return out;
}

Tensor grad(const Tensor& output, const Tensor& wrt, GradOptions opts) {
  return grad(output, std::vector<Tensor>{wrt}, opts).front();
}

std::vector<Tensor> mixed_partial_grad(const Tensor& rr_loss, const std::vector<Tensor>& wrt_params) {
  if (!trace(rr_loss).has_second_order()) {
    throw ContractViolation(
        "mixed_partial_grad: loss does not contain a recorded input gradient (build it with create_graph)");
  }
  return grad(rr_loss, wrt_params, GradOptions{.create_graph = false});
}

// ---- introspection ---------------------------------------------------------

bool ComputationRecord::contains(std::uint64_t id) const {
  return std::any_of(entries.begin(), entries.end(), [id](const RecordEntry& e) { return e.output == id; });
}

bool ComputationRecord::has_second_order() const {
  return std::any_of(entries.begin(), entries.end(), [](const RecordEntry& e) { return e.from_backward; });
}

ComputationRecord trace(const Tensor& output) {
  ComputationRecord rec;
  if (!output.defined()) return rec;
  for (Node* n : topo_order(output.node())) {
    RecordEntry e;
    e.output = n->id;
    e.op = n->op;
    e.from_backward = n->from_backward;
    e.twice_differentiable = n->twice_differentiable;
    for (const auto& in : n->inputs) e.inputs.push_back(in.id());
    rec.entries.push_back(std::move(e));
  }
  return rec;
}

}  // namespace tsxil::ad
