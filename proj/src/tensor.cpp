#include "harvim/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "harvim/errors.hpp"

namespace harvim {

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl>> parents;
  VjpFn vjp;
  std::shared_ptr<TensorImpl> grad;
};

}  // namespace detail

using detail::TensorAccess;
using detail::TensorImpl;

// ---------------------------------------------------------------------------
// Precision and grad mode

namespace {

std::atomic<Precision> g_precision{Precision::f32};
thread_local bool g_grad_enabled = true;

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace

Precision default_precision() { return g_precision.load(std::memory_order_relaxed); }
void set_default_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }

PrecisionGuard::PrecisionGuard(Precision p) : saved_(default_precision()) {
  set_default_precision(p);
}
PrecisionGuard::~PrecisionGuard() { set_default_precision(saved_); }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

EnableGradGuard::EnableGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Tensor basics

namespace {

std::shared_ptr<TensorImpl> make_leaf(Shape shape, std::vector<double> data,
                                      bool requires_grad, const char* what) {
  if (numel(shape) != data.size()) {
    throw ShapeError(std::string(what) + ": shape " + shape_str(shape) +
                     " does not match data length " + std::to_string(data.size()));
  }
  const bool narrow = default_precision() == Precision::f32;
  for (double& v : data) {
    if (narrow) v = static_cast<double>(static_cast<float>(v));
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(what) + ": non-finite value");
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return impl;
}

const TensorImpl& deref(const Tensor& t, const char* what) {
  const auto& impl = TensorAccess::impl(t);
  if (!impl) throw Error(std::string(what) + ": undefined tensor");
  return *impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(numel(shape), 0.0);
  return TensorAccess::wrap(make_leaf(std::move(shape), std::move(data),
                                      requires_grad, "zeros"));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(numel(shape), value);
  return TensorAccess::wrap(make_leaf(std::move(shape), std::move(data),
                                      requires_grad, "full"));
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return TensorAccess::wrap(make_leaf({}, {value}, requires_grad, "scalar"));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return TensorAccess::wrap(make_leaf(std::move(shape), std::move(data),
                                      requires_grad, "from_data"));
}

const Shape& Tensor::shape() const { return deref(*this, "shape").shape; }
std::size_t Tensor::size() const { return deref(*this, "size").data.size(); }
std::size_t Tensor::rank() const { return deref(*this, "rank").shape.size(); }

double Tensor::item() const {
  const auto& impl = deref(*this, "item");
  if (impl.data.size() != 1) {
    throw ShapeError("item: tensor has " + std::to_string(impl.data.size()) +
                     " elements, expected 1");
  }
  return impl.data[0];
}

double Tensor::at(std::size_t flat_index) const {
  const auto& impl = deref(*this, "at");
  if (flat_index >= impl.data.size()) throw ShapeError("at: index out of range");
  return impl.data[flat_index];
}

std::span<const double> Tensor::data() const {
  const auto& impl = deref(*this, "data");
  return {impl.data.data(), impl.data.size()};
}

bool Tensor::requires_grad() const { return deref(*this, "requires_grad").requires_grad; }

Tensor Tensor::grad() const {
  const auto& impl = deref(*this, "grad");
  return TensorAccess::wrap(impl.grad);
}

void Tensor::zero_grad() {
  const auto& impl = TensorAccess::impl(*this);
  if (impl) impl->grad = nullptr;
}

Tensor Tensor::detach() const {
  const auto& impl = deref(*this, "detach");
  auto copy = std::make_shared<TensorImpl>();
  copy->shape = impl.shape;
  copy->data = impl.data;
  copy->requires_grad = false;
  return TensorAccess::wrap(std::move(copy));
}

const void* Tensor::node_id() const { return TensorAccess::impl(*this).get(); }

// ---------------------------------------------------------------------------
// custom_op: uniform result construction, rounding, finiteness, recording

Tensor custom_op(const char* name, Shape out_shape, std::vector<double> out_data,
                 std::vector<Tensor> parents, VjpFn vjp) {
  if (numel(out_shape) != out_data.size()) {
    throw ShapeError(std::string(name) + ": bad output buffer size");
  }
  const bool narrow = default_precision() == Precision::f32;
  for (double& v : out_data) {
    if (narrow) v = static_cast<double>(static_cast<float>(v));
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(name) + ": produced a non-finite value");
    }
  }
  bool record = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) {
        record = true;
        break;
      }
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(out_shape);
  impl->data = std::move(out_data);
  impl->requires_grad = record;
  if (record) {
    impl->op = name;
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) impl->parents.push_back(TensorAccess::impl(p));
    impl->vjp = std::move(vjp);
  }
  return TensorAccess::wrap(std::move(impl));
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
    const std::size_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Row-major strides of `in` as seen from the broadcast output shape:
// 0 where the input dimension is 1 or absent.
std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> in_strides(in.size());
  std::size_t acc = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    in_strides[i] = acc;
    acc *= in[i];
  }
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    strides[off + i] = (in[i] == 1) ? 0 : in_strides[i];
  }
  return strides;
}

template <typename F>
std::vector<double> broadcast_apply(const Tensor& a, const Tensor& b,
                                    const Shape& out_shape, F f) {
  const auto& da = a.data();
  const auto& db = b.data();
  const std::size_t n = numel(out_shape);
  std::vector<double> out(n);
  if (a.shape() == b.shape()) {  // fast path, no index arithmetic
    for (std::size_t i = 0; i < n; ++i) out[i] = f(da[i], db[i]);
    return out;
  }
  const auto sa = bcast_strides(a.shape(), out_shape);
  const auto sb = bcast_strides(b.shape(), out_shape);
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(da[ia], db[ib]);
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <typename F>
Tensor unary_op(const char* name, const Tensor& a, F f, VjpFn vjp) {
  const auto& da = deref(a, name);
  std::vector<double> out(da.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da.data[i]);
  return custom_op(name, da.shape, std::move(out), {a}, std::move(vjp));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  Shape so = broadcast_shapes(a.shape(), b.shape());
  auto out = broadcast_apply(a, b, so, [](double x, double y) { return x + y; });
  Shape ash = a.shape(), bsh = b.shape();
  return custom_op("add", std::move(so), std::move(out), {a, b},
                   [ash, bsh](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{reduce_to(adj, ash), reduce_to(adj, bsh)};
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape so = broadcast_shapes(a.shape(), b.shape());
  auto out = broadcast_apply(a, b, so, [](double x, double y) { return x - y; });
  Shape ash = a.shape(), bsh = b.shape();
  return custom_op("sub", std::move(so), std::move(out), {a, b},
                   [ash, bsh](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{reduce_to(adj, ash),
                                                reduce_to(neg(adj), bsh)};
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape so = broadcast_shapes(a.shape(), b.shape());
  auto out = broadcast_apply(a, b, so, [](double x, double y) { return x * y; });
  return custom_op("mul", std::move(so), std::move(out), {a, b},
                   [a, b](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{reduce_to(mul(adj, b), a.shape()),
                                                reduce_to(mul(adj, a), b.shape())};
                   });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("divide: zero denominator");
  }
  Shape so = broadcast_shapes(a.shape(), b.shape());
  auto out = broadcast_apply(a, b, so, [](double x, double y) { return x / y; });
  return custom_op("divide", std::move(so), std::move(out), {a, b},
                   [a, b](const Tensor&, const Tensor& adj) {
                     Tensor da = reduce_to(divide(adj, b), a.shape());
                     Tensor db = reduce_to(neg(divide(mul(adj, a), mul(b, b))), b.shape());
                     return std::vector<Tensor>{da, db};
                   });
}

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](double x) { return -x; },
                  [](const Tensor&, const Tensor& adj) {
                    return std::vector<Tensor>{neg(adj)};
                  });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](const Tensor& self, const Tensor& adj) {
                    return std::vector<Tensor>{mul(adj, self)};
                  });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (v <= 0.0) throw DomainError("log: non-positive argument");
  }
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [a](const Tensor&, const Tensor& adj) {
                    return std::vector<Tensor>{divide(adj, a)};
                  });
}

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](const Tensor& self, const Tensor& adj) {
                    Tensor one_minus = sub(Tensor::scalar(1.0), mul(self, self));
                    return std::vector<Tensor>{mul(adj, one_minus)};
                  });
}

Tensor sigmoid(const Tensor& a) {
  auto f = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_op("sigmoid", a, f,
                  [](const Tensor& self, const Tensor& adj) {
                    Tensor d = mul(self, sub(Tensor::scalar(1.0), self));
                    return std::vector<Tensor>{mul(adj, d)};
                  });
}

Tensor pow(const Tensor& a, double exponent) {
  const bool integral = exponent == std::floor(exponent);
  if (!integral) {
    for (double v : a.data()) {
      if (v < 0.0) throw DomainError("pow: negative base with non-integer exponent");
    }
  }
  return unary_op("pow", a,
                  [exponent](double x) { return std::pow(x, exponent); },
                  [a, exponent](const Tensor&, const Tensor& adj) {
                    Tensor d = mul(Tensor::scalar(exponent), pow(a, exponent - 1.0));
                    return std::vector<Tensor>{mul(adj, d)};
                  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul: operands must be 2-D, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const auto da = a.data();
  const auto db = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = da[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &db[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return custom_op("matmul", {m, n}, std::move(out), {a, b},
                   [a, b](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{matmul(adj, transpose(b)),
                                                matmul(transpose(a), adj)};
                   });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: operand must be 2-D");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto da = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = da[i * n + j];
  return custom_op("transpose", {n, m}, std::move(out), {a},
                   [](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{transpose(adj)};
                   });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Shape ash = a.shape();
  return custom_op("sum", {}, {acc}, {a},
                   [ash](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{broadcast_to(adj, ash)};
                   });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return mul(sum(a), Tensor::scalar(1.0 / static_cast<double>(n)));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  Shape ash = a.shape();
  return custom_op("reshape", std::move(shape), std::move(out), {a},
                   [ash](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{reshape(adj, ash)};
                   });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (broadcast_shapes(a.shape(), shape) != shape) {
    throw ShapeError("broadcast_to: " + shape_str(a.shape()) +
                     " does not broadcast to " + shape_str(shape));
  }
  // Reuse the binary walker against a zero dummy of the target shape.
  Tensor dummy = Tensor::zeros(shape);
  auto out = broadcast_apply(a, dummy, shape, [](double x, double) { return x; });
  Shape ash = a.shape();
  return custom_op("broadcast_to", Shape(shape), std::move(out), {a},
                   [ash](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{reduce_to(adj, ash)};
                   });
}

Tensor reduce_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shapes(shape, a.shape()) != a.shape()) {
    throw ShapeError("reduce_to: " + shape_str(a.shape()) + " does not reduce to " +
                     shape_str(shape));
  }
  const auto strides = bcast_strides(shape, a.shape());
  const auto& src = a.data();
  std::vector<double> out(numel(shape), 0.0);
  std::vector<std::size_t> idx(a.rank(), 0);
  std::size_t io = 0;
  const Shape& ash = a.shape();
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[io] += src[i];
    for (std::size_t d = ash.size(); d-- > 0;) {
      ++idx[d];
      io += strides[d];
      if (idx[d] < ash[d]) break;
      io -= strides[d] * ash[d];
      idx[d] = 0;
    }
  }
  Shape ash_copy = ash;
  return custom_op("reduce_to", Shape(shape), std::move(out), {a},
                   [ash_copy](const Tensor&, const Tensor& adj) {
                     return std::vector<Tensor>{broadcast_to(adj, ash_copy)};
                   });
}

Tensor concat(const std::vector<Tensor>& parts) {
  std::vector<double> out;
  std::vector<std::size_t> lengths;
  std::vector<Tensor> parents;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw ShapeError("concat: parts must be 1-D");
    lengths.push_back(p.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p);
  }
  const std::size_t total_len = out.size();
  return custom_op("concat", {total_len}, std::move(out), std::move(parents),
                   [lengths](const Tensor&, const Tensor& adj) {
                     std::vector<Tensor> grads;
                     std::size_t off = 0;
                     for (std::size_t len : lengths) {
                       grads.push_back(slice(adj, off, len));
                       off += len;
                     }
                     return grads;
                   });
}

Tensor slice(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() != 1) throw ShapeError("slice: operand must be 1-D");
  if (start + len > a.size()) throw ShapeError("slice: range out of bounds");
  std::vector<double> out(a.data().begin() + start, a.data().begin() + start + len);
  const std::size_t total = a.size();
  return custom_op("slice", {len}, std::move(out), {a},
                   [start, len, total](const Tensor&, const Tensor& adj) {
                     std::vector<Tensor> pieces;
                     if (start > 0) pieces.push_back(Tensor::zeros({start}));
                     pieces.push_back(adj);
                     if (start + len < total)
                       pieces.push_back(Tensor::zeros({total - start - len}));
                     return std::vector<Tensor>{concat(pieces)};
                   });
}

// ---------------------------------------------------------------------------
// Reverse pass

namespace {

using NodePtr = std::shared_ptr<TensorImpl>;

// Post-order over the ancestor graph; root comes last. Each node is
// visited exactly once even when it feeds several consumers, and a
// back-edge (impossible for a well-formed tape) is reported.
std::vector<NodePtr> topo_order(const NodePtr& root) {
  std::vector<NodePtr> order;
  std::unordered_set<TensorImpl*> done;
  std::unordered_set<TensorImpl*> on_stack{root.get()};
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      const NodePtr& child = node->parents[next_child++];
      if (!child->requires_grad || done.count(child.get())) continue;
      if (on_stack.count(child.get())) {
        throw Error("backward: cycle in the tape");
      }
      on_stack.insert(child.get());
      stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      done.insert(node.get());
      on_stack.erase(node.get());
      stack.pop_back();
    }
  }
  return order;
}

// Runs the reverse pass and returns the full adjoint map. Leaf nodes
// (requires_grad, no recorded op) are appended to `leaves` if given.
std::unordered_map<TensorImpl*, Tensor> reverse_pass(const Tensor& root,
                                                     std::vector<NodePtr>* leaves) {
  if (!root.defined()) throw Error("grad: undefined root");
  if (root.size() != 1) {
    throw ShapeError("grad: root must be scalar, got shape " +
                     shape_str(root.shape()));
  }
  std::unordered_map<TensorImpl*, Tensor> adjoint;
  if (!root.requires_grad()) return adjoint;

  const auto order = topo_order(TensorAccess::impl(root));
  adjoint.emplace(TensorAccess::impl(root).get(), Tensor::full(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr& node = *it;
    auto found = adjoint.find(node.get());
    if (found == adjoint.end()) continue;  // unreachable side branch
    if (!node->vjp) {
      if (leaves) leaves->push_back(node);
      continue;
    }
    const Tensor self = TensorAccess::wrap(node);
    std::vector<Tensor> contribs = node->vjp(self, found->second);
    if (contribs.size() != node->parents.size()) {
      throw Error(std::string("grad: vjp of ") + node->op +
                  " returned wrong number of gradients");
    }
    for (std::size_t i = 0; i < contribs.size(); ++i) {
      TensorImpl* parent = node->parents[i].get();
      if (!parent->requires_grad || !contribs[i].defined()) continue;
      if (contribs[i].shape() != parent->shape) {
        throw Error(std::string("grad: vjp of ") + node->op + " produced shape " +
                    shape_str(contribs[i].shape()) + " for parent of shape " +
                    shape_str(parent->shape));
      }
      auto slot = adjoint.find(parent);
      if (slot == adjoint.end()) {
        adjoint.emplace(parent, contribs[i]);
      } else {
        slot->second = add(slot->second, contribs[i]);
      }
    }
  }
  return adjoint;
}

}  // namespace

std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  std::unordered_map<TensorImpl*, Tensor> adjoint;
  if (create_graph) {
    adjoint = reverse_pass(root, nullptr);
  } else {
    NoGradGuard no_grad;
    adjoint = reverse_pass(root, nullptr);
  }
  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& input : inputs) {
    auto found = adjoint.find(TensorAccess::impl(input).get());
    result.push_back(found != adjoint.end() ? found->second
                                            : Tensor::zeros(input.shape()));
  }
  return result;
}

void backward(const Tensor& root) {
  std::vector<NodePtr> leaves;
  std::unordered_map<TensorImpl*, Tensor> adjoint;
  {
    NoGradGuard no_grad;
    adjoint = reverse_pass(root, &leaves);
  }
  for (const NodePtr& leaf : leaves) {
    auto found = adjoint.find(leaf.get());
    if (found != adjoint.end()) {
      leaf->grad = TensorAccess::impl(found->second);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite differences

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h) {
  if (h <= 0.0) throw DomainError("finite_diff_grad: h must be positive");
  NoGradGuard no_grad;
  std::vector<double> base(x.data().begin(), x.data().end());
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> probe = base;
    probe[i] = base[i] + h;
    const double fp = f(Tensor::from_data(x.shape(), probe));
    probe[i] = base[i] - h;
    const double fm = f(Tensor::from_data(x.shape(), probe));
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("finite_diff_grad: non-finite objective at probe point");
    }
    g[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_data(x.shape(), std::move(g));
}

// ---------------------------------------------------------------------------
// Random tensors

Tensor normal_tensor(SeededRng& rng, Shape shape, double stddev, double mean) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = mean + stddev * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(data));
}

Tensor uniform_tensor(SeededRng& rng, Shape shape, double lo, double hi) {
  std::vector<double> data(numel(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace harvim
