#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "harvim/rng.hpp"

namespace harvim {

/// Working precision of tensor arithmetic. Values are held as doubles
/// internally; in f32 mode every operation result is rounded through
/// IEEE binary32, so stored values are exactly what a float pipeline
/// would hold. Gradient checks switch to f64 where no rounding occurs.
enum class Precision { f32, f64 };

Precision default_precision();
void set_default_precision(Precision p);

/// Scoped precision switch; restores the previous mode on destruction.
class PrecisionGuard {
 public:
  explicit PrecisionGuard(Precision p);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  Precision saved_;
};

using Shape = std::vector<std::size_t>;

namespace detail {
struct TensorImpl;
struct TensorAccess;
}

/// Dense row-major tensor. Immutable once created; copies share storage.
/// Operations on tensors that require grad record a tape node so that
/// backward()/grad() can replay the chain rule in reverse.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const;

  /// Value of a rank-0 or single-element tensor.
  double item() const;
  double at(std::size_t flat_index) const;
  std::span<const double> data() const;

  bool requires_grad() const;
  /// Gradient filled in by the last backward() pass; undefined before.
  Tensor grad() const;
  void zero_grad();

  /// Same values, cut off from the tape.
  Tensor detach() const;

  /// Stable identity of the underlying node (for diagnostics and maps).
  const void* node_id() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
  friend struct detail::TensorAccess;
};

namespace detail {
/// Internal handle used by op implementations; not part of the public API.
struct TensorAccess {
  static const std::shared_ptr<TensorImpl>& impl(const Tensor& t) {
    return t.impl_;
  }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
    return Tensor(std::move(impl));
  }
};
}  // namespace detail

// ---------------------------------------------------------------------------
// Grad mode

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

/// Forces tape recording back on. Routines that differentiate an
/// internal objective (solvers, score evaluation) own their tape and
/// must work even when the caller disabled recording.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast numpy-style.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // 2-D only

Tensor sum(const Tensor& a);   // -> rank-0
Tensor mean(const Tensor& a);  // -> rank-0

Tensor reshape(const Tensor& a, Shape shape);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
/// Sums over broadcast axes until `a` has the given shape; inverse of
/// broadcast_to and the reduction used by every broadcasting backward rule.
Tensor reduce_to(const Tensor& a, const Shape& shape);

Tensor concat(const std::vector<Tensor>& parts);        // 1-D
Tensor slice(const Tensor& a, std::size_t start, std::size_t len);  // 1-D

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(const Tensor& a, double b) { return divide(a, Tensor::scalar(b)); }
inline Tensor operator/(double a, const Tensor& b) { return divide(Tensor::scalar(a), b); }

/// Extension point for operations with hand-written backward rules
/// (e.g. the glyph warp). The vjp receives the node and its incoming
/// adjoint and returns one adjoint contribution per parent; entries may
/// be undefined Tensors for parents with no gradient.
using VjpFn =
    std::function<std::vector<Tensor>(const Tensor& self, const Tensor& adjoint)>;
Tensor custom_op(const char* name, Shape out_shape, std::vector<double> out_data,
                 std::vector<Tensor> parents, VjpFn vjp);

/// Broadcast result shape of two operand shapes (numpy rules), or throws.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// ---------------------------------------------------------------------------
// Autodiff entry points

/// Reverse pass from a scalar root. Fills .grad() on every reachable
/// leaf tensor that requires grad (overwriting previous gradients).
/// A constant root is a no-op: nothing depends on any leaf.
void backward(const Tensor& root);

/// Gradients of a scalar root with respect to `inputs` (leaves or
/// intermediates). Inputs the root does not depend on get zeros.
/// With create_graph the returned gradients are themselves recorded on
/// the tape, enabling Hessian-vector products via a second pass.
std::vector<Tensor> grad(const Tensor& root, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h per
/// coordinate. The independent oracle for every gradient test in the
/// repo; deliberately knows nothing about the tape.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h);

// ---------------------------------------------------------------------------
// Random tensors

Tensor normal_tensor(SeededRng& rng, Shape shape, double stddev = 1.0,
                     double mean = 0.0);
Tensor uniform_tensor(SeededRng& rng, Shape shape, double lo = 0.0,
                      double hi = 1.0);

}  // namespace harvim
