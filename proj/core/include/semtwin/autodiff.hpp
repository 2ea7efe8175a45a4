#pragma once

// Minimal dense-tensor reverse-mode automatic differentiation.
//
// Tensors are rank-1 or rank-2 buffers of doubles with value semantics over a
// shared node. Operations executed while a Tape is active (and touching at
// least one requires-grad input) record a backward step; Tape::backward runs
// the steps in reverse recording order, which is a valid reverse topological
// order of the forward graph. Tapes are confined to one thread; independent
// tapes on different threads may run concurrently.

#include <functional>
#include <memory>
#include <vector>

#include "semtwin/common.hpp"

namespace semtwin::ad {

using Shape = std::vector<int>;

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, only when requires_grad
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int size() const { return static_cast<int>(node_->value.size()); }
  // rank-2 accessors; rank-1 tensors behave as a single row
  int rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  int cols() const { return rank() == 2 ? node_->shape[1] : node_->shape[0]; }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double operator[](int i) const { return node_->value[static_cast<size_t>(i)]; }
  double at(int r, int c) const { return node_->value[static_cast<size_t>(r) * cols() + c]; }
  double item() const;  // scalar tensors only

  bool requires_grad() const { return node_->requires_grad; }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  // Value copy that does not participate in gradients (the sg(.) operator).
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
  friend class Tape;
  friend Tensor make_op_result(Shape, std::vector<double>, const std::vector<Tensor>&);
};

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static bool active();
  static Tape* current();

  // Seeds d(loss)/d(loss)=1 and runs recorded steps newest-first, visiting
  // each recorded op exactly once. The tape is cleared afterwards.
  void backward(const Tensor& loss);
  void clear() { steps_.clear(); }
  size_t op_count() const { return steps_.size(); }

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

 private:
  std::vector<std::function<void()>> steps_;
};

// ---- Operations -----------------------------------------------------------
// Elementwise binary ops accept equal shapes, or a rank-1 rhs broadcast over
// the leading (row) dimension of a rank-2 lhs. No other broadcasting.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);          // input clamped to >= 1e-12
Tensor clamp_min(const Tensor& a, double floor);

Tensor sum(const Tensor& a);       // -> scalar
Tensor mean(const Tensor& a);      // -> scalar
Tensor sum_rows(const Tensor& a);  // [B,C] -> [B,1]

Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor stack_rows(const std::vector<Tensor>& rows);  // rank-1 rows -> rank-2
Tensor flatten(const Tensor& a);                     // rank-2 -> rank-1

// mean + std (*) eps with eps recorded as a constant; gradients flow into
// mean and std. Passing eps = 0 gives the degenerate (mean) sample.
Tensor reparam_sample(const Tensor& mean, const Tensor& std, const std::vector<double>& eps);

Tensor stop_gradient(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }
inline Tensor operator-(const Tensor& a) { return mul_scalar(a, -1.0); }

}  // namespace semtwin::ad
