#include "semtwin/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace semtwin::ad {

namespace {

thread_local Tape* g_tape = nullptr;

constexpr double kLogFloor = 1e-12;

int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

void check_shape(const Shape& s) {
  SEMTWIN_CHECK(!s.empty() && s.size() <= 2, "tensor rank must be 1 or 2");
  for (int d : s) SEMTWIN_CHECK(d > 0, "tensor dimensions must be positive");
}

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values,
                                        bool requires_grad) {
  check_shape(shape);
  SEMTWIN_CHECK(static_cast<int>(values.size()) == shape_numel(shape),
                "value count must equal product of shape");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return n;
}

using NodePtr = std::shared_ptr<detail::Node>;

bool track(const Tensor& t) { return Tape::active() && t.requires_grad(); }

void ensure_grad(const NodePtr& n) {
  if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
}

// Broadcast classification for elementwise binaries.
enum class Bcast { Same, RowVector };  // RowVector: b rank-1 over rows of rank-2 a

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.size()) return Bcast::RowVector;
  throw ContractViolation(std::string(op) + ": incompatible shapes");
}

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> values,
                      const std::vector<Tensor>& inputs) {
  bool rg = false;
  if (Tape::active()) {
    for (const auto& in : inputs) rg = rg || in.requires_grad();
  }
  return Tensor(make_node(std::move(shape), std::move(values), rg));
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return Tensor(make_node(shape, std::vector<double>(shape_numel(shape), v), requires_grad));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_node(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_node({1}, {v}, requires_grad));
}

double Tensor::item() const {
  SEMTWIN_CHECK(size() == 1, "item() requires a scalar tensor");
  return node_->value[0];
}

std::vector<double>& Tensor::grad() {
  SEMTWIN_CHECK(node_ && node_->requires_grad, "grad() on a tensor without gradient");
  ensure_grad(node_);
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  SEMTWIN_CHECK(node_ && node_->requires_grad, "grad() on a tensor without gradient");
  ensure_grad(node_);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(make_node(node_->shape, node_->value, false));
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
  SEMTWIN_CHECK(g_tape == nullptr, "a tape is already active on this thread");
  g_tape = this;
}

Tape::~Tape() { g_tape = nullptr; }

bool Tape::active() { return g_tape != nullptr; }
Tape* Tape::current() { return g_tape; }

void Tape::backward(const Tensor& loss) {
  SEMTWIN_CHECK(g_tape == this, "backward() must run on the active tape");
  SEMTWIN_CHECK(loss.size() == 1, "backward() requires a scalar loss");
  SEMTWIN_CHECK(loss.requires_grad(), "loss does not depend on any tracked tensor");
  auto n = loss.node();
  ensure_grad(n);
  n->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

// ---- op helpers ------------------------------------------------------------

namespace {

void record_if_tracked(const std::vector<Tensor>& ins, const Tensor& out,
                       std::function<void()> step) {
  if (out.requires_grad()) {
    ensure_grad(out.node());
    for (const auto& in : ins) {
      if (in.requires_grad()) ensure_grad(in.node());
    }
    Tape::current()->record(std::move(step));
  }
}

// Unary elementwise: out = f(a), da += g * dfd(a_value, out_value)
template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF dfd) {
  std::vector<double> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = f(a.values()[i]);
  Tensor out = make_op_result(a.shape(), std::move(v), {a});
  auto an = a.node();
  auto on = out.node();
  record_if_tracked({a}, out, [an, on, dfd]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < an->value.size(); ++i)
      an->grad[i] += on->grad[i] * dfd(an->value[i], on->value[i]);
  });
  return out;
}

}  // namespace

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  SEMTWIN_CHECK(b.rank() == 2, "matmul: rhs must be rank-2");
  const int m = a.rows(), k = a.cols(), k2 = b.shape()[0], n = b.shape()[1];
  SEMTWIN_CHECK(k == k2, "matmul: inner dimensions do not match");
  std::vector<double> v(static_cast<size_t>(m) * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[static_cast<size_t>(p) * n];
      double* orow = &v[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Shape out_shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  Tensor out = make_op_result(std::move(out_shape), std::move(v), {a, b});
  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  record_if_tracked({a, b}, out, [an, bn, on, m, k, n]() {
    // dA = dC * B^T ; dB = A^T * dC
    if (an->requires_grad) {
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &on->grad[static_cast<size_t>(i) * n];
          const double* brow = &bn->value[static_cast<size_t>(p) * n];
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          an->grad[static_cast<size_t>(i) * k + p] += acc;
        }
    }
    if (bn->requires_grad) {
      for (int i = 0; i < m; ++i) {
        const double* arow = &an->value[static_cast<size_t>(i) * k];
        const double* grow = &on->grad[static_cast<size_t>(i) * n];
        for (int p = 0; p < k; ++p) {
          const double aip = arow[p];
          if (aip == 0.0) continue;
          double* brow = &bn->grad[static_cast<size_t>(p) * n];
          for (int j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
      }
    }
  });
  return out;
}

// ---- elementwise binaries ---------------------------------------------------

namespace {

template <typename F, typename DA, typename DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA dfa, DB dfb) {
  const Bcast bc = classify(a, b, name);
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> v(a.values().size());
  const auto& av = a.values();
  const auto& bv = b.values();
  if (bc == Bcast::Same) {
    for (size_t i = 0; i < v.size(); ++i) v[i] = f(av[i], bv[i]);
  } else {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const size_t idx = static_cast<size_t>(i) * cols + j;
        v[idx] = f(av[idx], bv[j]);
      }
  }
  Tensor out = make_op_result(a.shape(), std::move(v), {a, b});
  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  record_if_tracked({a, b}, out, [an, bn, on, bc, rows, cols, dfa, dfb]() {
    if (bc == Bcast::Same) {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        const double g = on->grad[i];
        if (an->requires_grad) an->grad[i] += g * dfa(an->value[i], bn->value[i]);
        if (bn->requires_grad) bn->grad[i] += g * dfb(an->value[i], bn->value[i]);
      }
    } else {
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
          const size_t idx = static_cast<size_t>(i) * cols + j;
          const double g = on->grad[idx];
          if (an->requires_grad) an->grad[idx] += g * dfa(an->value[idx], bn->value[j]);
          if (bn->requires_grad) bn->grad[j] += g * dfb(an->value[idx], bn->value[j]);
        }
    }
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary_op(
      a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

// ---- elementwise unaries ----------------------------------------------------

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  // log(1+e^x), linearized for large |x| to avoid overflow
  return unary_op(
      a,
      [](double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::log(std::max(x, kLogFloor)); },
      [](double x, double) { return x > kLogFloor ? 1.0 / x : 0.0; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary_op(
      a, [floor](double x) { return std::max(x, floor); },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor out = make_op_result({1}, {acc}, {a});
  auto an = a.node();
  auto on = out.node();
  record_if_tracked({a}, out, [an, on]() {
    if (!an->requires_grad) return;
    const double g = on->grad[0];
    for (double& gi : an->grad) gi += g;
  });
  return out;
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / a.size();
  double acc = 0.0;
  for (double x : a.values()) acc += x;
  Tensor out = make_op_result({1}, {acc * inv}, {a});
  auto an = a.node();
  auto on = out.node();
  record_if_tracked({a}, out, [an, on, inv]() {
    if (!an->requires_grad) return;
    const double g = on->grad[0] * inv;
    for (double& gi : an->grad) gi += g;
  });
  return out;
}

Tensor sum_rows(const Tensor& a) {
  SEMTWIN_CHECK(a.rank() == 2, "sum_rows: rank-2 input required");
  const int rows = a.rows(), cols = a.cols();
  std::vector<double> v(rows, 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) v[i] += a.values()[static_cast<size_t>(i) * cols + j];
  Tensor out = make_op_result({rows, 1}, std::move(v), {a});
  auto an = a.node();
  auto on = out.node();
  record_if_tracked({a}, out, [an, on, rows, cols]() {
    if (!an->requires_grad) return;
    for (int i = 0; i < rows; ++i) {
      const double g = on->grad[i];
      for (int j = 0; j < cols; ++j) an->grad[static_cast<size_t>(i) * cols + j] += g;
    }
  });
  return out;
}

// ---- layout ops -------------------------------------------------------------

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  SEMTWIN_CHECK(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
  const int rows = a.rows(), cols = a.cols(), w = c1 - c0;
  std::vector<double> v(static_cast<size_t>(rows) * w);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < w; ++j)
      v[static_cast<size_t>(i) * w + j] = a.values()[static_cast<size_t>(i) * cols + c0 + j];
  Shape out_shape = a.rank() == 1 ? Shape{w} : Shape{rows, w};
  Tensor out = make_op_result(std::move(out_shape), std::move(v), {a});
  auto an = a.node();
  auto on = out.node();
  record_if_tracked({a}, out, [an, on, rows, cols, w, c0]() {
    if (!an->requires_grad) return;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < w; ++j)
        an->grad[static_cast<size_t>(i) * cols + c0 + j] +=
            on->grad[static_cast<size_t>(i) * w + j];
  });
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  SEMTWIN_CHECK(a.rank() == b.rank() && a.rows() == b.rows(),
                "concat_cols: row counts differ");
  const int rows = a.rows(), ca = a.cols(), cb = b.cols(), w = ca + cb;
  std::vector<double> v(static_cast<size_t>(rows) * w);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < ca; ++j)
      v[static_cast<size_t>(i) * w + j] = a.values()[static_cast<size_t>(i) * ca + j];
    for (int j = 0; j < cb; ++j)
      v[static_cast<size_t>(i) * w + ca + j] = b.values()[static_cast<size_t>(i) * cb + j];
  }
  Shape out_shape = a.rank() == 1 ? Shape{w} : Shape{rows, w};
  Tensor out = make_op_result(std::move(out_shape), std::move(v), {a, b});
  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  record_if_tracked({a, b}, out, [an, bn, on, rows, ca, cb, w]() {
    for (int i = 0; i < rows; ++i) {
      if (an->requires_grad)
        for (int j = 0; j < ca; ++j)
          an->grad[static_cast<size_t>(i) * ca + j] += on->grad[static_cast<size_t>(i) * w + j];
      if (bn->requires_grad)
        for (int j = 0; j < cb; ++j)
          bn->grad[static_cast<size_t>(i) * cb + j] +=
              on->grad[static_cast<size_t>(i) * w + ca + j];
    }
  });
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  SEMTWIN_CHECK(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
                "concat_rows: rank-2 with equal column counts required");
  const int ra = a.rows(), rb = b.rows(), cols = a.cols();
  std::vector<double> v;
  v.reserve(static_cast<size_t>(ra + rb) * cols);
  v.insert(v.end(), a.values().begin(), a.values().end());
  v.insert(v.end(), b.values().begin(), b.values().end());
  Tensor out = make_op_result({ra + rb, cols}, std::move(v), {a, b});
  auto an = a.node();
  auto bn = b.node();
  auto on = out.node();
  record_if_tracked({a, b}, out, [an, bn, on]() {
    const size_t na = an->value.size();
    if (an->requires_grad)
      for (size_t i = 0; i < na; ++i) an->grad[i] += on->grad[i];
    if (bn->requires_grad)
      for (size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] += on->grad[na + i];
  });
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  SEMTWIN_CHECK(!rows.empty(), "stack_rows: empty input");
  const int cols = rows[0].size();
  std::vector<double> v;
  v.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    SEMTWIN_CHECK(r.rank() == 1 && r.size() == cols, "stack_rows: rows must be equal-length rank-1");
    v.insert(v.end(), r.values().begin(), r.values().end());
  }
  Tensor out = make_op_result({static_cast<int>(rows.size()), cols}, std::move(v), rows);
  std::vector<NodePtr> ins;
  ins.reserve(rows.size());
  for (const auto& r : rows) ins.push_back(r.node());
  auto on = out.node();
  record_if_tracked(rows, out, [ins, on, cols]() {
    for (size_t r = 0; r < ins.size(); ++r) {
      if (!ins[r]->requires_grad) continue;
      for (int j = 0; j < cols; ++j)
        ins[r]->grad[j] += on->grad[r * static_cast<size_t>(cols) + j];
    }
  });
  return out;
}

Tensor flatten(const Tensor& a) {
  Tensor out = make_op_result({a.size()}, a.values(), {a});
  auto an = a.node();
  auto on = out.node();
  record_if_tracked({a}, out, [an, on]() {
    if (!an->requires_grad) return;
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
  });
  return out;
}

Tensor reparam_sample(const Tensor& mean, const Tensor& std, const std::vector<double>& eps) {
  SEMTWIN_CHECK(mean.shape() == std.shape(), "reparam_sample: mean/std shape mismatch");
  SEMTWIN_CHECK(eps.size() == mean.values().size(), "reparam_sample: eps size mismatch");
  Tensor e = Tensor::from(mean.shape(), eps);
  return add(mean, mul(std, e));
}

Tensor stop_gradient(const Tensor& a) { return a.detach(); }

}  // namespace semtwin::ad
