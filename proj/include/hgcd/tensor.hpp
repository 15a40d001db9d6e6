#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hgcd/errors.hpp"

namespace hgcd {

// Minimal dense-tensor compute with reverse-mode differentiation. Everything
// is 64-bit: gradient-check tolerances and the Bhattacharyya square roots are
// too fragile in 32-bit. Rank 0 (scalar), 1 (vector) and 2 (matrix) only.
//
// Broadcasting is deliberately restricted to scalar-tensor and row-vector
// bias; every other shape mismatch is an error naming both shapes.

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward writes it
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
  int64_t rows() const;  // rank-2 only
  int64_t cols() const;

  std::span<const double> values() const { return d_->values; }
  std::span<double> values_mut() { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  // Gradient as written by the last backward pass; empty span means "never
  // touched", which callers must read as all-zeros (disconnected parameter).
  std::span<const double> grad() const { return d_->grad; }
  // Dense copy of the gradient; zeros when disconnected.
  std::vector<double> grad_dense() const;
  void zero_grad() { d_->grad.clear(); }

  double item() const;                       // scalar tensors only
  double at(int64_t i) const;                // rank-1
  double at(int64_t i, int64_t j) const;     // rank-2

  std::shared_ptr<TensorData> data_ptr() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend class Graph;
  friend TensorData& dat(const Tensor& t);
};

inline TensorData& dat(const Tensor& t) { return *t.d_; }

// Define-by-run tape. Ops executed while a GraphScope is active append one
// node each; backward replays the tape in exact reverse insertion order, so
// gradient accumulation order is canonical and results are bit-reproducible.
// The graph is rebuilt per batch: positive/negative sets change its topology
// every step.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Seeds d(loss)/d(loss)=1 and pulls gradients back through the tape.
  // Errors: non-scalar loss; calling twice without clear().
  void backward(const Tensor& loss);

  void clear();
  size_t node_count() const { return nodes_.size(); }
  bool backward_ran() const { return ran_backward_; }

  void record(std::shared_ptr<TensorData> out, std::function<void()> pull);

 private:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

// Binds a graph to the current thread for the lifetime of the scope. Forward
// passes without an active scope record nothing (inference mode); that is the
// only supported multi-threaded use.
class GraphScope {
 public:
  explicit GraphScope(Graph& g);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* prev_;
};

Graph* active_graph();

// ---- operations -----------------------------------------------------------

// c[m x n] = a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// c[m x n] = a[m x k] * b[n x k]^T  (saves a transpose copy in hot paths)
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// add/sub accept same-shape pairs, tensor+scalar-tensor, or matrix+row-vector
// bias. mul/div accept same-shape pairs or tensor and scalar-tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor negate(const Tensor& a);

// Elementwise unary ops. Non-finite outputs raise NumericError naming the op.
// log and sqrt clamp their inputs at kLogSqrtEps: soft-tree posteriors can
// underflow toward 0 at deep levels. Derivative is 0 in the clamped region.
inline constexpr double kLogSqrtEps = 1e-12;
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Reductions. axis 0 collapses rows (result has cols entries), axis 1
// collapses columns (result has rows entries).
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
// Non-differentiable; returns indices as doubles, requires_grad always false.
// Ties break toward the lowest index.
Tensor max_index(const Tensor& a, int axis);

// v / (||v|| + eps); rank-1. Never divides by zero.
Tensor l2_normalize(const Tensor& v);
// Row-wise variant for rank-2 inputs.
Tensor l2_normalize_rows(const Tensor& a);

// Same data, new shape (numel must match); gradient passes through.
Tensor reshape(const Tensor& a, Shape shape);

// Row/column gathers (indices may repeat; backward scatter-adds in index
// order) and column concatenation. These carry the soft-tree routing.
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);
Tensor gather_cols(const Tensor& a, const std::vector<int64_t>& idx);
Tensor concat_cols(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_const(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_const(a, -c); }
inline Tensor operator-(const Tensor& a) { return negate(a); }

}  // namespace hgcd
