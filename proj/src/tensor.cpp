#include "hgcd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <Eigen/Core>

namespace hgcd {

namespace {

using EMatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const EMatRM>;
using MapM = Eigen::Map<EMatRM>;

thread_local Graph* g_active_graph = nullptr;

bool is_scalar(const TensorData& t) { return t.values.size() == 1 && t.shape.size() <= 1; }

// Allocates the gradient store on first touch, then accumulates.
std::vector<double>& grad_of(TensorData& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

void check_finite(const TensorData& t, const char* op) {
  for (double v : t.values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("numeric instability: op '") + op +
                         "' produced a non-finite value");
    }
  }
}

Tensor make_out(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void record_node(const Tensor& out, std::function<void()> pull) {
  if (Graph* g = g_active_graph) g->record(out.data_ptr(), std::move(pull));
}

// Common setup for binary ops with scalar / row-vector broadcast. mode:
// 0 same-shape, 1 b is scalar, 2 b is row-vector bias over a's columns,
// 3 a is scalar (add/mul commute into mode 1; sub/div keep 3).
int broadcast_mode(const TensorData& a, const TensorData& b, const char* op, bool allow_rowvec) {
  if (a.shape == b.shape) return 0;
  if (is_scalar(b)) return 1;
  if (is_scalar(a)) return 3;
  if (allow_rowvec && a.shape.size() == 2 && b.shape.size() == 1 && b.shape[0] == a.shape[1]) {
    return 2;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " vs " +
                   shape_str(b.shape));
}

}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return constant(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::constant(Shape shape, double value, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  int64_t n = shape_numel(shape);
  d->shape = std::move(shape);
  d->values.assign(static_cast<size_t>(n), value);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from(Shape{}, {value}, requires_grad);
}

int64_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): tensor is not rank-2: " + shape_str(shape()));
  return d_->shape[0];
}

int64_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): tensor is not rank-2: " + shape_str(shape()));
  return d_->shape[1];
}

std::vector<double> Tensor::grad_dense() const {
  if (d_->grad.empty()) return std::vector<double>(d_->values.size(), 0.0);
  return d_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
  return d_->values[0];
}

double Tensor::at(int64_t i) const { return d_->values[static_cast<size_t>(i)]; }

double Tensor::at(int64_t i, int64_t j) const {
  return d_->values[static_cast<size_t>(i * cols() + j)];
}

// ---- Graph -----------------------------------------------------------------

void Graph::record(std::shared_ptr<TensorData> out, std::function<void()> pull) {
  nodes_.push_back(Node{std::move(out), std::move(pull)});
}

void Graph::backward(const Tensor& loss) {
  if (ran_backward_) {
    throw NumericError("backward: graph already differentiated; build a new graph or clear()");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  ran_backward_ = true;
  dat(loss).grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->out->grad.empty()) it->pull();
  }
}

void Graph::clear() {
  nodes_.clear();
  ran_backward_ = false;
}

GraphScope::GraphScope(Graph& g) : prev_(g_active_graph) { g_active_graph = &g; }
GraphScope::~GraphScope() { g_active_graph = prev_; }

Graph* active_graph() { return g_active_graph; }

// ---- matmul family ---------------------------------------------------------
// The dense products are delegated to Eigen maps over our row-major buffers;
// every backward rule below is ours and is covered by the finite-difference
// suite. Each output element is a sequential dot product, so results do not
// depend on scheduling.

namespace {

void gemm_nn(int64_t m, int64_t k, int64_t n, const double* A, const double* B, double* C) {
  MapM(C, m, n).noalias() = MapC(A, m, k) * MapC(B, k, n);
}

void gemm_nn_acc(int64_t m, int64_t k, int64_t n, const double* A, const double* B, double* C) {
  MapM(C, m, n).noalias() += MapC(A, m, k) * MapC(B, k, n);
}

void gemm_nt(int64_t m, int64_t k, int64_t n, const double* A, const double* B, double* C) {
  // C[m x n] = A[m x k] * B[n x k]^T
  MapM(C, m, n).noalias() = MapC(A, m, k) * MapC(B, n, k).transpose();
}

void gemm_nt_acc(int64_t m, int64_t k, int64_t n, const double* A, const double* B, double* C) {
  MapM(C, m, n).noalias() += MapC(A, m, k) * MapC(B, n, k).transpose();
}

void gemm_tn_acc(int64_t m, int64_t k, int64_t n, const double* A, const double* B, double* C) {
  // C[k x n] += A[m x k]^T * B[m x n]
  MapM(C, k, n).noalias() += MapC(A, m, k).transpose() * MapC(B, m, n);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  gemm_nn(m, k, n, a.values().data(), b.values().data(), out.data());
  bool rg = want_grad({&a, &b});
  Tensor c = make_out({m, n}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, m, k, n]() {
      const double* g = cd->grad.data();
      if (ad->requires_grad) {
        // dA = dC * B^T
        gemm_nt_acc(m, n, k, g, bd->values.data(), grad_of(*ad).data());
      }
      if (bd->requires_grad) {
        // dB = A^T * dC
        gemm_tn_acc(m, k, n, ad->values.data(), g, grad_of(*bd).data());
      }
    });
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  int64_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()) + " transposed");
  }
  std::vector<double> out(static_cast<size_t>(m * n));
  gemm_nt(m, k, n, a.values().data(), b.values().data(), out.data());
  bool rg = want_grad({&a, &b});
  Tensor c = make_out({m, n}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, m, k, n]() {
      const double* g = cd->grad.data();
      if (ad->requires_grad) {
        // dA = dC * B
        gemm_nn_acc(m, n, k, g, bd->values.data(), grad_of(*ad).data());
      }
      if (bd->requires_grad) {
        // dB = dC^T * A
        gemm_tn_acc(m, n, k, g, ad->values.data(), grad_of(*bd).data());
      }
    });
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  int64_t m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j * m + i)] = a.at(i, j);
  bool rg = a.requires_grad();
  Tensor c = make_out({n, m}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, cd, m, n]() {
      auto& ga = grad_of(*ad);
      const auto& gc = cd->grad;
      for (int64_t j = 0; j < n; ++j)
        for (int64_t i = 0; i < m; ++i)
          ga[static_cast<size_t>(i * n + j)] += gc[static_cast<size_t>(j * m + i)];
    });
  }
  return c;
}

// ---- binary elementwise ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  int mode = broadcast_mode(dat(a), dat(b), "add", /*allow_rowvec=*/true);
  if (mode == 3) return add(b, a);
  const auto& av = dat(a).values;
  const auto& bv = dat(b).values;
  std::vector<double> out(av.size());
  if (mode == 0) {
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  } else if (mode == 1) {
    double s = bv[0];
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
  } else {
    int64_t n = dat(a).shape[1];
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % static_cast<size_t>(n)];
  }
  bool rg = want_grad({&a, &b});
  Tensor c = make_out(dat(a).shape, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, mode]() {
      const auto& g = cd->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        if (mode == 0) {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        } else if (mode == 1) {
          double s = 0.0;
          for (double v : g) s += v;
          gb[0] += s;
        } else {
          size_t n = gb.size();
          for (size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
        }
      }
    });
  }
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  int mode = broadcast_mode(dat(a), dat(b), "sub", /*allow_rowvec=*/false);
  const auto& av = dat(a).values;
  const auto& bv = dat(b).values;
  std::vector<double> out;
  Shape oshape;
  if (mode == 0) {
    out.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    oshape = dat(a).shape;
  } else if (mode == 1) {
    out.resize(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[0];
    oshape = dat(a).shape;
  } else {  // scalar - tensor
    out.resize(bv.size());
    for (size_t i = 0; i < bv.size(); ++i) out[i] = av[0] - bv[i];
    oshape = dat(b).shape;
  }
  bool rg = want_grad({&a, &b});
  Tensor c = make_out(std::move(oshape), std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, mode]() {
      const auto& g = cd->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        if (mode == 2) {
          double s = 0.0;
          for (double v : g) s += v;
          ga[0] += s;
        } else {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        if (mode == 1) {
          double s = 0.0;
          for (double v : g) s += v;
          gb[0] -= s;
        } else {
          for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      }
    });
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  int mode = broadcast_mode(dat(a), dat(b), "mul", /*allow_rowvec=*/false);
  if (mode == 3) return mul(b, a);
  const auto& av = dat(a).values;
  const auto& bv = dat(b).values;
  std::vector<double> out(av.size());
  if (mode == 0) {
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  } else {
    double s = bv[0];
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  }
  bool rg = want_grad({&a, &b});
  Tensor c = make_out(dat(a).shape, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, mode]() {
      const auto& g = cd->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        if (mode == 0) {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd->values[i];
        } else {
          double s = bd->values[0];
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        }
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        if (mode == 0) {
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad->values[i];
        } else {
          double s = 0.0;
          for (size_t i = 0; i < g.size(); ++i) s += g[i] * ad->values[i];
          gb[0] += s;
        }
      }
    });
  }
  return c;
}

Tensor div(const Tensor& a, const Tensor& b) {
  int mode = broadcast_mode(dat(a), dat(b), "div", /*allow_rowvec=*/false);
  if (mode == 3) {
    throw ShapeError("div: scalar / tensor is not supported; shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const auto& av = dat(a).values;
  const auto& bv = dat(b).values;
  std::vector<double> out(av.size());
  if (mode == 0) {
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  } else {
    double s = bv[0];
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] / s;
  }
  bool rg = want_grad({&a, &b});
  Tensor c = make_out(dat(a).shape, std::move(out), rg);
  check_finite(dat(c), "div");
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, mode]() {
      const auto& g = cd->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        if (mode == 0) {
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bd->values[i];
        } else {
          double s = bd->values[0];
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / s;
        }
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        if (mode == 0) {
          for (size_t i = 0; i < g.size(); ++i) {
            double bi = bd->values[i];
            gb[i] -= g[i] * ad->values[i] / (bi * bi);
          }
        } else {
          double s = bd->values[0];
          double acc = 0.0;
          for (size_t i = 0; i < g.size(); ++i) acc += g[i] * ad->values[i];
          gb[0] -= acc / (s * s);
        }
      }
    });
  }
  return c;
}

// ---- unary elementwise -----------------------------------------------------

namespace {

// fwd(x) -> y; dfdx(x, y) -> partial. Saved inputs keep the closures exact.
Tensor unary_op(const Tensor& a, const char* name, double (*fwd)(double),
                double (*dfdx)(double, double), bool finite_check = true) {
  const auto& av = dat(a).values;
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  bool rg = a.requires_grad();
  Tensor c = make_out(dat(a).shape, std::move(out), rg);
  if (finite_check) check_finite(dat(c), name);
  if (rg) {
    auto ad = a.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, cd, dfdx]() {
      auto& ga = grad_of(*ad);
      const auto& g = cd->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(ad->values[i], cd->values[i]);
    });
  }
  return c;
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      a, "log", [](double x) { return std::log(std::max(x, kLogSqrtEps)); },
      [](double x, double) { return x > kLogSqrtEps ? 1.0 / x : 0.0; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(std::max(x, kLogSqrtEps)); },
      [](double x, double y) { return x > kLogSqrtEps ? 0.5 / y : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid", sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  // Exact (erf) form: 0.5 x (1 + erf(x / sqrt(2))).
  return unary_op(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor negate(const Tensor& a) {
  return unary_op(
      a, "negate", [](double x) { return -x; }, [](double, double) { return -1.0; }, false);
}

Tensor scale(const Tensor& a, double c) {
  const auto& av = dat(a).values;
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  bool rg = a.requires_grad();
  Tensor r = make_out(dat(a).shape, std::move(out), rg);
  check_finite(dat(r), "scale");
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd, c]() {
      auto& ga = grad_of(*ad);
      const auto& g = rd->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return r;
}

Tensor add_const(const Tensor& a, double c) {
  const auto& av = dat(a).values;
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  bool rg = a.requires_grad();
  Tensor r = make_out(dat(a).shape, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd]() {
      auto& ga = grad_of(*ad);
      const auto& g = rd->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  const auto& av = dat(a).values;
  std::vector<double> out(av.size());
  for (size_t i = 0; i < av.size(); ++i) out[i] = std::min(std::max(av[i], lo), hi);
  bool rg = a.requires_grad();
  Tensor r = make_out(dat(a).shape, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd, lo, hi]() {
      auto& ga = grad_of(*ad);
      const auto& g = rd->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        double x = ad->values[i];
        if (x >= lo && x <= hi) ga[i] += g[i];
      }
    });
  }
  return r;
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : dat(a).values) s += v;
  bool rg = a.requires_grad();
  Tensor r = Tensor::from(Shape{}, {s}, rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd]() {
      auto& ga = grad_of(*ad);
      double g = rd->grad[0];
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return r;
}

Tensor sum(const Tensor& a, int axis) {
  require_rank2(a, "sum");
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1");
  int64_t m = a.rows(), n = a.cols();
  if ((axis == 0 && m == 0) || (axis == 1 && n == 0)) {
    throw ShapeError("sum: reduction over empty axis of " + shape_str(a.shape()));
  }
  std::vector<double> out;
  if (axis == 0) {
    out.assign(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j)] += a.at(i, j);
  } else {
    out.assign(static_cast<size_t>(m), 0.0);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i)] += a.at(i, j);
  }
  bool rg = a.requires_grad();
  Tensor r = make_out({axis == 0 ? n : m}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd, m, n, axis]() {
      auto& ga = grad_of(*ad);
      const auto& g = rd->grad;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          ga[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(axis == 0 ? j : i)];
    });
  }
  return r;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, int axis) {
  require_rank2(a, "mean");
  int64_t k = axis == 0 ? a.rows() : a.cols();
  if (k == 0) throw ShapeError("mean: reduction over empty axis of " + shape_str(a.shape()));
  return scale(sum(a, axis), 1.0 / static_cast<double>(k));
}

Tensor max_index(const Tensor& a, int axis) {
  if (a.rank() == 1) {
    if (a.numel() == 0) throw ShapeError("max_index: empty tensor");
    int64_t best = 0;
    for (int64_t i = 1; i < a.numel(); ++i)
      if (a.at(i) > a.at(best)) best = i;
    return Tensor::from(Shape{}, {static_cast<double>(best)}, false);
  }
  require_rank2(a, "max_index");
  if (axis != 1) throw ShapeError("max_index: only axis 1 (per row) is supported for matrices");
  int64_t m = a.rows(), n = a.cols();
  if (n == 0) throw ShapeError("max_index: reduction over empty axis");
  std::vector<double> out(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < n; ++j)
      if (a.at(i, j) > a.at(i, best)) best = j;
    out[static_cast<size_t>(i)] = static_cast<double>(best);
  }
  return make_out({m}, std::move(out), false);
}

// ---- normalization -----------------------------------------------------------

namespace {

// One row: y = v / (||v|| + eps). dv_j = g_j/(n+eps) - (g.v) v_j / (n (n+eps)^2).
void l2norm_row(const double* v, double* y, int64_t d) {
  double sq = 0.0;
  for (int64_t j = 0; j < d; ++j) sq += v[j] * v[j];
  double norm = std::sqrt(sq);
  double inv = 1.0 / (norm + kLogSqrtEps);
  for (int64_t j = 0; j < d; ++j) y[j] = v[j] * inv;
}

void l2norm_row_backward(const double* v, const double* g, double* ga, int64_t d) {
  double sq = 0.0, gv = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    sq += v[j] * v[j];
    gv += g[j] * v[j];
  }
  double norm = std::sqrt(sq);
  double denom = norm + kLogSqrtEps;
  double inv = 1.0 / denom;
  double coef = norm > 0.0 ? gv / (norm * denom * denom) : 0.0;
  for (int64_t j = 0; j < d; ++j) ga[j] += g[j] * inv - coef * v[j];
}

}  // namespace

Tensor l2_normalize(const Tensor& v) {
  if (v.rank() != 1) {
    throw ShapeError("l2_normalize: expected rank-1 tensor, got " + shape_str(v.shape()));
  }
  int64_t d = v.numel();
  std::vector<double> out(static_cast<size_t>(d));
  l2norm_row(v.values().data(), out.data(), d);
  bool rg = v.requires_grad();
  Tensor r = make_out({d}, std::move(out), rg);
  if (rg) {
    auto vd = v.data_ptr(), rd = r.data_ptr();
    record_node(r, [vd, rd, d]() {
      l2norm_row_backward(vd->values.data(), rd->grad.data(), grad_of(*vd).data(), d);
    });
  }
  return r;
}

Tensor l2_normalize_rows(const Tensor& a) {
  require_rank2(a, "l2_normalize_rows");
  int64_t m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    l2norm_row(a.values().data() + i * n, out.data() + i * n, n);
  bool rg = a.requires_grad();
  Tensor r = make_out({m, n}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd, m, n]() {
      auto& ga = grad_of(*ad);
      for (int64_t i = 0; i < m; ++i) {
        l2norm_row_backward(ad->values.data() + i * n, rd->grad.data() + i * n,
                            ga.data() + i * n, n);
      }
    });
  }
  return r;
}

// ---- gather / concat ---------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  bool rg = a.requires_grad();
  Tensor r = make_out(std::move(shape),
                      std::vector<double>(a.values().begin(), a.values().end()), rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd]() {
      auto& ga = grad_of(*ad);
      const auto& g = rd->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return r;
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
  require_rank2(a, "gather_rows");
  int64_t m = a.rows(), n = a.cols();
  for (int64_t i : idx) {
    if (i < 0 || i >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  int64_t k = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(k * n));
  for (int64_t r = 0; r < k; ++r) {
    const double* src = a.values().data() + idx[static_cast<size_t>(r)] * n;
    std::copy(src, src + n, out.data() + r * n);
  }
  bool rg = a.requires_grad();
  Tensor c = make_out({k, n}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, cd, idx, n]() {
      auto& ga = grad_of(*ad);
      for (size_t r = 0; r < idx.size(); ++r) {
        const double* g = cd->grad.data() + static_cast<int64_t>(r) * n;
        double* dst = ga.data() + idx[r] * n;
        for (int64_t j = 0; j < n; ++j) dst[j] += g[j];
      }
    });
  }
  return c;
}

Tensor gather_cols(const Tensor& a, const std::vector<int64_t>& idx) {
  require_rank2(a, "gather_cols");
  int64_t m = a.rows(), n = a.cols();
  for (int64_t j : idx) {
    if (j < 0 || j >= n) {
      throw ShapeError("gather_cols: index " + std::to_string(j) + " out of range for " +
                       shape_str(a.shape()));
    }
  }
  int64_t k = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(m * k));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t c = 0; c < k; ++c)
      out[static_cast<size_t>(i * k + c)] = a.at(i, idx[static_cast<size_t>(c)]);
  bool rg = a.requires_grad();
  Tensor r = make_out({m, k}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), rd = r.data_ptr();
    record_node(r, [ad, rd, idx, m, n]() {
      auto& ga = grad_of(*ad);
      int64_t k = static_cast<int64_t>(idx.size());
      const auto& g = rd->grad;
      for (int64_t i = 0; i < m; ++i)
        for (int64_t c = 0; c < k; ++c)
          ga[static_cast<size_t>(i * n + idx[static_cast<size_t>(c)])] +=
              g[static_cast<size_t>(i * k + c)];
    });
  }
  return r;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  int64_t m = a.rows(), na = a.cols(), nb = b.cols();
  std::vector<double> out(static_cast<size_t>(m * (na + nb)));
  for (int64_t i = 0; i < m; ++i) {
    std::copy(a.values().data() + i * na, a.values().data() + (i + 1) * na,
              out.data() + i * (na + nb));
    std::copy(b.values().data() + i * nb, b.values().data() + (i + 1) * nb,
              out.data() + i * (na + nb) + na);
  }
  bool rg = want_grad({&a, &b});
  Tensor c = make_out({m, na + nb}, std::move(out), rg);
  if (rg) {
    auto ad = a.data_ptr(), bd = b.data_ptr(), cd = c.data_ptr();
    record_node(c, [ad, bd, cd, m, na, nb]() {
      const auto& g = cd->grad;
      if (ad->requires_grad) {
        auto& ga = grad_of(*ad);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < na; ++j)
            ga[static_cast<size_t>(i * na + j)] += g[static_cast<size_t>(i * (na + nb) + j)];
      }
      if (bd->requires_grad) {
        auto& gb = grad_of(*bd);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < nb; ++j)
            gb[static_cast<size_t>(i * nb + j)] += g[static_cast<size_t>(i * (na + nb) + na + j)];
      }
    });
  }
  return c;
}

}  // namespace hgcd
