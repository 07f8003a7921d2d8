#include "gliclass/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace gliclass {

namespace {

thread_local Tape* g_active_tape = nullptr;

bool any_requires_grad(std::initializer_list<const Tensor*> ins) {
  if (!g_active_tape) return false;
  for (const Tensor* t : ins) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

int norm_axis(int axis, int ndim) {
  int a = axis < 0 ? axis + ndim : axis;
  if (a < 0 || a >= ndim) throw ShapeError("axis out of range");
  return a;
}

struct AxisView {
  int64_t outer;
  int64_t n;
  int64_t inner;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) v.inner *= s[i];
  return v;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[m,k] += G[m,n] * B^T  (B is [k,n])
void gemm_nt(const double* g, const double* b, double* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* gr = g + i * n;
    double* cr = c + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double* br = b + p * n;
      double acc = 0.0;
      for (int64_t j = 0; j < n; ++j) acc += gr[j] * br[j];
      cr[p] += acc;
    }
  }
}

// C[k,n] += A^T * G  (A is [m,k], G is [m,n])
void gemm_tn(const double* a, const double* g, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    const double* gr = g + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = ar[p];
      if (av == 0.0) continue;
      double* cr = c + p * n;
      for (int64_t j = 0; j < n; ++j) cr[j] += av * gr[j];
    }
  }
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

std::shared_ptr<Tensor::Impl> Tensor::make(Shape shape, bool requires_grad) {
  auto p = std::make_shared<Impl>();
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension");
  }
  p->shape = std::move(shape);
  p->data.assign(static_cast<size_t>(shape_numel(p->shape)), 0.0);
  p->requires_grad = requires_grad;
  return p;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return wrap(make(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t = zeros({1});
  t.values()[0] = value;
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_vector: data length does not match shape");
  }
  Tensor t = zeros(std::move(shape), requires_grad);
  t.values() = std::move(data);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.gaussian() * stddev;
  return t;
}

int Tensor::dim(int i) const {
  int nd = ndim();
  int a = i < 0 ? i + nd : i;
  if (a < 0 || a >= nd) throw ShapeError("dim index out of range");
  return p_->shape[a];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor");
  return p_->data[0];
}

std::vector<double>& Tensor::grad() const {
  if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
  return p_->grad;
}

void Tensor::zero_grad() const {
  std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  Tensor t = zeros(p_->shape);
  t.values() = p_->data;
  return t;
}

Tensor Tensor::clone() const {
  Tensor t = zeros(p_->shape, p_->requires_grad);
  t.values() = p_->data;
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward: root must be a scalar tensor");
  }
  root.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    (*it)();
  }
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace {

// Marks `out` as tracked and records the closure when gradients are needed.
template <typename Fn>
void record_op(Tensor& out, std::initializer_list<const Tensor*> ins, Fn&& fn) {
  if (any_requires_grad(ins)) {
    out.set_requires_grad(true);
    g_active_tape->record(std::forward<Fn>(fn));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ShapeError("matmul: operands must have >= 2 dims");
  const bool shared_b = b.ndim() == 2;
  if (!shared_b && a.ndim() != b.ndim()) throw ShapeError("matmul: rank mismatch");
  const int64_t m = a.dim(-2);
  const int64_t k = a.dim(-1);
  const int64_t kb = b.dim(-2);
  const int64_t n = b.dim(-1);
  if (k != kb) throw ShapeError("matmul: inner dimensions do not match");

  int64_t batch = 1;
  Shape out_shape;
  for (int i = 0; i + 2 < a.ndim(); ++i) {
    batch *= a.dim(i);
    out_shape.push_back(a.dim(i));
    if (!shared_b && b.dim(i) != a.dim(i)) throw ShapeError("matmul: batch dims differ");
  }
  out_shape.push_back(static_cast<int>(m));
  out_shape.push_back(static_cast<int>(n));

  Tensor out = Tensor::zeros(out_shape);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* pc = out.values().data();
  for (int64_t s = 0; s < batch; ++s) {
    gemm_nn(pa + s * m * k, shared_b ? pb : pb + s * k * n, pc + s * m * n, m, k, n);
  }
  check_finite(out, "matmul");

  record_op(out, {&a, &b}, [a, b, out, batch, m, k, n, shared_b]() {
    if (!out.has_grad()) return;
    const double* g = out.grad().data();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    if (a.requires_grad()) {
      double* ga = a.grad().data();
      for (int64_t s = 0; s < batch; ++s) {
        gemm_nt(g + s * m * n, shared_b ? pb : pb + s * k * n, ga + s * m * k, m, n, k);
      }
    }
    if (b.requires_grad()) {
      double* gb = b.grad().data();
      for (int64_t s = 0; s < batch; ++s) {
        gemm_tn(pa + s * m * k, g + s * m * n, shared_b ? gb : gb + s * k * n, m, k, n);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  const auto& vb = b.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] + vb[i];
  check_finite(out, "add");
  record_op(out, {&a, &b}, [a, b, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  const auto& vb = b.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] - vb[i];
  check_finite(out, "sub");
  record_op(out, {&a, &b}, [a, b, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  const auto& vb = b.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] * vb[i];
  check_finite(out, "mul");
  record_op(out, {&a, &b}, [a, b, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& va = a.values();
    const auto& vb = b.values();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  for (double v : b.values()) {
    if (v == 0.0) throw NumericError("div: division by zero");
  }
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  const auto& vb = b.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] / vb[i];
  check_finite(out, "div");
  record_op(out, {&a, &b}, [a, b, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& va = a.values();
    const auto& vb = b.values();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
    }
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] + s;
  check_finite(out, "add_scalar");
  record_op(out, {&a}, [a, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& ga = a.grad();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = va[i] * s;
  check_finite(out, "mul_scalar");
  record_op(out, {&a}, [a, out, s]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& ga = a.grad();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || bias.dim(0) != x.dim(-1)) {
    throw ShapeError("add_bias: bias must match last dim");
  }
  const int64_t n = x.dim(-1);
  const int64_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  const auto& vb = bias.values();
  auto& vo = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < n; ++j) vo[r * n + j] = vx[r * n + j] + vb[j];
  }
  check_finite(out, "add_bias");
  record_op(out, {&x, &bias}, [x, bias, out, rows, n]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

Tensor vexp(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = std::exp(vx[i]);
  check_finite(out, "exp");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vo = out.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * vo[i];
  });
  return out;
}

Tensor vlog(const Tensor& x) {
  for (double v : x.values()) {
    if (v <= 0.0) throw NumericError("log: input must be positive");
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = std::log(vx[i]);
  check_finite(out, "log");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / vx[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = stable_sigmoid(vx[i]);
  check_finite(out, "sigmoid");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vo = out.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * vo[i] * (1.0 - vo[i]);
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = vx[i] > 0.0 ? vx[i] : 0.0;
  check_finite(out, "relu");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (vx[i] > 0.0) gx[i] += g[i];
    }
  });
  return out;
}

namespace {
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) {
    const double v = vx[i];
    const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
    vo[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  check_finite(out, "gelu");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = vx[i];
      const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
  return out;
}

Tensor power(const Tensor& x, double gamma) {
  for (double v : x.values()) {
    if (v < 0.0) throw NumericError("power: negative base");
    if (v == 0.0 && gamma < 1.0) throw NumericError("power: zero base needs exponent >= 1");
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = std::pow(vx[i], gamma);
  check_finite(out, "power");
  record_op(out, {&x}, [x, out, gamma]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double d = vx[i] == 0.0 ? (gamma == 1.0 ? 1.0 : 0.0)
                                    : gamma * std::pow(vx[i], gamma - 1.0);
      gx[i] += g[i] * d;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  check_finite(out, "sum");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const double g = out.grad()[0];
    auto& gx = x.grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean: empty tensor");
  Tensor s = sum(x);
  return mul_scalar(s, 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView av = axis_view(x.shape(), a);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[a] = 1;
  } else {
    out_shape.erase(out_shape.begin() + a);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor out = Tensor::zeros(out_shape);
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t o = 0; o < av.outer; ++o) {
    for (int64_t i = 0; i < av.n; ++i) {
      const double* src = vx.data() + (o * av.n + i) * av.inner;
      double* dst = vo.data() + o * av.inner;
      for (int64_t in = 0; in < av.inner; ++in) dst[in] += src[in];
    }
  }
  check_finite(out, "sum_axis");
  record_op(out, {&x}, [x, out, av]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t o = 0; o < av.outer; ++o) {
      for (int64_t i = 0; i < av.n; ++i) {
        double* dst = gx.data() + (o * av.n + i) * av.inner;
        const double* src = g.data() + o * av.inner;
        for (int64_t in = 0; in < av.inner; ++in) dst[in] += src[in];
      }
    }
  });
  return out;
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.ndim());
  const int n = x.shape()[a];
  if (n == 0) throw ContractError("mean_axis: empty axis");
  return mul_scalar(sum_axis(x, axis, keepdim), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView av = axis_view(x.shape(), a);
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t o = 0; o < av.outer; ++o) {
    for (int64_t in = 0; in < av.inner; ++in) {
      const int64_t base = o * av.n * av.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < av.n; ++i) mx = std::max(mx, vx[base + i * av.inner]);
      double z = 0.0;
      for (int64_t i = 0; i < av.n; ++i) {
        const double e = std::exp(vx[base + i * av.inner] - mx);
        vo[base + i * av.inner] = e;
        z += e;
      }
      for (int64_t i = 0; i < av.n; ++i) vo[base + i * av.inner] /= z;
    }
  }
  check_finite(out, "softmax");
  record_op(out, {&x}, [x, out, av]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vo = out.values();
    auto& gx = x.grad();
    for (int64_t o = 0; o < av.outer; ++o) {
      for (int64_t in = 0; in < av.inner; ++in) {
        const int64_t base = o * av.n * av.inner + in;
        double dot = 0.0;
        for (int64_t i = 0; i < av.n; ++i) {
          const int64_t idx = base + i * av.inner;
          dot += g[idx] * vo[idx];
        }
        for (int64_t i = 0; i < av.n; ++i) {
          const int64_t idx = base + i * av.inner;
          gx[idx] += vo[idx] * (g[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView av = axis_view(x.shape(), a);
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t o = 0; o < av.outer; ++o) {
    for (int64_t in = 0; in < av.inner; ++in) {
      const int64_t base = o * av.n * av.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t i = 0; i < av.n; ++i) mx = std::max(mx, vx[base + i * av.inner]);
      double z = 0.0;
      for (int64_t i = 0; i < av.n; ++i) z += std::exp(vx[base + i * av.inner] - mx);
      const double lz = mx + std::log(z);
      for (int64_t i = 0; i < av.n; ++i) {
        const int64_t idx = base + i * av.inner;
        vo[idx] = vx[idx] - lz;
      }
    }
  }
  check_finite(out, "log_softmax");
  record_op(out, {&x}, [x, out, av]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vo = out.values();
    auto& gx = x.grad();
    for (int64_t o = 0; o < av.outer; ++o) {
      for (int64_t in = 0; in < av.inner; ++in) {
        const int64_t base = o * av.n * av.inner + in;
        double gsum = 0.0;
        for (int64_t i = 0; i < av.n; ++i) gsum += g[base + i * av.inner];
        for (int64_t i = 0; i < av.n; ++i) {
          const int64_t idx = base + i * av.inner;
          gx[idx] += g[idx] - std::exp(vo[idx]) * gsum;
        }
      }
    }
  });
  return out;
}

Tensor l2_normalize(const Tensor& x, int axis) {
  const int a = norm_axis(axis, x.ndim());
  const AxisView av = axis_view(x.shape(), a);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> norms(static_cast<size_t>(av.outer * av.inner));
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t o = 0; o < av.outer; ++o) {
    for (int64_t in = 0; in < av.inner; ++in) {
      const int64_t base = o * av.n * av.inner + in;
      double sq = 0.0;
      for (int64_t i = 0; i < av.n; ++i) {
        const double v = vx[base + i * av.inner];
        sq += v * v;
      }
      const double nrm = std::sqrt(sq);
      if (nrm == 0.0) throw NumericError("l2_normalize: zero vector");
      norms[o * av.inner + in] = nrm;
      for (int64_t i = 0; i < av.n; ++i) {
        const int64_t idx = base + i * av.inner;
        vo[idx] = vx[idx] / nrm;
      }
    }
  }
  check_finite(out, "l2_normalize");
  record_op(out, {&x}, [x, out, av, norms = std::move(norms)]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vo = out.values();
    auto& gx = x.grad();
    for (int64_t o = 0; o < av.outer; ++o) {
      for (int64_t in = 0; in < av.inner; ++in) {
        const int64_t base = o * av.n * av.inner + in;
        const double nrm = norms[o * av.inner + in];
        double dot = 0.0;
        for (int64_t i = 0; i < av.n; ++i) {
          const int64_t idx = base + i * av.inner;
          dot += g[idx] * vo[idx];
        }
        for (int64_t i = 0; i < av.n; ++i) {
          const int64_t idx = base + i * av.inner;
          gx[idx] += (g[idx] - vo[idx] * dot) / nrm;
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int64_t d = x.dim(-1);
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain/bias must match last dim");
  }
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> xhat(x.values().size());
  const auto& vx = x.values();
  const auto& vg = gain.values();
  const auto& vb = bias.values();
  auto& vo = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = vx.data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += px[j];
    mu /= d;
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = px[j] - mu;
      var += c * c;
    }
    var /= d;
    const double s = 1.0 / std::sqrt(var + eps);
    inv_std[r] = s;
    for (int64_t j = 0; j < d; ++j) {
      const double h = (px[j] - mu) * s;
      xhat[r * d + j] = h;
      vo[r * d + j] = h * vg[j] + vb[j];
    }
  }
  check_finite(out, "layer_norm");
  record_op(out, {&x, &gain, &bias},
            [x, gain, bias, out, rows, d, inv_std = std::move(inv_std), xhat = std::move(xhat)]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vg = gain.values();
    if (gain.requires_grad()) {
      auto& gg = gain.grad();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
    }
    if (bias.requires_grad()) {
      auto& gb = bias.grad();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
    }
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (int64_t r = 0; r < rows; ++r) {
        double m1 = 0.0;
        double m2 = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double gh = g[r * d + j] * vg[j];
          m1 += gh;
          m2 += gh * xhat[r * d + j];
        }
        m1 /= d;
        m2 /= d;
        const double s = inv_std[r];
        for (int64_t j = 0; j < d; ++j) {
          const double gh = g[r * d + j] * vg[j];
          gx[r * d + j] += s * (gh - m1 - xhat[r * d + j] * m2);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) throw ShapeError("reshape: element count mismatch");
  Tensor out = Tensor::zeros(std::move(shape));
  out.values() = x.values();
  check_finite(out, "reshape");
  record_op(out, {&x}, [x, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.ndim() < 2) throw ShapeError("transpose_last2: rank < 2");
  const int64_t m = x.dim(-2);
  const int64_t n = x.dim(-1);
  const int64_t batch = x.numel() / (m * n);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape);
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t s = 0; s < batch; ++s) {
    const double* src = vx.data() + s * m * n;
    double* dst = vo.data() + s * m * n;
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    }
  }
  check_finite(out, "transpose_last2");
  record_op(out, {&x}, [x, out, batch, m, n]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t s = 0; s < batch; ++s) {
      const double* src = g.data() + s * m * n;
      double* dst = gx.data() + s * m * n;
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) dst[i * n + j] += src[j * m + i];
      }
    }
  });
  return out;
}

Tensor slice_last(const Tensor& x, int start, int len) {
  const int64_t n = x.dim(-1);
  if (start < 0 || len < 0 || start + len > n) throw ShapeError("slice_last: out of range");
  const int64_t rows = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape.back() = len;
  Tensor out = Tensor::zeros(out_shape);
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(vo.data() + r * len, vx.data() + r * n + start, sizeof(double) * len);
  }
  check_finite(out, "slice_last");
  record_op(out, {&x}, [x, out, rows, n, start, len]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < len; ++j) gx[r * n + start + j] += g[r * len + j];
    }
  });
  return out;
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_last: empty input list");
  Shape lead = xs[0].shape();
  lead.pop_back();
  int total = 0;
  for (const Tensor& t : xs) {
    Shape l = t.shape();
    const int last = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_last: leading dims differ");
    total += last;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out = Tensor::zeros(out_shape);
  const int64_t rows = out.numel() / total;
  auto& vo = out.values();
  int offset = 0;
  for (const Tensor& t : xs) {
    const int len = t.dim(-1);
    const auto& vt = t.values();
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(vo.data() + r * total + offset, vt.data() + r * len, sizeof(double) * len);
    }
    offset += len;
  }
  check_finite(out, "concat_last");
  bool track = false;
  for (const Tensor& t : xs) {
    if (active_tape() && t.requires_grad()) track = true;
  }
  if (track) {
    out.set_requires_grad(true);
    std::vector<Tensor> parts = xs;
    active_tape()->record([parts, out, rows, total]() {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      int offset = 0;
      for (const Tensor& t : parts) {
        const int len = t.dim(-1);
        if (t.requires_grad()) {
          auto& gt = t.grad();
          for (int64_t r = 0; r < rows; ++r) {
            for (int j = 0; j < len; ++j) gt[r * len + j] += g[r * total + offset + j];
          }
        }
        offset += len;
      }
    });
  }
  return out;
}

Tensor stack0(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("stack0: empty input list");
  const Shape& base = xs[0].shape();
  for (const Tensor& t : xs) {
    if (t.shape() != base) throw ShapeError("stack0: shapes differ");
  }
  Shape out_shape;
  out_shape.push_back(static_cast<int>(xs.size()));
  out_shape.insert(out_shape.end(), base.begin(), base.end());
  Tensor out = Tensor::zeros(out_shape);
  const int64_t chunk = xs[0].numel();
  auto& vo = out.values();
  for (size_t i = 0; i < xs.size(); ++i) {
    std::memcpy(vo.data() + static_cast<int64_t>(i) * chunk, xs[i].values().data(),
                sizeof(double) * chunk);
  }
  check_finite(out, "stack0");
  bool track = false;
  for (const Tensor& t : xs) {
    if (active_tape() && t.requires_grad()) track = true;
  }
  if (track) {
    out.set_requires_grad(true);
    std::vector<Tensor> parts = xs;
    active_tape()->record([parts, out, chunk]() {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      for (size_t i = 0; i < parts.size(); ++i) {
        if (!parts[i].requires_grad()) continue;
        auto& gt = parts[i].grad();
        const double* src = g.data() + static_cast<int64_t>(i) * chunk;
        for (int64_t j = 0; j < chunk; ++j) gt[j] += src[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gather / scatter ops
// ---------------------------------------------------------------------------

Tensor embedding_lookup(const Tensor& table, const IntMat& ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_lookup: table must be 2-D");
  const int v = table.dim(0);
  const int d = table.dim(1);
  for (int id : ids.v) {
    if (id < 0 || id >= v) throw ContractError("embedding_lookup: id out of range");
  }
  Tensor out = Tensor::zeros({ids.rows, ids.cols, d});
  const auto& vt = table.values();
  auto& vo = out.values();
  for (size_t i = 0; i < ids.v.size(); ++i) {
    std::memcpy(vo.data() + i * d, vt.data() + static_cast<size_t>(ids.v[i]) * d,
                sizeof(double) * d);
  }
  check_finite(out, "embedding_lookup");
  record_op(out, {&table}, [table, ids, out, d]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gt = table.grad();
    for (size_t i = 0; i < ids.v.size(); ++i) {
      double* dst = gt.data() + static_cast<size_t>(ids.v[i]) * d;
      const double* src = g.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

Tensor gather_positions(const Tensor& h, const std::vector<std::vector<int>>& positions,
                        int c_max) {
  if (h.ndim() != 3) throw ShapeError("gather_positions: input must be [B,L,D]");
  const int b = h.dim(0);
  const int l = h.dim(1);
  const int d = h.dim(2);
  if (static_cast<int>(positions.size()) != b) {
    throw ContractError("gather_positions: batch size mismatch");
  }
  for (const auto& ps : positions) {
    if (static_cast<int>(ps.size()) > c_max) throw ContractError("gather_positions: c_max too small");
    for (int p : ps) {
      if (p < 0 || p >= l) throw ContractError("gather_positions: position out of range");
    }
  }
  Tensor out = Tensor::zeros({b, c_max, d});
  const auto& vh = h.values();
  auto& vo = out.values();
  for (int bi = 0; bi < b; ++bi) {
    for (size_t c = 0; c < positions[bi].size(); ++c) {
      const double* src = vh.data() + (static_cast<int64_t>(bi) * l + positions[bi][c]) * d;
      double* dst = vo.data() + (static_cast<int64_t>(bi) * c_max + c) * d;
      std::memcpy(dst, src, sizeof(double) * d);
    }
  }
  check_finite(out, "gather_positions");
  record_op(out, {&h}, [h, out, positions, c_max, l, d]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gh = h.grad();
    const int b = h.dim(0);
    for (int bi = 0; bi < b; ++bi) {
      for (size_t c = 0; c < positions[bi].size(); ++c) {
        double* dst = gh.data() + (static_cast<int64_t>(bi) * l + positions[bi][c]) * d;
        const double* src = g.data() + (static_cast<int64_t>(bi) * c_max + c) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

Tensor select_where(const IntMat& mask, const Tensor& x, double fill) {
  if (x.ndim() != 2 || x.dim(0) != mask.rows || x.dim(1) != mask.cols) {
    throw ShapeError("select_where: mask/tensor shape mismatch");
  }
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = mask.v[i] ? vx[i] : fill;
  check_finite(out, "select_where");
  record_op(out, {&x}, [x, out, mask]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (mask.v[i]) gx[i] += g[i];
    }
  });
  return out;
}

Tensor mul_rows(const Tensor& x, const Tensor& w) {
  if (x.ndim() != 3 || w.ndim() != 2 || x.dim(0) != w.dim(0) || x.dim(1) != w.dim(1)) {
    throw ShapeError("mul_rows: expected x[B,L,D], w[B,L]");
  }
  const int64_t rows = static_cast<int64_t>(x.dim(0)) * x.dim(1);
  const int64_t d = x.dim(2);
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  const auto& vw = w.values();
  auto& vo = out.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double s = vw[r];
    for (int64_t j = 0; j < d; ++j) vo[r * d + j] = vx[r * d + j] * s;
  }
  check_finite(out, "mul_rows");
  record_op(out, {&x, &w}, [x, w, out, rows, d]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    const auto& vw = w.values();
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double s = vw[r];
        for (int64_t j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j] * s;
      }
    }
    if (w.requires_grad()) {
      auto& gw = w.grad();
      for (int64_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int64_t j = 0; j < d; ++j) acc += g[r * d + j] * vx[r * d + j];
        gw[r] += acc;
      }
    }
  });
  return out;
}

Tensor scale_per_example(const Tensor& x, const Tensor& s) {
  if (s.ndim() != 1 || s.dim(0) != x.dim(0)) {
    throw ShapeError("scale_per_example: s must be [B]");
  }
  const int64_t b = x.dim(0);
  const int64_t chunk = x.numel() / b;
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  const auto& vs = s.values();
  auto& vo = out.values();
  for (int64_t bi = 0; bi < b; ++bi) {
    const double sv = vs[bi];
    for (int64_t j = 0; j < chunk; ++j) vo[bi * chunk + j] = vx[bi * chunk + j] * sv;
  }
  check_finite(out, "scale_per_example");
  record_op(out, {&x, &s}, [x, s, out, b, chunk]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    const auto& vs = s.values();
    if (x.requires_grad()) {
      auto& gx = x.grad();
      for (int64_t bi = 0; bi < b; ++bi) {
        const double sv = vs[bi];
        for (int64_t j = 0; j < chunk; ++j) gx[bi * chunk + j] += g[bi * chunk + j] * sv;
      }
    }
    if (s.requires_grad()) {
      auto& gs = s.grad();
      for (int64_t bi = 0; bi < b; ++bi) {
        double acc = 0.0;
        for (int64_t j = 0; j < chunk; ++j) acc += g[bi * chunk + j] * vx[bi * chunk + j];
        gs[bi] += acc;
      }
    }
  });
  return out;
}

Tensor scatter_positions(const Tensor& values, const std::vector<std::vector<int>>& positions,
                         int l) {
  if (values.ndim() != 3) throw ShapeError("scatter_positions: values must be [B,C,D]");
  const int b = values.dim(0);
  const int c = values.dim(1);
  const int d = values.dim(2);
  if (static_cast<int>(positions.size()) != b) {
    throw ContractError("scatter_positions: batch size mismatch");
  }
  for (const auto& ps : positions) {
    if (static_cast<int>(ps.size()) > c) throw ContractError("scatter_positions: too many positions");
    for (int p : ps) {
      if (p < 0 || p >= l) throw ContractError("scatter_positions: position out of range");
    }
  }
  Tensor out = Tensor::zeros({b, l, d});
  const auto& vv = values.values();
  auto& vo = out.values();
  for (int bi = 0; bi < b; ++bi) {
    for (size_t ci = 0; ci < positions[bi].size(); ++ci) {
      const double* src = vv.data() + (static_cast<int64_t>(bi) * c + ci) * d;
      double* dst = vo.data() + (static_cast<int64_t>(bi) * l + positions[bi][ci]) * d;
      std::memcpy(dst, src, sizeof(double) * d);
    }
  }
  check_finite(out, "scatter_positions");
  record_op(out, {&values}, [values, out, positions, c, l, d]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gv = values.grad();
    const int b = values.dim(0);
    for (int bi = 0; bi < b; ++bi) {
      for (size_t ci = 0; ci < positions[bi].size(); ++ci) {
        double* dst = gv.data() + (static_cast<int64_t>(bi) * c + ci) * d;
        const double* src = g.data() + (static_cast<int64_t>(bi) * l + positions[bi][ci]) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

Tensor batched_dot(const Tensor& t, const Tensor& c3) {
  if (t.ndim() != 2 || c3.ndim() != 3 || t.dim(0) != c3.dim(0) || t.dim(1) != c3.dim(2)) {
    throw ShapeError("batched_dot: expected t[B,D], c[B,C,D]");
  }
  const int64_t b = t.dim(0);
  const int64_t d = t.dim(1);
  const int64_t c = c3.dim(1);
  Tensor out = Tensor::zeros({static_cast<int>(b), static_cast<int>(c)});
  const auto& vt = t.values();
  const auto& vc = c3.values();
  auto& vo = out.values();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      const double* pt = vt.data() + bi * d;
      const double* pc = vc.data() + (bi * c + ci) * d;
      for (int64_t j = 0; j < d; ++j) acc += pt[j] * pc[j];
      vo[bi * c + ci] = acc;
    }
  }
  check_finite(out, "batched_dot");
  record_op(out, {&t, &c3}, [t, c3, out, b, c, d]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vt = t.values();
    const auto& vc = c3.values();
    if (t.requires_grad()) {
      auto& gt = t.grad();
      for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ci = 0; ci < c; ++ci) {
          const double gv = g[bi * c + ci];
          const double* pc = vc.data() + (bi * c + ci) * d;
          double* pt = gt.data() + bi * d;
          for (int64_t j = 0; j < d; ++j) pt[j] += gv * pc[j];
        }
      }
    }
    if (c3.requires_grad()) {
      auto& gc = c3.grad();
      for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ci = 0; ci < c; ++ci) {
          const double gv = g[bi * c + ci];
          const double* pt = vt.data() + bi * d;
          double* pc = gc.data() + (bi * c + ci) * d;
          for (int64_t j = 0; j < d; ++j) pc[j] += gv * pt[j];
        }
      }
    }
  });
  return out;
}

Tensor expand_to_classes(const Tensor& t, int c) {
  if (t.ndim() != 2) throw ShapeError("expand_to_classes: expected [B,D]");
  const int64_t b = t.dim(0);
  const int64_t d = t.dim(1);
  Tensor out = Tensor::zeros({static_cast<int>(b), c, static_cast<int>(d)});
  const auto& vt = t.values();
  auto& vo = out.values();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int ci = 0; ci < c; ++ci) {
      std::memcpy(vo.data() + (bi * c + ci) * d, vt.data() + bi * d, sizeof(double) * d);
    }
  }
  check_finite(out, "expand_to_classes");
  record_op(out, {&t}, [t, out, b, c, d]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gt = t.grad();
    for (int64_t bi = 0; bi < b; ++bi) {
      for (int ci = 0; ci < c; ++ci) {
        const double* src = g.data() + (bi * c + ci) * d;
        double* dst = gt.data() + bi * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

Tensor take_diagonal(const Tensor& x) {
  if (x.ndim() != 3 || x.dim(1) != x.dim(2)) throw ShapeError("take_diagonal: expected [B,L,L]");
  const int64_t b = x.dim(0);
  const int64_t l = x.dim(1);
  Tensor out = Tensor::zeros({static_cast<int>(b), static_cast<int>(l)});
  const auto& vx = x.values();
  auto& vo = out.values();
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t i = 0; i < l; ++i) vo[bi * l + i] = vx[(bi * l + i) * l + i];
  }
  check_finite(out, "take_diagonal");
  record_op(out, {&x}, [x, out, b, l]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    auto& gx = x.grad();
    for (int64_t bi = 0; bi < b; ++bi) {
      for (int64_t i = 0; i < l; ++i) gx[(bi * l + i) * l + i] += g[bi * l + i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// RL / loss helpers
// ---------------------------------------------------------------------------

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Tensor out = Tensor::zeros(x.shape());
  const auto& vx = x.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = std::min(std::max(vx[i], lo), hi);
  check_finite(out, "clamp");
  record_op(out, {&x}, [x, out, lo, hi]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vx = x.values();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (vx[i] >= lo && vx[i] <= hi) gx[i] += g[i];
    }
  });
  return out;
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  Tensor out = Tensor::zeros(a.shape());
  const auto& va = a.values();
  const auto& vb = b.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = std::min(va[i], vb[i]);
  check_finite(out, "minimum");
  record_op(out, {&a, &b}, [a, b, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& va = a.values();
    const auto& vb = b.values();
    // Ties route to the first operand.
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (va[i] <= vb[i]) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (va[i] > vb[i]) gb[i] += g[i];
      }
    }
  });
  return out;
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  Tensor out = Tensor::zeros(logits.shape());
  const auto& vs = logits.values();
  const auto& vt = targets.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) vo[i] = stable_softplus(vs[i]) - vs[i] * vt[i];
  check_finite(out, "bce_with_logits");
  record_op(out, {&logits}, [logits, targets, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vs = logits.values();
    const auto& vt = targets.values();
    auto& gs = logits.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      gs[i] += g[i] * (stable_sigmoid(vs[i]) - vt[i]);
    }
  });
  return out;
}

Tensor bernoulli_entropy(const Tensor& logits) {
  Tensor out = Tensor::zeros(logits.shape());
  const auto& vs = logits.values();
  auto& vo = out.values();
  for (size_t i = 0; i < vo.size(); ++i) {
    vo[i] = stable_softplus(vs[i]) - vs[i] * stable_sigmoid(vs[i]);
  }
  check_finite(out, "bernoulli_entropy");
  record_op(out, {&logits}, [logits, out]() {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const auto& vs = logits.values();
    auto& gs = logits.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double p = stable_sigmoid(vs[i]);
      gs[i] += g[i] * (-vs[i] * p * (1.0 - p));
    }
  });
  return out;
}

}  // namespace gliclass
