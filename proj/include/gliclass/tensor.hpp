#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gliclass/error.hpp"
#include "gliclass/random.hpp"

namespace gliclass {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

// Integer matrix for token ids and masks (kept out of the autodiff graph).
struct IntMat {
  int rows = 0;
  int cols = 0;
  std::vector<int> v;

  IntMat() = default;
  IntMat(int r, int c, int fill = 0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

  int& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  int at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
};

// Dense float64 tensor handle. Values are immutable once produced by an op;
// parameter data is mutated only by optimizers between forward passes.
// Copying a Tensor copies the handle, not the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from_vector(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int ndim() const { return static_cast<int>(p_->shape.size()); }
  int dim(int i) const;  // supports negative indices
  int64_t numel() const { return static_cast<int64_t>(p_->data.size()); }

  std::vector<double>& values() const { return p_->data; }
  double item() const;

  bool requires_grad() const { return p_->requires_grad; }
  void set_requires_grad(bool rg) { p_->requires_grad = rg; }

  std::vector<double>& grad() const;  // allocates zeros on first access
  bool has_grad() const { return !p_->grad.empty(); }
  void zero_grad() const;

  // Copy of the data in a fresh tensor outside the autodiff graph.
  Tensor detach() const;
  // Deep copy preserving requires_grad.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> p_;

  static Tensor wrap(std::shared_ptr<Impl> p) {
    Tensor t;
    t.p_ = std::move(p);
    return t;
  }
  static std::shared_ptr<Impl> make(Shape shape, bool requires_grad);
};

// Wengert list: ops append backward closures in recording order, backward
// replays them reversed exactly once.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }

  // Seeds root grad with 1 and runs all recorded closures in reverse.
  // Root must be a scalar recorded under this tape.
  void backward(const Tensor& root);

  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

Tape* active_tape();

// RAII activation of a tape for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---------------------------------------------------------------------------
// Ops. Each checks shapes, produces finite outputs (non-finite results raise
// NumericError) and records its backward closure on the active tape.
// ---------------------------------------------------------------------------

// c[..,m,n] = a[..,m,k] * b[..,k,n]; b may be 2-D and is then shared across
// the leading batch dims of a.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
// x[..,n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor vexp(const Tensor& x);
Tensor vlog(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// Tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
Tensor gelu(const Tensor& x);
// x^gamma elementwise, x >= 0 required (and x > 0 when gamma < 1).
Tensor power(const Tensor& x, double gamma);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);
// x / ||x||_2 along axis; zero vectors are a domain error.
Tensor l2_normalize(const Tensor& x, int axis = -1);
// Normalization over the last axis with learned gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose_last2(const Tensor& x);
// Slice of the last axis: x[.., start:start+len].
Tensor slice_last(const Tensor& x, int start, int len);
// Concatenation along the last axis.
Tensor concat_last(const std::vector<Tensor>& xs);
// Stacks equally shaped tensors along a new leading axis.
Tensor stack0(const std::vector<Tensor>& xs);

// table[V,D] gathered by ids -> [rows, cols, D]. Backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, const IntMat& ids);
// H[B,L,D] gathered at per-example positions -> [B, C, D]; rows beyond
// positions[b].size() are zero. Backward routes grads to source positions.
Tensor gather_positions(const Tensor& h, const std::vector<std::vector<int>>& positions, int c_max);
// out[b,c] = mask ? x[b,c] : fill. Grad flows only where mask is 1.
Tensor select_where(const IntMat& mask, const Tensor& x, double fill);
// out[b,l,:] = x[b,l,:] * w[b,l]; gradients to both.
Tensor mul_rows(const Tensor& x, const Tensor& w);
// out[b,...] = x[b,...] * s[b]; gradients to both.
Tensor scale_per_example(const Tensor& x, const Tensor& s);
// Inverse of gather_positions: rows of values[B,C,D] written to an [B,L,D]
// zero tensor at per-example positions. Positions must be distinct.
Tensor scatter_positions(const Tensor& values, const std::vector<std::vector<int>>& positions,
                         int l);
// out[b,c] = dot(t[b,:], c3[b,c,:]).
Tensor batched_dot(const Tensor& t, const Tensor& c3);
// t[B,D] -> [B,C,D] by repetition; backward sums over C.
Tensor expand_to_classes(const Tensor& t, int c);
// diag of x[B,L,L] -> [B,L].
Tensor take_diagonal(const Tensor& x);

Tensor clamp(const Tensor& x, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);
// Stable elementwise -[t*log(sigmoid(s)) + (1-t)*log(1-sigmoid(s))].
// Gradient flows to logits only; targets are treated as constants.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
// Elementwise Bernoulli entropy H(sigmoid(s)).
Tensor bernoulli_entropy(const Tensor& logits);

}  // namespace gliclass
