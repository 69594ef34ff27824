// Reverse-mode automatic differentiation over dense double tensors.
//
// Define-by-run: every forward op appends a node to a Tape when any operand
// is tape-attached; the tape is rebuilt per forward pass. Adjoints are
// themselves built out of tape operations, so gradients returned by
// Tape::backward can be differentiated again (exact Hessian-vector products
// fall out of running backward twice).
//
// A Tape is single-threaded; independent tapes may run in parallel.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <utility>
#include <vector>

#include "uda/common.hpp"

namespace uda::ad {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) {
    require(e > 0, "tensor extents must be positive, got " + shape_str(s));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

class Tape;

class Tensor {
 public:
  Tensor() : shape_{0} {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(data))) {
    require(shape_size(shape_) == data_->size(),
            "tensor data length " + std::to_string(data_->size()) +
                " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(const Shape& s) {
    return Tensor(s, std::vector<double>(shape_size(s), 0.0));
  }
  static Tensor full(const Shape& s, double v) {
    return Tensor(s, std::vector<double>(shape_size(s), v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  const std::vector<double>& data() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  bool is_scalar() const { return size() == 1; }
  double value() const {
    require(is_scalar(), "value() on non-scalar tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  int rows() const {
    require(shape_.size() == 2, "rows() on non-matrix of shape " + shape_str(shape_));
    return shape_[0];
  }
  int cols() const {
    require(shape_.size() == 2, "cols() on non-matrix of shape " + shape_str(shape_));
    return shape_[1];
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Constant copy, cut off from any tape (stop-gradient).
  Tensor detached() const { return Tensor(shape_, data()); }

  double l2_norm() const {
    double s = 0.0;
    for (double v : data()) s += v * v;
    return std::sqrt(s);
  }
  bool all_finite() const {
    for (double v : data())
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

class Tape {
 public:
  // Pushes adjoint contributions toward parents; contributions for one node
  // are combined with add() so they remain differentiable.
  using Accumulate = std::function<void(int parent, const Tensor& contribution)>;
  using BackFn = std::function<void(const Tensor& adjoint, const Accumulate&)>;
  using MakeBackFn = std::function<BackFn(const Tensor& out)>;

  Tensor leaf(Shape shape, std::vector<double> data) {
    Tensor t(std::move(shape), std::move(data));
    return attach(std::move(t), {}, [](const Tensor&) { return BackFn(); });
  }
  Tensor leaf(const Tensor& value) { return leaf(value.shape(), value.data()); }

  Tensor record(Tensor out, std::vector<int> parents, const MakeBackFn& make_back) {
    return attach(std::move(out), std::move(parents), make_back);
  }

  std::size_t size() const { return nodes_.size(); }

  class Gradients {
   public:
    // Gradient of the root w.r.t. a tensor on this tape; zeros for tensors
    // that did not influence the root. The result may itself be on the tape
    // and can be differentiated again.
    Tensor grad(const Tensor& x) const {
      if (!x.on_tape() || x.node() >= static_cast<int>(adj_.size()) || !adj_[x.node()])
        return Tensor::zeros(x.shape());
      return *adj_[x.node()];
    }

   private:
    friend class Tape;
    std::vector<std::optional<Tensor>> adj_;
  };

  // Reverse sweep from a scalar root. Visits each pre-existing node at most
  // once; adjoint construction appends new nodes that the sweep never
  // revisits (their indices exceed the root's).
  Gradients backward(const Tensor& root);

 private:
  struct Node {
    std::vector<int> parents;
    BackFn back;
  };

  Tensor attach(Tensor t, std::vector<int> parents, const MakeBackFn& make_back) {
    nodes_.push_back(Node{std::move(parents), BackFn()});
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size()) - 1;
    nodes_.back().back = make_back(t);
    return t;
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline Tape* result_tape(std::initializer_list<const Tensor*> operands) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (!t->on_tape()) continue;
    require(tape == nullptr || tape == t->tape(), "operands belong to different tapes");
    tape = t->tape();
  }
  return tape;
}

inline std::vector<int> parents_of(std::initializer_list<const Tensor*> operands) {
  std::vector<int> p;
  for (const Tensor* t : operands)
    if (t->on_tape()) p.push_back(t->node());
  return p;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor make_result(Tensor out, std::initializer_list<const Tensor*> operands,
                          const Tape::MakeBackFn& make_back) {
  Tape* tape = result_tape(operands);
  if (!tape) return out;
  return tape->record(std::move(out), parents_of(operands), make_back);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor spread_scalar(const Tensor& s, const Shape& shape);
Tensor sum_axis0(const Tensor& a);
Tensor sum_axis1(const Tensor& a);
Tensor broadcast_axis0(const Tensor& v, int n);
Tensor broadcast_axis1(const Tensor& v, int d);
Tensor gather_axis1(const Tensor& a, const std::vector<int>& idx);
Tensor scatter_axis1(const Tensor& v, const std::vector<int>& idx, int cols);
Tensor logsumexp_axis1(const Tensor& a);

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a, &b},
                             [a, b](const Tensor&) -> Tape::BackFn {
                               return [a, b](const Tensor& g, const Tape::Accumulate& acc) {
                                 if (a.on_tape()) acc(a.node(), g);
                                 if (b.on_tape()) acc(b.node(), g);
                               };
                             });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a},
                             [a, c](const Tensor&) -> Tape::BackFn {
                               return [a, c](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), scale(g, c));
                               };
                             });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a, &b},
                             [a, b](const Tensor&) -> Tape::BackFn {
                               return [a, b](const Tensor& g, const Tape::Accumulate& acc) {
                                 if (a.on_tape()) acc(a.node(), g);
                                 if (b.on_tape()) acc(b.node(), neg(g));
                               };
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a, &b},
                             [a, b](const Tensor&) -> Tape::BackFn {
                               return [a, b](const Tensor& g, const Tape::Accumulate& acc) {
                                 if (a.on_tape()) acc(a.node(), mul(g, b));
                                 if (b.on_tape()) acc(b.node(), mul(g, a));
                               };
                             });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("div", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a, &b},
                             [a, b](const Tensor&) -> Tape::BackFn {
                               return [a, b](const Tensor& g, const Tape::Accumulate& acc) {
                                 if (a.on_tape()) acc(a.node(), div(g, b));
                                 if (b.on_tape()) acc(b.node(), neg(div(mul(g, a), mul(b, b))));
                               };
                             });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + c;
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a},
                             [a](const Tensor&) -> Tape::BackFn {
                               return [a](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), g);
                               };
                             });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2,
          "matmul: operands must be matrices, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.cols() == b.rows(), "matmul: inner extents disagree, " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
  const int n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < k; ++l) {
      const double av = a[static_cast<std::size_t>(i) * k + l];
      if (av == 0.0) continue;
      for (int j = 0; j < m; ++j)
        out[static_cast<std::size_t>(i) * m + j] += av * b[static_cast<std::size_t>(l) * m + j];
    }
  return detail::make_result(Tensor({n, m}, std::move(out)), {&a, &b},
                             [a, b](const Tensor&) -> Tape::BackFn {
                               return [a, b](const Tensor& g, const Tape::Accumulate& acc) {
                                 if (a.on_tape()) acc(a.node(), matmul(g, transpose(b)));
                                 if (b.on_tape()) acc(b.node(), matmul(transpose(a), g));
                               };
                             });
}

inline Tensor transpose(const Tensor& a) {
  require(a.shape().size() == 2, "transpose: operand must be a matrix, got " + shape_str(a.shape()));
  const int n = a.rows(), m = a.cols();
  std::vector<double> out(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out[static_cast<std::size_t>(j) * n + i] = a[static_cast<std::size_t>(i) * m + j];
  return detail::make_result(Tensor({m, n}, std::move(out)), {&a},
                             [a](const Tensor&) -> Tape::BackFn {
                               return [a](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), transpose(g));
                               };
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size()), mask(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = a[i] > 0.0 ? 1.0 : 0.0;
    out[i] = a[i] > 0.0 ? a[i] : 0.0;
  }
  Tensor mask_t(a.shape(), std::move(mask));  // constant; second derivative is 0 a.e.
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a},
                             [a, mask_t](const Tensor&) -> Tape::BackFn {
                               return [a, mask_t](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), mul(g, mask_t));
                               };
                             });
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a},
                             [a](const Tensor& result) -> Tape::BackFn {
                               return [a, result](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), mul(g, result));
                               };
                             });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    require(a[i] > 0.0, "log: operand must be strictly positive, got " + std::to_string(a[i]) +
                            " at flat index " + std::to_string(i));
    out[i] = std::log(a[i]);
  }
  return detail::make_result(Tensor(a.shape(), std::move(out)), {&a},
                             [a](const Tensor&) -> Tape::BackFn {
                               return [a](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), div(g, a));
                               };
                             });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result(Tensor::scalar(s), {&a},
                             [a](const Tensor&) -> Tape::BackFn {
                               return [a](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), spread_scalar(g, a.shape()));
                               };
                             });
}

inline Tensor spread_scalar(const Tensor& s, const Shape& shape) {
  require(s.is_scalar(), "spread_scalar: source must be a scalar");
  Tensor out = Tensor::full(shape, s.value());
  return detail::make_result(std::move(out), {&s},
                             [s](const Tensor&) -> Tape::BackFn {
                               return [s](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(s.node(), sum(g));
                               };
                             });
}

inline Tensor sum_axis0(const Tensor& a) {
  require(a.shape().size() == 2, "sum_axis0: operand must be a matrix");
  const int n = a.rows(), d = a.cols();
  std::vector<double> out(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[j] += a[static_cast<std::size_t>(i) * d + j];
  return detail::make_result(Tensor({d}, std::move(out)), {&a},
                             [a, n](const Tensor&) -> Tape::BackFn {
                               return [a, n](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), broadcast_axis0(g, n));
                               };
                             });
}

inline Tensor sum_axis1(const Tensor& a) {
  require(a.shape().size() == 2, "sum_axis1: operand must be a matrix");
  const int n = a.rows(), d = a.cols();
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[i] += a[static_cast<std::size_t>(i) * d + j];
  return detail::make_result(Tensor({n}, std::move(out)), {&a},
                             [a, d](const Tensor&) -> Tape::BackFn {
                               return [a, d](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), broadcast_axis1(g, d));
                               };
                             });
}

// Row vector v (d) replicated over n rows -> (n x d).
inline Tensor broadcast_axis0(const Tensor& v, int n) {
  require(v.shape().size() == 1, "broadcast_axis0: source must be a vector");
  const int d = static_cast<int>(v.size());
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = v[j];
  return detail::make_result(Tensor({n, d}, std::move(out)), {&v},
                             [v](const Tensor&) -> Tape::BackFn {
                               return [v](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(v.node(), sum_axis0(g));
                               };
                             });
}

// Column vector v (n) replicated over d columns -> (n x d).
inline Tensor broadcast_axis1(const Tensor& v, int d) {
  require(v.shape().size() == 1, "broadcast_axis1: source must be a vector");
  const int n = static_cast<int>(v.size());
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[static_cast<std::size_t>(i) * d + j] = v[i];
  return detail::make_result(Tensor({n, d}, std::move(out)), {&v},
                             [v](const Tensor&) -> Tape::BackFn {
                               return [v](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(v.node(), sum_axis1(g));
                               };
                             });
}

inline Tensor gather_axis1(const Tensor& a, const std::vector<int>& idx) {
  require(a.shape().size() == 2, "gather_axis1: operand must be a matrix");
  const int n = a.rows(), k = a.cols();
  require(static_cast<int>(idx.size()) == n,
          "gather_axis1: index count " + std::to_string(idx.size()) + " != rows " + std::to_string(n));
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    require(idx[i] >= 0 && idx[i] < k, "gather_axis1: index out of range at row " + std::to_string(i));
    out[i] = a[static_cast<std::size_t>(i) * k + idx[i]];
  }
  return detail::make_result(Tensor({n}, std::move(out)), {&a},
                             [a, idx, k](const Tensor&) -> Tape::BackFn {
                               return [a, idx, k](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(a.node(), scatter_axis1(g, idx, k));
                               };
                             });
}

inline Tensor scatter_axis1(const Tensor& v, const std::vector<int>& idx, int cols) {
  require(v.shape().size() == 1, "scatter_axis1: source must be a vector");
  const int n = static_cast<int>(v.size());
  require(static_cast<int>(idx.size()) == n, "scatter_axis1: index count mismatch");
  std::vector<double> out(static_cast<std::size_t>(n) * cols, 0.0);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * cols + idx[i]] = v[i];
  return detail::make_result(Tensor({n, cols}, std::move(out)), {&v},
                             [v, idx](const Tensor&) -> Tape::BackFn {
                               return [v, idx](const Tensor& g, const Tape::Accumulate& acc) {
                                 acc(v.node(), gather_axis1(g, idx));
                               };
                             });
}

// Stable log(sum_j exp(a_ij)) per row -> (n).
inline Tensor logsumexp_axis1(const Tensor& a) {
  require(a.shape().size() == 2, "logsumexp_axis1: operand must be a matrix");
  const int n = a.rows(), k = a.cols();
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) {
    double mx = a[static_cast<std::size_t>(i) * k];
    for (int j = 1; j < k; ++j) mx = std::max(mx, a[static_cast<std::size_t>(i) * k + j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(a[static_cast<std::size_t>(i) * k + j] - mx);
    out[i] = mx + std::log(s);
  }
  return detail::make_result(
      Tensor({n}, std::move(out)), {&a},
      [a, k](const Tensor& result) -> Tape::BackFn {
        // d/da_ij = exp(a_ij - lse_i); expressed with tape ops so the
        // gradient itself stays differentiable.
        return [a, k, result](const Tensor& g, const Tape::Accumulate& acc) {
          Tensor softmax = exp(sub(a, broadcast_axis1(result, k)));
          acc(a.node(), mul(softmax, broadcast_axis1(g, k)));
        };
      });
}

// ---------------------------------------------------------------------------
// Composite helpers (differentiable through the primitives above)
// ---------------------------------------------------------------------------

inline Tensor square(const Tensor& a) { return mul(a, a); }

inline Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor l2_norm_squared(const Tensor& a) { return sum(square(a)); }

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

inline Tensor abs(const Tensor& a) { return add(relu(a), relu(neg(a))); }

// Stable softplus: max(x,0) + log(1 + exp(-|x|)).
inline Tensor softplus(const Tensor& a) {
  return add(relu(a), log(add_scalar(exp(neg(abs(a))), 1.0)));
}

inline Tensor bias_add(const Tensor& a, const Tensor& b) {
  return add(a, broadcast_axis0(b, a.rows()));
}

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  return bias_add(matmul(x, w), b);
}

// Mean softmax cross-entropy of logits (n x k) against integer labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, "softmax_cross_entropy: logits must be a matrix");
  require(static_cast<int>(labels.size()) == logits.rows(),
          "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(logits.rows()) + " rows");
  return mean(sub(logsumexp_axis1(logits), gather_axis1(logits, labels)));
}

// Entry (i,j) = log N(x_i; mean_j, diag(stddev_j^2)) for x (a x d),
// mean (b x d), stddev (b x d). Built from primitives so it supports
// double backward; the expansion is
//   -d/2 log(2pi) - sum_k log s_jk - 1/2 sum_k (x_ik - m_jk)^2 / s_jk^2.
inline Tensor gaussian_logpdf_matrix(const Tensor& x, const Tensor& mean, const Tensor& stddev) {
  require(x.shape().size() == 2 && mean.shape().size() == 2 && stddev.shape().size() == 2,
          "gaussian_logpdf_matrix: all operands must be matrices");
  detail::check_same_shape("gaussian_logpdf_matrix(mean,stddev)", mean, stddev);
  require(x.cols() == mean.cols(), "gaussian_logpdf_matrix: dimension mismatch " +
                                       shape_str(x.shape()) + " vs " + shape_str(mean.shape()));
  for (double s : stddev.data())
    require(s > 0.0, "gaussian_logpdf_matrix: stddev must be strictly positive");
  const int a = x.rows(), d = x.cols();
  Tensor r2 = div(Tensor::full(mean.shape(), 1.0), square(stddev));
  Tensor quad = scale(matmul(square(x), transpose(r2)), -0.5);
  Tensor cross = matmul(x, transpose(mul(mean, r2)));
  Tensor comp_const =
      add_scalar(neg(add(sum_axis1(log(stddev)), scale(sum_axis1(mul(square(mean), r2)), 0.5))),
                 -0.5 * d * std::log(2.0 * M_PI));
  return add(add(quad, cross), broadcast_axis0(comp_const, a));
}

// ---------------------------------------------------------------------------
// Backward & Hessian-vector products
// ---------------------------------------------------------------------------

inline Tape::Gradients Tape::backward(const Tensor& root) {
  require(root.on_tape() && root.tape() == this, "backward: root is not on this tape");
  require(root.is_scalar(),
          "backward: root must be a scalar, got shape " + shape_str(root.shape()));
  const int root_node = root.node();
  Gradients out;
  out.adj_.resize(static_cast<std::size_t>(root_node) + 1);
  out.adj_[root_node] = Tensor::scalar(1.0);
  Accumulate accumulate = [&out](int parent, const Tensor& contribution) {
    auto& slot = out.adj_[parent];
    slot = slot ? add(*slot, contribution) : contribution;
  };
  for (int i = root_node; i >= 0; --i) {
    if (!out.adj_[i] || !nodes_[i].back) continue;
    nodes_[i].back(*out.adj_[i], accumulate);
  }
  return out;
}

enum class HvpMode { kFiniteDifference, kExact };

using ScalarLossFn = std::function<Tensor(Tape&, const Tensor& w)>;

// Gradient of loss_fn at the (constant) parameter point w, as plain data.
inline Tensor gradient_at(const ScalarLossFn& loss_fn, const Tensor& w) {
  Tape tape;
  Tensor wl = tape.leaf(w);
  Tensor loss = loss_fn(tape, wl);
  return tape.backward(loss).grad(wl).detached();
}

// H v for the Hessian of loss_fn at w. Finite-difference mode uses central
// differences on the gradient; exact mode differentiates through the
// adjoint graph (requires every op on the path to support double backward,
// which all ops in this header do).
inline Tensor hessian_vector_product(const ScalarLossFn& loss_fn, const Tensor& w,
                                     const Tensor& v, HvpMode mode) {
  detail::check_same_shape("hessian_vector_product", w, v);
  if (mode == HvpMode::kExact) {
    Tape tape;
    Tensor wl = tape.leaf(w);
    Tensor loss = loss_fn(tape, wl);
    Tensor gw = tape.backward(loss).grad(wl);
    Tensor s = dot(gw, v.detached());
    require(s.on_tape(), "hessian_vector_product: loss does not depend on w");
    return tape.backward(s).grad(wl).detached();
  }
  const double v_norm = v.l2_norm();
  if (v_norm == 0.0) return Tensor::zeros(w.shape());
  const double eps = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + w.l2_norm()) /
                     std::max(v_norm, 1e-12);
  std::vector<double> wp(w.data()), wm(w.data());
  for (std::size_t i = 0; i < wp.size(); ++i) {
    wp[i] += eps * v[i];
    wm[i] -= eps * v[i];
  }
  Tensor gp = gradient_at(loss_fn, Tensor(w.shape(), std::move(wp)));
  Tensor gm = gradient_at(loss_fn, Tensor(w.shape(), std::move(wm)));
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
  return Tensor(w.shape(), std::move(out));
}

}  // namespace uda::ad
