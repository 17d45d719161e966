#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kgforge/param_store.hpp"
#include "kgforge/rng.hpp"
#include "kgforge/sparse.hpp"
#include "kgforge/tensor.hpp"

namespace kgforge {

// Reverse-mode tape. A forward pass records one node per op in creation order
// (which is already topological); backward() sweeps the record in reverse and
// accumulates parameter gradients into their ParamStore.
//
// Every op validates shapes and checks its output for NaN/Inf, so a numeric
// fault is reported with the op that produced it.

class Tape;

struct TapeNode {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  const char* op = "";
  ParamStore* store = nullptr;  // set for parameter leaves
  std::string param_name;
  std::function<void(TapeNode&)> backward;
};

class Var {
 public:
  Var() = default;
  Var(TapeNode* n, Tape* t) : node_(n), tape_(t) {}

  const Tensor& value() const { return node_->value; }
  const std::vector<std::size_t>& shape() const { return node_->value.shape; }
  double item() const { return node_->value.item(); }

  // Gradient accumulated by the last backward() call (zeros if untouched).
  Tensor grad() const {
    return node_->has_grad ? node_->grad : Tensor::zeros(node_->value.shape);
  }

  bool valid() const { return node_ != nullptr; }
  TapeNode* node() const { return node_; }
  Tape* tape() const { return tape_; }

 private:
  TapeNode* node_ = nullptr;
  Tape* tape_ = nullptr;
};

namespace detail {

inline void ensure_grad(TapeNode* n) {
  if (!n->has_grad) {
    n->grad = Tensor::zeros(n->value.shape);
    n->has_grad = true;
  }
}

inline void add_grad(TapeNode* n, std::size_t i, double v) {
  ensure_grad(n);
  n->grad.data[i] += v;
}

}  // namespace detail

class Tape {
 public:
  Var make(const char* op, Tensor value, bool requires_grad,
           std::function<void(TapeNode&)> backward = nullptr) {
    if (!value.all_finite())
      throw NumericFault(std::string("non-finite value produced by op '") + op + "'");
    nodes_.emplace_back();
    TapeNode& n = nodes_.back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    if (requires_grad) n.backward = std::move(backward);
    return Var(&n, this);
  }

  // Constant leaf: gradients do not flow into it.
  Var constant(Tensor value, const char* op = "constant") {
    return make(op, std::move(value), false);
  }

  // Differentiable leaf not tied to a store (used by gradient checks).
  Var input(Tensor value) { return make("input", std::move(value), true); }

  // Parameter leaf. Repeated requests for the same parameter share one node,
  // so a parameter used in several places accumulates one combined gradient.
  Var param(ParamStore& store, const std::string& name) {
    auto key = std::make_pair(&store, name);
    auto it = param_nodes_.find(key);
    if (it != param_nodes_.end()) return Var(it->second, this);
    Var v = make("param", store.get(name), true);
    v.node()->store = &store;
    v.node()->param_name = name;
    param_nodes_.emplace(key, v.node());
    return v;
  }

  // Reverse sweep from a scalar loss. Parameter gradients accumulate into
  // their stores; call ParamStore::zero_grads() between steps to reset.
  void backward(Var loss) {
    if (loss.tape() != this)
      throw ContractViolation("backward: loss from a different tape");
    TapeNode* root = loss.node();
    if (!root->value.is_scalar())
      throw ContractViolation("backward: loss must be scalar, got shape " +
                              root->value.shape_str());
    detail::ensure_grad(root);
    root->grad.data[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TapeNode& n = *it;
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.backward) n.backward(n);
      if (n.store) n.store->accumulate_grad(n.param_name, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<TapeNode> nodes_;  // deque: stable addresses for closures
  std::map<std::pair<ParamStore*, std::string>, TapeNode*> param_nodes_;
};

// ---------------------------------------------------------------------------
// Ops. Free functions; gradients flow into any parent with requires_grad.
// ---------------------------------------------------------------------------

namespace detail {

inline Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractViolation("op on empty Var");
  return *a.tape();
}

inline void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(op) + ": shape mismatch " +
                            a.value().shape_str() + " vs " + b.value().shape_str());
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  out += b.value();
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "add", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb](TapeNode& self) {
        if (pa->requires_grad) {
          detail::ensure_grad(pa);
          pa->grad += self.grad;
        }
        if (pb->requires_grad) {
          detail::ensure_grad(pb);
          pb->grad += self.grad;
        }
      });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "sub", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb](TapeNode& self) {
        if (pa->requires_grad) {
          detail::ensure_grad(pa);
          pa->grad += self.grad;
        }
        if (pb->requires_grad) {
          detail::ensure_grad(pb);
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb->grad.data[i] -= self.grad.data[i];
        }
      });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "mul", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb](TapeNode& self) {
        if (pa->requires_grad) {
          detail::ensure_grad(pa);
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad.data[i] += self.grad.data[i] * pb->value.data[i];
        }
        if (pb->requires_grad) {
          detail::ensure_grad(pb);
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb->grad.data[i] += self.grad.data[i] * pa->value.data[i];
        }
      });
}

inline Var scale(Var a, double c) {
  Tensor out = a.value();
  out *= c;
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "scale", std::move(out), pa->requires_grad, [pa, c](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa->grad.data[i] += c * self.grad.data[i];
      });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data) v += c;
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "add_scalar", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        pa->grad += self.grad;
      });
}

// Multiply a tensor by a scalar Var (weight * vector in fusion).
inline Var scale_by(Var x, Var s) {
  if (!s.value().is_scalar()) throw ContractViolation("scale_by: s must be scalar");
  const double sv = s.value().item();
  Tensor out = x.value();
  out *= sv;
  TapeNode *px = x.node(), *ps = s.node();
  return detail::tape_of(x).make(
      "scale_by", std::move(out), px->requires_grad || ps->requires_grad,
      [px, ps, sv](TapeNode& self) {
        if (px->requires_grad) {
          detail::ensure_grad(px);
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            px->grad.data[i] += sv * self.grad.data[i];
        }
        if (ps->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            acc += self.grad.data[i] * px->value.data[i];
          detail::add_grad(ps, 0, acc);
        }
      });
}

// Divide a tensor by a scalar Var (temperature in ReDAF).
inline Var div_by(Var x, Var s) {
  if (!s.value().is_scalar()) throw ContractViolation("div_by: s must be scalar");
  const double sv = s.value().item();
  Tensor out = x.value();
  out *= 1.0 / sv;
  TapeNode *px = x.node(), *ps = s.node();
  return detail::tape_of(x).make(
      "div_by", std::move(out), px->requires_grad || ps->requires_grad,
      [px, ps, sv](TapeNode& self) {
        if (px->requires_grad) {
          detail::ensure_grad(px);
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            px->grad.data[i] += self.grad.data[i] / sv;
        }
        if (ps->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            acc += self.grad.data[i] * px->value.data[i];
          detail::add_grad(ps, 0, -acc / (sv * sv));
        }
      });
}

inline Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "relu", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (pa->value.data[i] > 0.0) pa->grad.data[i] += self.grad.data[i];
      });
}

inline Var tanh_op(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = std::tanh(v);
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "tanh", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          double y = self.value.data[i];
          pa->grad.data[i] += self.grad.data[i] * (1.0 - y * y);
        }
      });
}

namespace detail {
inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
inline double stable_softplus(double x) {
  // log(1 + e^x) without overflow.
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
}  // namespace detail

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = detail::stable_sigmoid(v);
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "sigmoid", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          double y = self.value.data[i];
          pa->grad.data[i] += self.grad.data[i] * y * (1.0 - y);
        }
      });
}

inline Var softplus(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = detail::stable_softplus(v);
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "softplus", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa->grad.data[i] +=
              self.grad.data[i] * detail::stable_sigmoid(pa->value.data[i]);
      });
}

inline Var exp_op(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = std::exp(v);
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "exp", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa->grad.data[i] += self.grad.data[i] * self.value.data[i];
      });
}

inline Var log_op(Var a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = std::log(v);
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "log", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa->grad.data[i] += self.grad.data[i] / pa->value.data[i];
      });
}

// Dense matmul: (m x k) * (k x n) -> (m x n); a rank-1 rhs of length k is
// treated as a column, giving a rank-1 result of length m.
inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2) throw ContractViolation("matmul: lhs must be rank 2");
  const std::size_t m = A.shape[0], k = A.shape[1];
  const bool vec = B.rank() == 1;
  const std::size_t n = vec ? 1 : B.shape[1];
  if ((vec ? B.shape[0] : B.shape[0]) != k)
    throw ContractViolation("matmul: inner dimensions differ: " + A.shape_str() +
                            " vs " + B.shape_str());
  Tensor out = vec ? Tensor::zeros({m}) : Tensor::zeros({m, n});
  // i-k-j order: streams over rows of B.
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data.data() + i * n;
    const double* arow = A.data.data() + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = B.data.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "matmul", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb, m, k, n](TapeNode& self) {
        const double* G = self.grad.data.data();
        if (pa->requires_grad) {  // dA += G * B^T
          detail::ensure_grad(pa);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double* brow = pb->value.data.data() + kk * n;
              const double* grow = G + i * n;
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              pa->grad.data[i * k + kk] += acc;
            }
        }
        if (pb->requires_grad) {  // dB += A^T * G
          detail::ensure_grad(pb);
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = pa->value.data.data() + i * k;
            const double* grow = G + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double av = arow[kk];
              if (av == 0.0) continue;
              double* bgrow = pb->grad.data.data() + kk * n;
              for (std::size_t j = 0; j < n; ++j) bgrow[j] += av * grow[j];
            }
          }
        }
      });
}

// A * B^T without materializing the transpose: (n x k) * (m x k)^T -> (n x m).
inline Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2)
    throw ContractViolation("matmul_nt: both operands must be rank 2");
  const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[0];
  if (B.shape[1] != k)
    throw ContractViolation("matmul_nt: inner dimensions differ");
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = A.data.data() + i * k;
    double* orow = out.data.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = B.data.data() + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      orow[j] = acc;
    }
  }
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "matmul_nt", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb, n, k, m](TapeNode& self) {
        const double* G = self.grad.data.data();
        if (pa->requires_grad) {  // dA += G * B
          detail::ensure_grad(pa);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
              const double g = G[i * m + j];
              if (g == 0.0) continue;
              const double* brow = pb->value.data.data() + j * k;
              double* arow = pa->grad.data.data() + i * k;
              for (std::size_t kk = 0; kk < k; ++kk) arow[kk] += g * brow[kk];
            }
        }
        if (pb->requires_grad) {  // dB += G^T * A
          detail::ensure_grad(pb);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
              const double g = G[i * m + j];
              if (g == 0.0) continue;
              const double* arow = pa->value.data.data() + i * k;
              double* brow = pb->grad.data.data() + j * k;
              for (std::size_t kk = 0; kk < k; ++kk) brow[kk] += g * arow[kk];
            }
        }
      });
}

// Fixed sparse matrix times dense: S (r x c) * X (c x d). The caller owns S
// and its transpose and must keep them alive for the tape's lifetime.
inline Var spmm(const SparseMatrix& s, const SparseMatrix& s_t, Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ContractViolation("spmm: rhs must be rank 2");
  if (X.shape[0] != s.n_cols)
    throw ContractViolation("spmm: dimension mismatch");
  const std::size_t d = X.shape[1];
  Tensor out = Tensor::zeros({s.n_rows, d});
  s.multiply_into(X.data.data(), d, out.data.data());
  TapeNode* px = x.node();
  const SparseMatrix* st = &s_t;
  return detail::tape_of(x).make(
      "spmm", std::move(out), px->requires_grad, [px, st, d](TapeNode& self) {
        detail::ensure_grad(px);
        st->multiply_into(self.grad.data.data(), d, px->grad.data.data());
      });
}

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "sum", Tensor::scalar(s), pa->requires_grad, [pa](TapeNode& self) {
        detail::ensure_grad(pa);
        const double g = self.grad.data[0];
        for (auto& v : pa->grad.data) v += g;
      });
}

inline Var mean_all(Var a) {
  if (a.value().size() == 0) throw ContractViolation("mean: empty tensor");
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const double inv = 1.0 / static_cast<double>(a.value().size());
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "mean", Tensor::scalar(s * inv), pa->requires_grad, [pa, inv](TapeNode& self) {
        detail::ensure_grad(pa);
        const double g = self.grad.data[0] * inv;
        for (auto& v : pa->grad.data) v += g;
      });
}

inline Var row_sum(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ContractViolation("row_sum: rank 2 expected");
  const std::size_t n = A.shape[0], d = A.shape[1];
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += A.at(i, j);
    out.data[i] = s;
  }
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "row_sum", std::move(out), pa->requires_grad, [pa, n, d](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < n; ++i) {
          const double g = self.grad.data[i];
          for (std::size_t j = 0; j < d; ++j) pa->grad.data[i * d + j] += g;
        }
      });
}

inline Var col_mean(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ContractViolation("col_mean: rank 2 expected");
  const std::size_t n = A.shape[0], d = A.shape[1];
  if (n == 0) throw ContractViolation("col_mean: empty matrix");
  Tensor out = Tensor::zeros({d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[j] += A.at(i, j);
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out.data) v *= inv;
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "col_mean", std::move(out), pa->requires_grad, [pa, n, d, inv](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            pa->grad.data[i * d + j] += self.grad.data[j] * inv;
      });
}

inline Var dot(Var a, Var b) {
  detail::require_same_shape("dot", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i)
    s += a.value().data[i] * b.value().data[i];
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "dot", Tensor::scalar(s), pa->requires_grad || pb->requires_grad,
      [pa, pb](TapeNode& self) {
        const double g = self.grad.data[0];
        if (pa->requires_grad) {
          detail::ensure_grad(pa);
          for (std::size_t i = 0; i < pa->grad.size(); ++i)
            pa->grad.data[i] += g * pb->value.data[i];
        }
        if (pb->requires_grad) {
          detail::ensure_grad(pb);
          for (std::size_t i = 0; i < pb->grad.size(); ++i)
            pb->grad.data[i] += g * pa->value.data[i];
        }
      });
}

// Softmax over a vector, or row-wise over a matrix. Max-shifted for stability.
inline Var softmax(Var a) {
  const Tensor& A = a.value();
  Tensor out = A;
  const std::size_t rows = A.rank() == 2 ? A.shape[0] : 1;
  const std::size_t cols = A.rank() == 2 ? A.shape[1] : A.shape[0];
  if (A.rank() > 2) throw ContractViolation("softmax: rank must be 1 or 2");
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = out.data.data() + i * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= z;
  }
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "softmax", std::move(out), pa->requires_grad,
      [pa, rows, cols](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < rows; ++i) {
          const double* p = self.value.data.data() + i * cols;
          const double* g = self.grad.data.data() + i * cols;
          double gp = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gp += g[j] * p[j];
          double* out_g = pa->grad.data.data() + i * cols;
          for (std::size_t j = 0; j < cols; ++j) out_g[j] += p[j] * (g[j] - gp);
        }
      });
}

inline Var row_logsumexp(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ContractViolation("row_logsumexp: rank 2 expected");
  const std::size_t n = A.shape[0], d = A.shape[1];
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = A.data.data() + i * d;
    double mx = row[0];
    for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
    out.data[i] = mx + std::log(z);
  }
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "row_logsumexp", std::move(out), pa->requires_grad,
      [pa, n, d](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < n; ++i) {
          const double lse = self.value.data[i];
          const double g = self.grad.data[i];
          const double* row = pa->value.data.data() + i * d;
          double* grow = pa->grad.data.data() + i * d;
          for (std::size_t j = 0; j < d; ++j)
            grow[j] += g * std::exp(row[j] - lse);
        }
      });
}

// Diagonal of a square matrix.
inline Var diag(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2 || A.shape[0] != A.shape[1])
    throw ContractViolation("diag: square matrix expected");
  const std::size_t n = A.shape[0];
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) out.data[i] = A.at(i, i);
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "diag", std::move(out), pa->requires_grad, [pa, n](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < n; ++i)
          pa->grad.data[i * n + i] += self.grad.data[i];
      });
}

// Concatenate rank-1 vectors into one vector.
inline Var concat(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractViolation("concat: empty input");
  std::size_t total = 0;
  for (const Var& x : xs) {
    if (x.value().rank() != 1) throw ContractViolation("concat: rank 1 expected");
    total += x.value().size();
  }
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  bool req = false;
  std::vector<TapeNode*> parents;
  parents.reserve(xs.size());
  for (const Var& x : xs) {
    std::copy(x.value().data.begin(), x.value().data.end(), out.data.begin() + off);
    off += x.value().size();
    parents.push_back(x.node());
    req = req || x.node()->requires_grad;
  }
  return detail::tape_of(xs[0]).make(
      "concat", std::move(out), req, [parents](TapeNode& self) {
        std::size_t off = 0;
        for (TapeNode* p : parents) {
          const std::size_t n = p->value.size();
          if (p->requires_grad) {
            detail::ensure_grad(p);
            for (std::size_t i = 0; i < n; ++i)
              p->grad.data[i] += self.grad.data[off + i];
          }
          off += n;
        }
      });
}

// Stack rank-1 vectors of equal length into a matrix (one per row).
inline Var stack_rows(const std::vector<Var>& xs) {
  if (xs.empty()) throw ContractViolation("stack_rows: empty input");
  const std::size_t d = xs[0].value().size();
  Tensor out = Tensor::zeros({xs.size(), d});
  bool req = false;
  std::vector<TapeNode*> parents;
  parents.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].value().rank() != 1 || xs[i].value().size() != d)
      throw ContractViolation("stack_rows: inconsistent row shapes");
    std::copy(xs[i].value().data.begin(), xs[i].value().data.end(),
              out.data.begin() + i * d);
    parents.push_back(xs[i].node());
    req = req || xs[i].node()->requires_grad;
  }
  return detail::tape_of(xs[0]).make(
      "stack_rows", std::move(out), req, [parents, d](TapeNode& self) {
        for (std::size_t i = 0; i < parents.size(); ++i) {
          TapeNode* p = parents[i];
          if (!p->requires_grad) continue;
          detail::ensure_grad(p);
          for (std::size_t j = 0; j < d; ++j)
            p->grad.data[j] += self.grad.data[i * d + j];
        }
      });
}

// Adds a rank-1 bias to every row of a matrix.
inline Var add_rowvec(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 1 || B.shape[0] != A.shape[1])
    throw ContractViolation("add_rowvec: expected (n x d) + (d)");
  const std::size_t n = A.shape[0], d = A.shape[1];
  Tensor out = A;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] += B.data[j];
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "add_rowvec", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb, n, d](TapeNode& self) {
        if (pa->requires_grad) {
          detail::ensure_grad(pa);
          pa->grad += self.grad;
        }
        if (pb->requires_grad) {
          detail::ensure_grad(pb);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
              pb->grad.data[j] += self.grad.data[i * d + j];
        }
      });
}

// Horizontal concatenation: (n x a) | (n x b) -> (n x (a+b)).
inline Var hconcat(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape[0] != B.shape[0])
    throw ContractViolation("hconcat: row counts differ");
  const std::size_t n = A.shape[0], da = A.shape[1], db = B.shape[1];
  Tensor out = Tensor::zeros({n, da + db});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(A.data.begin() + i * da, A.data.begin() + (i + 1) * da,
              out.data.begin() + i * (da + db));
    std::copy(B.data.begin() + i * db, B.data.begin() + (i + 1) * db,
              out.data.begin() + i * (da + db) + da);
  }
  TapeNode *pa = a.node(), *pb = b.node();
  return detail::tape_of(a).make(
      "hconcat", std::move(out), pa->requires_grad || pb->requires_grad,
      [pa, pb, n, da, db](TapeNode& self) {
        for (std::size_t i = 0; i < n; ++i) {
          if (pa->requires_grad) {
            detail::ensure_grad(pa);
            for (std::size_t j = 0; j < da; ++j)
              pa->grad.data[i * da + j] += self.grad.data[i * (da + db) + j];
          }
          if (pb->requires_grad) {
            detail::ensure_grad(pb);
            for (std::size_t j = 0; j < db; ++j)
              pb->grad.data[i * db + j] += self.grad.data[i * (da + db) + da + j];
          }
        }
      });
}

// Row gather; backward scatter-adds, so repeated indices accumulate.
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ContractViolation("gather_rows: rank 2 expected");
  const std::size_t d = A.shape[1];
  Tensor out = Tensor::zeros({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.shape[0]) throw ContractViolation("gather_rows: index out of range");
    std::copy(A.data.begin() + idx[i] * d, A.data.begin() + (idx[i] + 1) * d,
              out.data.begin() + i * d);
  }
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "gather_rows", std::move(out), pa->requires_grad,
      [pa, idx = std::move(idx), d](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < idx.size(); ++i)
          for (std::size_t j = 0; j < d; ++j)
            pa->grad.data[idx[i] * d + j] += self.grad.data[i * d + j];
      });
}

// Single element of a rank-1 tensor as a scalar.
inline Var element(Var a, std::size_t i) {
  const Tensor& A = a.value();
  if (A.rank() != 1) throw ContractViolation("element: rank 1 expected");
  if (i >= A.size()) throw ContractViolation("element: index out of range");
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "element", Tensor::scalar(A.data[i]), pa->requires_grad,
      [pa, i](TapeNode& self) {
        detail::ensure_grad(pa);
        pa->grad.data[i] += self.grad.data[0];
      });
}

// Single row as a vector.
inline Var row(Var a, std::size_t i) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ContractViolation("row: rank 2 expected");
  if (i >= A.shape[0]) throw ContractViolation("row: index out of range");
  const std::size_t d = A.shape[1];
  Tensor out = Tensor::zeros({d});
  std::copy(A.data.begin() + i * d, A.data.begin() + (i + 1) * d, out.data.begin());
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "row", std::move(out), pa->requires_grad, [pa, i, d](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t j = 0; j < d; ++j)
          pa->grad.data[i * d + j] += self.grad.data[j];
      });
}

// L2-normalize each row; rows with norm below eps divide by eps instead.
inline Var row_l2_normalize(Var a, double eps = 1e-12) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ContractViolation("row_l2_normalize: rank 2 expected");
  const std::size_t n = A.shape[0], d = A.shape[1];
  Tensor out = A;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += A.at(i, j) * A.at(i, j);
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] /= norms[i];
  }
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "row_l2_normalize", std::move(out), pa->requires_grad,
      [pa, n, d, norms = std::move(norms), eps](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < n; ++i) {
          const double* y = self.value.data.data() + i * d;
          const double* g = self.grad.data.data() + i * d;
          double* og = pa->grad.data.data() + i * d;
          // Below eps the map is linear (x / eps).
          double raw = 0.0;
          for (std::size_t j = 0; j < d; ++j)
            raw += pa->value.data[i * d + j] * pa->value.data[i * d + j];
          if (std::sqrt(raw) < eps) {
            for (std::size_t j = 0; j < d; ++j) og[j] += g[j] / eps;
            continue;
          }
          double gy = 0.0;
          for (std::size_t j = 0; j < d; ++j) gy += g[j] * y[j];
          for (std::size_t j = 0; j < d; ++j)
            og[j] += (g[j] - y[j] * gy) / norms[i];
        }
      });
}

// Inverted dropout. Training mode zeroes units with probability `rate` and
// scales survivors by 1/(1-rate); eval mode is the identity.
inline Var dropout(Var a, double rate, bool training, SplitMix64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ContractViolation("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) {
    Tensor out = a.value();
    TapeNode* pa = a.node();
    return detail::tape_of(a).make(
        "dropout", std::move(out), pa->requires_grad, [pa](TapeNode& self) {
          detail::ensure_grad(pa);
          pa->grad += self.grad;
        });
  }
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.value().size());
  for (auto& m : mask) m = rng.next_coin(rate) ? 0.0 : 1.0 / keep;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  TapeNode* pa = a.node();
  return detail::tape_of(a).make(
      "dropout", std::move(out), pa->requires_grad,
      [pa, mask = std::move(mask)](TapeNode& self) {
        detail::ensure_grad(pa);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          pa->grad.data[i] += self.grad.data[i] * mask[i];
      });
}

// sum_i p_i * log(p_i / m_i), with 0 log 0 treated as 0 (gradient defined as 0
// at p_i = 0). Requires m_i > 0 wherever p_i > 0.
inline Var kl_div(Var p, Var m) {
  detail::require_same_shape("kl_div", p, m);
  double s = 0.0;
  for (std::size_t i = 0; i < p.value().size(); ++i) {
    const double pi = p.value().data[i];
    if (pi > 0.0) s += pi * std::log(pi / m.value().data[i]);
  }
  TapeNode *pp = p.node(), *pm = m.node();
  return detail::tape_of(p).make(
      "kl_div", Tensor::scalar(s), pp->requires_grad || pm->requires_grad,
      [pp, pm](TapeNode& self) {
        const double g = self.grad.data[0];
        for (std::size_t i = 0; i < pp->value.size(); ++i) {
          const double pi = pp->value.data[i];
          if (pi <= 0.0) continue;
          const double mi = pm->value.data[i];
          if (pp->requires_grad) {
            detail::ensure_grad(pp);
            pp->grad.data[i] += g * (std::log(pi / mi) + 1.0);
          }
          if (pm->requires_grad) {
            detail::ensure_grad(pm);
            pm->grad.data[i] += -g * pi / mi;
          }
        }
      });
}

// Scalar loss contract plus gradient accumulation into parameter stores.
// Error reporting for non-scalar losses and non-finite forwards lives in
// Tape::backward and Tape::make respectively.
inline void forward_backward(Tape& tape, Var loss) { tape.backward(loss); }

}  // namespace kgforge
