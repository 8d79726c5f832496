#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "bayesvla/errors.hpp"
#include "bayesvla/rng.hpp"

namespace bayesvla::nn {

// Reverse-mode autodiff over dense 2-D tensors (row-major). Ops build a tape
// of shared nodes; Tensor::backward() runs the tape in reverse topological
// order. Float for training, double for finite-difference gradient tests —
// every model block below is templated on the scalar type for that reason.

namespace detail {

template <class T>
struct Node {
  int rows = 0, cols = 0;
  std::vector<T> val;
  std::vector<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
  bool frozen = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t size() const { return val.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(val.size(), T(0));
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using NodeT = detail::Node<T>;

  Tensor() = default;

  static Tensor zeros(int rows, int cols, bool requires_grad = false) {
    Tensor t;
    t.n_ = std::make_shared<NodeT>();
    t.n_->rows = rows;
    t.n_->cols = cols;
    t.n_->val.assign(static_cast<std::size_t>(rows) * cols, T(0));
    t.n_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(int rows, int cols, T value, bool requires_grad = false) {
    Tensor t = zeros(rows, cols, requires_grad);
    std::fill(t.n_->val.begin(), t.n_->val.end(), value);
    return t;
  }

  static Tensor from(int rows, int cols, std::vector<T> data,
                     bool requires_grad = false) {
    if (data.size() != static_cast<std::size_t>(rows) * cols)
      throw ShapeError("Tensor::from: data length does not match shape");
    Tensor t = zeros(rows, cols, requires_grad);
    t.n_->val = std::move(data);
    return t;
  }

  static Tensor row(std::vector<T> data, bool requires_grad = false) {
    const int n = static_cast<int>(data.size());
    return from(1, n, std::move(data), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from(1, 1, {v}, requires_grad);
  }

  static Tensor randn(int rows, int cols, Rng& rng, T stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(rows, cols, requires_grad);
    for (auto& v : t.n_->val) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  bool valid() const { return static_cast<bool>(n_); }
  int rows() const { return n_->rows; }
  int cols() const { return n_->cols; }
  std::size_t size() const { return n_->val.size(); }
  std::vector<T>& data() { return n_->val; }
  const std::vector<T>& data() const { return n_->val; }
  const std::vector<T>& grad() const { return n_->grad; }
  std::vector<T>& grad_mut() {
    n_->ensure_grad();
    return n_->grad;
  }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }
  bool frozen() const { return n_->frozen; }
  void set_frozen(bool b) { n_->frozen = b; }

  T at(int r, int c) const { return n_->val[static_cast<std::size_t>(r) * n_->cols + c]; }
  T& at(int r, int c) { return n_->val[static_cast<std::size_t>(r) * n_->cols + c]; }

  T item() const {
    if (size() != 1) throw ShapeError("Tensor::item: not a scalar");
    return n_->val[0];
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  // Reverse pass from this scalar. Iterative topological order.
  void backward() {
    if (size() != 1) throw ShapeError("backward: loss must be scalar");
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        NodeT* p = node->parents[idx].get();
        ++idx;
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodeT* node = *it;
      if (node->backward && !node->grad.empty()) node->backward(*node);
    }
  }

  std::shared_ptr<NodeT> node() const { return n_; }

  static Tensor wrap(std::shared_ptr<NodeT> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<NodeT> n_;
};

namespace detail {

template <class T>
std::shared_ptr<Node<T>> make_result(int rows, int cols,
                                     std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->val.assign(static_cast<std::size_t>(rows) * cols, T(0));
  n->requires_grad = false;
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->parents = std::move(parents);
  return n;
}

// C += A * B, A:[m,k] B:[k,n] C:[m,n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      if (av == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T, A:[m,k] B:[n,k] C:[m,n]
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T acc = T(0);
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C += A^T * B, A:[m,k] B:[m,n] C:[k,n]
template <class T>
void gemm_tn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    const T* brow = b + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const T av = arow[l];
      if (av == T(0)) continue;
      T* crow = c + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ops

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree (" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows(), b.cols(), {an, bn});
  detail::gemm_acc(an->val.data(), bn->val.data(), n->val.data(), a.rows(),
                   a.cols(), b.cols());
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      const int m = ap->rows, k = ap->cols, nn = bp->cols;
      if (ap->requires_grad) {
        ap->ensure_grad();
        detail::gemm_nt_acc(out.grad.data(), bp->val.data(), ap->grad.data(), m, nn, k);
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        detail::gemm_tn_acc(ap->val.data(), out.grad.data(), bp->grad.data(), m, k, nn);
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// a * b^T
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: inner dimensions disagree");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows(), b.rows(), {an, bn});
  detail::gemm_nt_acc(an->val.data(), bn->val.data(), n->val.data(), a.rows(),
                      a.cols(), b.rows());
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      const int m = ap->rows, k = ap->cols, nn = bp->rows;
      if (ap->requires_grad) {
        ap->ensure_grad();
        detail::gemm_acc(out.grad.data(), bp->val.data(), ap->grad.data(), m, nn, k);
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        detail::gemm_tn_acc(out.grad.data(), ap->val.data(), bp->grad.data(), m, nn, k);
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("add: shape mismatch");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an, bn});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = an->val[i] + bn->val[i];
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i) ap->grad[i] += out.grad[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i) bp->grad[i] += out.grad[i];
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rows() != 1 || a.cols() != b.cols())
    throw ShapeError("add_rowvec: expected [1 x cols] bias");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an, bn});
  const int c = a.cols();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < c; ++j)
      n->val[static_cast<std::size_t>(i) * c + j] =
          an->val[static_cast<std::size_t>(i) * c + j] + bn->val[j];
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      const int c2 = out.cols;
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i) ap->grad[i] += out.grad[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (int i = 0; i < out.rows; ++i)
          for (int j = 0; j < c2; ++j)
            bp->grad[j] += out.grad[static_cast<std::size_t>(i) * c2 + j];
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mul: shape mismatch");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an, bn});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = an->val[i] * bn->val[i];
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i)
          ap->grad[i] += out.grad[i] * bp->val[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i)
          bp->grad[i] += out.grad[i] * ap->val[i];
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// per-row broadcast multiply: out[i,j] = a[i,j] * b[0,j]
template <class T>
Tensor<T> mul_rowvec(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rows() != 1 || a.cols() != b.cols())
    throw ShapeError("mul_rowvec: expected [1 x cols] vector");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an, bn});
  const int c = a.cols();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < c; ++j)
      n->val[static_cast<std::size_t>(i) * c + j] =
          an->val[static_cast<std::size_t>(i) * c + j] * bn->val[j];
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      const int c2 = out.cols;
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (int i = 0; i < out.rows; ++i)
          for (int j = 0; j < c2; ++j)
            ap->grad[static_cast<std::size_t>(i) * c2 + j] +=
                out.grad[static_cast<std::size_t>(i) * c2 + j] * bp->val[j];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        for (int i = 0; i < out.rows; ++i)
          for (int j = 0; j < c2; ++j)
            bp->grad[j] += out.grad[static_cast<std::size_t>(i) * c2 + j] *
                           ap->val[static_cast<std::size_t>(i) * c2 + j];
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// per-row scalar multiply: out[i,:] = s[i,0] * a[i,:]
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.cols() != 1 || s.rows() != a.rows())
    throw ShapeError("scale_rows: expected [rows x 1] scale");
  auto an = a.node(), sn = s.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an, sn});
  const int c = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const T sv = sn->val[i];
    for (int j = 0; j < c; ++j)
      n->val[static_cast<std::size_t>(i) * c + j] =
          sv * an->val[static_cast<std::size_t>(i) * c + j];
  }
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* sp = sn.get();
    n->backward = [ap, sp](detail::Node<T>& out) {
      const int c2 = out.cols;
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (int i = 0; i < out.rows; ++i)
          for (int j = 0; j < c2; ++j)
            ap->grad[static_cast<std::size_t>(i) * c2 + j] +=
                out.grad[static_cast<std::size_t>(i) * c2 + j] * sp->val[i];
      }
      if (sp->requires_grad) {
        sp->ensure_grad();
        for (int i = 0; i < out.rows; ++i) {
          T acc = T(0);
          for (int j = 0; j < c2; ++j)
            acc += out.grad[static_cast<std::size_t>(i) * c2 + j] *
                   ap->val[static_cast<std::size_t>(i) * c2 + j];
          sp->grad[i] += acc;
        }
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = an->val[i] * c;
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, c](detail::Node<T>& out) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) ap->grad[i] += out.grad[i] * c;
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> exp_t(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an});
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = std::exp(an->val[i]);
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap](detail::Node<T>& out) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i)
        ap->grad[i] += out.grad[i] * out.val[i];
    };
  }
  return Tensor<T>::wrap(n);
}

// multiply every element by a [1 x 1] scalar tensor
template <class T>
Tensor<T> scale_by(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) throw ShapeError("scale_by: scalar tensor required");
  auto an = a.node(), sn = s.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an, sn});
  const T sv = sn->val[0];
  for (std::size_t i = 0; i < n->size(); ++i) n->val[i] = an->val[i] * sv;
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* sp = sn.get();
    n->backward = [ap, sp](detail::Node<T>& out) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (std::size_t i = 0; i < out.size(); ++i)
          ap->grad[i] += out.grad[i] * sp->val[0];
      }
      if (sp->requires_grad) {
        sp->ensure_grad();
        T acc = T(0);
        for (std::size_t i = 0; i < out.size(); ++i) acc += out.grad[i] * ap->val[i];
        sp->grad[0] += acc;
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an});
  for (std::size_t i = 0; i < n->size(); ++i) {
    const T x = an->val[i];
    n->val[i] = x * T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
  }
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap](detail::Node<T>& out) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = ap->val[i];
        const T phi = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
        const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
        ap->grad[i] += out.grad[i] * (cdf + x * phi);
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an});
  const int c = a.cols();
  if (c == 0) throw ShapeError("softmax: empty axis");
  for (int i = 0; i < a.rows(); ++i) {
    const T* x = an->val.data() + static_cast<std::size_t>(i) * c;
    T* y = n->val.data() + static_cast<std::size_t>(i) * c;
    T mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= sum;
  }
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap](detail::Node<T>& out) {
      ap->ensure_grad();
      const int c2 = out.cols;
      for (int i = 0; i < out.rows; ++i) {
        const T* s = out.val.data() + static_cast<std::size_t>(i) * c2;
        const T* dy = out.grad.data() + static_cast<std::size_t>(i) * c2;
        T dot = T(0);
        for (int j = 0; j < c2; ++j) dot += dy[j] * s[j];
        T* dx = ap->grad.data() + static_cast<std::size_t>(i) * c2;
        for (int j = 0; j < c2; ++j) dx[j] += s[j] * (dy[j] - dot);
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// row-wise mean/variance normalization, eps floor handles constant rows
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& a, T eps = T(1e-5)) {
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an});
  const int c = a.cols();
  if (c == 0) throw ShapeError("layer_norm: empty row");
  for (int i = 0; i < a.rows(); ++i) {
    const T* x = an->val.data() + static_cast<std::size_t>(i) * c;
    T* y = n->val.data() + static_cast<std::size_t>(i) * c;
    T mean = T(0);
    for (int j = 0; j < c; ++j) mean += x[j];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (int j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) y[j] = (x[j] - mean) * inv;
  }
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, eps](detail::Node<T>& out) {
      ap->ensure_grad();
      const int c2 = out.cols;
      const T invc = T(1) / static_cast<T>(c2);
      for (int i = 0; i < out.rows; ++i) {
        const T* x = ap->val.data() + static_cast<std::size_t>(i) * c2;
        const T* y = out.val.data() + static_cast<std::size_t>(i) * c2;
        const T* dy = out.grad.data() + static_cast<std::size_t>(i) * c2;
        T mean = T(0);
        for (int j = 0; j < c2; ++j) mean += x[j];
        mean *= invc;
        T var = T(0);
        for (int j = 0; j < c2; ++j) var += (x[j] - mean) * (x[j] - mean);
        var *= invc;
        const T inv = T(1) / std::sqrt(var + eps);
        T mdy = T(0), mdyy = T(0);
        for (int j = 0; j < c2; ++j) {
          mdy += dy[j];
          mdyy += dy[j] * y[j];
        }
        mdy *= invc;
        mdyy *= invc;
        T* dx = ap->grad.data() + static_cast<std::size_t>(i) * c2;
        for (int j = 0; j < c2; ++j) dx[j] += inv * (dy[j] - mdy - y[j] * mdyy);
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// mean of -log softmax(logits)[label] over rows
template <class T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != logits.rows())
    throw ShapeError("cross_entropy: one label per row required");
  const int c = logits.cols();
  for (int lbl : labels)
    if (lbl < 0 || lbl >= c)
      throw Error("cross_entropy: label out of range: " + std::to_string(lbl));
  auto ln = logits.node();
  auto n = detail::make_result<T>(1, 1, {ln});
  const int m = logits.rows();
  std::vector<T> probs(ln->val.size());
  T loss = T(0);
  for (int i = 0; i < m; ++i) {
    const T* x = ln->val.data() + static_cast<std::size_t>(i) * c;
    T* p = probs.data() + static_cast<std::size_t>(i) * c;
    T mx = x[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(x[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < c; ++j) p[j] /= sum;
    loss -= std::log(std::max(p[labels[i]], T(1e-30)));
  }
  n->val[0] = loss / static_cast<T>(m);
  if (n->requires_grad) {
    auto* lp = ln.get();
    n->backward = [lp, labels, probs = std::move(probs)](detail::Node<T>& out) {
      lp->ensure_grad();
      const int c2 = lp->cols;
      const int m2 = lp->rows;
      const T g = out.grad[0] / static_cast<T>(m2);
      for (int i = 0; i < m2; ++i) {
        const T* p = probs.data() + static_cast<std::size_t>(i) * c2;
        T* dx = lp->grad.data() + static_cast<std::size_t>(i) * c2;
        for (int j = 0; j < c2; ++j)
          dx[j] += g * (p[j] - (j == labels[i] ? T(1) : T(0)));
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// mean squared error against a constant target
template <class T>
Tensor<T> mse_mean(const Tensor<T>& a, const std::vector<T>& target) {
  if (a.size() != target.size()) throw ShapeError("mse: target size mismatch");
  auto an = a.node();
  auto n = detail::make_result<T>(1, 1, {an});
  T loss = T(0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T d = an->val[i] - target[i];
    loss += d * d;
  }
  n->val[0] = loss / static_cast<T>(target.size());
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, target](detail::Node<T>& out) {
      ap->ensure_grad();
      const T g = out.grad[0] * T(2) / static_cast<T>(target.size());
      for (std::size_t i = 0; i < target.size(); ++i)
        ap->grad[i] += g * (ap->val[i] - target[i]);
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_result<T>(1, 1, {an});
  T s = T(0);
  for (auto v : an->val) s += v;
  n->val[0] = s / static_cast<T>(an->val.size());
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap](detail::Node<T>& out) {
      ap->ensure_grad();
      const T g = out.grad[0] / static_cast<T>(ap->val.size());
      for (std::size_t i = 0; i < ap->val.size(); ++i) ap->grad[i] += g;
    };
  }
  return Tensor<T>::wrap(n);
}

// mean over rows -> [1 x cols]
template <class T>
Tensor<T> mean_over_rows(const Tensor<T>& a) {
  auto an = a.node();
  auto n = detail::make_result<T>(1, a.cols(), {an});
  const int c = a.cols();
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < c; ++j)
      n->val[j] += an->val[static_cast<std::size_t>(i) * c + j];
  for (int j = 0; j < c; ++j) n->val[j] /= static_cast<T>(a.rows());
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap](detail::Node<T>& out) {
      ap->ensure_grad();
      const int c2 = out.cols;
      const T g = T(1) / static_cast<T>(ap->rows);
      for (int i = 0; i < ap->rows; ++i)
        for (int j = 0; j < c2; ++j)
          ap->grad[static_cast<std::size_t>(i) * c2 + j] += out.grad[j] * g;
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column mismatch");
  auto an = a.node(), bn = b.node();
  auto n = detail::make_result<T>(a.rows() + b.rows(), a.cols(), {an, bn});
  std::copy(an->val.begin(), an->val.end(), n->val.begin());
  std::copy(bn->val.begin(), bn->val.end(), n->val.begin() + an->val.size());
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp](detail::Node<T>& out) {
      if (ap->requires_grad) {
        ap->ensure_grad();
        for (std::size_t i = 0; i < ap->val.size(); ++i) ap->grad[i] += out.grad[i];
      }
      if (bp->requires_grad) {
        bp->ensure_grad();
        const std::size_t off = ap->val.size();
        for (std::size_t i = 0; i < bp->val.size(); ++i)
          bp->grad[i] += out.grad[off + i];
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row mismatch");
  auto an = a.node(), bn = b.node();
  const int ca = a.cols(), cb = b.cols();
  auto n = detail::make_result<T>(a.rows(), ca + cb, {an, bn});
  for (int i = 0; i < a.rows(); ++i) {
    std::copy(an->val.begin() + static_cast<std::size_t>(i) * ca,
              an->val.begin() + static_cast<std::size_t>(i + 1) * ca,
              n->val.begin() + static_cast<std::size_t>(i) * (ca + cb));
    std::copy(bn->val.begin() + static_cast<std::size_t>(i) * cb,
              bn->val.begin() + static_cast<std::size_t>(i + 1) * cb,
              n->val.begin() + static_cast<std::size_t>(i) * (ca + cb) + ca);
  }
  if (n->requires_grad) {
    auto* ap = an.get();
    auto* bp = bn.get();
    n->backward = [ap, bp, ca, cb](detail::Node<T>& out) {
      for (int i = 0; i < out.rows; ++i) {
        const T* g = out.grad.data() + static_cast<std::size_t>(i) * (ca + cb);
        if (ap->requires_grad) {
          ap->ensure_grad();
          for (int j = 0; j < ca; ++j)
            ap->grad[static_cast<std::size_t>(i) * ca + j] += g[j];
        }
        if (bp->requires_grad) {
          bp->ensure_grad();
          for (int j = 0; j < cb; ++j)
            bp->grad[static_cast<std::size_t>(i) * cb + j] += g[ca + j];
        }
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, int r0, int r1) {
  if (r0 < 0 || r1 > a.rows() || r0 >= r1) throw ShapeError("slice_rows: bad range");
  auto an = a.node();
  auto n = detail::make_result<T>(r1 - r0, a.cols(), {an});
  const int c = a.cols();
  std::copy(an->val.begin() + static_cast<std::size_t>(r0) * c,
            an->val.begin() + static_cast<std::size_t>(r1) * c, n->val.begin());
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, r0](detail::Node<T>& out) {
      ap->ensure_grad();
      const std::size_t off = static_cast<std::size_t>(r0) * out.cols;
      for (std::size_t i = 0; i < out.size(); ++i) ap->grad[off + i] += out.grad[i];
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != a.size())
    throw ShapeError("reshape: element count mismatch");
  auto an = a.node();
  auto n = detail::make_result<T>(rows, cols, {an});
  n->val = an->val;
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap](detail::Node<T>& out) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < out.size(); ++i) ap->grad[i] += out.grad[i];
    };
  }
  return Tensor<T>::wrap(n);
}

// L2-normalize each row; eps floor keeps the map differentiable at 0
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& a, T eps = T(1e-12)) {
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), a.cols(), {an});
  const int c = a.cols();
  std::vector<T> norms(a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    const T* x = an->val.data() + static_cast<std::size_t>(i) * c;
    T s = T(0);
    for (int j = 0; j < c; ++j) s += x[j] * x[j];
    norms[i] = std::max(std::sqrt(s), eps);
    T* y = n->val.data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) y[j] = x[j] / norms[i];
  }
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, norms = std::move(norms)](detail::Node<T>& out) {
      ap->ensure_grad();
      const int c2 = out.cols;
      for (int i = 0; i < out.rows; ++i) {
        const T* y = out.val.data() + static_cast<std::size_t>(i) * c2;
        const T* dy = out.grad.data() + static_cast<std::size_t>(i) * c2;
        T dot = T(0);
        for (int j = 0; j < c2; ++j) dot += dy[j] * y[j];
        T* dx = ap->grad.data() + static_cast<std::size_t>(i) * c2;
        for (int j = 0; j < c2; ++j) dx[j] += (dy[j] - y[j] * dot) / norms[i];
      }
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  for (int id : ids)
    if (id < 0 || id >= table.rows())
      throw Error("embedding: id out of range: " + std::to_string(id));
  auto tn = table.node();
  auto n = detail::make_result<T>(static_cast<int>(ids.size()), table.cols(), {tn});
  const int c = table.cols();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(tn->val.begin() + static_cast<std::size_t>(ids[i]) * c,
              tn->val.begin() + static_cast<std::size_t>(ids[i] + 1) * c,
              n->val.begin() + i * c);
  if (n->requires_grad) {
    auto* tp = tn.get();
    n->backward = [tp, ids](detail::Node<T>& out) {
      tp->ensure_grad();
      const int c2 = out.cols;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < c2; ++j)
          tp->grad[static_cast<std::size_t>(ids[i]) * c2 + j] +=
              out.grad[i * c2 + j];
    };
  }
  return Tensor<T>::wrap(n);
}

// cut the tape: value copy with no parents
template <class T>
Tensor<T> detach(const Tensor<T>& a) {
  return Tensor<T>::from(a.rows(), a.cols(), a.data(), false);
}

// Rotary embedding. positions gives one angle seed per row; for grid
// positions the head dimension is split in half and 1-D rotations are
// applied per axis (row coordinate on the first half, column on the second).
template <class T>
void rope_fill_angles(int half_pairs, double pos, double base, std::vector<T>& out,
                      std::size_t offset) {
  for (int i = 0; i < half_pairs; ++i) {
    const double freq = std::pow(base, -2.0 * i / (2.0 * half_pairs));
    out[offset + i] = static_cast<T>(pos * freq);
  }
}

template <class T>
Tensor<T> rope_rows(const Tensor<T>& a, const std::vector<double>& pos,
                    double base = 10000.0) {
  if (a.cols() % 2 != 0) throw ShapeError("rope: head dimension must be even");
  if (static_cast<int>(pos.size()) != a.rows())
    throw ShapeError("rope: one position per row required");
  const int c = a.cols();
  const int pairs = c / 2;
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), c, {an});
  std::vector<T> angles(static_cast<std::size_t>(a.rows()) * pairs);
  for (int i = 0; i < a.rows(); ++i)
    rope_fill_angles(pairs, pos[i], base, angles, static_cast<std::size_t>(i) * pairs);
  auto rotate = [&](const std::vector<T>& src, std::vector<T>& dst, T sign) {
    for (int i = 0; i < a.rows(); ++i) {
      for (int p = 0; p < pairs; ++p) {
        const T th = sign * angles[static_cast<std::size_t>(i) * pairs + p];
        const T cs = std::cos(th), sn = std::sin(th);
        const std::size_t k = static_cast<std::size_t>(i) * c + 2 * p;
        const T x0 = src[k], x1 = src[k + 1];
        dst[k] = x0 * cs - x1 * sn;
        dst[k + 1] = x0 * sn + x1 * cs;
      }
    }
  };
  rotate(an->val, n->val, T(1));
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, angles = std::move(angles), pairs](detail::Node<T>& out) {
      ap->ensure_grad();
      const int c2 = out.cols;
      for (int i = 0; i < out.rows; ++i) {
        for (int p = 0; p < pairs; ++p) {
          const T th = angles[static_cast<std::size_t>(i) * pairs + p];
          const T cs = std::cos(th), sn = std::sin(th);
          const std::size_t k = static_cast<std::size_t>(i) * c2 + 2 * p;
          const T g0 = out.grad[k], g1 = out.grad[k + 1];
          // inverse rotation
          ap->grad[k] += g0 * cs + g1 * sn;
          ap->grad[k + 1] += -g0 * sn + g1 * cs;
        }
      }
    };
  }
  return Tensor<T>::wrap(n);
}

// 2-D grid variant: first half of the dimension rotates with the row
// coordinate, second half with the column coordinate.
template <class T>
Tensor<T> rope_rows_2d(const Tensor<T>& a,
                       const std::vector<std::pair<double, double>>& pos,
                       double base = 10000.0) {
  if (a.cols() % 4 != 0)
    throw ShapeError("rope2d: head dimension must be divisible by 4");
  if (static_cast<int>(pos.size()) != a.rows())
    throw ShapeError("rope2d: one position per row required");
  const int half = a.cols() / 2;
  std::vector<double> p0(pos.size()), p1(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    p0[i] = pos[i].first;
    p1[i] = pos[i].second;
  }
  Tensor<T> left = rope_rows(slice_cols(a, 0, half), p0, base);
  Tensor<T> right = rope_rows(slice_cols(a, half, a.cols()), p1, base);
  return concat_cols(left, right);
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1) throw ShapeError("slice_cols: bad range");
  auto an = a.node();
  auto n = detail::make_result<T>(a.rows(), c1 - c0, {an});
  const int c = a.cols(), w = c1 - c0;
  for (int i = 0; i < a.rows(); ++i)
    std::copy(an->val.begin() + static_cast<std::size_t>(i) * c + c0,
              an->val.begin() + static_cast<std::size_t>(i) * c + c1,
              n->val.begin() + static_cast<std::size_t>(i) * w);
  if (n->requires_grad) {
    auto* ap = an.get();
    n->backward = [ap, c0, w](detail::Node<T>& out) {
      ap->ensure_grad();
      const int c2 = ap->cols;
      for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < w; ++j)
          ap->grad[static_cast<std::size_t>(i) * c2 + c0 + j] +=
              out.grad[static_cast<std::size_t>(i) * w + j];
    };
  }
  return Tensor<T>::wrap(n);
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  for (auto v : a.data())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// Softmax(Q K^T [/ sqrt(d)]) V. The 1/sqrt(d) scaling sits behind a flag;
// checkpoints record which behaviour produced them.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    bool scale_logits = true) {
  if (q.cols() != k.cols())
    throw ShapeError("attention: query/key width mismatch");
  if (k.rows() != v.rows())
    throw ShapeError("attention: key/value count mismatch");
  if (!all_finite(q) || !all_finite(k) || !all_finite(v))
    throw NumericError("attention: non-finite input");
  Tensor<T> logits = matmul_nt(q, k);
  if (scale_logits)
    logits = scale(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.cols()))));
  return matmul(softmax_rows(logits), v);
}

}  // namespace bayesvla::nn
