#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hg/error.hpp"
#include "hg/rng.hpp"

namespace hg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor handle. Copies share the underlying buffers; data
/// is treated as immutable after construction, grad is the one mutable slot.
template <typename T>
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(Shape s, bool rg = false) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(shape_numel(t.shape), T(0));
    t.set_requires_grad(rg);
    return t;
  }

  static Tensor full(Shape s, T value, bool rg = false) {
    Tensor t = zeros(std::move(s), rg);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
  }

  static Tensor from(Shape s, std::vector<T> values, bool rg = false) {
    if (shape_numel(s) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(s) + " holds " +
                       std::to_string(shape_numel(s)) + " values, got " +
                       std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.set_requires_grad(rg);
    return t;
  }

  static Tensor scalar(T value, bool rg = false) {
    return from({1}, {value}, rg);
  }

  void set_requires_grad(bool rg) {
    requires_grad = rg;
    if (rg && !grad) {
      grad = std::make_shared<std::vector<T>>(data->size(), T(0));
    }
  }

  std::size_t numel() const { return data ? data->size() : 0; }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  T& at(std::size_t i) { return (*data)[i]; }
  T at(std::size_t i) const { return (*data)[i]; }
  T& at(std::size_t i, std::size_t j) { return (*data)[i * cols() + j]; }
  T at(std::size_t i, std::size_t j) const { return (*data)[i * cols() + j]; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item: tensor " + shape_str(shape) + " is not scalar");
    }
    return (*data)[0];
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }

  /// Deep copy with its own buffers.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  bool all_finite() const {
    for (T v : *data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

/// Records one node per op in forward execution order. Backward replays the
/// nodes in reverse, visiting each exactly once. Intermediate grads are
/// zeroed at the start of every backward call, so leaf grads accumulate
/// additively across calls (two backward calls double them).
template <typename T>
class Tape {
 public:
  void record(const char* op, std::shared_ptr<std::vector<T>> out_grad,
              std::function<void()> fn) {
    nodes_.push_back(Node{op, std::move(out_grad), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward: loss " + shape_str(loss.shape) +
                          " is not scalar");
    }
    if (nodes_.empty()) {
      throw ContractError("backward: tape is empty");
    }
    if (!loss.grad) {
      throw ContractError("backward: loss does not require grad");
    }
    for (auto& n : nodes_) {
      std::fill(n.out_grad->begin(), n.out_grad->end(), T(0));
    }
    (*loss.grad)[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      it->backward();
    }
  }

 private:
  struct Node {
    const char* op;
    std::shared_ptr<std::vector<T>> out_grad;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {
template <typename T>
inline Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}
}  // namespace detail

/// Activates a tape for the current thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(detail::active_tape<T>()) {
    detail::active_tape<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <typename T>
void backward(Tensor<T>& loss) {
  Tape<T>* tape = detail::active_tape<T>();
  if (!tape) {
    throw ContractError("backward: no active tape");
  }
  tape->backward(loss);
}

namespace detail {

/// True when a tape is active and any input tracks gradients; allocates the
/// output grad buffer up front so backward closures capture a live handle.
template <typename T>
bool recording(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs) {
  if (!active_tape<T>()) return false;
  bool any = false;
  for (const Tensor<T>* t : inputs) any = any || t->requires_grad;
  if (any) out.set_requires_grad(true);
  return any;
}

template <typename T>
void mark_output(Tensor<T>& out, const char* op, std::function<void()> fn) {
  active_tape<T>()->record(op, out.grad, std::move(fn));
}

template <typename T>
void check_2d(const Tensor<T>& t, const char* op) {
  if (t.shape.size() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-d tensor, got " +
                     shape_str(t.shape));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// C = A * B with A [m x k], B [k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor<T> out = Tensor<T>::zeros({m, n});
  const T* pa = a.data->data();
  const T* pb = b.data->data();
  T* po = out.data->data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      for (std::size_t j = 0; j < n; ++j) {
        po[i * n + j] += av * pb[p * n + j];
      }
    }
  }
  if (detail::recording(out, {&a, &b})) {
    detail::mark_output(out, "matmul", [a, b, out, m, k, n]() {
      const T* g = out.grad->data();
      if (a.grad) {
        T* ga = a.grad->data();
        const T* pb2 = b.data->data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              acc += g[i * n + j] * pb2[p * n + j];
            }
            ga[i * k + p] += acc;
          }
        }
      }
      if (b.grad) {
        T* gb = b.grad->data();
        const T* pa2 = a.data->data();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const T av = pa2[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
              gb[p * n + j] += av * g[i * n + j];
            }
          }
        }
      }
    });
  }
  return out;
}

/// C = A * B^T with A [m x k], B [n x k].
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_2d(a, "matmul_nt");
  detail::check_2d(b, "matmul_nt");
  if (a.shape[1] != b.shape[1]) {
    throw ShapeError("matmul_nt: inner dimensions disagree, " +
                     shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Tensor<T> out = Tensor<T>::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) {
        acc += a.at(i, p) * b.at(j, p);
      }
      out.at(i, j) = acc;
    }
  }
  if (detail::recording(out, {&a, &b})) {
    detail::mark_output(out, "matmul_nt", [a, b, out, m, k, n]() {
      const T* g = out.grad->data();
      if (a.grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const T gv = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) {
              (*a.grad)[i * k + p] += gv * b.at(j, p);
            }
          }
        }
      }
      if (b.grad) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const T gv = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) {
              (*b.grad)[j * k + p] += gv * a.at(i, p);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch, " +
                     shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = (*a.data)[i] + (*b.data)[i];
  }
  if (detail::recording(out, {&a, &b})) {
    detail::mark_output(out, "add", [a, b, out]() {
      const auto& g = *out.grad;
      if (a.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) (*a.grad)[i] += g[i];
      }
      if (b.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) (*b.grad)[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = (*a.data)[i] - (*b.data)[i];
  }
  if (detail::recording(out, {&a, &b})) {
    detail::mark_output(out, "sub", [a, b, out]() {
      const auto& g = *out.grad;
      if (a.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) (*a.grad)[i] += g[i];
      }
      if (b.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) (*b.grad)[i] -= g[i];
      }
    });
  }
  return out;
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = (*a.data)[i] * (*b.data)[i];
  }
  if (detail::recording(out, {&a, &b})) {
    detail::mark_output(out, "mul", [a, b, out]() {
      const auto& g = *out.grad;
      if (a.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*a.grad)[i] += g[i] * (*b.data)[i];
        }
      }
      if (b.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*b.grad)[i] += g[i] * (*a.data)[i];
        }
      }
    });
  }
  return out;
}

/// x [r x c] + row vector [c], broadcast over rows.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  detail::check_2d(x, "add_rowvec");
  const std::size_t c = x.shape[1];
  if (v.numel() != c) {
    throw ShapeError("add_rowvec: row vector " + shape_str(v.shape) +
                     " does not match width of " + shape_str(x.shape));
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::size_t r = x.shape[0];
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out.at(i, j) = x.at(i, j) + (*v.data)[j];
    }
  }
  if (detail::recording(out, {&x, &v})) {
    detail::mark_output(out, "add_rowvec", [x, v, out, r, c]() {
      const T* g = out.grad->data();
      if (x.grad) {
        for (std::size_t i = 0; i < r * c; ++i) (*x.grad)[i] += g[i];
      }
      if (v.grad) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            (*v.grad)[j] += g[i * c + j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& x, T value) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = (*x.data)[i] + value;
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "add_const", [x, out]() {
      if (x.grad) {
        for (std::size_t i = 0; i < out.grad->size(); ++i) {
          (*x.grad)[i] += (*out.grad)[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = (*x.data)[i] * factor;
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "scale", [x, out, factor]() {
      if (x.grad) {
        for (std::size_t i = 0; i < out.grad->size(); ++i) {
          (*x.grad)[i] += factor * (*out.grad)[i];
        }
      }
    });
  }
  return out;
}

/// x scaled by a 1-element tensor (the scalar participates in the graph).
template <typename T>
Tensor<T> scale_by_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) {
    throw ShapeError("scale_by_scalar: scale " + shape_str(s.shape) +
                     " is not scalar");
  }
  const T sv = (*s.data)[0];
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = (*x.data)[i] * sv;
  }
  if (detail::recording(out, {&x, &s})) {
    detail::mark_output(out, "scale_by_scalar", [x, s, out, sv]() {
      const auto& g = *out.grad;
      if (x.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) (*x.grad)[i] += sv * g[i];
      }
      if (s.grad) {
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*x.data)[i];
        (*s.grad)[0] += acc;
      }
    });
  }
  return out;
}

/// s*x + (1-s)*y for a scalar tensor s; the convex mix of two branches.
template <typename T>
Tensor<T> convex_mix(const Tensor<T>& s, const Tensor<T>& x,
                     const Tensor<T>& y) {
  if (s.numel() != 1) {
    throw ShapeError("convex_mix: mix weight " + shape_str(s.shape) +
                     " is not scalar");
  }
  check_same_shape(x, y, "convex_mix");
  const T sv = (*s.data)[0];
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = sv * (*x.data)[i] + (T(1) - sv) * (*y.data)[i];
  }
  if (detail::recording(out, {&s, &x, &y})) {
    detail::mark_output(out, "convex_mix", [s, x, y, out, sv]() {
      const auto& g = *out.grad;
      if (x.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) (*x.grad)[i] += sv * g[i];
      }
      if (y.grad) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*y.grad)[i] += (T(1) - sv) * g[i];
        }
      }
      if (s.grad) {
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += g[i] * ((*x.data)[i] - (*y.data)[i]);
        }
        (*s.grad)[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    (*out.data)[i] = std::max((*x.data)[i], T(0));
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "relu", [x, out]() {
      if (x.grad) {
        for (std::size_t i = 0; i < out.grad->size(); ++i) {
          if ((*x.data)[i] > T(0)) (*x.grad)[i] += (*out.grad)[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T v = (*x.data)[i];
    (*out.data)[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                               : std::exp(v) / (T(1) + std::exp(v));
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "sigmoid", [x, out]() {
      if (x.grad) {
        for (std::size_t i = 0; i < out.grad->size(); ++i) {
          const T y = (*out.data)[i];
          (*x.grad)[i] += (*out.grad)[i] * y * (T(1) - y);
        }
      }
    });
  }
  return out;
}

/// Zeroes entries with probability p and rescales survivors by 1/(1-p).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) {
    throw ConfigError("dropout: rate " + std::to_string(p) +
                      " outside [0, 1)");
  }
  if (p == 0.0) return x;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  auto mask = std::make_shared<std::vector<T>>(x.numel(), T(0));
  const T keep_scale = T(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (!rng.bernoulli(p)) {
      (*mask)[i] = keep_scale;
      (*out.data)[i] = (*x.data)[i] * keep_scale;
    }
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "dropout", [x, out, mask]() {
      if (x.grad) {
        for (std::size_t i = 0; i < out.grad->size(); ++i) {
          (*x.grad)[i] += (*out.grad)[i] * (*mask)[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

/// Each row sums to 1; computed with max-subtraction.
template <typename T>
Tensor<T> rowwise_softmax(const Tensor<T>& x) {
  detail::check_2d(x, "rowwise_softmax");
  const std::size_t r = x.shape[0], c = x.shape[1];
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  for (std::size_t i = 0; i < r; ++i) {
    T m = x.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x.at(i, j));
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      const T e = std::exp(x.at(i, j) - m);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= denom;
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "rowwise_softmax", [x, out, r, c]() {
      if (!x.grad) return;
      for (std::size_t i = 0; i < r; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < c; ++j) {
          dot += out.at(i, j) * (*out.grad)[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
          (*x.grad)[i * c + j] +=
              out.at(i, j) * ((*out.grad)[i * c + j] - dot);
        }
      }
    });
  }
  return out;
}

/// Per-row standardization followed by the gamma/beta affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  detail::check_2d(x, "layer_norm");
  const std::size_t r = x.shape[0], c = x.shape[1];
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape) +
                     " / beta " + shape_str(beta.shape) +
                     " do not match width of " + shape_str(x.shape));
  }
  if (!(eps > T(0))) {
    throw ConfigError("layer_norm: eps must be positive");
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  auto xhat = std::make_shared<std::vector<T>>(r * c);
  auto inv_std = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < c; ++j) mean += x.at(i, j);
    mean /= T(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      const T d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (x.at(i, j) - mean) * is;
      (*xhat)[i * c + j] = h;
      out.at(i, j) = (*gamma.data)[j] * h + (*beta.data)[j];
    }
  }
  if (detail::recording(out, {&x, &gamma, &beta})) {
    detail::mark_output(out, "layer_norm",
                        [x, gamma, beta, out, xhat, inv_std, r, c]() {
      const T* g = out.grad->data();
      if (beta.grad) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            (*beta.grad)[j] += g[i * c + j];
          }
        }
      }
      if (gamma.grad) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            (*gamma.grad)[j] += g[i * c + j] * (*xhat)[i * c + j];
          }
        }
      }
      if (x.grad) {
        for (std::size_t i = 0; i < r; ++i) {
          T sum_gy = T(0), sum_gyx = T(0);
          for (std::size_t j = 0; j < c; ++j) {
            const T gy = g[i * c + j] * (*gamma.data)[j];
            sum_gy += gy;
            sum_gyx += gy * (*xhat)[i * c + j];
          }
          const T inv_c = T(1) / T(c);
          for (std::size_t j = 0; j < c; ++j) {
            const T gy = g[i * c + j] * (*gamma.data)[j];
            (*x.grad)[i * c + j] +=
                (*inv_std)[i] *
                (gy - inv_c * sum_gy - (*xhat)[i * c + j] * inv_c * sum_gyx);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rows, columns, slicing
// ---------------------------------------------------------------------------

/// Per-row dot product of two equally shaped matrices -> [r x 1].
template <typename T>
Tensor<T> rowwise_dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_2d(a, "rowwise_dot");
  check_same_shape(a, b, "rowwise_dot");
  const std::size_t r = a.shape[0], c = a.shape[1];
  Tensor<T> out = Tensor<T>::zeros({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    T acc = T(0);
    for (std::size_t j = 0; j < c; ++j) acc += a.at(i, j) * b.at(i, j);
    out.at(i, 0) = acc;
  }
  if (detail::recording(out, {&a, &b})) {
    detail::mark_output(out, "rowwise_dot", [a, b, out, r, c]() {
      const T* g = out.grad->data();
      for (std::size_t i = 0; i < r; ++i) {
        const T gv = g[i];
        for (std::size_t j = 0; j < c; ++j) {
          if (a.grad) (*a.grad)[i * c + j] += gv * b.at(i, j);
          if (b.grad) (*b.grad)[i * c + j] += gv * a.at(i, j);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t width) {
  detail::check_2d(x, "slice_cols");
  const std::size_t r = x.shape[0], c = x.shape[1];
  if (begin + width > c) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + width) + ") out of range for " +
                     shape_str(x.shape));
  }
  Tensor<T> out = Tensor<T>::zeros({r, width});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      out.at(i, j) = x.at(i, begin + j);
    }
  }
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "slice_cols", [x, out, begin, width, r, c]() {
      if (!x.grad) return;
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          (*x.grad)[i * c + begin + j] += (*out.grad)[i * width + j];
        }
      }
    });
  }
  return out;
}

/// Concatenates matrices with equal row counts along the width.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) {
    throw ContractError("concat_cols: no inputs");
  }
  const std::size_t r = parts[0].shape[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::check_2d(p, "concat_cols");
    if (p.shape[0] != r) {
      throw ShapeError("concat_cols: row mismatch, " +
                       shape_str(parts[0].shape) + " vs " +
                       shape_str(p.shape));
    }
    total += p.shape[1];
  }
  Tensor<T> out = Tensor<T>::zeros({r, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape[1];
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out.at(i, offset + j) = p.at(i, j);
      }
    }
    offset += w;
  }
  bool any_rg = false;
  for (const auto& p : parts) any_rg |= p.requires_grad;
  if (detail::active_tape<T>() && any_rg) {
    out.set_requires_grad(true);
    detail::mark_output(out, "concat_cols", [parts, out, r, total]() {
      std::size_t off = 0;
      for (const auto& p : parts) {
        const std::size_t w = p.shape[1];
        if (p.grad) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              (*p.grad)[i * w + j] += (*out.grad)[i * total + off + j];
            }
          }
        }
        off += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sparse propagation
// ---------------------------------------------------------------------------

/// Triplet sparse matrix used as a constant propagation operator.
template <typename T>
struct Sparse {
  std::size_t rows = 0;
  std::size_t cols = 0;
  struct Entry {
    std::size_t row, col;
    T weight;
  };
  std::vector<Entry> entries;
};

template <typename To, typename From>
Sparse<To> sparse_cast(const Sparse<From>& s) {
  Sparse<To> out;
  out.rows = s.rows;
  out.cols = s.cols;
  out.entries.reserve(s.entries.size());
  for (const auto& e : s.entries) {
    out.entries.push_back({e.row, e.col, static_cast<To>(e.weight)});
  }
  return out;
}

/// y = S * x for a constant sparse operator S.
template <typename T>
Tensor<T> spmm(const Sparse<T>& s, const Tensor<T>& x) {
  detail::check_2d(x, "spmm");
  if (x.shape[0] != s.cols) {
    throw ShapeError("spmm: operator expects " + std::to_string(s.cols) +
                     " rows, got " + shape_str(x.shape));
  }
  const std::size_t c = x.shape[1];
  Tensor<T> out = Tensor<T>::zeros({s.rows, c});
  for (const auto& e : s.entries) {
    for (std::size_t j = 0; j < c; ++j) {
      out.at(e.row, j) += e.weight * x.at(e.col, j);
    }
  }
  if (detail::recording(out, {&x})) {
    auto entries = std::make_shared<std::vector<typename Sparse<T>::Entry>>(
        s.entries);
    detail::mark_output(out, "spmm", [x, out, entries, c]() {
      if (!x.grad) return;
      for (const auto& e : *entries) {
        for (std::size_t j = 0; j < c; ++j) {
          (*x.grad)[e.col * c + j] += e.weight * (*out.grad)[e.row * c + j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment ops (per-graph pieces of a batch)
// ---------------------------------------------------------------------------

namespace detail {
inline std::vector<std::size_t> segment_counts(
    const std::vector<std::size_t>& ids, std::size_t num_segments,
    const char* op) {
  std::vector<std::size_t> counts(num_segments, 0);
  for (std::size_t id : ids) {
    if (id >= num_segments) {
      throw ContractError(std::string(op) + ": segment id " +
                          std::to_string(id) + " >= " +
                          std::to_string(num_segments));
    }
    ++counts[id];
  }
  for (std::size_t g = 0; g < num_segments; ++g) {
    if (counts[g] == 0) {
      throw ContractError(std::string(op) + ": segment " + std::to_string(g) +
                          " is empty");
    }
  }
  return counts;
}
}  // namespace detail

/// Mean of rows within each segment -> [num_segments x c].
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x, const std::vector<std::size_t>& ids,
                       std::size_t num_segments) {
  detail::check_2d(x, "segment_mean");
  if (ids.size() != x.shape[0]) {
    throw ShapeError("segment_mean: " + std::to_string(ids.size()) +
                     " ids for " + shape_str(x.shape));
  }
  const auto counts = detail::segment_counts(ids, num_segments, "segment_mean");
  const std::size_t c = x.shape[1];
  Tensor<T> out = Tensor<T>::zeros({num_segments, c});
  for (std::size_t i = 0; i < x.shape[0]; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out.at(ids[i], j) += x.at(i, j);
    }
  }
  for (std::size_t g = 0; g < num_segments; ++g) {
    for (std::size_t j = 0; j < c; ++j) {
      out.at(g, j) /= T(counts[g]);
    }
  }
  if (detail::recording(out, {&x})) {
    auto ids_copy = std::make_shared<std::vector<std::size_t>>(ids);
    auto counts_copy = std::make_shared<std::vector<std::size_t>>(counts);
    detail::mark_output(out, "segment_mean",
                        [x, out, ids_copy, counts_copy, c]() {
      if (!x.grad) return;
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        const std::size_t g = (*ids_copy)[i];
        const T inv = T(1) / T((*counts_copy)[g]);
        for (std::size_t j = 0; j < c; ++j) {
          (*x.grad)[i * c + j] += inv * (*out.grad)[g * c + j];
        }
      }
    });
  }
  return out;
}

/// Row-wise softmax over an [n x n] score matrix where row i only attends to
/// columns j in the same segment; cross-segment entries get exactly zero
/// mass. With `zero_attn`, every row also carries a phantom logit fixed at 0
/// that absorbs mass without contributing value. An optional `keep` matrix
/// (same shape, entries 0/1) additionally excludes within-segment pairs.
template <typename T>
Tensor<T> segment_masked_softmax(const Tensor<T>& scores,
                                 const std::vector<std::size_t>& ids,
                                 bool zero_attn = false,
                                 const std::vector<std::uint8_t>* keep =
                                     nullptr) {
  detail::check_2d(scores, "segment_masked_softmax");
  const std::size_t n = scores.shape[0];
  if (scores.shape[1] != n || ids.size() != n) {
    throw ShapeError("segment_masked_softmax: scores " +
                     shape_str(scores.shape) + " with " +
                     std::to_string(ids.size()) + " ids");
  }
  if (keep && keep->size() != n * n) {
    throw ShapeError("segment_masked_softmax: keep mask size mismatch");
  }
  Tensor<T> out = Tensor<T>::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (ids[j] != ids[i]) continue;
      if (keep && !(*keep)[i * n + j]) continue;
      m = std::max(m, scores.at(i, j));
      any = true;
    }
    if (zero_attn) {
      m = any ? std::max(m, T(0)) : T(0);
      any = true;
    }
    if (!any) {
      throw ContractError("segment_masked_softmax: row " + std::to_string(i) +
                          " has no admissible entries");
    }
    T denom = zero_attn ? std::exp(-m) : T(0);
    for (std::size_t j = 0; j < n; ++j) {
      if (ids[j] != ids[i]) continue;
      if (keep && !(*keep)[i * n + j]) continue;
      const T e = std::exp(scores.at(i, j) - m);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= denom;
  }
  if (detail::recording(out, {&scores})) {
    detail::mark_output(out, "segment_masked_softmax", [scores, out, n]() {
      if (!scores.grad) return;
      for (std::size_t i = 0; i < n; ++i) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          dot += out.at(i, j) * (*out.grad)[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const T y = out.at(i, j);
          if (y != T(0)) {
            (*scores.grad)[i * n + j] += y * ((*out.grad)[i * n + j] - dot);
          }
        }
      }
    });
  }
  return out;
}

/// Divides each row by its sum, keeping the sign of every entry. Rows whose
/// sum is within eps of zero fall back to the uniform weighting 1/L (and
/// pass no gradient).
template <typename T>
Tensor<T> signed_normalize_rows(const Tensor<T>& c, T eps) {
  detail::check_2d(c, "signed_normalize_rows");
  const std::size_t r = c.shape[0], L = c.shape[1];
  Tensor<T> out = Tensor<T>::zeros(c.shape);
  auto degenerate = std::make_shared<std::vector<std::uint8_t>>(r, 0);
  auto row_sum = std::make_shared<std::vector<T>>(r, T(0));
  for (std::size_t i = 0; i < r; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < L; ++j) s += c.at(i, j);
    (*row_sum)[i] = s;
    if (std::abs(s) < eps) {
      (*degenerate)[i] = 1;
      for (std::size_t j = 0; j < L; ++j) out.at(i, j) = T(1) / T(L);
    } else {
      for (std::size_t j = 0; j < L; ++j) out.at(i, j) = c.at(i, j) / s;
    }
  }
  if (detail::recording(out, {&c})) {
    detail::mark_output(out, "signed_normalize_rows",
                        [c, out, degenerate, row_sum, r, L]() {
      if (!c.grad) return;
      for (std::size_t i = 0; i < r; ++i) {
        if ((*degenerate)[i]) continue;
        const T s = (*row_sum)[i];
        T dot = T(0);
        for (std::size_t j = 0; j < L; ++j) {
          dot += (*out.grad)[i * L + j] * out.at(i, j);
        }
        for (std::size_t j = 0; j < L; ++j) {
          (*c.grad)[i * L + j] += ((*out.grad)[i * L + j] - dot) / s;
        }
      }
    });
  }
  return out;
}

/// out[v] = sum_l alpha[segment(v), l] * slices[l][v]. The per-segment layer
/// weights broadcast over that segment's rows.
template <typename T>
Tensor<T> weighted_layer_sum(const std::vector<Tensor<T>>& slices,
                             const Tensor<T>& alpha,
                             const std::vector<std::size_t>& ids) {
  if (slices.empty()) {
    throw ContractError("weighted_layer_sum: no layer slices");
  }
  detail::check_2d(alpha, "weighted_layer_sum");
  const std::size_t L = slices.size();
  const std::size_t n = slices[0].shape[0];
  const std::size_t d = slices[0].shape[1];
  if (alpha.shape[1] != L) {
    throw ShapeError("weighted_layer_sum: alpha " + shape_str(alpha.shape) +
                     " for " + std::to_string(L) + " layers");
  }
  if (ids.size() != n) {
    throw ShapeError("weighted_layer_sum: " + std::to_string(ids.size()) +
                     " ids for " + std::to_string(n) + " rows");
  }
  for (const auto& sl : slices) {
    if (sl.shape != slices[0].shape) {
      throw ShapeError("weighted_layer_sum: slice shape mismatch, " +
                       shape_str(slices[0].shape) + " vs " +
                       shape_str(sl.shape));
    }
  }
  Tensor<T> out = Tensor<T>::zeros({n, d});
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t v = 0; v < n; ++v) {
      const T a = alpha.at(ids[v], l);
      for (std::size_t j = 0; j < d; ++j) {
        out.at(v, j) += a * slices[l].at(v, j);
      }
    }
  }
  bool any_rg = alpha.requires_grad;
  for (const auto& sl : slices) any_rg |= sl.requires_grad;
  if (detail::active_tape<T>() && any_rg) {
    out.set_requires_grad(true);
    auto ids_copy = std::make_shared<std::vector<std::size_t>>(ids);
    detail::mark_output(out, "weighted_layer_sum",
                        [slices, alpha, out, ids_copy, L, n, d]() {
      for (std::size_t l = 0; l < L; ++l) {
        const auto& sl = slices[l];
        for (std::size_t v = 0; v < n; ++v) {
          const std::size_t g = (*ids_copy)[v];
          const T a = alpha.at(g, l);
          if (sl.grad) {
            for (std::size_t j = 0; j < d; ++j) {
              (*sl.grad)[v * d + j] += a * (*out.grad)[v * d + j];
            }
          }
          if (alpha.grad) {
            T acc = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              acc += (*out.grad)[v * d + j] * sl.at(v, j);
            }
            (*alpha.grad)[g * L + l] += acc;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) acc += (*x.data)[i];
  (*out.data)[0] = acc;
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "sum_all", [x, out]() {
      if (!x.grad) return;
      const T g = (*out.grad)[0];
      for (std::size_t i = 0; i < x.grad->size(); ++i) (*x.grad)[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  if (x.numel() == 0) {
    throw ContractError("mean_all: empty tensor");
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) acc += (*x.data)[i];
  (*out.data)[0] = acc / T(x.numel());
  if (detail::recording(out, {&x})) {
    detail::mark_output(out, "mean_all", [x, out]() {
      if (!x.grad) return;
      const T g = (*out.grad)[0] / T(x.grad->size());
      for (std::size_t i = 0; i < x.grad->size(); ++i) (*x.grad)[i] += g;
    });
  }
  return out;
}

/// Mean cross-entropy of logits [b x k] against integer class labels.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits,
                             const std::vector<std::size_t>& labels) {
  detail::check_2d(logits, "cross_entropy_mean");
  const std::size_t b = logits.shape[0], k = logits.shape[1];
  if (labels.size() != b) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(labels.size()) +
                     " labels for " + shape_str(logits.shape));
  }
  for (std::size_t y : labels) {
    if (y >= k) {
      throw ContractError("cross_entropy_mean: label " + std::to_string(y) +
                          " >= " + std::to_string(k) + " classes");
    }
  }
  auto probs = std::make_shared<std::vector<T>>(b * k);
  Tensor<T> out = Tensor<T>::zeros({1});
  T loss = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    T m = logits.at(i, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits.at(i, j));
    T denom = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      const T e = std::exp(logits.at(i, j) - m);
      (*probs)[i * k + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] /= denom;
    loss += std::log(denom) + m - logits.at(i, labels[i]);
  }
  (*out.data)[0] = loss / T(b);
  if (detail::recording(out, {&logits})) {
    auto labels_copy = std::make_shared<std::vector<std::size_t>>(labels);
    detail::mark_output(out, "cross_entropy_mean",
                        [logits, out, probs, labels_copy, b, k]() {
      if (!logits.grad) return;
      const T g = (*out.grad)[0] / T(b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          T p = (*probs)[i * k + j];
          if (j == (*labels_copy)[i]) p -= T(1);
          (*logits.grad)[i * k + j] += g * p;
        }
      }
    });
  }
  return out;
}

/// Mean squared error over all entries.
template <typename T>
Tensor<T> mse_mean(const Tensor<T>& pred, const Tensor<T>& target) {
  check_same_shape(pred, target, "mse_mean");
  if (pred.numel() == 0) {
    throw ContractError("mse_mean: empty tensors");
  }
  Tensor<T> out = Tensor<T>::zeros({1});
  T acc = T(0);
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const T d = (*pred.data)[i] - (*target.data)[i];
    acc += d * d;
  }
  (*out.data)[0] = acc / T(pred.numel());
  if (detail::recording(out, {&pred, &target})) {
    detail::mark_output(out, "mse_mean", [pred, target, out]() {
      const std::size_t n = pred.numel();
      const T g = (*out.grad)[0] * T(2) / T(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = (*pred.data)[i] - (*target.data)[i];
        if (pred.grad) (*pred.grad)[i] += g * d;
        if (target.grad) (*target.grad)[i] -= g * d;
      }
    });
  }
  return out;
}

/// Binary cross-entropy with logits, averaged over unmasked entries only.
/// An all-masked batch yields loss 0 and sets *all_masked when given.
template <typename T>
Tensor<T> bce_logits_masked_mean(const Tensor<T>& logits,
                                 const Tensor<T>& targets,
                                 const std::vector<std::uint8_t>& mask,
                                 bool* all_masked = nullptr) {
  check_same_shape(logits, targets, "bce_logits_masked_mean");
  if (mask.size() != logits.numel()) {
    throw ShapeError("bce_logits_masked_mean: mask size " +
                     std::to_string(mask.size()) + " for " +
                     shape_str(logits.shape));
  }
  std::size_t active = 0;
  for (std::uint8_t m : mask) active += m ? 1 : 0;
  if (all_masked) *all_masked = (active == 0);
  Tensor<T> out = Tensor<T>::zeros({1});
  if (active == 0) {
    // Keep the loss connected to the graph so backward stays well-defined.
    if (detail::recording(out, {&logits})) {
      detail::mark_output(out, "bce_logits_masked_mean", []() {});
    }
    return out;
  }
  T acc = T(0);
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    if (!mask[i]) continue;
    const T x = (*logits.data)[i];
    const T t = (*targets.data)[i];
    acc += std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  (*out.data)[0] = acc / T(active);
  if (detail::recording(out, {&logits})) {
    auto mask_copy = std::make_shared<std::vector<std::uint8_t>>(mask);
    detail::mark_output(out, "bce_logits_masked_mean",
                        [logits, targets, out, mask_copy, active]() {
      if (!logits.grad) return;
      const T g = (*out.grad)[0] / T(active);
      for (std::size_t i = 0; i < logits.numel(); ++i) {
        if (!(*mask_copy)[i]) continue;
        const T x = (*logits.data)[i];
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
        (*logits.grad)[i] += g * (s - (*targets.data)[i]);
      }
    });
  }
  return out;
}

}  // namespace hg
