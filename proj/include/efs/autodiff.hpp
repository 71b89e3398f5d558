#pragma once

// Minimal dense-tensor engine with reverse-mode differentiation. Dynamic
// graph recorded per forward pass and freed after backward. Dense row-major
// storage, no broadcasting beyond scalar-tensor. Templated on the scalar
// type: float for training, double for finite-difference gradient checks.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "efs/io.hpp"

namespace efs {

template <typename Real>
struct Node {
  std::vector<int> shape;
  std::vector<Real> values;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
  }
};

template <typename Real>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<Node<Real>>();
    t.node_->shape = std::move(shape);
    t.node_->values.assign(static_cast<size_t>(NdArray::numel_of(t.node_->shape)), Real(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from_data(std::vector<int> shape, std::vector<Real> values,
                           bool requires_grad = false) {
    if (NdArray::numel_of(shape) != static_cast<int64_t>(values.size())) {
      throw std::invalid_argument("TensorT: value count does not match shape " +
                                  shape_to_string(shape));
    }
    TensorT t;
    t.node_ = std::make_shared<Node<Real>>();
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  std::vector<Real>& values() { return node_->values; }
  const std::vector<Real>& values() const { return node_->values; }
  std::vector<Real>& grad() { return node_->grad; }
  const std::vector<Real>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->values.size(), Real(0));
  }

  Real scalar() const {
    if (numel() != 1) {
      throw std::invalid_argument("TensorT::scalar: tensor has shape " +
                                  shape_to_string(node_->shape));
    }
    return node_->values[0];
  }

  /// Reverse pass from a scalar root. Visits every reachable node exactly
  /// once in reverse topological order, then releases the recorded graph.
  void backward() {
    if (numel() != 1) throw std::invalid_argument("backward: root must be a scalar");
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> visited;
    std::vector<std::pair<Node<Real>*, size_t>> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<Real>* parent = node->parents[next++].get();
        if (visited.insert(parent).second) stack.push_back({parent, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<Real>* node = *it;
      if (node->backward_fn && node->requires_grad) {
        node->ensure_grad();  // a child may have contributed nothing
        node->backward_fn(*node);
      }
    }
    for (Node<Real>* node : order) {
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }

  std::shared_ptr<Node<Real>> node() const { return node_; }

  static TensorT wrap(std::shared_ptr<Node<Real>> node) {
    TensorT t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node<Real>> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

template <typename Real>
std::shared_ptr<Node<Real>> make_result(std::vector<int> shape,
                                        std::vector<std::shared_ptr<Node<Real>>> parents) {
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->values.assign(static_cast<size_t>(NdArray::numel_of(node->shape)), Real(0));
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) node->parents = std::move(parents);
  return node;
}

template <typename Real>
void require_same_shape(const char* op, const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
}

inline int64_t prod(const std::vector<int>& v, size_t lo, size_t hi) {
  int64_t p = 1;
  for (size_t i = lo; i < hi; ++i) p *= v[i];
  return p;
}

// Output-column range for which a kernel column stays inside the input:
// 0 <= ox*stride + kx - pad < in_w.
inline void conv_ox_range(int kx, int stride, int pad, int in_w, int out_w, int& lo, int& hi) {
  const int shift = pad - kx;
  lo = shift > 0 ? (shift + stride - 1) / stride : 0;
  const int last = in_w - 1 - kx + pad;
  hi = last < 0 ? 0 : std::min(out_w - 1, last / stride) + 1;
  if (hi < lo) hi = lo;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops

template <typename Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape("add", a, b);
  auto out = detail::make_result<Real>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] + b.values()[i];
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      for (int k = 0; k < 2; ++k) {
        auto& p = self.parents[k];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape("sub", a, b);
  auto out = detail::make_result<Real>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] - b.values()[i];
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape("mul", a, b);
  auto out = detail::make_result<Real>(a.shape(), {a.node(), b.node()});
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] * b.values()[i];
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->values[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->values[i];
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> add_scalar(const TensorT<Real>& a, Real s) {
  auto out = detail::make_result<Real>(a.shape(), {a.node()});
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] + s;
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> mul_scalar(const TensorT<Real>& a, Real s) {
  auto out = detail::make_result<Real>(a.shape(), {a.node()});
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a.values()[i] * s;
  if (out->requires_grad) {
    out->backward_fn = [s](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * s;
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> relu(const TensorT<Real>& a) {
  auto out = detail::make_result<Real>(a.shape(), {a.node()});
  for (size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = a.values()[i] > Real(0) ? a.values()[i] : Real(0);
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        if (p->values[i] > Real(0)) p->grad[i] += self.grad[i];
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// Matrix multiply with optional operand transposes

template <typename Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b, bool trans_a = false,
                     bool trans_b = false) {
  if (a.shape().size() != 2 || b.shape().size() != 2) {
    throw std::invalid_argument("matmul: expects rank-2 operands, got " +
                                shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const int m = trans_a ? a.shape()[1] : a.shape()[0];
  const int k = trans_a ? a.shape()[0] : a.shape()[1];
  const int kb = trans_b ? b.shape()[1] : b.shape()[0];
  const int n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
  auto out = detail::make_result<Real>({m, n}, {a.node(), b.node()});
  const Real* av = a.values().data();
  const Real* bv = b.values().data();
  Real* ov = out->values.data();
  const int lda = a.shape()[1];
  const int ldb = b.shape()[1];
  auto a_at = [&](int i, int kk) { return trans_a ? av[kk * lda + i] : av[i * lda + kk]; };
  auto b_at = [&](int kk, int j) { return trans_b ? bv[j * ldb + kk] : bv[kk * ldb + j]; };
  for (int i = 0; i < m; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const Real aik = a_at(i, kk);
      if (aik == Real(0)) continue;
      for (int j = 0; j < n; ++j) ov[i * n + j] += aik * b_at(kk, j);
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [m, n, k, lda, ldb, trans_a, trans_b](Node<Real>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      const Real* g = self.grad.data();
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (int i = 0; i < m; ++i) {
          for (int kk = 0; kk < k; ++kk) {
            Real acc = 0;
            for (int j = 0; j < n; ++j) {
              const Real bkj = trans_b ? pb->values[j * ldb + kk] : pb->values[kk * ldb + j];
              acc += g[i * n + j] * bkj;
            }
            if (trans_a) {
              pa->grad[kk * lda + i] += acc;
            } else {
              pa->grad[i * lda + kk] += acc;
            }
          }
        }
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (int kk = 0; kk < k; ++kk) {
          for (int j = 0; j < n; ++j) {
            Real acc = 0;
            for (int i = 0; i < m; ++i) {
              const Real aik = trans_a ? pa->values[kk * lda + i] : pa->values[i * lda + kk];
              acc += aik * g[i * n + j];
            }
            if (trans_b) {
              pb->grad[j * ldb + kk] += acc;
            } else {
              pb->grad[kk * ldb + j] += acc;
            }
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// conv2d on CHW tensors, zero padding, explicit stride

template <typename Real>
TensorT<Real> conv2d(const TensorT<Real>& x, const TensorT<Real>& w, const TensorT<Real>& bias,
                     int stride = 1, int pad = 0) {
  if (x.shape().size() != 3 || w.shape().size() != 4) {
    throw std::invalid_argument("conv2d: expects CHW input and OIKK weights, got " +
                                shape_to_string(x.shape()) + " and " + shape_to_string(w.shape()));
  }
  const int ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != ci) {
    throw std::invalid_argument("conv2d: input channels " + shape_to_string(x.shape()) +
                                " do not match weights " + shape_to_string(w.shape()));
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != co)) {
    throw std::invalid_argument("conv2d: bias shape " + shape_to_string(bias.shape()) +
                                " does not match " + std::to_string(co) + " output channels");
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

  std::vector<std::shared_ptr<Node<Real>>> parents = {x.node(), w.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto out = detail::make_result<Real>({co, oh, ow}, std::move(parents));

  const Real* xv = x.values().data();
  const Real* wv = w.values().data();
  Real* ov = out->values.data();
  for (int o = 0; o < co; ++o) {
    Real* out_plane = ov + static_cast<size_t>(o) * oh * ow;
    if (bias.defined()) {
      const Real b = bias.values()[o];
      for (int i = 0; i < oh * ow; ++i) out_plane[i] = b;
    }
    for (int c = 0; c < ci; ++c) {
      const Real* x_plane = xv + static_cast<size_t>(c) * h * wd;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const Real wval = wv[((static_cast<size_t>(o) * ci + c) * kh + ky) * kw + kx];
          int lo, hi;
          detail::conv_ox_range(kx, stride, pad, wd, ow, lo, hi);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const Real* xrow = x_plane + static_cast<size_t>(iy) * wd + kx - pad;
            Real* orow = out_plane + static_cast<size_t>(oy) * ow;
            for (int ox = lo; ox < hi; ++ox) orow[ox] += wval * xrow[ox * stride];
          }
        }
      }
    }
  }

  if (out->requires_grad) {
    const bool has_bias = bias.defined();
    out->backward_fn = [ci, h, wd, co, kh, kw, oh, ow, stride, pad, has_bias](Node<Real>& self) {
      auto& px = self.parents[0];
      auto& pw = self.parents[1];
      const Real* g = self.grad.data();
      if (has_bias && self.parents[2]->requires_grad) {
        auto& pb = self.parents[2];
        pb->ensure_grad();
        for (int o = 0; o < co; ++o) {
          Real acc = 0;
          const Real* gp = g + static_cast<size_t>(o) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += gp[i];
          pb->grad[o] += acc;
        }
      }
      if (px->requires_grad) px->ensure_grad();
      if (pw->requires_grad) pw->ensure_grad();
      for (int o = 0; o < co; ++o) {
        const Real* g_plane = g + static_cast<size_t>(o) * oh * ow;
        for (int c = 0; c < ci; ++c) {
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
              const size_t widx = ((static_cast<size_t>(o) * ci + c) * kh + ky) * kw + kx;
              const Real wval = pw->values[widx];
              Real wgrad = 0;
              int lo, hi;
              detail::conv_ox_range(kx, stride, pad, wd, ow, lo, hi);
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= h) continue;
                const size_t xbase = (static_cast<size_t>(c) * h + iy) * wd + kx - pad;
                const Real* grow = g_plane + static_cast<size_t>(oy) * ow;
                if (px->requires_grad) {
                  Real* xg = px->grad.data() + xbase;
                  for (int ox = lo; ox < hi; ++ox) xg[ox * stride] += wval * grow[ox];
                }
                if (pw->requires_grad) {
                  const Real* xr = px->values.data() + xbase;
                  for (int ox = lo; ox < hi; ++ox) wgrad += xr[ox * stride] * grow[ox];
                }
              }
              if (pw->requires_grad) pw->grad[widx] += wgrad;
            }
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> conv2d(const TensorT<Real>& x, const TensorT<Real>& w, int stride = 1, int pad = 0) {
  return conv2d(x, w, TensorT<Real>(), stride, pad);
}

// ---------------------------------------------------------------------------
// Layer normalization across the channel axis of a CHW tensor

template <typename Real>
TensorT<Real> layer_norm_chw(const TensorT<Real>& x, const TensorT<Real>& gamma,
                             const TensorT<Real>& beta, double eps = 1e-5) {
  if (x.shape().size() != 3) {
    throw std::invalid_argument("layer_norm: expects CHW input, got " + shape_to_string(x.shape()));
  }
  const int c = x.shape()[0];
  const int hw = x.shape()[1] * x.shape()[2];
  if (gamma.shape() != std::vector<int>{c} || beta.shape() != std::vector<int>{c}) {
    throw std::invalid_argument("layer_norm: gamma/beta must have shape [" + std::to_string(c) +
                                "], got " + shape_to_string(gamma.shape()) + " and " +
                                shape_to_string(beta.shape()));
  }
  auto out = detail::make_result<Real>(x.shape(), {x.node(), gamma.node(), beta.node()});
  std::vector<Real> mean(hw), inv_std(hw);
  const Real* xv = x.values().data();
  for (int p = 0; p < hw; ++p) {
    double m = 0;
    for (int i = 0; i < c; ++i) m += xv[static_cast<size_t>(i) * hw + p];
    m /= c;
    double v = 0;
    for (int i = 0; i < c; ++i) {
      const double d = xv[static_cast<size_t>(i) * hw + p] - m;
      v += d * d;
    }
    v /= c;
    mean[p] = static_cast<Real>(m);
    inv_std[p] = static_cast<Real>(1.0 / std::sqrt(v + eps));
  }
  for (int i = 0; i < c; ++i) {
    const Real gi = gamma.values()[i];
    const Real bi = beta.values()[i];
    for (int p = 0; p < hw; ++p) {
      const size_t idx = static_cast<size_t>(i) * hw + p;
      out->values[idx] = gi * (xv[idx] - mean[p]) * inv_std[p] + bi;
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [c, hw, mean, inv_std](Node<Real>& self) {
      auto& px = self.parents[0];
      auto& pg = self.parents[1];
      auto& pb = self.parents[2];
      const Real* g = self.grad.data();
      if (px->requires_grad) px->ensure_grad();
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      for (int p = 0; p < hw; ++p) {
        double sum_gy = 0, sum_gy_xhat = 0;
        for (int i = 0; i < c; ++i) {
          const size_t idx = static_cast<size_t>(i) * hw + p;
          const double xhat = (px->values[idx] - mean[p]) * inv_std[p];
          const double gy = g[idx] * pg->values[i];
          sum_gy += gy;
          sum_gy_xhat += gy * xhat;
        }
        const double mean_gy = sum_gy / c;
        const double mean_gy_xhat = sum_gy_xhat / c;
        for (int i = 0; i < c; ++i) {
          const size_t idx = static_cast<size_t>(i) * hw + p;
          const double xhat = (px->values[idx] - mean[p]) * inv_std[p];
          if (px->requires_grad) {
            const double gy = g[idx] * pg->values[i];
            px->grad[idx] +=
                static_cast<Real>(inv_std[p] * (gy - mean_gy - xhat * mean_gy_xhat));
          }
          if (pg->requires_grad) pg->grad[i] += static_cast<Real>(g[idx] * xhat);
          if (pb->requires_grad) pb->grad[i] += g[idx];
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// Softmax along one axis (numerically stabilized)

template <typename Real>
TensorT<Real> softmax(const TensorT<Real>& x, int axis) {
  const auto& shape = x.shape();
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(shape));
  }
  const int64_t outer = detail::prod(shape, 0, axis);
  const int64_t len = shape[axis];
  const int64_t inner = detail::prod(shape, axis + 1, shape.size());
  auto out = detail::make_result<Real>(shape, {x.node()});
  const Real* xv = x.values().data();
  Real* ov = out->values.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const size_t base = static_cast<size_t>(o) * len * inner + in;
      Real max_val = xv[base];
      for (int64_t l = 1; l < len; ++l) max_val = std::max(max_val, xv[base + l * inner]);
      double total = 0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(static_cast<double>(xv[base + l * inner] - max_val));
        ov[base + l * inner] = static_cast<Real>(e);
        total += e;
      }
      const double inv = 1.0 / total;
      for (int64_t l = 0; l < len; ++l) {
        ov[base + l * inner] = static_cast<Real>(ov[base + l * inner] * inv);
      }
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [outer, len, inner](Node<Real>& self) {
      auto& px = self.parents[0];
      px->ensure_grad();
      const Real* y = self.values.data();
      const Real* g = self.grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const size_t base = static_cast<size_t>(o) * len * inner + in;
          double dot = 0;
          for (int64_t l = 0; l < len; ++l) {
            dot += static_cast<double>(g[base + l * inner]) * y[base + l * inner];
          }
          for (int64_t l = 0; l < len; ++l) {
            const size_t idx = base + l * inner;
            px->grad[idx] += static_cast<Real>(y[idx] * (g[idx] - dot));
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename Real>
TensorT<Real> reshape(const TensorT<Real>& x, std::vector<int> new_shape) {
  if (NdArray::numel_of(new_shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                                shape_to_string(new_shape));
  }
  auto out = detail::make_result<Real>(new_shape, {x.node()});
  out->values = x.values();
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> concat(const std::vector<TensorT<Real>>& tensors, int axis) {
  if (tensors.empty()) throw std::invalid_argument("concat: no inputs");
  const auto& ref = tensors[0].shape();
  if (axis < 0 || axis >= static_cast<int>(ref.size())) {
    throw std::invalid_argument("concat: axis out of range");
  }
  int total_axis = 0;
  std::vector<std::shared_ptr<Node<Real>>> parents;
  for (const auto& t : tensors) {
    const auto& s = t.shape();
    if (s.size() != ref.size()) {
      throw std::invalid_argument("concat: rank mismatch " + shape_to_string(ref) + " vs " +
                                  shape_to_string(s));
    }
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != ref[i]) {
        throw std::invalid_argument("concat: shape mismatch " + shape_to_string(ref) + " vs " +
                                    shape_to_string(s));
      }
    }
    total_axis += s[axis];
    parents.push_back(t.node());
  }
  std::vector<int> out_shape = ref;
  out_shape[axis] = total_axis;
  const int64_t outer = detail::prod(ref, 0, axis);
  const int64_t inner = detail::prod(ref, axis + 1, ref.size());
  auto out = detail::make_result<Real>(out_shape, std::move(parents));
  std::vector<int64_t> lens;
  for (const auto& t : tensors) lens.push_back(t.shape()[axis]);
  Real* ov = out->values.data();
  for (int64_t o = 0; o < outer; ++o) {
    int64_t offset = 0;
    for (size_t ti = 0; ti < tensors.size(); ++ti) {
      const int64_t block = lens[ti] * inner;
      const Real* src = tensors[ti].values().data() + o * block;
      Real* dst = ov + (o * total_axis + offset) * inner;
      for (int64_t i = 0; i < block; ++i) dst[i] = src[i];
      offset += lens[ti];
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [outer, inner, lens, total_axis](Node<Real>& self) {
      for (int64_t o = 0; o < outer; ++o) {
        int64_t offset = 0;
        for (size_t ti = 0; ti < self.parents.size(); ++ti) {
          auto& p = self.parents[ti];
          const int64_t block = lens[ti] * inner;
          if (p->requires_grad) {
            p->ensure_grad();
            Real* dst = p->grad.data() + o * block;
            const Real* src = self.grad.data() + (o * total_axis + offset) * inner;
            for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
          offset += lens[ti];
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> slice(const TensorT<Real>& x, int axis, int start, int length) {
  const auto& shape = x.shape();
  if (axis < 0 || axis >= static_cast<int>(shape.size())) {
    throw std::invalid_argument("slice: axis out of range");
  }
  if (start < 0 || length <= 0 || start + length > shape[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") out of bounds for " +
                                shape_to_string(shape));
  }
  std::vector<int> out_shape = shape;
  out_shape[axis] = length;
  const int64_t outer = detail::prod(shape, 0, axis);
  const int64_t inner = detail::prod(shape, axis + 1, shape.size());
  const int64_t full = shape[axis];
  auto out = detail::make_result<Real>(out_shape, {x.node()});
  const Real* xv = x.values().data();
  Real* ov = out->values.data();
  for (int64_t o = 0; o < outer; ++o) {
    const Real* src = xv + (o * full + start) * inner;
    Real* dst = ov + o * length * inner;
    for (int64_t i = 0; i < length * inner; ++i) dst[i] = src[i];
  }
  if (out->requires_grad) {
    out->backward_fn = [outer, inner, full, start, length](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        Real* dst = p->grad.data() + (o * full + start) * inner;
        const Real* src = self.grad.data() + o * length * inner;
        for (int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// Reductions and distances

template <typename Real>
TensorT<Real> sum_all(const TensorT<Real>& x) {
  auto out = detail::make_result<Real>({1}, {x.node()});
  double acc = 0;
  for (Real v : x.values()) acc += v;
  out->values[0] = static_cast<Real>(acc);
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      const Real g = self.grad[0];
      for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> mean_all(const TensorT<Real>& x) {
  const int64_t n = x.numel();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  auto out = detail::make_result<Real>({1}, {x.node()});
  double acc = 0;
  for (Real v : x.values()) acc += v;
  out->values[0] = static_cast<Real>(acc / n);
  if (out->requires_grad) {
    out->backward_fn = [n](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      const Real g = self.grad[0] / static_cast<Real>(n);
      for (size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    };
  }
  return TensorT<Real>::wrap(out);
}

/// ||a - b||_1 (sum of absolute differences). Subgradient 0 at kinks.
template <typename Real>
TensorT<Real> l1_distance(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape("l1", a, b);
  auto out = detail::make_result<Real>({1}, {a.node(), b.node()});
  double acc = 0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    acc += std::abs(static_cast<double>(a.values()[i]) - b.values()[i]);
  }
  out->values[0] = static_cast<Real>(acc);
  if (out->requires_grad) {
    out->backward_fn = [](Node<Real>& self) {
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      const Real g = self.grad[0];
      for (size_t i = 0; i < pa->values.size(); ++i) {
        const Real d = pa->values[i] - pb->values[i];
        const Real s = d > Real(0) ? Real(1) : (d < Real(0) ? Real(-1) : Real(0));
        if (pa->requires_grad) pa->grad[i] += g * s;
        if (pb->requires_grad) pb->grad[i] -= g * s;
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

/// ||a - b||_2 (Euclidean norm of the difference). Subgradient 0 at a == b.
template <typename Real>
TensorT<Real> l2_distance(const TensorT<Real>& a, const TensorT<Real>& b) {
  detail::require_same_shape("l2", a, b);
  auto out = detail::make_result<Real>({1}, {a.node(), b.node()});
  double acc = 0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    const double d = static_cast<double>(a.values()[i]) - b.values()[i];
    acc += d * d;
  }
  const double norm = std::sqrt(acc);
  out->values[0] = static_cast<Real>(norm);
  if (out->requires_grad) {
    out->backward_fn = [norm](Node<Real>& self) {
      if (norm <= 1e-30) return;
      auto& pa = self.parents[0];
      auto& pb = self.parents[1];
      if (pa->requires_grad) pa->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      const double coef = self.grad[0] / norm;
      for (size_t i = 0; i < pa->values.size(); ++i) {
        const Real d = static_cast<Real>(coef * (pa->values[i] - pb->values[i]));
        if (pa->requires_grad) pa->grad[i] += d;
        if (pb->requires_grad) pb->grad[i] -= d;
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// Pixel shuffles and nearest upsampling (CHW)

template <typename Real>
TensorT<Real> pixel_unshuffle(const TensorT<Real>& x, int factor) {
  const auto& s = x.shape();
  if (s.size() != 3 || factor < 1 || s[1] % factor != 0 || s[2] % factor != 0) {
    throw std::invalid_argument("pixel_unshuffle: shape " + shape_to_string(s) +
                                " not divisible by factor " + std::to_string(factor));
  }
  const int c = s[0], h = s[1] / factor, w = s[2] / factor;
  auto out = detail::make_result<Real>({c * factor * factor, h, w}, {x.node()});
  const Real* xv = x.values().data();
  Real* ov = out->values.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int dy = 0; dy < factor; ++dy) {
      for (int dx = 0; dx < factor; ++dx) {
        const size_t oc = (static_cast<size_t>(ci) * factor + dy) * factor + dx;
        for (int y = 0; y < h; ++y) {
          for (int xw = 0; xw < w; ++xw) {
            ov[(oc * h + y) * w + xw] =
                xv[(static_cast<size_t>(ci) * s[1] + y * factor + dy) * s[2] + xw * factor + dx];
          }
        }
      }
    }
  }
  if (out->requires_grad) {
    const int in_h = s[1], in_w = s[2];
    out->backward_fn = [c, h, w, factor, in_h, in_w](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            const size_t oc = (static_cast<size_t>(ci) * factor + dy) * factor + dx;
            for (int y = 0; y < h; ++y) {
              for (int xw = 0; xw < w; ++xw) {
                p->grad[(static_cast<size_t>(ci) * in_h + y * factor + dy) * in_w + xw * factor +
                        dx] += self.grad[(oc * h + y) * w + xw];
              }
            }
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> pixel_shuffle(const TensorT<Real>& x, int factor) {
  const auto& s = x.shape();
  if (s.size() != 3 || factor < 1 || s[0] % (factor * factor) != 0) {
    throw std::invalid_argument("pixel_shuffle: channels of " + shape_to_string(s) +
                                " not divisible by factor^2 = " + std::to_string(factor * factor));
  }
  const int c = s[0] / (factor * factor), h = s[1], w = s[2];
  auto out = detail::make_result<Real>({c, h * factor, w * factor}, {x.node()});
  const Real* xv = x.values().data();
  Real* ov = out->values.data();
  for (int ci = 0; ci < c; ++ci) {
    for (int dy = 0; dy < factor; ++dy) {
      for (int dx = 0; dx < factor; ++dx) {
        const size_t ic = (static_cast<size_t>(ci) * factor + dy) * factor + dx;
        for (int y = 0; y < h; ++y) {
          for (int xw = 0; xw < w; ++xw) {
            ov[(static_cast<size_t>(ci) * h * factor + y * factor + dy) * w * factor + xw * factor +
               dx] = xv[(ic * h + y) * w + xw];
          }
        }
      }
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [c, h, w, factor](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (int ci = 0; ci < c; ++ci) {
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            const size_t ic = (static_cast<size_t>(ci) * factor + dy) * factor + dx;
            for (int y = 0; y < h; ++y) {
              for (int xw = 0; xw < w; ++xw) {
                p->grad[(ic * h + y) * w + xw] +=
                    self.grad[(static_cast<size_t>(ci) * h * factor + y * factor + dy) * w *
                                  factor +
                              xw * factor + dx];
              }
            }
          }
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

template <typename Real>
TensorT<Real> upsample_nearest(const TensorT<Real>& x, int factor) {
  const auto& s = x.shape();
  if (s.size() != 3 || factor < 1) {
    throw std::invalid_argument("upsample_nearest: expects CHW input, got " + shape_to_string(s));
  }
  const int c = s[0], h = s[1], w = s[2];
  auto out = detail::make_result<Real>({c, h * factor, w * factor}, {x.node()});
  const Real* xv = x.values().data();
  Real* ov = out->values.data();
  const int oh = h * factor, ow = w * factor;
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < oh; ++y) {
      const Real* xrow = xv + (static_cast<size_t>(ci) * h + y / factor) * w;
      Real* orow = ov + (static_cast<size_t>(ci) * oh + y) * ow;
      for (int xw = 0; xw < ow; ++xw) orow[xw] = xrow[xw / factor];
    }
  }
  if (out->requires_grad) {
    out->backward_fn = [c, h, w, factor](Node<Real>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      const int oh = h * factor, ow = w * factor;
      for (int ci = 0; ci < c; ++ci) {
        for (int y = 0; y < oh; ++y) {
          Real* grow = p->grad.data() + (static_cast<size_t>(ci) * h + y / factor) * w;
          const Real* srow = self.grad.data() + (static_cast<size_t>(ci) * oh + y) * ow;
          for (int xw = 0; xw < ow; ++xw) grow[xw / factor] += srow[xw];
        }
      }
    };
  }
  return TensorT<Real>::wrap(out);
}

// ---------------------------------------------------------------------------
// Adam optimizer (bias-corrected)

template <typename Real>
struct AdamState {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int64_t step_count = 0;
  std::vector<std::vector<Real>> first_moment;
  std::vector<std::vector<Real>> second_moment;

  void initialize(const std::vector<TensorT<Real>>& params) {
    first_moment.clear();
    second_moment.clear();
    step_count = 0;
    for (const auto& p : params) {
      first_moment.emplace_back(p.values().size(), Real(0));
      second_moment.emplace_back(p.values().size(), Real(0));
    }
  }

  void update(std::vector<TensorT<Real>>& params) {
    if (first_moment.size() != params.size()) {
      throw std::invalid_argument("AdamState: not initialized for this parameter list");
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      if (p.grad().size() != p.values().size()) {
        throw std::invalid_argument("AdamState: gradient shape does not match parameter " +
                                    shape_to_string(p.shape()));
      }
      auto& m = first_moment[pi];
      auto& v = second_moment[pi];
      for (size_t i = 0; i < m.size(); ++i) {
        const double g = p.grad()[i];
        m[i] = static_cast<Real>(beta1 * m[i] + (1.0 - beta1) * g);
        v[i] = static_cast<Real>(beta2 * v[i] + (1.0 - beta2) * g * g);
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p.values()[i] =
            static_cast<Real>(p.values()[i] - learning_rate * m_hat / (std::sqrt(v_hat) + epsilon));
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences and returns the maximum relative error over all
/// elements of all inputs flagged requires_grad.
template <typename Real>
double grad_check(const std::function<TensorT<Real>(const std::vector<TensorT<Real>>&)>& fn,
                  std::vector<TensorT<Real>>& inputs, double step = 1e-5) {
  TensorT<Real> loss = fn(inputs);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
  for (auto& t : inputs) t.zero_grad();
  loss.backward();
  std::vector<std::vector<Real>> analytic;
  for (auto& t : inputs) {
    if (t.requires_grad() && t.grad().size() == t.values().size()) {
      analytic.push_back(t.grad());
    } else {
      analytic.push_back(std::vector<Real>(t.values().size(), Real(0)));
    }
  }
  std::vector<std::pair<double, double>> pairs;  // (analytic, numeric)
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    if (!inputs[ti].requires_grad()) continue;
    auto& vals = inputs[ti].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const Real saved = vals[i];
      vals[i] = saved + static_cast<Real>(step);
      const double up = static_cast<double>(fn(inputs).scalar());
      vals[i] = saved - static_cast<Real>(step);
      const double down = static_cast<double>(fn(inputs).scalar());
      vals[i] = saved;
      pairs.emplace_back(analytic[ti][i], (up - down) / (2.0 * step));
    }
  }
  // The error floor scales with the gradient magnitude of the whole graph,
  // so finite-difference truncation noise on exactly-zero gradients (softmax
  // shift invariances) does not register as error.
  double scale = 0.0;
  for (const auto& [a, n] : pairs) scale = std::max({scale, std::abs(a), std::abs(n)});
  const double floor = std::max(1e-6, 1e-4 * scale);
  double max_rel = 0.0;
  for (const auto& [a, n] : pairs) {
    max_rel = std::max(max_rel, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return max_rel;
}

/// grad_check for ops with non-scalar outputs: contracts the output against
/// a fixed random projection so every output element participates.
template <typename Real>
double grad_check_op(const std::function<TensorT<Real>(const std::vector<TensorT<Real>>&)>& op,
                     std::vector<TensorT<Real>>& inputs, uint64_t seed, double step = 1e-5) {
  std::function<TensorT<Real>(const std::vector<TensorT<Real>>&)> scalarized =
      [&op, seed](const std::vector<TensorT<Real>>& ins) {
        TensorT<Real> out = op(ins);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<Real> weights(out.values().size());
        for (auto& w : weights) w = static_cast<Real>(dist(rng));
        auto proj = TensorT<Real>::from_data(out.shape(), std::move(weights));
        return sum_all(mul(out, proj));
      };
  return grad_check(scalarized, inputs, step);
}

// ---------------------------------------------------------------------------
// Conversions and initializers

template <typename Real>
TensorT<Real> to_tensor(const NdArray& arr, bool requires_grad = false) {
  std::vector<Real> values(arr.data.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<Real>(arr.data[i]);
  return TensorT<Real>::from_data(arr.shape, std::move(values), requires_grad);
}

template <typename Real>
NdArray to_ndarray(const TensorT<Real>& t) {
  NdArray arr;
  arr.shape = t.shape();
  arr.data.assign(t.values().begin(), t.values().end());
  return arr;
}

template <typename Real>
TensorT<Real> randn(std::vector<int> shape, std::mt19937_64& rng, double stddev,
                    bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<Real> values(static_cast<size_t>(NdArray::numel_of(shape)));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return TensorT<Real>::from_data(std::move(shape), std::move(values), requires_grad);
}

}  // namespace efs
