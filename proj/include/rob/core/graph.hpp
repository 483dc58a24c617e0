// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rob/core/tensor.hpp"

namespace rob {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the dynamic computation tape. The backward closure owns
/// strong references to parents only; the node itself is referenced raw, so
/// graphs are freed as soon as the root goes out of scope.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backfn;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Scope guard disabling tape construction (teacher forwards, evaluation).
class NoGradGuard {
public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline NodePtr constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

/// Leaf with requires_grad set: a trainable parameter.
inline NodePtr make_param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

namespace detail {

inline bool any_requires(const std::vector<NodePtr>& parents) {
  if (!grad_enabled()) return false;
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

inline NodePtr make_op(Tensor value, std::vector<NodePtr> parents,
                       std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (any_requires(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  return n;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar (or any) root. Seeds the root gradient
/// with ones and accumulates into every reachable parameter.
inline void backward(const NodePtr& root) {
  check(root != nullptr, "backward: null root");
  if (!root->requires_grad) return;

  // Iterative topological order (graphs can be deep at long sequence length).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad.fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && !n->grad.empty()) n->backfn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and arithmetic ops
// ---------------------------------------------------------------------------

inline NodePtr add(NodePtr a, NodePtr b) {
  check(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out = a->value;
  out.add_(b->value);
  return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad.add_(n.grad);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad.add_(n.grad);
    }
  });
}

inline NodePtr sub(NodePtr a, NodePtr b) {
  check(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
  return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad.add_(n.grad);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
    }
  });
}

inline NodePtr mul(NodePtr a, NodePtr b) {
  check(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
  return detail::make_op(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        a->grad[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        b->grad[i] += n.grad[i] * a->value[i];
    }
  });
}

inline NodePtr scale(NodePtr a, real s) {
  Tensor out = a->value;
  out.scale_(s);
  return detail::make_op(std::move(out), {a}, [a, s](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * s;
  });
}

/// m[r,:] + v for every row r.
inline NodePtr add_rowvec(NodePtr m, NodePtr v) {
  const std::size_t cols = m->value.cols();
  check(v->value.size() == cols, "add_rowvec: width mismatch");
  Tensor out = m->value;
  const std::size_t rows = out.size() / cols;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += v->value[c];
  return detail::make_op(std::move(out), {m, v}, [m, v, rows, cols](Node& n) {
    if (m->requires_grad) {
      m->ensure_grad();
      m->grad.add_(n.grad);
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) v->grad[c] += n.grad[r * cols + c];
    }
  });
}

/// Row r of m scaled by w[r] (w is a constant tensor, one entry per row).
inline NodePtr scale_rows(NodePtr m, Tensor w) {
  const std::size_t cols = m->value.cols();
  const std::size_t rows = m->value.size() / cols;
  check(w.size() == rows, "scale_rows: row-count mismatch");
  Tensor out = m->value;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] *= w[r];
  auto wp = std::make_shared<Tensor>(std::move(w));
  return detail::make_op(std::move(out), {m}, [m, wp, rows, cols](Node& n) {
    m->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        m->grad[r * cols + c] += n.grad[r * cols + c] * (*wp)[r];
  });
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

/// C = op(A) * op(B) with optional transposes; tensors are viewed as
/// matrices (leading dims collapse into rows).
inline NodePtr matmul(NodePtr a, NodePtr b, bool ta = false, bool tb = false) {
  auto A = a->value.mat();
  auto B = b->value.mat();
  const std::size_t m = ta ? A.cols() : A.rows();
  const std::size_t k = ta ? A.rows() : A.cols();
  const std::size_t k2 = tb ? B.cols() : B.rows();
  const std::size_t n = tb ? B.rows() : B.cols();
  check(k == k2, "matmul: inner dimension mismatch " + a->value.shape_str() +
                     (ta ? "^T" : "") + " x " + b->value.shape_str() + (tb ? "^T" : ""));
  Tensor out({m, n});
  {
    auto C = out.mat();
    if (!ta && !tb)
      C.noalias() = A * B;
    else if (ta && !tb)
      C.noalias() = A.transpose() * B;
    else if (!ta && tb)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A.transpose() * B.transpose();
  }
  return detail::make_op(std::move(out), {a, b}, [a, b, ta, tb](Node& nd) {
    auto G = nd.grad.mat();
    auto A = a->value.mat();
    auto B = b->value.mat();
    if (a->requires_grad) {
      a->ensure_grad();
      auto GA = a->grad.mat();
      if (!ta && !tb)
        GA.noalias() += G * B.transpose();
      else if (ta && !tb)
        GA.noalias() += B * G.transpose();
      else if (!ta && tb)
        GA.noalias() += G * B;
      else
        GA.noalias() += B.transpose() * G.transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      auto GB = b->grad.mat();
      if (!ta && !tb)
        GB.noalias() += A.transpose() * G;
      else if (ta && !tb)
        GB.noalias() += A * G;
      else if (!ta && tb)
        GB.noalias() += G.transpose() * A;
      else
        GB.noalias() += G.transpose() * A.transpose();
    }
  });
}

/// x @ W + b with W of shape [in, out].
inline NodePtr linear(NodePtr x, NodePtr w, NodePtr b) {
  return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline NodePtr gelu(NodePtr a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  return detail::make_op(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    static const real inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const real x = a->value[i];
      const real cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const real pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      a->grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

inline NodePtr relu(NodePtr a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = v > 0 ? v : 0;
  return detail::make_op(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (a->value[i] > 0) a->grad[i] += n.grad[i];
  });
}

/// x * clamp(x + 3, 0, 6) / 6.
inline NodePtr hardswish(NodePtr a) {
  Tensor out = a->value;
  for (auto& v : out.vec()) {
    const real h = std::clamp(v + 3.0, 0.0, 6.0);
    v = v * h / 6.0;
  }
  return detail::make_op(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const real x = a->value[i];
      real d;
      if (x <= -3.0)
        d = 0.0;
      else if (x >= 3.0)
        d = 1.0;
      else
        d = (2.0 * x + 3.0) / 6.0;
      a->grad[i] += n.grad[i] * d;
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise reductions / normalizations
// ---------------------------------------------------------------------------

inline NodePtr softmax_rows(NodePtr a) {
  const std::size_t cols = a->value.cols();
  const std::size_t rows = a->value.size() / cols;
  Tensor out = a->value;
  for (std::size_t r = 0; r < rows; ++r) {
    real* row = out.data() + r * cols;
    real mx = row[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    real sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  return detail::make_op(std::move(out), {a}, [a, rows, cols](Node& n) {
    a->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const real* q = n.value.data() + r * cols;
      const real* g = n.grad.data() + r * cols;
      real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += q[c] * g[c];
      real* ga = a->grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) ga[c] += q[c] * (g[c] - dot);
    }
  });
}

/// log(max(x, eps)); flat (zero-gradient) below the clamp.
inline NodePtr log_clamped(NodePtr a, real eps = 1e-12) {
  Tensor out = a->value;
  for (auto& v : out.vec()) v = std::log(std::max(v, eps));
  return detail::make_op(std::move(out), {a, }, [a, eps](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (a->value[i] >= eps) a->grad[i] += n.grad[i] / a->value[i];
  });
}

inline NodePtr sum_all(NodePtr a) {
  Tensor out = Tensor::scalar(a->value.sum());
  return detail::make_op(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    const real g = n.grad[0];
    for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
  });
}

inline NodePtr mean_all(NodePtr a) {
  return scale(sum_all(a), 1.0 / static_cast<real>(a->value.size()));
}

/// LayerNorm over the last dimension with learnable gamma/beta.
inline NodePtr layer_norm_rows(NodePtr x, NodePtr gamma, NodePtr beta, real eps = 1e-6) {
  const std::size_t cols = x->value.cols();
  const std::size_t rows = x->value.size() / cols;
  check(gamma->value.size() == cols && beta->value.size() == cols,
        "layer_norm_rows: affine size mismatch");
  Tensor out({rows, cols});
  auto xhat = std::make_shared<Tensor>(Tensor({rows, cols}));
  auto inv_std = std::make_shared<Tensor>(Tensor({rows}));
  for (std::size_t r = 0; r < rows; ++r) {
    const real* xr = x->value.data() + r * cols;
    real mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= cols;
    real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= cols;
    const real is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const real h = (xr[c] - mean) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gamma->value[c] + beta->value[c];
    }
  }
  if (x->value.ndim() != 2) out = out.reshaped(x->value.shape());
  return detail::make_op(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, rows, cols](Node& n) {
    for (std::size_t r = 0; r < rows; ++r) {
      const real* g = n.grad.data() + r * cols;
      const real* h = xhat->data() + r * cols;
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        beta->ensure_grad();
        for (std::size_t c = 0; c < cols; ++c) {
          gamma->grad[c] += g[c] * h[c];
          beta->grad[c] += g[c];
        }
      }
      if (x->requires_grad) {
        x->ensure_grad();
        real mean_gy = 0, mean_gyh = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const real gy = g[c] * gamma->value[c];
          mean_gy += gy;
          mean_gyh += gy * h[c];
        }
        mean_gy /= cols;
        mean_gyh /= cols;
        real* gx = x->grad.data() + r * cols;
        const real is = (*inv_std)[r];
        for (std::size_t c = 0; c < cols; ++c) {
          const real gy = g[c] * gamma->value[c];
          gx[c] += (gy - mean_gy - h[c] * mean_gyh) * is;
        }
      }
    }
  });
}

/// Rows scaled to unit L2 norm.
inline NodePtr l2_normalize_rows(NodePtr x, real eps = 1e-12) {
  const std::size_t cols = x->value.cols();
  const std::size_t rows = x->value.size() / cols;
  Tensor out = x->value;
  auto norms = std::make_shared<Tensor>(Tensor({rows}));
  for (std::size_t r = 0; r < rows; ++r) {
    real* row = out.data() + r * cols;
    real ss = 0;
    for (std::size_t c = 0; c < cols; ++c) ss += row[c] * row[c];
    const real nrm = std::max(std::sqrt(ss), eps);
    (*norms)[r] = nrm;
    for (std::size_t c = 0; c < cols; ++c) row[c] /= nrm;
  }
  return detail::make_op(std::move(out), {x}, [x, norms, rows, cols](Node& n) {
    x->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const real* y = n.value.data() + r * cols;
      const real* g = n.grad.data() + r * cols;
      real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      real* gx = x->grad.data() + r * cols;
      const real inv = 1.0 / (*norms)[r];
      for (std::size_t c = 0; c < cols; ++c) gx[c] += (g[c] - y[c] * dot) * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

inline NodePtr reshape(NodePtr a, std::vector<std::size_t> shape) {
  Tensor out = a->value.reshaped(shape);
  return detail::make_op(std::move(out), {a}, [a](Node& n) {
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
  });
}

/// Select rows by index (duplicates allowed); backward scatter-adds.
inline NodePtr gather_rows(NodePtr a, std::vector<std::size_t> idx) {
  const std::size_t cols = a->value.cols();
  const std::size_t rows = a->value.size() / cols;
  for (auto i : idx) check(i < rows, "gather_rows: index out of range");
  Tensor out({idx.size(), cols});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a->value.data() + idx[r] * cols, cols, out.data() + r * cols);
  auto ip = std::make_shared<std::vector<std::size_t>>(std::move(idx));
  return detail::make_op(std::move(out), {a}, [a, ip, cols](Node& n) {
    a->ensure_grad();
    for (std::size_t r = 0; r < ip->size(); ++r) {
      const real* g = n.grad.data() + r * cols;
      real* ga = a->grad.data() + (*ip)[r] * cols;
      for (std::size_t c = 0; c < cols; ++c) ga[c] += g[c];
    }
  });
}

inline NodePtr concat_rows(const std::vector<NodePtr>& parts) {
  check(!parts.empty(), "concat_rows: empty input");
  const std::size_t cols = parts[0]->value.cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    check(p->value.cols() == cols, "concat_rows: width mismatch");
    rows += p->value.size() / cols;
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p->value.data(), p->value.size(), out.data() + off);
    off += p->value.size();
  }
  return detail::make_op(std::move(out), parts, [parts](Node& n) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->grad.size(); ++i)
          p->grad[i] += n.grad[off + i];
      }
      off += p->value.size();
    }
  });
}

inline NodePtr slice_cols(NodePtr a, std::size_t c0, std::size_t c1) {
  const std::size_t cols = a->value.cols();
  const std::size_t rows = a->value.size() / cols;
  check(c0 < c1 && c1 <= cols, "slice_cols: bad range");
  Tensor out({rows, c1 - c0});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a->value.data() + r * cols + c0, c1 - c0, out.data() + r * (c1 - c0));
  return detail::make_op(std::move(out), {a}, [a, c0, c1, cols, rows](Node& n) {
    a->ensure_grad();
    const std::size_t w = c1 - c0;
    for (std::size_t r = 0; r < rows; ++r) {
      const real* g = n.grad.data() + r * w;
      real* ga = a->grad.data() + r * cols + c0;
      for (std::size_t c = 0; c < w; ++c) ga[c] += g[c];
    }
  });
}

inline NodePtr concat_cols(const std::vector<NodePtr>& parts) {
  check(!parts.empty(), "concat_cols: empty input");
  const std::size_t rows = parts[0]->value.size() / parts[0]->value.cols();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    check(p->value.size() / p->value.cols() == rows, "concat_cols: row mismatch");
    cols += p->value.cols();
  }
  Tensor out({rows, cols});
  std::size_t coff = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p->value.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p->value.data() + r * pc, pc, out.data() + r * cols + coff);
    coff += pc;
  }
  return detail::make_op(std::move(out), parts, [parts, rows, cols](Node& n) {
    std::size_t coff = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p->value.cols();
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const real* g = n.grad.data() + r * cols + coff;
          real* gp = p->grad.data() + r * pc;
          for (std::size_t c = 0; c < pc; ++c) gp[c] += g[c];
        }
      }
      coff += pc;
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution / pooling on [C,H,W]
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  std::size_t ic, ih, iw, oc, kh, kw, oh, ow, stride, pad;
};

inline void im2col(const Tensor& x, const ConvDims& d, Tensor& cols) {
  // cols: [ic*kh*kw, oh*ow]
  const std::size_t span = d.oh * d.ow;
  for (std::size_t c = 0; c < d.ic; ++c)
    for (std::size_t ky = 0; ky < d.kh; ++ky)
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        real* dst = cols.data() + ((c * d.kh + ky) * d.kw + kx) * span;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
            real v = 0;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(d.ih) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(d.iw))
              v = x.data()[(c * d.ih + iy) * d.iw + ix];
            dst[oy * d.ow + ox] = v;
          }
        }
      }
}

inline void col2im_add(const Tensor& cols, const ConvDims& d, Tensor& gx) {
  const std::size_t span = d.oh * d.ow;
  for (std::size_t c = 0; c < d.ic; ++c)
    for (std::size_t ky = 0; ky < d.kh; ++ky)
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const real* src = cols.data() + ((c * d.kh + ky) * d.kw + kx) * span;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy =
              static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.ih)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.iw)) continue;
            gx.data()[(c * d.ih + iy) * d.iw + ix] += src[oy * d.ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution, x: [IC,H,W], w: [OC, IC*kh*kw], b: [OC].
inline NodePtr conv2d(NodePtr x, NodePtr w, NodePtr b, std::size_t kh, std::size_t kw,
                      std::size_t stride = 1, std::size_t pad = 0) {
  check(x->value.ndim() == 3, "conv2d: input must be [C,H,W]");
  detail::ConvDims d;
  d.ic = x->value.dim(0);
  d.ih = x->value.dim(1);
  d.iw = x->value.dim(2);
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  d.pad = pad;
  d.oc = w->value.dim(0);
  check(w->value.dim(1) == d.ic * kh * kw, "conv2d: weight shape mismatch");
  check(d.ih + 2 * pad >= kh && d.iw + 2 * pad >= kw, "conv2d: kernel larger than input");
  d.oh = (d.ih + 2 * pad - kh) / stride + 1;
  d.ow = (d.iw + 2 * pad - kw) / stride + 1;

  auto cols = std::make_shared<Tensor>(Tensor({d.ic * kh * kw, d.oh * d.ow}));
  detail::im2col(x->value, d, *cols);
  Tensor out({d.oc, d.oh, d.ow});
  {
    MatMap o(out.data(), d.oc, d.oh * d.ow);
    o.noalias() = w->value.mat() * cols->mat();
    for (std::size_t c = 0; c < d.oc; ++c)
      o.row(c).array() += b->value[c];
  }
  return detail::make_op(std::move(out), {x, w, b}, [x, w, b, cols, d](Node& n) {
    ConstMatMap G(n.grad.data(), d.oc, d.oh * d.ow);
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t c = 0; c < d.oc; ++c) b->grad[c] += G.row(c).sum();
    }
    if (w->requires_grad) {
      w->ensure_grad();
      w->grad.mat().noalias() += G * cols->mat().transpose();
    }
    if (x->requires_grad) {
      x->ensure_grad();
      Tensor gcols({d.ic * d.kh * d.kw, d.oh * d.ow});
      gcols.mat().noalias() = w->value.mat().transpose() * G;
      detail::col2im_add(gcols, d, x->grad);
    }
  });
}

/// Non-overlapping k x k average pooling on [C,H,W] (H, W divisible by k).
inline NodePtr avg_pool2d(NodePtr x, std::size_t k) {
  check(x->value.ndim() == 3, "avg_pool2d: input must be [C,H,W]");
  const std::size_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  check(H % k == 0 && W % k == 0, "avg_pool2d: size not divisible by kernel");
  const std::size_t oh = H / k, ow = W / k;
  Tensor out({C, oh, ow});
  const real inv = 1.0 / static_cast<real>(k * k);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xw = 0; xw < ow; ++xw) {
        real s = 0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx)
            s += x->value.at3(c, y * k + dy, xw * k + dx);
        out.at3(c, y, xw) = s * inv;
      }
  return detail::make_op(std::move(out), {x}, [x, C, oh, ow, k, inv](Node& n) {
    x->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xw = 0; xw < ow; ++xw) {
          const real g = n.grad.at3(c, y, xw) * inv;
          for (std::size_t dy = 0; dy < k; ++dy)
            for (std::size_t dx = 0; dx < k; ++dx)
              x->grad.at3(c, y * k + dy, xw * k + dx) += g;
        }
  });
}

/// Adaptive average pool of [C,H,W] to a (gh x gw) grid, flattened to a row
/// vector [1, C*gh*gw] in cell-major order (cell, then channel).
inline NodePtr adaptive_avg_pool(NodePtr x, std::size_t gh, std::size_t gw) {
  check(x->value.ndim() == 3, "adaptive_avg_pool: input must be [C,H,W]");
  const std::size_t C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  check(gh >= 1 && gw >= 1 && gh <= H && gw <= W, "adaptive_avg_pool: bad grid");
  Tensor out({1, C * gh * gw});
  struct Cell {
    std::size_t y0, y1, x0, x1;
  };
  auto cells = std::make_shared<std::vector<Cell>>();
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      cells->push_back({gy * H / gh, (gy + 1) * H / gh, gx * W / gw, (gx + 1) * W / gw});
  for (std::size_t ci = 0; ci < cells->size(); ++ci) {
    const Cell& cell = (*cells)[ci];
    const real inv = 1.0 / static_cast<real>((cell.y1 - cell.y0) * (cell.x1 - cell.x0));
    for (std::size_t c = 0; c < C; ++c) {
      real s = 0;
      for (std::size_t y = cell.y0; y < cell.y1; ++y)
        for (std::size_t xw = cell.x0; xw < cell.x1; ++xw) s += x->value.at3(c, y, xw);
      out[ci * C + c] = s * inv;
    }
  }
  return detail::make_op(std::move(out), {x}, [x, cells, C](Node& n) {
    x->ensure_grad();
    for (std::size_t ci = 0; ci < cells->size(); ++ci) {
      const auto& cell = (*cells)[ci];
      const real inv = 1.0 / static_cast<real>((cell.y1 - cell.y0) * (cell.x1 - cell.x0));
      for (std::size_t c = 0; c < C; ++c) {
        const real g = n.grad[ci * C + c] * inv;
        for (std::size_t y = cell.y0; y < cell.y1; ++y)
          for (std::size_t xw = cell.x0; xw < cell.x1; ++xw) x->grad.at3(c, y, xw) += g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Regularization ops (probe heads)
// ---------------------------------------------------------------------------

/// Inverted dropout; mask drawn once at op construction.
inline NodePtr dropout(NodePtr x, real p, class Rng& rng, bool training);

/// BatchNorm over rows of a [n, d] matrix using the batch statistics of the
/// current forward (probes train full-batch, so these are the train stats).
inline NodePtr batch_norm_cols(NodePtr x, NodePtr gamma, NodePtr beta, real eps = 1e-5) {
  const std::size_t cols = x->value.cols();
  const std::size_t rows = x->value.size() / cols;
  check(rows >= 2, "batch_norm_cols: need at least 2 rows");
  Tensor out({rows, cols});
  auto xhat = std::make_shared<Tensor>(Tensor({rows, cols}));
  auto inv_std = std::make_shared<Tensor>(Tensor({cols}));
  for (std::size_t c = 0; c < cols; ++c) {
    real mean = 0;
    for (std::size_t r = 0; r < rows; ++r) mean += x->value[r * cols + c];
    mean /= rows;
    real var = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const real d = x->value[r * cols + c] - mean;
      var += d * d;
    }
    var /= rows;
    const real is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = is;
    for (std::size_t r = 0; r < rows; ++r) {
      const real h = (x->value[r * cols + c] - mean) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gamma->value[c] + beta->value[c];
    }
  }
  return detail::make_op(std::move(out), {x, gamma, beta},
                         [x, gamma, beta, xhat, inv_std, rows, cols](Node& n) {
    for (std::size_t c = 0; c < cols; ++c) {
      real sum_g = 0, sum_gh = 0;
      for (std::size_t r = 0; r < rows; ++r) {
        sum_g += n.grad[r * cols + c];
        sum_gh += n.grad[r * cols + c] * (*xhat)[r * cols + c];
      }
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        beta->ensure_grad();
        gamma->grad[c] += sum_gh;
        beta->grad[c] += sum_g;
      }
      if (x->requires_grad) {
        x->ensure_grad();
        const real gm = gamma->value[c];
        const real is = (*inv_std)[c];
        for (std::size_t r = 0; r < rows; ++r) {
          const real g = n.grad[r * cols + c] * gm;
          const real h = (*xhat)[r * cols + c];
          x->grad[r * cols + c] +=
              is * (g - (sum_g * gm) / rows - h * (sum_gh * gm) / rows);
        }
      }
    }
  });
}

}  // namespace rob

#include "rob/core/rng.hpp"

namespace rob {

inline NodePtr dropout(NodePtr x, real p, Rng& rng, bool training) {
  check(p >= 0 && p < 1, "dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  const real keep = 1.0 - p;
  auto mask = std::make_shared<Tensor>(Tensor(x->value.shape()));
  for (auto& m : mask->vec()) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  Tensor out = x->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return detail::make_op(std::move(out), {x}, [x, mask](Node& n) {
    x->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) x->grad[i] += n.grad[i] * (*mask)[i];
  });
}

}  // namespace rob
