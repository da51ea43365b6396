#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ctxasr/common.hpp"

namespace ctxasr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void check_shapes(bool ok, std::string_view op, const Shape& a, const Shape& b) {
  if (!ok)
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " +
                     shape_str(b));
}

// Dense double tensor with reverse-mode differentiation. Each op records a
// backward closure; backward() walks the graph once in reverse topological
// order. Values are immutable after construction except for trainable
// leaves, which the optimizer updates through mutable_data().
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated during backward for nodes that need it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // accumulates self.grad into parents' grad
  };

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (numel(shape) != data.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(numel(shape), 0.0);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    std::vector<double> d(numel(shape), v);
    return from(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t size() const { return n_->value.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
  std::size_t rank() const { return n_->shape.size(); }

  const std::vector<double>& data() const { return n_->value; }

  // Leaf parameter updates only; mutating a non-leaf invalidates no graph
  // (graphs are rebuilt per step) but is never needed.
  std::vector<double>& mutable_data() { return n_->value; }

  double item() const {
    if (size() != 1) throw ShapeError("item(): tensor " + shape_str(shape()) + " is not scalar");
    return n_->value[0];
  }

  bool requires_grad() const { return n_->requires_grad; }

  const std::vector<double>& grad() const {
    if (!n_->requires_grad || n_->grad.empty())
      throw NumericError("grad(): no gradient recorded for this tensor");
    return n_->grad;
  }

  std::shared_ptr<Node> node() const { return n_; }

  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> n_;
};

namespace detail {

inline std::shared_ptr<Tensor::Node> make_node(Shape shape, std::vector<double> value,
                                               std::vector<std::shared_ptr<Tensor::Node>> parents,
                                               std::function<void(Tensor::Node&)> backprop) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

inline void ensure_grad(Tensor::Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

}  // namespace detail

// Backpropagate from a scalar loss. Gradients accumulate additively across
// fan-out; each reachable grad-requiring node is visited exactly once, and
// its gradient buffer is reset before accumulation, so repeated backward
// calls on fresh graphs see clean leaf gradients.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw NumericError("backward(): loss must be scalar, got " + shape_str(loss.shape()));
  auto root = loss.node();
  if (!root->requires_grad)
    throw NumericError("backward(): loss does not depend on any trainable tensor");

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Tensor::Node*> topo;
  std::unordered_set<Tensor::Node*> seen;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      Tensor::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && next >= stack.back().first->parents.size()) {
      topo.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  for (auto* n : topo) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

// C = A * B, [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_shapes(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "matmul", a.shape(),
               b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  auto an = a.node(), bn = b.node();
  auto node = detail::make_node(
      {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Tensor::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          detail::ensure_grad(*an);
          const auto& bv = bn->value;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
              an->grad[i * k + p] += s;
            }
        }
        if (bn->requires_grad) {
          detail::ensure_grad(*bn);
          const auto& av = an->value;
          for (std::size_t p = 0; p < k; ++p)
            for (std::size_t i = 0; i < m; ++i) {
              const double aip = av[i * k + p];
              if (aip == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) bn->grad[p * n + j] += aip * g[i * n + j];
            }
        }
      });
  return Tensor::wrap(node);
}

// C = A * B^T, [m,k] x [n,k] -> [m,n]
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_shapes(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1), "matmul_nt", a.shape(),
               b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = s;
    }
  auto an = a.node(), bn = b.node();
  auto node = detail::make_node(
      {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Tensor::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          detail::ensure_grad(*an);
          const auto& bv = bn->value;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) an->grad[i * k + p] += gij * bv[j * k + p];
            }
        }
        if (bn->requires_grad) {
          detail::ensure_grad(*bn);
          const auto& av = an->value;
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gij = g[i * n + j];
              if (gij == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p) bn->grad[j * k + p] += gij * av[i * k + p];
            }
        }
      });
  return Tensor::wrap(node);
}

// Elementwise add; b may also be rank-1 matching a's last dimension
// (bias broadcast over rows). No other broadcasting.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool bias = a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
  check_shapes(same || bias, "add", a.shape(), b.shape());
  std::vector<double> out(a.data());
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  } else {
    const std::size_t n = b.dim(0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i % n];
  }
  auto an = a.node(), bn = b.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an, bn},
                                [an, bn, same](Tensor::Node& self) {
                                  const auto& g = self.grad;
                                  if (an->requires_grad) {
                                    detail::ensure_grad(*an);
                                    for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
                                  }
                                  if (bn->requires_grad) {
                                    detail::ensure_grad(*bn);
                                    if (same) {
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                        bn->grad[i] += g[i];
                                    } else {
                                      const std::size_t n = bn->value.size();
                                      for (std::size_t i = 0; i < g.size(); ++i)
                                        bn->grad[i % n] += g[i];
                                    }
                                  }
                                });
  return Tensor::wrap(node);
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (auto& v : out) v *= c;
  auto an = a.node();
  auto node =
      detail::make_node(a.shape(), std::move(out), {an}, [an, c](Tensor::Node& self) {
        detail::ensure_grad(*an);
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
      });
  return Tensor::wrap(node);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_shapes(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto an = a.node(), bn = b.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an, bn}, [an, bn](Tensor::Node& self) {
    const auto& g = self.grad;
    if (an->requires_grad) {
      detail::ensure_grad(*an);
      for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      detail::ensure_grad(*bn);
      for (std::size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->value[i];
    }
  });
  return Tensor::wrap(node);
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  check_shapes(a.shape() == b.shape(), "div", a.shape(), b.shape());
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= b.data()[i];
  auto an = a.node(), bn = b.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an, bn}, [an, bn](Tensor::Node& self) {
    const auto& g = self.grad;
    if (an->requires_grad) {
      detail::ensure_grad(*an);
      for (std::size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      detail::ensure_grad(*bn);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double bv = bn->value[i];
        bn->grad[i] -= g[i] * an->value[i] / (bv * bv);
      }
    }
  });
  return Tensor::wrap(node);
}

// Stack rank-2 [r_i, n] (or rank-1 [n], treated as one row) tensors along
// the first dimension.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  auto cols_of = [](const Tensor& t) {
    return t.rank() == 1 ? t.dim(0) : t.dim(t.rank() - 1);
  };
  auto rows_of = [](const Tensor& t) { return t.rank() == 1 ? std::size_t{1} : t.dim(0); };
  const std::size_t n = cols_of(parts[0]);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    check_shapes(p.rank() <= 2 && cols_of(p) == n, "concat_rows", parts[0].shape(), p.shape());
    rows += rows_of(p);
  }
  std::vector<double> out;
  out.reserve(rows * n);
  std::vector<std::shared_ptr<Tensor::Node>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node());
  }
  auto node = detail::make_node({rows, n}, std::move(out), parents, [parents](Tensor::Node& self) {
    std::size_t off = 0;
    for (const auto& p : parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        detail::ensure_grad(*p);
        for (std::size_t i = 0; i < len; ++i) p->grad[i] += self.grad[off + i];
      }
      off += len;
    }
  });
  return Tensor::wrap(node);
}

inline Tensor concat_last_dim(const Tensor& a, const Tensor& b) {
  check_shapes(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_last_dim",
               a.shape(), b.shape());
  const std::size_t m = a.dim(0), p = a.dim(1), q = b.dim(1);
  std::vector<double> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().begin() + i * p, p, out.begin() + i * (p + q));
    std::copy_n(b.data().begin() + i * q, q, out.begin() + i * (p + q) + p);
  }
  auto an = a.node(), bn = b.node();
  auto node = detail::make_node(
      {m, p + q}, std::move(out), {an, bn}, [an, bn, m, p, q](Tensor::Node& self) {
        if (an->requires_grad) {
          detail::ensure_grad(*an);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p; ++j) an->grad[i * p + j] += self.grad[i * (p + q) + j];
        }
        if (bn->requires_grad) {
          detail::ensure_grad(*bn);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < q; ++j)
              bn->grad[i * q + j] += self.grad[i * (p + q) + p + j];
        }
      });
  return Tensor::wrap(node);
}

// Rows [r0, r1) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
  if (a.rank() != 2 || r0 > r1 || r1 > a.dim(0))
    throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + shape_str(a.shape()));
  const std::size_t n = a.dim(1), rows = r1 - r0;
  std::vector<double> out(a.data().begin() + r0 * n, a.data().begin() + r1 * n);
  auto an = a.node();
  auto node = detail::make_node({rows, n}, std::move(out), {an}, [an, r0, n](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[r0 * n + i] += self.grad[i];
  });
  return Tensor::wrap(node);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  auto an = a.node();
  auto node = detail::make_node(std::move(shape), a.data(), {an}, [an](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
  return Tensor::wrap(node);
}

// Exact Gaussian-CDF GELU: x * Phi(x).
inline Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = x * 0.5 * (1.0 + std::erf(x * inv_sqrt2));
  }
  auto an = a.node();
  auto node = detail::make_node(
      a.shape(), std::move(out), {an}, [an, inv_sqrt2, inv_sqrt2pi](Tensor::Node& self) {
        detail::ensure_grad(*an);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double x = an->value[i];
          const double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
          an->grad[i] += self.grad[i] * (phi + x * pdf);
        }
      });
  return Tensor::wrap(node);
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  auto an = a.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an}, [an](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      an->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
  return Tensor::wrap(node);
}

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  auto an = a.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an}, [an](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * self.value[i];
  });
  return Tensor::wrap(node);
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    if (!(x > 0.0))
      throw NumericError("log: non-positive input " + std::to_string(x) + " at index " +
                         std::to_string(i));
    out[i] = std::log(x);
  }
  auto an = a.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an}, [an](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] / an->value[i];
  });
  return Tensor::wrap(node);
}

// Row-wise softmax with max subtraction. Rank-1 input is one row.
inline Tensor softmax_last_dim(const Tensor& a) {
  if (a.rank() < 1 || a.rank() > 2)
    throw ShapeError("softmax_last_dim: rank must be 1 or 2, got " + shape_str(a.shape()));
  const std::size_t n = a.dim(a.rank() - 1);
  const std::size_t m = a.size() / n;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
  }
  auto an = a.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an}, [an, m, n](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += y[j] * (g[j] - dot);
    }
  });
  return Tensor::wrap(node);
}

// Mean over the time (first) dimension of a [T,E] tensor, optionally
// restricted to rows whose mask flag is set. Returns a rank-1 [E] tensor.
inline Tensor mean_pool_time(const Tensor& a, const std::vector<bool>* mask = nullptr) {
  if (a.rank() != 2) throw ShapeError("mean_pool_time: want rank 2, got " + shape_str(a.shape()));
  const std::size_t t = a.dim(0), e = a.dim(1);
  if (mask && mask->size() != t)
    throw ShapeError("mean_pool_time: mask length " + std::to_string(mask->size()) +
                     " vs T=" + std::to_string(t));
  std::size_t valid = 0;
  std::vector<char> keep(t, 1);
  if (mask) {
    for (std::size_t i = 0; i < t; ++i) keep[i] = (*mask)[i] ? 1 : 0;
  }
  for (std::size_t i = 0; i < t; ++i) valid += keep[i];
  if (valid == 0) throw NumericError("mean_pool_time: all positions masked out");
  std::vector<double> out(e, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    if (!keep[i]) continue;
    for (std::size_t j = 0; j < e; ++j) out[j] += a.data()[i * e + j];
  }
  for (auto& v : out) v /= static_cast<double>(valid);
  auto an = a.node();
  auto node = detail::make_node(
      {e}, std::move(out), {an}, [an, t, e, keep, valid](Tensor::Node& self) {
        detail::ensure_grad(*an);
        const double inv = 1.0 / static_cast<double>(valid);
        for (std::size_t i = 0; i < t; ++i) {
          if (!keep[i]) continue;
          for (std::size_t j = 0; j < e; ++j) an->grad[i * e + j] += self.grad[j] * inv;
        }
      });
  return Tensor::wrap(node);
}

// Row-wise x / (||x|| + 1e-12). Rank-1 input is one row.
inline Tensor l2_normalize_last_dim(const Tensor& a) {
  if (a.rank() < 1 || a.rank() > 2)
    throw ShapeError("l2_normalize_last_dim: rank must be 1 or 2, got " + shape_str(a.shape()));
  constexpr double kEps = 1e-12;
  const std::size_t n = a.dim(a.rank() - 1);
  const std::size_t m = a.size() / n;
  std::vector<double> out(a.size());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data().data() + i * n;
    double ss = 0;
    for (std::size_t j = 0; j < n; ++j) ss += row[j] * row[j];
    const double norm = std::sqrt(ss);
    norms[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] / (norm + kEps);
  }
  auto an = a.node();
  auto node = detail::make_node(
      a.shape(), std::move(out), {an}, [an, m, n, norms](Tensor::Node& self) {
        constexpr double eps = 1e-12;
        detail::ensure_grad(*an);
        for (std::size_t i = 0; i < m; ++i) {
          const double* x = an->value.data() + i * n;
          const double* g = self.grad.data() + i * n;
          const double norm = norms[i];
          const double d = norm + eps;
          double xg = 0;
          for (std::size_t j = 0; j < n; ++j) xg += x[j] * g[j];
          const double safe = std::max(norm, eps);
          for (std::size_t j = 0; j < n; ++j)
            an->grad[i * n + j] += g[j] / d - xg * x[j] / (safe * d * d);
        }
      });
  return Tensor::wrap(node);
}

// Concatenate groups of k consecutive frames of a [T,E] tensor into single
// vectors; a ragged tail is zero-padded to a full group. [T,E] -> [ceil(T/k), E*k].
inline Tensor stack_frames(const Tensor& a, std::size_t k) {
  if (a.rank() != 2) throw ShapeError("stack_frames: want rank 2, got " + shape_str(a.shape()));
  if (k == 0) throw ShapeError("stack_frames: k must be >= 1");
  const std::size_t t = a.dim(0), e = a.dim(1);
  const std::size_t groups = (t + k - 1) / k;
  std::vector<double> out(groups * k * e, 0.0);
  std::copy(a.data().begin(), a.data().end(), out.begin());
  auto an = a.node();
  auto node =
      detail::make_node({groups, e * k}, std::move(out), {an}, [an](Tensor::Node& self) {
        detail::ensure_grad(*an);
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[i];
      });
  return Tensor::wrap(node);
}

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  auto an = a.node();
  auto node = detail::make_node({1}, {s}, {an}, [an](Tensor::Node& self) {
    detail::ensure_grad(*an);
    for (auto& g : an->grad) g += self.grad[0];
  });
  return Tensor::wrap(node);
}

}  // namespace ctxasr
