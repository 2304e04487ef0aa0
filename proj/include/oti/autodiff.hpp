#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records every operation applied to its Vars. Leaves are either
// constants (no gradient) or parameters (gradient accumulated by
// backward()). Parameter leaves reference caller-owned tensors, which must
// outlive the graph.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oti/error.hpp"
#include "oti/tensor.hpp"

namespace oti::ad {

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  // Non-owning constant; `value` must outlive the graph.
  Var constant_ref(const Tensor& value) {
    Node n;
    n.ref = &value;
    return push(std::move(n));
  }

  // Non-owning leaf that receives a gradient.
  Var parameter(const Tensor& value) {
    Node n;
    n.ref = &value;
    n.needs_grad = true;
    return push(std::move(n));
  }

  const Tensor& value(Var v) const { return value(v.id); }
  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Gradient of the last backward() target; zeros when never reached.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor::zeros_like(value(v));
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Records an op result. `backward` receives the output gradient and
  // accumulates into inputs through accumulate().
  Var record(Tensor value, std::vector<std::size_t> inputs,
             std::function<void(Graph&, const Tensor&)> backward) {
    Node n;
    n.owned = std::move(value);
    for (std::size_t in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  // Gradient slot of `id`, zero-initialized on first touch, or nullptr when
  // `id` does not need a gradient.
  Tensor* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor::zeros_like(value(id));
    return &n.grad;
  }

  void backward(Var target) {
    if (value(target).size() != 1) {
      throw ShapeError("backward target must be a scalar, got " +
                       shape_string(value(target).shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    if (!nodes_[target.id].needs_grad) return;
    grad_slot(target.id)->data()[0] = 1.0;
    for (std::size_t i = target.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // The closure may append to nothing but grads, so `n` stays valid.
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Graph&, const Tensor&)> backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& value(Var v) { return v.graph->value(v); }

namespace detail {

inline void check_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ShapeError("vars belong to different graphs");
}

inline void axpy(Tensor& dst, const Tensor& src, double scale = 1.0) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

inline Tensor as_matrix(const Tensor& t) { return Tensor({t.rows(), t.cols()}, t.values()); }

}  // namespace detail

// a[m x k] * b[k x n]
inline Var matmul(Var a, Var b) {
  detail::check_same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (k != bv.rows()) {
    throw ShapeError("matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id, m, k, n](Graph& g, const Tensor& dout) {
                    if (Tensor* da = g.grad_slot(a)) {
                      kernels::gemm_bt_acc(dout.data().data(), g.value(b).data().data(),
                                           da->data().data(), m, n, k);
                    }
                    if (Tensor* db = g.grad_slot(b)) {
                      kernels::gemm_at_acc(g.value(a).data().data(), dout.data().data(),
                                           db->data().data(), m, k, n);
                    }
                  });
}

// a[m x k] * b[n x k]^T
inline Var matmul_bt(Var a, Var b) {
  detail::check_same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (k != bv.cols()) {
    throw ShapeError("matmul_bt: " + shape_string(av.shape()) + " x " +
                     shape_string(bv.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm_bt_acc(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return g.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id, m, k, n](Graph& g, const Tensor& dout) {
                    if (Tensor* da = g.grad_slot(a)) {
                      kernels::gemm_acc(dout.data().data(), g.value(b).data().data(),
                                        da->data().data(), m, n, k);
                    }
                    if (Tensor* db = g.grad_slot(b)) {
                      kernels::gemm_at_acc(dout.data().data(), g.value(a).data().data(),
                                           db->data().data(), m, n, k);
                    }
                  });
}

inline Var add(Var a, Var b) {
  detail::check_same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw ShapeError("add: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out = detail::as_matrix(av);
  detail::axpy(out, bv);
  return g.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id](Graph& g, const Tensor& dout) {
                    if (Tensor* da = g.grad_slot(a)) detail::axpy(*da, dout);
                    if (Tensor* db = g.grad_slot(b)) detail::axpy(*db, dout);
                  });
}

inline Var sub(Var a, Var b) {
  detail::check_same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) {
    throw ShapeError("sub: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out = detail::as_matrix(av);
  detail::axpy(out, bv, -1.0);
  return g.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id](Graph& g, const Tensor& dout) {
                    if (Tensor* da = g.grad_slot(a)) detail::axpy(*da, dout);
                    if (Tensor* db = g.grad_slot(b)) detail::axpy(*db, dout, -1.0);
                  });
}

// a[m x n] + b broadcast over rows; b holds n values.
inline Var add_row(Var a, Var b) {
  detail::check_same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  const std::size_t m = av.rows(), n = av.cols();
  if (bv.size() != n) {
    throw ShapeError("add_row: " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = detail::as_matrix(av);
  for (std::size_t r = 0; r < m; ++r) {
    auto o = out.row_span(r);
    for (std::size_t j = 0; j < n; ++j) o[j] += bv[j];
  }
  return g.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id, m, n](Graph& g, const Tensor& dout) {
                    if (Tensor* da = g.grad_slot(a)) detail::axpy(*da, dout);
                    if (Tensor* db = g.grad_slot(b)) {
                      for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t j = 0; j < n; ++j) (*db)[j] += dout(r, j);
                      }
                    }
                  });
}

inline Var scale(Var a, double c) {
  Graph& g = *a.graph;
  Tensor out = detail::as_matrix(g.value(a));
  for (double& v : out.data()) v *= c;
  return g.record(std::move(out), {a.id}, [a = a.id, c](Graph& g, const Tensor& dout) {
    if (Tensor* da = g.grad_slot(a)) detail::axpy(*da, dout, c);
  });
}

// s (one element) times every entry of a.
inline Var mul_scalar(Var s, Var a) {
  detail::check_same_graph(s, a);
  Graph& g = *a.graph;
  if (g.value(s).size() != 1) throw ShapeError("mul_scalar: scalar operand has several entries");
  const double sv = g.value(s)[0];
  Tensor out = detail::as_matrix(g.value(a));
  for (double& v : out.data()) v *= sv;
  return g.record(std::move(out), {s.id, a.id},
                  [s = s.id, a = a.id](Graph& g, const Tensor& dout) {
                    const Tensor& av = g.value(a);
                    if (Tensor* ds = g.grad_slot(s)) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < av.size(); ++i) acc += dout[i] * av[i];
                      (*ds)[0] += acc;
                    }
                    if (Tensor* da = g.grad_slot(a)) detail::axpy(*da, dout, g.value(s)[0]);
                  });
}

inline Var hadamard(Var a, Var b) {
  detail::check_same_graph(a, b);
  Graph& g = *a.graph;
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.size() != bv.size() || av.cols() != bv.cols()) {
    throw ShapeError("hadamard: " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  Tensor out = detail::as_matrix(av);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.record(std::move(out), {a.id, b.id},
                  [a = a.id, b = b.id](Graph& g, const Tensor& dout) {
                    const Tensor& av = g.value(a);
                    const Tensor& bv = g.value(b);
                    if (Tensor* da = g.grad_slot(a)) {
                      for (std::size_t i = 0; i < dout.size(); ++i) (*da)[i] += dout[i] * bv[i];
                    }
                    if (Tensor* db = g.grad_slot(b)) {
                      for (std::size_t i = 0; i < dout.size(); ++i) (*db)[i] += dout[i] * av[i];
                    }
                  });
}

// Row-wise layer normalization with learned scale and offset (n values each).
inline Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5) {
  detail::check_same_graph(x, gamma);
  detail::check_same_graph(x, beta);
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gv.size() != n || bv.size() != n) {
    throw ShapeError("layer_norm_rows: feature width " + std::to_string(n) +
                     " vs scale/offset " + shape_string(gv.shape()) + "/" +
                     shape_string(bv.shape()));
  }
  Tensor xhat = Tensor::matrix(m, n);
  Vector inv_std(m);
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    auto in = xv.row_span(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(r, j) = (in[j] - mean) * inv_std[r];
      out(r, j) = gv[j] * xhat(r, j) + bv[j];
    }
  }
  return g.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [x = x.id, gm = gamma.id, bt = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std), m, n](Graph& g, const Tensor& dout) {
        if (Tensor* dg = g.grad_slot(gm)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < n; ++j) (*dg)[j] += dout(r, j) * xhat(r, j);
        }
        if (Tensor* db = g.grad_slot(bt)) {
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < n; ++j) (*db)[j] += dout(r, j);
        }
        if (Tensor* dx = g.grad_slot(x)) {
          const Tensor& gv = g.value(gm);
          Vector dxhat(n);
          for (std::size_t r = 0; r < m; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = dout(r, j) * gv[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat(r, j);
            }
            mean_d /= static_cast<double>(n);
            mean_dx /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              (*dx)(r, j) += inv_std[r] * (dxhat[j] - mean_d - xhat(r, j) * mean_dx);
            }
          }
        }
      });
}

inline Var softmax_rows(Var x) {
  Graph& g = *x.graph;
  Tensor out = oti::softmax_rows(detail::as_matrix(g.value(x)));
  return g.record(std::move(out), {x.id}, [x = x.id, self = g.size()](Graph& g, const Tensor& dout) {
    Tensor* dx = g.grad_slot(x);
    if (!dx) return;
    const Tensor& y = g.value(self);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row_span(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += dout(r, j) * yr[j];
      for (std::size_t j = 0; j < yr.size(); ++j) (*dx)(r, j) += yr[j] * (dout(r, j) - dot);
    }
  });
}

// Mean over rows of -log softmax(logits row)[target row]; one target per row.
inline Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets) {
  Graph& g = *logits.graph;
  const Tensor& lv = g.value(logits);
  if (targets.size() != lv.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(lv.rows()) + " rows");
  }
  for (std::size_t t : targets) {
    if (t >= lv.cols()) throw ParameterError("softmax_cross_entropy: target index out of range");
  }
  Tensor probs = oti::softmax_rows(detail::as_matrix(lv));
  double loss = 0.0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    auto in = lv.row_span(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (double v : in) sum += std::exp(v - mx);
    loss += -(in[targets[r]] - mx - std::log(sum));
  }
  const double rows = static_cast<double>(lv.rows());
  loss /= rows;
  return g.record(Tensor({1, 1}, Vector{loss}), {logits.id},
                  [l = logits.id, probs = std::move(probs), targets = std::move(targets),
                   rows](Graph& g, const Tensor& dout) {
                    Tensor* dl = g.grad_slot(l);
                    if (!dl) return;
                    const double s = dout[0] / rows;
                    for (std::size_t r = 0; r < probs.rows(); ++r) {
                      for (std::size_t j = 0; j < probs.cols(); ++j) {
                        const double onehot = j == targets[r] ? 1.0 : 0.0;
                        (*dl)(r, j) += s * (probs(r, j) - onehot);
                      }
                    }
                  });
}

// Column-wise mean: [m x n] -> [1 x n].
inline Var mean_rows(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::matrix(1, n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv(r, j);
  for (double& v : out.data()) v /= static_cast<double>(m);
  return g.record(std::move(out), {x.id}, [x = x.id, m, n](Graph& g, const Tensor& dout) {
    Tensor* dx = g.grad_slot(x);
    if (!dx) return;
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) (*dx)(r, j) += dout[j] * inv;
  });
}

inline Var mean_all(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v;
  const double count = static_cast<double>(xv.size());
  return g.record(Tensor({1, 1}, Vector{s / count}), {x.id},
                  [x = x.id, count](Graph& g, const Tensor& dout) {
                    Tensor* dx = g.grad_slot(x);
                    if (!dx) return;
                    for (double& v : dx->data()) v += dout[0] / count;
                  });
}

// Each row scaled to unit L2 norm.
inline Var l2_normalize_rows(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out = Tensor::matrix(m, n);
  Vector norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (double v : xv.row_span(r)) s += v * v;
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 1e-12)) throw DegenerateVectorError("l2_normalize_rows: near-zero row");
    for (std::size_t j = 0; j < n; ++j) out(r, j) = xv(r, j) / norms[r];
  }
  return g.record(std::move(out), {x.id},
                  [x = x.id, self = g.size(), norms = std::move(norms)](Graph& g,
                                                                       const Tensor& dout) {
                    Tensor* dx = g.grad_slot(x);
                    if (!dx) return;
                    const Tensor& y = g.value(self);
                    for (std::size_t r = 0; r < y.rows(); ++r) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < y.cols(); ++j) dot += y(r, j) * dout(r, j);
                      for (std::size_t j = 0; j < y.cols(); ++j) {
                        (*dx)(r, j) += (dout(r, j) - y(r, j) * dot) / norms[r];
                      }
                    }
                  });
}

// Exact (erf) GELU.
inline Var gelu(Var x) {
  Graph& g = *x.graph;
  Tensor out = detail::as_matrix(g.value(x));
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return g.record(std::move(out), {x.id}, [x = x.id](Graph& g, const Tensor& dout) {
    Tensor* dx = g.grad_slot(x);
    if (!dx) return;
    const Tensor& xv = g.value(x);
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*dx)[i] += dout[i] * (cdf + v * pdf);
    }
  });
}

inline Var tanh(Var x) {
  Graph& g = *x.graph;
  Tensor out = detail::as_matrix(g.value(x));
  for (double& v : out.data()) v = std::tanh(v);
  return g.record(std::move(out), {x.id}, [x = x.id, self = g.size()](Graph& g, const Tensor& dout) {
    Tensor* dx = g.grad_slot(x);
    if (!dx) return;
    const Tensor& y = g.value(self);
    for (std::size_t i = 0; i < y.size(); ++i) (*dx)[i] += dout[i] * (1.0 - y[i] * y[i]);
  });
}

inline Var slice_rows(Var x, std::size_t start, std::size_t count) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const std::size_t n = xv.cols();
  if (count == 0 || start + count > xv.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") of " + shape_string(xv.shape()));
  }
  Tensor out = Tensor::matrix(count, n);
  std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(start * n), count * n,
              out.data().begin());
  return g.record(std::move(out), {x.id},
                  [x = x.id, start, count, n](Graph& g, const Tensor& dout) {
                    Tensor* dx = g.grad_slot(x);
                    if (!dx) return;
                    for (std::size_t i = 0; i < count * n; ++i) (*dx)[start * n + i] += dout[i];
                  });
}

inline Var slice_cols(Var x, std::size_t start, std::size_t count) {
  Graph& g = *x.graph;
  const Tensor& xv = g.value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (count == 0 || start + count > n) {
    throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") of " + shape_string(xv.shape()));
  }
  Tensor out = Tensor::matrix(m, count);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < count; ++j) out(r, j) = xv(r, start + j);
  return g.record(std::move(out), {x.id},
                  [x = x.id, start, count, m](Graph& g, const Tensor& dout) {
                    Tensor* dx = g.grad_slot(x);
                    if (!dx) return;
                    for (std::size_t r = 0; r < m; ++r)
                      for (std::size_t j = 0; j < count; ++j)
                        (*dx)(r, start + j) += dout(r, j);
                  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  Graph& g = *parts.front().graph;
  const std::size_t m = g.value(parts.front()).rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (Var p : parts) {
    detail::check_same_graph(parts.front(), p);
    if (g.value(p).rows() != m) throw ShapeError("concat_cols: row counts differ");
    ids.push_back(p.id);
    widths.push_back(g.value(p).cols());
    total += widths.back();
  }
  Tensor out = Tensor::matrix(m, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Tensor& pv = g.value(ids[k]);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out(r, offset + j) = pv(r, j);
    offset += widths[k];
  }
  return g.record(std::move(out), ids,
                  [ids, widths, m](Graph& g, const Tensor& dout) {
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (Tensor* dp = g.grad_slot(ids[k])) {
                        for (std::size_t r = 0; r < m; ++r)
                          for (std::size_t j = 0; j < widths[k]; ++j)
                            (*dp)(r, j) += dout(r, offset + j);
                      }
                      offset += widths[k];
                    }
                  });
}

struct GradientResult {
  double value = 0.0;
  std::vector<Tensor> grads;
};

// Builds `fn` on a fresh graph with `params` as parameter leaves, runs
// backward, and returns the scalar value with one gradient per parameter.
template <class Fn>
GradientResult evaluate_with_gradients(Fn&& fn, std::span<const Tensor> params) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(g.parameter(p));
  Var out = fn(g, std::span<const Var>(leaves));
  if (g.value(out).size() != 1) {
    throw ShapeError("evaluate_with_gradients: function must return a scalar");
  }
  g.backward(out);
  GradientResult result;
  result.value = g.value(out)[0];
  for (Var leaf : leaves) result.grads.push_back(g.grad(leaf));
  return result;
}

// Forward value of `fn` with every parameter held constant.
template <class Fn>
double evaluate_value(Fn&& fn, std::span<const Tensor> params) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(g.constant_ref(p));
  Var out = fn(g, std::span<const Var>(leaves));
  return g.value(out)[0];
}

// Central finite-difference gradient of `fn` with step `h`.
template <class Fn>
std::vector<Tensor> central_difference(Fn&& fn, std::span<const Tensor> params, double h) {
  std::vector<Tensor> work(params.begin(), params.end());
  std::vector<Tensor> grads;
  for (std::size_t p = 0; p < work.size(); ++p) {
    Tensor gp = Tensor::zeros_like(work[p]);
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double saved = work[p][i];
      work[p][i] = saved + h;
      const double up = evaluate_value(fn, std::span<const Tensor>(work));
      work[p][i] = saved - h;
      const double down = evaluate_value(fn, std::span<const Tensor>(work));
      work[p][i] = saved;
      gp[i] = (up - down) / (2.0 * h);
    }
    grads.push_back(std::move(gp));
  }
  return grads;
}

// ||a - b|| / max(||a||, ||b||), 0 when both are below `floor`.
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-10) {
  if (a.size() != b.size()) throw ShapeError("relative_error: sizes differ");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nb));
  if (denom < floor) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace oti::ad
