#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "formlink/nd_array.hpp"
#include "formlink/threading.hpp"

namespace formlink {

/// Define-by-run reverse-mode graph. Nodes are created in topological order,
/// so the backward sweep is a single reverse pass over the creation order and
/// visits each node exactly once.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool needs_grad = false;
  };

  int add_leaf(Tensor<T> value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int add_op(Tensor<T> value, std::vector<int> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    for (int p : n.parents) {
      if (nodes_[static_cast<size_t>(p)].needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Tensor<T>& value(int id) { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  /// Gradient buffer, allocated to the value's shape on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty() && n.value.numel() > 0) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  /// Reverse sweep from a scalar root.
  void backward(int root) {
    if (value(root).numel() != 1)
      throw std::invalid_argument("backward: root is not a scalar");
    grad(root).data[0] = T(1);
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.backward && !n.grad.data.empty()) n.backward(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(id); }
  Tensor<T>& grad() const { return graph->grad(id); }
};

namespace ops {

template <typename T>
Var<T> input(Graph<T>& g, Tensor<T> v) {
  return {&g, g.add_leaf(std::move(v), false)};
}

template <typename T>
Var<T> leaf_param(Graph<T>& g, Tensor<T> v) {
  return {&g, g.add_leaf(std::move(v), true)};
}

namespace detail {

template <typename T>
inline void axpy(T* __restrict y, const T* __restrict x, T a, int n) {
  for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

/// Dot product with a fixed 16-lane accumulation pattern: vectorizable, and
/// the reduction order is the same on every call, keeping results
/// bit-deterministic.
template <typename T>
inline T dot(const T* __restrict a, const T* __restrict b, int n) {
  T lane[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16)
    for (int k = 0; k < 16; ++k) lane[k] += a[i + k] * b[i + k];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  for (int k = 8; k >= 1; k /= 2)
    for (int j = 0; j < k; ++j) lane[j] += lane[j + k];
  return lane[0] + tail;
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
Var<T> relu(Var<T> x) {
  Graph<T>& g = *x.graph;
  Tensor<T> out = g.value(x.id);
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    const auto& xv = gr.value(xid);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i)
      if (xv.data[i] > T(0)) gx.data[i] += gy.data[i];
  });
  return {&g, id};
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T alpha) {
  Graph<T>& g = *x.graph;
  Tensor<T> out = g.value(x.id);
  for (auto& v : out.data) v = v > T(0) ? v : alpha * v;
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, alpha](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    const auto& xv = gr.value(xid);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] += xv.data[i] > T(0) ? gy.data[i] : alpha * gy.data[i];
  });
  return {&g, id};
}

template <typename T>
inline T sigmoid_value(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
inline T softplus_value(T z) {
  // log(1 + exp(z)) without overflow
  T m = z > T(0) ? z : T(0);
  return m + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Graph<T>& g = *x.graph;
  Tensor<T> out = g.value(x.id);
  for (auto& v : out.data) v = sigmoid_value(v);
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    const auto& s = gr.value(self);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] += gy.data[i] * s.data[i] * (T(1) - s.data[i]);
  });
  return {&g, id};
}

template <typename T>
Var<T> softplus(Var<T> x) {
  Graph<T>& g = *x.graph;
  Tensor<T> out = g.value(x.id);
  for (auto& v : out.data) v = softplus_value(v);
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    const auto& xv = gr.value(xid);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i)
      gx.data[i] += gy.data[i] * sigmoid_value(xv.data[i]);
  });
  return {&g, id};
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require(g.value(a.id).same_shape(g.value(b.id)), "add: shape mismatch");
  Tensor<T> out = g.value(a.id);
  const auto& bv = g.value(b.id);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  int aid = a.id, bid = b.id;
  int id = g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    for (int p : {aid, bid}) {
      if (!gr.needs_grad(p)) continue;
      auto& gp = gr.grad(p);
      for (size_t i = 0; i < gp.data.size(); ++i) gp.data[i] += gy.data[i];
    }
  });
  return {&g, id};
}

template <typename T>
Var<T> scalar_mul(Var<T> x, T c) {
  Graph<T>& g = *x.graph;
  Tensor<T> out = g.value(x.id);
  for (auto& v : out.data) v *= c;
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, c](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += c * gy.data[i];
  });
  return {&g, id};
}

// ---- structural ----

template <typename T>
Var<T> channel_concat(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "channel_concat: no inputs");
  Graph<T>& g = *parts[0].graph;
  int H = g.value(parts[0].id).dim(1), W = g.value(parts[0].id).dim(2);
  int C = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    const auto& v = g.value(p.id);
    detail::require(v.rank() == 3 && v.dim(1) == H && v.dim(2) == W,
                    "channel_concat: spatial shape mismatch");
    C += v.dim(0);
    ids.push_back(p.id);
  }
  Tensor<T> out({C, H, W});
  size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = g.value(p.id);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.data.size();
  }
  int id = g.add_op(std::move(out), ids, [ids](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    size_t off = 0;
    for (int p : ids) {
      size_t n = gr.value(p).data.size();
      if (gr.needs_grad(p)) {
        auto& gp = gr.grad(p);
        for (size_t i = 0; i < n; ++i) gp.data[i] += gy.data[off + i];
      }
      off += n;
    }
  });
  return {&g, id};
}

template <typename T>
Var<T> channel_slice(Var<T> x, int c0, int c1) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3 && c0 >= 0 && c1 <= v.dim(0) && c0 < c1,
                  "channel_slice: bad range");
  int H = v.dim(1), W = v.dim(2);
  Tensor<T> out({c1 - c0, H, W});
  size_t plane = static_cast<size_t>(H) * W;
  std::copy(v.data.begin() + c0 * plane, v.data.begin() + c1 * plane, out.data.begin());
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, c0, plane](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    size_t off = static_cast<size_t>(c0) * plane;
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[off + i] += gy.data[i];
  });
  return {&g, id};
}

/// Keeps the top-left (h2, w2) spatial region.
template <typename T>
Var<T> crop_spatial(Var<T> x, int h2, int w2) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3 && h2 <= v.dim(1) && w2 <= v.dim(2), "crop_spatial: too large");
  if (h2 == v.dim(1) && w2 == v.dim(2)) return x;
  int C = v.dim(0);
  Tensor<T> out({C, h2, w2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h2; ++y)
      std::copy(v.row(c, y), v.row(c, y) + w2, out.row(c, y));
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, h2, w2](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    int C = gy.dim(0);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < h2; ++y) {
        const T* src = gy.row(c, y);
        T* dst = gx.row(c, y);
        for (int x2 = 0; x2 < w2; ++x2) dst[x2] += src[x2];
      }
  });
  return {&g, id};
}

template <typename T>
Var<T> reshape(Var<T> x, std::vector<int> shape) {
  Graph<T>& g = *x.graph;
  detail::require(Tensor<T>::count(shape) == g.value(x.id).numel(), "reshape: numel mismatch");
  Tensor<T> out(std::move(shape), g.value(x.id).data);
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i];
  });
  return {&g, id};
}

template <typename T>
Var<T> transpose2(Var<T> x) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 2, "transpose2: rank-2 required");
  int M = v.dim(0), N = v.dim(1);
  Tensor<T> out({N, M});
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) out.at(j, i) = v.at(i, j);
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, M, N](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) gx.at(i, j) += gy.at(j, i);
  });
  return {&g, id};
}

// ---- matrix ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  const auto& av = g.value(a.id);
  const auto& bv = g.value(b.id);
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                  "matmul: inner dimension mismatch");
  int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
  Tensor<T> out({M, N});
  parallel_for(M, [&](int i) {
    T* orow = out.data.data() + static_cast<size_t>(i) * N;
    const T* arow = av.data.data() + static_cast<size_t>(i) * K;
    for (int k = 0; k < K; ++k)
      detail::axpy(orow, bv.data.data() + static_cast<size_t>(k) * N, arow[k], N);
  });
  int aid = a.id, bid = b.id;
  int id = g.add_op(std::move(out), {aid, bid}, [aid, bid, M, K, N](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    const auto& av = gr.value(aid);
    const auto& bv = gr.value(bid);
    if (gr.needs_grad(aid)) {
      auto& ga = gr.grad(aid);
      parallel_for(M, [&](int i) {
        const T* gyrow = gy.data.data() + static_cast<size_t>(i) * N;
        T* garow = ga.data.data() + static_cast<size_t>(i) * K;
        for (int k = 0; k < K; ++k)
          garow[k] += detail::dot(gyrow, bv.data.data() + static_cast<size_t>(k) * N, N);
      });
    }
    if (gr.needs_grad(bid)) {
      auto& gb = gr.grad(bid);
      parallel_for(K, [&](int k) {
        T* gbrow = gb.data.data() + static_cast<size_t>(k) * N;
        for (int i = 0; i < M; ++i)
          detail::axpy(gbrow, gy.data.data() + static_cast<size_t>(i) * N,
                       av.data[static_cast<size_t>(i) * K + k], N);
      });
    }
  });
  return {&g, id};
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 2, "softmax_rows: rank-2 required");
  int M = v.dim(0), N = v.dim(1);
  Tensor<T> out({M, N});
  for (int i = 0; i < M; ++i) {
    const T* r = v.data.data() + static_cast<size_t>(i) * N;
    T* o = out.data.data() + static_cast<size_t>(i) * N;
    T mx = r[0];
    for (int j = 1; j < N; ++j) mx = std::max(mx, r[j]);
    T sum = T(0);
    for (int j = 0; j < N; ++j) {
      o[j] = std::exp(r[j] - mx);
      sum += o[j];
    }
    for (int j = 0; j < N; ++j) o[j] /= sum;
  }
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, M, N](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    const auto& s = gr.value(self);
    auto& gx = gr.grad(xid);
    for (int i = 0; i < M; ++i) {
      const T* gr_ = gy.data.data() + static_cast<size_t>(i) * N;
      const T* sr = s.data.data() + static_cast<size_t>(i) * N;
      T* gxr = gx.data.data() + static_cast<size_t>(i) * N;
      T dotv = detail::dot(gr_, sr, N);
      for (int j = 0; j < N; ++j) gxr[j] += sr[j] * (gr_[j] - dotv);
    }
  });
  return {&g, id};
}

/// Softmax across channels at every spatial location of a (C, H, W) map.
template <typename T>
Var<T> softmax_channels(Var<T> x) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3, "softmax_channels: rank-3 required");
  int C = v.dim(0), H = v.dim(1), W = v.dim(2);
  size_t plane = static_cast<size_t>(H) * W;
  Tensor<T> out(v.shape);
  for (size_t p = 0; p < plane; ++p) {
    T mx = v.data[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, v.data[c * plane + p]);
    T sum = T(0);
    for (int c = 0; c < C; ++c) {
      T e = std::exp(v.data[c * plane + p] - mx);
      out.data[c * plane + p] = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) out.data[c * plane + p] /= sum;
  }
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, C, plane](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    const auto& s = gr.value(self);
    auto& gx = gr.grad(xid);
    for (size_t p = 0; p < plane; ++p) {
      T dotv = T(0);
      for (int c = 0; c < C; ++c) dotv += gy.data[c * plane + p] * s.data[c * plane + p];
      for (int c = 0; c < C; ++c)
        gx.data[c * plane + p] += s.data[c * plane + p] * (gy.data[c * plane + p] - dotv);
    }
  });
  return {&g, id};
}

// ---- reductions ----

template <typename T>
Var<T> sum_all(Var<T> x) {
  Graph<T>& g = *x.graph;
  T s = T(0);
  for (T v : g.value(x.id).data) s += v;
  int xid = x.id;
  int id = g.add_op(Tensor<T>({1}, {s}), {xid}, [xid](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    T gy = gr.grad(self).data[0];
    auto& gx = gr.grad(xid);
    for (auto& v : gx.data) v += gy;
  });
  return {&g, id};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  T n = static_cast<T>(x.graph->value(x.id).numel());
  return scalar_mul(sum_all(x), T(1) / n);
}

/// sum(weights ⊙ x) with constant weights; exercises every output component
/// of x in gradient checks.
template <typename T>
Var<T> weighted_sum(Var<T> x, Tensor<T> weights) {
  Graph<T>& g = *x.graph;
  detail::require(g.value(x.id).same_shape(weights), "weighted_sum: shape mismatch");
  T s = T(0);
  const auto& v = g.value(x.id);
  for (size_t i = 0; i < v.data.size(); ++i) s += v.data[i] * weights.data[i];
  auto w = std::make_shared<Tensor<T>>(std::move(weights));
  int xid = x.id;
  int id = g.add_op(Tensor<T>({1}, {s}), {xid}, [xid, w](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    T gy = gr.grad(self).data[0];
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy * w->data[i];
  });
  return {&g, id};
}

}  // namespace ops
}  // namespace formlink
