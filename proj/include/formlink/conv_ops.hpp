#pragma once

#include <memory>

#include "formlink/autodiff.hpp"

namespace formlink {
namespace ops {

namespace detail {

/// Below this spatial width the row-by-row path is dominated by loop overhead
/// and the im2col path wins.
constexpr int kIm2colMaxWidth = 64;

template <typename T>
std::vector<T>& conv_scratch() {
  thread_local std::vector<T> scratch;
  return scratch;
}

/// patches[(c*k+ky)*k+kx][y*W+x] = in[c][y-pad+ky][x-pad+kx], zero outside.
/// Stride-1, same-size only.
template <typename T>
void im2col(const Tensor<T>& in, int k, int pad, std::vector<T>& patches) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  patches.assign(static_cast<size_t>(C) * k * k * plane, T(0));
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = patches.data() + ((static_cast<size_t>(c) * k + ky) * k + kx) * plane;
        int xlo = std::max(0, pad - kx), xhi = std::min(W, W + pad - kx);
        for (int y = 0; y < H; ++y) {
          int iy = y - pad + ky;
          if (iy < 0 || iy >= H) continue;
          const T* src = in.row(c, iy) + (xlo - pad + kx);
          std::copy(src, src + (xhi - xlo), dst + static_cast<size_t>(y) * W + xlo);
        }
      }
}

/// Transposed scatter of im2col: adds patch rows back into the image.
template <typename T>
void col2im_add(const std::vector<T>& patches, int k, int pad, Tensor<T>& out) {
  const int C = out.dim(0), H = out.dim(1), W = out.dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = patches.data() + ((static_cast<size_t>(c) * k + ky) * k + kx) * plane;
        int xlo = std::max(0, pad - kx), xhi = std::min(W, W + pad - kx);
        for (int y = 0; y < H; ++y) {
          int iy = y - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst = out.row(c, iy) + (xlo - pad + kx);
          const T* s = src + static_cast<size_t>(y) * W + xlo;
          for (int i = 0; i < xhi - xlo; ++i) dst[i] += s[i];
        }
      }
}

/// out[o,y,x] += sum_{c,ky,kx} w[o,c,ky,kx] * in[c, y*s - p + ky, x*s - p + kx]
/// Per-output accumulation order is fixed (c, ky, kx ascending), so results do
/// not depend on how the outer loop is scheduled across threads.
template <typename T>
void conv_forward(Tensor<T>& out, const Tensor<T>& in, const Tensor<T>& w, int stride, int pad) {
  const int O = w.dim(0), C = w.dim(1), k = w.dim(2);
  const int H = in.dim(1), W = in.dim(2);
  const int Ho = out.dim(1), Wo = out.dim(2);
  if (stride == 1 && k == 1) {
    const size_t plane = static_cast<size_t>(H) * W;
    parallel_for(O, [&](int o) {
      T* orow = out.data.data() + static_cast<size_t>(o) * plane;
      for (int c = 0; c < C; ++c)
        axpy(orow, in.data.data() + static_cast<size_t>(c) * plane,
             w.data[static_cast<size_t>(o) * C + c], static_cast<int>(plane));
    });
    return;
  }
  if (stride == 1 && W < kIm2colMaxWidth) {
    auto& patches = conv_scratch<T>();
    im2col(in, k, pad, patches);
    const size_t plane = static_cast<size_t>(Ho) * Wo;
    const int K = C * k * k;
    parallel_for(O, [&](int o) {
      T* orow = out.data.data() + static_cast<size_t>(o) * plane;
      const T* wrow = w.data.data() + static_cast<size_t>(o) * K;
      for (int kk = 0; kk < K; ++kk)
        axpy(orow, patches.data() + static_cast<size_t>(kk) * plane, wrow[kk],
             static_cast<int>(plane));
    });
    return;
  }
  if (stride == 1) {
    parallel_for(O, [&](int o) {
      const T* wbase = w.data.data() + static_cast<size_t>(o) * C * k * k;
      for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            T wv = wbase[(c * k + ky) * k + kx];
            if (wv == T(0)) continue;
            int xlo = std::max(0, pad - kx);
            int xhi = std::min(Wo, W + pad - kx);
            if (xhi <= xlo) continue;
            for (int y = 0; y < Ho; ++y) {
              int iy = y - pad + ky;
              if (iy < 0 || iy >= H) continue;
              axpy(out.row(o, y) + xlo, in.row(c, iy) + (xlo - pad + kx), wv, xhi - xlo);
            }
          }
    });
  } else {
    parallel_for(O, [&](int o) {
      const T* wbase = w.data.data() + static_cast<size_t>(o) * C * k * k;
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
          T acc = T(0);
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < k; ++ky) {
              int iy = y * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < k; ++kx) {
                int ix = x * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += wbase[(c * k + ky) * k + kx] * in.at(c, iy, ix);
              }
            }
          out.at(o, y, x) += acc;
        }
    });
  }
}

template <typename T>
void conv_backward_input(Tensor<T>& gin, const Tensor<T>& gout, const Tensor<T>& w, int stride,
                         int pad) {
  const int O = w.dim(0), C = w.dim(1), k = w.dim(2);
  const int H = gin.dim(1), W = gin.dim(2);
  const int Ho = gout.dim(1), Wo = gout.dim(2);
  if (stride == 1 && k == 1) {
    const size_t plane = static_cast<size_t>(H) * W;
    parallel_for(C, [&](int c) {
      T* grow = gin.data.data() + static_cast<size_t>(c) * plane;
      for (int o = 0; o < O; ++o)
        axpy(grow, gout.data.data() + static_cast<size_t>(o) * plane,
             w.data[static_cast<size_t>(o) * C + c], static_cast<int>(plane));
    });
    return;
  }
  if (stride == 1 && W < kIm2colMaxWidth) {
    const size_t plane = static_cast<size_t>(Ho) * Wo;
    const int K = C * k * k;
    auto& gpatches = conv_scratch<T>();
    gpatches.assign(static_cast<size_t>(K) * plane, T(0));
    parallel_for(K, [&](int kk) {
      T* prow = gpatches.data() + static_cast<size_t>(kk) * plane;
      for (int o = 0; o < O; ++o)
        axpy(prow, gout.data.data() + static_cast<size_t>(o) * plane,
             w.data[static_cast<size_t>(o) * K + kk], static_cast<int>(plane));
    });
    col2im_add(gpatches, k, pad, gin);
    return;
  }
  if (stride == 1) {
    parallel_for(C, [&](int c) {
      for (int o = 0; o < O; ++o) {
        const T* wbase = w.data.data() + (static_cast<size_t>(o) * C + c) * k * k;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            T wv = wbase[ky * k + kx];
            if (wv == T(0)) continue;
            int xlo = std::max(0, pad - kx);
            int xhi = std::min(Wo, W + pad - kx);
            if (xhi <= xlo) continue;
            for (int y = 0; y < Ho; ++y) {
              int iy = y - pad + ky;
              if (iy < 0 || iy >= H) continue;
              axpy(gin.row(c, iy) + (xlo - pad + kx), gout.row(o, y) + xlo, wv, xhi - xlo);
            }
          }
      }
    });
  } else {
    parallel_for(C, [&](int c) {
      for (int o = 0; o < O; ++o) {
        const T* wbase = w.data.data() + (static_cast<size_t>(o) * C + c) * k * k;
        for (int y = 0; y < Ho; ++y)
          for (int ky = 0; ky < k; ++ky) {
            int iy = y * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int x = 0; x < Wo; ++x)
              for (int kx = 0; kx < k; ++kx) {
                int ix = x * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                gin.at(c, iy, ix) += wbase[ky * k + kx] * gout.at(o, y, x);
              }
          }
      }
    });
  }
}

template <typename T>
void conv_backward_weight(Tensor<T>& gw, const Tensor<T>& gout, const Tensor<T>& in, int stride,
                          int pad) {
  const int O = gw.dim(0), C = gw.dim(1), k = gw.dim(2);
  const int H = in.dim(1), W = in.dim(2);
  const int Ho = gout.dim(1), Wo = gout.dim(2);
  if (stride == 1 && k == 1) {
    const size_t plane = static_cast<size_t>(H) * W;
    parallel_for(O, [&](int o) {
      const T* grow = gout.data.data() + static_cast<size_t>(o) * plane;
      for (int c = 0; c < C; ++c)
        gw.data[static_cast<size_t>(o) * C + c] +=
            dot(grow, in.data.data() + static_cast<size_t>(c) * plane, static_cast<int>(plane));
    });
    return;
  }
  if (stride == 1 && W < kIm2colMaxWidth) {
    const size_t plane = static_cast<size_t>(Ho) * Wo;
    const int K = C * k * k;
    auto& patches = conv_scratch<T>();
    im2col(in, k, pad, patches);
    parallel_for(O, [&](int o) {
      const T* grow = gout.data.data() + static_cast<size_t>(o) * plane;
      T* wrow = gw.data.data() + static_cast<size_t>(o) * K;
      for (int kk = 0; kk < K; ++kk)
        wrow[kk] += dot(grow, patches.data() + static_cast<size_t>(kk) * plane,
                        static_cast<int>(plane));
    });
    return;
  }
  parallel_for(O * C, [&](int oc) {
    int o = oc / C, c = oc % C;
    T* gwbase = gw.data.data() + (static_cast<size_t>(o) * C + c) * k * k;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T acc = T(0);
        if (stride == 1) {
          int xlo = std::max(0, pad - kx);
          int xhi = std::min(Wo, W + pad - kx);
          for (int y = 0; y < Ho; ++y) {
            int iy = y - pad + ky;
            if (iy < 0 || iy >= H || xhi <= xlo) continue;
            acc += dot(gout.row(o, y) + xlo, in.row(c, iy) + (xlo - pad + kx), xhi - xlo);
          }
        } else {
          for (int y = 0; y < Ho; ++y) {
            int iy = y * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int x = 0; x < Wo; ++x) {
              int ix = x * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              acc += gout.at(o, y, x) * in.at(c, iy, ix);
            }
          }
        }
        gwbase[ky * k + kx] += acc;
      }
  });
}

}  // namespace detail

/// Cross-correlation of a (C,H,W) input with (O,C,k,k) kernels. Odd k only;
/// pad (k-1)/2 at stride 1 preserves the spatial size.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int stride = 1, int pad = -1) {
  Graph<T>& g = *x.graph;
  const auto& xv = g.value(x.id);
  const auto& wv = g.value(w.id);
  detail::require(xv.rank() == 3 && wv.rank() == 4, "conv2d: ranks must be 3 and 4");
  detail::require(wv.dim(1) == xv.dim(0), "conv2d: channel mismatch");
  detail::require(wv.dim(2) == wv.dim(3) && wv.dim(2) % 2 == 1, "conv2d: kernel must be odd square");
  detail::require(stride >= 1, "conv2d: bad stride");
  const int k = wv.dim(2);
  if (pad < 0) pad = (k - 1) / 2;
  const int H = xv.dim(1), W = xv.dim(2);
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  detail::require(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");
  Tensor<T> out({wv.dim(0), Ho, Wo});
  detail::conv_forward(out, xv, wv, stride, pad);
  int xid = x.id, wid = w.id;
  int id = g.add_op(std::move(out), {xid, wid}, [xid, wid, stride, pad](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    if (gr.needs_grad(xid))
      detail::conv_backward_input(gr.grad(xid), gy, gr.value(wid), stride, pad);
    if (gr.needs_grad(wid))
      detail::conv_backward_weight(gr.grad(wid), gy, gr.value(xid), stride, pad);
  });
  return {&g, id};
}

/// Adds a per-channel bias to a (C,H,W) map.
template <typename T>
Var<T> bias_add(Var<T> x, Var<T> b) {
  Graph<T>& g = *x.graph;
  const auto& xv = g.value(x.id);
  const auto& bv = g.value(b.id);
  detail::require(xv.rank() == 3 && bv.rank() == 1 && bv.dim(0) == xv.dim(0),
                  "bias_add: shape mismatch");
  int C = xv.dim(0);
  size_t plane = static_cast<size_t>(xv.dim(1)) * xv.dim(2);
  Tensor<T> out = xv;
  for (int c = 0; c < C; ++c) {
    T bias = bv.data[static_cast<size_t>(c)];
    T* p = out.data.data() + c * plane;
    for (size_t i = 0; i < plane; ++i) p[i] += bias;
  }
  int xid = x.id, bid = b.id;
  int id = g.add_op(std::move(out), {xid, bid}, [xid, bid, C, plane](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    if (gr.needs_grad(xid)) {
      auto& gx = gr.grad(xid);
      for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gy.data[i];
    }
    if (gr.needs_grad(bid)) {
      auto& gb = gr.grad(bid);
      for (int c = 0; c < C; ++c) {
        T s = T(0);
        const T* p = gy.data.data() + c * plane;
        for (size_t i = 0; i < plane; ++i) s += p[i];
        gb.data[static_cast<size_t>(c)] += s;
      }
    }
  });
  return {&g, id};
}

/// 2x2 max pooling with stride 2. Ties resolve to the first maximum in
/// row-major window order, which is where the gradient is routed.
template <typename T>
Var<T> max_pool2(Var<T> x) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3 && v.dim(1) % 2 == 0 && v.dim(2) % 2 == 0,
                  "max_pool2: H and W must be even");
  int C = v.dim(0), H = v.dim(1), W = v.dim(2);
  int Ho = H / 2, Wo = W / 2;
  Tensor<T> out({C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(C) * Ho * Wo);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int x2 = 0; x2 < Wo; ++x2) {
        T best = v.at(c, 2 * y, 2 * x2);
        int besti = (2 * y) * W + 2 * x2;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            T cand = v.at(c, 2 * y + dy, 2 * x2 + dx);
            if (cand > best) {
              best = cand;
              besti = (2 * y + dy) * W + (2 * x2 + dx);
            }
          }
        out.at(c, y, x2) = best;
        (*argmax)[(static_cast<size_t>(c) * Ho + y) * Wo + x2] = besti;
      }
  int xid = x.id;
  size_t plane = static_cast<size_t>(H) * W;
  int id = g.add_op(std::move(out), {xid}, [xid, argmax, plane](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    int C = gy.dim(0);
    size_t oplane = static_cast<size_t>(gy.dim(1)) * gy.dim(2);
    for (int c = 0; c < C; ++c)
      for (size_t i = 0; i < oplane; ++i)
        gx.data[c * plane + (*argmax)[c * oplane + i]] += gy.data[c * oplane + i];
  });
  return {&g, id};
}

/// conv2d + per-channel bias + optional relu as one graph node. Backward
/// masks the incoming gradient in place (it is not read again afterwards),
/// then runs the plain conv backward rules.
template <typename T>
Var<T> conv_bias_act(Var<T> x, Var<T> w, Var<T> b, bool with_relu) {
  Graph<T>& g = *x.graph;
  const auto& xv = g.value(x.id);
  const auto& wv = g.value(w.id);
  const auto& bv = g.value(b.id);
  detail::require(xv.rank() == 3 && wv.rank() == 4 && bv.rank() == 1,
                  "conv_bias_act: bad ranks");
  detail::require(wv.dim(1) == xv.dim(0) && bv.dim(0) == wv.dim(0),
                  "conv_bias_act: channel mismatch");
  detail::require(wv.dim(2) == wv.dim(3) && wv.dim(2) % 2 == 1,
                  "conv_bias_act: kernel must be odd square");
  const int k = wv.dim(2);
  const int pad = (k - 1) / 2;
  const int O = wv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor<T> out({O, H, W});
  detail::conv_forward(out, xv, wv, 1, pad);
  const size_t plane = static_cast<size_t>(H) * W;
  parallel_for(O, [&](int o) {
    T bias = bv.data[static_cast<size_t>(o)];
    T* p = out.data.data() + o * plane;
    if (with_relu)
      for (size_t i = 0; i < plane; ++i) p[i] = std::max(p[i] + bias, T(0));
    else
      for (size_t i = 0; i < plane; ++i) p[i] += bias;
  });
  int xid = x.id, wid = w.id, bid = b.id;
  int id = g.add_op(
      std::move(out), {xid, wid, bid},
      [xid, wid, bid, pad, with_relu, O, plane](Graph<T>& gr, int self) {
        auto& gy = gr.grad(self);
        if (with_relu) {
          const auto& y = gr.value(self);
          for (size_t i = 0; i < gy.data.size(); ++i)
            if (y.data[i] <= T(0)) gy.data[i] = T(0);
        }
        if (gr.needs_grad(bid)) {
          auto& gb = gr.grad(bid);
          for (int o = 0; o < O; ++o) {
            const T* p = gy.data.data() + o * plane;
            T s = T(0);
            for (size_t i = 0; i < plane; ++i) s += p[i];
            gb.data[static_cast<size_t>(o)] += s;
          }
        }
        if (gr.needs_grad(xid))
          detail::conv_backward_input(gr.grad(xid), gy, gr.value(wid), 1, pad);
        if (gr.needs_grad(wid))
          detail::conv_backward_weight(gr.grad(wid), gy, gr.value(xid), 1, pad);
      });
  return {&g, id};
}

/// relu(a + b) as one node.
template <typename T>
Var<T> add_relu(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.graph;
  detail::require(g.value(a.id).same_shape(g.value(b.id)), "add_relu: shape mismatch");
  Tensor<T> out = g.value(a.id);
  const auto& bv = g.value(b.id);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = std::max(out.data[i] + bv.data[i], T(0));
  int aid = a.id, bid = b.id;
  int id = g.add_op(std::move(out), {aid, bid}, [aid, bid](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    const auto& y = gr.value(self);
    for (int p : {aid, bid}) {
      if (!gr.needs_grad(p)) continue;
      auto& gp = gr.grad(p);
      for (size_t i = 0; i < gp.data.size(); ++i)
        if (y.data[i] > T(0)) gp.data[i] += gy.data[i];
    }
  });
  return {&g, id};
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Var<T> nearest_upsample2(Var<T> x) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3, "nearest_upsample2: rank-3 required");
  int C = v.dim(0), H = v.dim(1), W = v.dim(2);
  Tensor<T> out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) {
      const T* src = v.row(c, y);
      T* d0 = out.row(c, 2 * y);
      T* d1 = out.row(c, 2 * y + 1);
      for (int x2 = 0; x2 < W; ++x2) {
        d0[2 * x2] = d0[2 * x2 + 1] = src[x2];
        d1[2 * x2] = d1[2 * x2 + 1] = src[x2];
      }
    }
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    int C = gx.dim(0), H = gx.dim(1), W = gx.dim(2);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const T* s0 = gy.row(c, 2 * y);
        const T* s1 = gy.row(c, 2 * y + 1);
        T* dst = gx.row(c, y);
        for (int x2 = 0; x2 < W; ++x2)
          dst[x2] += s0[2 * x2] + s0[2 * x2 + 1] + s1[2 * x2] + s1[2 * x2 + 1];
      }
  });
  return {&g, id};
}

}  // namespace ops
}  // namespace formlink
