#pragma once

#include <memory>

#include "formlink/autodiff.hpp"

namespace formlink {
namespace ops {

/// Zero-pads a (C,H,W) map at the bottom/right to (C,h2,w2).
template <typename T>
Var<T> pad_spatial(Var<T> x, int h2, int w2) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3 && h2 >= v.dim(1) && w2 >= v.dim(2), "pad_spatial: shrinking");
  if (h2 == v.dim(1) && w2 == v.dim(2)) return x;
  int C = v.dim(0), H = v.dim(1), W = v.dim(2);
  Tensor<T> out({C, h2, w2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) std::copy(v.row(c, y), v.row(c, y) + W, out.row(c, y));
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, H, W](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    int C = gx.dim(0);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        const T* src = gy.row(c, y);
        T* dst = gx.row(c, y);
        for (int x2 = 0; x2 < W; ++x2) dst[x2] += src[x2];
      }
  });
  return {&g, id};
}

namespace detail {

/// t[y][x] = max over rows y..H-1 of f[.][x] (downward suffix max);
/// l[y][x] = max over cols x..W-1 of f[y][.] (rightward suffix max);
/// out = t + l. argmax ties resolve to the position nearest the query cell.
template <typename T>
void corner_pool_forward(const Tensor<T>& in, Tensor<T>& out, std::vector<int>& arg_down,
                         std::vector<int>& arg_right) {
  const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
  const size_t plane = static_cast<size_t>(H) * W;
  parallel_for(C, [&](int c) {
    const T* f = in.data.data() + c * plane;
    T* o = out.data.data() + c * plane;
    int* ad = arg_down.data() + c * plane;
    int* ar = arg_right.data() + c * plane;
    std::vector<T> tmax(static_cast<size_t>(W));
    // downward suffix max
    for (int x = 0; x < W; ++x) {
      tmax[static_cast<size_t>(x)] = f[(H - 1) * W + x];
      ad[(H - 1) * W + x] = H - 1;
    }
    for (int y = H - 1; y >= 0; --y)
      for (int x = 0; x < W; ++x) {
        if (y < H - 1) {
          if (f[y * W + x] >= tmax[static_cast<size_t>(x)]) {
            tmax[static_cast<size_t>(x)] = f[y * W + x];
            ad[y * W + x] = y;
          } else {
            ad[y * W + x] = ad[(y + 1) * W + x];
          }
        }
        o[y * W + x] = tmax[static_cast<size_t>(x)];
      }
    // rightward suffix max, added on top
    for (int y = 0; y < H; ++y) {
      T lmax = f[y * W + (W - 1)];
      int arg = W - 1;
      for (int x = W - 1; x >= 0; --x) {
        if (f[y * W + x] >= lmax) {
          lmax = f[y * W + x];
          arg = x;
        }
        o[y * W + x] += lmax;
        ar[y * W + x] = arg;
      }
    }
  });
}

}  // namespace detail

/// Corner pooling: propagates maxima upward/leftward so that every location
/// sees the strongest response below it and to its right. O(H*W) per channel.
template <typename T>
Var<T> corner_pool(Var<T> x) {
  Graph<T>& g = *x.graph;
  const auto& v = g.value(x.id);
  detail::require(v.rank() == 3, "corner_pool: rank-3 required");
  const int C = v.dim(0), H = v.dim(1), W = v.dim(2);
  Tensor<T> out(v.shape);
  auto arg_down = std::make_shared<std::vector<int>>(v.data.size());
  auto arg_right = std::make_shared<std::vector<int>>(v.data.size());
  detail::corner_pool_forward(v, out, *arg_down, *arg_right);
  int xid = x.id;
  int id = g.add_op(std::move(out), {xid}, [xid, arg_down, arg_right, C, H, W](Graph<T>& gr,
                                                                               int self) {
    if (!gr.needs_grad(xid)) return;
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xid);
    const size_t plane = static_cast<size_t>(H) * W;
    for (int c = 0; c < C; ++c) {
      const T* gyp = gy.data.data() + c * plane;
      T* gxp = gx.data.data() + c * plane;
      const int* ad = arg_down->data() + c * plane;
      const int* ar = arg_right->data() + c * plane;
      for (int y = 0; y < H; ++y)
        for (int x2 = 0; x2 < W; ++x2) {
          T gv = gyp[y * W + x2];
          gxp[ad[y * W + x2] * W + x2] += gv;
          gxp[y * W + ar[y * W + x2]] += gv;
        }
    }
  });
  return {&g, id};
}

/// Two coordinate channels, each linearly normalized to [-1, 1]; a dimension
/// of extent 1 maps to 0.
template <typename T>
Tensor<T> coordconv_channels(int height, int width) {
  Tensor<T> out({2, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      out.at(0, y, x) = width > 1 ? T(2) * x / (width - 1) - T(1) : T(0);
      out.at(1, y, x) = height > 1 ? T(2) * y / (height - 1) - T(1) : T(0);
    }
  return out;
}

}  // namespace ops
}  // namespace formlink
