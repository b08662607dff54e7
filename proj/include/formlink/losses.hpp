#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "formlink/autodiff.hpp"
#include "formlink/chargrid.hpp"
#include "formlink/funsd.hpp"

namespace formlink {

/// Maps between page pixels, grid cells, and field cells.
struct FieldGeometry {
  double cell_px = 1.0;  // page pixels per grid cell
  int grid_h = 0, grid_w = 0;
  int stride = 4;  // grid cells per field cell
  int field_h = 0, field_w = 0;

  double px_to_field(double px) const { return px / (cell_px * stride); }
  double field_to_px(double f) const { return f * cell_px * stride; }
};

inline FieldGeometry make_field_geometry(const CharGrid& grid, int stride) {
  FieldGeometry g;
  g.cell_px = grid.scale;
  g.grid_h = grid.height;
  g.grid_w = grid.width;
  g.stride = stride;
  g.field_h = (grid.height + stride - 1) / stride;
  g.field_w = (grid.width + stride - 1) / stride;
  return g;
}

/// Entity keypoints anchor at the bottom-left corner of the box.
inline void entity_keypoint(const Entity& e, const FieldGeometry& geom, double& fx, double& fy,
                            bool* clamped = nullptr) {
  fx = geom.px_to_field(e.box.x1);
  fy = geom.px_to_field(e.box.y2);
  double mx = geom.field_w - 1e-3, my = geom.field_h - 1e-3;
  double cx = std::clamp(fx, 0.0, mx), cy = std::clamp(fy, 0.0, my);
  if (clamped && (cx != fx || cy != fy)) *clamped = true;
  fx = cx;
  fy = cy;
}

template <typename T>
struct TargetFields {
  Tensor<int> seg_class;  // (H, W): 0 background, 1..4 entity classes
  Tensor<T> seg_key;      // (1, H, W): question-cell binary mask

  // per keypoint class (K, fh, fw)
  Tensor<T> pif_conf, pif_x, pif_y, pif_sigma, pif_mask;
  // per link type (L, fh, fw)
  Tensor<T> paf_conf, paf_x1, paf_y1, paf_x2, paf_y2, paf_mask;

  int n_clamped_keypoints = 0;
};

inline int seg_class_of(Label l) { return static_cast<int>(l) + 1; }

/// Cells inside an entity box carry its class; overlaps resolve to the
/// smaller-area entity.
Tensor<int> encode_seg_mask(const FormDocument& form, const FieldGeometry& geom);

template <typename T>
void encode_pif_targets(const FormDocument& form, const FieldGeometry& geom, double radius,
                        int n_classes, TargetFields<T>& out);

template <typename T>
void encode_paf_targets(const FormDocument& form, const FieldGeometry& geom, double radius,
                        int n_link_types, TargetFields<T>& out);

template <typename T>
TargetFields<T> encode_targets(const FormDocument& form, const FieldGeometry& geom,
                               int n_keypoint_classes, int n_link_types, double radius);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 1e-2;
  double lambda3 = 1e-2;
  double b_min = 1e-3;
};

template <typename T>
struct LossBreakdown {
  T total = 0, seg_ce = 0, seg_key_bce = 0;
  T pif_conf = 0, pif_loc = 0, pif_sigma = 0;
  T paf_conf = 0, paf_loc = 0;
};

namespace ops {

/// Mean per-cell cross-entropy of (C,H,W) logits against an (H,W) class map.
template <typename T>
Var<T> cross_entropy_mean(Var<T> logits, const Tensor<int>& classes) {
  Graph<T>& g = *logits.graph;
  const auto& v = g.value(logits.id);
  detail::require(v.rank() == 3 && classes.rank() == 2 && classes.dim(0) == v.dim(1) &&
                      classes.dim(1) == v.dim(2),
                  "cross_entropy_mean: shape mismatch");
  const int C = v.dim(0);
  const size_t plane = static_cast<size_t>(v.dim(1)) * v.dim(2);
  auto probs = std::make_shared<Tensor<T>>(v.shape);
  auto cls = std::make_shared<Tensor<int>>(classes);
  T total = T(0);
  for (size_t p = 0; p < plane; ++p) {
    T mx = v.data[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, v.data[c * plane + p]);
    T sum = T(0);
    for (int c = 0; c < C; ++c) {
      T e = std::exp(v.data[c * plane + p] - mx);
      probs->data[c * plane + p] = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) probs->data[c * plane + p] /= sum;
    int y = cls->data[p];
    detail::require(y >= 0 && y < C, "cross_entropy_mean: class out of range");
    total += -std::log(std::max(probs->data[static_cast<size_t>(y) * plane + p],
                                std::numeric_limits<T>::min()));
  }
  total /= static_cast<T>(plane);
  int xid = logits.id;
  int id = g.add_op(Tensor<T>({1}, {total}), {xid},
                    [xid, probs, cls, C, plane](Graph<T>& gr, int self) {
                      if (!gr.needs_grad(xid)) return;
                      T gy = gr.grad(self).data[0] / static_cast<T>(plane);
                      auto& gx = gr.grad(xid);
                      for (size_t p = 0; p < plane; ++p) {
                        int y = cls->data[p];
                        for (int c = 0; c < C; ++c)
                          gx.data[c * plane + p] +=
                              gy * (probs->data[c * plane + p] - (c == y ? T(1) : T(0)));
                      }
                    });
  return {&g, id};
}

/// Mean binary cross-entropy with logits over every element.
template <typename T>
Var<T> bce_logits_mean(Var<T> logits, Tensor<T> target) {
  Graph<T>& g = *logits.graph;
  const auto& v = g.value(logits.id);
  detail::require(v.same_shape(target), "bce_logits_mean: shape mismatch");
  const size_t n = v.data.size();
  auto tgt = std::make_shared<Tensor<T>>(std::move(target));
  T total = T(0);
  for (size_t i = 0; i < n; ++i) {
    T z = v.data[i], y = tgt->data[i];
    total += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  total /= static_cast<T>(n);
  int xid = logits.id;
  int id = g.add_op(Tensor<T>({1}, {total}), {xid}, [xid, tgt, n](Graph<T>& gr, int self) {
    if (!gr.needs_grad(xid)) return;
    T gy = gr.grad(self).data[0] / static_cast<T>(n);
    const auto& v = gr.value(xid);
    auto& gx = gr.grad(xid);
    for (size_t i = 0; i < n; ++i)
      gx.data[i] += gy * (sigmoid_value(v.data[i]) - tgt->data[i]);
  });
  return {&g, id};
}

/// Laplace negative log-likelihood |t - mu| / b + log(2 b) with
/// b = max(softplus(b_raw), b_min), averaged over the active mask.
template <typename T>
Var<T> laplace_masked(Var<T> mu, Var<T> b_raw, Tensor<T> target, Tensor<T> mask, T b_min) {
  Graph<T>& g = *mu.graph;
  const auto& mv = g.value(mu.id);
  const auto& bv = g.value(b_raw.id);
  detail::require(mv.same_shape(bv) && mv.same_shape(target) && mv.same_shape(mask),
                  "laplace_masked: shape mismatch");
  auto tgt = std::make_shared<Tensor<T>>(std::move(target));
  auto msk = std::make_shared<Tensor<T>>(std::move(mask));
  T active = T(0);
  for (T m : msk->data) active += m;
  const T norm = std::max(active, T(1));
  T total = T(0);
  for (size_t i = 0; i < mv.data.size(); ++i) {
    if (msk->data[i] == T(0)) continue;
    T b = std::max(softplus_value(bv.data[i]), b_min);
    total += std::abs(tgt->data[i] - mv.data[i]) / b + std::log(T(2) * b);
  }
  total /= norm;
  int mid = mu.id, bid = b_raw.id;
  int id = g.add_op(
      Tensor<T>({1}, {total}), {mid, bid},
      [mid, bid, tgt, msk, b_min, norm](Graph<T>& gr, int self) {
        T gy = gr.grad(self).data[0] / norm;
        const auto& mv = gr.value(mid);
        const auto& bv = gr.value(bid);
        const bool need_mu = gr.needs_grad(mid), need_b = gr.needs_grad(bid);
        for (size_t i = 0; i < mv.data.size(); ++i) {
          if (msk->data[i] == T(0)) continue;
          T sp = softplus_value(bv.data[i]);
          T b = std::max(sp, b_min);
          T r = tgt->data[i] - mv.data[i];
          T sgn = r > T(0) ? T(1) : (r < T(0) ? T(-1) : T(0));
          if (need_mu) gr.grad(mid).data[i] += gy * (-sgn / b);
          if (need_b && sp > b_min)
            gr.grad(bid).data[i] +=
                gy * (T(1) / b - std::abs(r) / (b * b)) * sigmoid_value(bv.data[i]);
        }
      });
  return {&g, id};
}

/// Mean absolute error over the active mask.
template <typename T>
Var<T> l1_masked(Var<T> pred, Tensor<T> target, Tensor<T> mask) {
  Graph<T>& g = *pred.graph;
  const auto& pv = g.value(pred.id);
  detail::require(pv.same_shape(target) && pv.same_shape(mask), "l1_masked: shape mismatch");
  auto tgt = std::make_shared<Tensor<T>>(std::move(target));
  auto msk = std::make_shared<Tensor<T>>(std::move(mask));
  T active = T(0);
  for (T m : msk->data) active += m;
  const T norm = std::max(active, T(1));
  T total = T(0);
  for (size_t i = 0; i < pv.data.size(); ++i)
    if (msk->data[i] != T(0)) total += std::abs(tgt->data[i] - pv.data[i]);
  total /= norm;
  int pid = pred.id;
  int id = g.add_op(Tensor<T>({1}, {total}), {pid},
                    [pid, tgt, msk, norm](Graph<T>& gr, int self) {
                      if (!gr.needs_grad(pid)) return;
                      T gy = gr.grad(self).data[0] / norm;
                      const auto& pv = gr.value(pid);
                      auto& gx = gr.grad(pid);
                      for (size_t i = 0; i < pv.data.size(); ++i) {
                        if (msk->data[i] == T(0)) continue;
                        T r = tgt->data[i] - pv.data[i];
                        gx.data[i] += gy * (r > T(0) ? T(-1) : (r < T(0) ? T(1) : T(0)));
                      }
                    });
  return {&g, id};
}

}  // namespace ops

/// Eq-style three-term objective. `pif` is (K*5, fh, fw) with channels
/// (c, x, y, b, sigma) per class; `paf` is (L*7, fh, fw) with channels
/// (c, x1, y1, b1, x2, y2, b2) per link type.
template <typename T>
Var<T> total_loss(Var<T> seg_key, Var<T> seg_full, Var<T> pif, Var<T> paf,
                  const TargetFields<T>& tgt, const LossWeights& w,
                  LossBreakdown<T>* breakdown = nullptr);

extern template Var<float> total_loss<float>(Var<float>, Var<float>, Var<float>, Var<float>,
                                             const TargetFields<float>&, const LossWeights&,
                                             LossBreakdown<float>*);
extern template Var<double> total_loss<double>(Var<double>, Var<double>, Var<double>, Var<double>,
                                               const TargetFields<double>&, const LossWeights&,
                                               LossBreakdown<double>*);

extern template void encode_pif_targets<float>(const FormDocument&, const FieldGeometry&, double,
                                               int, TargetFields<float>&);
extern template void encode_pif_targets<double>(const FormDocument&, const FieldGeometry&, double,
                                                int, TargetFields<double>&);
extern template void encode_paf_targets<float>(const FormDocument&, const FieldGeometry&, double,
                                               int, TargetFields<float>&);
extern template void encode_paf_targets<double>(const FormDocument&, const FieldGeometry&, double,
                                                int, TargetFields<double>&);
extern template TargetFields<float> encode_targets<float>(const FormDocument&,
                                                          const FieldGeometry&, int, int, double);
extern template TargetFields<double> encode_targets<double>(const FormDocument&,
                                                            const FieldGeometry&, int, int,
                                                            double);

}  // namespace formlink
