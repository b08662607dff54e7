#include "formlink/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace formlink {

namespace {

struct CellRect {
  int c0, c1, r0, r1;  // half-open cell ranges
};

CellRect box_cells(const Box& b, double cell_px, int grid_h, int grid_w) {
  CellRect r;
  r.c0 = std::max(0, static_cast<int>(std::floor(b.x1 / cell_px)));
  r.c1 = std::min(grid_w, static_cast<int>(std::ceil(b.x2 / cell_px)));
  r.r0 = std::max(0, static_cast<int>(std::floor(b.y1 / cell_px)));
  r.r1 = std::min(grid_h, static_cast<int>(std::ceil(b.y2 / cell_px)));
  return r;
}

}  // namespace

Tensor<int> encode_seg_mask(const FormDocument& form, const FieldGeometry& geom) {
  Tensor<int> mask({geom.grid_h, geom.grid_w});
  std::vector<int> order(form.entities.size());
  std::iota(order.begin(), order.end(), 0);
  // paint large entities first so smaller ones end up on top
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return form.entities[static_cast<size_t>(a)].box.area() >
           form.entities[static_cast<size_t>(b)].box.area();
  });
  for (int i : order) {
    const Entity& e = form.entities[static_cast<size_t>(i)];
    if (e.box.width() <= 0 || e.box.height() <= 0) continue;
    CellRect r = box_cells(e.box, geom.cell_px, geom.grid_h, geom.grid_w);
    int cls = seg_class_of(e.label);
    for (int y = r.r0; y < r.r1; ++y)
      for (int x = r.c0; x < r.c1; ++x) mask.at(y, x) = cls;
  }
  return mask;
}

template <typename T>
void encode_pif_targets(const FormDocument& form, const FieldGeometry& geom, double radius,
                        int n_classes, TargetFields<T>& out) {
  const int fh = geom.field_h, fw = geom.field_w;
  out.pif_conf = Tensor<T>({n_classes, fh, fw});
  out.pif_x = Tensor<T>({n_classes, fh, fw});
  out.pif_y = Tensor<T>({n_classes, fh, fw});
  out.pif_sigma = Tensor<T>({n_classes, fh, fw});
  out.pif_mask = Tensor<T>({n_classes, fh, fw});
  // nearest keypoint wins when radii overlap within a class
  Tensor<double> best({n_classes, fh, fw});
  best.fill(1e30);

  for (const auto& e : form.entities) {
    int k = static_cast<int>(e.label);
    if (k >= n_classes) continue;
    bool clamped = false;
    double fx, fy;
    entity_keypoint(e, geom, fx, fy, &clamped);
    if (clamped) ++out.n_clamped_keypoints;
    double sigma = std::max(e.box.height() / (geom.cell_px * geom.stride), 1e-3);
    int cy0 = std::max(0, static_cast<int>(std::floor(fy - radius - 1)));
    int cy1 = std::min(fh - 1, static_cast<int>(std::ceil(fy + radius + 1)));
    int cx0 = std::max(0, static_cast<int>(std::floor(fx - radius - 1)));
    int cx1 = std::min(fw - 1, static_cast<int>(std::ceil(fx + radius + 1)));
    for (int cy = cy0; cy <= cy1; ++cy)
      for (int cx = cx0; cx <= cx1; ++cx) {
        double dx = fx - (cx + 0.5), dy = fy - (cy + 0.5);
        double d = std::sqrt(dx * dx + dy * dy);
        if (d > radius) continue;
        if (d >= best.at(k, cy, cx)) continue;
        best.at(k, cy, cx) = d;
        out.pif_conf.at(k, cy, cx) = T(1);
        out.pif_x.at(k, cy, cx) = static_cast<T>(dx);
        out.pif_y.at(k, cy, cx) = static_cast<T>(dy);
        out.pif_sigma.at(k, cy, cx) = static_cast<T>(sigma);
        out.pif_mask.at(k, cy, cx) = T(1);
      }
  }
}

template <typename T>
void encode_paf_targets(const FormDocument& form, const FieldGeometry& geom, double radius,
                        int n_link_types, TargetFields<T>& out) {
  const int fh = geom.field_h, fw = geom.field_w;
  out.paf_conf = Tensor<T>({n_link_types, fh, fw});
  out.paf_x1 = Tensor<T>({n_link_types, fh, fw});
  out.paf_y1 = Tensor<T>({n_link_types, fh, fw});
  out.paf_x2 = Tensor<T>({n_link_types, fh, fw});
  out.paf_y2 = Tensor<T>({n_link_types, fh, fw});
  out.paf_mask = Tensor<T>({n_link_types, fh, fw});
  Tensor<double> best({n_link_types, fh, fw});
  best.fill(1e30);

  const int l = 0;  // single link type: question -> answer
  if (n_link_types < 1) return;
  for (auto [qid, aid] : form.links) {
    const Entity* q = form.find(qid);
    const Entity* a = form.find(aid);
    if (!q || !a) continue;
    double qx, qy, ax, ay;
    entity_keypoint(*q, geom, qx, qy);
    entity_keypoint(*a, geom, ax, ay);
    for (auto [ex, ey] : {std::pair<double, double>{qx, qy}, {ax, ay}}) {
      int cy0 = std::max(0, static_cast<int>(std::floor(ey - radius - 1)));
      int cy1 = std::min(fh - 1, static_cast<int>(std::ceil(ey + radius + 1)));
      int cx0 = std::max(0, static_cast<int>(std::floor(ex - radius - 1)));
      int cx1 = std::min(fw - 1, static_cast<int>(std::ceil(ex + radius + 1)));
      for (int cy = cy0; cy <= cy1; ++cy)
        for (int cx = cx0; cx <= cx1; ++cx) {
          double ccx = cx + 0.5, ccy = cy + 0.5;
          double de = std::hypot(ex - ccx, ey - ccy);
          if (de > radius) continue;
          // nearest endpoint of this link decides conflicts between links
          double dlink = std::min(std::hypot(qx - ccx, qy - ccy), std::hypot(ax - ccx, ay - ccy));
          if (dlink >= best.at(l, cy, cx)) continue;
          best.at(l, cy, cx) = dlink;
          out.paf_conf.at(l, cy, cx) = T(1);
          out.paf_x1.at(l, cy, cx) = static_cast<T>(qx - ccx);
          out.paf_y1.at(l, cy, cx) = static_cast<T>(qy - ccy);
          out.paf_x2.at(l, cy, cx) = static_cast<T>(ax - ccx);
          out.paf_y2.at(l, cy, cx) = static_cast<T>(ay - ccy);
          out.paf_mask.at(l, cy, cx) = T(1);
        }
    }
  }
}

template <typename T>
TargetFields<T> encode_targets(const FormDocument& form, const FieldGeometry& geom,
                               int n_keypoint_classes, int n_link_types, double radius) {
  TargetFields<T> out;
  out.seg_class = encode_seg_mask(form, geom);
  out.seg_key = Tensor<T>({1, geom.grid_h, geom.grid_w});
  const int question_class = seg_class_of(Label::question);
  for (int64_t i = 0; i < out.seg_class.numel(); ++i)
    if (out.seg_class.data[static_cast<size_t>(i)] == question_class)
      out.seg_key.data[static_cast<size_t>(i)] = T(1);
  encode_pif_targets(form, geom, radius, n_keypoint_classes, out);
  encode_paf_targets(form, geom, radius, n_link_types, out);
  return out;
}

namespace {

template <typename T>
T scalar_value(Var<T> v) {
  return v.value().data[0];
}

template <typename T>
void require_finite(T v, const char* term) {
  if (!std::isfinite(static_cast<double>(v)))
    throw std::runtime_error(std::string("total_loss: non-finite ") + term);
}

}  // namespace

template <typename T>
Var<T> total_loss(Var<T> seg_key, Var<T> seg_full, Var<T> pif, Var<T> paf,
                  const TargetFields<T>& tgt, const LossWeights& w,
                  LossBreakdown<T>* breakdown) {
  Graph<T>& g = *seg_full.graph;
  if (breakdown) *breakdown = LossBreakdown<T>{};
  const int K = tgt.pif_conf.dim(0);
  const int L = tgt.paf_conf.dim(0);
  const T b_min = static_cast<T>(w.b_min);

  auto ce = ops::cross_entropy_mean(seg_full, tgt.seg_class);
  auto key_bce = ops::bce_logits_mean(seg_key, tgt.seg_key);
  require_finite(scalar_value(ce), "segmentation cross-entropy");
  require_finite(scalar_value(key_bce), "key-mask BCE");
  auto seg_term = ops::add(ce, key_bce);

  // PIF: confidence BCE over all cells; Laplace on offsets and an L1 on the
  // scale, averaged over active cells.
  std::vector<Var<T>> conf_slices;
  Var<T> pif_reg{&g, -1};
  for (int k = 0; k < K; ++k) {
    conf_slices.push_back(ops::channel_slice(pif, k * 5, k * 5 + 1));
    auto mu_x = ops::channel_slice(pif, k * 5 + 1, k * 5 + 2);
    auto mu_y = ops::channel_slice(pif, k * 5 + 2, k * 5 + 3);
    auto b_raw = ops::channel_slice(pif, k * 5 + 3, k * 5 + 4);
    auto sig_raw = ops::channel_slice(pif, k * 5 + 4, k * 5 + 5);
    Tensor<T> tx({1, tgt.pif_x.dim(1), tgt.pif_x.dim(2)});
    Tensor<T> ty = tx, ts = tx, tm = tx;
    size_t plane = static_cast<size_t>(tx.dim(1)) * tx.dim(2);
    std::copy_n(tgt.pif_x.data.begin() + k * plane, plane, tx.data.begin());
    std::copy_n(tgt.pif_y.data.begin() + k * plane, plane, ty.data.begin());
    std::copy_n(tgt.pif_sigma.data.begin() + k * plane, plane, ts.data.begin());
    std::copy_n(tgt.pif_mask.data.begin() + k * plane, plane, tm.data.begin());
    auto lx = ops::laplace_masked(mu_x, b_raw, tx, tm, b_min);
    auto ly = ops::laplace_masked(mu_y, b_raw, ty, tm, b_min);
    auto ls = ops::l1_masked(ops::softplus(sig_raw), ts, tm);
    auto reg = ops::add(ops::add(lx, ly), ls);
    pif_reg = pif_reg.id < 0 ? reg : ops::add(pif_reg, reg);
    if (breakdown) {
      breakdown->pif_loc += scalar_value(lx) + scalar_value(ly);
      breakdown->pif_sigma += scalar_value(ls);
    }
  }
  auto pif_conf_bce = ops::bce_logits_mean(ops::channel_concat(conf_slices), tgt.pif_conf);
  require_finite(scalar_value(pif_conf_bce), "PIF confidence BCE");
  require_finite(scalar_value(pif_reg), "PIF Laplace");
  auto pif_term = ops::add(pif_conf_bce, pif_reg);

  std::vector<Var<T>> paf_conf_slices;
  Var<T> paf_reg{&g, -1};
  for (int l = 0; l < L; ++l) {
    paf_conf_slices.push_back(ops::channel_slice(paf, l * 7, l * 7 + 1));
    auto x1 = ops::channel_slice(paf, l * 7 + 1, l * 7 + 2);
    auto y1 = ops::channel_slice(paf, l * 7 + 2, l * 7 + 3);
    auto b1 = ops::channel_slice(paf, l * 7 + 3, l * 7 + 4);
    auto x2 = ops::channel_slice(paf, l * 7 + 4, l * 7 + 5);
    auto y2 = ops::channel_slice(paf, l * 7 + 5, l * 7 + 6);
    auto b2 = ops::channel_slice(paf, l * 7 + 6, l * 7 + 7);
    Tensor<T> tx1({1, tgt.paf_x1.dim(1), tgt.paf_x1.dim(2)});
    Tensor<T> ty1 = tx1, tx2 = tx1, ty2 = tx1, tm = tx1;
    size_t plane = static_cast<size_t>(tx1.dim(1)) * tx1.dim(2);
    std::copy_n(tgt.paf_x1.data.begin() + l * plane, plane, tx1.data.begin());
    std::copy_n(tgt.paf_y1.data.begin() + l * plane, plane, ty1.data.begin());
    std::copy_n(tgt.paf_x2.data.begin() + l * plane, plane, tx2.data.begin());
    std::copy_n(tgt.paf_y2.data.begin() + l * plane, plane, ty2.data.begin());
    std::copy_n(tgt.paf_mask.data.begin() + l * plane, plane, tm.data.begin());
    auto l1a = ops::laplace_masked(x1, b1, tx1, tm, b_min);
    auto l1b = ops::laplace_masked(y1, b1, ty1, tm, b_min);
    auto l2a = ops::laplace_masked(x2, b2, tx2, tm, b_min);
    auto l2b = ops::laplace_masked(y2, b2, ty2, tm, b_min);
    auto reg = ops::add(ops::add(l1a, l1b), ops::add(l2a, l2b));
    paf_reg = paf_reg.id < 0 ? reg : ops::add(paf_reg, reg);
    if (breakdown)
      breakdown->paf_loc +=
          scalar_value(l1a) + scalar_value(l1b) + scalar_value(l2a) + scalar_value(l2b);
  }
  auto paf_conf_bce = ops::bce_logits_mean(ops::channel_concat(paf_conf_slices), tgt.paf_conf);
  require_finite(scalar_value(paf_conf_bce), "PAF confidence BCE");
  require_finite(scalar_value(paf_reg), "PAF Laplace");
  auto paf_term = ops::add(paf_conf_bce, paf_reg);

  auto total = ops::add(
      ops::scalar_mul(seg_term, static_cast<T>(w.lambda1)),
      ops::add(ops::scalar_mul(pif_term, static_cast<T>(w.lambda2)),
               ops::scalar_mul(paf_term, static_cast<T>(w.lambda3))));
  require_finite(scalar_value(total), "total");

  if (breakdown) {
    breakdown->seg_ce = scalar_value(ce);
    breakdown->seg_key_bce = scalar_value(key_bce);
    breakdown->pif_conf = scalar_value(pif_conf_bce);
    breakdown->paf_conf = scalar_value(paf_conf_bce);
    breakdown->total = scalar_value(total);
  }
  return total;
}

template void encode_pif_targets<float>(const FormDocument&, const FieldGeometry&, double, int,
                                        TargetFields<float>&);
template void encode_pif_targets<double>(const FormDocument&, const FieldGeometry&, double, int,
                                         TargetFields<double>&);
template void encode_paf_targets<float>(const FormDocument&, const FieldGeometry&, double, int,
                                        TargetFields<float>&);
template void encode_paf_targets<double>(const FormDocument&, const FieldGeometry&, double, int,
                                         TargetFields<double>&);
template TargetFields<float> encode_targets<float>(const FormDocument&, const FieldGeometry&, int,
                                                   int, double);
template TargetFields<double> encode_targets<double>(const FormDocument&, const FieldGeometry&,
                                                     int, int, double);
template Var<float> total_loss<float>(Var<float>, Var<float>, Var<float>, Var<float>,
                                      const TargetFields<float>&, const LossWeights&,
                                      LossBreakdown<float>*);
template Var<double> total_loss<double>(Var<double>, Var<double>, Var<double>, Var<double>,
                                        const TargetFields<double>&, const LossWeights&,
                                        LossBreakdown<double>*);

}  // namespace formlink
