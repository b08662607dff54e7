#include "formlink/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "formlink/autodiff.hpp"

namespace formlink {

namespace {

float sigmoidf(float z) { return ops::sigmoid_value(z); }
float softplusf(float z) { return ops::softplus_value(z); }

float softplus_inverse(float y) {
  return y > 20.0f ? y : std::log(std::expm1(std::max(y, 1e-6f)));
}

}  // namespace

std::vector<Keypoint> extract_keypoints(const Tensor<float>& pif, int n_classes,
                                        const DecodeConfig& cfg) {
  const int fh = pif.dim(1), fw = pif.dim(2);
  const int f = std::max(cfg.hires_factor, 1);
  const int ah = fh * f, aw = fw * f;

  std::vector<Keypoint> out;
  std::vector<double> wsum(static_cast<size_t>(ah) * aw), wx(wsum.size()), wy(wsum.size()),
      wsigma(wsum.size()), smax(wsum.size());
  for (int k = 0; k < n_classes; ++k) {
    std::fill(wsum.begin(), wsum.end(), 0.0);
    std::fill(wx.begin(), wx.end(), 0.0);
    std::fill(wy.begin(), wy.end(), 0.0);
    std::fill(wsigma.begin(), wsigma.end(), 0.0);
    std::fill(smax.begin(), smax.end(), 0.0);

    // vote accumulation: each cell casts its confidence at its refined position
    for (int cy = 0; cy < fh; ++cy)
      for (int cx = 0; cx < fw; ++cx) {
        double c = sigmoidf(pif.at(k * 5 + 0, cy, cx));
        if (c < cfg.conf_floor) continue;
        double px = cx + 0.5 + pif.at(k * 5 + 1, cy, cx);
        double py = cy + 0.5 + pif.at(k * 5 + 2, cy, cx);
        px = std::clamp(px, 0.0, fw - 1e-6);
        py = std::clamp(py, 0.0, fh - 1e-6);
        double sigma = softplusf(pif.at(k * 5 + 4, cy, cx));
        size_t bin = static_cast<size_t>(static_cast<int>(py * f)) * aw +
                     static_cast<size_t>(static_cast<int>(px * f));
        wsum[bin] += c;
        wx[bin] += c * px;
        wy[bin] += c * py;
        wsigma[bin] += c * sigma;
        smax[bin] = std::max(smax[bin], c);
      }

    std::vector<Keypoint> candidates;
    for (size_t b = 0; b < wsum.size(); ++b) {
      if (smax[b] < cfg.keypoint_threshold) continue;
      Keypoint kp;
      kp.class_idx = k;
      kp.score = smax[b];
      kp.x = wx[b] / wsum[b];
      kp.y = wy[b] / wsum[b];
      kp.sigma = wsigma[b] / wsum[b];
      candidates.push_back(kp);
    }
    std::sort(candidates.begin(), candidates.end(), [](const Keypoint& a, const Keypoint& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
    // suppress candidates strictly inside an accepted keypoint's radius
    std::vector<Keypoint> kept;
    for (const auto& c : candidates) {
      bool suppressed = false;
      for (const auto& a : kept) {
        double radius = std::max(a.sigma, 1.0);
        if (std::hypot(a.x - c.x, a.y - c.y) < radius) {
          suppressed = true;
          break;
        }
      }
      if (!suppressed) kept.push_back(c);
    }
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    if (a.x != b.x) return a.x < b.x;
    return a.class_idx < b.class_idx;
  });
  return out;
}

std::vector<KeypointLink> associate(const Tensor<float>& paf, int n_link_types,
                                    const std::vector<Keypoint>& keypoints,
                                    const DecodeConfig& cfg) {
  const int fh = paf.dim(1), fw = paf.dim(2);
  std::vector<int> questions, answers;
  for (size_t i = 0; i < keypoints.size(); ++i) {
    if (keypoints[i].class_idx == static_cast<int>(Label::question))
      questions.push_back(static_cast<int>(i));
    if (keypoints[i].class_idx == static_cast<int>(Label::answer))
      answers.push_back(static_cast<int>(i));
  }
  if (questions.empty() || answers.empty()) return {};

  auto nearest = [&](const std::vector<int>& pool, double x, double y) {
    int best = -1;
    double best_d = 1e30;
    for (int idx : pool) {
      double d = std::hypot(keypoints[static_cast<size_t>(idx)].x - x,
                            keypoints[static_cast<size_t>(idx)].y - y);
      if (d < best_d) {
        best_d = d;
        best = idx;
      }
    }
    return std::pair<int, double>{best, best_d};
  };

  std::map<std::pair<int, int>, double> best_score;
  for (int l = 0; l < n_link_types; ++l)
    for (int cy = 0; cy < fh; ++cy)
      for (int cx = 0; cx < fw; ++cx) {
        double c = sigmoidf(paf.at(l * 7 + 0, cy, cx));
        if (c < cfg.link_threshold) continue;
        double e1x = cx + 0.5 + paf.at(l * 7 + 1, cy, cx);
        double e1y = cy + 0.5 + paf.at(l * 7 + 2, cy, cx);
        double e2x = cx + 0.5 + paf.at(l * 7 + 4, cy, cx);
        double e2y = cy + 0.5 + paf.at(l * 7 + 5, cy, cx);
        auto [qi, qd] = nearest(questions, e1x, e1y);
        auto [ai, ad] = nearest(answers, e2x, e2y);
        if (qi < 0 || ai < 0) continue;
        if (qd > std::max(keypoints[static_cast<size_t>(qi)].sigma, cfg.endpoint_radius_min))
          continue;
        if (ad > std::max(keypoints[static_cast<size_t>(ai)].sigma, cfg.endpoint_radius_min))
          continue;
        double score = c * keypoints[static_cast<size_t>(qi)].score *
                       keypoints[static_cast<size_t>(ai)].score;
        auto key = std::make_pair(qi, ai);
        auto it = best_score.find(key);
        if (it == best_score.end() || it->second < score) best_score[key] = score;
      }

  std::vector<KeypointLink> candidates;
  for (const auto& [key, score] : best_score)
    candidates.push_back({key.first, key.second, score});
  std::sort(candidates.begin(), candidates.end(), [](const KeypointLink& a, const KeypointLink& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.question_idx != b.question_idx) return a.question_idx < b.question_idx;
    return a.answer_idx < b.answer_idx;
  });
  // greedy: an answer keypoint joins at most one link; questions may repeat
  std::vector<bool> answer_used(keypoints.size(), false);
  std::vector<KeypointLink> kept;
  for (const auto& c : candidates) {
    if (answer_used[static_cast<size_t>(c.answer_idx)]) continue;
    answer_used[static_cast<size_t>(c.answer_idx)] = true;
    kept.push_back(c);
  }
  return kept;
}

std::vector<DecodedEntity> entities_from_segmentation(const Tensor<float>& seg_full,
                                                      const FieldGeometry& geom,
                                                      const DecodeConfig& cfg) {
  const int C = seg_full.dim(0), H = seg_full.dim(1), W = seg_full.dim(2);
  Tensor<int> cls({H, W});
  Tensor<float> prob({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int best = 0;
      float bv = seg_full.at(0, y, x);
      float mx = bv;
      for (int c = 1; c < C; ++c) {
        float v = seg_full.at(c, y, x);
        mx = std::max(mx, v);
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      float denom = 0;
      for (int c = 0; c < C; ++c) denom += std::exp(seg_full.at(c, y, x) - mx);
      cls.at(y, x) = best;
      prob.at(y, x) = std::exp(bv - mx) / denom;
    }

  std::vector<DecodedEntity> out;
  std::vector<int> component(static_cast<size_t>(H) * W, -1);
  std::vector<int> stack;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int c = cls.at(y, x);
      if (c == 0 || component[static_cast<size_t>(y) * W + x] >= 0) continue;
      stack.assign(1, y * W + x);
      component[static_cast<size_t>(y) * W + x] = 1;
      int x1 = x, x2 = x, y1 = y, y2 = y, area = 0;
      double score_sum = 0;
      while (!stack.empty()) {
        int p = stack.back();
        stack.pop_back();
        int py = p / W, px = p % W;
        ++area;
        score_sum += prob.at(py, px);
        x1 = std::min(x1, px);
        x2 = std::max(x2, px);
        y1 = std::min(y1, py);
        y2 = std::max(y2, py);
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          int ny = py + dy[d], nx = px + dx[d];
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          if (cls.at(ny, nx) != c || component[static_cast<size_t>(ny) * W + nx] >= 0) continue;
          component[static_cast<size_t>(ny) * W + nx] = 1;
          stack.push_back(ny * W + nx);
        }
      }
      if (area < cfg.min_component_area) continue;
      DecodedEntity e;
      e.label = static_cast<Label>(c - 1);
      e.box = {static_cast<int>(std::lround(x1 * geom.cell_px)),
               static_cast<int>(std::lround(y1 * geom.cell_px)),
               static_cast<int>(std::lround((x2 + 1) * geom.cell_px)),
               static_cast<int>(std::lround((y2 + 1) * geom.cell_px))};
      e.score = score_sum / area;
      out.push_back(e);
    }
  return out;
}

DecodedForm assemble(const std::vector<DecodedEntity>& entities,
                     const std::vector<Keypoint>& keypoints,
                     const std::vector<KeypointLink>& links, const FieldGeometry& geom,
                     const DecodeConfig& cfg) {
  DecodedForm out;
  out.entities = entities;
  const double radius = cfg.assign_radius_scale * cfg.text_height_cells * geom.cell_px;

  auto assign_box = [&](const Keypoint& kp, Label wanted) {
    double px = geom.field_to_px(kp.x);
    double py = geom.field_to_px(kp.y);
    int best = -1;
    double best_d = radius;
    for (size_t i = 0; i < entities.size(); ++i) {
      if (entities[i].label != wanted) continue;
      double d = std::hypot(entities[i].box.x1 - px, entities[i].box.y2 - py);
      if (d <= best_d) {
        // ties at identical distance keep the earlier entity
        if (best < 0 || d < best_d) {
          best = static_cast<int>(i);
          best_d = d;
        }
      }
    }
    return best;
  };

  std::map<std::pair<int, int>, double> best;
  for (const auto& l : links) {
    int qbox = assign_box(keypoints[static_cast<size_t>(l.question_idx)], Label::question);
    int abox = assign_box(keypoints[static_cast<size_t>(l.answer_idx)], Label::answer);
    if (qbox < 0 || abox < 0) {
      ++out.n_dropped_links;
      continue;
    }
    auto key = std::make_pair(qbox, abox);
    auto it = best.find(key);
    if (it == best.end() || it->second < l.score) best[key] = l.score;
  }
  std::vector<DecodedLink> candidates;
  for (const auto& [key, score] : best) candidates.push_back({key.first, key.second, score});
  std::sort(candidates.begin(), candidates.end(), [](const DecodedLink& a, const DecodedLink& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.question != b.question) return a.question < b.question;
    return a.answer < b.answer;
  });
  std::vector<bool> answer_used(entities.size(), false);
  for (const auto& c : candidates) {
    if (answer_used[static_cast<size_t>(c.answer)]) continue;
    answer_used[static_cast<size_t>(c.answer)] = true;
    out.links.push_back(c);
  }
  return out;
}

DecodedForm decode(const FieldMaps& fields, const DecodeConfig& cfg) {
  auto keypoints = extract_keypoints(fields.pif, fields.n_keypoint_classes, cfg);
  auto klinks = associate(fields.paf, fields.n_link_types, keypoints, cfg);
  auto entities = entities_from_segmentation(fields.seg_full, fields.geom, cfg);
  return assemble(entities, keypoints, klinks, fields.geom, cfg);
}

FieldMaps fields_from_targets(const TargetFields<float>& t, const FieldGeometry& geom) {
  FieldMaps f;
  f.geom = geom;
  f.n_keypoint_classes = t.pif_conf.dim(0);
  f.n_link_types = t.paf_conf.dim(0);
  const int H = t.seg_class.dim(0), W = t.seg_class.dim(1);
  const int fh = t.pif_conf.dim(1), fw = t.pif_conf.dim(2);
  const float on = 10.0f, off = -10.0f;

  f.seg_key = Tensor<float>({1, H, W});
  for (int64_t i = 0; i < t.seg_key.numel(); ++i)
    f.seg_key.data[static_cast<size_t>(i)] = t.seg_key.data[static_cast<size_t>(i)] > 0 ? on : off;

  f.seg_full = Tensor<float>({5, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 5; ++c)
        f.seg_full.at(c, y, x) = (t.seg_class.at(y, x) == c) ? on : off;

  f.pif = Tensor<float>({f.n_keypoint_classes * 5, fh, fw});
  for (int k = 0; k < f.n_keypoint_classes; ++k)
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw; ++x) {
        f.pif.at(k * 5 + 0, y, x) = t.pif_conf.at(k, y, x) > 0 ? on : off;
        f.pif.at(k * 5 + 1, y, x) = t.pif_x.at(k, y, x);
        f.pif.at(k * 5 + 2, y, x) = t.pif_y.at(k, y, x);
        f.pif.at(k * 5 + 3, y, x) = softplus_inverse(1.0f);
        f.pif.at(k * 5 + 4, y, x) =
            softplus_inverse(std::max(t.pif_sigma.at(k, y, x), 1e-3f));
      }

  f.paf = Tensor<float>({f.n_link_types * 7, fh, fw});
  for (int l = 0; l < f.n_link_types; ++l)
    for (int y = 0; y < fh; ++y)
      for (int x = 0; x < fw; ++x) {
        f.paf.at(l * 7 + 0, y, x) = t.paf_conf.at(l, y, x) > 0 ? on : off;
        f.paf.at(l * 7 + 1, y, x) = t.paf_x1.at(l, y, x);
        f.paf.at(l * 7 + 2, y, x) = t.paf_y1.at(l, y, x);
        f.paf.at(l * 7 + 3, y, x) = softplus_inverse(1.0f);
        f.paf.at(l * 7 + 4, y, x) = t.paf_x2.at(l, y, x);
        f.paf.at(l * 7 + 5, y, x) = t.paf_y2.at(l, y, x);
        f.paf.at(l * 7 + 6, y, x) = softplus_inverse(1.0f);
      }
  return f;
}

FormDocument decoded_to_form(const DecodedForm& decoded, int page_width, int page_height) {
  FormDocument doc;
  doc.page_width = page_width;
  doc.page_height = page_height;
  for (size_t i = 0; i < decoded.entities.size(); ++i) {
    Entity e;
    e.id = static_cast<int>(i);
    e.label = decoded.entities[i].label;
    e.box = decoded.entities[i].box;
    doc.entities.push_back(std::move(e));
  }
  for (const auto& l : decoded.links) {
    doc.links.emplace_back(l.question, l.answer);
    doc.entities[static_cast<size_t>(l.question)].links.emplace_back(l.question, l.answer);
    doc.entities[static_cast<size_t>(l.answer)].links.emplace_back(l.question, l.answer);
  }
  doc.n_link_annotations = static_cast<int>(doc.links.size());
  return doc;
}

std::string serialize_decoded(const DecodedForm& decoded, int page_width, int page_height) {
  nlohmann::json root;
  root["page_width"] = page_width;
  root["page_height"] = page_height;
  nlohmann::json form = nlohmann::json::array();
  for (size_t i = 0; i < decoded.entities.size(); ++i) {
    const auto& e = decoded.entities[i];
    nlohmann::json je;
    je["id"] = static_cast<int>(i);
    je["label"] = label_name(e.label);
    je["box"] = {e.box.x1, e.box.y1, e.box.x2, e.box.y2};
    je["text"] = "";
    je["words"] = nlohmann::json::array();
    je["score"] = e.score;
    nlohmann::json linking = nlohmann::json::array();
    for (const auto& l : decoded.links)
      if (l.question == static_cast<int>(i) || l.answer == static_cast<int>(i))
        linking.push_back({l.question, l.answer});
    je["linking"] = std::move(linking);
    form.push_back(std::move(je));
  }
  root["form"] = std::move(form);
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& l : decoded.links) scores.push_back({l.question, l.answer, l.score});
  root["link_scores"] = std::move(scores);
  return root.dump(1);
}

}  // namespace formlink
