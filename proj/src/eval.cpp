#include "formlink/eval.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace formlink {

double iou(const Box& a, const Box& b) {
  long long ix = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  long long iy = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  long long inter = ix * iy;
  long long uni = a.area() + b.area() - inter;
  return uni <= 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

FormEval match_and_score_labeling(const std::vector<DecodedEntity>& pred,
                                  const FormDocument& gt, const EvalOptions& opts) {
  FormEval out;
  struct Pair {
    double iou;
    int p, g;
  };
  std::vector<Pair> pairs;
  for (int p = 0; p < static_cast<int>(pred.size()); ++p)
    for (int g = 0; g < static_cast<int>(gt.entities.size()); ++g) {
      double v = iou(pred[static_cast<size_t>(p)].box, gt.entities[static_cast<size_t>(g)].box);
      if (v >= opts.iou_threshold) pairs.push_back({v, p, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.g < b.g;
  });

  std::vector<bool> pred_used(pred.size(), false), gt_used(gt.entities.size(), false);
  for (const auto& pr : pairs) {
    if (pred_used[static_cast<size_t>(pr.p)] || gt_used[static_cast<size_t>(pr.g)]) continue;
    pred_used[static_cast<size_t>(pr.p)] = true;
    gt_used[static_cast<size_t>(pr.g)] = true;
    const auto& pe = pred[static_cast<size_t>(pr.p)];
    const auto& ge = gt.entities[static_cast<size_t>(pr.g)];
    out.matches.push_back({pr.p, ge.id, pr.iou, pe.label == ge.label});
  }

  std::vector<bool> pred_correct(pred.size(), false);
  std::vector<bool> gt_covered(gt.entities.size(), false);
  for (const auto& m : out.matches) {
    bool correct = m.class_match || !opts.require_class_match;
    if (!correct) continue;
    pred_correct[static_cast<size_t>(m.pred_idx)] = true;
    for (size_t g = 0; g < gt.entities.size(); ++g)
      if (gt.entities[g].id == m.gt_id) gt_covered[g] = true;
  }
  for (size_t p = 0; p < pred.size(); ++p) {
    auto cls = static_cast<size_t>(pred[p].label);
    if (pred_correct[p]) {
      ++out.labeling.tp;
      ++out.labeling_per_class[cls].tp;
    } else {
      ++out.labeling.fp;
      ++out.labeling_per_class[cls].fp;
    }
  }
  for (size_t g = 0; g < gt.entities.size(); ++g) {
    if (gt_covered[g]) continue;
    ++out.labeling.fn;
    ++out.labeling_per_class[static_cast<size_t>(gt.entities[g].label)].fn;
  }
  return out;
}

PrCounts score_linking(const std::vector<DecodedLink>& pred_links, const FormDocument& gt,
                       const std::vector<MatchedPair>& matches) {
  PrCounts out;
  std::vector<int> gt_of;  // pred entity index -> gt id, -1 when unmatched
  int max_idx = -1;
  for (const auto& l : pred_links) max_idx = std::max({max_idx, l.question, l.answer});
  for (const auto& m : matches) max_idx = std::max(max_idx, m.pred_idx);
  gt_of.assign(static_cast<size_t>(max_idx + 1), -1);
  for (const auto& m : matches) gt_of[static_cast<size_t>(m.pred_idx)] = m.gt_id;

  std::set<std::pair<int, int>> gt_pairs(gt.links.begin(), gt.links.end());
  std::set<std::pair<int, int>> claimed;
  for (const auto& l : pred_links) {
    int q = l.question >= 0 && l.question <= max_idx ? gt_of[static_cast<size_t>(l.question)] : -1;
    int a = l.answer >= 0 && l.answer <= max_idx ? gt_of[static_cast<size_t>(l.answer)] : -1;
    if (q >= 0 && a >= 0 && gt_pairs.count({q, a}) && claimed.insert({q, a}).second)
      ++out.tp;
    else
      ++out.fp;
  }
  out.fn = static_cast<long long>(gt_pairs.size()) - out.tp;
  return out;
}

FormEval evaluate_form(const DecodedForm& pred, const FormDocument& gt, const EvalOptions& opts) {
  FormEval ev = match_and_score_labeling(pred.entities, gt, opts);
  ev.linking = score_linking(pred.links, gt, ev.matches);
  return ev;
}

namespace {

void append_row(std::ostringstream& out, const std::string& name, const PrCounts& c) {
  out << name << "  P=" << c.precision() << " R=" << c.recall() << " F1=" << c.f1()
      << "  (tp=" << c.tp << " fp=" << c.fp << " fn=" << c.fn << ")\n";
}

}  // namespace

std::string report_table(const EvalReport& r) {
  std::ostringstream out;
  out << "forms evaluated: " << r.n_forms << "\n";
  append_row(out, "labeling", r.labeling);
  for (int i = 0; i < kNumLabels; ++i)
    append_row(out, std::string("  ") + label_name(static_cast<Label>(i)),
               r.labeling_per_class[static_cast<size_t>(i)]);
  append_row(out, "linking ", r.linking);
  return out.str();
}

std::string report_machine_lines(const EvalReport& r) {
  std::ostringstream out;
  out << "eval.labeling.precision=" << r.labeling.precision() << "\n"
      << "eval.labeling.recall=" << r.labeling.recall() << "\n"
      << "eval.labeling.f1=" << r.labeling.f1() << "\n";
  for (int i = 0; i < kNumLabels; ++i)
    out << "eval.labeling." << label_name(static_cast<Label>(i)) << ".f1="
        << r.labeling_per_class[static_cast<size_t>(i)].f1() << "\n";
  out << "eval.linking.precision=" << r.linking.precision() << "\n"
      << "eval.linking.recall=" << r.linking.recall() << "\n"
      << "eval.linking.f1=" << r.linking.f1() << "\n";
  return out.str();
}

}  // namespace formlink
