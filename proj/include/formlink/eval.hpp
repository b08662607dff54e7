#pragma once

#include <array>
#include <string>
#include <vector>

#include "formlink/decoder.hpp"
#include "formlink/funsd.hpp"

namespace formlink {

double iou(const Box& a, const Box& b);

struct PrCounts {
  long long tp = 0, fp = 0, fn = 0;

  double precision() const { return tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn); }
  double f1() const {
    double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  PrCounts& operator+=(const PrCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct EvalOptions {
  double iou_threshold = 0.8;
  // joint scoring: a match only counts when the class agrees. The
  // alternative scores detection and classification separately.
  bool require_class_match = true;
};

struct MatchedPair {
  int pred_idx = -1;
  int gt_id = -1;
  double iou = 0;
  bool class_match = false;
};

struct FormEval {
  PrCounts labeling;
  std::array<PrCounts, kNumLabels> labeling_per_class{};
  PrCounts linking;
  std::vector<MatchedPair> matches;
};

struct EvalReport {
  PrCounts labeling;
  std::array<PrCounts, kNumLabels> labeling_per_class{};
  PrCounts linking;
  int n_forms = 0;

  EvalReport& operator+=(const FormEval& f) {
    labeling += f.labeling;
    for (size_t i = 0; i < labeling_per_class.size(); ++i)
      labeling_per_class[i] += f.labeling_per_class[i];
    linking += f.linking;
    ++n_forms;
    return *this;
  }
};

/// Greedy one-to-one matching in descending IoU order at the given threshold.
FormEval match_and_score_labeling(const std::vector<DecodedEntity>& pred,
                                  const FormDocument& gt, const EvalOptions& opts);

/// Scores predicted links through the entity matching: a link is correct when
/// both endpoints map to matched ground-truth entities and the directed pair
/// exists in the ground truth.
PrCounts score_linking(const std::vector<DecodedLink>& pred_links, const FormDocument& gt,
                       const std::vector<MatchedPair>& matches);

FormEval evaluate_form(const DecodedForm& pred, const FormDocument& gt, const EvalOptions& opts);

std::string report_table(const EvalReport& r);
std::string report_machine_lines(const EvalReport& r);

}  // namespace formlink
