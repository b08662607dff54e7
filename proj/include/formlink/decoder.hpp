#pragma once

#include <string>
#include <vector>

#include "formlink/funsd.hpp"
#include "formlink/losses.hpp"
#include "formlink/nd_array.hpp"

namespace formlink {

struct DecodeConfig {
  double keypoint_threshold = 0.3;
  double link_threshold = 0.3;
  double conf_floor = 0.1;          // votes below this do not accumulate
  int hires_factor = 4;             // accumulator bins per field cell
  int min_component_area = 3;       // grid cells
  double endpoint_radius_min = 2.0; // field cells
  double text_height_cells = 3.0;   // rasterization target, sets assign radius
  double assign_radius_scale = 2.0; // x median text height, in page pixels
};

struct Keypoint {
  int class_idx = 0;
  double x = 0, y = 0;  // field-cell units, subcell precision
  double score = 0;
  double sigma = 1;
};

struct DecodedEntity {
  Label label = Label::other;
  Box box;
  double score = 0;
};

struct DecodedLink {
  int question = -1;  // indices into DecodedForm::entities
  int answer = -1;
  double score = 0;
};

struct DecodedForm {
  std::vector<DecodedEntity> entities;
  std::vector<DecodedLink> links;
  int n_dropped_links = 0;  // link candidates whose endpoints found no box
};

/// Raw head outputs for one document plus the geometry to map them back to
/// page pixels.
struct FieldMaps {
  Tensor<float> seg_key;   // (1, H, W) logits
  Tensor<float> seg_full;  // (n_classes, H, W) logits
  Tensor<float> pif;       // (K*5, fh, fw)
  Tensor<float> paf;       // (L*7, fh, fw)
  FieldGeometry geom;
  int n_keypoint_classes = 4;
  int n_link_types = 1;
};

std::vector<Keypoint> extract_keypoints(const Tensor<float>& pif, int n_classes,
                                        const DecodeConfig& cfg);

struct KeypointLink {
  int question_idx = -1;  // indices into the keypoint list
  int answer_idx = -1;
  double score = 0;
};

std::vector<KeypointLink> associate(const Tensor<float>& paf, int n_link_types,
                                    const std::vector<Keypoint>& keypoints,
                                    const DecodeConfig& cfg);

std::vector<DecodedEntity> entities_from_segmentation(const Tensor<float>& seg_full,
                                                      const FieldGeometry& geom,
                                                      const DecodeConfig& cfg);

DecodedForm assemble(const std::vector<DecodedEntity>& entities,
                     const std::vector<Keypoint>& keypoints,
                     const std::vector<KeypointLink>& links, const FieldGeometry& geom,
                     const DecodeConfig& cfg);

DecodedForm decode(const FieldMaps& fields, const DecodeConfig& cfg);

/// Builds field maps whose decode reproduces the encoded ground truth; the
/// confidence logits saturate at +-10.
FieldMaps fields_from_targets(const TargetFields<float>& targets, const FieldGeometry& geom);

FormDocument decoded_to_form(const DecodedForm& decoded, int page_width, int page_height);

/// FUNSD-style schema plus a "score" per entity and a top-level
/// "link_scores" array of [question, answer, score] triples.
std::string serialize_decoded(const DecodedForm& decoded, int page_width, int page_height);

}  // namespace formlink
