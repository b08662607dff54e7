#pragma once

#include <vector>

#include "formlink/funsd.hpp"

namespace formlink {

/// Deterministic generator of form pages with exact ground truth. In easy
/// mode every answer's nearest question (center distance) is its own key, so
/// the nearest-question heuristic is perfect; hard mode plants decoy
/// questions next to answers that break that geometry.
struct SynthSpec {
  int n_forms = 1;
  int page_width = 512;
  int page_height = 512;
  int rows = 8;
  int columns = 1;
  double fan_out = 0.0;          // chance a question receives a second answer
  double distractor_rate = 0.25; // expected "other" lines per form, times 4
  enum class Mode { easy, hard } mode = Mode::easy;
  uint64_t seed = 0;
};

FormDocument generate_form(const SynthSpec& spec, int index);
std::vector<FormDocument> generate(const SynthSpec& spec);

}  // namespace formlink
