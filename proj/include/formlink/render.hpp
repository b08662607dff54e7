#pragma once

#include <string>

#include "formlink/chargrid.hpp"
#include "formlink/decoder.hpp"

namespace formlink {

/// Page-sized SVG overlaying the char-grid, the class masks (header yellow,
/// question green, answer blue), the keypoint heat, and orange link lines.
std::string render_svg(const CharGrid& grid, const FieldMaps& fields, const DecodedForm& decoded);

}  // namespace formlink
