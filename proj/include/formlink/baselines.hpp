#pragma once

#include <utility>
#include <vector>

#include "formlink/funsd.hpp"

namespace formlink {

enum class DistanceMode { center, nearest_edge };

/// For every answer-labeled entity, emits a pair with the nearest
/// question-labeled entity; ties break toward the lower id. Answers with no
/// question on the page emit nothing.
std::vector<std::pair<int, int>> heuristic_link(const std::vector<Entity>& entities,
                                                DistanceMode mode = DistanceMode::center);

}  // namespace formlink
