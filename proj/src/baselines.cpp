#include "formlink/baselines.hpp"

#include <cmath>

namespace formlink {

namespace {

double box_distance(const Box& a, const Box& b, DistanceMode mode) {
  if (mode == DistanceMode::center) return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
  double dx = std::max({0, a.x1 - b.x2, b.x1 - a.x2});
  double dy = std::max({0, a.y1 - b.y2, b.y1 - a.y2});
  return std::hypot(dx, dy);
}

}  // namespace

std::vector<std::pair<int, int>> heuristic_link(const std::vector<Entity>& entities,
                                                DistanceMode mode) {
  std::vector<const Entity*> questions;
  for (const auto& e : entities)
    if (e.label == Label::question) questions.push_back(&e);

  std::vector<std::pair<int, int>> out;
  if (questions.empty()) return out;
  for (const auto& e : entities) {
    if (e.label != Label::answer) continue;
    const Entity* best = nullptr;
    double best_d = 0;
    for (const Entity* q : questions) {
      double d = box_distance(e.box, q->box, mode);
      if (!best || d < best_d || (d == best_d && q->id < best->id)) {
        best = q;
        best_d = d;
      }
    }
    out.emplace_back(best->id, e.id);
  }
  return out;
}

}  // namespace formlink
