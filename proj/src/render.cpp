#include "formlink/render.hpp"

#include <cmath>
#include <sstream>

#include "formlink/autodiff.hpp"

namespace formlink {

namespace {

const char* class_color(int seg_class) {
  switch (seg_class) {
    case 1: return "#f2c314";  // header: yellow
    case 2: return "#2eaa4e";  // question: green
    case 3: return "#2a7fff";  // answer: blue
    case 4: return "#9a9a9a";  // other
  }
  return "#000000";
}

}  // namespace

std::string render_svg(const CharGrid& grid, const FieldMaps& fields, const DecodedForm& decoded) {
  const double s = grid.scale;
  const int W = static_cast<int>(std::lround(grid.width * s));
  const int H = static_cast<int>(std::lround(grid.height * s));
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";

  // class masks from the segmentation head
  const int C = fields.seg_full.dim(0);
  svg << "<g opacity=\"0.35\">\n";
  for (int y = 0; y < fields.seg_full.dim(1); ++y)
    for (int x = 0; x < fields.seg_full.dim(2); ++x) {
      int best = 0;
      float bv = fields.seg_full.at(0, y, x);
      for (int c = 1; c < C; ++c)
        if (fields.seg_full.at(c, y, x) > bv) {
          bv = fields.seg_full.at(c, y, x);
          best = c;
        }
      if (best == 0) continue;
      svg << "<rect x=\"" << x * s << "\" y=\"" << y * s << "\" width=\"" << s << "\" height=\""
          << s << "\" fill=\"" << class_color(best) << "\"/>\n";
    }
  svg << "</g>\n";

  // char-grid occupancy
  svg << "<g fill=\"#303030\" opacity=\"0.8\">\n";
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x)
      if (grid.at(y, x) != 0)
        svg << "<rect x=\"" << x * s + s * 0.25 << "\" y=\"" << y * s + s * 0.25 << "\" width=\""
            << s * 0.5 << "\" height=\"" << s * 0.5 << "\"/>\n";
  svg << "</g>\n";

  // keypoint heat from the PIF confidences
  const double fs = s * fields.geom.stride;
  for (int k = 0; k < fields.n_keypoint_classes; ++k)
    for (int y = 0; y < fields.pif.dim(1); ++y)
      for (int x = 0; x < fields.pif.dim(2); ++x) {
        double conf = ops::sigmoid_value(fields.pif.at(k * 5 + 0, y, x));
        if (conf < 0.15) continue;
        double px = (x + 0.5 + fields.pif.at(k * 5 + 1, y, x)) * fs;
        double py = (y + 0.5 + fields.pif.at(k * 5 + 2, y, x)) * fs;
        svg << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"" << 0.5 * fs * conf
            << "\" fill=\"" << class_color(k + 1) << "\" opacity=\"" << 0.6 * conf << "\"/>\n";
      }

  // decoded boxes and orange link lines between bottom-left corners
  for (const auto& e : decoded.entities)
    svg << "<rect x=\"" << e.box.x1 << "\" y=\"" << e.box.y1 << "\" width=\"" << e.box.width()
        << "\" height=\"" << e.box.height() << "\" fill=\"none\" stroke=\""
        << class_color(seg_class_of(e.label)) << "\" stroke-width=\"1.5\"/>\n";
  for (const auto& l : decoded.links) {
    const Box& q = decoded.entities[static_cast<size_t>(l.question)].box;
    const Box& a = decoded.entities[static_cast<size_t>(l.answer)].box;
    svg << "<line x1=\"" << q.x1 << "\" y1=\"" << q.y2 << "\" x2=\"" << a.x1 << "\" y2=\""
        << a.y2 << "\" stroke=\"#ff8c00\" stroke-width=\"2\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace formlink
