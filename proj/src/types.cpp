#include "eiph/types.hpp"

#include <algorithm>
#include <unordered_set>

namespace eiph {

std::string to_string(Staining s) {
  return s == Staining::kPrussian ? "prussian" : "turnbull";
}

std::optional<Staining> staining_from_string(std::string_view s) {
  if (s == "prussian") return Staining::kPrussian;
  if (s == "turnbull") return Staining::kTurnbull;
  return std::nullopt;
}

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double h = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

bool intersects(const BoundingBox& a, const BoundingBox& b) {
  return intersection_area(a, b) > 0.0;
}

std::vector<std::string> validate_annotation_set(const AnnotationSet& set) {
  std::vector<std::string> violations;
  if (set.slide.width <= 0 || set.slide.height <= 0)
    violations.push_back("slide: non-positive dimensions");
  if (set.slide.mpp <= 0) violations.push_back("slide: non-positive resolution");

  std::unordered_set<std::int64_t> seen;
  for (const auto& cell : set.cells) {
    const std::string tag = "cell " + std::to_string(cell.id);
    if (!seen.insert(cell.id).second)
      violations.push_back("duplicate id " + std::to_string(cell.id));
    if (cell.box.w <= 0 || cell.box.h <= 0)
      violations.push_back(tag + ": non-positive box");
    if (cell.box.x < 0 || cell.box.y < 0 ||
        cell.box.x2() > static_cast<double>(set.slide.width) ||
        cell.box.y2() > static_cast<double>(set.slide.height))
      violations.push_back(tag + ": box out of bounds");
    if (!is_valid_grade(cell.grade))
      violations.push_back(tag + ": invalid grade " + std::to_string(cell.grade));
  }
  return violations;
}

}  // namespace eiph
