#include "eiph/scoring.hpp"

#include <cmath>
#include <stdexcept>

namespace eiph {

long long round_half_away(double v) {
  return static_cast<long long>(v < 0 ? std::ceil(v - 0.5) : std::floor(v + 0.5));
}

GradeCounts grade_counts(std::span<const CellAnnotation> cells) {
  GradeCounts counts{};
  for (const auto& c : cells) {
    if (!is_valid_grade(c.grade))
      throw std::invalid_argument("grade out of range: " + std::to_string(c.grade));
    ++counts[static_cast<std::size_t>(c.grade)];
  }
  return counts;
}

GradeCounts grade_counts(std::span<const Detection> detections) {
  GradeCounts counts{};
  for (const auto& d : detections) {
    if (!is_valid_grade(d.grade))
      throw std::invalid_argument("grade out of range: " + std::to_string(d.grade));
    ++counts[static_cast<std::size_t>(d.grade)];
  }
  return counts;
}

ThsResult ths(const GradeCounts& counts) {
  std::int64_t total = 0;
  std::int64_t weighted = 0;
  for (int g = 0; g < kNumGrades; ++g) {
    if (counts[static_cast<std::size_t>(g)] < 0)
      throw std::invalid_argument("negative grade count");
    total += counts[static_cast<std::size_t>(g)];
    weighted += static_cast<std::int64_t>(g) * counts[static_cast<std::size_t>(g)];
  }
  if (total == 0) throw std::invalid_argument("no cells to score");

  ThsResult r;
  r.n_cells = total;
  r.score = 100.0 * static_cast<double>(weighted) / static_cast<double>(total);
  r.rounded = round_half_away(r.score);
  r.diagnosis_confirmed = r.rounded > 75;
  return r;
}

bool diagnose(double score) {
  if (score < 0.0 || score > 400.0)
    throw std::invalid_argument("score out of range [0,400]");
  return round_half_away(score) > 75;
}

}  // namespace eiph
