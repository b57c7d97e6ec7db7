#pragma once

#include <span>

#include "eiph/types.hpp"

namespace eiph {

// Golde/Doucet Total Hemosiderin Score. The 300-cell recipe (count of each
// grade divided by three, times the grade, summed) equals 100 x mean grade;
// that form generalizes to any cell count.
struct ThsResult {
  double score = 0.0;          // in [0,400]
  long long rounded = 0;       // half away from zero
  std::int64_t n_cells = 0;
  bool diagnosis_confirmed = false;  // rounded > 75
};

long long round_half_away(double v);

GradeCounts grade_counts(std::span<const CellAnnotation> cells);
GradeCounts grade_counts(std::span<const Detection> detections);

// Throws std::invalid_argument("no cells to score") on an empty count.
ThsResult ths(const GradeCounts& counts);

// True iff the rounded score is strictly above 75. Throws on score outside
// [0,400].
bool diagnose(double score);

}  // namespace eiph
