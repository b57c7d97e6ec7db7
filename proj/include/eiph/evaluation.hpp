#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eiph/annot_io.hpp"
#include "eiph/rng.hpp"
#include "eiph/types.hpp"

namespace eiph {

struct TilePlan;  // pipeline.hpp

struct MatchReport {
  struct Entry {
    double confidence = 0;
    bool is_tp = false;
  };
  std::array<std::vector<Entry>, kNumGrades> per_class;  // confidence-ranked
  GradeCounts gt_count{};
  std::vector<std::int64_t> unmatched_gt;
};

// Greedy matching per class: predictions in confidence order each claim the
// unmatched same-class gt of highest IoU >= iou_thr; one TP per gt.
MatchReport match_detections(const AnnotationSet& gt, std::span<const Detection> pred,
                             double iou_thr);

// All-point interpolated AP (area under the precision envelope). Throws when
// the class has no ground truth.
double average_precision(const MatchReport& report, int grade);
// Mean over grades with ground truth; throws when none has any.
double mean_average_precision(const MatchReport& report);

enum class ScoreErrorMode { kSlide, kPatch };

struct ScoreError {
  double mean = 0;
  double sigma = 0;  // population sigma over tiles (0 in slide mode)
};

ScoreError score_error(const AnnotationSet& gt, std::span<const Detection> pred,
                       const TilePlan& plan, ScoreErrorMode mode);

// rows = reference grade, cols = assigned grade
using ConfusionCounts = std::array<std::array<std::int64_t, kNumGrades>, kNumGrades>;
// row-stochastic probabilities
using ConfusionRows = std::array<std::array<double, kNumGrades>, kNumGrades>;

ConfusionCounts confusion(const RatingTable& ratings, const std::string& rater, int session);
ConfusionRows normalize_confusion(const ConfusionCounts& counts);

double cohen_kappa(std::span<const int> a, std::span<const int> b);

// counts[i][g] = raters assigning grade g to cell i; every cell rated by
// exactly n_raters.
double fleiss_kappa(std::span<const std::array<int, kNumGrades>> counts, int n_raters);

struct RaterReport {
  double concordance = 0;
  // absent when the grade never occurs in the reference
  std::array<std::optional<double>, kNumGrades> f1{};
};

RaterReport concordance_and_f1(const RatingTable& ratings, const std::string& rater,
                               int session);

// Pseudo-detections at the gt boxes with grades resampled by the confusion
// row, confidence 1; mean mAP over trials.
double simulated_map_from_confusion(const AnnotationSet& gt, const ConfusionRows& conf,
                                    int trials, Rng& rng);

}  // namespace eiph
