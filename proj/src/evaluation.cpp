#include "eiph/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eiph/detection_math.hpp"
#include "eiph/pipeline.hpp"
#include "eiph/scoring.hpp"

namespace eiph {

MatchReport match_detections(const AnnotationSet& gt, std::span<const Detection> pred,
                             double iou_thr) {
  if (iou_thr <= 0 || iou_thr > 1) throw std::invalid_argument("iou_thr must be in (0,1]");

  MatchReport report;
  std::vector<bool> gt_matched(gt.cells.size(), false);

  std::array<std::vector<std::size_t>, kNumGrades> gt_by_class;
  for (std::size_t g = 0; g < gt.cells.size(); ++g) {
    const int grade = gt.cells[g].grade;
    gt_by_class[static_cast<std::size_t>(grade)].push_back(g);
    ++report.gt_count[static_cast<std::size_t>(grade)];
  }

  // rank by confidence, insertion order breaks ties
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pred[a].confidence > pred[b].confidence;
  });

  for (std::size_t pi : order) {
    const Detection& det = pred[pi];
    const auto cls = static_cast<std::size_t>(det.grade);
    double best = 0;
    std::size_t best_gt = 0;
    bool found = false;
    for (std::size_t g : gt_by_class[cls]) {
      if (gt_matched[g]) continue;
      const double v = iou(det.box, gt.cells[g].box);
      if (v >= iou_thr && v > best) {
        best = v;
        best_gt = g;
        found = true;
      }
    }
    if (found) gt_matched[best_gt] = true;
    report.per_class[cls].push_back({det.confidence, found});
  }

  for (std::size_t g = 0; g < gt.cells.size(); ++g)
    if (!gt_matched[g]) report.unmatched_gt.push_back(gt.cells[g].id);
  return report;
}

double average_precision(const MatchReport& report, int grade) {
  if (!is_valid_grade(grade)) throw std::invalid_argument("bad grade");
  const auto cls = static_cast<std::size_t>(grade);
  const auto n_gt = report.gt_count[cls];
  if (n_gt == 0) throw std::invalid_argument("no ground truth for class");

  const auto& entries = report.per_class[cls];
  std::vector<double> recall, precision;
  recall.reserve(entries.size());
  precision.reserve(entries.size());
  std::int64_t tp = 0, fp = 0;
  for (const auto& e : entries) {
    e.is_tp ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  if (recall.empty()) return 0.0;

  // precision envelope, then area under the step curve
  for (std::size_t i = precision.size() - 1; i-- > 0;)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

double mean_average_precision(const MatchReport& report) {
  double sum = 0;
  int classes = 0;
  for (int g = 0; g < kNumGrades; ++g) {
    if (report.gt_count[static_cast<std::size_t>(g)] == 0) continue;
    sum += average_precision(report, g);
    ++classes;
  }
  if (classes == 0) throw std::invalid_argument("no ground truth in any class");
  return sum / classes;
}

namespace {

// 100 x mean grade of the items whose center is inside the tile; nullopt when
// none.
template <class GradeOf, class CenterOf, class Items>
std::optional<double> tile_score(const BoundingBox& tile, const Items& items,
                                 GradeOf grade_of, CenterOf center_of) {
  std::int64_t n = 0;
  std::int64_t sum = 0;
  for (const auto& item : items) {
    const auto [cx, cy] = center_of(item);
    if (!tile.contains(cx, cy)) continue;
    ++n;
    sum += grade_of(item);
  }
  if (n == 0) return std::nullopt;
  return 100.0 * static_cast<double>(sum) / static_cast<double>(n);
}

}  // namespace

ScoreError score_error(const AnnotationSet& gt, std::span<const Detection> pred,
                       const TilePlan& plan, ScoreErrorMode mode) {
  if (gt.cells.empty()) throw std::invalid_argument("no cells to score");

  if (mode == ScoreErrorMode::kSlide) {
    const double gt_score = ths(grade_counts(gt.cells)).score;
    double pred_score = 0;
    if (!pred.empty()) pred_score = ths(grade_counts(pred)).score;
    return {std::abs(pred_score - gt_score), 0.0};
  }

  std::vector<double> errors;
  for (const auto& tile : plan.tiles) {
    const auto gt_s = tile_score(
        tile, gt.cells, [](const CellAnnotation& c) { return c.grade; },
        [](const CellAnnotation& c) { return std::pair{c.box.cx(), c.box.cy()}; });
    const auto pred_s = tile_score(
        tile, pred, [](const Detection& d) { return d.grade; },
        [](const Detection& d) { return std::pair{d.box.cx(), d.box.cy()}; });
    if (!gt_s && !pred_s) continue;  // tiles with any cells on either side count
    errors.push_back(std::abs(gt_s.value_or(0.0) - pred_s.value_or(0.0)));
  }
  if (errors.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) /
                      static_cast<double>(errors.size());
  double var = 0;
  for (double e : errors) var += (e - mean) * (e - mean);
  var /= static_cast<double>(errors.size());
  return {mean, std::sqrt(var)};
}

ConfusionCounts confusion(const RatingTable& ratings, const std::string& rater, int session) {
  ConfusionCounts counts{};
  bool found = false;
  for (const auto& rec : ratings.records) {
    if (rec.rater_id != rater || rec.session != session) continue;
    found = true;
    const auto ref = ratings.reference.find(rec.cell_id);
    if (ref == ratings.reference.end())
      throw std::runtime_error("cell " + std::to_string(rec.cell_id) + " not in reference");
    ++counts[static_cast<std::size_t>(ref->second)][static_cast<std::size_t>(rec.grade)];
  }
  if (!found)
    throw std::invalid_argument("no ratings for rater '" + rater + "' session " +
                                std::to_string(session));
  return counts;
}

ConfusionRows normalize_confusion(const ConfusionCounts& counts) {
  ConfusionRows rows{};
  for (std::size_t r = 0; r < kNumGrades; ++r) {
    std::int64_t total = 0;
    for (auto v : counts[r]) total += v;
    for (std::size_t c = 0; c < kNumGrades; ++c)
      rows[r][c] = total > 0 ? static_cast<double>(counts[r][c]) / static_cast<double>(total)
                             : (r == c ? 1.0 : 0.0);
  }
  return rows;
}

double cohen_kappa(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cohen_kappa: length mismatch");
  if (a.empty()) throw std::invalid_argument("cohen_kappa: empty input");
  const double n = static_cast<double>(a.size());

  double p_o = 0;
  std::array<double, kNumGrades> marg_a{}, marg_b{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!is_valid_grade(a[i]) || !is_valid_grade(b[i]))
      throw std::invalid_argument("cohen_kappa: grade out of range");
    if (a[i] == b[i]) p_o += 1.0;
    marg_a[static_cast<std::size_t>(a[i])] += 1.0;
    marg_b[static_cast<std::size_t>(b[i])] += 1.0;
  }
  p_o /= n;
  double p_e = 0;
  for (std::size_t g = 0; g < kNumGrades; ++g) p_e += (marg_a[g] / n) * (marg_b[g] / n);

  if (p_e == 1.0) return p_o == 1.0 ? 1.0 : 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

double fleiss_kappa(std::span<const std::array<int, kNumGrades>> counts, int n_raters) {
  if (counts.empty()) throw std::invalid_argument("fleiss_kappa: no cells");
  if (n_raters < 2) throw std::invalid_argument("fleiss_kappa: need >= 2 raters");
  const double n = static_cast<double>(n_raters);
  const double cells = static_cast<double>(counts.size());

  std::array<double, kNumGrades> category_share{};
  double p_bar = 0;
  for (const auto& row : counts) {
    int total = 0;
    double agree = 0;
    for (std::size_t g = 0; g < kNumGrades; ++g) {
      total += row[g];
      agree += static_cast<double>(row[g]) * (row[g] - 1);
      category_share[g] += row[g];
    }
    if (total != n_raters)
      throw std::invalid_argument("fleiss_kappa: cell not rated by exactly n raters");
    p_bar += agree / (n * (n - 1.0));
  }
  p_bar /= cells;

  double p_e = 0;
  for (std::size_t g = 0; g < kNumGrades; ++g) {
    const double share = category_share[g] / (cells * n);
    p_e += share * share;
  }
  if (p_e == 1.0) return p_bar == 1.0 ? 1.0 : 0.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

RaterReport concordance_and_f1(const RatingTable& ratings, const std::string& rater,
                               int session) {
  const ConfusionCounts counts = confusion(ratings, rater, session);

  RaterReport report;
  std::int64_t total = 0, agree = 0;
  std::array<std::int64_t, kNumGrades> ref_count{}, assigned_count{}, tp{};
  for (std::size_t r = 0; r < kNumGrades; ++r) {
    for (std::size_t c = 0; c < kNumGrades; ++c) {
      total += counts[r][c];
      ref_count[r] += counts[r][c];
      assigned_count[c] += counts[r][c];
      if (r == c) {
        agree += counts[r][c];
        tp[r] = counts[r][c];
      }
    }
  }
  report.concordance = total > 0 ? static_cast<double>(agree) / static_cast<double>(total) : 0.0;

  for (std::size_t g = 0; g < kNumGrades; ++g) {
    if (ref_count[g] == 0) continue;  // undefined, omitted
    const double p = assigned_count[g] > 0
                         ? static_cast<double>(tp[g]) / static_cast<double>(assigned_count[g])
                         : 0.0;
    const double r = static_cast<double>(tp[g]) / static_cast<double>(ref_count[g]);
    report.f1[g] = (p + r) > 0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return report;
}

double simulated_map_from_confusion(const AnnotationSet& gt, const ConfusionRows& conf,
                                    int trials, Rng& rng) {
  for (const auto& row : conf) {
    double sum = 0;
    for (double v : row) sum += v;
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("confusion rows must sum to 1");
  }
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (gt.cells.empty()) throw std::invalid_argument("empty ground truth");

  double sum_map = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<Detection> pseudo;
    pseudo.reserve(gt.cells.size());
    for (const auto& cell : gt.cells) {  // gt order = id-tie order
      const auto& row = conf[static_cast<std::size_t>(cell.grade)];
      const double u = rng.uniform();
      double acc = 0;
      int grade = kNumGrades - 1;
      for (int g = 0; g < kNumGrades; ++g) {
        acc += row[static_cast<std::size_t>(g)];
        if (u < acc) {
          grade = g;
          break;
        }
      }
      Detection det;
      det.box = cell.box;
      det.grade = grade;
      det.class_probs[static_cast<std::size_t>(grade)] = 1.0;
      det.confidence = 1.0;
      det.score = grade;
      pseudo.push_back(det);
    }
    sum_map += mean_average_precision(match_detections(gt, pseudo, 0.5));
  }
  return sum_map / trials;
}

}  // namespace eiph
