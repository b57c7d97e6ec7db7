#pragma once

#include <functional>
#include <span>
#include <vector>

#include "eiph/types.hpp"

namespace eiph {

// Single FPN level (32 px stride), 3 scales x 3 ratios.
struct AnchorConfig {
  std::int64_t stride = 32;
  double base_size = 32.0;
  std::vector<double> scales = {1.0, 1.2599210498948732, 1.5874010519681994};  // 2^(k/3)
  std::vector<double> ratios = {0.5, 1.0, 2.0};
  double pos_iou = 0.5;
  double neg_iou = 0.4;
};

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
};

double iou(const BoundingBox& a, const BoundingBox& b);

// One anchor per (grid position, scale, ratio), centered on its grid cell,
// area (base_size*scale)^2, aspect w/h = ratio. Grid truncates to whole
// strides.
std::vector<BoundingBox> generate_anchors(std::int64_t patch_w, std::int64_t patch_h,
                                          const AnchorConfig& cfg);

struct AnchorMatch {
  enum class Kind { kPositive, kBackground, kIgnore };
  Kind kind = Kind::kBackground;
  std::size_t gt = 0;  // valid when positive
};

// IoU >= pos_iou -> positive to the argmax gt (ties to the lowest gt id);
// < neg_iou -> background; between -> ignore. Each gt with no positive anchor
// claims its best-IoU anchor.
std::vector<AnchorMatch> match_anchors(std::span<const BoundingBox> anchors,
                                       std::span<const CellAnnotation> gt,
                                       const AnchorConfig& cfg);

// Greedy class-wise NMS. Sorted by confidence descending (ties by x then y);
// a detection survives iff its IoU with every kept detection of the same
// grade is below iou_thr.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_thr);

// -alpha * (1-p)^gamma * log(p); p is the target-class probability.
double focal_loss(double p_t, const FocalParams& params);
double focal_loss_grad(double p_t, const FocalParams& params);

// Mean over pairs: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
double smooth_l1(std::span<const double> x, std::span<const double> y);
std::vector<double> smooth_l1_grad(std::span<const double> x, std::span<const double> y);

double mse(std::span<const double> target, std::span<const double> pred);
// d/dpred
std::vector<double> mse_grad(std::span<const double> target, std::span<const double> pred);

// -0.5 + 5 * sigmoid(z), the continuous-grade activation.
double scaled_sigmoid(double z);
double scaled_sigmoid_inverse(double value);  // throws at or beyond (-0.5, 4.5)
double scaled_sigmoid_deriv(double z);

constexpr int kTargetBackground = -1;
constexpr int kTargetIgnore = -2;

struct LossBatch {
  // per anchor
  std::vector<std::array<double, kNumGrades>> class_probs;
  std::vector<int> class_targets;  // grade 0..4, kTargetBackground, kTargetIgnore
  // per positive anchor
  std::vector<std::array<double, 4>> box_pred;
  std::vector<std::array<double, 4>> box_target;
  std::vector<double> cell_score_pred;
  std::vector<double> cell_score_target;
  // one pair per patch
  double patch_score_pred = 0;
  double patch_score_target = 0;
};

// Focal averaged over non-ignored anchors; p_t is the target-class
// probability for positives and 1 - sum(probs) for background.
double batch_focal_loss(const LossBatch& batch, const FocalParams& params);

struct LossBreakdown {
  double focal = 0;
  double box = 0;
  double cell_mse = 0;
  double patch_mse = 0;
  double total = 0;
};

LossBreakdown total_loss(const LossBatch& batch, const FocalParams& params);

// Central differences with step h; returns max_i |num - ana| / max(1, |num|).
double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point, std::span<const double> analytic_grad,
                  double h = 1e-5);

}  // namespace eiph
