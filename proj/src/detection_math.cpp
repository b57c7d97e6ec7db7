#include "eiph/detection_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace eiph {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

std::vector<BoundingBox> generate_anchors(std::int64_t patch_w, std::int64_t patch_h,
                                          const AnchorConfig& cfg) {
  if (cfg.stride <= 0) throw std::invalid_argument("stride must be positive");
  const std::int64_t grid_w = patch_w / cfg.stride;
  const std::int64_t grid_h = patch_h / cfg.stride;

  std::vector<BoundingBox> anchors;
  anchors.reserve(static_cast<std::size_t>(grid_w * grid_h) * cfg.scales.size() *
                  cfg.ratios.size());
  for (std::int64_t gy = 0; gy < grid_h; ++gy) {
    for (std::int64_t gx = 0; gx < grid_w; ++gx) {
      const double cx = (static_cast<double>(gx) + 0.5) * static_cast<double>(cfg.stride);
      const double cy = (static_cast<double>(gy) + 0.5) * static_cast<double>(cfg.stride);
      for (double scale : cfg.scales) {
        const double side = cfg.base_size * scale;
        for (double ratio : cfg.ratios) {
          // area side^2 preserved, w/h = ratio
          const double w = side * std::sqrt(ratio);
          const double h = side / std::sqrt(ratio);
          anchors.push_back({cx - w / 2.0, cy - h / 2.0, w, h});
        }
      }
    }
  }
  return anchors;
}

std::vector<AnchorMatch> match_anchors(std::span<const BoundingBox> anchors,
                                       std::span<const CellAnnotation> gt,
                                       const AnchorConfig& cfg) {
  if (cfg.neg_iou > cfg.pos_iou || cfg.neg_iou < 0 || cfg.pos_iou > 1)
    throw std::invalid_argument("require 0 <= neg_iou <= pos_iou <= 1");

  std::vector<AnchorMatch> matches(anchors.size());
  std::vector<bool> gt_has_positive(gt.size(), false);

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = 0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[a], gt[g].box);
      if (v > best) {  // strict: ties stay with the lower index
        best = v;
        best_gt = g;
      }
    }
    if (!gt.empty() && best >= cfg.pos_iou) {
      matches[a] = {AnchorMatch::Kind::kPositive, best_gt};
      gt_has_positive[best_gt] = true;
    } else if (best < cfg.neg_iou) {
      matches[a] = {AnchorMatch::Kind::kBackground, 0};
    } else {
      matches[a] = {AnchorMatch::Kind::kIgnore, 0};
    }
  }

  // every gt gets at least its best anchor
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (gt_has_positive[g]) continue;
    double best = -1;
    std::size_t best_anchor = 0;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double v = iou(anchors[a], gt[g].box);
      if (v > best) {
        best = v;
        best_anchor = a;
      }
    }
    if (best > 0) matches[best_anchor] = {AnchorMatch::Kind::kPositive, g};
  }
  return matches;
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_thr) {
  std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x != b.box.x) return a.box.x < b.box.x;
    return a.box.y < b.box.y;
  });
  std::vector<Detection> kept;
  for (const auto& det : detections) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.grade != det.grade) continue;
      if (iou(k.box, det.box) >= iou_thr) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(det);
  }
  return kept;
}

double focal_loss(double p_t, const FocalParams& params) {
  if (p_t <= 0.0 || p_t > 1.0)
    throw std::invalid_argument("focal_loss: p_t must be in (0,1]");
  return -params.alpha * std::pow(1.0 - p_t, params.gamma) * std::log(p_t);
}

double focal_loss_grad(double p_t, const FocalParams& params) {
  if (p_t <= 0.0 || p_t > 1.0)
    throw std::invalid_argument("focal_loss_grad: p_t must be in (0,1]");
  const double one_minus = 1.0 - p_t;
  double term = 0.0;
  if (params.gamma != 0.0)
    term = params.alpha * params.gamma * std::pow(one_minus, params.gamma - 1.0) * std::log(p_t);
  return term - params.alpha * std::pow(one_minus, params.gamma) / p_t;
}

double smooth_l1(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("smooth_l1: length mismatch");
  if (x.empty()) throw std::invalid_argument("smooth_l1: empty input");
  double sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(x[i] - y[i]);
    sum += d < 1.0 ? 0.5 * d * d : d - 0.5;
  }
  return sum / static_cast<double>(x.size());
}

std::vector<double> smooth_l1_grad(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("smooth_l1_grad: length mismatch");
  if (x.empty()) throw std::invalid_argument("smooth_l1_grad: empty input");
  const double n = static_cast<double>(x.size());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    g[i] = (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0)) / n;
  }
  return g;
}

double mse(std::span<const double> target, std::span<const double> pred) {
  if (target.size() != pred.size()) throw std::invalid_argument("mse: length mismatch");
  if (target.empty()) throw std::invalid_argument("mse: empty input");
  double sum = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = target[i] - pred[i];
    sum += d * d;
  }
  return sum / static_cast<double>(target.size());
}

std::vector<double> mse_grad(std::span<const double> target, std::span<const double> pred) {
  if (target.size() != pred.size()) throw std::invalid_argument("mse_grad: length mismatch");
  if (target.empty()) throw std::invalid_argument("mse_grad: empty input");
  const double n = static_cast<double>(target.size());
  std::vector<double> g(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) g[i] = 2.0 * (pred[i] - target[i]) / n;
  return g;
}

double scaled_sigmoid(double z) {
  return kMinContinuousGrade + 5.0 / (1.0 + std::exp(-z));
}

double scaled_sigmoid_inverse(double value) {
  if (value <= kMinContinuousGrade || value >= kMaxContinuousGrade)
    throw std::invalid_argument("scaled_sigmoid_inverse: value outside (-0.5, 4.5)");
  const double s = (value - kMinContinuousGrade) / 5.0;
  return std::log(s / (1.0 - s));
}

double scaled_sigmoid_deriv(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return 5.0 * s * (1.0 - s);
}

double batch_focal_loss(const LossBatch& batch, const FocalParams& params) {
  if (batch.class_probs.size() != batch.class_targets.size())
    throw std::invalid_argument("batch_focal_loss: probs/targets length mismatch");
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < batch.class_targets.size(); ++i) {
    const int target = batch.class_targets[i];
    if (target == kTargetIgnore) continue;
    double p_t;
    if (target == kTargetBackground) {
      double fg = 0;
      for (double p : batch.class_probs[i]) fg += p;
      p_t = 1.0 - fg;
    } else {
      if (!is_valid_grade(target))
        throw std::invalid_argument("batch_focal_loss: bad class target");
      p_t = batch.class_probs[i][static_cast<std::size_t>(target)];
    }
    sum += focal_loss(p_t, params);
    ++counted;
  }
  if (counted == 0) return 0.0;
  return sum / static_cast<double>(counted);
}

LossBreakdown total_loss(const LossBatch& batch, const FocalParams& params) {
  if (batch.box_pred.size() != batch.box_target.size() ||
      batch.cell_score_pred.size() != batch.cell_score_target.size() ||
      batch.box_pred.size() != batch.cell_score_pred.size())
    throw std::invalid_argument("total_loss: inconsistent positive-anchor arrays");

  LossBreakdown out;
  out.focal = batch_focal_loss(batch, params);

  if (!batch.box_pred.empty()) {
    std::vector<double> xs, ys;
    xs.reserve(batch.box_pred.size() * 4);
    ys.reserve(batch.box_target.size() * 4);
    for (const auto& b : batch.box_pred) xs.insert(xs.end(), b.begin(), b.end());
    for (const auto& b : batch.box_target) ys.insert(ys.end(), b.begin(), b.end());
    out.box = smooth_l1(xs, ys);
    out.cell_mse = mse(batch.cell_score_target, batch.cell_score_pred);
  }
  const double patch = batch.patch_score_target - batch.patch_score_pred;
  out.patch_mse = patch * patch;
  out.total = out.focal + out.box + out.cell_mse + out.patch_mse;
  return out;
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  std::span<const double> point, std::span<const double> analytic_grad,
                  double h) {
  if (point.size() != analytic_grad.size())
    throw std::invalid_argument("grad_check: gradient length mismatch");
  std::vector<double> p(point.begin(), point.end());
  double worst = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double fp = f(p);
    p[i] = saved - h;
    const double fm = f(p);
    p[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("grad_check: non-finite evaluation");
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(numeric - analytic_grad[i]) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace eiph
