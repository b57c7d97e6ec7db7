#pragma once

#include <span>
#include <utility>
#include <vector>

#include "eiph/annot_io.hpp"

namespace eiph {

// Per-channel normalized histogram over B equal-width bins of [0,255];
// feature length 3*B.
struct HistogramFeature {
  std::vector<double> bins;
};

HistogramFeature histogram_features(const Patch& patch, int bins_per_channel = 16);

// RBF kernel ridge regression; the closed-form stand-in for the RBF-SVM
// baseline. Predictions are clamped to the score range [0,400].
struct KernelModel {
  std::vector<HistogramFeature> support;
  std::vector<double> coef;
  double sigma = 1.0;
  double lambda = 0.1;

  double predict(const HistogramFeature& x) const;
};

KernelModel fit(std::span<const HistogramFeature> features, std::span<const double> scores,
                double sigma, double lambda);

// Minimizes mean k-fold validation MSE; ties prefer smaller lambda, then
// smaller sigma. Folds are assigned round-robin by index.
std::pair<double, double> grid_search(std::span<const HistogramFeature> features,
                                      std::span<const double> scores,
                                      std::span<const double> sigma_grid,
                                      std::span<const double> lambda_grid, int k_folds);

}  // namespace eiph
