#include "eiph/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace eiph {

namespace {

double sq_distance(const HistogramFeature& a, const HistogramFeature& b) {
  if (a.bins.size() != b.bins.size())
    throw std::invalid_argument("feature length mismatch");
  double d = 0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    const double diff = a.bins[i] - b.bins[i];
    d += diff * diff;
  }
  return d;
}

double rbf(const HistogramFeature& a, const HistogramFeature& b, double sigma) {
  return std::exp(-sq_distance(a, b) / (2.0 * sigma * sigma));
}

// Cholesky solve of the SPD system A x = y, A overwritten by its factor.
std::vector<double> cholesky_solve(std::vector<std::vector<double>>& a,
                                   std::vector<double> y) {
  const std::size_t n = a.size();
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a[j][j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j][k] * a[j][k];
    if (diag <= 0) throw std::runtime_error("kernel system not positive definite");
    a[j][j] = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a[i][j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i][k] * a[j][k];
      a[i][j] = v / a[j][j];
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= a[i][k] * y[k];
    y[i] /= a[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) y[i] -= a[k][i] * y[k];
    y[i] /= a[i][i];
  }
  return y;
}

}  // namespace

HistogramFeature histogram_features(const Patch& patch, int bins_per_channel) {
  if (bins_per_channel < 1 || bins_per_channel > 256)
    throw std::invalid_argument("bins_per_channel must be in [1,256]");
  const std::int64_t n_pixels = patch.width * patch.height;
  if (n_pixels <= 0 || patch.pixels.empty()) throw std::invalid_argument("empty patch");

  const auto b = static_cast<std::size_t>(bins_per_channel);
  HistogramFeature f;
  f.bins.assign(3 * b, 0.0);
  for (std::size_t i = 0; i < patch.pixels.size(); i += 3) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto bin = std::min<std::size_t>(b - 1, patch.pixels[i + c] * b / 256);
      f.bins[c * b + bin] += 1.0;
    }
  }
  for (double& v : f.bins) v /= static_cast<double>(n_pixels);
  return f;
}

double KernelModel::predict(const HistogramFeature& x) const {
  double y = 0;
  for (std::size_t i = 0; i < support.size(); ++i) y += coef[i] * rbf(x, support[i], sigma);
  return std::clamp(y, 0.0, 400.0);
}

KernelModel fit(std::span<const HistogramFeature> features, std::span<const double> scores,
                double sigma, double lambda) {
  if (features.size() != scores.size()) throw std::invalid_argument("fit: length mismatch");
  if (features.empty()) throw std::invalid_argument("fit: no training points");
  if (sigma <= 0 || lambda <= 0) throw std::invalid_argument("fit: sigma and lambda must be > 0");

  const std::size_t n = features.size();
  std::vector<std::vector<double>> k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = rbf(features[i], features[j], sigma);
      k[i][j] = v;
      k[j][i] = v;
    }
    k[i][i] += lambda;
  }

  KernelModel model;
  model.support.assign(features.begin(), features.end());
  model.coef = cholesky_solve(k, std::vector<double>(scores.begin(), scores.end()));
  model.sigma = sigma;
  model.lambda = lambda;
  return model;
}

std::pair<double, double> grid_search(std::span<const HistogramFeature> features,
                                      std::span<const double> scores,
                                      std::span<const double> sigma_grid,
                                      std::span<const double> lambda_grid, int k_folds) {
  if (k_folds < 2) throw std::invalid_argument("grid_search: k_folds must be >= 2");
  if (features.size() < static_cast<std::size_t>(k_folds))
    throw std::invalid_argument("grid_search: fewer samples than folds");
  if (sigma_grid.empty() || lambda_grid.empty())
    throw std::invalid_argument("grid_search: empty grid");

  // ascending order encodes the tie-break: smaller lambda first, then sigma
  std::vector<double> lambdas(lambda_grid.begin(), lambda_grid.end());
  std::vector<double> sigmas(sigma_grid.begin(), sigma_grid.end());
  std::sort(lambdas.begin(), lambdas.end());
  std::sort(sigmas.begin(), sigmas.end());

  double best_sigma = sigmas[0];
  double best_lambda = lambdas[0];
  double best_mse = std::numeric_limits<double>::infinity();

  for (double lambda : lambdas) {
    for (double sigma : sigmas) {
      double total_se = 0;
      std::size_t total_n = 0;
      for (int fold = 0; fold < k_folds; ++fold) {
        std::vector<HistogramFeature> train_x;
        std::vector<double> train_y;
        std::vector<std::size_t> val_idx;
        for (std::size_t i = 0; i < features.size(); ++i) {
          if (static_cast<int>(i % static_cast<std::size_t>(k_folds)) == fold) {
            val_idx.push_back(i);
          } else {
            train_x.push_back(features[i]);
            train_y.push_back(scores[i]);
          }
        }
        if (train_x.empty() || val_idx.empty())
          throw std::invalid_argument("grid_search: degenerate fold");
        const KernelModel model = fit(train_x, train_y, sigma, lambda);
        for (std::size_t i : val_idx) {
          const double err = model.predict(features[i]) - scores[i];
          total_se += err * err;
          ++total_n;
        }
      }
      const double mse = total_se / static_cast<double>(total_n);
      if (mse < best_mse) {
        best_mse = mse;
        best_sigma = sigma;
        best_lambda = lambda;
      }
    }
  }
  return {best_sigma, best_lambda};
}

}  // namespace eiph
