#pragma once

#include <map>
#include <optional>
#include <vector>

#include "eiph/rng.hpp"
#include "eiph/types.hpp"

namespace eiph {

struct SamplerConfig {
  std::int64_t patch_w = 1024;
  std::int64_t patch_h = 1024;
  std::uint64_t seed = 0;
  double epsilon = 0.01;  // floor that keeps empty nodes sampleable
  int max_depth = 3;
  std::int64_t min_cells_per_node = 300;  // split guard
};

struct SamplePoint {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::optional<std::int64_t> anchor_id;
};

// grade -> indices into set.cells; grades with no cells are absent
using GradeClusters = std::map<int, std::vector<std::size_t>>;

// Uniform patch origin over all in-bounds positions.
SamplePoint sample_uniform(const SlideMeta& meta, const SamplerConfig& cfg, Rng& rng);

GradeClusters build_clusters(const AnnotationSet& set);

// Stage one picks a grade cluster uniformly, stage two a cell within it; the
// patch origin is uniform over positions that keep the anchor cell's box
// fully inside the patch, clamped to slide bounds.
SamplePoint sample_two_stage(const AnnotationSet& set, const GradeClusters& clusters,
                             const SamplerConfig& cfg, Rng& rng);

struct QuadTreeNode {
  struct CellRef {
    std::int64_t id = 0;
    int grade = 0;
    double weight = 0;  // 1 / slide-wide count of this grade
    BoundingBox box;
  };

  BoundingBox bounds;
  std::vector<QuadTreeNode> children;  // empty or exactly 4 (NW, NE, SW, SE)
  std::vector<CellRef> cells;          // every cell inside bounds
  double raw_weight = 0;               // sum of cell weights
  double sibling_prob = 1.0;           // normalized among siblings; root = 1

  bool is_leaf() const { return children.empty(); }
};

// Cell weights are inverse grade frequencies, so each non-empty grade carries
// total weight 1 across the tree. Sibling probabilities are the normalized
// raw weights floored by epsilon; with all-zero siblings the floor alone
// applies and the four quadrants become equally likely.
QuadTreeNode build_quadtree(const AnnotationSet& set, const SamplerConfig& cfg);

// Descends by sibling probability; at a populated leaf picks a cell
// weight-proportionally and jitters like sample_two_stage, at an empty leaf
// draws a uniform valid origin inside the leaf.
SamplePoint sample_quadtree(const QuadTreeNode& tree, const SlideMeta& meta,
                            const SamplerConfig& cfg, Rng& rng);

// Probability that a uniform patch covers one point cell:
// patch area / number of valid origins.
double single_cell_hit_probability(const SlideMeta& meta, const SamplerConfig& cfg);

}  // namespace eiph
