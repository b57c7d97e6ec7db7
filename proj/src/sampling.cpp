#include "eiph/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eiph {

namespace {

void require_patch_fits(const SlideMeta& meta, const SamplerConfig& cfg) {
  if (cfg.patch_w <= 0 || cfg.patch_h <= 0)
    throw std::invalid_argument("patch dimensions must be positive");
  if (cfg.patch_w > meta.width || cfg.patch_h > meta.height)
    throw std::invalid_argument("patch larger than slide");
}

// Uniform origin keeping `box` fully inside the patch, clamped to the slide.
SamplePoint jitter_around(const BoundingBox& box, const SlideMeta& meta,
                          const SamplerConfig& cfg, Rng& rng) {
  const auto bx = static_cast<std::int64_t>(std::floor(box.x));
  const auto by = static_cast<std::int64_t>(std::floor(box.y));
  const auto bx2 = static_cast<std::int64_t>(std::ceil(box.x2()));
  const auto by2 = static_cast<std::int64_t>(std::ceil(box.y2()));

  auto pick = [&rng](std::int64_t lo, std::int64_t hi, std::int64_t clamp_lo,
                     std::int64_t clamp_hi) {
    lo = std::max(lo, clamp_lo);
    hi = std::min(hi, clamp_hi);
    if (hi < lo) {  // box wider than the patch or pinned at a border
      const std::int64_t v = std::clamp(lo, clamp_lo, clamp_hi);
      return v;
    }
    return rng.range(lo, hi);
  };
  SamplePoint p;
  p.x = pick(bx2 - cfg.patch_w, bx, 0, meta.width - cfg.patch_w);
  p.y = pick(by2 - cfg.patch_h, by, 0, meta.height - cfg.patch_h);
  return p;
}

}  // namespace

SamplePoint sample_uniform(const SlideMeta& meta, const SamplerConfig& cfg, Rng& rng) {
  require_patch_fits(meta, cfg);
  SamplePoint p;
  p.x = rng.range(0, meta.width - cfg.patch_w);
  p.y = rng.range(0, meta.height - cfg.patch_h);
  return p;
}

GradeClusters build_clusters(const AnnotationSet& set) {
  GradeClusters clusters;
  for (std::size_t i = 0; i < set.cells.size(); ++i)
    clusters[set.cells[i].grade].push_back(i);
  return clusters;
}

SamplePoint sample_two_stage(const AnnotationSet& set, const GradeClusters& clusters,
                             const SamplerConfig& cfg, Rng& rng) {
  require_patch_fits(set.slide, cfg);
  if (clusters.empty()) throw std::invalid_argument("no cells to sample");

  const auto cluster_idx = rng.below(clusters.size());
  auto it = clusters.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(cluster_idx));
  const auto& members = it->second;
  if (members.empty()) throw std::logic_error("empty cluster in map");
  const auto& cell = set.cells[members[rng.below(members.size())]];

  SamplePoint p = jitter_around(cell.box, set.slide, cfg, rng);
  p.anchor_id = cell.id;
  return p;
}

namespace {

struct TreeBuildContext {
  const SamplerConfig* cfg;
  const SlideMeta* meta;
};

void split_node(QuadTreeNode& node, int depth, const TreeBuildContext& ctx) {
  if (depth >= ctx.cfg->max_depth) return;
  const auto w = static_cast<std::int64_t>(node.bounds.w);
  const auto h = static_cast<std::int64_t>(node.bounds.h);
  if (w < 2 || h < 2) return;

  const double mx = node.bounds.x + std::floor(node.bounds.w / 2.0);
  const double my = node.bounds.y + std::floor(node.bounds.h / 2.0);

  std::array<BoundingBox, 4> quads = {{
      {node.bounds.x, node.bounds.y, mx - node.bounds.x, my - node.bounds.y},          // NW
      {mx, node.bounds.y, node.bounds.x2() - mx, my - node.bounds.y},                  // NE
      {node.bounds.x, my, mx - node.bounds.x, node.bounds.y2() - my},                  // SW
      {mx, my, node.bounds.x2() - mx, node.bounds.y2() - my},                          // SE
  }};

  std::array<std::vector<QuadTreeNode::CellRef>, 4> buckets;
  for (const auto& ref : node.cells) {
    const double cx = ref.box.cx();
    const double cy = ref.box.cy();
    const int qi = (cx >= mx ? 1 : 0) + (cy >= my ? 2 : 0);
    buckets[static_cast<std::size_t>(qi)].push_back(ref);
  }

  // split guard: never create a child below the minimum occupancy
  for (const auto& bucket : buckets)
    if (static_cast<std::int64_t>(bucket.size()) < ctx.cfg->min_cells_per_node) return;

  node.children.resize(4);
  std::array<double, 4> raw{};
  double total_raw = 0;
  for (int i = 0; i < 4; ++i) {
    auto& child = node.children[static_cast<std::size_t>(i)];
    child.bounds = quads[static_cast<std::size_t>(i)];
    child.cells = std::move(buckets[static_cast<std::size_t>(i)]);
    for (const auto& ref : child.cells) child.raw_weight += ref.weight;
    raw[static_cast<std::size_t>(i)] = child.raw_weight;
    total_raw += child.raw_weight;
  }

  const double eps = ctx.cfg->epsilon;
  const double delta = total_raw == 0.0 ? 1.0 : 0.0;
  double norm = 0;
  for (double r : raw) norm += r + eps * (total_raw + delta);
  for (int i = 0; i < 4; ++i) {
    auto& child = node.children[static_cast<std::size_t>(i)];
    const double num = raw[static_cast<std::size_t>(i)] + eps * (total_raw + delta);
    child.sibling_prob = norm > 0 ? num / norm : 0.25;
  }

  for (auto& child : node.children) split_node(child, depth + 1, ctx);
}

}  // namespace

QuadTreeNode build_quadtree(const AnnotationSet& set, const SamplerConfig& cfg) {
  require_patch_fits(set.slide, cfg);

  GradeCounts counts{};
  for (const auto& cell : set.cells) ++counts[static_cast<std::size_t>(cell.grade)];

  QuadTreeNode root;
  root.bounds = {0, 0, static_cast<double>(set.slide.width),
                 static_cast<double>(set.slide.height)};
  root.sibling_prob = 1.0;
  root.cells.reserve(set.cells.size());
  for (const auto& cell : set.cells) {
    QuadTreeNode::CellRef ref;
    ref.id = cell.id;
    ref.grade = cell.grade;
    ref.weight = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(cell.grade)]);
    ref.box = cell.box;
    root.cells.push_back(ref);
    root.raw_weight += ref.weight;
  }

  TreeBuildContext ctx{&cfg, &set.slide};
  split_node(root, 0, ctx);
  return root;
}

SamplePoint sample_quadtree(const QuadTreeNode& tree, const SlideMeta& meta,
                            const SamplerConfig& cfg, Rng& rng) {
  require_patch_fits(meta, cfg);

  const QuadTreeNode* node = &tree;
  while (!node->is_leaf()) {
    const double u = rng.uniform();
    double acc = 0;
    const QuadTreeNode* chosen = &node->children.back();
    for (const auto& child : node->children) {
      acc += child.sibling_prob;
      if (u < acc) {
        chosen = &child;
        break;
      }
    }
    node = chosen;
  }

  if (!node->cells.empty()) {
    const double total = node->raw_weight;
    const double u = rng.uniform() * total;
    double acc = 0;
    const QuadTreeNode::CellRef* chosen = &node->cells.back();
    for (const auto& ref : node->cells) {
      acc += ref.weight;
      if (u < acc) {
        chosen = &ref;
        break;
      }
    }
    SamplePoint p = jitter_around(chosen->box, meta, cfg, rng);
    p.anchor_id = chosen->id;
    return p;
  }

  // empty leaf: uniform valid origin within the leaf bounds
  auto pick = [&rng](std::int64_t lo, std::int64_t hi, std::int64_t clamp_lo,
                     std::int64_t clamp_hi) {
    lo = std::max(lo, clamp_lo);
    hi = std::min(hi, clamp_hi);
    if (hi < lo) return std::clamp(lo, clamp_lo, clamp_hi);
    return rng.range(lo, hi);
  };
  SamplePoint p;
  p.x = pick(static_cast<std::int64_t>(node->bounds.x),
             static_cast<std::int64_t>(node->bounds.x2()) - 1, 0, meta.width - cfg.patch_w);
  p.y = pick(static_cast<std::int64_t>(node->bounds.y),
             static_cast<std::int64_t>(node->bounds.y2()) - 1, 0, meta.height - cfg.patch_h);
  return p;
}

double single_cell_hit_probability(const SlideMeta& meta, const SamplerConfig& cfg) {
  require_patch_fits(meta, cfg);
  // covering origins per axis capped by the valid-origin count (an interior
  // point has patch_w of them; patch = slide leaves exactly one)
  const double positions_x = static_cast<double>(meta.width - cfg.patch_w + 1);
  const double positions_y = static_cast<double>(meta.height - cfg.patch_h + 1);
  const double cover_x = std::min(static_cast<double>(cfg.patch_w), positions_x);
  const double cover_y = std::min(static_cast<double>(cfg.patch_h), positions_y);
  return (cover_x * cover_y) / (positions_x * positions_y);
}

}  // namespace eiph
