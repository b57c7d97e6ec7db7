#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eiph/annot_io.hpp"
#include "eiph/rng.hpp"
#include "eiph/scoring.hpp"
#include "eiph/types.hpp"

namespace eiph {

struct TilePlan {
  std::int64_t tile_w = 1024;
  std::int64_t tile_h = 1024;
  std::int64_t overlap = 128;
  std::int64_t cols = 0;
  std::int64_t rows = 0;
  std::vector<BoundingBox> tiles;  // row-major
};

// Row-major tiles at stride (tile - overlap); last row/column clamped to the
// slide edge. A slide smaller than the tile yields one slide-sized tile.
TilePlan plan_tiles(const SlideMeta& meta, std::int64_t tile_w, std::int64_t tile_h,
                    std::int64_t overlap);

struct NoiseModel {
  double miss_rate = 0;
  std::array<std::array<double, kNumGrades>, kNumGrades> confusion = identity();
  double jitter_sigma = 0;  // pixels
  double fp_per_mm2 = 0;
  std::uint64_t seed = 0;

  static std::array<std::array<double, kNumGrades>, kNumGrades> identity();
  void validate() const;  // rows must sum to 1 within 1e-9
};

// Detector contract: detections in tile-local coordinates. Implementations
// must be safe to call from several workers at once.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const SlideSource& slide, const BoundingBox& tile,
                                        Rng& rng) = 0;
};

// Ground-truth-backed detector with a parameterized noise model.
class OracleDetector : public Detector {
 public:
  OracleDetector(AnnotationSet set, NoiseModel noise);
  std::vector<Detection> detect(const SlideSource& slide, const BoundingBox& tile,
                                Rng& rng) override;

  std::vector<Detection> detect_on(const SlideMeta& meta, const BoundingBox& tile, Rng& rng) const;

 private:
  AnnotationSet set_;
  NoiseModel noise_;
  double median_cell_w_ = 0;
  double median_cell_h_ = 0;
};

// Adapter for a child-process detector speaking line-delimited JSON on
// stdin/stdout. Requests carry the tile geometry and a PPM crop on disk:
//   {"id":u64,"slide":str,"x":int,"y":int,"w":int,"h":int,"patch_ppm_path":str}
//   {"id":u64,"detections":[{"x","y","w","h","probs":[5],"score","confidence"}]}
// Detections are patch-local. Requests are serialized per instance.
class ExternalDetector : public Detector {
 public:
  ExternalDetector(std::string command, std::filesystem::path scratch_dir,
                   double timeout_seconds = 60.0);
  ~ExternalDetector() override;
  std::vector<Detection> detect(const SlideSource& slide, const BoundingBox& tile,
                                Rng& rng) override;

 private:
  void start();
  std::string roundtrip(const std::string& request_line);

  std::string command_;
  std::filesystem::path scratch_dir_;
  double timeout_seconds_;
  std::mutex mutex_;
  int child_pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string read_buffer_;
  std::uint64_t next_id_ = 1;
};

struct PipelineConfig {
  std::int64_t tile_w = 1024;
  std::int64_t tile_h = 1024;
  std::int64_t overlap = 128;
  double nms_thr = 0.5;
  int workers = 4;
  std::uint64_t seed = 0;
};

struct SlideResult {
  std::vector<Detection> detections;  // global coordinates
  GradeCounts counts{};
  std::optional<ThsResult> ths;  // empty when there are no detections
  std::int64_t heat_cols = 0;
  std::int64_t heat_rows = 0;
  std::vector<std::optional<double>> heatmap;  // row-major, per plan tile
};

// Translates tile-local detections to global coordinates, drops detections
// whose center sits in a tile's right/bottom overlap margin when a later
// neighbor covers that center, then class-wise NMS for remaining duplicates.
std::vector<Detection> merge_tiles(const TilePlan& plan,
                                   std::vector<std::vector<Detection>> per_tile,
                                   double nms_thr);

SlideResult run_pipeline(const SlideSource& slide, Detector& detector,
                         const PipelineConfig& cfg);

// Writes heatmap.csv (row,col,score-or-empty) and heatmap.ppm (blue -> red
// over [0,400], empty tiles white).
void render_heatmap(const SlideResult& result, const std::filesystem::path& out_dir);

// Canonical result.json payload; stable byte-for-byte for identical results
// (no timestamps or host data).
std::string result_json(const SlideResult& result, const std::string& slide_id);

// detections.jsonl records: annotation fields plus probs/score/confidence.
void save_detections(std::span<const Detection> detections,
                     const std::filesystem::path& path);
std::vector<Detection> load_detections(const std::filesystem::path& path);

}  // namespace eiph
