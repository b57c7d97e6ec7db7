#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eiph/types.hpp"

namespace eiph {

// Accounting for every live pixel buffer in the process. The pipeline's
// memory contract (peak <= workers x tile bytes + constant) is asserted
// against these numbers in tests.
class PixelBudget {
 public:
  static std::size_t live_bytes();
  static std::size_t peak_bytes();
  static void reset_peak();

  static void add(std::size_t n);
  static void sub(std::size_t n);

 private:
  static std::atomic<std::size_t> live_;
  static std::atomic<std::size_t> peak_;
};

template <class T>
struct PixelAllocator {
  using value_type = T;
  PixelAllocator() = default;
  template <class U>
  PixelAllocator(const PixelAllocator<U>&) {}

  T* allocate(std::size_t n) {
    PixelBudget::add(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) {
    PixelBudget::sub(n * sizeof(T));
    ::operator delete(p);
  }
  template <class U>
  bool operator==(const PixelAllocator<U>&) const { return true; }
};

using PixelBuffer = std::vector<std::uint8_t, PixelAllocator<std::uint8_t>>;

// RGB raster, row-major, 3 bytes per pixel.
struct Patch {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
  PixelBuffer pixels;

  std::uint8_t* at(std::int64_t px, std::int64_t py) {
    return pixels.data() + 3 * (py * width + px);
  }
  const std::uint8_t* at(std::int64_t px, std::int64_t py) const {
    return pixels.data() + 3 * (py * width + px);
  }
};

Patch make_patch(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h,
                 std::uint8_t fill = 255);

// PPM P6, maxval 255.
void write_ppm(const std::filesystem::path& path, const Patch& patch);
Patch read_ppm(const std::filesystem::path& path);

// Tiled slide raster. Tiles that were never written decode as uniform white.
struct SlideSource {
  std::filesystem::path manifest_path;
  SlideMeta meta;
  std::int64_t tile_size = 0;
  std::string tile_format = "ppm";
  std::string tile_pattern = "tiles/{col}_{row}.ppm";
  std::filesystem::path root;  // directory containing the manifest

  std::int64_t tile_cols() const;
  std::int64_t tile_rows() const;
  std::filesystem::path tile_path(std::int64_t col, std::int64_t row) const;
};

SlideSource open_slide(const std::filesystem::path& manifest_path);
void write_manifest(const SlideSource& slide);

// Assembles rect from the covered tiles; pixels outside any stored tile
// (absent tiles, area past the slide edge) are white. Throws if rect does not
// intersect the slide at all. Pure and safe to call concurrently.
Patch read_region(const SlideSource& slide, const BoundingBox& rect);

// JSON-lines annotations: slide header line, then one cell per line.
AnnotationSet load_annotations(const std::filesystem::path& path);
void save_annotations(const AnnotationSet& set, const std::filesystem::path& path);

struct RatingRecord {
  std::int64_t cell_id = 0;
  std::string rater_id;
  int session = 0;  // 0 or 1
  int grade = 0;
};

struct RatingTable {
  std::vector<RatingRecord> records;
  std::map<std::int64_t, int> reference;  // cell_id -> grade
};

// ratings CSV: cell_id,rater_id,session,grade; reference CSV: cell_id,grade.
RatingTable load_ratings(const std::filesystem::path& ratings_csv,
                         const std::filesystem::path& reference_csv);
void save_ratings(const RatingTable& table, const std::filesystem::path& ratings_csv,
                  const std::filesystem::path& reference_csv);

}  // namespace eiph
