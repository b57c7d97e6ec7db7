#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace eiph {

inline constexpr int kNumGrades = 5;

// Reference scan resolution in micrometers per pixel.
inline constexpr double kReferenceMpp = 0.25;

inline constexpr double kMinContinuousGrade = -0.5;
inline constexpr double kMaxContinuousGrade = 4.5;

inline bool is_valid_grade(int g) { return g >= 0 && g < kNumGrades; }

enum class Staining { kPrussian, kTurnbull };

std::string to_string(Staining s);
std::optional<Staining> staining_from_string(std::string_view s);

// Axis-aligned box, top-left + size, slide pixel coordinates. Annotations are
// integral; anchors and jittered detections may carry fractional values.
struct BoundingBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double area() const { return w * h; }
  bool contains(double px, double py) const {
    return px >= x && px < x2() && py >= y && py < y2();
  }
  bool operator==(const BoundingBox&) const = default;
};

double intersection_area(const BoundingBox& a, const BoundingBox& b);
bool intersects(const BoundingBox& a, const BoundingBox& b);

struct CellAnnotation {
  std::int64_t id = 0;
  BoundingBox box;
  int grade = 0;
  bool operator==(const CellAnnotation&) const = default;
};

struct SlideMeta {
  std::string id;
  std::int64_t width = 0;
  std::int64_t height = 0;
  Staining staining = Staining::kPrussian;
  double mpp = kReferenceMpp;  // micrometers per pixel
  bool operator==(const SlideMeta&) const = default;
};

struct AnnotationSet {
  SlideMeta slide;
  std::vector<CellAnnotation> cells;
  bool operator==(const AnnotationSet&) const = default;
};

using GradeCounts = std::array<std::int64_t, kNumGrades>;

struct Detection {
  BoundingBox box;
  int grade = 0;  // argmax of class_probs
  std::array<double, kNumGrades> class_probs{};
  double confidence = 0.0;  // in [0,1]
  double score = 0.0;       // continuous grade in [-0.5, 4.5]
};

// Empty iff all invariants hold. Never throws; each violation names the
// offending cell and rule.
std::vector<std::string> validate_annotation_set(const AnnotationSet& set);

}  // namespace eiph
