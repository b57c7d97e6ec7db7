// Python bindings for the hemosiderophage quantification toolkit.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "json.hpp"

#include "eiph/annot_io.hpp"
#include "eiph/baseline.hpp"
#include "eiph/detection_math.hpp"
#include "eiph/evaluation.hpp"
#include "eiph/pipeline.hpp"
#include "eiph/sampling.hpp"
#include "eiph/scoring.hpp"
#include "eiph/synth.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Box = std::tuple<double, double, double, double>;

eiph::BoundingBox to_box(const Box& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)};
}

py::object json_to_py(const json& j) {
  switch (j.type()) {
    case json::value_t::null:
      return py::none();
    case json::value_t::boolean:
      return py::bool_(j.get<bool>());
    case json::value_t::number_integer:
      return py::int_(j.get<std::int64_t>());
    case json::value_t::number_unsigned:
      return py::int_(j.get<std::uint64_t>());
    case json::value_t::number_float:
      return py::float_(j.get<double>());
    case json::value_t::string:
      return py::str(j.get<std::string>());
    case json::value_t::array: {
      py::list out;
      for (const auto& item : j) out.append(json_to_py(item));
      return out;
    }
    case json::value_t::object: {
      py::dict out;
      for (const auto& [key, value] : j.items()) out[py::str(key)] = json_to_py(value);
      return out;
    }
    default:
      return py::none();
  }
}

py::dict ths_dict(const eiph::ThsResult& r) {
  py::dict out;
  out["score"] = r.score;
  out["rounded"] = r.rounded;
  out["n_cells"] = r.n_cells;
  out["diagnosis_confirmed"] = r.diagnosis_confirmed;
  return out;
}

eiph::SpatialMode mode_from_string(const std::string& mode) {
  if (mode == "uniform") return eiph::SpatialMode::kUniform;
  if (mode == "gradient_x") return eiph::SpatialMode::kGradientX;
  if (mode == "clustered") return eiph::SpatialMode::kClustered;
  throw std::invalid_argument("unknown spatial mode: " + mode);
}

py::dict generated_dict(const eiph::GeneratedSlide& out) {
  py::dict d;
  d["manifest"] = out.slide.manifest_path.string();
  d["annotations"] = out.annotations_path.string();
  d["cells"] = out.annotations.cells.size();
  d["width"] = out.slide.meta.width;
  d["height"] = out.slide.meta.height;
  return d;
}

}  // namespace

PYBIND11_MODULE(eiphquant, m) {
  m.doc() = "Whole-slide hemosiderophage quantification: scoring, sampling, "
            "detection numerics, evaluation and agreement statistics.";

  // scoring
  m.def(
      "ths",
      [](const std::array<std::int64_t, 5>& counts) { return ths_dict(eiph::ths(counts)); },
      py::arg("counts"),
      "Total hemosiderin score (0-400) from the five per-grade counts.");
  m.def("diagnose", &eiph::diagnose, py::arg("score"),
        "True iff the rounded score confirms pulmonary hemorrhage (> 75).");
  m.def(
      "score_file",
      [](const std::filesystem::path& annotations) {
        const auto set = eiph::load_annotations(annotations);
        const auto counts =
            eiph::grade_counts(std::span<const eiph::CellAnnotation>(set.cells));
        py::dict out = ths_dict(eiph::ths(counts));
        out["counts"] = counts;
        return out;
      },
      py::arg("annotations"), "Score an annotations JSONL file.");

  // detection math
  m.def(
      "iou", [](const Box& a, const Box& b) { return eiph::iou(to_box(a), to_box(b)); },
      py::arg("a"), py::arg("b"), "Intersection over union of two (x, y, w, h) boxes.");
  m.def(
      "nms",
      [](const std::vector<Box>& boxes, const std::vector<int>& grades,
         const std::vector<double>& confidences, double iou_thr) {
        if (boxes.size() != grades.size() || boxes.size() != confidences.size())
          throw std::invalid_argument("boxes, grades, confidences must align");
        std::vector<eiph::Detection> dets(boxes.size());
        for (std::size_t i = 0; i < boxes.size(); ++i) {
          dets[i].box = to_box(boxes[i]);
          dets[i].grade = grades[i];
          dets[i].confidence = confidences[i];
          dets[i].class_probs[static_cast<std::size_t>(grades[i])] = 1.0;
        }
        const auto kept = eiph::nms(std::move(dets), iou_thr);
        py::list out;
        for (const auto& d : kept)
          out.append(py::make_tuple(d.box.x, d.box.y, d.box.w, d.box.h, d.grade,
                                    d.confidence));
        return out;
      },
      py::arg("boxes"), py::arg("grades"), py::arg("confidences"), py::arg("iou_thr") = 0.5,
      "Greedy class-wise NMS; returns surviving (x, y, w, h, grade, confidence).");
  m.def(
      "generate_anchors",
      [](std::int64_t patch_w, std::int64_t patch_h, std::int64_t stride, double base_size,
         const std::vector<double>& scales, const std::vector<double>& ratios) {
        eiph::AnchorConfig cfg;
        cfg.stride = stride;
        cfg.base_size = base_size;
        if (!scales.empty()) cfg.scales = scales;
        if (!ratios.empty()) cfg.ratios = ratios;
        const auto anchors = eiph::generate_anchors(patch_w, patch_h, cfg);
        py::list out;
        for (const auto& a : anchors) out.append(py::make_tuple(a.x, a.y, a.w, a.h));
        return out;
      },
      py::arg("patch_w"), py::arg("patch_h"), py::arg("stride") = 32,
      py::arg("base_size") = 32.0, py::arg("scales") = std::vector<double>{},
      py::arg("ratios") = std::vector<double>{});
  m.def(
      "focal_loss",
      [](double p_t, double alpha, double gamma) {
        return eiph::focal_loss(p_t, {alpha, gamma});
      },
      py::arg("p_t"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def(
      "smooth_l1",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        return eiph::smooth_l1(x, y);
      },
      py::arg("x"), py::arg("y"));
  m.def(
      "mse",
      [](const std::vector<double>& target, const std::vector<double>& pred) {
        return eiph::mse(target, pred);
      },
      py::arg("target"), py::arg("pred"));
  m.def("scaled_sigmoid", &eiph::scaled_sigmoid, py::arg("z"),
        "Continuous-grade activation onto (-0.5, 4.5).");
  m.def("scaled_sigmoid_inverse", &eiph::scaled_sigmoid_inverse, py::arg("value"));

  // sampling
  m.def(
      "single_cell_hit_probability",
      [](std::int64_t width, std::int64_t height, std::int64_t patch_w, std::int64_t patch_h) {
        eiph::SlideMeta meta{"", width, height, eiph::Staining::kPrussian, 0.25};
        eiph::SamplerConfig cfg;
        cfg.patch_w = patch_w;
        cfg.patch_h = patch_h;
        return eiph::single_cell_hit_probability(meta, cfg);
      },
      py::arg("width"), py::arg("height"), py::arg("patch_w") = 1024,
      py::arg("patch_h") = 1024);
  m.def(
      "sample",
      [](const std::filesystem::path& annotations, const std::string& strategy, int count,
         std::uint64_t seed, std::int64_t patch_w, std::int64_t patch_h) {
        const auto set = eiph::load_annotations(annotations);
        eiph::SamplerConfig cfg;
        cfg.patch_w = patch_w;
        cfg.patch_h = patch_h;
        cfg.seed = seed;
        eiph::Rng rng(seed);
        py::list out;
        const auto push = [&out](const eiph::SamplePoint& p) {
          out.append(py::make_tuple(p.x, p.y,
                                    p.anchor_id ? py::object(py::int_(*p.anchor_id))
                                                : py::object(py::none())));
        };
        if (strategy == "uniform") {
          for (int i = 0; i < count; ++i) push(eiph::sample_uniform(set.slide, cfg, rng));
        } else if (strategy == "two-stage") {
          const auto clusters = eiph::build_clusters(set);
          for (int i = 0; i < count; ++i)
            push(eiph::sample_two_stage(set, clusters, cfg, rng));
        } else if (strategy == "quadtree") {
          const auto tree = eiph::build_quadtree(set, cfg);
          for (int i = 0; i < count; ++i)
            push(eiph::sample_quadtree(tree, set.slide, cfg, rng));
        } else {
          throw std::invalid_argument("strategy must be uniform, two-stage or quadtree");
        }
        return out;
      },
      py::arg("annotations"), py::arg("strategy") = "quadtree", py::arg("count") = 100,
      py::arg("seed") = 0, py::arg("patch_w") = 1024, py::arg("patch_h") = 1024,
      "Patch origins as (x, y, anchor_id or None) tuples.");

  // agreement
  m.def(
      "cohen_kappa",
      [](const std::vector<int>& a, const std::vector<int>& b) {
        return eiph::cohen_kappa(a, b);
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "fleiss_kappa",
      [](const std::vector<std::array<int, 5>>& counts, int n_raters) {
        return eiph::fleiss_kappa(counts, n_raters);
      },
      py::arg("counts"), py::arg("n_raters"));

  // synthesis
  m.def(
      "generate",
      [](const std::filesystem::path& out_dir, std::int64_t width, std::int64_t height,
         std::int64_t cells, const std::array<double, 5>& mix, const std::string& mode,
         std::uint64_t seed, std::int64_t tile_size) {
        eiph::SynthConfig cfg;
        cfg.width = width;
        cfg.height = height;
        cfg.cell_count = cells;
        cfg.grade_mix = mix;
        cfg.spatial_mode = mode_from_string(mode);
        cfg.seed = seed;
        cfg.tile_size = tile_size;
        return generated_dict(eiph::generate(cfg, out_dir));
      },
      py::arg("out_dir"), py::arg("width") = 4096, py::arg("height") = 4096,
      py::arg("cells") = 200, py::arg("mix") = std::array<double, 5>{1, 1, 1, 1, 1},
      py::arg("mode") = "uniform", py::arg("seed") = 0, py::arg("tile_size") = 1024);
  m.def(
      "golden_fixture",
      [](const std::string& name, const std::filesystem::path& out_dir) {
        return generated_dict(eiph::golden_fixture(name, out_dir));
      },
      py::arg("name"), py::arg("out_dir"));

  // pipeline
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& manifest, const std::filesystem::path& annotations,
         std::uint64_t seed, int workers, double miss_rate, double jitter_sigma,
         double fp_per_mm2, std::int64_t tile, std::int64_t overlap) {
        const auto slide = eiph::open_slide(manifest);
        const auto gt = eiph::load_annotations(annotations);
        eiph::NoiseModel noise;
        noise.miss_rate = miss_rate;
        noise.jitter_sigma = jitter_sigma;
        noise.fp_per_mm2 = fp_per_mm2;
        noise.seed = seed;
        eiph::OracleDetector oracle(gt, noise);
        eiph::PipelineConfig cfg;
        cfg.tile_w = cfg.tile_h = tile;
        cfg.overlap = overlap;
        cfg.workers = workers;
        cfg.seed = seed;
        const auto result = eiph::run_pipeline(slide, oracle, cfg);
        return json_to_py(json::parse(eiph::result_json(result, slide.meta.id)));
      },
      py::arg("manifest"), py::arg("annotations"), py::arg("seed") = 0, py::arg("workers") = 2,
      py::arg("miss_rate") = 0.0, py::arg("jitter_sigma") = 0.0, py::arg("fp_per_mm2") = 0.0,
      py::arg("tile") = 1024, py::arg("overlap") = 128,
      "Oracle-detector pipeline run; returns the result.json payload as a dict.");
  m.def(
      "evaluate",
      [](const std::filesystem::path& gt_path, const std::filesystem::path& pred_path,
         double iou_thr) {
        const auto gt = eiph::load_annotations(gt_path);
        std::vector<eiph::Detection> pred;
        try {
          pred = eiph::load_detections(pred_path);
        } catch (const std::exception&) {
          const auto set = eiph::load_annotations(pred_path);
          for (const auto& c : set.cells) {
            eiph::Detection d;
            d.box = c.box;
            d.grade = c.grade;
            d.class_probs[static_cast<std::size_t>(c.grade)] = 1.0;
            d.confidence = 1.0;
            d.score = c.grade;
            pred.push_back(d);
          }
        }
        const auto report = eiph::match_detections(gt, pred, iou_thr);
        py::dict out;
        out["map"] = eiph::mean_average_precision(report);
        py::dict ap;
        for (int g = 0; g < eiph::kNumGrades; ++g) {
          if (report.gt_count[static_cast<std::size_t>(g)] == 0) continue;
          ap[py::int_(g)] = eiph::average_precision(report, g);
        }
        out["ap"] = ap;
        out["unmatched_gt"] = report.unmatched_gt.size();
        return out;
      },
      py::arg("gt"), py::arg("pred"), py::arg("iou_thr") = 0.5,
      "mAP between an annotations file and a detections/annotations file.");
}
