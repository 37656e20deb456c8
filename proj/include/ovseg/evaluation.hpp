// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset configuration, confusion-matrix mIoU, cost measurement and the
// feature-space diagnostics (refined-vs-original token similarity and
// patch-to-text similarity per ground-truth class).

#pragma once

#include "ovseg/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ovseg {

struct DatasetImage {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
};

struct DatasetSpec {
  std::string name;
  std::vector<DatasetImage> images;
  std::vector<std::string> classes;
  int ignore_index = 255;
  bool has_background = false;
  int short_side = 336;
  int window = 224;
  int stride = 112;

  void validate() const;
  /// Relative image/mask paths resolve against `base_dir`.
  static DatasetSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static DatasetSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Rows are ground truth, columns prediction. Predictions outside [0, C)
/// count against the ground-truth class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(const LabelImage& prediction, const LabelImage& ground_truth, int ignore_index);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return classes_; }
  std::int64_t at(int truth, int predicted) const;
  /// Ground-truth pixels of `truth` predicted as an invalid label.
  std::int64_t invalid(int truth) const { return counts_[static_cast<std::size_t>(truth) * (classes_ + 1) + classes_]; }

  /// IoU per class; absent for classes missing from both prediction and
  /// ground truth.
  std::vector<std::optional<double>> iou() const;
  double mean_iou() const;
  double pixel_accuracy() const;

 private:
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct MetricReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::optional<double> mean_ms;
  std::optional<double> peak_mb;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
  std::string per_class_csv() const;
};

MetricReport compute_miou(std::span<const LabelImage> predictions, std::span<const LabelImage> ground_truth,
                          int num_classes, int ignore_index);

/// Majority label of the pixels falling in each patch cell; cells with only
/// ignored pixels get `ignore_index`.
LabelImage downsample_mask(const LabelImage& mask, int grid_h, int grid_w, int ignore_index);

/// Per-class mean of per-patch cosine(refined_i, original_i) over patches of
/// that class in `patch_labels` (grid resolution). Absent for empty classes.
std::vector<std::optional<double>> intra_class_similarity(const PatchGrid& refined, const PatchGrid& original,
                                                          const LabelImage& patch_labels, int num_classes);

/// Per-class mean cosine between that class's patches and the class's text
/// embedding. `class_queries[c]` is the query of class c.
std::vector<std::optional<double>> image_text_similarity(const PatchGrid& tokens,
                                                         std::span<const TextQuery> class_queries,
                                                         const LabelImage& patch_labels);

struct CostMeasurement {
  double mean_ms = 0.0;
  double peak_mb = 0.0;
  std::size_t images = 0;
  std::string memory_metric = "peak resident set size of the process";
};

/// Runs `run(0)` once untimed, then times `run(i)` for every i and reports
/// the mean wall time and the process peak resident memory.
CostMeasurement measure_cost(std::size_t num_images, const std::function<void(std::size_t)>& run);

double peak_resident_mb();

}  // namespace ovseg
