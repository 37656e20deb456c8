// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stage orchestration: per-image feature extraction and caching, the
// per-image similarity table, alias distillation over a dataset, template
// filtering, segmentation, evaluation and diagnostics.
//
// All features pass through float32 on extraction, so a run from cached
// files and a run from fresh forwards see identical numbers.

#pragma once

#include "ovseg/aggregation.hpp"
#include "ovseg/alias_pool.hpp"
#include "ovseg/config.hpp"
#include "ovseg/dense_inference.hpp"
#include "ovseg/distillation.hpp"
#include "ovseg/encoder_backend.hpp"
#include "ovseg/evaluation.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ovseg {

WindowParams window_params(const DatasetSpec& dataset);

// ---------------------------------------------------------------------------
// Features.

struct WindowFeatures {
  Window window;
  PatchGrid v;
  PatchGrid i;
  AttentionStack attention;
};

struct ImageFeatures {
  std::string image_id;
  int height = 0;  // original image size
  int width = 0;
  std::vector<WindowFeatures> windows;
  bool self_correction = true;
  std::string fingerprint;

  std::string source() const;
};

/// Runs backbone and adapter on every window of the short-side-resized image.
/// Tokens and attention are rounded to float32.
ImageFeatures extract_image_features(const Image& image, const EncoderBackend& backend, const WindowParams& params,
                                     bool self_correction);

/// `{image_id}.feat`: per window k, "w{k}.V", "w{k}.I", "w{k}.attn_{l}",
/// "w{k}.grid" [2] and "w{k}.origin" [4] (y, x, h, w); plus "image_size" [2].
void save_features(const std::filesystem::path& path, const ImageFeatures& features);
ImageFeatures load_features(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Similarities.

struct QueryManifestEntry {
  int class_index = 0;
  std::string surface;
  QueryKind kind = QueryKind::kCanonical;
  std::string hash;  // of the surface and the float32 embedding

  bool operator==(const QueryManifestEntry&) const = default;
};

QueryManifestEntry manifest_entry(const TextQuery& q);

struct WindowSimilarities {
  Window window;
  int grid_h = 0;
  int grid_w = 0;
  Matrix similarities;      // [hw x Q] cosine(I, T_q)
  Vector global_responses;  // [Q] cosine(GAP(I), T_q)
  Matrix affinity;          // [hw x hw] mean backbone attention
};

/// Everything distillation and segmentation need from one image, with no
/// reference to the encoder. Values are float32-rounded.
struct SimilarityTable {
  std::string image_id;
  int height = 0;
  int width = 0;
  /// Backend fingerprint and self-correction setting of the features.
  std::string source;
  std::vector<QueryManifestEntry> queries;
  std::vector<WindowSimilarities> windows;

  static SimilarityTable build(const ImageFeatures& features, std::span<const TextQuery> queries);

  /// Column of each requested query, or nullopt if any is missing.
  std::optional<std::vector<int>> columns_of(std::span<const TextQuery> queries) const;
  /// Table restricted to `columns`, in that order.
  SimilarityTable select(std::span<const int> columns) const;

  std::vector<ScoringWindow> scoring_windows() const;

  /// `{image_id}.sims`; the query manifest is stored as JSON metadata.
  void save(const std::filesystem::path& path) const;
  static SimilarityTable load(const std::filesystem::path& path);
};

/// Canonical column of each class and the class of each query. Throws
/// InputContractError if a class lacks a canonical query.
QueryLayout make_layout(std::span<const TextQuery> queries, int num_classes);

// ---------------------------------------------------------------------------
// Segmentation from a similarity table.

struct SegmentOptions {
  WindowParams windows;
  AggregationParams aggregation;
  /// Plain argmax of the softmax-cosine map with no alias fusion; needs
  /// exactly one query per class.
  bool plain = false;
  /// Threshold background: class 0 wins where every other class scores below
  /// this. Unset means background competes through its own queries.
  std::optional<double> background_threshold;
  bool keep_logits = false;
};

/// `query_class[q]` is the class of column q of `table`.
SegmentationResult segment_from_table(const SimilarityTable& table, std::span<const int> query_class, int num_classes,
                                      const SegmentOptions& options);

// ---------------------------------------------------------------------------
// Dataset-level stages.

/// Shared state of a run: resolved config, dataset and backend.
struct PipelineContext {
  RunConfig config;
  std::filesystem::path dataset_path;
  DatasetSpec dataset;
  std::unique_ptr<EncoderBackend> backend;

  static PipelineContext create(RunConfig config, const std::filesystem::path& dataset_path);

  std::filesystem::path feature_path(const std::string& image_id) const;
  std::filesystem::path sims_path(const std::string& image_id) const;
  /// Images used for scoring: the first max_images of the dataset.
  std::size_t scoring_image_count() const;
  SegmentOptions segment_options(bool keep_logits = false) const;
};

struct StageFailure {
  std::string image_id;
  std::string reason;
};

struct ExtractReport {
  std::size_t written = 0;
  std::size_t reused = 0;
  std::vector<StageFailure> failures;
  nlohmann::json to_json() const;
};

/// Writes `{image_id}.feat` for every image. Existing caches made with the
/// same backend fingerprint and self-correction setting are kept unless
/// `force` is set.
ExtractReport run_extract(const PipelineContext& ctx, bool force);

/// Cached features when compatible with the run, fresh ones otherwise.
ImageFeatures obtain_features(const PipelineContext& ctx, const DatasetImage& image);

/// Similarity table over `queries`, from `{image_id}.sims` when it covers them.
SimilarityTable obtain_similarities(const PipelineContext& ctx, const DatasetImage& image,
                                    std::span<const TextQuery> queries, bool write_cache);

struct DistillResult {
  std::vector<AliasScoreRecord> records;
  Vocabulary filtered;
  std::vector<StageFailure> skipped;
};

/// Scores every query of `candidates` over the scoring images (writing the
/// similarity caches), filters against the anchors and returns the filtered
/// vocabulary.
DistillResult run_distill(const PipelineContext& ctx, const Vocabulary& candidates);

/// class,surface,kind,vg_score,vg_count,sc_score,sc_count,decision,reason
std::string score_report_csv(std::span<const AliasScoreRecord> records, std::span<const std::string> class_names);

/// Scores each template by wrapping every retained query of `vocabulary` in
/// that template alone and substituting it for its class's canonical
/// ensemble; the template's VG and SC are the means over those queries.
std::vector<TemplateScore> score_templates(const PipelineContext& ctx, const Vocabulary& vocabulary,
                                           const std::vector<std::string>& templates);

struct SegmentReport {
  std::vector<SegmentationResult> results;
  std::vector<StageFailure> failures;
  double mean_ms = 0.0;
  double peak_mb = 0.0;
};

/// Segments every image with `vocabulary`. When `out_dir` is set, writes
/// `{image_id}.png` masks (and `{image_id}.logits` when `keep_logits`).
/// `plain` segments with canonical names only and no alias fusion.
SegmentReport run_segment(const PipelineContext& ctx, const Vocabulary& vocabulary,
                          const std::optional<std::filesystem::path>& out_dir, bool keep_logits = false,
                          bool plain = false);

/// Loads `{image_id}.png` predictions from `pred_dir`.
MetricReport run_evaluate(const DatasetSpec& dataset, const std::filesystem::path& pred_dir);
MetricReport evaluate_results(const DatasetSpec& dataset, std::span<const SegmentationResult> results);

struct PipelineOutputs {
  MetricReport report;
  nlohmann::json manifest;
};

/// ingest -> distill -> (template filter) -> segment -> evaluate. Writes
/// vocab.json, scores.csv, masks/, report.json, per_class.csv and
/// manifest.json under `out_dir`.
PipelineOutputs run_pipeline(const PipelineContext& ctx, const std::optional<std::filesystem::path>& candidates_path,
                             const std::optional<std::filesystem::path>& templates_path,
                             const std::optional<std::filesystem::path>& template_candidates_path,
                             const std::filesystem::path& out_dir);

/// Per-class intra-class similarity between self-corrected and native
/// adapter tokens, and their similarity to the canonical class embedding.
/// Returns CSV: class,patches,intra_class_similarity,text_similarity_native,
/// text_similarity_corrected.
std::string run_diagnose(const PipelineContext& ctx, const Vocabulary& vocabulary);

/// Candidate vocabulary from an alias file, gated by text similarity.
struct IngestResult {
  Vocabulary vocabulary;
  std::vector<std::string> rejections;
  std::vector<AliasCandidate> gated_out;
};
IngestResult ingest_candidates(const std::filesystem::path& aliases, const std::vector<std::string>& class_names,
                               const std::string& dataset_name, const std::vector<std::string>& templates,
                               const EncoderBackend& backend, double gate);

}  // namespace ovseg
