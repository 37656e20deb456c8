// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense image-text activation maps, sliding-window fusion, bilinear
// resampling and the final argmax.

#pragma once

#include "ovseg/types.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ovseg {

struct ColumnLabel {
  int class_index = 0;
  QueryKind kind = QueryKind::kCanonical;

  bool operator==(const ColumnLabel&) const = default;
};

/// Per-patch activation over a set of queries or classes, [hw x C'].
struct ActivationMap {
  Matrix values;
  int grid_h = 0;
  int grid_w = 0;
  std::vector<ColumnLabel> column_labels;
  bool normalized = false;

  void validate(double tol = 1e-5) const;
};

struct SegmentationResult {
  LabelImage labels;
  /// Per-pixel class scores [H*W x C] when requested.
  std::optional<Matrix> logits;
  std::string image_id;
};

/// softmax over queries of logit_scale * cosine(I, T). Zero-norm patch tokens
/// get cosine 0 against every query (and are logged).
ActivationMap compute_logits(const PatchGrid& adapter_tokens, std::span<const TextQuery> queries, double logit_scale);

/// Same normalization starting from precomputed cosine similarities [hw x Q].
ActivationMap logits_from_similarities(const Matrix& similarities, int grid_h, int grid_w,
                                       std::vector<ColumnLabel> labels, double logit_scale);

/// Index of the row maximum per row (lowest index on ties).
std::vector<int> row_argmax(const Matrix& m);

/// Bilinear resampling of a row-major [h*w x C] map to [nh*nw x C] with
/// half-pixel centers and edge clamping.
Matrix resize_bilinear(const Matrix& map, int h, int w, int nh, int nw);

Image resize_image(const Image& image, int nh, int nw);

/// Shape after scaling the shorter side to `short_side`, keeping aspect.
std::pair<int, int> short_side_shape(int h, int w, int short_side);

struct Window {
  int y = 0;
  int x = 0;
  int h = 0;
  int w = 0;
};

/// Window origins in row-major order. Windows are `window` wide and tall,
/// stepped by `stride`; the last row/column is shifted to end at the border.
std::vector<Window> plan_windows(int h, int w, int window, int stride);

struct WindowParams {
  int short_side = 336;
  int window = 224;
  int stride = 112;
};

Image crop_image(const Image& image, const Window& win);

/// Windows of the short-side-resized image in canonical (row-major) order.
std::vector<Window> plan_image_windows(int height, int width, const WindowParams& params);

/// Upsamples every window map bilinearly to window pixels, sums overlapping
/// windows and divides by per-pixel coverage, resamples to height x width and
/// takes the argmax. `maps` follow plan_image_windows order.
SegmentationResult fuse_windows(int height, int width, const WindowParams& params, std::span<const ActivationMap> maps,
                                bool keep_logits = false);

/// Returns a patch-level class map for one window crop.
using WindowScorer = std::function<ActivationMap(const Image& crop, std::size_t window_index)>;

/// Resizes `image` by the short-side rule, scores each window crop and fuses
/// the maps with fuse_windows. Maps are reduced in window order, so any
/// parallel scorer gives the same result.
SegmentationResult sliding_window_segment(const Image& image, const WindowParams& params, const WindowScorer& scorer,
                                          bool keep_logits = false, int jobs = 1);

}  // namespace ovseg
