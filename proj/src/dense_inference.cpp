// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/dense_inference.hpp"

#include "ovseg/linalg.hpp"
#include "ovseg/parallel.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace ovseg {

void ActivationMap::validate(double tol) const {
  if (values.rows() != static_cast<Eigen::Index>(grid_h) * grid_w) {
    throw InputContractError("activation map rows do not match its grid");
  }
  if (!column_labels.empty() && static_cast<Eigen::Index>(column_labels.size()) != values.cols()) {
    throw InputContractError("activation map column labels do not match its width");
  }
  if (normalized && !is_row_stochastic(values, tol)) {
    throw InputContractError("activation map marked normalized is not row-stochastic");
  }
}

ActivationMap logits_from_similarities(const Matrix& similarities, int grid_h, int grid_w,
                                       std::vector<ColumnLabel> labels, double logit_scale) {
  if (similarities.cols() == 0) throw InputContractError("no queries");
  if (!(logit_scale > 0.0)) throw InputContractError("logit_scale must be positive");
  ActivationMap m;
  m.values = softmax_rows(similarities * logit_scale);
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.column_labels = std::move(labels);
  m.normalized = true;
  return m;
}

ActivationMap compute_logits(const PatchGrid& adapter_tokens, std::span<const TextQuery> queries, double logit_scale) {
  if (queries.empty()) throw InputContractError("compute_logits: queries must be non-empty");
  std::vector<Vector> emb;
  std::vector<ColumnLabel> labels;
  for (const auto& q : queries) {
    if (std::abs(q.embedding.norm() - 1.0) > 1e-5) {
      throw InputContractError("query '" + q.surface + "' embedding is not unit norm");
    }
    emb.push_back(q.embedding);
    labels.push_back({q.class_index, q.kind});
  }
  int zero_rows = 0;
  const Matrix sims = cosine_similarity(adapter_tokens.tokens, stack_rows(emb), &zero_rows);
  if (zero_rows > 0) {
    spdlog::warn("compute_logits: {} zero-norm patch token(s) in '{}' treated as cosine 0", zero_rows,
                 adapter_tokens.image_id);
  }
  return logits_from_similarities(sims, adapter_tokens.grid_h, adapter_tokens.grid_w, std::move(labels), logit_scale);
}

std::vector<int> row_argmax(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

struct Tap {
  int i0, i1;
  double f;
};

std::vector<Tap> taps(int src, int dst) {
  std::vector<Tap> out(static_cast<std::size_t>(dst));
  const double ratio = static_cast<double>(src) / dst;
  for (int k = 0; k < dst; ++k) {
    double s = (k + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    out[static_cast<std::size_t>(k)] = {i0, std::min(i0 + 1, src - 1), s - i0};
  }
  return out;
}

Matrix horizontal_pass(const Matrix& map, int h, int w, const std::vector<Tap>& tx) {
  const int nw = static_cast<int>(tx.size());
  const Eigen::Index c = map.cols();
  Matrix horiz(static_cast<Eigen::Index>(h) * nw, c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < nw; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const double* p0 = map.row(static_cast<Eigen::Index>(y) * w + b.i0).data();
      const double* p1 = map.row(static_cast<Eigen::Index>(y) * w + b.i1).data();
      double* dst = horiz.row(static_cast<Eigen::Index>(y) * nw + x).data();
      for (Eigen::Index k = 0; k < c; ++k) dst[k] = (1.0 - b.f) * p0[k] + b.f * p1[k];
    }
  }
  return horiz;
}

/// Adds the nh x nw bilinear resize of `map` into `canvas` (cw pixels wide)
/// at (y0, x0).
void add_resized(const Matrix& map, int h, int w, int nh, int nw, Matrix& canvas, int cw, int y0, int x0) {
  const Eigen::Index span = static_cast<Eigen::Index>(nw) * map.cols();
  if (nh == h && nw == w) {
    for (int y = 0; y < nh; ++y) {
      const double* src = map.row(static_cast<Eigen::Index>(y) * w).data();
      double* dst = canvas.row(static_cast<Eigen::Index>(y0 + y) * cw + x0).data();
      for (Eigen::Index k = 0; k < span; ++k) dst[k] += src[k];
    }
    return;
  }
  const auto ty = taps(h, nh);
  const Matrix horiz = horizontal_pass(map, h, w, taps(w, nw));
  for (int y = 0; y < nh; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    const double* r0 = horiz.row(static_cast<Eigen::Index>(a.i0) * nw).data();
    const double* r1 = horiz.row(static_cast<Eigen::Index>(a.i1) * nw).data();
    double* dst = canvas.row(static_cast<Eigen::Index>(y0 + y) * cw + x0).data();
    for (Eigen::Index k = 0; k < span; ++k) dst[k] += (1.0 - a.f) * r0[k] + a.f * r1[k];
  }
}

}  // namespace

Matrix resize_bilinear(const Matrix& map, int h, int w, int nh, int nw) {
  if (map.rows() != static_cast<Eigen::Index>(h) * w) throw InputContractError("resize_bilinear: shape mismatch");
  if (nh <= 0 || nw <= 0) throw InputContractError("resize_bilinear: non-positive target");
  if (nh == h && nw == w) return map;
  const auto ty = taps(h, nh);
  const Eigen::Index c = map.cols();
  const Matrix horiz = horizontal_pass(map, h, w, taps(w, nw));
  Matrix out(static_cast<Eigen::Index>(nh) * nw, c);
  for (int y = 0; y < nh; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    const double* r0 = horiz.row(static_cast<Eigen::Index>(a.i0) * nw).data();
    const double* r1 = horiz.row(static_cast<Eigen::Index>(a.i1) * nw).data();
    double* dst = out.row(static_cast<Eigen::Index>(y) * nw).data();
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(nw) * c; ++k) dst[k] = (1.0 - a.f) * r0[k] + a.f * r1[k];
  }
  return out;
}

Image resize_image(const Image& image, int nh, int nw) {
  if (nh == image.height && nw == image.width) return image;
  Matrix m(static_cast<Eigen::Index>(image.height) * image.width, image.channels);
  for (std::size_t k = 0; k < image.data.size(); ++k) {
    m(static_cast<Eigen::Index>(k / image.channels), static_cast<Eigen::Index>(k % image.channels)) = image.data[k];
  }
  const Matrix r = resize_bilinear(m, image.height, image.width, nh, nw);
  Image out{nh, nw, image.channels, std::vector<float>(static_cast<std::size_t>(r.size())), image.image_id};
  for (Eigen::Index i = 0; i < r.rows(); ++i)
    for (Eigen::Index c = 0; c < r.cols(); ++c) out.data[static_cast<std::size_t>(i * r.cols() + c)] = static_cast<float>(r(i, c));
  return out;
}

std::pair<int, int> short_side_shape(int h, int w, int short_side) {
  if (h <= 0 || w <= 0 || short_side <= 0) throw InputContractError("short_side_shape: non-positive size");
  if (h <= w) {
    return {short_side, static_cast<int>(std::lround(static_cast<double>(w) * short_side / h))};
  }
  return {static_cast<int>(std::lround(static_cast<double>(h) * short_side / w)), short_side};
}

std::vector<Window> plan_windows(int h, int w, int window, int stride) {
  if (window <= 0 || stride <= 0) throw InputContractError("window and stride must be positive");
  if (stride > window) throw InputContractError("stride must not exceed window");
  if (window > h || window > w) {
    throw InputContractError("window " + std::to_string(window) + " larger than image " + std::to_string(h) + "x" +
                             std::to_string(w));
  }
  const int rows = (h - window + stride - 1) / stride + 1;
  const int cols = (w - window + stride - 1) / stride + 1;
  std::vector<Window> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int y = std::min(r * stride, h - window);
      const int x = std::min(c * stride, w - window);
      out.push_back({y, x, window, window});
    }
  }
  return out;
}

Image crop_image(const Image& image, const Window& win) {
  if (win.y < 0 || win.x < 0 || win.y + win.h > image.height || win.x + win.w > image.width) {
    throw InputContractError("crop window outside the image");
  }
  Image out{win.h, win.w, image.channels, {}, image.image_id};
  out.data.resize(static_cast<std::size_t>(win.h) * win.w * image.channels);
  for (int y = 0; y < win.h; ++y) {
    const float* src = &image.data[(static_cast<std::size_t>(win.y + y) * image.width + win.x) * image.channels];
    std::copy(src, src + static_cast<std::size_t>(win.w) * image.channels,
              &out.data[static_cast<std::size_t>(y) * win.w * image.channels]);
  }
  return out;
}

std::vector<Window> plan_image_windows(int height, int width, const WindowParams& params) {
  const auto [rh, rw] = short_side_shape(height, width, params.short_side);
  return plan_windows(rh, rw, params.window, params.stride);
}

SegmentationResult fuse_windows(int height, int width, const WindowParams& params, std::span<const ActivationMap> maps,
                                bool keep_logits) {
  const auto [rh, rw] = short_side_shape(height, width, params.short_side);
  const auto windows = plan_windows(rh, rw, params.window, params.stride);
  if (maps.size() != windows.size()) {
    throw InputContractError("expected " + std::to_string(windows.size()) + " window maps, got " +
                             std::to_string(maps.size()));
  }
  const Eigen::Index classes = maps.front().values.cols();
  Matrix canvas = Matrix::Zero(static_cast<Eigen::Index>(rh) * rw, classes);
  std::vector<int> count(static_cast<std::size_t>(rh) * rw, 0);
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const Window& win = windows[k];
    const ActivationMap& m = maps[k];
    if (m.values.cols() != classes) throw InputContractError("window class maps disagree on class count");
    add_resized(m.values, m.grid_h, m.grid_w, win.h, win.w, canvas, rw, win.y, win.x);
    for (int y = 0; y < win.h; ++y) {
      const std::size_t row = static_cast<std::size_t>(win.y + y) * rw + win.x;
      for (int x = 0; x < win.w; ++x) ++count[row + x];
    }
  }
  for (Eigen::Index i = 0; i < canvas.rows(); ++i) {
    const int n = count[static_cast<std::size_t>(i)];
    if (n != 1) canvas.row(i) /= n;
  }

  Matrix full = (rh == height && rw == width) ? std::move(canvas) : resize_bilinear(canvas, rh, rw, height, width);
  SegmentationResult out;
  out.labels = LabelImage{height, width, row_argmax(full)};
  if (keep_logits) out.logits = std::move(full);
  return out;
}

SegmentationResult sliding_window_segment(const Image& image, const WindowParams& params, const WindowScorer& scorer,
                                          bool keep_logits, int jobs) {
  const auto [rh, rw] = short_side_shape(image.height, image.width, params.short_side);
  const Image resized = resize_image(image, rh, rw);
  const auto windows = plan_windows(rh, rw, params.window, params.stride);

  std::vector<ActivationMap> maps(windows.size());
  parallel_for(windows.size(), jobs, [&](std::size_t k) { maps[k] = scorer(crop_image(resized, windows[k]), k); });
  SegmentationResult out = fuse_windows(image.height, image.width, params, maps, keep_logits);
  out.image_id = image.image_id;
  return out;
}

}  // namespace ovseg
