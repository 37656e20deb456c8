// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Core value types shared by every stage of the pipeline.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovseg {

/// Dense row-major matrix used for all in-memory math. Caches on disk are
/// float32; values are widened on load.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Error taxonomy. Every failure the pipeline reports maps onto one of these.

/// Caller violated an operation precondition (shape, range, missing placeholder).
class InputContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The encoder produced something unusable (non-finite activations, unknown prompt).
class BackendFaultError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file did not parse against its schema.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent configuration (dataset/threshold mismatch, bad flag values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TokenSource { kBackbone, kAdapter };

/// Patch tokens of one image (or one sliding window of it), hw x d.
struct PatchGrid {
  Matrix tokens;
  int grid_h = 0;
  int grid_w = 0;
  TokenSource source = TokenSource::kBackbone;
  std::string image_id;

  int num_patches() const { return grid_h * grid_w; }
  int dim() const { return static_cast<int>(tokens.cols()); }

  /// Throws InputContractError unless hw == grid_h * grid_w, d > 0 and all
  /// entries are finite.
  void validate() const;
};

/// Per-layer row-stochastic patch affinities from the backbone.
struct AttentionStack {
  std::vector<Matrix> layers;

  int layer_count() const { return static_cast<int>(layers.size()); }
  void validate(double tol = 1e-5) const;
};

enum class QueryKind { kCanonical, kAlias, kTemplateInstance };

std::string to_string(QueryKind kind);
QueryKind query_kind_from_string(const std::string& s);

struct TextQuery {
  int class_index = 0;
  std::string surface;
  QueryKind kind = QueryKind::kCanonical;
  Vector embedding;
};

struct GlobalImageFeature {
  Vector vector;
  std::string image_id;
};

/// Row-major float32 pixel tensor, height x width x channels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;
  std::string image_id;

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

/// Integer label image, row-major.
struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

bool all_finite(const Matrix& m);

/// True when every row sums to 1 within tol and no entry is negative.
bool is_row_stochastic(const Matrix& m, double tol = 1e-5);

}  // namespace ovseg
