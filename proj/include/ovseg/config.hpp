// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration shared by every subcommand. Values resolve as
// flags > config file > defaults; the resolved object is echoed into run
// manifests and reports.

#pragma once

#include "ovseg/aggregation.hpp"
#include "ovseg/distillation.hpp"
#include "ovseg/encoder_backend.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>

namespace ovseg {

/// How datasets with a background class (index 0) score it: through its own
/// text queries in the shared softmax, or as every pixel whose best
/// foreground score stays below `background_threshold`.
enum class BackgroundMode { kQueries, kThreshold };
std::string to_string(BackgroundMode mode);
BackgroundMode background_mode_from_string(const std::string& s);

struct RunConfig {
  nlohmann::json backend = {{"type", "synthetic"}};
  std::filesystem::path base_dir = ".";
  std::filesystem::path cache_dir = "cache";

  double alpha = 2.0;
  int beta = 2;
  double tau = 4.0;
  double threshold = 0.4;
  double gate = 0.7;
  /// Overrides the backend's learned scale; 100 when neither is set.
  std::optional<double> logit_scale;
  bool self_correction = true;
  AggregationMode aggregation = AggregationMode::kFreeEnergy;
  SoftmaxScope softmax_scope = SoftmaxScope::kUnion;
  VgScope vg_scope = VgScope::kRestricted;
  int min_support = 5;
  bool anchor_only_when_unsupported = false;
  BackgroundMode background = BackgroundMode::kQueries;
  double background_threshold = 0.5;
  int jobs = 1;
  /// Limit on images used for scoring; unset means the whole dataset.
  std::optional<int> max_images;

  /// Parses a config object. Unknown keys and out-of-range values throw
  /// ConfigError. Keys absent from `j` keep their current value.
  void apply(const nlohmann::json& j);
  void validate() const;
  nlohmann::json to_json() const;

  /// Defaults, then `file` (if any), then `overrides`. VIP_CACHE_DIR, when
  /// set, replaces the cache root unless `overrides` sets cache_dir.
  static RunConfig resolve(const std::optional<std::filesystem::path>& file, const nlohmann::json& overrides);

  double effective_logit_scale(const EncoderBackend& backend) const;
  ScoringParams scoring_params(const EncoderBackend& backend) const;
  AggregationParams aggregation_params(const EncoderBackend& backend) const;
  FilterPolicy filter_policy() const;
};

}  // namespace ovseg
