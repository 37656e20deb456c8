// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Saliency-weighted free-energy fusion of per-alias activation maps into one
// map per class.

#pragma once

#include "ovseg/dense_inference.hpp"
#include "ovseg/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace ovseg {

/// delta = softmax_k cosine(GAP(I), T_k).
Vector saliency_factors(const PatchGrid& adapter_tokens, std::span<const TextQuery> class_queries);

/// delta from precomputed global responses g_k. A vector of zeros (the
/// degenerate zero-feature case) gives uniform weights.
Vector saliency_from_responses(const Vector& responses);

/// S[:, k] = delta_k * M_hat[:, k].
Matrix modulate(const Matrix& m_hat_c, const Vector& delta);

/// (1/tau) * log sum_k exp(tau * S[i, k]) per row, with max subtraction.
Vector free_energy_aggregate(const Matrix& s, double tau);

enum class AggregationMode { kFreeEnergy, kMax, kMean };
std::string to_string(AggregationMode mode);
AggregationMode aggregation_mode_from_string(const std::string& s);

/// Whether alias maps are normalized over every retained query of every
/// class, or over each class's own queries.
enum class SoftmaxScope { kUnion, kPerClass };
std::string to_string(SoftmaxScope scope);
SoftmaxScope softmax_scope_from_string(const std::string& s);

/// Stacks one column per class. Throws InputContractError if a column is
/// missing or the lengths differ.
ActivationMap assemble_class_map(std::span<const Vector> per_class, int grid_h, int grid_w);

struct AggregationParams {
  double logit_scale = 100.0;
  double tau = 4.0;
  AggregationMode mode = AggregationMode::kFreeEnergy;
  SoftmaxScope scope = SoftmaxScope::kUnion;
};

/// Class map for one window from cosine similarities of the retained queries.
/// `similarities` is [hw x Q], `global_responses` holds cosine(GAP(I), T_q)
/// and `query_class` the class of each column. Mean and max modes fuse the
/// unweighted alias maps.
ActivationMap aggregate_window(const Matrix& similarities, const Vector& global_responses,
                               std::span<const int> query_class, int num_classes, int grid_h, int grid_w,
                               const AggregationParams& params);

}  // namespace ovseg
