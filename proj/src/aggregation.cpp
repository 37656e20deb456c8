// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/aggregation.hpp"

#include "ovseg/encoder_backend.hpp"
#include "ovseg/linalg.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

namespace ovseg {

Vector saliency_from_responses(const Vector& responses) {
  if (responses.size() == 0) throw InputContractError("saliency factors need K >= 1");
  return softmax(responses);
}

Vector saliency_factors(const PatchGrid& adapter_tokens, std::span<const TextQuery> class_queries) {
  if (class_queries.empty()) throw InputContractError("saliency factors need K >= 1");
  const GlobalImageFeature g = global_pool(adapter_tokens);
  std::vector<Vector> emb;
  for (const auto& q : class_queries) emb.push_back(q.embedding);
  if (g.vector.norm() == 0.0) {
    spdlog::warn("saliency factors: zero global feature for '{}', using uniform weights", adapter_tokens.image_id);
    return Vector::Constant(static_cast<Eigen::Index>(class_queries.size()), 1.0 / class_queries.size());
  }
  const Matrix cos = cosine_similarity(g.vector.transpose(), stack_rows(emb));
  return saliency_from_responses(cos.row(0).transpose());
}

Matrix modulate(const Matrix& m_hat_c, const Vector& delta) {
  if (m_hat_c.cols() != delta.size()) throw InputContractError("modulate: K mismatch");
  return m_hat_c * delta.asDiagonal();
}

Vector free_energy_aggregate(const Matrix& s, double tau) {
  if (!(tau > 0.0)) throw InputContractError("free energy: tau must be positive");
  if (s.cols() == 0) throw InputContractError("free energy: K must be >= 1");
  Vector out(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double m = s.row(i).maxCoeff();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < s.cols(); ++k) acc += std::exp(tau * (s(i, k) - m));
    out(i) = m + std::log(acc) / tau;
  }
  return out;
}

std::string to_string(AggregationMode mode) {
  switch (mode) {
    case AggregationMode::kFreeEnergy:
      return "free_energy";
    case AggregationMode::kMax:
      return "max";
    case AggregationMode::kMean:
      return "mean";
  }
  return "unknown";
}

AggregationMode aggregation_mode_from_string(const std::string& s) {
  if (s == "free_energy") return AggregationMode::kFreeEnergy;
  if (s == "max") return AggregationMode::kMax;
  if (s == "mean") return AggregationMode::kMean;
  throw ConfigError("unknown aggregation mode '" + s + "'");
}

std::string to_string(SoftmaxScope scope) { return scope == SoftmaxScope::kUnion ? "union" : "per_class"; }

SoftmaxScope softmax_scope_from_string(const std::string& s) {
  if (s == "union") return SoftmaxScope::kUnion;
  if (s == "per_class") return SoftmaxScope::kPerClass;
  throw ConfigError("unknown softmax scope '" + s + "'");
}

ActivationMap assemble_class_map(std::span<const Vector> per_class, int grid_h, int grid_w) {
  if (per_class.empty()) throw InputContractError("assemble_class_map: no class columns");
  const Eigen::Index n = static_cast<Eigen::Index>(grid_h) * grid_w;
  ActivationMap m;
  m.values.resize(n, static_cast<Eigen::Index>(per_class.size()));
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c].size() != n) {
      throw InputContractError("assemble_class_map: class " + std::to_string(c) + " column is missing or misshaped");
    }
    m.values.col(static_cast<Eigen::Index>(c)) = per_class[c];
    m.column_labels.push_back({static_cast<int>(c), QueryKind::kCanonical});
  }
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  m.normalized = false;
  return m;
}

ActivationMap aggregate_window(const Matrix& similarities, const Vector& global_responses,
                               std::span<const int> query_class, int num_classes, int grid_h, int grid_w,
                               const AggregationParams& params) {
  const auto q = static_cast<std::size_t>(similarities.cols());
  if (query_class.size() != q || static_cast<std::size_t>(global_responses.size()) != q) {
    throw InputContractError("aggregate_window: query metadata does not match similarity columns");
  }
  std::vector<std::vector<Eigen::Index>> cols(static_cast<std::size_t>(num_classes));
  for (std::size_t k = 0; k < q; ++k) {
    if (query_class[k] < 0 || query_class[k] >= num_classes) throw InputContractError("query class out of range");
    cols[static_cast<std::size_t>(query_class[k])].push_back(static_cast<Eigen::Index>(k));
  }

  Matrix m_hat;
  if (params.scope == SoftmaxScope::kUnion) {
    m_hat = logits_from_similarities(similarities, grid_h, grid_w, {}, params.logit_scale).values;
  }

  std::vector<Vector> per_class(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const auto& idx = cols[static_cast<std::size_t>(c)];
    if (idx.empty()) throw InputContractError("class " + std::to_string(c) + " has no retained query");
    Matrix mc = params.scope == SoftmaxScope::kUnion
                    ? Matrix(m_hat(Eigen::all, idx))
                    : logits_from_similarities(similarities(Eigen::all, idx), grid_h, grid_w, {}, params.logit_scale)
                          .values;
    switch (params.mode) {
      case AggregationMode::kFreeEnergy: {
        const Vector delta = saliency_from_responses(global_responses(idx));
        per_class[static_cast<std::size_t>(c)] = free_energy_aggregate(modulate(mc, delta), params.tau);
        break;
      }
      case AggregationMode::kMax:
        per_class[static_cast<std::size_t>(c)] = mc.rowwise().maxCoeff();
        break;
      case AggregationMode::kMean:
        per_class[static_cast<std::size_t>(c)] = mc.rowwise().mean();
        break;
    }
  }
  return assemble_class_map(per_class, grid_h, grid_w);
}

}  // namespace ovseg
