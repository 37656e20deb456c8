// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/types.hpp"

#include <cmath>

namespace ovseg {

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool is_row_stochastic(const Matrix& m, double tol) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) < 0.0 || !std::isfinite(m(i, j))) return false;
      sum += m(i, j);
    }
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

void PatchGrid::validate() const {
  if (grid_h <= 0 || grid_w <= 0) throw InputContractError("patch grid has non-positive extent");
  if (tokens.rows() != static_cast<Eigen::Index>(grid_h) * grid_w) {
    throw InputContractError("patch grid: token count " + std::to_string(tokens.rows()) +
                             " != grid_h*grid_w " + std::to_string(grid_h * grid_w));
  }
  if (tokens.cols() == 0) throw InputContractError("patch grid: feature dimension is zero");
  if (!all_finite(tokens)) throw InputContractError("patch grid: non-finite token entries");
}

void AttentionStack::validate(double tol) const {
  if (layers.empty()) throw InputContractError("attention stack is empty");
  const auto n = layers.front().rows();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Matrix& a = layers[l];
    if (a.rows() != n || a.cols() != n) {
      throw InputContractError("attention layer " + std::to_string(l) + " has shape " +
                               std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                               ", expected " + std::to_string(n) + "x" + std::to_string(n));
    }
    if (!is_row_stochastic(a, tol)) {
      throw InputContractError("attention layer " + std::to_string(l) + " is not row-stochastic");
    }
  }
}

std::string to_string(QueryKind kind) {
  switch (kind) {
    case QueryKind::kCanonical:
      return "canonical";
    case QueryKind::kAlias:
      return "alias";
    case QueryKind::kTemplateInstance:
      return "template_instance";
  }
  return "unknown";
}

QueryKind query_kind_from_string(const std::string& s) {
  if (s == "canonical") return QueryKind::kCanonical;
  if (s == "alias") return QueryKind::kAlias;
  if (s == "template_instance") return QueryKind::kTemplateInstance;
  throw ParseError("unknown query kind '" + s + "'");
}

}  // namespace ovseg
