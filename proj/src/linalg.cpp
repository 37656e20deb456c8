// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/linalg.hpp"

#include <cmath>

namespace ovseg {

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - m);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector out = (logits.array() - m).exp().matrix();
  return out / out.sum();
}

Matrix cosine_similarity(const Matrix& a, const Matrix& b, int* zero_rows) {
  if (a.cols() != b.cols()) {
    throw InputContractError("cosine_similarity: dimension mismatch " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.cols()));
  }
  Vector an = a.rowwise().norm();
  Vector bn = b.rowwise().norm();
  int zeros = 0;
  Matrix out = a * b.transpose();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (an(i) == 0.0) {
      ++zeros;
      out.row(i).setZero();
      continue;
    }
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = bn(j) == 0.0 ? 0.0 : out(i, j) / (an(i) * bn(j));
    }
  }
  if (zero_rows) *zero_rows = zeros;
  return out;
}

Matrix stack_rows(std::span<const Vector> rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != out.cols()) throw InputContractError("stack_rows: ragged vectors");
    out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return out;
}

Vector normalized(const Vector& v) {
  const double n = v.norm();
  if (n == 0.0 || !std::isfinite(n)) throw InputContractError("cannot normalize a zero or non-finite vector");
  return v / n;
}

Matrix quantize_f32(const Matrix& m) {
  return m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

}  // namespace ovseg
