// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ovseg/types.hpp"

#include <span>

namespace ovseg {

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Softmax of a vector with max subtraction.
Vector softmax(const Vector& logits);

/// Cosine similarity between every row of `a` and every row of `b`
/// ([n x d] x [m x d] -> [n x m]). Zero-norm rows give cosine 0 against
/// everything; `zero_rows` (optional) receives how many rows of `a` were zero.
Matrix cosine_similarity(const Matrix& a, const Matrix& b, int* zero_rows = nullptr);

/// Stack vectors as the rows of a matrix.
Matrix stack_rows(std::span<const Vector> rows);

/// Returns v / |v|; throws InputContractError on a zero vector.
Vector normalized(const Vector& v);

/// Round every entry through float32, the precision of the on-disk caches.
Matrix quantize_f32(const Matrix& m);

}  // namespace ovseg
