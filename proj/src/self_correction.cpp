// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/self_correction.hpp"

#include "ovseg/linalg.hpp"

#include <cmath>

namespace ovseg {

Matrix self_similarity_attention(const PatchGrid& v) {
  if (v.tokens.cols() == 0) throw InputContractError("self_similarity_attention: d = 0");
  if (!all_finite(v.tokens)) throw InputContractError("self_similarity_attention: non-finite tokens");
  const double scale = 1.0 / std::sqrt(static_cast<double>(v.tokens.cols()));
  return softmax_rows((v.tokens * v.tokens.transpose()) * scale);
}

PatchGrid corrected_adapter_forward(const PatchGrid& v, const EncoderBackend& backend) {
  const Matrix attn = self_similarity_attention(v);
  const std::vector<Matrix> injected(static_cast<std::size_t>(backend.adapter_blocks()), attn);
  return backend.adapter_forward(v, injected);
}

PatchGrid adapter_tokens(const PatchGrid& v, const EncoderBackend& backend, bool enabled) {
  return enabled ? corrected_adapter_forward(v, backend) : backend.adapter_forward(v);
}

}  // namespace ovseg
