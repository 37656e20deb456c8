// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Restores spatial awareness of adapter tokens by replacing the adapter's
// self-attention with the backbone token self-similarity.

#pragma once

#include "ovseg/encoder_backend.hpp"

namespace ovseg {

/// softmax(V V^T / sqrt(d)) row-wise, d = full token dimension.
Matrix self_similarity_attention(const PatchGrid& v);

/// Adapter forward with the self-similarity of `v` injected into every
/// adapter block (computed once from V, shared by all blocks).
PatchGrid corrected_adapter_forward(const PatchGrid& v, const EncoderBackend& backend);

/// corrected_adapter_forward when `enabled`, the native adapter otherwise.
PatchGrid adapter_tokens(const PatchGrid& v, const EncoderBackend& backend, bool enabled);

}  // namespace ovseg
