// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ovseg/types.hpp"

#include <filesystem>

namespace ovseg {

/// Reads an RGB image (png/jpg/bmp, scaled to [0,1]) or a named-array tensor
/// file holding "pixels" [H, W, C] (any other extension).
Image load_image(const std::filesystem::path& path, const std::string& image_id = "");
void save_image_tensor(const std::filesystem::path& path, const Image& image);

/// Single-channel indexed label image (png) or a tensor file holding "labels" [H, W].
LabelImage load_mask(const std::filesystem::path& path);
/// Writes an 8-bit (or 16-bit when labels exceed 255) single-channel png.
void save_mask(const std::filesystem::path& path, const LabelImage& mask);

}  // namespace ovseg
