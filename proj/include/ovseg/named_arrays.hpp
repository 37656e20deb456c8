// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-array container used for feature caches, similarity caches, logits
// caches and checkpoints. The on-disk layout is the safetensors format: an
// 8-byte little-endian header length, a JSON header mapping names to
// {dtype, shape, data_offsets}, then the raw little-endian payload. Only F32
// is written; F32, F64 and I64 are accepted on read.

#pragma once

#include "ovseg/types.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ovseg {

struct NamedArray {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  std::int64_t numel() const;
};

class NamedArrays {
 public:
  void put(const std::string& name, NamedArray array);
  void put_matrix(const std::string& name, const Matrix& m);
  void put_vector(const std::string& name, const std::vector<double>& v);

  bool contains(const std::string& name) const { return arrays_.count(name) > 0; }
  const NamedArray& get(const std::string& name) const;

  /// 2-D array as a Matrix. 1-D arrays become a single row.
  Matrix matrix(const std::string& name) const;
  std::vector<double> vector(const std::string& name) const;

  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }
  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static NamedArrays load(const std::filesystem::path& path);

 private:
  std::map<std::string, NamedArray> arrays_;
  std::map<std::string, std::string> metadata_;
};

}  // namespace ovseg
