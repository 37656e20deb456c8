// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/named_arrays.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

namespace ovseg {

static_assert(std::endian::native == std::endian::little, "named-array I/O assumes little-endian host");

std::int64_t NamedArray::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void NamedArrays::put(const std::string& name, NamedArray array) {
  if (array.numel() != static_cast<std::int64_t>(array.values.size())) {
    throw InputContractError("named array '" + name + "': shape does not match value count");
  }
  arrays_[name] = std::move(array);
}

void NamedArrays::put_matrix(const std::string& name, const Matrix& m) {
  NamedArray a;
  a.shape = {m.rows(), m.cols()};
  a.values.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      a.values[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  put(name, std::move(a));
}

void NamedArrays::put_vector(const std::string& name, const std::vector<double>& v) {
  NamedArray a;
  a.shape = {static_cast<std::int64_t>(v.size())};
  a.values.assign(v.begin(), v.end());
  put(name, std::move(a));
}

const NamedArray& NamedArrays::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw ParseError("named array '" + name + "' not present");
  return it->second;
}

Matrix NamedArrays::matrix(const std::string& name) const {
  const NamedArray& a = get(name);
  Eigen::Index rows = 1, cols = 0;
  if (a.shape.size() == 1) {
    cols = a.shape[0];
  } else if (a.shape.size() == 2) {
    rows = a.shape[0];
    cols = a.shape[1];
  } else {
    throw ParseError("named array '" + name + "' is not 1-D or 2-D");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = a.values[static_cast<std::size_t>(i * cols + j)];
  return m;
}

std::vector<double> NamedArrays::vector(const std::string& name) const {
  const NamedArray& a = get(name);
  return {a.values.begin(), a.values.end()};
}

std::vector<std::string> NamedArrays::names() const {
  std::vector<std::string> out;
  out.reserve(arrays_.size());
  for (const auto& [k, v] : arrays_) out.push_back(k);
  return out;
}

void NamedArrays::save(const std::filesystem::path& path) const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, a] : arrays_) {
    const std::uint64_t bytes = a.values.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", a.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!metadata_.empty()) header["__metadata__"] = metadata_;
  std::string text = header.dump();
  // Pad so the payload starts 8-byte aligned.
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, a] : arrays_) {
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

NamedArrays NamedArrays::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ull << 30)) throw ParseError("'" + path.string() + "': bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("'" + path.string() + "': truncated header");
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': header is not JSON: " + e.what());
  }

  NamedArrays out;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      for (auto m = it->begin(); m != it->end(); ++m) out.metadata_[m.key()] = m->get<std::string>();
      continue;
    }
    const auto& entry = *it;
    NamedArray a;
    std::string dtype;
    std::uint64_t begin = 0, end = 0;
    try {
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      dtype = entry.at("dtype").get<std::string>();
      begin = entry.at("data_offsets").at(0).get<std::uint64_t>();
      end = entry.at("data_offsets").at(1).get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("'" + path.string() + "': entry '" + it.key() + "': " + e.what());
    }
    if (end > payload.size() || begin > end) {
      throw ParseError("'" + path.string() + "': entry '" + it.key() + "' out of bounds");
    }
    const std::size_t n = static_cast<std::size_t>(a.numel());
    a.values.resize(n);
    const char* src = payload.data() + begin;
    if (dtype == "F32" && end - begin == n * 4) {
      std::memcpy(a.values.data(), src, n * 4);
    } else if (dtype == "F64" && end - begin == n * 8) {
      for (std::size_t k = 0; k < n; ++k) {
        double v;
        std::memcpy(&v, src + k * 8, 8);
        a.values[k] = static_cast<float>(v);
      }
    } else if (dtype == "I64" && end - begin == n * 8) {
      for (std::size_t k = 0; k < n; ++k) {
        std::int64_t v;
        std::memcpy(&v, src + k * 8, 8);
        a.values[k] = static_cast<float>(v);
      }
    } else {
      throw ParseError("'" + path.string() + "': entry '" + it.key() + "' has unsupported dtype " + dtype +
                       " or inconsistent size");
    }
    out.arrays_[it.key()] = std::move(a);
  }
  return out;
}

}  // namespace ovseg
