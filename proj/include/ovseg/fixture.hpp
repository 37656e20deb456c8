// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded planted-cluster dataset for the synthetic backend. Every class is a
// concept cluster; class names, aliases and templates map to text embeddings
// through the backend lexicon. The first class name is ambiguous: it leaks
// toward the second class. Two aliases are planted on it: a "good" one aimed
// at the class cluster alone, and a "confusable" one straddling the first
// two classes.

#pragma once

#include "ovseg/alias_pool.hpp"
#include "ovseg/dense_inference.hpp"
#include "ovseg/encoder_backend.hpp"
#include "ovseg/evaluation.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace ovseg {

struct FixtureOptions {
  std::uint64_t seed = 1;
  int images = 20;
  int height = 64;
  int width = 96;
  WindowParams windows{64, 48, 24};
  std::vector<std::string> classes = {"bus", "car", "tree", "sky"};
  std::string good_alias = "city bus";
  std::string confusable_alias = "vehicle";
  /// Weight of the class cluster in canonical, good-alias and confusable
  /// embeddings; the rest is a class-specific text-only direction.
  double canonical_weight = 0.15;
  double good_weight = 0.15;
  double confusable_weight = 0.12;
  /// Weight of the second class cluster in the first class name.
  double canonical_leak = 0.1;
  double surface_noise = 0.02;
  double amplitude = 8.0;
  double pixel_noise = 4.0;
};

struct Fixture {
  FixtureOptions options;
  SyntheticConfig backend_config;
  std::vector<SyntheticScene> scenes;
  DatasetSpec dataset;  // image paths empty until written

  /// {"version":1,"dataset":...,"classes":[{"name":...,"aliases":[...]}]}
  nlohmann::json alias_file() const;
};

SyntheticConfig fixture_backend_config(const FixtureOptions& options);
Fixture make_fixture(const FixtureOptions& options);

/// Writes backend.json, dataset.json, aliases.json, config.json, images/ and
/// masks/ under `dir`. Returns the dataset config path.
std::filesystem::path write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

}  // namespace ovseg
