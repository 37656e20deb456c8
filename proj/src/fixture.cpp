// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/fixture.hpp"

#include "ovseg/image_io.hpp"

#include <fstream>

namespace ovseg {

namespace {

std::string word_concept(const std::string& cls) { return cls + "#word"; }

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << "\n";
}

}  // namespace

SyntheticConfig fixture_backend_config(const FixtureOptions& o) {
  if (o.classes.size() < 2) throw InputContractError("fixture needs at least two classes");
  SyntheticConfig c;
  c.seed = o.seed;
  for (const auto& cls : o.classes) c.concepts.push_back(cls);
  for (const auto& cls : o.classes) c.concepts.push_back(word_concept(cls));
  const double rest = [](double w) { return std::sqrt(std::max(0.0, 1.0 - w * w)); }(o.canonical_weight);
  const std::string& first = o.classes[0];
  const std::string& second = o.classes[1];
  for (const auto& cls : o.classes) {
    LexiconEntry e{cls, {{cls, o.canonical_weight}, {word_concept(cls), rest}}, o.surface_noise};
    if (cls == first && o.canonical_leak != 0.0) e.mix.emplace_back(second, o.canonical_leak);
    c.lexicon.push_back(std::move(e));
  }
  const double good_rest = std::sqrt(std::max(0.0, 1.0 - o.good_weight * o.good_weight));
  c.lexicon.push_back({o.good_alias, {{first, o.good_weight}, {word_concept(first), good_rest}}, o.surface_noise});
  const double conf_rest = std::sqrt(std::max(0.0, 1.0 - 2.0 * o.confusable_weight * o.confusable_weight));
  c.lexicon.push_back({o.confusable_alias,
                       {{first, o.confusable_weight}, {second, o.confusable_weight}, {word_concept(first), conf_rest}},
                       o.surface_noise});
  return c;
}

Fixture make_fixture(const FixtureOptions& o) {
  Fixture f;
  f.options = o;
  f.backend_config = fixture_backend_config(o);
  const SyntheticBackend backend(f.backend_config);
  SceneSpec spec;
  spec.height = o.height;
  spec.width = o.width;
  spec.classes = o.classes;
  spec.amplitude = o.amplitude;
  spec.pixel_noise = o.pixel_noise;
  f.dataset.name = "synthetic";
  f.dataset.classes = o.classes;
  f.dataset.short_side = o.windows.short_side;
  f.dataset.window = o.windows.window;
  f.dataset.stride = o.windows.stride;
  for (int i = 0; i < o.images; ++i) {
    const std::string id = "img" + std::to_string(i);
    f.scenes.push_back(make_scene(backend, spec, o.seed * 1000003ULL + static_cast<std::uint64_t>(i), id));
    f.dataset.images.push_back({id, {}, {}});
  }
  return f;
}

nlohmann::json Fixture::alias_file() const {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < options.classes.size(); ++c) {
    nlohmann::json aliases = nlohmann::json::array();
    if (c == 0) aliases = {options.good_alias, options.confusable_alias};
    classes.push_back({{"name", options.classes[c]}, {"aliases", aliases}});
  }
  return {{"version", 1}, {"dataset", dataset.name}, {"classes", classes}};
}

std::filesystem::path write_fixture(const Fixture& fixture, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  DatasetSpec ds = fixture.dataset;
  for (std::size_t i = 0; i < fixture.scenes.size(); ++i) {
    const auto& scene = fixture.scenes[i];
    const std::string id = ds.images[i].id;
    save_image_tensor(dir / "images" / (id + ".safetensors"), scene.image);
    save_mask(dir / "masks" / (id + ".png"), scene.labels);
    ds.images[i].image = std::filesystem::path("images") / (id + ".safetensors");
    ds.images[i].mask = std::filesystem::path("masks") / (id + ".png");
  }
  nlohmann::json backend = fixture.backend_config.to_json();
  backend["type"] = "synthetic";
  write_json(dir / "backend.json", backend);
  write_json(dir / "dataset.json", ds.to_json());
  write_json(dir / "aliases.json", fixture.alias_file());
  write_json(dir / "config.json", {{"version", 1}, {"backend", backend}, {"cache_dir", "cache"}});
  return dir / "dataset.json";
}

}  // namespace ovseg
