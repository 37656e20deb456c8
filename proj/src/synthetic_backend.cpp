// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/encoder_backend.hpp"
#include "ovseg/linalg.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <sstream>

namespace ovseg {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-'; }

// Position of `needle` in `hay` at word boundaries, or npos.
std::size_t find_word(const std::string& hay, const std::string& needle) {
  std::size_t pos = hay.find(needle);
  while (pos != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end >= hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok) return pos;
    pos = hay.find(needle, pos + 1);
  }
  return std::string::npos;
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

}  // namespace

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.seed = j.value("seed", c.seed);
  c.dim = j.value("dim", c.dim);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.backbone_layers = j.value("backbone_layers", c.backbone_layers);
  c.layer_sharpness = j.value("layer_sharpness", c.layer_sharpness);
  c.backbone_mixing = j.value("backbone_mixing", c.backbone_mixing);
  c.adapter_qk_scale = j.value("adapter_qk_scale", c.adapter_qk_scale);
  c.adapter_value_scale = j.value("adapter_value_scale", c.adapter_value_scale);
  c.adapter_mlp_scale = j.value("adapter_mlp_scale", c.adapter_mlp_scale);
  c.concepts = j.value("concepts", c.concepts);
  c.template_noise = j.value("template_noise", c.template_noise);
  c.logit_scale = j.value("logit_scale", c.logit_scale);
  if (j.contains("lexicon")) {
    for (const auto& e : j.at("lexicon")) {
      LexiconEntry entry;
      entry.surface = e.at("surface").get<std::string>();
      entry.noise = e.value("noise", 0.0);
      for (const auto& m : e.at("mix")) {
        entry.mix.emplace_back(m.at(0).get<std::string>(), m.at(1).get<double>());
      }
      c.lexicon.push_back(std::move(entry));
    }
  }
  return c;
}

nlohmann::json SyntheticConfig::to_json() const {
  nlohmann::json lex = nlohmann::json::array();
  for (const auto& e : lexicon) {
    nlohmann::json mix = nlohmann::json::array();
    for (const auto& [name, w] : e.mix) mix.push_back({name, w});
    lex.push_back({{"surface", e.surface}, {"mix", mix}, {"noise", e.noise}});
  }
  return {{"type", "synthetic"},
          {"seed", seed},
          {"dim", dim},
          {"patch_size", patch_size},
          {"backbone_layers", backbone_layers},
          {"layer_sharpness", layer_sharpness},
          {"backbone_mixing", backbone_mixing},
          {"adapter_qk_scale", adapter_qk_scale},
          {"adapter_value_scale", adapter_value_scale},
          {"adapter_mlp_scale", adapter_mlp_scale},
          {"concepts", concepts},
          {"lexicon", lex},
          {"template_noise", template_noise},
          {"logit_scale", logit_scale}};
}

SyntheticBackend::SyntheticBackend(SyntheticConfig config) : config_(std::move(config)) {
  if (config_.dim <= 0 || config_.patch_size <= 0 || config_.backbone_layers <= 0) {
    throw InputContractError("synthetic backend: dim, patch_size and backbone_layers must be positive");
  }
  std::mt19937_64 rng(config_.seed);
  const int d = config_.dim;

  const auto n_concepts = static_cast<Eigen::Index>(config_.concepts.size());
  if (n_concepts > 0) {
    Matrix g = gaussian(rng, d, std::max<Eigen::Index>(n_concepts, 1), 1.0);
    if (n_concepts <= d) {
      Eigen::HouseholderQR<Matrix> qr(g);
      Matrix q = qr.householderQ() * Matrix::Identity(d, n_concepts);
      for (Eigen::Index k = 0; k < n_concepts; ++k) centers_.push_back(q.col(k));
    } else {
      for (Eigen::Index k = 0; k < n_concepts; ++k) centers_.push_back(normalized(g.col(k)));
    }
  }

  const Matrix eye = Matrix::Identity(d, d);
  for (int l = 0; l < config_.backbone_layers; ++l) {
    const double sharp = config_.layer_sharpness.empty()
                             ? 1.0
                             : config_.layer_sharpness[std::min<std::size_t>(l, config_.layer_sharpness.size() - 1)];
    TransformerBlock b;
    b.wq = eye * std::sqrt(sharp);
    b.wk = eye * std::sqrt(sharp);
    b.wv = eye * config_.backbone_mixing;
    b.wo = eye;
    backbone_.push_back(std::move(b));
  }

  for (int blk = 0; blk < 2; ++blk) {
    TransformerBlock b;
    b.wq = gaussian(rng, d, d, config_.adapter_qk_scale / std::sqrt(static_cast<double>(d)));
    b.wk = gaussian(rng, d, d, config_.adapter_qk_scale / std::sqrt(static_cast<double>(d)));
    b.wv = eye * config_.adapter_value_scale;
    b.wo = eye;
    if (config_.adapter_mlp_scale > 0.0) {
      b.fc1 = gaussian(rng, d, 2 * d, config_.adapter_mlp_scale / std::sqrt(static_cast<double>(d)));
      b.fc2 = gaussian(rng, 2 * d, d, config_.adapter_mlp_scale / std::sqrt(static_cast<double>(2 * d)));
    }
    adapter_.push_back(std::move(b));
  }
}

std::string SyntheticBackend::fingerprint() const {
  std::ostringstream os;
  os << "synthetic:" << std::hex << fnv1a(config_.to_json().dump());
  return os.str();
}

const Vector& SyntheticBackend::concept_center(const std::string& name) const {
  for (std::size_t k = 0; k < config_.concepts.size(); ++k) {
    if (config_.concepts[k] == name) return centers_[k];
  }
  throw InputContractError("synthetic backend: unknown concept '" + name + "'");
}

BackboneOutput SyntheticBackend::encode_backbone(const Image& image) const {
  const int p = config_.patch_size;
  if (image.channels != config_.dim) {
    throw InputContractError("synthetic backend expects " + std::to_string(config_.dim) + " channels, got " +
                             std::to_string(image.channels));
  }
  if (image.height <= 0 || image.width <= 0 || image.height % p != 0 || image.width % p != 0) {
    throw InputContractError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                             " is not divisible by patch size " + std::to_string(p));
  }
  const int gh = image.height / p;
  const int gw = image.width / p;
  Matrix x = Matrix::Zero(gh * gw, config_.dim);
  for (int y = 0; y < image.height; ++y)
    for (int xx = 0; xx < image.width; ++xx) {
      const int row = (y / p) * gw + xx / p;
      for (int c = 0; c < config_.dim; ++c) x(row, c) += image.at(y, xx, c);
    }
  x /= static_cast<double>(p * p);

  BackboneOutput out;
  for (const auto& block : backbone_) {
    Matrix attn;
    x = block.forward(x, 0, nullptr, &attn) / (1.0 + config_.backbone_mixing);
    out.attention.layers.push_back(std::move(attn));
  }
  if (!all_finite(x)) throw BackendFaultError("synthetic backbone produced non-finite tokens");
  out.tokens = PatchGrid{std::move(x), gh, gw, TokenSource::kBackbone, image.image_id};
  return out;
}

PatchGrid SyntheticBackend::adapter_forward(const PatchGrid& v, std::span<const Matrix> injected) const {
  v.validate();
  if (!injected.empty() && injected.size() != adapter_.size()) {
    throw InputContractError("expected " + std::to_string(adapter_.size()) + " injected matrices, got " +
                             std::to_string(injected.size()));
  }
  for (const auto& m : injected) {
    if (m.rows() != v.num_patches() || m.cols() != v.num_patches()) {
      throw InputContractError("injected attention shape does not match hw = " + std::to_string(v.num_patches()));
    }
    if (!is_row_stochastic(m, 1e-5)) throw InputContractError("injected attention is not row-stochastic");
  }
  Matrix x = v.tokens;
  for (std::size_t b = 0; b < adapter_.size(); ++b) {
    x = adapter_[b].forward(x, 0, injected.empty() ? nullptr : &injected[b], nullptr);
  }
  if (!all_finite(x)) throw BackendFaultError("synthetic adapter produced non-finite tokens");
  return PatchGrid{std::move(x), v.grid_h, v.grid_w, TokenSource::kAdapter, v.image_id};
}

std::vector<Matrix> SyntheticBackend::native_adapter_attention(const PatchGrid& v) const {
  std::vector<Matrix> out;
  Matrix x = v.tokens;
  for (const auto& block : adapter_) {
    Matrix attn;
    x = block.forward(x, 0, nullptr, &attn);
    out.push_back(std::move(attn));
  }
  return out;
}

Vector SyntheticBackend::hashed_direction(const std::string& key) const {
  std::mt19937_64 rng(fnv1a(key) ^ (config_.seed * 0x9E3779B97F4A7C15ull));
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(config_.dim);
  for (int i = 0; i < config_.dim; ++i) v(i) = n(rng);
  return normalized(v);
}

Vector SyntheticBackend::embed_prompt(const std::string& prompt) const {
  const std::string text = lower(prompt);
  const LexiconEntry* best = nullptr;
  std::size_t best_pos = std::string::npos;
  for (const auto& e : config_.lexicon) {
    const std::string s = lower(e.surface);
    const std::size_t pos = find_word(text, s);
    if (pos != std::string::npos && (!best || s.size() > best->surface.size())) {
      best = &e;
      best_pos = pos;
    }
  }
  if (!best) return hashed_direction("prompt:" + text);

  const std::string surface = lower(best->surface);
  Vector v = Vector::Zero(config_.dim);
  for (const auto& [name, w] : best->mix) v += w * concept_center(name);
  if (best->noise != 0.0) v += best->noise * hashed_direction("surface:" + surface);
  std::string tmpl = text;
  tmpl.replace(best_pos, surface.size(), "{}");
  if (tmpl != "{}" && config_.template_noise != 0.0) {
    v += config_.template_noise * hashed_direction("template:" + tmpl);
  }
  if (v.norm() == 0.0) return hashed_direction("prompt:" + text);
  return normalized(v);
}

std::vector<Vector> SyntheticBackend::encode_text(const std::vector<std::string>& prompts) const {
  if (prompts.empty()) throw InputContractError("encode_text: no prompts");
  std::vector<Vector> out;
  out.reserve(prompts.size());
  for (const auto& p : prompts) {
    if (p.empty()) throw InputContractError("encode_text: empty prompt string");
    out.push_back(embed_prompt(p));
  }
  return out;
}

SyntheticScene make_scene(const SyntheticBackend& backend, const SceneSpec& spec, std::uint64_t seed,
                          const std::string& image_id) {
  if (spec.classes.empty()) throw InputContractError("scene needs at least one class");
  if (spec.min_regions < 1 || spec.max_regions < spec.min_regions) {
    throw InputContractError("scene region bounds are inconsistent");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> n_regions(spec.min_regions, spec.max_regions);
  const int regions = n_regions(rng);
  std::uniform_real_distribution<double> uy(0.0, spec.height), ux(0.0, spec.width);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(spec.classes.size()) - 1);
  std::vector<std::pair<double, double>> sites;
  std::vector<int> site_class;
  for (int r = 0; r < regions; ++r) {
    sites.emplace_back(uy(rng), ux(rng));
    site_class.push_back(cls(rng));
  }

  const int d = backend.input_channels();
  std::vector<Vector> centers;
  for (const auto& name : spec.classes) centers.push_back(backend.concept_center(name));

  SyntheticScene scene;
  scene.image = Image{spec.height, spec.width, d, {}, image_id};
  scene.image.data.resize(static_cast<std::size_t>(spec.height) * spec.width * d);
  scene.labels = LabelImage{spec.height, spec.width, std::vector<int>(static_cast<std::size_t>(spec.height) * spec.width)};
  std::normal_distribution<double> noise(0.0, spec.pixel_noise);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      int best = 0;
      double best_d = 1e300;
      for (int r = 0; r < regions; ++r) {
        const double dy = y + 0.5 - sites[r].first, dx = x + 0.5 - sites[r].second;
        const double dist = dy * dy + dx * dx;
        if (dist < best_d) {
          best_d = dist;
          best = r;
        }
      }
      const int label = site_class[best];
      scene.labels.at(y, x) = label;
      for (int c = 0; c < d; ++c) {
        scene.image.at(y, x, c) = static_cast<float>(spec.amplitude * centers[label](c) + noise(rng));
      }
    }
  }
  return scene;
}

}  // namespace ovseg
