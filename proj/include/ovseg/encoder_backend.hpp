// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Vision/text encoder abstraction. A backend yields frozen-backbone patch
// tokens V with the per-layer patch attention, runs the two adapter blocks
// (optionally with externally supplied attention) to get I, and embeds text.
//
// Two implementations exist: SyntheticBackend, a seeded planted-cluster model
// used by tests and the desk-scale fixture, and CheckpointBackend, a ViT
// forward pass over weights stored in a named-array file.

#pragma once

#include "ovseg/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ovseg {

struct BackboneOutput {
  PatchGrid tokens;  // V, source = backbone
  AttentionStack attention;
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual int patch_size() const = 0;
  /// Number of backbone layers whose attention is surfaced.
  virtual int layer_count() const = 0;
  virtual int adapter_blocks() const = 0;
  virtual int dim() const = 0;
  /// Channel count the pixel tensor must have.
  virtual int input_channels() const = 0;
  /// Learned logit scale, when the backend has one.
  virtual std::optional<double> logit_scale() const { return std::nullopt; }
  /// Stable identifier of weights + configuration, recorded in caches.
  virtual std::string fingerprint() const = 0;

  /// Image height and width must be multiples of patch_size().
  virtual BackboneOutput encode_backbone(const Image& image) const = 0;

  /// Runs the adapter on backbone tokens. `injected` is either empty (native
  /// attention) or holds one row-stochastic [hw x hw] matrix per adapter block.
  virtual PatchGrid adapter_forward(const PatchGrid& v, std::span<const Matrix> injected = {}) const = 0;

  /// One unit-norm embedding per prompt.
  virtual std::vector<Vector> encode_text(const std::vector<std::string>& prompts) const = 0;
};

/// Global average pooling over patch tokens.
GlobalImageFeature global_pool(const PatchGrid& grid);

enum class Activation { kGelu, kRelu };

/// Pre-norm transformer block in row-vector convention (x * W). Empty norm or
/// layer-scale vectors disable those stages; an empty fc1 disables the MLP.
struct TransformerBlock {
  int heads = 1;
  Matrix wq, wk, wv, wo;
  Vector bq, bk, bv, bo;
  Matrix fc1, fc2;
  Vector fc1_b, fc2_b;
  Vector norm1_w, norm1_b, norm2_w, norm2_b;
  Vector ls1, ls2;
  double norm_eps = 1e-6;
  /// Multiplier on q.k; defaults to 1/sqrt(head_dim) when unset.
  std::optional<double> qk_scale;
  Activation activation = Activation::kGelu;

  /// `x` holds `prefix` non-patch tokens followed by the patch tokens. When
  /// `injected` is given, patch-token rows attend over patch tokens with that
  /// matrix in every head; prefix rows keep native attention. If `attn_out`
  /// is non-null it receives the head-averaged patch-to-patch attention with
  /// rows renormalized over patch columns.
  Matrix forward(const Matrix& x, int prefix, const Matrix* injected, Matrix* attn_out) const;
};

// ---------------------------------------------------------------------------

struct LexiconEntry {
  std::string surface;
  /// Concept name -> weight of that concept's center in the embedding.
  std::vector<std::pair<std::string, double>> mix;
  /// Weight of a surface-specific pseudo-random direction.
  double noise = 0.0;
};

struct SyntheticConfig {
  std::uint64_t seed = 7;
  int dim = 32;
  int patch_size = 4;
  int backbone_layers = 4;
  /// Backbone attention sharpness per layer (multiplies x.x/sqrt(d)).
  std::vector<double> layer_sharpness = {0.25, 0.5, 1.0, 1.0};
  double backbone_mixing = 0.5;
  double adapter_qk_scale = 1.0;
  double adapter_value_scale = 0.8;
  double adapter_mlp_scale = 0.05;
  std::vector<std::string> concepts;
  std::vector<LexiconEntry> lexicon;
  double template_noise = 0.05;
  double logit_scale = 100.0;

  static SyntheticConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

class SyntheticBackend final : public EncoderBackend {
 public:
  explicit SyntheticBackend(SyntheticConfig config);

  int patch_size() const override { return config_.patch_size; }
  int layer_count() const override { return static_cast<int>(backbone_.size()); }
  int adapter_blocks() const override { return static_cast<int>(adapter_.size()); }
  int dim() const override { return config_.dim; }
  int input_channels() const override { return config_.dim; }
  std::optional<double> logit_scale() const override { return config_.logit_scale; }
  std::string fingerprint() const override;

  BackboneOutput encode_backbone(const Image& image) const override;
  PatchGrid adapter_forward(const PatchGrid& v, std::span<const Matrix> injected = {}) const override;
  std::vector<Vector> encode_text(const std::vector<std::string>& prompts) const override;

  const SyntheticConfig& config() const { return config_; }
  /// Unit center of a named concept; throws InputContractError for unknown names.
  const Vector& concept_center(const std::string& name) const;
  /// Native adapter attention of each block for the given backbone tokens.
  std::vector<Matrix> native_adapter_attention(const PatchGrid& v) const;

 private:
  Vector hashed_direction(const std::string& key) const;
  Vector embed_prompt(const std::string& prompt) const;

  SyntheticConfig config_;
  std::vector<Vector> centers_;
  std::vector<TransformerBlock> backbone_;
  std::vector<TransformerBlock> adapter_;
};

/// Scene parameters for synthetic images: Voronoi regions of concepts with
/// per-pixel Gaussian noise around the concept centers.
struct SceneSpec {
  int height = 64;
  int width = 96;
  /// Candidate concepts; the label of a region is its index in this list.
  std::vector<std::string> classes;
  int min_regions = 2;
  int max_regions = 4;
  double amplitude = 8.0;
  double pixel_noise = 4.0;
};

struct SyntheticScene {
  Image image;
  LabelImage labels;
};

SyntheticScene make_scene(const SyntheticBackend& backend, const SceneSpec& spec, std::uint64_t seed,
                          const std::string& image_id);

// ---------------------------------------------------------------------------

struct CheckpointConfig {
  std::filesystem::path weights;
  std::filesystem::path text_table;
  int patch_size = 16;
  int heads = 1;
  int backbone_layers = 0;
  int adapter_blocks = 2;
  int register_tokens = 0;
  bool cls_token = true;
  std::vector<int> pos_embed_grid;  // {h, w} of the stored positional table
  std::vector<double> mean = {0.485, 0.456, 0.406};
  std::vector<double> std = {0.229, 0.224, 0.225};
  double norm_eps = 1e-6;
  std::optional<double> logit_scale;

  /// Relative paths resolve against `base_dir`.
  static CheckpointConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

/// ViT forward over exported weights. Expected array names (torch Linear
/// layout, [out, in]):
///   patch_embed.weight [d, 3*p*p], patch_embed.bias [d], cls_token [1, d],
///   register_tokens [r, d], pos_embed [gh*gw, d],
///   backbone.blocks.{i}.{norm1,norm2}.{weight,bias},
///   backbone.blocks.{i}.attn.qkv.{weight [3d, d], bias [3d]},
///   backbone.blocks.{i}.attn.proj.{weight,bias}, backbone.blocks.{i}.ls{1,2},
///   backbone.blocks.{i}.mlp.fc{1,2}.{weight,bias}, backbone.norm.{weight,bias},
///   adapter.blocks.{j}.* (same layout), adapter.norm.{weight,bias}.
/// Text embeddings come from a precomputed table: "embeddings" [n, d] with
/// the prompt strings as a JSON array under metadata key "prompts".
class CheckpointBackend final : public EncoderBackend {
 public:
  explicit CheckpointBackend(CheckpointConfig config);

  int patch_size() const override { return config_.patch_size; }
  int layer_count() const override { return static_cast<int>(backbone_.size()); }
  int adapter_blocks() const override { return static_cast<int>(adapter_.size()); }
  int dim() const override { return dim_; }
  int input_channels() const override { return 3; }
  std::optional<double> logit_scale() const override { return config_.logit_scale; }
  std::string fingerprint() const override { return fingerprint_; }

  BackboneOutput encode_backbone(const Image& image) const override;
  PatchGrid adapter_forward(const PatchGrid& v, std::span<const Matrix> injected = {}) const override;
  std::vector<Vector> encode_text(const std::vector<std::string>& prompts) const override;

 private:
  Matrix embed_patches(const Image& image, int gh, int gw) const;

  CheckpointConfig config_;
  int dim_ = 0;
  Matrix patch_w_;  // [3*p*p, d]
  Vector patch_b_;
  Matrix prefix_tokens_;  // [prefix, d]
  Matrix pos_embed_;
  std::vector<TransformerBlock> backbone_;
  Vector backbone_norm_w_, backbone_norm_b_;
  std::vector<TransformerBlock> adapter_;
  Vector adapter_norm_w_, adapter_norm_b_;
  std::vector<std::string> text_prompts_;
  Matrix text_embeddings_;
  std::string fingerprint_;
};

/// Builds a backend from a config object: {"type": "synthetic", ...} or
/// {"type": "checkpoint", ...}.
std::unique_ptr<EncoderBackend> make_backend(const nlohmann::json& config,
                                             const std::filesystem::path& base_dir = ".");

/// Row-wise layer norm; empty weight/bias means no affine.
Matrix layer_norm(const Matrix& x, const Vector& weight, const Vector& bias, double eps);

}  // namespace ovseg
