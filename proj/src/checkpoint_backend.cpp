// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/encoder_backend.hpp"
#include "ovseg/linalg.hpp"
#include "ovseg/named_arrays.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ovseg {

namespace {

Vector vec_or_empty(const NamedArrays& w, const std::string& name) {
  if (!w.contains(name)) return {};
  const auto v = w.vector(name);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// torch Linear weight [out, in] -> row-vector convention [in, out].
Matrix linear_weight(const NamedArrays& w, const std::string& name) { return w.matrix(name).transpose(); }

TransformerBlock load_block(const NamedArrays& w, const std::string& prefix, int heads, double eps) {
  TransformerBlock b;
  b.heads = heads;
  b.norm_eps = eps;
  const Matrix qkv = w.matrix(prefix + "attn.qkv.weight");  // [3d, d]
  const Eigen::Index d = qkv.cols();
  if (qkv.rows() != 3 * d) throw ParseError(prefix + "attn.qkv.weight must be [3d, d]");
  b.wq = qkv.topRows(d).transpose();
  b.wk = qkv.middleRows(d, d).transpose();
  b.wv = qkv.bottomRows(d).transpose();
  const Vector qkv_b = vec_or_empty(w, prefix + "attn.qkv.bias");
  if (qkv_b.size() == 3 * d) {
    b.bq = qkv_b.head(d);
    b.bk = qkv_b.segment(d, d);
    b.bv = qkv_b.tail(d);
  }
  b.wo = linear_weight(w, prefix + "attn.proj.weight");
  b.bo = vec_or_empty(w, prefix + "attn.proj.bias");
  b.norm1_w = vec_or_empty(w, prefix + "norm1.weight");
  b.norm1_b = vec_or_empty(w, prefix + "norm1.bias");
  b.norm2_w = vec_or_empty(w, prefix + "norm2.weight");
  b.norm2_b = vec_or_empty(w, prefix + "norm2.bias");
  b.ls1 = vec_or_empty(w, prefix + "ls1");
  b.ls2 = vec_or_empty(w, prefix + "ls2");
  if (w.contains(prefix + "mlp.fc1.weight")) {
    b.fc1 = linear_weight(w, prefix + "mlp.fc1.weight");
    b.fc1_b = vec_or_empty(w, prefix + "mlp.fc1.bias");
    b.fc2 = linear_weight(w, prefix + "mlp.fc2.weight");
    b.fc2_b = vec_or_empty(w, prefix + "mlp.fc2.bias");
  }
  return b;
}

// Bilinear resample of a [h0*w0, d] positional table to [h*w, d]
// (half-pixel centers, edge clamped).
Matrix resample_table(const Matrix& table, int h0, int w0, int h, int w) {
  if (h0 == h && w0 == w) return table;
  Matrix out(static_cast<Eigen::Index>(h) * w, table.cols());
  for (int y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) * h0 / h - 0.5, 0.0, static_cast<double>(h0 - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h0 - 1);
    const double fy = sy - y0;
    for (int x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) * w0 / w - 0.5, 0.0, static_cast<double>(w0 - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w0 - 1);
      const double fx = sx - x0;
      out.row(y * w + x) = (1 - fy) * ((1 - fx) * table.row(y0 * w0 + x0) + fx * table.row(y0 * w0 + x1)) +
                           fy * ((1 - fx) * table.row(y1 * w0 + x0) + fx * table.row(y1 * w0 + x1));
    }
  }
  return out;
}

}  // namespace

CheckpointConfig CheckpointConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  CheckpointConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  try {
    c.weights = resolve(j.at("weights").get<std::string>());
    if (j.contains("text_table")) c.text_table = resolve(j.at("text_table").get<std::string>());
    c.patch_size = j.value("patch_size", c.patch_size);
    c.heads = j.value("heads", c.heads);
    c.backbone_layers = j.value("backbone_layers", c.backbone_layers);
    c.adapter_blocks = j.value("adapter_blocks", c.adapter_blocks);
    c.register_tokens = j.value("register_tokens", c.register_tokens);
    c.cls_token = j.value("cls_token", c.cls_token);
    c.pos_embed_grid = j.value("pos_embed_grid", c.pos_embed_grid);
    c.mean = j.value("mean", c.mean);
    c.std = j.value("std", c.std);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    if (j.contains("logit_scale")) c.logit_scale = j.at("logit_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint backend config: ") + e.what());
  }
  return c;
}

CheckpointBackend::CheckpointBackend(CheckpointConfig config) : config_(std::move(config)) {
  const NamedArrays w = NamedArrays::load(config_.weights);
  patch_b_ = vec_or_empty(w, "patch_embed.bias");
  const Matrix pw = w.matrix("patch_embed.weight");
  dim_ = static_cast<int>(pw.rows());
  const int p = config_.patch_size;
  if (pw.cols() != 3 * p * p) {
    throw ParseError("patch_embed.weight has " + std::to_string(pw.cols()) + " inputs, expected 3*p*p = " +
                     std::to_string(3 * p * p));
  }
  patch_w_ = pw.transpose();

  std::vector<Vector> prefix;
  if (config_.cls_token) {
    const Matrix cls = w.matrix("cls_token");
    prefix.push_back(cls.row(0).transpose());
  }
  if (config_.register_tokens > 0) {
    const Matrix reg = w.matrix("register_tokens");
    for (int r = 0; r < config_.register_tokens; ++r) prefix.push_back(reg.row(r).transpose());
  }
  prefix_tokens_ = prefix.empty() ? Matrix(0, dim_) : stack_rows(prefix);

  if (w.contains("pos_embed")) {
    pos_embed_ = w.matrix("pos_embed");
    if (config_.pos_embed_grid.size() != 2 ||
        pos_embed_.rows() != static_cast<Eigen::Index>(config_.pos_embed_grid[0]) * config_.pos_embed_grid[1]) {
      throw ConfigError("pos_embed present but pos_embed_grid does not match its row count");
    }
  }

  int layers = config_.backbone_layers;
  if (layers <= 0) {
    layers = 0;
    while (w.contains("backbone.blocks." + std::to_string(layers) + ".attn.qkv.weight")) ++layers;
  }
  if (layers == 0) throw ParseError("checkpoint has no backbone blocks");
  for (int l = 0; l < layers; ++l) {
    backbone_.push_back(load_block(w, "backbone.blocks." + std::to_string(l) + ".", config_.heads, config_.norm_eps));
  }
  backbone_norm_w_ = vec_or_empty(w, "backbone.norm.weight");
  backbone_norm_b_ = vec_or_empty(w, "backbone.norm.bias");
  for (int b = 0; b < config_.adapter_blocks; ++b) {
    adapter_.push_back(load_block(w, "adapter.blocks." + std::to_string(b) + ".", config_.heads, config_.norm_eps));
  }
  adapter_norm_w_ = vec_or_empty(w, "adapter.norm.weight");
  adapter_norm_b_ = vec_or_empty(w, "adapter.norm.bias");

  if (!config_.text_table.empty()) {
    const NamedArrays t = NamedArrays::load(config_.text_table);
    text_embeddings_ = t.matrix("embeddings");
    auto it = t.metadata().find("prompts");
    if (it == t.metadata().end()) throw ParseError("text table lacks a 'prompts' metadata entry");
    text_prompts_ = nlohmann::json::parse(it->second).get<std::vector<std::string>>();
    if (static_cast<Eigen::Index>(text_prompts_.size()) != text_embeddings_.rows()) {
      throw ParseError("text table: prompt count does not match embedding rows");
    }
    if (text_embeddings_.cols() != dim_) throw ParseError("text table dimension does not match the vision tower");
  }

  std::ostringstream os;
  os << "checkpoint:" << config_.weights.filename().string() << ":" << std::filesystem::file_size(config_.weights)
     << ":L" << layers << ":p" << p;
  fingerprint_ = os.str();
}

Matrix CheckpointBackend::embed_patches(const Image& image, int gh, int gw) const {
  const int p = config_.patch_size;
  Matrix flat(static_cast<Eigen::Index>(gh) * gw, 3 * p * p);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const Eigen::Index row = gy * gw + gx;
      for (int c = 0; c < 3; ++c)
        for (int ky = 0; ky < p; ++ky)
          for (int kx = 0; kx < p; ++kx) {
            const double px = image.at(gy * p + ky, gx * p + kx, c);
            flat(row, (c * p + ky) * p + kx) = (px - config_.mean[c]) / config_.std[c];
          }
    }
  Matrix x = flat * patch_w_;
  if (patch_b_.size() > 0) x.rowwise() += patch_b_.transpose();
  if (pos_embed_.size() > 0) {
    x += resample_table(pos_embed_, config_.pos_embed_grid[0], config_.pos_embed_grid[1], gh, gw);
  }
  return x;
}

BackboneOutput CheckpointBackend::encode_backbone(const Image& image) const {
  const int p = config_.patch_size;
  if (image.channels != 3) throw InputContractError("checkpoint backend expects 3-channel images");
  if (image.height <= 0 || image.width <= 0 || image.height % p != 0 || image.width % p != 0) {
    throw InputContractError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                             " is not divisible by patch size " + std::to_string(p));
  }
  const int gh = image.height / p;
  const int gw = image.width / p;
  const int prefix = static_cast<int>(prefix_tokens_.rows());
  Matrix x(prefix + gh * gw, dim_);
  if (prefix > 0) x.topRows(prefix) = prefix_tokens_;
  x.bottomRows(gh * gw) = embed_patches(image, gh, gw);

  BackboneOutput out;
  for (const auto& block : backbone_) {
    Matrix attn;
    x = block.forward(x, prefix, nullptr, &attn);
    out.attention.layers.push_back(std::move(attn));
  }
  Matrix v = x.bottomRows(gh * gw);
  if (backbone_norm_w_.size() > 0) v = layer_norm(v, backbone_norm_w_, backbone_norm_b_, config_.norm_eps);
  if (!all_finite(v)) throw BackendFaultError("checkpoint backbone produced non-finite tokens");
  out.tokens = PatchGrid{std::move(v), gh, gw, TokenSource::kBackbone, image.image_id};
  return out;
}

PatchGrid CheckpointBackend::adapter_forward(const PatchGrid& v, std::span<const Matrix> injected) const {
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
  if (adapter_norm_w_.size() > 0) x = layer_norm(x, adapter_norm_w_, adapter_norm_b_, config_.norm_eps);
  if (!all_finite(x)) throw BackendFaultError("checkpoint adapter produced non-finite tokens");
  return PatchGrid{std::move(x), v.grid_h, v.grid_w, TokenSource::kAdapter, v.image_id};
}

std::vector<Vector> CheckpointBackend::encode_text(const std::vector<std::string>& prompts) const {
  if (prompts.empty()) throw InputContractError("encode_text: no prompts");
  std::vector<Vector> out;
  for (const auto& p : prompts) {
    if (p.empty()) throw InputContractError("encode_text: empty prompt string");
    auto it = std::find(text_prompts_.begin(), text_prompts_.end(), p);
    if (it == text_prompts_.end()) {
      throw BackendFaultError("prompt '" + p + "' is not in the text embedding table");
    }
    const Vector e = text_embeddings_.row(it - text_prompts_.begin()).transpose();
    out.push_back(normalized(e));
  }
  return out;
}

std::unique_ptr<EncoderBackend> make_backend(const nlohmann::json& config, const std::filesystem::path& base_dir) {
  const std::string type = config.value("type", "synthetic");
  if (type == "synthetic") return std::make_unique<SyntheticBackend>(SyntheticConfig::from_json(config));
  if (type == "checkpoint") return std::make_unique<CheckpointBackend>(CheckpointConfig::from_json(config, base_dir));
  throw ConfigError("unknown backend type '" + type + "'");
}

}  // namespace ovseg
