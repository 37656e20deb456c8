// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/pipeline.hpp"

#include "ovseg/image_io.hpp"
#include "ovseg/linalg.hpp"
#include "ovseg/named_arrays.hpp"
#include "ovseg/parallel.hpp"
#include "ovseg/self_correction.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace ovseg {

namespace {

std::string w_key(std::size_t k, const std::string& name) { return "w" + std::to_string(k) + "." + name; }

std::vector<double> window_origin(const Window& w) { return {double(w.y), double(w.x), double(w.h), double(w.w)}; }

Window window_from(const std::vector<double>& v) {
  if (v.size() != 4) throw ParseError("window origin must have 4 entries");
  return {static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]), static_cast<int>(v[3])};
}

std::pair<int, int> read_pair(const NamedArrays& a, const std::string& name) {
  const auto v = a.vector(name);
  if (v.size() != 2) throw ParseError("'" + name + "' must have 2 entries");
  return {static_cast<int>(v[0]), static_cast<int>(v[1])};
}

std::size_t window_count(const NamedArrays& a) {
  const auto it = a.metadata().find("windows");
  if (it == a.metadata().end()) throw ParseError("missing 'windows' metadata");
  return static_cast<std::size_t>(std::stoul(it->second));
}

bool same_windows(const std::vector<Window>& a, const std::vector<Window>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].y != b[k].y || a[k].x != b[k].x || a[k].h != b[k].h || a[k].w != b[k].w) return false;
  }
  return true;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(9) << *v;
  return os.str();
}

LabelImage resize_nearest(const LabelImage& m, int nh, int nw) {
  LabelImage out{nh, nw, std::vector<int>(static_cast<std::size_t>(nh) * nw)};
  for (int y = 0; y < nh; ++y) {
    const int sy = std::min(m.height - 1, static_cast<int>((y + 0.5) * m.height / nh));
    for (int x = 0; x < nw; ++x) {
      const int sx = std::min(m.width - 1, static_cast<int>((x + 0.5) * m.width / nw));
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

LabelImage crop_labels(const LabelImage& m, const Window& w) {
  LabelImage out{w.h, w.w, std::vector<int>(static_cast<std::size_t>(w.h) * w.w)};
  for (int y = 0; y < w.h; ++y)
    for (int x = 0; x < w.w; ++x) out.at(y, x) = m.at(w.y + y, w.x + x);
  return out;
}

}  // namespace

WindowParams window_params(const DatasetSpec& dataset) {
  return {dataset.short_side, dataset.window, dataset.stride};
}

std::string ImageFeatures::source() const {
  return fingerprint + (self_correction ? "|self_correction=on" : "|self_correction=off");
}

ImageFeatures extract_image_features(const Image& image, const EncoderBackend& backend, const WindowParams& params,
                                     bool self_correction) {
  if (image.channels != backend.input_channels()) {
    throw InputContractError("image '" + image.image_id + "' has " + std::to_string(image.channels) +
                             " channels; the backend expects " + std::to_string(backend.input_channels()));
  }
  const auto [rh, rw] = short_side_shape(image.height, image.width, params.short_side);
  const Image resized = resize_image(image, rh, rw);
  ImageFeatures f;
  f.image_id = image.image_id;
  f.height = image.height;
  f.width = image.width;
  f.self_correction = self_correction;
  f.fingerprint = backend.fingerprint();
  for (const Window& win : plan_windows(rh, rw, params.window, params.stride)) {
    BackboneOutput out = backend.encode_backbone(crop_image(resized, win));
    WindowFeatures wf;
    wf.window = win;
    wf.v = std::move(out.tokens);
    wf.v.tokens = quantize_f32(wf.v.tokens);
    wf.v.image_id = image.image_id;
    for (auto& layer : out.attention.layers) layer = quantize_f32(layer);
    wf.attention = std::move(out.attention);
    wf.i = adapter_tokens(wf.v, backend, self_correction);
    wf.i.tokens = quantize_f32(wf.i.tokens);
    wf.i.image_id = image.image_id;
    f.windows.push_back(std::move(wf));
  }
  return f;
}

void save_features(const std::filesystem::path& path, const ImageFeatures& f) {
  NamedArrays a;
  a.put_vector("image_size", {double(f.height), double(f.width)});
  for (std::size_t k = 0; k < f.windows.size(); ++k) {
    const WindowFeatures& w = f.windows[k];
    a.put_matrix(w_key(k, "V"), w.v.tokens);
    a.put_matrix(w_key(k, "I"), w.i.tokens);
    for (int l = 0; l < w.attention.layer_count(); ++l) {
      a.put_matrix(w_key(k, "attn_" + std::to_string(l)), w.attention.layers[static_cast<std::size_t>(l)]);
    }
    a.put_vector(w_key(k, "grid"), {double(w.v.grid_h), double(w.v.grid_w)});
    a.put_vector(w_key(k, "origin"), window_origin(w.window));
  }
  a.metadata()["image_id"] = f.image_id;
  a.metadata()["windows"] = std::to_string(f.windows.size());
  a.metadata()["layers"] = std::to_string(f.windows.empty() ? 0 : f.windows.front().attention.layer_count());
  a.metadata()["fingerprint"] = f.fingerprint;
  a.metadata()["self_correction"] = f.self_correction ? "on" : "off";
  a.save(path);
}

ImageFeatures load_features(const std::filesystem::path& path) {
  const NamedArrays a = NamedArrays::load(path);
  const auto& meta = a.metadata();
  auto get_meta = [&](const std::string& k) {
    const auto it = meta.find(k);
    if (it == meta.end()) throw ParseError("'" + path.string() + "': missing metadata '" + k + "'");
    return it->second;
  };
  ImageFeatures f;
  f.image_id = get_meta("image_id");
  f.fingerprint = get_meta("fingerprint");
  f.self_correction = get_meta("self_correction") == "on";
  std::tie(f.height, f.width) = read_pair(a, "image_size");
  const int layers = std::stoi(get_meta("layers"));
  const std::size_t n = window_count(a);
  for (std::size_t k = 0; k < n; ++k) {
    WindowFeatures w;
    w.window = window_from(a.vector(w_key(k, "origin")));
    const auto [gh, gw] = read_pair(a, w_key(k, "grid"));
    w.v = PatchGrid{a.matrix(w_key(k, "V")), gh, gw, TokenSource::kBackbone, f.image_id};
    w.i = PatchGrid{a.matrix(w_key(k, "I")), gh, gw, TokenSource::kAdapter, f.image_id};
    w.v.validate();
    w.i.validate();
    for (int l = 0; l < layers; ++l) w.attention.layers.push_back(a.matrix(w_key(k, "attn_" + std::to_string(l))));
    f.windows.push_back(std::move(w));
  }
  return f;
}

// ---------------------------------------------------------------------------

QueryManifestEntry manifest_entry(const TextQuery& q) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  mix(q.surface.data(), q.surface.size());
  for (Eigen::Index i = 0; i < q.embedding.size(); ++i) {
    const float v = static_cast<float>(q.embedding(i));
    mix(&v, sizeof v);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return {q.class_index, q.surface, q.kind, os.str()};
}

SimilarityTable SimilarityTable::build(const ImageFeatures& features, std::span<const TextQuery> queries) {
  if (queries.empty()) throw InputContractError("similarity table needs at least one query");
  std::vector<Vector> emb;
  emb.reserve(queries.size());
  SimilarityTable t;
  t.image_id = features.image_id;
  t.height = features.height;
  t.width = features.width;
  t.source = features.source();
  for (const auto& q : queries) {
    emb.push_back(q.embedding);
    t.queries.push_back(manifest_entry(q));
  }
  const Matrix text = stack_rows(emb);
  for (const auto& wf : features.windows) {
    WindowSimilarities ws;
    ws.window = wf.window;
    ws.grid_h = wf.i.grid_h;
    ws.grid_w = wf.i.grid_w;
    int zero_rows = 0;
    ws.similarities = quantize_f32(cosine_similarity(wf.i.tokens, text, &zero_rows));
    if (zero_rows > 0) spdlog::warn("{}: {} zero-norm patch tokens get cosine 0", features.image_id, zero_rows);
    const Matrix gap = global_pool(wf.i).vector.transpose();
    ws.global_responses = quantize_f32(cosine_similarity(gap, text)).row(0).transpose();
    ws.affinity = quantize_f32(aggregate_affinity(wf.attention).values);
    t.windows.push_back(std::move(ws));
  }
  return t;
}

std::optional<std::vector<int>> SimilarityTable::columns_of(std::span<const TextQuery> wanted) const {
  std::map<std::pair<int, std::string>, int> index;
  for (std::size_t k = 0; k < queries.size(); ++k) {
    index.emplace(std::make_pair(queries[k].class_index, queries[k].hash), static_cast<int>(k));
  }
  std::vector<int> cols;
  cols.reserve(wanted.size());
  for (const auto& q : wanted) {
    const auto e = manifest_entry(q);
    const auto it = index.find({e.class_index, e.hash});
    if (it == index.end() || queries[static_cast<std::size_t>(it->second)] != e) return std::nullopt;
    cols.push_back(it->second);
  }
  return cols;
}

SimilarityTable SimilarityTable::select(std::span<const int> columns) const {
  SimilarityTable t;
  t.image_id = image_id;
  t.height = height;
  t.width = width;
  t.source = source;
  std::vector<Eigen::Index> idx;
  for (int c : columns) {
    if (c < 0 || c >= static_cast<int>(queries.size())) throw InputContractError("similarity column out of range");
    t.queries.push_back(queries[static_cast<std::size_t>(c)]);
    idx.push_back(c);
  }
  for (const auto& w : windows) {
    WindowSimilarities ws;
    ws.window = w.window;
    ws.grid_h = w.grid_h;
    ws.grid_w = w.grid_w;
    ws.similarities = w.similarities(Eigen::all, idx);
    ws.global_responses = w.global_responses(idx);
    ws.affinity = w.affinity;
    t.windows.push_back(std::move(ws));
  }
  return t;
}

std::vector<ScoringWindow> SimilarityTable::scoring_windows() const {
  std::vector<ScoringWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back({w.similarities, w.affinity});
  return out;
}

void SimilarityTable::save(const std::filesystem::path& path) const {
  NamedArrays a;
  a.put_vector("image_size", {double(height), double(width)});
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    a.put_matrix(w_key(k, "sims"), w.similarities);
    a.put_vector(w_key(k, "global"), std::vector<double>(w.global_responses.data(),
                                                         w.global_responses.data() + w.global_responses.size()));
    a.put_matrix(w_key(k, "affinity"), w.affinity);
    a.put_vector(w_key(k, "grid"), {double(w.grid_h), double(w.grid_w)});
    a.put_vector(w_key(k, "origin"), window_origin(w.window));
  }
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& q : queries) {
    manifest.push_back({{"class", q.class_index}, {"surface", q.surface}, {"kind", to_string(q.kind)}, {"hash", q.hash}});
  }
  a.metadata()["image_id"] = image_id;
  a.metadata()["source"] = source;
  a.metadata()["windows"] = std::to_string(windows.size());
  a.metadata()["queries"] = manifest.dump();
  a.save(path);
}

SimilarityTable SimilarityTable::load(const std::filesystem::path& path) {
  const NamedArrays a = NamedArrays::load(path);
  SimilarityTable t;
  try {
    t.image_id = a.metadata().at("image_id");
    t.source = a.metadata().at("source");
    for (const auto& q : nlohmann::json::parse(a.metadata().at("queries"))) {
      t.queries.push_back({q.at("class").get<int>(), q.at("surface").get<std::string>(),
                           query_kind_from_string(q.at("kind").get<std::string>()), q.at("hash").get<std::string>()});
    }
  } catch (const std::out_of_range& e) {
    throw ParseError("'" + path.string() + "': missing metadata");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': bad query manifest: " + e.what());
  }
  std::tie(t.height, t.width) = read_pair(a, "image_size");
  const std::size_t n = window_count(a);
  for (std::size_t k = 0; k < n; ++k) {
    WindowSimilarities w;
    w.window = window_from(a.vector(w_key(k, "origin")));
    std::tie(w.grid_h, w.grid_w) = read_pair(a, w_key(k, "grid"));
    w.similarities = a.matrix(w_key(k, "sims"));
    const auto g = a.vector(w_key(k, "global"));
    w.global_responses = Eigen::Map<const Vector>(g.data(), static_cast<Eigen::Index>(g.size()));
    w.affinity = a.matrix(w_key(k, "affinity"));
    if (w.similarities.cols() != static_cast<Eigen::Index>(t.queries.size()) ||
        w.global_responses.size() != w.similarities.cols() || w.similarities.rows() != w.grid_h * w.grid_w ||
        w.affinity.rows() != w.similarities.rows() || w.affinity.cols() != w.similarities.rows()) {
      throw ParseError("'" + path.string() + "': window " + std::to_string(k) + " has inconsistent shapes");
    }
    t.windows.push_back(std::move(w));
  }
  return t;
}

QueryLayout make_layout(std::span<const TextQuery> queries, int num_classes) {
  QueryLayout l;
  l.canonical_column.assign(static_cast<std::size_t>(num_classes), -1);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const int c = queries[q].class_index;
    if (c < 0 || c >= num_classes) throw InputContractError("query '" + queries[q].surface + "' has a bad class");
    if (queries[q].kind == QueryKind::kCanonical && l.canonical_column[static_cast<std::size_t>(c)] < 0) {
      l.canonical_column[static_cast<std::size_t>(c)] = static_cast<int>(q);
    }
    l.query_column.push_back(static_cast<int>(q));
    l.query_class.push_back(c);
  }
  for (int c = 0; c < num_classes; ++c) {
    if (l.canonical_column[static_cast<std::size_t>(c)] < 0) {
      throw InputContractError("class " + std::to_string(c) + " has no canonical query");
    }
  }
  return l;
}

// ---------------------------------------------------------------------------

SegmentationResult segment_from_table(const SimilarityTable& table, std::span<const int> query_class, int num_classes,
                                      const SegmentOptions& options) {
  if (query_class.size() != table.queries.size()) {
    throw InputContractError("segment: query classes do not match the table's columns");
  }
  const bool threshold_bg = options.background_threshold.has_value();
  // Threshold mode: class 0 is not scored by queries; foreground classes
  // shift down by one and the constant background column is prepended.
  std::vector<Eigen::Index> cols;
  std::vector<int> classes;
  for (std::size_t q = 0; q < query_class.size(); ++q) {
    if (threshold_bg && query_class[q] == 0) continue;
    cols.push_back(static_cast<Eigen::Index>(q));
    classes.push_back(threshold_bg ? query_class[q] - 1 : query_class[q]);
  }
  const int scored = threshold_bg ? num_classes - 1 : num_classes;
  if (scored < 1) throw InputContractError("segment: no classes to score");

  std::vector<ActivationMap> maps;
  maps.reserve(table.windows.size());
  for (const auto& w : table.windows) {
    const Matrix sims = w.similarities(Eigen::all, cols);
    ActivationMap m;
    if (options.plain) {
      if (static_cast<int>(classes.size()) != scored) {
        throw InputContractError("plain segmentation needs exactly one query per class");
      }
      const ActivationMap probs = logits_from_similarities(sims, w.grid_h, w.grid_w, {}, options.aggregation.logit_scale);
      m.values.resize(probs.values.rows(), scored);
      std::vector<char> seen(static_cast<std::size_t>(scored), 0);
      for (std::size_t k = 0; k < classes.size(); ++k) {
        if (seen[static_cast<std::size_t>(classes[k])]++) {
          throw InputContractError("plain segmentation needs exactly one query per class");
        }
        m.values.col(classes[k]) = probs.values.col(static_cast<Eigen::Index>(k));
      }
      m.grid_h = w.grid_h;
      m.grid_w = w.grid_w;
    } else {
      m = aggregate_window(sims, w.global_responses(cols), classes, scored, w.grid_h, w.grid_w, options.aggregation);
    }
    if (threshold_bg) {
      Matrix with_bg(m.values.rows(), num_classes);
      with_bg.col(0).setConstant(*options.background_threshold);
      with_bg.rightCols(scored) = m.values;
      m.values = std::move(with_bg);
    }
    maps.push_back(std::move(m));
  }
  SegmentationResult r = fuse_windows(table.height, table.width, options.windows, maps, options.keep_logits);
  r.image_id = table.image_id;
  return r;
}

// ---------------------------------------------------------------------------

PipelineContext PipelineContext::create(RunConfig config, const std::filesystem::path& dataset_path) {
  config.validate();
  PipelineContext ctx;
  ctx.dataset_path = dataset_path;
  ctx.dataset = DatasetSpec::load(dataset_path);
  ctx.backend = make_backend(config.backend, config.base_dir);
  const int p = ctx.backend->patch_size();
  if (ctx.dataset.window % p != 0) {
    throw ConfigError("window " + std::to_string(ctx.dataset.window) + " is not a multiple of the patch size " +
                      std::to_string(p));
  }
  ctx.config = std::move(config);
  return ctx;
}

std::filesystem::path PipelineContext::feature_path(const std::string& image_id) const {
  return config.cache_dir / dataset.name / (image_id + ".feat");
}

std::filesystem::path PipelineContext::sims_path(const std::string& image_id) const {
  return config.cache_dir / dataset.name / (image_id + ".sims");
}

std::size_t PipelineContext::scoring_image_count() const {
  const std::size_t n = dataset.images.size();
  return config.max_images ? std::min(n, static_cast<std::size_t>(*config.max_images)) : n;
}

SegmentOptions PipelineContext::segment_options(bool keep_logits) const {
  SegmentOptions o;
  o.windows = window_params(dataset);
  o.aggregation = config.aggregation_params(*backend);
  if (dataset.has_background && config.background == BackgroundMode::kThreshold) {
    o.background_threshold = config.background_threshold;
  }
  o.keep_logits = keep_logits;
  return o;
}

nlohmann::json ExtractReport::to_json() const {
  nlohmann::json f = nlohmann::json::array();
  for (const auto& x : failures) f.push_back({{"image_id", x.image_id}, {"reason", x.reason}});
  return {{"written", written}, {"reused", reused}, {"failures", f}};
}

namespace {

bool features_compatible(const PipelineContext& ctx, const ImageFeatures& f) {
  if (f.fingerprint != ctx.backend->fingerprint() || f.self_correction != ctx.config.self_correction) return false;
  std::vector<Window> have;
  for (const auto& w : f.windows) have.push_back(w.window);
  return same_windows(have, plan_image_windows(f.height, f.width, window_params(ctx.dataset)));
}

ImageFeatures fresh_features(const PipelineContext& ctx, const DatasetImage& image) {
  const Image img = load_image(image.image, image.id);
  return extract_image_features(img, *ctx.backend, window_params(ctx.dataset), ctx.config.self_correction);
}

}  // namespace

ExtractReport run_extract(const PipelineContext& ctx, bool force) {
  const auto& images = ctx.dataset.images;
  std::vector<int> status(images.size(), 0);  // 1 written, 2 reused, 3 failed
  std::vector<std::string> reasons(images.size());
  parallel_for(images.size(), ctx.config.jobs, [&](std::size_t i) {
    const auto path = ctx.feature_path(images[i].id);
    try {
      if (!force && std::filesystem::exists(path)) {
        try {
          if (features_compatible(ctx, load_features(path))) {
            status[i] = 2;
            return;
          }
        } catch (const std::exception& e) {
          spdlog::warn("{}: unreadable cache, recomputing ({})", path.string(), e.what());
        }
      }
      std::filesystem::create_directories(path.parent_path());
      save_features(path, fresh_features(ctx, images[i]));
      status[i] = 1;
    } catch (const std::exception& e) {
      status[i] = 3;
      reasons[i] = e.what();
    }
  });
  ExtractReport r;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (status[i] == 1) ++r.written;
    if (status[i] == 2) ++r.reused;
    if (status[i] == 3) r.failures.push_back({images[i].id, reasons[i]});
  }
  return r;
}

ImageFeatures obtain_features(const PipelineContext& ctx, const DatasetImage& image) {
  const auto path = ctx.feature_path(image.id);
  if (std::filesystem::exists(path)) {
    try {
      ImageFeatures f = load_features(path);
      if (features_compatible(ctx, f)) return f;
      spdlog::debug("{}: cache made with other settings, recomputing", path.string());
    } catch (const std::exception& e) {
      spdlog::warn("{}: unreadable cache, recomputing ({})", path.string(), e.what());
    }
  }
  return fresh_features(ctx, image);
}

SimilarityTable obtain_similarities(const PipelineContext& ctx, const DatasetImage& image,
                                    std::span<const TextQuery> queries, bool write_cache) {
  const auto path = ctx.sims_path(image.id);
  if (std::filesystem::exists(path)) {
    try {
      const SimilarityTable cached = SimilarityTable::load(path);
      const std::string expected =
          ctx.backend->fingerprint() + (ctx.config.self_correction ? "|self_correction=on" : "|self_correction=off");
      std::vector<Window> have;
      for (const auto& w : cached.windows) have.push_back(w.window);
      if (cached.source == expected &&
          same_windows(have, plan_image_windows(cached.height, cached.width, window_params(ctx.dataset)))) {
        if (auto cols = cached.columns_of(queries)) return cached.select(*cols);
      }
    } catch (const std::exception& e) {
      spdlog::warn("{}: unreadable similarity cache ({})", path.string(), e.what());
    }
  }
  SimilarityTable t = SimilarityTable::build(obtain_features(ctx, image), queries);
  if (write_cache) {
    std::filesystem::create_directories(path.parent_path());
    t.save(path);
  }
  return t;
}

DistillResult run_distill(const PipelineContext& ctx, const Vocabulary& candidates) {
  const int num_classes = static_cast<int>(ctx.dataset.classes.size());
  if (candidates.num_classes() != num_classes) {
    throw ConfigError("vocabulary has " + std::to_string(candidates.num_classes()) + " classes, dataset '" +
                      ctx.dataset.name + "' has " + std::to_string(num_classes));
  }
  const std::vector<TextQuery> queries = candidates.embed(*ctx.backend);
  const QueryLayout layout = make_layout(queries, num_classes);
  const std::size_t n = ctx.scoring_image_count();
  std::vector<std::string> reasons(n);
  auto provider = [&](std::size_t i) -> std::optional<std::vector<ScoringWindow>> {
    try {
      return obtain_similarities(ctx, ctx.dataset.images[i], queries, true).scoring_windows();
    } catch (const std::exception& e) {
      reasons[i] = e.what();
      return std::nullopt;
    }
  };
  std::vector<std::size_t> skipped;
  DistillResult r;
  r.records = score_vocabulary(n, provider, queries, layout, ctx.config.scoring_params(*ctx.backend),
                               ctx.config.jobs, &skipped);
  for (std::size_t i : skipped) {
    spdlog::warn("distill: skipped {}: {}", ctx.dataset.images[i].id, reasons[i]);
    r.skipped.push_back({ctx.dataset.images[i].id, reasons[i]});
  }
  const auto retained = filter_aliases(r.records, num_classes, ctx.config.filter_policy());
  r.filtered.dataset = candidates.dataset;
  r.filtered.stage = "filtered";
  r.filtered.templates = candidates.templates;
  for (const auto& cls : retained) {
    std::vector<VocabularyEntry> entries;
    for (const auto& q : cls) entries.push_back({q.surface, q.kind});
    r.filtered.classes.push_back(std::move(entries));
  }
  r.filtered.validate();
  return r;
}

std::string score_report_csv(std::span<const AliasScoreRecord> records, std::span<const std::string> class_names) {
  std::ostringstream os;
  os << "class,surface,kind,vg_score,vg_count,sc_score,sc_count,decision,reason\n";
  for (const auto& r : records) {
    const int c = r.query.class_index;
    const std::string cls =
        c >= 0 && static_cast<std::size_t>(c) < class_names.size() ? class_names[c] : std::to_string(c);
    os << csv_field(cls) << "," << csv_field(r.query.surface) << "," << to_string(r.query.kind) << ","
       << fmt(r.vg_score) << "," << r.vg_count << "," << fmt(r.sc_score) << "," << r.sc_count << ","
       << to_string(r.decision) << "," << csv_field(r.reason) << "\n";
  }
  return os.str();
}

std::vector<TemplateScore> score_templates(const PipelineContext& ctx, const Vocabulary& vocabulary,
                                           const std::vector<std::string>& templates) {
  const int num_classes = vocabulary.num_classes();
  std::vector<TextQuery> queries = vocabulary.anchors_only().embed(*ctx.backend);
  const std::size_t base = queries.size();
  std::vector<std::string> prompts;
  std::vector<int> prompt_class;
  for (const auto& t : templates) {
    check_template(t);
    for (int c = 0; c < num_classes; ++c) {
      for (const auto& e : vocabulary.classes[static_cast<std::size_t>(c)]) {
        prompts.push_back(instantiate(t, e.surface));
        prompt_class.push_back(c);
      }
    }
  }
  if (!prompts.empty()) {
    const auto emb = ctx.backend->encode_text(prompts);
    for (std::size_t k = 0; k < prompts.size(); ++k) {
      queries.push_back({prompt_class[k], prompts[k], QueryKind::kTemplateInstance, emb[k]});
    }
  }
  const QueryLayout layout = make_layout(queries, num_classes);
  const std::size_t n = ctx.scoring_image_count();
  auto provider = [&](std::size_t i) -> std::optional<std::vector<ScoringWindow>> {
    try {
      return obtain_similarities(ctx, ctx.dataset.images[i], queries, false).scoring_windows();
    } catch (const std::exception& e) {
      spdlog::warn("template scoring: skipped {}: {}", ctx.dataset.images[i].id, e.what());
      return std::nullopt;
    }
  };
  const auto records =
      score_vocabulary(n, provider, queries, layout, ctx.config.scoring_params(*ctx.backend), ctx.config.jobs);

  const std::size_t per_template = templates.empty() ? 0 : (queries.size() - base) / templates.size();
  std::vector<TemplateScore> out;
  for (std::size_t t = 0; t < templates.size(); ++t) {
    double vg = 0.0, sc = 0.0;
    int nvg = 0, nsc = 0;
    for (std::size_t k = 0; k < per_template; ++k) {
      const auto& r = records[base + t * per_template + k];
      if (r.vg_score) {
        vg += *r.vg_score;
        ++nvg;
      }
      if (r.sc_score) {
        sc += *r.sc_score;
        ++nsc;
      }
    }
    TemplateScore s{templates[t], std::nullopt, std::nullopt};
    if (nvg > 0) s.vg = vg / nvg;
    if (nsc > 0) s.sc = sc / nsc;
    out.push_back(std::move(s));
  }
  return out;
}

SegmentReport run_segment(const PipelineContext& ctx, const Vocabulary& vocabulary,
                          const std::optional<std::filesystem::path>& out_dir, bool keep_logits, bool plain) {
  const int num_classes = static_cast<int>(ctx.dataset.classes.size());
  if (vocabulary.num_classes() != num_classes) {
    throw ConfigError("vocabulary has " + std::to_string(vocabulary.num_classes()) + " classes, dataset '" +
                      ctx.dataset.name + "' has " + std::to_string(num_classes));
  }
  const std::vector<TextQuery> queries = (plain ? vocabulary.anchors_only() : vocabulary).embed(*ctx.backend);
  std::vector<int> query_class;
  for (const auto& q : queries) query_class.push_back(q.class_index);
  SegmentOptions options = ctx.segment_options(keep_logits);
  options.plain = plain;
  if (out_dir) std::filesystem::create_directories(*out_dir);

  const auto& images = ctx.dataset.images;
  std::vector<std::optional<SegmentationResult>> results(images.size());
  std::vector<std::string> reasons(images.size());
  std::vector<double> ms(images.size(), 0.0);
  parallel_for(images.size(), ctx.config.jobs, [&](std::size_t i) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const SimilarityTable table = obtain_similarities(ctx, images[i], queries, false);
      SegmentationResult r = segment_from_table(table, query_class, num_classes, options);
      ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (out_dir) {
        save_mask(*out_dir / (images[i].id + ".png"), r.labels);
        if (keep_logits && r.logits) {
          NamedArrays a;
          a.put_matrix("logits", *r.logits);
          a.put_vector("image_size", {double(r.labels.height), double(r.labels.width)});
          a.save(*out_dir / (images[i].id + ".logits"));
        }
      }
      results[i] = std::move(r);
    } catch (const std::exception& e) {
      reasons[i] = e.what();
    }
  });
  SegmentReport rep;
  double total = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (results[i]) {
      rep.results.push_back(std::move(*results[i]));
      total += ms[i];
    } else {
      rep.failures.push_back({images[i].id, reasons[i]});
    }
  }
  if (!rep.results.empty()) rep.mean_ms = total / static_cast<double>(rep.results.size());
  rep.peak_mb = peak_resident_mb();
  return rep;
}

MetricReport evaluate_results(const DatasetSpec& dataset, std::span<const SegmentationResult> results) {
  std::map<std::string, const SegmentationResult*> by_id;
  for (const auto& r : results) by_id[r.image_id] = &r;
  std::vector<LabelImage> preds, gts;
  for (const auto& img : dataset.images) {
    const auto it = by_id.find(img.id);
    if (it == by_id.end()) throw InputContractError("no prediction for image '" + img.id + "'");
    preds.push_back(it->second->labels);
    gts.push_back(load_mask(img.mask));
  }
  MetricReport r = compute_miou(preds, gts, static_cast<int>(dataset.classes.size()), dataset.ignore_index);
  r.class_names = dataset.classes;
  return r;
}

MetricReport run_evaluate(const DatasetSpec& dataset, const std::filesystem::path& pred_dir) {
  if (dataset.images.empty()) throw InputContractError("no images");
  std::vector<LabelImage> preds, gts;
  for (const auto& img : dataset.images) {
    const auto p = pred_dir / (img.id + ".png");
    if (!std::filesystem::exists(p)) throw InputContractError("missing prediction '" + p.string() + "'");
    preds.push_back(load_mask(p));
    gts.push_back(load_mask(img.mask));
  }
  MetricReport r = compute_miou(preds, gts, static_cast<int>(dataset.classes.size()), dataset.ignore_index);
  r.class_names = dataset.classes;
  return r;
}

IngestResult ingest_candidates(const std::filesystem::path& aliases, const std::vector<std::string>& class_names,
                               const std::string& dataset_name, const std::vector<std::string>& templates,
                               const EncoderBackend& backend, double gate) {
  IngestResult r;
  const auto candidates = load_candidates(aliases, class_names, &r.rejections);
  std::vector<double> cosines;
  const auto kept = hallucination_gate(candidates, backend, gate, &cosines);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (cosines[k] < gate) r.gated_out.push_back(candidates[k]);
  }
  r.vocabulary = Vocabulary::from_candidates(dataset_name, class_names, kept, templates);
  return r;
}

PipelineOutputs run_pipeline(const PipelineContext& ctx, const std::optional<std::filesystem::path>& candidates_path,
                             const std::optional<std::filesystem::path>& templates_path,
                             const std::optional<std::filesystem::path>& template_candidates_path,
                             const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::vector<std::string> templates = templates_path ? load_templates(*templates_path) : reference_templates();

  Vocabulary candidates;
  nlohmann::json ingest = nlohmann::json::object();
  if (candidates_path) {
    IngestResult in = ingest_candidates(*candidates_path, ctx.dataset.classes, ctx.dataset.name, templates,
                                        *ctx.backend, ctx.config.gate);
    ingest["rejections"] = in.rejections;
    nlohmann::json gated = nlohmann::json::array();
    for (const auto& g : in.gated_out) gated.push_back(g.alias_surface);
    ingest["gated_out"] = gated;
    candidates = std::move(in.vocabulary);
  } else {
    candidates = Vocabulary::from_candidates(ctx.dataset.name, ctx.dataset.classes, {}, templates);
  }

  DistillResult distilled = run_distill(ctx, candidates);
  Vocabulary vocab = distilled.filtered;
  write_text(out_dir / "scores.csv", score_report_csv(distilled.records, ctx.dataset.classes));

  if (template_candidates_path) {
    const auto cands = load_templates(*template_candidates_path);
    const auto cand_scores = score_templates(ctx, vocab, cands);
    const auto ref_scores = score_templates(ctx, vocab, reference_templates());
    vocab.templates = filter_templates(cand_scores, ref_scores);
  }
  vocab.save(out_dir / "vocab.json");

  const SegmentReport seg = run_segment(ctx, vocab, out_dir / "masks");
  if (!seg.failures.empty()) {
    throw std::runtime_error("segment: " + seg.failures.front().image_id + ": " + seg.failures.front().reason);
  }
  PipelineOutputs out;
  out.report = evaluate_results(ctx.dataset, seg.results);
  out.report.mean_ms = seg.mean_ms;
  out.report.peak_mb = seg.peak_mb;
  out.report.config = ctx.config.to_json();
  write_text(out_dir / "report.json", out.report.to_json().dump(2) + "\n");
  write_text(out_dir / "per_class.csv", out.report.per_class_csv());

  nlohmann::json seeds = nlohmann::json::object();
  if (ctx.config.backend.contains("seed")) seeds["backend"] = ctx.config.backend["seed"];
  out.manifest = {{"version", 1},
                  {"config", ctx.config.to_json()},
                  {"dataset_path", ctx.dataset_path.string()},
                  {"dataset", ctx.dataset.to_json()},
                  {"backend_fingerprint", ctx.backend->fingerprint()},
                  {"seeds", seeds},
                  {"inputs",
                   {{"candidates", candidates_path ? nlohmann::json(candidates_path->string()) : nlohmann::json(nullptr)},
                    {"templates", templates_path ? nlohmann::json(templates_path->string()) : nlohmann::json(nullptr)},
                    {"template_candidates", template_candidates_path
                                                ? nlohmann::json(template_candidates_path->string())
                                                : nlohmann::json(nullptr)}}},
                  {"ingest", ingest},
                  {"template_set", vocab.templates},
                  {"retained_queries", vocab.num_queries()}};
  write_text(out_dir / "manifest.json", out.manifest.dump(2) + "\n");
  return out;
}

std::string run_diagnose(const PipelineContext& ctx, const Vocabulary& vocabulary) {
  const int num_classes = static_cast<int>(ctx.dataset.classes.size());
  const std::vector<TextQuery> anchors = vocabulary.anchors_only().embed(*ctx.backend);
  const WindowParams params = window_params(ctx.dataset);
  std::vector<Matrix> native_rows, corrected_rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < ctx.scoring_image_count(); ++i) {
    const auto& img = ctx.dataset.images[i];
    const Image image = load_image(img.image, img.id);
    const LabelImage gt = load_mask(img.mask);
    const auto [rh, rw] = short_side_shape(image.height, image.width, params.short_side);
    const Image resized = resize_image(image, rh, rw);
    const LabelImage gt_resized = resize_nearest(gt, rh, rw);
    for (const Window& win : plan_windows(rh, rw, params.window, params.stride)) {
      const BackboneOutput out = ctx.backend->encode_backbone(crop_image(resized, win));
      native_rows.push_back(ctx.backend->adapter_forward(out.tokens).tokens);
      corrected_rows.push_back(corrected_adapter_forward(out.tokens, *ctx.backend).tokens);
      const LabelImage patch =
          downsample_mask(crop_labels(gt_resized, win), out.tokens.grid_h, out.tokens.grid_w, ctx.dataset.ignore_index);
      labels.insert(labels.end(), patch.labels.begin(), patch.labels.end());
    }
  }
  if (labels.empty()) throw InputContractError("no images");
  auto concat = [](const std::vector<Matrix>& parts) {
    Eigen::Index rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Matrix m(rows, parts.front().cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      m.middleRows(at, p.rows()) = p;
      at += p.rows();
    }
    return m;
  };
  const int n = static_cast<int>(labels.size());
  const PatchGrid native{concat(native_rows), n, 1, TokenSource::kAdapter, "all"};
  const PatchGrid corrected{concat(corrected_rows), n, 1, TokenSource::kAdapter, "all"};
  const LabelImage patch_labels{n, 1, labels};
  const auto intra = intra_class_similarity(corrected, native, patch_labels, num_classes);
  const auto text_native = image_text_similarity(native, anchors, patch_labels);
  const auto text_corrected = image_text_similarity(corrected, anchors, patch_labels);
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) {
    if (l >= 0 && l < num_classes) ++counts[static_cast<std::size_t>(l)];
  }
  std::ostringstream os;
  os << "class,patches,intra_class_similarity,text_similarity_native,text_similarity_corrected\n";
  for (int c = 0; c < num_classes; ++c) {
    os << csv_field(ctx.dataset.classes[static_cast<std::size_t>(c)]) << "," << counts[static_cast<std::size_t>(c)]
       << "," << fmt(intra[c]) << "," << fmt(text_native[c]) << "," << fmt(text_corrected[c]) << "\n";
  }
  return os.str();
}

}  // namespace ovseg
