// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/evaluation.hpp"

#include "ovseg/linalg.hpp"

#include <sys/resource.h>

#include <chrono>
#include <fstream>
#include <map>
#include <sstream>

namespace ovseg {

void DatasetSpec::validate() const {
  if (classes.empty()) throw ConfigError("dataset '" + name + "' has no classes");
  if (short_side <= 0 || window <= 0 || stride <= 0) throw ConfigError("dataset '" + name + "': non-positive sizes");
  if (window > short_side) {
    throw ConfigError("dataset '" + name + "': window " + std::to_string(window) + " exceeds short side " +
                      std::to_string(short_side));
  }
  if (stride > window) throw ConfigError("dataset '" + name + "': stride exceeds window");
  for (const auto& img : images) {
    if (img.mask.empty()) throw ConfigError("dataset '" + name + "': image '" + img.id + "' has no mask");
  }
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (j.value("version", 1) != 1) throw ParseError("dataset config: unsupported version");
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  DatasetSpec d;
  try {
    d.name = j.at("name").get<std::string>();
    d.classes = j.at("classes").get<std::vector<std::string>>();
    d.ignore_index = j.value("ignore_index", d.ignore_index);
    d.has_background = j.value("has_background", d.has_background);
    d.short_side = j.value("short_side", d.short_side);
    d.window = j.value("window", d.window);
    d.stride = j.value("stride", d.stride);
    for (const auto& img : j.at("images")) {
      const std::string id = img.at("id").get<std::string>();
      d.images.push_back({id, resolve(img.at("image").get<std::string>()),
                          img.contains("mask") ? resolve(img.at("mask").get<std::string>()) : std::filesystem::path{}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset config: ") + e.what());
  }
  d.validate();
  return d;
}

DatasetSpec DatasetSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  return from_json(j, path.parent_path());
}

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json imgs = nlohmann::json::array();
  for (const auto& i : images) imgs.push_back({{"id", i.id}, {"image", i.image.string()}, {"mask", i.mask.string()}});
  return {{"version", 1},         {"name", name},       {"classes", classes},
          {"ignore_index", ignore_index}, {"has_background", has_background}, {"short_side", short_side},
          {"window", window},     {"stride", stride},   {"images", imgs}};
}

// ---------------------------------------------------------------------------

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * (num_classes + 1), 0) {
  if (num_classes < 1) throw InputContractError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelImage& prediction, const LabelImage& ground_truth, int ignore_index) {
  if (prediction.height != ground_truth.height || prediction.width != ground_truth.width ||
      prediction.labels.size() != ground_truth.labels.size()) {
    throw InputContractError("prediction " + std::to_string(prediction.height) + "x" +
                             std::to_string(prediction.width) + " does not match ground truth " +
                             std::to_string(ground_truth.height) + "x" + std::to_string(ground_truth.width));
  }
  for (std::size_t i = 0; i < ground_truth.labels.size(); ++i) {
    const int t = ground_truth.labels[i];
    if (t == ignore_index || t < 0 || t >= classes_) continue;
    const int p = prediction.labels[i];
    const int col = (p >= 0 && p < classes_) ? p : classes_;
    ++counts_[static_cast<std::size_t>(t) * (classes_ + 1) + col];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw InputContractError("confusion matrix class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_[static_cast<std::size_t>(truth) * (classes_ + 1) + predicted];
}

std::vector<std::optional<double>> ConfusionMatrix::iou() const {
  std::vector<std::optional<double>> out(static_cast<std::size_t>(classes_));
  for (int c = 0; c < classes_; ++c) {
    std::int64_t gt = invalid(c), pred = 0;
    for (int k = 0; k < classes_; ++k) {
      gt += at(c, k);
      pred += at(k, c);
    }
    const std::int64_t tp = at(c, c);
    const std::int64_t uni = gt + pred - tp;
    if (uni > 0) out[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

double ConfusionMatrix::mean_iou() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : iou()) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

double ConfusionMatrix::pixel_accuracy() const {
  std::int64_t correct = 0, total = 0;
  for (int t = 0; t < classes_; ++t) {
    correct += at(t, t);
    for (int p = 0; p <= classes_; ++p) total += counts_[static_cast<std::size_t>(t) * (classes_ + 1) + p];
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    per_class[name] = per_class_iou[c] ? nlohmann::json(*per_class_iou[c]) : nlohmann::json(nullptr);
  }
  nlohmann::json j = {{"miou", miou}, {"pixel_accuracy", pixel_accuracy}, {"per_class_iou", per_class},
                      {"config", config}};
  j["mean_ms_per_image"] = mean_ms ? nlohmann::json(*mean_ms) : nlohmann::json(nullptr);
  j["peak_mb"] = peak_mb ? nlohmann::json(*peak_mb) : nlohmann::json(nullptr);
  j["peak_mb_definition"] = "peak resident set size of the process";
  return j;
}

std::string MetricReport::per_class_csv() const {
  std::ostringstream os;
  os << "class,iou\n";
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
    os << (c < class_names.size() ? class_names[c] : std::to_string(c)) << ",";
    if (per_class_iou[c]) os << *per_class_iou[c];
    os << "\n";
  }
  return os.str();
}

MetricReport compute_miou(std::span<const LabelImage> predictions, std::span<const LabelImage> ground_truth,
                          int num_classes, int ignore_index) {
  if (predictions.size() != ground_truth.size()) {
    throw InputContractError("compute_miou: prediction and ground-truth counts differ");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) cm.add(predictions[i], ground_truth[i], ignore_index);
  MetricReport r;
  r.per_class_iou = cm.iou();
  r.miou = cm.mean_iou();
  r.pixel_accuracy = cm.pixel_accuracy();
  return r;
}

LabelImage downsample_mask(const LabelImage& mask, int grid_h, int grid_w, int ignore_index) {
  std::vector<std::map<int, int>> votes(static_cast<std::size_t>(grid_h) * grid_w);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const int l = mask.at(y, x);
      if (l == ignore_index) continue;
      const int gy = static_cast<int>(static_cast<std::int64_t>(y) * grid_h / mask.height);
      const int gx = static_cast<int>(static_cast<std::int64_t>(x) * grid_w / mask.width);
      ++votes[static_cast<std::size_t>(gy) * grid_w + gx][l];
    }
  LabelImage out{grid_h, grid_w, std::vector<int>(votes.size(), ignore_index)};
  for (std::size_t k = 0; k < votes.size(); ++k) {
    int best = 0;
    for (const auto& [label, n] : votes[k]) {
      if (n > best) {
        best = n;
        out.labels[k] = label;
      }
    }
  }
  return out;
}

namespace {

void check_aligned(const PatchGrid& g, const LabelImage& patch_labels) {
  if (patch_labels.height != g.grid_h || patch_labels.width != g.grid_w ||
      static_cast<Eigen::Index>(patch_labels.labels.size()) != g.tokens.rows()) {
    throw InputContractError("patch labels are not aligned with the patch grid");
  }
}

std::vector<std::optional<double>> class_means(const Vector& per_patch, const LabelImage& labels, int num_classes) {
  std::vector<double> sum(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<int> n(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const int c = labels.labels[i];
    if (c < 0 || c >= num_classes) continue;
    sum[static_cast<std::size_t>(c)] += per_patch(static_cast<Eigen::Index>(i));
    ++n[static_cast<std::size_t>(c)];
  }
  std::vector<std::optional<double>> out(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    if (n[static_cast<std::size_t>(c)] > 0) out[static_cast<std::size_t>(c)] = sum[c] / n[c];
  }
  return out;
}

}  // namespace

std::vector<std::optional<double>> intra_class_similarity(const PatchGrid& refined, const PatchGrid& original,
                                                          const LabelImage& patch_labels, int num_classes) {
  check_aligned(refined, patch_labels);
  check_aligned(original, patch_labels);
  if (refined.tokens.cols() != original.tokens.cols()) throw InputContractError("token dimensions differ");
  Vector cos(refined.tokens.rows());
  for (Eigen::Index i = 0; i < cos.size(); ++i) {
    const double na = refined.tokens.row(i).norm(), nb = original.tokens.row(i).norm();
    cos(i) = (na == 0.0 || nb == 0.0) ? 0.0 : refined.tokens.row(i).dot(original.tokens.row(i)) / (na * nb);
  }
  return class_means(cos, patch_labels, num_classes);
}

std::vector<std::optional<double>> image_text_similarity(const PatchGrid& tokens,
                                                         std::span<const TextQuery> class_queries,
                                                         const LabelImage& patch_labels) {
  check_aligned(tokens, patch_labels);
  std::vector<Vector> emb;
  for (const auto& q : class_queries) emb.push_back(q.embedding);
  const Matrix cos = cosine_similarity(tokens.tokens, stack_rows(emb));
  Vector own(tokens.tokens.rows());
  for (Eigen::Index i = 0; i < own.size(); ++i) {
    const int c = patch_labels.labels[static_cast<std::size_t>(i)];
    own(i) = (c >= 0 && c < cos.cols()) ? cos(i, c) : 0.0;
  }
  return class_means(own, patch_labels, static_cast<int>(class_queries.size()));
}

double peak_resident_mb() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<double>(usage.ru_maxrss) / 1024.0;
}

CostMeasurement measure_cost(std::size_t num_images, const std::function<void(std::size_t)>& run) {
  if (num_images == 0) throw InputContractError("no images");
  run(0);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < num_images; ++i) run(i);
  const auto t1 = std::chrono::steady_clock::now();
  CostMeasurement m;
  m.images = num_images;
  m.mean_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(num_images);
  m.peak_mb = peak_resident_mb();
  return m;
}

}  // namespace ovseg
