// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/alias_pool.hpp"

#include "ovseg/linalg.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace ovseg {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

void require_version(const nlohmann::json& doc, const std::string& what) {
  if (!doc.is_object()) throw ParseError(what + ": top level must be an object");
  if (!doc.contains("version")) throw ParseError(what + ": missing field 'version'");
  if (!doc.at("version").is_number_integer() || doc.at("version").get<int>() != 1) {
    throw ParseError(what + ": field 'version' must be 1");
  }
}

}  // namespace

std::vector<AliasCandidate> parse_candidates(const nlohmann::json& doc, const std::vector<std::string>& dataset_classes,
                                             std::vector<std::string>* rejections) {
  require_version(doc, "alias file");
  if (!doc.contains("classes") || !doc.at("classes").is_array()) {
    throw ParseError("alias file: field 'classes' must be an array");
  }
  std::vector<AliasCandidate> out;
  std::vector<std::set<std::string>> seen(dataset_classes.size());
  const auto& classes = doc.at("classes");
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& entry = classes[k];
    const std::string where = "alias file: classes[" + std::to_string(k) + "]";
    if (!entry.is_object() || !entry.contains("name") || !entry.at("name").is_string()) {
      throw ParseError(where + ".name must be a string");
    }
    if (!entry.contains("aliases") || !entry.at("aliases").is_array()) {
      throw ParseError(where + ".aliases must be an array");
    }
    const std::string name = entry.at("name").get<std::string>();
    const auto it = std::find_if(dataset_classes.begin(), dataset_classes.end(),
                                 [&](const std::string& c) { return lower(c) == lower(name); });
    if (it == dataset_classes.end()) {
      if (rejections) rejections->push_back("unknown class '" + name + "' (" + where + ")");
      continue;
    }
    const int class_index = static_cast<int>(it - dataset_classes.begin());
    const auto& aliases = entry.at("aliases");
    for (std::size_t a = 0; a < aliases.size(); ++a) {
      if (!aliases[a].is_string()) throw ParseError(where + ".aliases[" + std::to_string(a) + "] must be a string");
      const std::string alias = trim(aliases[a].get<std::string>());
      if (alias.empty()) {
        if (rejections) rejections->push_back("empty alias for class '" + name + "' (" + where + ")");
        continue;
      }
      if (!seen[static_cast<std::size_t>(class_index)].insert(lower(alias)).second) continue;
      out.push_back({class_index, *it, alias, CandidateSource::kLlmFile});
    }
  }
  return out;
}

std::vector<AliasCandidate> load_candidates(const std::filesystem::path& path,
                                            const std::vector<std::string>& dataset_classes,
                                            std::vector<std::string>* rejections) {
  return parse_candidates(read_json(path), dataset_classes, rejections);
}

std::vector<AliasCandidate> hallucination_gate(const std::vector<AliasCandidate>& candidates,
                                               const EncoderBackend& backend, double threshold,
                                               std::vector<double>* cosines) {
  std::vector<AliasCandidate> out;
  if (cosines) cosines->clear();
  if (candidates.empty()) return out;
  std::vector<std::string> prompts;
  for (const auto& c : candidates) {
    prompts.push_back(c.canonical_name);
    prompts.push_back(c.alias_surface);
  }
  const auto emb = backend.encode_text(prompts);
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const double cos = emb[2 * k].dot(emb[2 * k + 1]);
    if (cosines) cosines->push_back(cos);
    if (cos >= threshold) out.push_back(candidates[k]);
  }
  return out;
}

void check_template(const std::string& tmpl) {
  const auto first = tmpl.find("{}");
  if (first == std::string::npos) throw InputContractError("template '" + tmpl + "' has no {} placeholder");
  if (tmpl.find("{}", first + 2) != std::string::npos) {
    throw InputContractError("template '" + tmpl + "' has more than one {} placeholder");
  }
}

std::string instantiate(const std::string& tmpl, const std::string& name) {
  check_template(tmpl);
  std::string out = tmpl;
  out.replace(out.find("{}"), 2, name);
  return out;
}

Vector build_query_embedding(const std::string& name, const std::vector<std::string>& templates,
                             const EncoderBackend& backend) {
  if (templates.empty()) throw InputContractError("build_query_embedding: no templates");
  std::vector<std::string> prompts;
  prompts.reserve(templates.size());
  for (const auto& t : templates) prompts.push_back(instantiate(t, name));
  const auto emb = backend.encode_text(prompts);
  Vector mean = Vector::Zero(emb.front().size());
  for (const auto& e : emb) mean += e;
  return normalized(mean / static_cast<double>(emb.size()));
}

std::vector<std::string> load_templates(const std::filesystem::path& path) {
  const auto doc = read_json(path);
  require_version(doc, "template file");
  if (!doc.contains("templates") || !doc.at("templates").is_array()) {
    throw ParseError("template file: field 'templates' must be an array");
  }
  std::vector<std::string> out;
  for (std::size_t k = 0; k < doc.at("templates").size(); ++k) {
    const auto& t = doc.at("templates")[k];
    if (!t.is_string()) throw ParseError("template file: templates[" + std::to_string(k) + "] must be a string");
    check_template(t.get<std::string>());
    out.push_back(t.get<std::string>());
  }
  if (out.empty()) throw ParseError("template file: no templates");
  return out;
}

const std::vector<std::string>& reference_templates() {
  static const std::vector<std::string> kTemplates = {
      "a bad photo of a {}.",
      "a photo of many {}.",
      "a sculpture of a {}.",
      "a photo of the hard to see {}.",
      "a low resolution photo of the {}.",
      "a rendering of a {}.",
      "graffiti of a {}.",
      "a bad photo of the {}.",
      "a cropped photo of the {}.",
      "a tattoo of a {}.",
      "the embroidered {}.",
      "a photo of a hard to see {}.",
      "a bright photo of a {}.",
      "a photo of a clean {}.",
      "a photo of a dirty {}.",
      "a dark photo of the {}.",
      "a drawing of a {}.",
      "a photo of my {}.",
      "the plastic {}.",
      "a photo of the cool {}.",
      "a close-up photo of a {}.",
      "a black and white photo of the {}.",
      "a painting of the {}.",
      "a painting of a {}.",
      "a pixelated photo of the {}.",
      "a sculpture of the {}.",
      "a bright photo of the {}.",
      "a cropped photo of a {}.",
      "a plastic {}.",
      "a photo of the dirty {}.",
      "a jpeg corrupted photo of a {}.",
      "a blurry photo of the {}.",
      "a photo of the {}.",
      "a good photo of the {}.",
      "a rendering of the {}.",
      "a {} in a video game.",
      "a photo of one {}.",
      "a doodle of a {}.",
      "a close-up photo of the {}.",
      "a photo of a {}.",
      "the origami {}.",
      "the {} in a video game.",
      "a sketch of a {}.",
      "a doodle of the {}.",
      "a origami {}.",
      "a low resolution photo of a {}.",
      "the toy {}.",
      "a rendition of the {}.",
      "a photo of the clean {}.",
      "a photo of a large {}.",
      "a rendition of a {}.",
      "a photo of a nice {}.",
      "a photo of a weird {}.",
      "a blurry photo of a {}.",
      "a cartoon {}.",
      "art of a {}.",
      "a sketch of the {}.",
      "a embroidered {}.",
      "a pixelated photo of a {}.",
      "itap of the {}.",
      "a jpeg corrupted photo of the {}.",
      "a good photo of a {}.",
      "a plushie {}.",
      "a photo of the nice {}.",
      "a photo of the small {}.",
      "a photo of the weird {}.",
      "the cartoon {}.",
      "art of the {}.",
      "a drawing of the {}.",
      "a photo of the large {}.",
      "a black and white photo of a {}.",
      "the plushie {}.",
      "a dark photo of a {}.",
      "itap of a {}.",
      "graffiti of the {}.",
      "a toy {}.",
      "itap of my {}.",
      "a photo of a cool {}.",
      "a photo of a small {}.",
      "a tattoo of the {}.",
  };
  return kTemplates;
}

// ---------------------------------------------------------------------------

std::vector<std::string> Vocabulary::class_names() const {
  std::vector<std::string> out;
  for (const auto& c : classes) out.push_back(c.front().surface);
  return out;
}

std::size_t Vocabulary::num_queries() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.size();
  return n;
}

Vocabulary Vocabulary::anchors_only() const {
  Vocabulary v = *this;
  for (auto& c : v.classes) c.resize(1);
  return v;
}

Vocabulary Vocabulary::from_candidates(const std::string& dataset, const std::vector<std::string>& class_names,
                                       const std::vector<AliasCandidate>& candidates,
                                       std::vector<std::string> templates) {
  Vocabulary v;
  v.dataset = dataset;
  v.templates = std::move(templates);
  for (const auto& n : class_names) v.classes.push_back({{n, QueryKind::kCanonical}});
  for (const auto& c : candidates) {
    if (c.class_index < 0 || c.class_index >= v.num_classes()) {
      throw InputContractError("candidate '" + c.alias_surface + "' has an invalid class index");
    }
    v.classes[static_cast<std::size_t>(c.class_index)].push_back({c.alias_surface, QueryKind::kAlias});
  }
  v.validate();
  return v;
}

std::vector<TextQuery> Vocabulary::embed(const EncoderBackend& backend) const {
  validate();
  std::vector<TextQuery> out;
  out.reserve(num_queries());
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (const auto& e : classes[c]) {
      out.push_back({static_cast<int>(c), e.surface, e.kind, build_query_embedding(e.surface, templates, backend)});
    }
  }
  return out;
}

void Vocabulary::validate() const {
  if (classes.empty()) throw InputContractError("vocabulary has no classes");
  if (templates.empty()) throw InputContractError("vocabulary has no templates");
  for (const auto& t : templates) check_template(t);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c].empty() || classes[c].front().kind != QueryKind::kCanonical) {
      throw InputContractError("class " + std::to_string(c) + " does not start with its canonical name");
    }
    for (const auto& e : classes[c]) {
      if (e.surface.empty()) throw InputContractError("class " + std::to_string(c) + " has an empty query surface");
    }
  }
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : classes) {
    nlohmann::json aliases = nlohmann::json::array();
    for (std::size_t k = 1; k < c.size(); ++k) aliases.push_back(c[k].surface);
    cls.push_back({{"name", c.front().surface}, {"aliases", aliases}});
  }
  return {{"version", 1}, {"dataset", dataset}, {"stage", stage}, {"classes", cls}, {"templates", templates}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  require_version(j, "vocabulary file");
  Vocabulary v;
  try {
    v.dataset = j.value("dataset", "");
    v.stage = j.value("stage", "candidates");
    for (const auto& c : j.at("classes")) {
      std::vector<VocabularyEntry> entries{{c.at("name").get<std::string>(), QueryKind::kCanonical}};
      for (const auto& a : c.value("aliases", nlohmann::json::array())) {
        entries.push_back({a.get<std::string>(), QueryKind::kAlias});
      }
      v.classes.push_back(std::move(entries));
    }
    v.templates = j.at("templates").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocabulary file: ") + e.what());
  }
  v.validate();
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_json().dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

std::string alias_request(const std::string& category) {
  return "Generate 20 image-caption style noun phrases for " + category +
         ", covering synonyms, plurals, hyponyms, and concrete visual variants.";
}

std::vector<std::string> parse_alias_reply(const std::string& reply) {
  std::vector<std::string> out;
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    std::size_t b = 0;
    while (b < line.size() && (std::isspace(static_cast<unsigned char>(line[b])) || line[b] == '-' ||
                               line[b] == '*')) {
      ++b;
    }
    if (line.compare(b, 3, "\u2022") == 0) b += 3;
    std::size_t digits = b;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits > b && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) b = digits + 1;
    std::size_t e = line.size();
    while (e > b && (std::isspace(static_cast<unsigned char>(line[e - 1])) || line[e - 1] == ',')) --e;
    while (b < e && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    if (e - b >= 2 && (line[b] == '"' || line[b] == '\'') && line[e - 1] == line[b]) {
      ++b;
      --e;
    }
    if (e > b) out.push_back(line.substr(b, e - b));
  }
  return out;
}

}  // namespace ovseg
