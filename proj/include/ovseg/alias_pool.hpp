// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Candidate alias ingestion, the text-similarity hallucination gate, prompt
// templates and the vocabulary file.

#pragma once

#include "ovseg/encoder_backend.hpp"
#include "ovseg/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace ovseg {

enum class CandidateSource { kLlmFile, kManual };

struct AliasCandidate {
  int class_index = 0;
  std::string canonical_name;
  std::string alias_surface;
  CandidateSource source = CandidateSource::kLlmFile;
};

/// Parses an alias file
///   {"version":1,"dataset":"<name>","classes":[{"name":"bus","aliases":[...]}]}
/// against the dataset's class list. Aliases are trimmed and de-duplicated
/// case-insensitively per class. Entries naming a class absent from
/// `dataset_classes`, and empty aliases, are rejected into `rejections`.
/// Schema violations throw ParseError naming the offending field.
std::vector<AliasCandidate> load_candidates(const std::filesystem::path& path,
                                            const std::vector<std::string>& dataset_classes,
                                            std::vector<std::string>* rejections = nullptr);
std::vector<AliasCandidate> parse_candidates(const nlohmann::json& doc, const std::vector<std::string>& dataset_classes,
                                             std::vector<std::string>* rejections = nullptr);

/// Drops candidates whose bare-name embedding has cosine < threshold with the
/// bare canonical name. `cosines`, when given, receives the cosine of every
/// input candidate in input order.
std::vector<AliasCandidate> hallucination_gate(const std::vector<AliasCandidate>& candidates,
                                               const EncoderBackend& backend, double threshold = 0.7,
                                               std::vector<double>* cosines = nullptr);

/// Replaces the single "{}" placeholder of `tmpl` with `name`.
std::string instantiate(const std::string& tmpl, const std::string& name);

/// Throws InputContractError unless `tmpl` contains exactly one "{}".
void check_template(const std::string& tmpl);

/// Mean of the embeddings of every instantiated template, renormalized.
Vector build_query_embedding(const std::string& name, const std::vector<std::string>& templates,
                             const EncoderBackend& backend);

/// {"version":1,"templates":[...]}
std::vector<std::string> load_templates(const std::filesystem::path& path);

/// The 80 hand-written zero-shot classification templates used as the
/// default prompt set and as the reference for template scoring.
const std::vector<std::string>& reference_templates();

struct VocabularyEntry {
  std::string surface;
  QueryKind kind = QueryKind::kCanonical;
};

/// Per-class query lists (canonical name first) plus the prompt templates.
struct Vocabulary {
  std::string dataset;
  /// "candidates" after ingestion, "filtered" after distillation.
  std::string stage = "candidates";
  std::vector<std::vector<VocabularyEntry>> classes;
  std::vector<std::string> templates;

  int num_classes() const { return static_cast<int>(classes.size()); }
  std::vector<std::string> class_names() const;
  std::size_t num_queries() const;

  /// Canonical name only for every class.
  Vocabulary anchors_only() const;

  /// Builds the canonical-first vocabulary from class names and candidates.
  static Vocabulary from_candidates(const std::string& dataset, const std::vector<std::string>& class_names,
                                    const std::vector<AliasCandidate>& candidates,
                                    std::vector<std::string> templates);

  /// Embeds every query with the vocabulary's templates; flattened in class
  /// order, canonical first within each class.
  std::vector<TextQuery> embed(const EncoderBackend& backend) const;

  void validate() const;
  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
};

/// The request sent to a language model for one category.
std::string alias_request(const std::string& category);

/// One phrase per non-empty line of a model reply, with list numbering,
/// bullets and surrounding quotes removed.
std::vector<std::string> parse_alias_reply(const std::string& reply);

}  // namespace ovseg
