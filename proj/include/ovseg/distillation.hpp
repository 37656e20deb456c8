// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Visual-guided scoring of candidate aliases and templates.
//
// Each candidate query is scored against the backbone's own patch affinity:
// its activation column is propagated by a random walk over the aggregated
// attention, and the agreement between the raw and propagated columns (a
// soft IoU over high-activation patches, "VG") together with the mean class
// entropy over the same patches ("SC") decides whether it is kept. The
// canonical class name is the anchor: candidates must beat it on both.

#pragma once

#include "ovseg/dense_inference.hpp"
#include "ovseg/types.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ovseg {

struct AffinityMatrix {
  Matrix values;
  bool alpha_applied = false;
};

/// Mean of the per-layer attention matrices.
AffinityMatrix aggregate_affinity(const AttentionStack& stack);

/// Row-normalized elementwise power A^alpha. A row whose powered sum is zero
/// becomes the one-hot on its own index; `isolated` receives the count.
Matrix transition_matrix(const AffinityMatrix& a, double alpha, int* isolated = nullptr);

/// W^beta * m as beta successive products; beta = 0 returns m unchanged.
Matrix propagate(const Matrix& transition, const Matrix& m, int beta);

/// M~ = W^beta M with W = Q^-1 A^alpha.
ActivationMap random_walk_refine(const AffinityMatrix& a, const ActivationMap& m, double alpha, int beta);

/// Region over which the soft IoU sums run: only high-activation patches
/// (default) or every patch, with the threshold deciding inclusion only.
enum class VgScope { kRestricted, kGlobal };

/// Soft IoU between an activation column and its propagated counterpart over
/// patches whose raw activation is >= threshold. Absent when no patch
/// qualifies.
std::optional<double> vg_score_image(std::span<const double> m_col, std::span<const double> m_tilde_col,
                                     double threshold = 0.4, VgScope scope = VgScope::kRestricted);
std::optional<double> vg_score_image(const ActivationMap& m, const ActivationMap& m_tilde, int class_col,
                                     double threshold = 0.4, VgScope scope = VgScope::kRestricted);

/// Mean row entropy (natural log, 0 ln 0 = 0) over patches with
/// m[i, class_col] >= threshold. Absent when no patch qualifies.
std::optional<double> sc_score_image(const ActivationMap& m, int class_col, double threshold = 0.4);

/// Per-patch row entropy, clamped at zero.
Vector row_entropy(const Matrix& probabilities);

// ---------------------------------------------------------------------------
// Substitution scoring.

struct ScoringParams {
  double alpha = 2.0;
  int beta = 2;
  double threshold = 0.4;
  double logit_scale = 100.0;
  VgScope scope = VgScope::kRestricted;
};

/// One window (or whole image) worth of scoring inputs.
struct ScoringWindow {
  Matrix similarities;  // [hw x Q] cosine of every query
  Matrix affinity;      // [hw x hw] aggregated backbone attention
};

/// Evaluates one column of the canonical vocabulary replaced by a candidate.
/// Per-patch exclusion sums are precomputed once so each substitution costs
/// O(hw) plus the random walk of a single column.
class SubstitutionScorer {
 public:
  /// `canonical_sims` is [hw x C'] (one column per class), `transition` the
  /// row-stochastic W.
  SubstitutionScorer(const Matrix& canonical_sims, Matrix transition, double logit_scale);

  struct Columns {
    Vector probability;  // M[:, c] with the candidate in column c
    Vector propagated;   // (W^beta M)[:, c]
    Vector entropy;      // row entropy of the substituted map
  };
  Columns substitute(int class_col, const Vector& candidate_sims, int beta) const;

  int num_patches() const { return static_cast<int>(z_.rows()); }

 private:
  Matrix z_;       // scaled logits minus row max
  Matrix excl0_;   // sum_{j != c} exp(z_j)
  Matrix excl1_;   // sum_{j != c} exp(z_j) * z_j
  Vector rowmax_;
  double scale_;
  Matrix transition_;
};

/// Reference route for one substitution: builds the full substituted
/// softmax map explicitly. Used by tests to cross-check SubstitutionScorer.
ActivationMap substituted_map(const Matrix& canonical_sims, int class_col, const Vector& candidate_sims,
                              double logit_scale);

struct ImageScore {
  std::optional<double> vg;
  std::optional<double> sc;
};

/// Scores a candidate on one image made of one or more windows. Patches of
/// all windows are pooled; each window is propagated with its own affinity.
ImageScore score_candidate(std::span<const SubstitutionScorer> windows, std::span<const Vector> candidate_sims,
                           int class_col, const ScoringParams& params);

// ---------------------------------------------------------------------------
// Records and filtering.

enum class Decision { kPending, kRetained, kDropped, kAnchor };
std::string to_string(Decision d);

struct AliasScoreRecord {
  TextQuery query;
  double vg_sum = 0.0;
  int vg_count = 0;
  double sc_sum = 0.0;
  int sc_count = 0;
  std::optional<double> vg_score;
  std::optional<double> sc_score;
  Decision decision = Decision::kPending;
  std::string reason;

  void accumulate(const ImageScore& s);
  void merge(const AliasScoreRecord& other);
  void finalize();
};

/// Which similarity column each query occupies, and which column holds
/// each class's canonical name.
struct QueryLayout {
  std::vector<int> canonical_column;  // per class
  std::vector<int> query_column;      // per query (records order)
  std::vector<int> query_class;       // per query
};

/// Accumulates per-image scores for every query over `num_images` images.
/// `provider(i)` returns the scoring windows of image i, or nullopt to skip
/// it (the skip is reported through `skipped`). Images are scored
/// independently on up to `jobs` threads and reduced in image order.
std::vector<AliasScoreRecord> score_vocabulary(
    std::size_t num_images, const std::function<std::optional<std::vector<ScoringWindow>>(std::size_t)>& provider,
    const std::vector<TextQuery>& queries, const QueryLayout& layout, const ScoringParams& params, int jobs = 1,
    std::vector<std::size_t>* skipped = nullptr);

struct FilterPolicy {
  /// Candidates scored on fewer images than this are dropped.
  int min_support = 5;
  /// When an anchor has no defined score: throw ConfigError (false) or keep
  /// the class anchor-only (true).
  bool anchor_only_when_unsupported = false;
};

/// Retains a candidate iff its VG is strictly above and its SC strictly below
/// its class anchor's. Anchors are always retained. Updates each record's
/// decision and reason; returns per-class retained queries, anchor first,
/// candidates in record order.
std::vector<std::vector<TextQuery>> filter_aliases(std::vector<AliasScoreRecord>& records, int num_classes,
                                                   const FilterPolicy& policy = {});

struct TemplateScore {
  std::string text;
  std::optional<double> vg;
  std::optional<double> sc;
};

/// The two templates that are always kept.
const std::vector<std::string>& foundational_templates();

/// Foundational templates followed by every candidate whose VG is strictly
/// above and SC strictly below the reference-set means. Throws
/// InputContractError on an empty reference set.
std::vector<std::string> filter_templates(std::span<const TemplateScore> candidates,
                                          std::span<const TemplateScore> reference);

}  // namespace ovseg
