// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/distillation.hpp"

#include "ovseg/linalg.hpp"
#include "ovseg/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace ovseg {

AffinityMatrix aggregate_affinity(const AttentionStack& stack) {
  if (stack.layers.empty()) throw InputContractError("aggregate_affinity: L must be >= 1");
  const auto n = stack.layers.front().rows();
  Matrix sum = Matrix::Zero(n, n);
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const Matrix& layer = stack.layers[l];
    if (layer.rows() != n || layer.cols() != n) {
      throw InputContractError("aggregate_affinity: layer " + std::to_string(l) + " shape mismatch");
    }
    sum += layer;
  }
  return {sum / static_cast<double>(stack.layers.size()), false};
}

Matrix transition_matrix(const AffinityMatrix& a, double alpha, int* isolated) {
  if (!(alpha >= 1.0)) throw InputContractError("random walk: alpha must be >= 1");
  if (a.values.rows() != a.values.cols()) throw InputContractError("random walk: affinity must be square");
  if ((a.values.array() < 0.0).any()) throw InputContractError("random walk: affinity must be non-negative");
  Matrix w = alpha == 1.0 ? a.values : Matrix(a.values.array().pow(alpha));
  int lonely = 0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double degree = w.row(i).sum();
    if (degree > 0.0) {
      w.row(i) /= degree;
    } else {
      w.row(i).setZero();
      w(i, i) = 1.0;
      ++lonely;
    }
  }
  if (lonely > 0) spdlog::warn("random walk: {} isolated patch(es) given a self-loop", lonely);
  if (isolated) *isolated = lonely;
  return w;
}

Matrix propagate(const Matrix& transition, const Matrix& m, int beta) {
  if (beta < 0) throw InputContractError("random walk: beta must be >= 0");
  if (transition.cols() != m.rows()) throw InputContractError("random walk: transition/map shape mismatch");
  Matrix out = m;
  for (int step = 0; step < beta; ++step) out = transition * out;
  return out;
}

ActivationMap random_walk_refine(const AffinityMatrix& a, const ActivationMap& m, double alpha, int beta) {
  if (!m.normalized) throw InputContractError("random_walk_refine: activation map must be normalized");
  if (a.values.rows() != m.values.rows()) throw InputContractError("random_walk_refine: affinity/map size mismatch");
  ActivationMap out = m;
  out.values = propagate(transition_matrix(a, alpha), m.values, beta);
  return out;
}

std::optional<double> vg_score_image(std::span<const double> m_col, std::span<const double> m_tilde_col,
                                     double threshold, VgScope scope) {
  if (m_col.size() != m_tilde_col.size()) throw InputContractError("vg_score_image: column length mismatch");
  double inter = 0.0, sum_m = 0.0, sum_t = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < m_col.size(); ++i) {
    const bool active = m_col[i] >= threshold;
    any = any || active;
    if (active || scope == VgScope::kGlobal) {
      inter += m_col[i] * m_tilde_col[i];
      sum_m += m_col[i];
      sum_t += m_tilde_col[i];
    }
  }
  if (!any) return std::nullopt;
  const double denom = sum_m + sum_t - inter;
  if (denom <= 0.0) return 0.0;
  // Propagated probabilities can exceed 1 by an ulp.
  return std::clamp(inter / denom, 0.0, 1.0);
}

std::optional<double> vg_score_image(const ActivationMap& m, const ActivationMap& m_tilde, int class_col,
                                     double threshold, VgScope scope) {
  if (m.values.rows() != m_tilde.values.rows() || m.values.cols() != m_tilde.values.cols() ||
      m.grid_h != m_tilde.grid_h || m.grid_w != m_tilde.grid_w) {
    throw InputContractError("vg_score_image: maps differ in shape");
  }
  if (class_col < 0 || class_col >= m.values.cols()) throw InputContractError("vg_score_image: column out of range");
  const Vector a = m.values.col(class_col);
  const Vector b = m_tilde.values.col(class_col);
  return vg_score_image(std::span<const double>(a.data(), static_cast<std::size_t>(a.size())),
                        std::span<const double>(b.data(), static_cast<std::size_t>(b.size())), threshold, scope);
}

Vector row_entropy(const Matrix& p) {
  Vector h(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) > 0.0) s -= p(i, j) * std::log(p(i, j));
    }
    h(i) = std::max(0.0, s);
  }
  return h;
}

std::optional<double> sc_score_image(const ActivationMap& m, int class_col, double threshold) {
  if (class_col < 0 || class_col >= m.values.cols()) throw InputContractError("sc_score_image: column out of range");
  const Vector h = row_entropy(m.values);
  double sum = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    if (m.values(i, class_col) >= threshold) {
      sum += h(i);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// ---------------------------------------------------------------------------

SubstitutionScorer::SubstitutionScorer(const Matrix& canonical_sims, Matrix transition, double logit_scale)
    : scale_(logit_scale), transition_(std::move(transition)) {
  if (canonical_sims.cols() == 0) throw InputContractError("substitution scorer: no canonical columns");
  if (transition_.rows() != canonical_sims.rows()) {
    throw InputContractError("substitution scorer: transition/similarity size mismatch");
  }
  const Eigen::Index n = canonical_sims.rows(), c = canonical_sims.cols();
  z_ = canonical_sims * logit_scale;
  rowmax_ = z_.rowwise().maxCoeff();
  z_.colwise() -= rowmax_;
  excl0_.resize(n, c);
  excl1_.resize(n, c);
  std::vector<double> e(static_cast<std::size_t>(c)), ez(static_cast<std::size_t>(c));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      e[j] = std::exp(z_(i, j));
      ez[j] = e[j] * z_(i, j);
    }
    // prefix sums left of j, then add suffix sums right of j
    double p0 = 0.0, p1 = 0.0;
    for (Eigen::Index j = 0; j < c; ++j) {
      excl0_(i, j) = p0;
      excl1_(i, j) = p1;
      p0 += e[j];
      p1 += ez[j];
    }
    double s0 = 0.0, s1 = 0.0;
    for (Eigen::Index j = c - 1; j >= 0; --j) {
      excl0_(i, j) += s0;
      excl1_(i, j) += s1;
      s0 += e[j];
      s1 += ez[j];
    }
  }
}

SubstitutionScorer::Columns SubstitutionScorer::substitute(int class_col, const Vector& candidate_sims,
                                                           int beta) const {
  const Eigen::Index n = z_.rows();
  if (candidate_sims.size() != n) throw InputContractError("substitute: candidate column length mismatch");
  if (class_col < 0 || class_col >= z_.cols()) throw InputContractError("substitute: class column out of range");
  Columns out;
  out.probability.resize(n);
  out.entropy.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double zq = candidate_sims(i) * scale_ - rowmax_(i);
    const double eq = std::exp(zq);
    const double total = excl0_(i, class_col) + eq;
    out.probability(i) = eq / total;
    out.entropy(i) = std::max(0.0, std::log(total) - (excl1_(i, class_col) + eq * zq) / total);
  }
  out.propagated = propagate(transition_, out.probability, beta);
  return out;
}

ActivationMap substituted_map(const Matrix& canonical_sims, int class_col, const Vector& candidate_sims,
                              double logit_scale) {
  Matrix sims = canonical_sims;
  sims.col(class_col) = candidate_sims;
  return logits_from_similarities(sims, static_cast<int>(sims.rows()), 1, {}, logit_scale);
}

ImageScore score_candidate(std::span<const SubstitutionScorer> windows, std::span<const Vector> candidate_sims,
                           int class_col, const ScoringParams& params) {
  if (windows.size() != candidate_sims.size()) throw InputContractError("score_candidate: window count mismatch");
  Eigen::Index total = 0;
  for (const auto& w : windows) total += w.num_patches();
  Vector prob(total), prop(total), ent(total);
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto cols = windows[k].substitute(class_col, candidate_sims[k], params.beta);
    const Eigen::Index n = cols.probability.size();
    prob.segment(offset, n) = cols.probability;
    prop.segment(offset, n) = cols.propagated;
    ent.segment(offset, n) = cols.entropy;
    offset += n;
  }
  ImageScore s;
  s.vg = vg_score_image(std::span<const double>(prob.data(), static_cast<std::size_t>(total)),
                        std::span<const double>(prop.data(), static_cast<std::size_t>(total)), params.threshold,
                        params.scope);
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < total; ++i) {
    if (prob(i) >= params.threshold) {
      sum += ent(i);
      ++count;
    }
  }
  if (count > 0) s.sc = sum / count;
  return s;
}

// ---------------------------------------------------------------------------

std::string to_string(Decision d) {
  switch (d) {
    case Decision::kPending:
      return "pending";
    case Decision::kRetained:
      return "retained";
    case Decision::kDropped:
      return "dropped";
    case Decision::kAnchor:
      return "anchor";
  }
  return "unknown";
}

void AliasScoreRecord::accumulate(const ImageScore& s) {
  if (s.vg) {
    vg_sum += *s.vg;
    ++vg_count;
  }
  if (s.sc) {
    sc_sum += *s.sc;
    ++sc_count;
  }
}

void AliasScoreRecord::merge(const AliasScoreRecord& other) {
  vg_sum += other.vg_sum;
  vg_count += other.vg_count;
  sc_sum += other.sc_sum;
  sc_count += other.sc_count;
}

void AliasScoreRecord::finalize() {
  vg_score = vg_count > 0 ? std::optional<double>(vg_sum / vg_count) : std::nullopt;
  sc_score = sc_count > 0 ? std::optional<double>(sc_sum / sc_count) : std::nullopt;
}

std::vector<AliasScoreRecord> score_vocabulary(
    std::size_t num_images, const std::function<std::optional<std::vector<ScoringWindow>>(std::size_t)>& provider,
    const std::vector<TextQuery>& queries, const QueryLayout& layout, const ScoringParams& params, int jobs,
    std::vector<std::size_t>* skipped) {
  if (layout.query_column.size() != queries.size() || layout.query_class.size() != queries.size()) {
    throw InputContractError("score_vocabulary: layout does not match query list");
  }
  const int num_classes = static_cast<int>(layout.canonical_column.size());
  std::vector<int> canon(layout.canonical_column);

  std::vector<std::vector<ImageScore>> per_image(num_images);
  std::vector<char> was_skipped(num_images, 0);
  parallel_for(num_images, jobs, [&](std::size_t img) {
    auto windows = provider(img);
    if (!windows) {
      was_skipped[img] = 1;
      return;
    }
    std::vector<SubstitutionScorer> scorers;
    scorers.reserve(windows->size());
    for (const auto& w : *windows) {
      Matrix canonical_sims(w.similarities.rows(), num_classes);
      for (int c = 0; c < num_classes; ++c) canonical_sims.col(c) = w.similarities.col(canon[c]);
      scorers.emplace_back(canonical_sims, transition_matrix({w.affinity, false}, params.alpha), params.logit_scale);
    }
    std::vector<ImageScore> scores(queries.size());
    std::vector<Vector> cand(windows->size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
      for (std::size_t k = 0; k < windows->size(); ++k) cand[k] = (*windows)[k].similarities.col(layout.query_column[q]);
      scores[q] = score_candidate(scorers, cand, layout.query_class[q], params);
    }
    per_image[img] = std::move(scores);
  });

  std::vector<AliasScoreRecord> records(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) records[q].query = queries[q];
  for (std::size_t img = 0; img < num_images; ++img) {
    if (was_skipped[img]) {
      if (skipped) skipped->push_back(img);
      continue;
    }
    for (std::size_t q = 0; q < queries.size(); ++q) records[q].accumulate(per_image[img][q]);
  }
  for (auto& r : records) r.finalize();
  return records;
}

std::vector<std::vector<TextQuery>> filter_aliases(std::vector<AliasScoreRecord>& records, int num_classes,
                                                   const FilterPolicy& policy) {
  std::vector<int> anchor(static_cast<std::size_t>(num_classes), -1);
  for (std::size_t r = 0; r < records.size(); ++r) {
    records[r].finalize();
    const int c = records[r].query.class_index;
    if (c < 0 || c >= num_classes) throw InputContractError("filter_aliases: record class out of range");
    if (records[r].query.kind == QueryKind::kCanonical && anchor[c] < 0) anchor[c] = static_cast<int>(r);
  }

  std::vector<std::vector<TextQuery>> out(static_cast<std::size_t>(num_classes));
  std::vector<char> anchor_usable(static_cast<std::size_t>(num_classes), 1);
  for (int c = 0; c < num_classes; ++c) {
    if (anchor[c] < 0) throw ConfigError("class " + std::to_string(c) + " has no canonical anchor record");
    AliasScoreRecord& a = records[anchor[c]];
    a.decision = Decision::kAnchor;
    a.reason = "anchor";
    out[c].push_back(a.query);
    if (!a.vg_score || !a.sc_score) {
      if (!policy.anchor_only_when_unsupported) {
        throw ConfigError("anchor '" + a.query.surface +
                          "' has no high-activation patch in any image (dataset/threshold mismatch)");
      }
      anchor_usable[c] = 0;
    }
  }

  for (std::size_t r = 0; r < records.size(); ++r) {
    AliasScoreRecord& rec = records[r];
    const int c = rec.query.class_index;
    if (static_cast<int>(r) == anchor[c]) continue;
    const AliasScoreRecord& a = records[anchor[c]];
    rec.decision = Decision::kDropped;
    if (!anchor_usable[c]) {
      rec.reason = "anchor-unsupported";
    } else if (rec.vg_count == 0 || rec.sc_count == 0) {
      rec.reason = "no-support";
    } else if (rec.vg_count < policy.min_support || rec.sc_count < policy.min_support) {
      rec.reason = "insufficient-support";
    } else {
      const bool vg_ok = *rec.vg_score > *a.vg_score;
      const bool sc_ok = *rec.sc_score < *a.sc_score;
      if (vg_ok && sc_ok) {
        rec.decision = Decision::kRetained;
        rec.reason = "beats-anchor";
        out[c].push_back(rec.query);
      } else if (!vg_ok && !sc_ok) {
        rec.reason = "vg-not-higher;sc-not-lower";
      } else {
        rec.reason = vg_ok ? "sc-not-lower" : "vg-not-higher";
      }
    }
  }
  return out;
}

const std::vector<std::string>& foundational_templates() {
  static const std::vector<std::string> kTemplates = {"a photo of a {}", "a detailed view of a {}"};
  return kTemplates;
}

std::vector<std::string> filter_templates(std::span<const TemplateScore> candidates,
                                          std::span<const TemplateScore> reference) {
  if (reference.empty()) throw InputContractError("filter_templates: empty reference set");
  double vg = 0.0, sc = 0.0;
  int nvg = 0, nsc = 0;
  for (const auto& t : reference) {
    if (t.vg) {
      vg += *t.vg;
      ++nvg;
    }
    if (t.sc) {
      sc += *t.sc;
      ++nsc;
    }
  }
  if (nvg == 0 || nsc == 0) throw InputContractError("filter_templates: reference set has no defined scores");
  vg /= nvg;
  sc /= nsc;

  std::vector<std::string> out = foundational_templates();
  for (const auto& t : candidates) {
    if (t.vg && t.sc && *t.vg > vg && *t.sc < sc &&
        std::find(out.begin(), out.end(), t.text) == out.end()) {
      out.push_back(t.text);
    }
  }
  return out;
}

}  // namespace ovseg
