// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/distillation.hpp"
#include "ovseg/linalg.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace ovseg {
namespace {

using testing::Rng;

ActivationMap normalized_map(const Matrix& p) {
  ActivationMap m;
  m.values = p;
  m.grid_h = 1;
  m.grid_w = static_cast<int>(p.rows());
  m.normalized = true;
  return m;
}

// ---------------------------------------------------------------------------
// Affinity.

TEST(AggregateAffinity, SingleLayerIsIdentity) {
  Rng rng(1);
  AttentionStack s{{rng.stochastic(5, 5)}};
  EXPECT_EQ(aggregate_affinity(s).values, s.layers[0]);
}

TEST(AggregateAffinity, UniformPlusIdentity) {
  AttentionStack s{{Matrix::Constant(4, 4, 0.25), Matrix::Identity(4, 4)}};
  const Matrix a = aggregate_affinity(s).values;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(a(i, j), (0.25 + (i == j ? 1.0 : 0.0)) / 2.0, 1e-15);
  EXPECT_TRUE(is_row_stochastic(a, 1e-12));
}

TEST(AggregateAffinity, MatchesScalarLoop) {
  Rng rng(2);
  AttentionStack s;
  std::vector<testing::Rows> rows;
  for (int l = 0; l < 5; ++l) {
    s.layers.push_back(rng.stochastic(6, 6));
    rows.push_back(testing::to_rows(s.layers.back()));
  }
  const auto ref = testing::ref_mean_layers(rows);
  const Matrix a = aggregate_affinity(s).values;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(a(i, j), ref[i][j], 1e-7);
}

TEST(AggregateAffinity, ContractErrors) {
  EXPECT_THROW(aggregate_affinity(AttentionStack{}), InputContractError);
  AttentionStack s{{Matrix::Identity(3, 3), Matrix::Identity(4, 4)}};
  EXPECT_THROW(aggregate_affinity(s), InputContractError);
}

// ---------------------------------------------------------------------------
// Random walk.

TEST(RandomWalk, IdentityAffinityIsFixedPoint) {
  Rng rng(3);
  const ActivationMap m = normalized_map(rng.stochastic(5, 3));
  for (double alpha : {1.0, 2.0, 3.5})
    for (int beta : {1, 2, 5}) {
      EXPECT_EQ(random_walk_refine({Matrix::Identity(5, 5), false}, m, alpha, beta).values, m.values);
    }
}

TEST(RandomWalk, UniformAffinityFullyMixes) {
  Rng rng(4);
  const ActivationMap m = normalized_map(rng.stochastic(6, 3));
  const Matrix r = random_walk_refine({Matrix::Constant(6, 6, 1.0 / 6), false}, m, 2.0, 1).values;
  const Eigen::RowVectorXd mean = m.values.colwise().mean();
  for (int i = 0; i < 6; ++i) EXPECT_LT((r.row(i) - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RandomWalk, MatchesScalarLoop) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.stochastic(4, 4);
    const ActivationMap m = normalized_map(rng.stochastic(4, 2));
    const auto ref = testing::ref_random_walk(testing::to_rows(a), testing::to_rows(m.values), 2.0, 2);
    const Matrix r = random_walk_refine({a, false}, m, 2.0, 2).values;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(r(i, j), ref[i][j], 1e-6);
  }
}

TEST(RandomWalk, PreservesRowSumsAndBetaZeroIsExact) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.integer(2, 12);
    const Matrix a = rng.stochastic(n, n);
    const ActivationMap m = normalized_map(rng.stochastic(n, rng.integer(1, 5)));
    const Matrix w = transition_matrix({a, false}, rng.uniform(1.0, 4.0));
    EXPECT_TRUE(is_row_stochastic(w, 1e-12));
    const Matrix r = propagate(w, m.values, rng.integer(1, 4));
    EXPECT_TRUE(is_row_stochastic(r, 1e-5));
    EXPECT_EQ(propagate(w, m.values, 0), m.values);
  }
}

TEST(RandomWalk, IsolatedRowBecomesSelfLoop) {
  Matrix a(3, 3);
  a << 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.2, 0.3, 0.5;
  int isolated = -1;
  const Matrix w = transition_matrix({a, false}, 2.0, &isolated);
  EXPECT_EQ(isolated, 1);
  EXPECT_EQ(w.row(1), Eigen::RowVector3d(0.0, 1.0, 0.0));
  EXPECT_TRUE(is_row_stochastic(w, 1e-12));
}

TEST(RandomWalk, ContractErrors) {
  const Matrix a = Matrix::Identity(3, 3);
  EXPECT_THROW(transition_matrix({a, false}, 0.5), InputContractError);
  EXPECT_THROW(transition_matrix({-a, false}, 2.0), InputContractError);
  EXPECT_THROW(propagate(a, Matrix::Ones(3, 1), -1), InputContractError);
  EXPECT_THROW(propagate(a, Matrix::Ones(4, 1), 1), InputContractError);
  ActivationMap raw = normalized_map(Matrix::Ones(3, 1));
  raw.normalized = false;
  EXPECT_THROW(random_walk_refine({a, false}, raw, 2.0, 1), InputContractError);
}

TEST(RandomWalk, HigherAlphaSparsifies) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.integer(2, 8);
    const Matrix a = rng.stochastic(n, n);
    Matrix prev = transition_matrix({a, false}, 1.0);
    for (double alpha = 1.5; alpha <= 5.0; alpha += 0.5) {
      const Matrix w = transition_matrix({a, false}, alpha);
      for (int i = 0; i < n; ++i) {
        const double before = prev.row(i).maxCoeff() / prev.row(i).minCoeff();
        const double after = w.row(i).maxCoeff() / w.row(i).minCoeff();
        EXPECT_GE(after, before * (1.0 - 1e-12));
      }
      prev = w;
    }
  }
}

// ---------------------------------------------------------------------------
// VG and SC.

std::optional<double> vg(const std::vector<double>& m, const std::vector<double>& t, double thr = 0.4,
                         VgScope scope = VgScope::kRestricted) {
  return vg_score_image(std::span<const double>(m), std::span<const double>(t), thr, scope);
}

TEST(VgScore, WorkedExample) {
  const auto s = vg({0.5, 0.6, 0.1}, {0.4, 0.5, 0.9});
  ASSERT_TRUE(s.has_value());
  EXPECT_NEAR(*s, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(*s, testing::ref_vg({0.5, 0.6, 0.1}, {0.4, 0.5, 0.9}, 0.4), 1e-15);
}

TEST(VgScore, BinarySelfIsOne) { EXPECT_DOUBLE_EQ(*vg({1.0, 0.0, 1.0, 0.0}, {1.0, 0.0, 1.0, 0.0}), 1.0); }

TEST(VgScore, StaysInUnitRangeWhenPropagationOvershoots) {
  const double over = std::nextafter(1.0, 2.0);
  EXPECT_EQ(*vg({1.0, 1.0, 1.0}, {over, over, 1.0}), 1.0);
}

TEST(VgScore, DisjointIsZero) { EXPECT_DOUBLE_EQ(*vg({0.9, 0.8, 0.0}, {0.0, 0.0, 1.0}), 0.0); }

TEST(VgScore, AbsentWithoutActivePatch) {
  EXPECT_FALSE(vg({0.1, 0.2}, {0.5, 0.5}).has_value());
  EXPECT_FALSE(vg({0.1, 0.2}, {0.5, 0.5}, 0.4, VgScope::kGlobal).has_value());
}

TEST(VgScore, GlobalScopeSumsEveryPatch) {
  const auto s = vg({0.5, 0.6, 0.1}, {0.4, 0.5, 0.9}, 0.4, VgScope::kGlobal);
  const double num = 0.5 * 0.4 + 0.6 * 0.5 + 0.1 * 0.9;
  EXPECT_NEAR(*s, num / (1.2 + 1.8 - num), 1e-12);
}

TEST(VgScore, ActivationMapOverloadAndErrors) {
  const ActivationMap m = normalized_map((Matrix(3, 2) << 0.5, 0.5, 0.6, 0.4, 0.1, 0.9).finished());
  const ActivationMap t = normalized_map((Matrix(3, 2) << 0.4, 0.6, 0.5, 0.5, 0.9, 0.1).finished());
  EXPECT_NEAR(*vg_score_image(m, t, 0), 1.0 / 3.0, 1e-12);
  EXPECT_THROW(vg_score_image(m, t, 2), InputContractError);
  EXPECT_THROW(vg({0.5}, {0.5, 0.1}), InputContractError);
}

TEST(ScScore, OneHotRowsHaveZeroEntropy) {
  const ActivationMap m = normalized_map(Matrix::Identity(3, 3));
  EXPECT_DOUBLE_EQ(*sc_score_image(m, 1), 0.0);
}

TEST(ScScore, UniformRowsHaveLogC) {
  const ActivationMap m = normalized_map(Matrix::Constant(5, 4, 0.25));
  EXPECT_NEAR(*sc_score_image(m, 0, 0.2), std::log(4.0), 1e-12);
  EXPECT_FALSE(sc_score_image(m, 0, 0.4).has_value());
}

TEST(ScScore, MatchesScalarLoop) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix p = rng.stochastic(5, 3);
    const double thr = rng.uniform(0.0, 0.4);
    const auto s = sc_score_image(normalized_map(p), 1, thr);
    const double ref = testing::ref_sc(testing::to_rows(p), 1, thr);
    if (std::isnan(ref)) {
      EXPECT_FALSE(s.has_value());
    } else {
      EXPECT_NEAR(*s, ref, 1e-7);
    }
  }
}

TEST(Scores, StayInRange) {
  Rng rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = rng.integer(1, 16), c = rng.integer(1, 6);
    const ActivationMap m = normalized_map(softmax_rows(rng.gaussian(n, c) * rng.uniform(0.1, 20.0)));
    const ActivationMap t = random_walk_refine({rng.stochastic(n, n), false}, m, 2.0, 2);
    for (int col = 0; col < c; ++col) {
      if (auto v = vg_score_image(m, t, col, 0.4)) {
        EXPECT_GE(*v, 0.0);
        EXPECT_LE(*v, 1.0 + 1e-12);
      }
      if (auto s = sc_score_image(m, col, 0.4)) {
        EXPECT_GE(*s, 0.0);
        EXPECT_LE(*s, std::log(static_cast<double>(c)) + 1e-12);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Substitution.

TEST(SubstitutionScorer, MatchesExplicitSubstitutedMap) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.integer(1, 20), c = rng.integer(1, 6), beta = rng.integer(0, 3);
    const double scale = rng.uniform(1.0, 100.0);
    const Matrix sims = rng.uniform_matrix(n, c, -1.0, 1.0);
    const Matrix a = rng.stochastic(n, n);
    const Matrix w = transition_matrix({a, false}, 2.0);
    const SubstitutionScorer scorer(sims, w, scale);
    const int col = rng.integer(0, c - 1);
    const Vector cand = rng.uniform_matrix(n, 1, -1.0, 1.0).col(0);
    const auto fast = scorer.substitute(col, cand, beta);
    const ActivationMap full = substituted_map(sims, col, cand, scale);
    const Matrix prop = propagate(w, full.values, beta);
    const Vector h = row_entropy(full.values);
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(fast.probability(i), full.values(i, col), 1e-12);
      EXPECT_NEAR(fast.propagated(i), prop(i, col), 1e-12);
      EXPECT_NEAR(fast.entropy(i), h(i), 1e-9);
    }
  }
}

TEST(SubstitutionScorer, ContractErrors) {
  EXPECT_THROW(SubstitutionScorer(Matrix(3, 0), Matrix::Identity(3, 3), 1.0), InputContractError);
  EXPECT_THROW(SubstitutionScorer(Matrix::Ones(3, 2), Matrix::Identity(4, 4), 1.0), InputContractError);
  const SubstitutionScorer s(Matrix::Ones(3, 2), Matrix::Identity(3, 3), 1.0);
  EXPECT_THROW(s.substitute(2, Vector::Ones(3), 1), InputContractError);
  EXPECT_THROW(s.substitute(0, Vector::Ones(4), 1), InputContractError);
}

TEST(ScoreCandidate, PoolsPatchesAcrossWindows) {
  Rng rng(11);
  const Matrix s0 = rng.uniform_matrix(4, 3, -1, 1), s1 = rng.uniform_matrix(6, 3, -1, 1);
  const Matrix w0 = transition_matrix({rng.stochastic(4, 4), false}, 2.0);
  const Matrix w1 = transition_matrix({rng.stochastic(6, 6), false}, 2.0);
  const std::vector<SubstitutionScorer> scorers = {{s0, w0, 20.0}, {s1, w1, 20.0}};
  const std::vector<Vector> cand = {rng.uniform_matrix(4, 1, -1, 1).col(0), rng.uniform_matrix(6, 1, -1, 1).col(0)};
  ScoringParams p;
  p.logit_scale = 20.0;
  p.threshold = 0.2;
  const ImageScore got = score_candidate(scorers, cand, 1, p);

  std::vector<double> m, t;
  testing::Rows rows;
  const Matrix* sims[2] = {&s0, &s1};
  const Matrix* ws[2] = {&w0, &w1};
  for (int k = 0; k < 2; ++k) {
    Matrix s = *sims[k];
    s.col(1) = cand[k];
    const auto p_rows = testing::ref_softmax_rows(testing::to_rows(s * 20.0));
    const auto walked = testing::ref_matmul(testing::to_rows(*ws[k]), testing::ref_matmul(testing::to_rows(*ws[k]), p_rows));
    for (std::size_t i = 0; i < p_rows.size(); ++i) {
      m.push_back(p_rows[i][1]);
      t.push_back(walked[i][1]);
      rows.push_back(p_rows[i]);
    }
  }
  const double ref_vg = testing::ref_vg(m, t, 0.2), ref_sc = testing::ref_sc(rows, 1, 0.2);
  ASSERT_EQ(got.vg.has_value(), !std::isnan(ref_vg));
  if (got.vg) EXPECT_NEAR(*got.vg, ref_vg, 1e-9);
  if (got.sc) EXPECT_NEAR(*got.sc, ref_sc, 1e-9);
}

// ---------------------------------------------------------------------------
// Vocabulary scoring and filtering.

struct ToyDataset {
  std::vector<std::vector<ScoringWindow>> images;
  std::vector<TextQuery> queries;
  QueryLayout layout;
};

// Class c has canonical column c; extra queries follow.
ToyDataset toy_dataset(Rng& rng, int images, int classes, int extra) {
  ToyDataset d;
  const int q = classes + extra;
  for (int c = 0; c < classes; ++c) {
    d.queries.push_back({c, "c" + std::to_string(c), QueryKind::kCanonical, {}});
    d.layout.canonical_column.push_back(c);
  }
  for (int e = 0; e < extra; ++e) {
    d.queries.push_back({e % classes, "alias" + std::to_string(e), QueryKind::kAlias, {}});
  }
  for (int i = 0; i < q; ++i) {
    d.layout.query_column.push_back(i);
    d.layout.query_class.push_back(d.queries[i].class_index);
  }
  for (int img = 0; img < images; ++img) {
    const int n = rng.integer(4, 12);
    d.images.push_back({{rng.uniform_matrix(n, q, -0.2, 0.4), rng.stochastic(n, n)}});
  }
  return d;
}

TEST(ScoreVocabulary, CandidateIdenticalToCanonicalScoresLikeAnchor) {
  Rng rng(12);
  ToyDataset d = toy_dataset(rng, 6, 3, 1);
  for (auto& img : d.images)
    for (auto& w : img) w.similarities.col(3) = w.similarities.col(0);
  ScoringParams p;
  p.logit_scale = 30.0;
  const auto recs = score_vocabulary(
      d.images.size(), [&](std::size_t i) { return std::optional(d.images[i]); }, d.queries, d.layout, p);
  ASSERT_TRUE(recs[0].vg_score.has_value());
  EXPECT_EQ(recs[3].vg_score, recs[0].vg_score);
  EXPECT_EQ(recs[3].sc_score, recs[0].sc_score);
  EXPECT_EQ(recs[3].vg_count, recs[0].vg_count);
}

TEST(ScoreVocabulary, ParallelEqualsSerialAndReportsSkips) {
  Rng rng(13);
  ToyDataset d = toy_dataset(rng, 12, 3, 4);
  ScoringParams p;
  p.logit_scale = 30.0;
  auto provider = [&](std::size_t i) -> std::optional<std::vector<ScoringWindow>> {
    if (i == 5) return std::nullopt;
    return d.images[i];
  };
  std::vector<std::size_t> skipped;
  const auto a = score_vocabulary(d.images.size(), provider, d.queries, d.layout, p, 1, &skipped);
  const auto b = score_vocabulary(d.images.size(), provider, d.queries, d.layout, p, 4);
  EXPECT_EQ(skipped, std::vector<std::size_t>{5});
  for (std::size_t q = 0; q < a.size(); ++q) {
    EXPECT_EQ(a[q].vg_sum, b[q].vg_sum);
    EXPECT_EQ(a[q].sc_sum, b[q].sc_sum);
    EXPECT_EQ(a[q].vg_count, b[q].vg_count);
  }
}

AliasScoreRecord record(int cls, QueryKind kind, const std::string& s, double vgv, double scv, int n = 5) {
  AliasScoreRecord r;
  r.query = {cls, s, kind, {}};
  r.vg_sum = vgv * n;
  r.sc_sum = scv * n;
  r.vg_count = r.sc_count = n;
  r.finalize();
  return r;
}

TEST(FilterAliases, AppliesStrictInequalities) {
  std::vector<AliasScoreRecord> recs = {record(0, QueryKind::kCanonical, "bus", 0.5, 1.1),
                                        record(0, QueryKind::kAlias, "good", 0.6, 0.9),
                                        record(0, QueryKind::kAlias, "noisy", 0.6, 1.2),
                                        record(0, QueryKind::kAlias, "blurry", 0.4, 0.9),
                                        record(0, QueryKind::kAlias, "tie", 0.5, 1.0)};
  const auto kept = filter_aliases(recs, 1);
  ASSERT_EQ(kept[0].size(), 2u);
  EXPECT_EQ(kept[0][0].surface, "bus");
  EXPECT_EQ(kept[0][1].surface, "good");
  EXPECT_EQ(recs[0].decision, Decision::kAnchor);
  EXPECT_EQ(recs[1].decision, Decision::kRetained);
  EXPECT_EQ(recs[2].reason, "sc-not-lower");
  EXPECT_EQ(recs[3].reason, "vg-not-higher");
  EXPECT_EQ(recs[4].reason, "vg-not-higher");
}

TEST(FilterAliases, AllDroppedLeavesAnchorOnly) {
  std::vector<AliasScoreRecord> recs = {record(0, QueryKind::kCanonical, "bus", 0.5, 1.1),
                                        record(0, QueryKind::kAlias, "x", 0.1, 2.0),
                                        record(1, QueryKind::kCanonical, "car", 0.5, 1.1)};
  const auto kept = filter_aliases(recs, 2);
  EXPECT_EQ(kept[0].size(), 1u);
  EXPECT_EQ(kept[1].size(), 1u);
  EXPECT_EQ(recs[1].reason, "vg-not-higher;sc-not-lower");
}

TEST(FilterAliases, MinimumSupport) {
  std::vector<AliasScoreRecord> recs = {record(0, QueryKind::kCanonical, "bus", 0.5, 1.1),
                                        record(0, QueryKind::kAlias, "rare", 0.9, 0.1, 4),
                                        record(0, QueryKind::kAlias, "never", 0.0, 0.0, 0)};
  auto kept = filter_aliases(recs, 1, {5, false});
  EXPECT_EQ(kept[0].size(), 1u);
  EXPECT_EQ(recs[1].reason, "insufficient-support");
  EXPECT_EQ(recs[2].reason, "no-support");
  kept = filter_aliases(recs, 1, {4, false});
  EXPECT_EQ(kept[0].size(), 2u);
}

TEST(FilterAliases, UnsupportedAnchorPolicy) {
  std::vector<AliasScoreRecord> recs = {record(0, QueryKind::kCanonical, "bus", 0.0, 0.0, 0),
                                        record(0, QueryKind::kAlias, "x", 0.9, 0.1)};
  EXPECT_THROW(filter_aliases(recs, 1, {5, false}), ConfigError);
  const auto kept = filter_aliases(recs, 1, {5, true});
  EXPECT_EQ(kept[0].size(), 1u);
  EXPECT_EQ(recs[1].reason, "anchor-unsupported");
  std::vector<AliasScoreRecord> orphan = {record(0, QueryKind::kAlias, "x", 0.9, 0.1)};
  EXPECT_THROW(filter_aliases(orphan, 1), ConfigError);
}

TEST(FilterAliases, OrderIndependentAndAnchorNeverDropped) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const int classes = rng.integer(1, 4);
    std::vector<AliasScoreRecord> recs;
    for (int c = 0; c < classes; ++c) {
      recs.push_back(record(c, QueryKind::kCanonical, "anchor" + std::to_string(c), rng.uniform(), rng.uniform(0, 2)));
    }
    const int extra = rng.integer(0, 8);
    for (int e = 0; e < extra; ++e) {
      recs.push_back(record(rng.integer(0, classes - 1), QueryKind::kAlias, "a" + std::to_string(e), rng.uniform(),
                            rng.uniform(0, 2), rng.integer(0, 8)));
    }
    auto shuffled = recs;
    std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937(trial));
    const auto a = filter_aliases(recs, classes);
    const auto b = filter_aliases(shuffled, classes);
    for (int c = 0; c < classes; ++c) {
      ASSERT_FALSE(a[c].empty());
      EXPECT_EQ(a[c][0].surface, "anchor" + std::to_string(c));
      EXPECT_EQ(b[c][0].surface, a[c][0].surface);
      std::vector<std::string> sa, sb;
      for (const auto& q : a[c]) sa.push_back(q.surface);
      for (const auto& q : b[c]) sb.push_back(q.surface);
      std::sort(sa.begin(), sa.end());
      std::sort(sb.begin(), sb.end());
      EXPECT_EQ(sa, sb);
    }
    for (const auto& r : recs) {
      if (r.query.kind == QueryKind::kCanonical) EXPECT_EQ(r.decision, Decision::kAnchor);
    }
  }
}

TEST(FilterTemplates, FoundationalFloor) {
  const std::vector<TemplateScore> ref = {{"r", 0.5, 1.0}};
  const auto out = filter_templates({}, ref);
  EXPECT_EQ(out, foundational_templates());
  EXPECT_EQ(out.size(), 2u);
}

TEST(FilterTemplates, StrictAgainstReferenceMeans) {
  const std::vector<TemplateScore> ref = {{"r1", 0.4, 1.2}, {"r2", 0.6, 0.8}, {"r3", std::nullopt, std::nullopt}};
  const std::vector<TemplateScore> cand = {
      {"at the mean {}", 0.5, 1.0}, {"better {}", 0.55, 0.9}, {"worse {}", 0.55, 1.1}, {"undefined {}", std::nullopt, 0.1}};
  const auto out = filter_templates(cand, ref);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[2], "better {}");
  EXPECT_THROW(filter_templates(cand, {}), InputContractError);
}

TEST(Records, MergeAndDecisionNames) {
  AliasScoreRecord a = record(0, QueryKind::kAlias, "x", 0.5, 1.0, 2);
  a.merge(record(0, QueryKind::kAlias, "x", 0.8, 0.5, 2));
  a.finalize();
  EXPECT_NEAR(*a.vg_score, 0.65, 1e-12);
  EXPECT_NEAR(*a.sc_score, 0.75, 1e-12);
  EXPECT_EQ(to_string(Decision::kRetained), "retained");
  EXPECT_EQ(to_string(Decision::kAnchor), "anchor");
}

}  // namespace
}  // namespace ovseg
