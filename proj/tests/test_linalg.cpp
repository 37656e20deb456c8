// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/linalg.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace ovseg {
namespace {

using testing::Rng;

TEST(Softmax, RowsMatchScalarLoop) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = rng.gaussian(rng.integer(1, 8), rng.integer(1, 6)) * 10.0;
    const auto ref = testing::ref_softmax_rows(testing::to_rows(z));
    const Matrix p = softmax_rows(z);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
      for (Eigen::Index j = 0; j < z.cols(); ++j) EXPECT_NEAR(p(i, j), ref[i][j], 1e-12);
    EXPECT_TRUE(is_row_stochastic(p, 1e-12));
  }
}

TEST(Softmax, SurvivesLargeLogits) {
  Matrix z(1, 3);
  z << 1000.0, 1001.0, 999.0;
  const Matrix p = softmax_rows(z);
  EXPECT_TRUE(all_finite(p));
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_GT(p(0, 1), p(0, 0));
}

TEST(Cosine, MatchesScalarLoop) {
  Rng rng(5);
  const Matrix a = rng.gaussian(6, 4), b = rng.gaussian(3, 4);
  const Matrix c = cosine_similarity(a, b);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(c(i, j), testing::ref_cosine(testing::to_vec(a.row(i).transpose()),
                                               testing::to_vec(b.row(j).transpose())),
                  1e-12);
    }
}

TEST(Cosine, ZeroRowsGiveZero) {
  Matrix a = Matrix::Zero(2, 3);
  a(1, 0) = 2.0;
  Matrix b(1, 3);
  b << 1.0, 0.0, 0.0;
  int zero = -1;
  const Matrix c = cosine_similarity(a, b, &zero);
  EXPECT_EQ(zero, 1);
  EXPECT_EQ(c(0, 0), 0.0);
  EXPECT_NEAR(c(1, 0), 1.0, 1e-12);
}

TEST(Cosine, DimensionMismatchThrows) {
  EXPECT_THROW(cosine_similarity(Matrix::Zero(2, 3), Matrix::Zero(2, 4)), InputContractError);
}

TEST(Normalized, ZeroVectorThrows) {
  EXPECT_THROW(normalized(Vector::Zero(3)), InputContractError);
  EXPECT_NEAR(normalized(Vector::Constant(4, 3.0)).norm(), 1.0, 1e-12);
}

TEST(Quantize, RoundsThroughFloat) {
  Matrix m(1, 2);
  m << 0.1, 1.0 / 3.0;
  const Matrix q = quantize_f32(m);
  EXPECT_EQ(q(0, 0), static_cast<double>(0.1f));
  EXPECT_EQ(q(0, 1), static_cast<double>(static_cast<float>(1.0 / 3.0)));
  EXPECT_EQ(quantize_f32(q), q);
}

TEST(StackRows, RaggedThrows) {
  std::vector<Vector> rows = {Vector::Zero(2), Vector::Zero(3)};
  EXPECT_THROW(stack_rows(rows), InputContractError);
}

TEST(RowStochastic, DetectsViolations) {
  Matrix m(2, 2);
  m << 0.5, 0.5, 0.2, 0.8;
  EXPECT_TRUE(is_row_stochastic(m));
  m(1, 1) = 0.9;
  EXPECT_FALSE(is_row_stochastic(m));
  m << 1.5, -0.5, 0.5, 0.5;
  EXPECT_FALSE(is_row_stochastic(m));
}

TEST(PatchGrid, ValidateChecksShapeAndFiniteness) {
  PatchGrid g{Matrix::Ones(6, 2), 2, 3, TokenSource::kBackbone, "x"};
  EXPECT_NO_THROW(g.validate());
  g.grid_w = 2;
  EXPECT_THROW(g.validate(), InputContractError);
  g.grid_w = 3;
  g.tokens(0, 0) = std::nan("");
  EXPECT_THROW(g.validate(), InputContractError);
}

TEST(AttentionStack, ValidateRejectsNonStochasticLayers) {
  AttentionStack s;
  EXPECT_THROW(s.validate(), InputContractError);
  s.layers.push_back(Matrix::Identity(3, 3));
  EXPECT_NO_THROW(s.validate());
  s.layers.push_back(Matrix::Ones(3, 3));
  EXPECT_THROW(s.validate(), InputContractError);
}

TEST(QueryKind, RoundTrips) {
  for (auto k : {QueryKind::kCanonical, QueryKind::kAlias, QueryKind::kTemplateInstance}) {
    EXPECT_EQ(query_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(query_kind_from_string("synonym"), ParseError);
}

}  // namespace
}  // namespace ovseg
