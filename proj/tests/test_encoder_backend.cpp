// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/encoder_backend.hpp"
#include "ovseg/linalg.hpp"
#include "ovseg/self_correction.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

namespace ovseg {
namespace {

using testing::Rng;

SyntheticConfig small_config(int dim = 8) {
  SyntheticConfig c;
  c.seed = 7;
  c.dim = dim;
  c.concepts = {"bus", "car", "sky"};
  c.lexicon = {{"bus", {{"bus", 1.0}}, 0.0}, {"car", {{"car", 1.0}}, 0.0}, {"wheels", {{"sky", 1.0}}, 0.0}};
  return c;
}

Image random_image(Rng& rng, int h, int w, int c) {
  Image img{h, w, c, std::vector<float>(static_cast<std::size_t>(h) * w * c), "img"};
  for (auto& v : img.data) v = static_cast<float>(rng.normal());
  return img;
}

TEST(SyntheticBackend, BackboneIsDeterministic) {
  SyntheticConfig c = small_config(4);
  const SyntheticBackend a(c), b(c);
  Rng rng(1);
  const Image img = random_image(rng, 8, 8, 4);
  const auto x = a.encode_backbone(img), y = a.encode_backbone(img), z = b.encode_backbone(img);
  EXPECT_EQ(x.tokens.grid_h, 2);
  EXPECT_EQ(x.tokens.grid_w, 2);
  EXPECT_EQ(x.tokens.source, TokenSource::kBackbone);
  EXPECT_EQ(x.tokens.tokens, y.tokens.tokens);
  EXPECT_EQ(x.tokens.tokens, z.tokens.tokens);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
}

TEST(SyntheticBackend, AttentionLayersAreRowStochastic) {
  const SyntheticBackend be(small_config());
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = be.encode_backbone(random_image(rng, 12, 16, 8));
    EXPECT_EQ(out.attention.layer_count(), be.layer_count());
    for (const auto& layer : out.attention.layers) {
      EXPECT_EQ(layer.rows(), 12);
      EXPECT_TRUE(is_row_stochastic(layer, 1e-5));
    }
  }
}

TEST(SyntheticBackend, RejectsBadInputs) {
  const SyntheticBackend be(small_config());
  Rng rng(3);
  EXPECT_THROW(be.encode_backbone(random_image(rng, 8, 8, 3)), InputContractError);
  EXPECT_THROW(be.encode_backbone(random_image(rng, 9, 8, 8)), InputContractError);
  EXPECT_THROW(be.encode_text({}), InputContractError);
  EXPECT_THROW(be.encode_text({""}), InputContractError);
  EXPECT_THROW(be.concept_center("boat"), InputContractError);
}

TEST(SyntheticBackend, NoInjectionEqualsNativeAttentionInjected) {
  const SyntheticBackend be(small_config());
  Rng rng(4);
  const auto v = be.encode_backbone(random_image(rng, 8, 12, 8)).tokens;
  const PatchGrid native = be.adapter_forward(v);
  const auto attn = be.native_adapter_attention(v);
  const PatchGrid injected = be.adapter_forward(v, attn);
  EXPECT_EQ(native.source, TokenSource::kAdapter);
  EXPECT_LT((native.tokens - injected.tokens).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SyntheticBackend, IdentityInjectionKeepsTokensIndependent) {
  const SyntheticBackend be(small_config());
  Rng rng(5);
  const auto v = be.encode_backbone(random_image(rng, 8, 8, 8)).tokens;
  const std::vector<Matrix> eye(2, Matrix::Identity(4, 4));
  const PatchGrid base = be.adapter_forward(v, eye);
  PatchGrid w = v;
  w.tokens.row(2) += Vector::Constant(8, 0.5).transpose();
  const PatchGrid moved = be.adapter_forward(w, eye);
  for (int i = 0; i < 4; ++i) {
    if (i == 2) {
      EXPECT_GT((base.tokens.row(i) - moved.tokens.row(i)).norm(), 1e-3);
    } else {
      EXPECT_EQ(base.tokens.row(i), moved.tokens.row(i));
    }
  }
}

TEST(SyntheticBackend, SelfSimilarityInjectionEqualsCorrectedForward) {
  const SyntheticBackend be(small_config());
  Rng rng(6);
  const auto v = be.encode_backbone(random_image(rng, 8, 12, 8)).tokens;
  const Matrix s = self_similarity_attention(v);
  const std::vector<Matrix> inj(2, s);
  EXPECT_EQ(be.adapter_forward(v, inj).tokens, corrected_adapter_forward(v, be).tokens);
}

TEST(SyntheticBackend, InjectionContractIsChecked) {
  const SyntheticBackend be(small_config());
  Rng rng(7);
  const auto v = be.encode_backbone(random_image(rng, 8, 8, 8)).tokens;
  const std::vector<Matrix> one(1, Matrix::Identity(4, 4));
  EXPECT_THROW(be.adapter_forward(v, one), InputContractError);
  const std::vector<Matrix> bad(2, Matrix::Ones(4, 4));
  EXPECT_THROW(be.adapter_forward(v, bad), InputContractError);
  const std::vector<Matrix> wrong(2, Matrix::Identity(3, 3));
  EXPECT_THROW(be.adapter_forward(v, wrong), InputContractError);
}

TEST(SyntheticBackend, TextEmbeddingsAreUnitAndStable) {
  const SyntheticBackend a(small_config()), b(small_config());
  const auto e = a.encode_text({"a photo of a bus"});
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NEAR(e[0].norm(), 1.0, 1e-5);
  const auto twice = a.encode_text({"a photo of a bus", "a photo of a bus"});
  EXPECT_EQ(twice[0], twice[1]);
  EXPECT_EQ(a.encode_text({"unlisted words"})[0], b.encode_text({"unlisted words"})[0]);
  EXPECT_NEAR(a.encode_text({"unlisted words"})[0].norm(), 1.0, 1e-12);
}

TEST(SyntheticBackend, LexiconPlacesBareNamesOnConceptCenters) {
  const SyntheticBackend be(small_config());
  const auto e = be.encode_text({"bus", "wheels"});
  EXPECT_NEAR(e[0].dot(be.concept_center("bus")), 1.0, 1e-12);
  EXPECT_NEAR(e[1].dot(be.concept_center("bus")), 0.0, 1e-12);
  // longest matching surface wins inside a prompt
  const auto t = be.encode_text({"a photo of a bus"})[0];
  EXPECT_GT(t.dot(be.concept_center("bus")), 0.9);
}

TEST(SyntheticBackend, ConfigRoundTripsThroughJson) {
  const SyntheticConfig c = small_config();
  const SyntheticConfig d = SyntheticConfig::from_json(c.to_json());
  EXPECT_EQ(SyntheticBackend(c).fingerprint(), SyntheticBackend(d).fingerprint());
  const auto be = make_backend(c.to_json());
  EXPECT_EQ(be->fingerprint(), SyntheticBackend(c).fingerprint());
  EXPECT_THROW(make_backend({{"type", "onnx"}}), ConfigError);
}

TEST(GlobalPool, IsColumnMean) {
  Matrix t(2, 2);
  t << 1.0, 2.0, 3.0, 6.0;
  const auto g = global_pool(PatchGrid{t, 1, 2, TokenSource::kAdapter, "a"});
  EXPECT_EQ(g.vector, Vector((Vector(2) << 2.0, 4.0).finished()));
  EXPECT_EQ(g.image_id, "a");
}

TEST(LayerNorm, MatchesScalarLoop) {
  Rng rng(8);
  const Matrix x = rng.gaussian(3, 5);
  const Vector w = rng.gaussian(5, 1).col(0), b = rng.gaussian(5, 1).col(0);
  const Matrix y = layer_norm(x, w, b, 1e-6);
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 5; ++j) mean += x(i, j) / 5.0;
    for (int j = 0; j < 5; ++j) var += (x(i, j) - mean) * (x(i, j) - mean) / 5.0;
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(y(i, j), (x(i, j) - mean) / std::sqrt(var + 1e-6) * w(j) + b(j), 1e-12);
  }
}

TEST(TransformerBlock, SingleHeadMatchesScalarLoop) {
  Rng rng(9);
  TransformerBlock blk;
  const int d = 4, n = 5;
  blk.wq = rng.gaussian(d, d);
  blk.wk = rng.gaussian(d, d);
  blk.wv = rng.gaussian(d, d);
  blk.wo = rng.gaussian(d, d);
  const Matrix x = rng.gaussian(n, d);
  Matrix attn;
  const Matrix y = blk.forward(x, 0, nullptr, &attn);

  const auto X = testing::to_rows(x);
  auto mul = [](const testing::Rows& a, const Matrix& w) { return testing::ref_matmul(a, testing::to_rows(w)); };
  const auto q = mul(X, blk.wq), k = mul(X, blk.wk), v = mul(X, blk.wv);
  testing::Rows logits(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      for (int c = 0; c < d; ++c) logits[i][j] += q[i][c] * k[j][c];
      logits[i][j] /= std::sqrt(static_cast<double>(d));
    }
  const auto a = testing::ref_softmax_rows(logits);
  const auto o = mul(testing::ref_matmul(a, v), blk.wo);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) {
      EXPECT_NEAR(y(i, c), X[i][c] + o[i][c], 1e-10);
      EXPECT_NEAR(attn(i, c), a[i][c], 1e-12);
    }
}

TEST(TransformerBlock, PrefixTokensKeepNativeAttentionUnderInjection) {
  Rng rng(10);
  TransformerBlock blk;
  blk.heads = 2;
  const int d = 4;
  blk.wq = rng.gaussian(d, d);
  blk.wk = rng.gaussian(d, d);
  blk.wv = rng.gaussian(d, d);
  blk.wo = Matrix::Identity(d, d);
  const Matrix x = rng.gaussian(4, d);  // one prefix token, three patches
  const Matrix eye = Matrix::Identity(3, 3);
  const Matrix native = blk.forward(x, 1, nullptr, nullptr);
  const Matrix inj = blk.forward(x, 1, &eye, nullptr);
  EXPECT_EQ(native.row(0), inj.row(0));
  // patch rows attend only to themselves: x + v_i
  const Matrix v = x * blk.wv;
  for (int i = 1; i < 4; ++i) EXPECT_LT((inj.row(i) - (x.row(i) + v.row(i))).norm(), 1e-12);
  const Matrix bad = Matrix::Identity(4, 4);
  EXPECT_THROW(blk.forward(x, 1, &bad, nullptr), InputContractError);
}

}  // namespace
}  // namespace ovseg
