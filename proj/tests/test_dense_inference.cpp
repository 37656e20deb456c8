// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/dense_inference.hpp"
#include "ovseg/encoder_backend.hpp"
#include "ovseg/linalg.hpp"
#include "ovseg/self_correction.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace ovseg {
namespace {

using testing::Rng;

std::vector<TextQuery> random_queries(Rng& rng, int k, int d) {
  std::vector<TextQuery> q;
  for (int i = 0; i < k; ++i) q.push_back({i, "q" + std::to_string(i), QueryKind::kCanonical, rng.unit(d)});
  return q;
}

TEST(ComputeLogits, SingleQueryIsAllOnes) {
  Rng rng(1);
  const PatchGrid g{rng.gaussian(6, 4), 2, 3, TokenSource::kAdapter, "x"};
  const auto m = compute_logits(g, random_queries(rng, 1, 4), 100.0);
  EXPECT_EQ(m.values, Matrix::Ones(6, 1));
  EXPECT_TRUE(m.normalized);
}

TEST(ComputeLogits, AlignedQueryWins) {
  Matrix t = Matrix::Zero(3, 3);
  t(0, 1) = 2.0;
  t(1, 0) = 0.5;
  t(2, 2) = 7.0;
  std::vector<TextQuery> q;
  for (int k = 0; k < 3; ++k) q.push_back({k, "e", QueryKind::kCanonical, Vector::Unit(3, k)});
  const auto m = compute_logits(PatchGrid{t, 1, 3, TokenSource::kAdapter, ""}, q, 100.0);
  EXPECT_EQ(row_argmax(m.values), (std::vector<int>{1, 0, 2}));
}

TEST(ComputeLogits, MatchesScalarLoop) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const PatchGrid g{rng.gaussian(4, 8), 2, 2, TokenSource::kAdapter, ""};
    const auto q = random_queries(rng, 3, 8);
    const double scale = rng.uniform(1.0, 100.0);
    const auto m = compute_logits(g, q, scale);
    testing::Rows qr;
    for (const auto& x : q) qr.push_back(testing::to_vec(x.embedding));
    const auto ref = testing::ref_dense_logits(testing::to_rows(g.tokens), qr, scale);
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 3; ++k) EXPECT_NEAR(m.values(i, k), ref[i][k], 1e-6);
    EXPECT_NO_THROW(m.validate(1e-5));
    EXPECT_EQ(m.column_labels[2].class_index, 2);
  }
}

TEST(ComputeLogits, ContractErrors) {
  Rng rng(3);
  const PatchGrid g{rng.gaussian(4, 3), 2, 2, TokenSource::kAdapter, ""};
  EXPECT_THROW(compute_logits(g, {}, 100.0), InputContractError);
  std::vector<TextQuery> q = {{0, "x", QueryKind::kCanonical, Vector::Constant(3, 1.0)}};
  EXPECT_THROW(compute_logits(g, q, 100.0), InputContractError);
  q[0].embedding = Vector::Unit(3, 0);
  EXPECT_THROW(compute_logits(g, q, 0.0), InputContractError);
}

TEST(ComputeLogits, ZeroTokenGetsUniformRow) {
  Matrix t = Matrix::Zero(2, 2);
  t(1, 0) = 1.0;
  std::vector<TextQuery> q = {{0, "a", QueryKind::kCanonical, Vector::Unit(2, 0)},
                              {1, "b", QueryKind::kCanonical, Vector::Unit(2, 1)}};
  const auto m = compute_logits(PatchGrid{t, 1, 2, TokenSource::kAdapter, ""}, q, 100.0);
  EXPECT_NEAR(m.values(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(m.values(0, 1), 0.5, 1e-12);
}

TEST(ComputeLogits, QueryPermutationPermutesColumns) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PatchGrid g{rng.gaussian(9, 6), 3, 3, TokenSource::kAdapter, ""};
    auto q = random_queries(rng, 5, 6);
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937(trial));
    std::vector<TextQuery> pq;
    for (int p : perm) pq.push_back(q[p]);
    const auto a = compute_logits(g, q, 30.0), b = compute_logits(g, pq, 30.0);
    for (int j = 0; j < 5; ++j) EXPECT_LT((b.values.col(j) - a.values.col(perm[j])).cwiseAbs().maxCoeff(), 1e-12);
    const auto la = row_argmax(a.values), lb = row_argmax(b.values);
    for (int i = 0; i < 9; ++i) EXPECT_EQ(perm[lb[i]], la[i]);
  }
}

TEST(RowArgmax, LowestIndexOnTies) {
  Matrix m(2, 3);
  m << 1.0, 1.0, 0.0, 0.0, 2.0, 2.0;
  EXPECT_EQ(row_argmax(m), (std::vector<int>{0, 1}));
}

TEST(ResizeBilinear, HalfPixelOneDimensional) {
  Matrix m(2, 1);
  m << 0.0, 1.0;
  const Matrix r = resize_bilinear(m, 1, 2, 1, 4);
  EXPECT_NEAR(r(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(r(1, 0), 0.25, 1e-12);
  EXPECT_NEAR(r(2, 0), 0.75, 1e-12);
  EXPECT_NEAR(r(3, 0), 1.0, 1e-12);
}

TEST(ResizeBilinear, MatchesScalarLoop) {
  Rng rng(5);
  const int h = 3, w = 4, nh = 7, nw = 5;
  const Matrix m = rng.gaussian(h * w, 2);
  const Matrix r = resize_bilinear(m, h, w, nh, nw);
  auto src = [](int k, int from, int to) {
    double s = (k + 0.5) * from / to - 0.5;
    return std::min(std::max(s, 0.0), from - 1.0);
  };
  for (int y = 0; y < nh; ++y)
    for (int x = 0; x < nw; ++x) {
      const double sy = src(y, h, nh), sx = src(x, w, nw);
      const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double fy = sy - y0, fx = sx - x0;
      for (int c = 0; c < 2; ++c) {
        const double v = (1 - fy) * (1 - fx) * m(y0 * w + x0, c) + (1 - fy) * fx * m(y0 * w + x1, c) +
                         fy * (1 - fx) * m(y1 * w + x0, c) + fy * fx * m(y1 * w + x1, c);
        EXPECT_NEAR(r(y * nw + x, c), v, 1e-12);
      }
    }
}

TEST(ResizeBilinear, ConstantColumnsGiveConstantLabels) {
  Matrix m(6, 3);
  m.col(0).setConstant(0.2);
  m.col(1).setConstant(0.5);
  m.col(2).setConstant(0.3);
  const auto labels = row_argmax(resize_bilinear(m, 2, 3, 11, 17));
  for (int l : labels) EXPECT_EQ(l, 1);
}

TEST(ShortSide, KeepsAspect) {
  EXPECT_EQ(short_side_shape(375, 500, 336), std::make_pair(336, 448));
  EXPECT_EQ(short_side_shape(500, 375, 336), std::make_pair(448, 336));
  EXPECT_EQ(short_side_shape(64, 96, 48), std::make_pair(48, 72));
  EXPECT_THROW(short_side_shape(0, 5, 3), InputContractError);
}

TEST(PlanWindows, ShiftsLastWindowToBorder) {
  const auto w = plan_windows(336, 448, 224, 112);
  ASSERT_EQ(w.size(), 6u);
  EXPECT_EQ(w[0].y, 0);
  EXPECT_EQ(w[2].x, 224);
  EXPECT_EQ(w[5].y, 112);
  const auto v = plan_windows(300, 224, 224, 112);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[1].y, 76);
  EXPECT_EQ(plan_windows(48, 72, 48, 24).size(), 2u);
  EXPECT_THROW(plan_windows(100, 100, 224, 112), InputContractError);
  EXPECT_THROW(plan_windows(300, 300, 100, 150), InputContractError);
}

TEST(PlanWindows, CoverEveryPixel) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const int win = rng.integer(4, 20), stride = rng.integer(1, win);
    const int h = rng.integer(win, 60), w = rng.integer(win, 60);
    std::vector<int> cover(static_cast<std::size_t>(h * w), 0);
    for (const auto& wd : plan_windows(h, w, win, stride)) {
      ASSERT_LE(wd.y + wd.h, h);
      ASSERT_LE(wd.x + wd.w, w);
      for (int y = wd.y; y < wd.y + wd.h; ++y)
        for (int x = wd.x; x < wd.x + wd.w; ++x) ++cover[static_cast<std::size_t>(y * w + x)];
    }
    for (int c : cover) EXPECT_GT(c, 0);
  }
}

ActivationMap constant_map(int gh, int gw, const std::vector<double>& row) {
  ActivationMap m;
  m.grid_h = gh;
  m.grid_w = gw;
  m.values.resize(gh * gw, static_cast<Eigen::Index>(row.size()));
  for (int i = 0; i < gh * gw; ++i)
    for (std::size_t c = 0; c < row.size(); ++c) m.values(i, static_cast<Eigen::Index>(c)) = row[c];
  return m;
}

TEST(FuseWindows, NonOverlappingPureImageIsUniform) {
  const WindowParams p{32, 32, 32};
  const auto windows = plan_image_windows(32, 64, p);
  ASSERT_EQ(windows.size(), 2u);
  const std::vector<ActivationMap> maps(2, constant_map(4, 4, {0.1, 0.7, 0.2}));
  const auto r = fuse_windows(32, 64, p, maps);
  for (int l : r.labels.labels) EXPECT_EQ(l, 1);
  EXPECT_FALSE(r.logits.has_value());
}

TEST(FuseWindows, OverlapAveragesToSameValue) {
  const WindowParams p{32, 32, 16};
  const auto windows = plan_image_windows(32, 48, p);
  ASSERT_EQ(windows.size(), 2u);
  const std::vector<ActivationMap> maps(2, constant_map(4, 4, {0.25, 0.75}));
  const auto r = fuse_windows(32, 48, p, maps, true);
  ASSERT_TRUE(r.logits.has_value());
  EXPECT_LT((r.logits->col(0).array() - 0.25).abs().maxCoeff(), 1e-12);
  EXPECT_LT((r.logits->col(1).array() - 0.75).abs().maxCoeff(), 1e-12);
}

TEST(FuseWindows, OverlapIsCoverageAverage) {
  // Two windows on a 1x? strip; window 0 votes class 0, window 1 votes class 1.
  const WindowParams p{8, 8, 4};
  const auto windows = plan_image_windows(8, 12, p);
  ASSERT_EQ(windows.size(), 2u);
  std::vector<ActivationMap> maps = {constant_map(2, 2, {1.0, 0.0}), constant_map(2, 2, {0.0, 1.0})};
  const auto r = fuse_windows(8, 12, p, maps, true);
  for (int y = 0; y < 8; ++y) {
    EXPECT_NEAR((*r.logits)(y * 12 + 1, 0), 1.0, 1e-12);
    EXPECT_NEAR((*r.logits)(y * 12 + 6, 0), 0.5, 1e-12);
    EXPECT_NEAR((*r.logits)(y * 12 + 10, 1), 1.0, 1e-12);
  }
  EXPECT_THROW(fuse_windows(8, 12, p, std::span<const ActivationMap>(maps).first(1)), InputContractError);
}

TEST(CropImage, CopiesRegion) {
  Image img{4, 5, 2, std::vector<float>(40), "x"};
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i);
  const Image c = crop_image(img, {1, 2, 2, 3});
  EXPECT_EQ(c.height, 2);
  EXPECT_EQ(c.at(0, 0, 1), img.at(1, 2, 1));
  EXPECT_EQ(c.at(1, 2, 0), img.at(2, 4, 0));
  EXPECT_THROW(crop_image(img, {3, 0, 2, 2}), InputContractError);
}

class SyntheticScenes : public ::testing::Test {
 protected:
  SyntheticScenes() : backend_(config()) {}
  static SyntheticConfig config() {
    SyntheticConfig c;
    c.concepts = {"bus", "car"};
    c.lexicon = {{"bus", {{"bus", 1.0}}, 0.0}, {"car", {{"car", 1.0}}, 0.0}};
    return c;
  }
  SegmentationResult segment(const Image& img, int jobs) const {
    const auto q = backend_.encode_text({"bus", "car"});
    std::vector<TextQuery> queries = {{0, "bus", QueryKind::kCanonical, q[0]}, {1, "car", QueryKind::kCanonical, q[1]}};
    const WindowParams p{64, 48, 24};
    return sliding_window_segment(
        img, p,
        [&](const Image& crop, std::size_t) {
          const auto v = backend_.encode_backbone(crop).tokens;
          return compute_logits(corrected_adapter_forward(v, backend_), queries, 100.0);
        },
        false, jobs);
  }
  SyntheticBackend backend_;
};

TEST_F(SyntheticScenes, TwoClassAccuracyOverTwentySeeds) {
  SceneSpec spec;
  spec.classes = {"bus", "car"};
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto scene = make_scene(backend_, spec, seed, "s" + std::to_string(seed));
    const auto r = segment(scene.image, 1);
    EXPECT_EQ(r.image_id, scene.image.image_id);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < r.labels.labels.size(); ++i) correct += r.labels.labels[i] == scene.labels.labels[i];
    EXPECT_GE(static_cast<double>(correct) / r.labels.labels.size(), 0.95) << "seed " << seed;
  }
}

TEST_F(SyntheticScenes, ParallelWindowsAreBitIdentical) {
  SceneSpec spec;
  spec.classes = {"bus", "car"};
  const auto scene = make_scene(backend_, spec, 99, "p");
  EXPECT_EQ(segment(scene.image, 1).labels.labels, segment(scene.image, 4).labels.labels);
}

}  // namespace
}  // namespace ovseg
