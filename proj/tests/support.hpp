// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded random inputs and scalar-loop reference implementations. The
// references use plain nested loops over std::vector and share no code with
// the library.

#pragma once

#include "ovseg/types.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace ovseg::testing {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Matrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[i][j] = m(i, j);
  return r;
}

inline std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }

  Matrix gaussian(int rows, int cols) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }
  Matrix uniform_matrix(int rows, int cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
    return m;
  }
  /// Strictly positive row-stochastic matrix.
  Matrix stochastic(int rows, int cols) {
    Matrix m = uniform_matrix(rows, cols, 0.01, 1.0);
    for (int i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
    return m;
  }
  Vector unit(int d) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v(i) = normal();
    return v / v.norm();
  }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Reference implementations.

inline Rows ref_softmax_rows(const Rows& z) {
  Rows out = z;
  for (auto& row : out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    double s = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return out;
}

inline double ref_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// softmax over queries of scale * cos(token, query).
inline Rows ref_dense_logits(const Rows& tokens, const Rows& queries, double scale) {
  Rows z(tokens.size(), std::vector<double>(queries.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t k = 0; k < queries.size(); ++k) z[i][k] = scale * ref_cosine(tokens[i], queries[k]);
  return ref_softmax_rows(z);
}

inline Rows ref_mean_layers(const std::vector<Rows>& layers) {
  Rows out(layers[0].size(), std::vector<double>(layers[0][0].size(), 0.0));
  for (const auto& l : layers)
    for (std::size_t i = 0; i < l.size(); ++i)
      for (std::size_t j = 0; j < l[i].size(); ++j) out[i][j] += l[i][j];
  for (auto& row : out)
    for (double& v : row) v /= static_cast<double>(layers.size());
  return out;
}

inline Rows ref_matmul(const Rows& a, const Rows& b) {
  Rows out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

/// W = rownorm(A^alpha), then beta applications of W.
inline Rows ref_random_walk(const Rows& a, const Rows& m, double alpha, int beta) {
  Rows w = a;
  for (std::size_t i = 0; i < w.size(); ++i) {
    double s = 0.0;
    for (double& v : w[i]) {
      v = std::pow(v, alpha);
      s += v;
    }
    if (s > 0.0) {
      for (double& v : w[i]) v /= s;
    } else {
      for (std::size_t j = 0; j < w[i].size(); ++j) w[i][j] = i == j ? 1.0 : 0.0;
    }
  }
  Rows out = m;
  for (int step = 0; step < beta; ++step) out = ref_matmul(w, out);
  return out;
}

/// Soft IoU restricted to patches with m >= threshold; NaN when none qualify.
inline double ref_vg(const std::vector<double>& m, const std::vector<double>& mt, double threshold) {
  double num = 0.0, sm = 0.0, st = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] < threshold) continue;
    ++n;
    num += m[i] * mt[i];
    sm += m[i];
    st += mt[i];
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  const double den = sm + st - num;
  return den > 0.0 ? num / den : 0.0;
}

/// Mean natural-log row entropy over rows with p[i][col] >= threshold.
inline double ref_sc(const Rows& p, std::size_t col, double threshold) {
  double total = 0.0;
  int n = 0;
  for (const auto& row : p) {
    if (row[col] < threshold) continue;
    double h = 0.0;
    for (double v : row)
      if (v > 0.0) h -= v * std::log(v);
    total += h;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / n;
}

inline std::vector<double> ref_softmax(const std::vector<double>& g) {
  return ref_softmax_rows(Rows{g})[0];
}

/// (1/tau) log sum_k exp(tau * s_k), computed naively (inputs are small).
inline double ref_lse(const std::vector<double>& s, double tau) {
  double acc = 0.0;
  for (double v : s) acc += std::exp(tau * v);
  return std::log(acc) / tau;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ovseg_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ovseg::testing
