// Copyright 2026 The ovseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ovseg/encoder_backend.hpp"
#include "ovseg/linalg.hpp"

#include <cmath>

namespace ovseg {

namespace {

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix y = x * w;
  if (b.size() > 0) y.rowwise() += b.transpose();
  return y;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

}  // namespace

Matrix layer_norm(const Matrix& x, const Vector& weight, const Vector& bias, double eps) {
  Matrix y(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    y.row(i) = (x.row(i).array() - mean) / std::sqrt(var + eps);
  }
  if (weight.size() > 0) y = y.array().rowwise() * weight.transpose().array();
  if (bias.size() > 0) y.rowwise() += bias.transpose();
  return y;
}

Matrix TransformerBlock::forward(const Matrix& x, int prefix, const Matrix* injected, Matrix* attn_out) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index patches = n - prefix;
  const Eigen::Index d = wq.cols();
  if (d % heads != 0) throw InputContractError("transformer block: dim not divisible by heads");
  const Eigen::Index head_dim = d / heads;
  if (injected && (injected->rows() != patches || injected->cols() != patches)) {
    throw InputContractError("injected attention is " + std::to_string(injected->rows()) + "x" +
                             std::to_string(injected->cols()) + ", expected " + std::to_string(patches) + "x" +
                             std::to_string(patches));
  }

  const Matrix h = norm1_w.size() > 0 ? layer_norm(x, norm1_w, norm1_b, norm_eps) : x;
  const Matrix q = affine(h, wq, bq);
  const Matrix k = affine(h, wk, bk);
  const Matrix v = affine(h, wv, bv);
  const double scale = qk_scale.value_or(1.0 / std::sqrt(static_cast<double>(head_dim)));

  Matrix concat(n, d);
  Matrix attn_mean = Matrix::Zero(patches, patches);
  for (int hd = 0; hd < heads; ++hd) {
    const auto cols = Eigen::seqN(hd * head_dim, head_dim);
    Matrix a = softmax_rows((q(Eigen::all, cols) * k(Eigen::all, cols).transpose()) * scale);
    if (injected) {
      a.bottomRows(patches).leftCols(prefix).setZero();
      a.bottomRows(patches).rightCols(patches) = *injected;
    }
    concat(Eigen::all, cols) = a * v(Eigen::all, cols);
    if (attn_out) attn_mean += a.bottomRightCorner(patches, patches);
  }

  Matrix o = affine(concat, wo, bo);
  if (ls1.size() > 0) o = o.array().rowwise() * ls1.transpose().array();
  Matrix out = x + o;

  if (fc1.size() > 0) {
    const Matrix h2 = norm2_w.size() > 0 ? layer_norm(out, norm2_w, norm2_b, norm_eps) : out;
    Matrix hidden = affine(h2, fc1, fc1_b);
    if (activation == Activation::kGelu) {
      hidden = hidden.unaryExpr([](double t) { return gelu(t); });
    } else {
      hidden = hidden.cwiseMax(0.0);
    }
    Matrix m = affine(hidden, fc2, fc2_b);
    if (ls2.size() > 0) m = m.array().rowwise() * ls2.transpose().array();
    out += m;
  }

  if (attn_out) {
    attn_mean /= static_cast<double>(heads);
    for (Eigen::Index i = 0; i < patches; ++i) {
      const double s = attn_mean.row(i).sum();
      if (s > 0.0) attn_mean.row(i) /= s;
    }
    *attn_out = std::move(attn_mean);
  }
  return out;
}

GlobalImageFeature global_pool(const PatchGrid& grid) {
  if (grid.tokens.rows() == 0) throw InputContractError("global_pool: empty patch grid");
  GlobalImageFeature g;
  g.vector = grid.tokens.colwise().mean().transpose();
  g.image_id = grid.image_id;
  return g;
}

}  // namespace ovseg
