#pragma once

// Training objectives. Each term returns its value together with the
// gradient with respect to its direct input.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "slcbm/core.hpp"
#include "slcbm/model.hpp"

namespace slcbm {

enum class Reduction { Sum, Mean };

struct LossWeights {
  double lambda_ce = 1.0;
  double lambda_ca = 1e4;
  double lambda_e = 5.0;
  double lambda_c = 0.0;
  double gamma = 1.0;
  double tau = 0.07;
  Reduction entropy_reduction = Reduction::Sum;

  void validate() const {
    for (double v : {lambda_ce, lambda_ca, lambda_e, lambda_c})
      if (!std::isfinite(v) || v < 0) throw ValidationError("loss weights must be finite and non-negative");
    if (!std::isfinite(gamma) || gamma <= 0) throw ValidationError("gamma must be positive");
    if (!std::isfinite(tau) || tau <= 0) throw ValidationError("tau must be positive");
  }

  bool operator==(const LossWeights&) const = default;
};

template <typename Scalar, typename G = Vector<Scalar>>
struct LossValue {
  Scalar value = 0;
  G grad;
};

// -logits[label] + logsumexp(logits)
template <typename Scalar>
LossValue<Scalar> loss_ce(const Vector<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw ValidationError("loss_ce: label " + std::to_string(label) + " out of range");
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  LossValue<Scalar> out;
  out.value = lse - logits(label);
  out.grad = (logits.array() - lse).exp().matrix();
  out.grad(label) -= 1;
  return out;
}

template <typename Scalar>
Vector<Scalar> indicator(Eigen::Index C, std::span<const int> concepts) {
  Vector<Scalar> v = Vector<Scalar>::Zero(C);
  for (int c : concepts) v(c) = 1;
  return v;
}

// mean_i | gamma * (softmax(f)_i - softmax(1[C_gt])_i) |
template <typename Scalar>
LossValue<Scalar> loss_ca(const Vector<Scalar>& f, std::span<const int> concepts, double gamma) {
  const Eigen::Index C = f.size();
  for (int c : concepts)
    if (c < 0 || c >= C) throw ValidationError("loss_ca: concept index out of range");
  const Vector<Scalar> p = softmax(f);
  const Vector<Scalar> q = softmax(indicator<Scalar>(C, concepts));
  const Vector<Scalar> diff = p - q;
  const Scalar g = static_cast<Scalar>(gamma);
  LossValue<Scalar> out;
  out.value = g * diff.cwiseAbs().sum() / static_cast<Scalar>(C);
  // d/dp, then through the softmax Jacobian
  const Vector<Scalar> dp = diff.unaryExpr([](Scalar d) { return Scalar((d > 0) - (d < 0)); }) * (g / C);
  out.grad = (p.array() * (dp.array() - p.dot(dp))).matrix();
  return out;
}

// sum (or mean) over cells of the entropy of the softmax over concepts.
// `S` is C x N.
template <typename Scalar>
LossValue<Scalar, Matrix<Scalar>> loss_entropy(const Matrix<Scalar>& S, Reduction reduction = Reduction::Sum) {
  LossValue<Scalar, Matrix<Scalar>> out;
  out.grad.resize(S.rows(), S.cols());
  const Scalar scale = reduction == Reduction::Mean ? Scalar(1) / static_cast<Scalar>(S.cols()) : Scalar(1);
  for (Eigen::Index n = 0; n < S.cols(); ++n) {
    const Vector<Scalar> col = S.col(n);
    const Scalar m = col.maxCoeff();
    const Vector<Scalar> shifted = (col.array() - m).matrix();
    const Scalar lse = std::log(shifted.array().exp().sum());
    const Vector<Scalar> logp = (shifted.array() - lse).matrix();
    const Vector<Scalar> p = logp.array().exp().matrix();
    const Scalar h = -p.dot(logp);
    out.value += h;
    out.grad.col(n) = -(p.array() * (logp.array() + h)).matrix() * scale;
  }
  out.value *= scale;
  return out;
}

// Supervised InfoNCE over a batch of concept vectors with cosine similarity.
// Anchors without a same-class partner are skipped; no positives gives 0.
template <typename Scalar>
LossValue<Scalar, std::vector<Vector<Scalar>>> loss_contrastive(std::span<const Vector<Scalar>> batch,
                                                                std::span<const int> labels, double tau) {
  const std::size_t n = batch.size();
  if (labels.size() != n) throw Error("loss_contrastive: batch/labels size mismatch");
  if (n < 2) throw ValidationError("loss_contrastive: batch size must be at least 2");
  const Scalar t = static_cast<Scalar>(tau);
  const Scalar eps = static_cast<Scalar>(1e-12);

  std::vector<Vector<Scalar>> unit(n);
  std::vector<Scalar> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::max(batch[i].norm(), eps);
    unit[i] = batch[i] / norms[i];
  }
  Matrix<Scalar> sim(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sim(i, j) = unit[i].dot(unit[j]);

  // dL/dsim accumulated per anchor, then mapped through the cosine.
  Matrix<Scalar> dsim = Matrix<Scalar>::Zero(n, n);
  Scalar total = 0;
  int anchors = 0;
  for (std::size_t a = 0; a < n; ++a) {
    int positives = 0;
    for (std::size_t j = 0; j < n; ++j) positives += (j != a && labels[j] == labels[a]);
    if (positives == 0) continue;
    ++anchors;
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != a) m = std::max(m, sim(a, j) / t);
    Scalar den = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != a) den += std::exp(sim(a, j) / t - m);
    const Scalar lse = m + std::log(den);
    Scalar pos = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const bool is_pos = labels[j] == labels[a];
      if (is_pos) pos += sim(a, j) / t;
      dsim(a, j) = (std::exp(sim(a, j) / t - lse) - (is_pos ? Scalar(1) / positives : Scalar(0))) / t;
    }
    total += lse - pos / positives;
  }

  LossValue<Scalar, std::vector<Vector<Scalar>>> out;
  out.grad.assign(n, Vector<Scalar>::Zero(batch[0].size()));
  if (anchors == 0) return out;
  out.value = total / anchors;
  dsim /= static_cast<Scalar>(anchors);
  // d cos(x_i, x_j) / d x_i = (u_j - cos * u_i) / |x_i|
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const Scalar g = dsim(i, j) + dsim(j, i);
      if (g == Scalar(0)) continue;
      out.grad[i] += g * (unit[j] - sim(i, j) * unit[i]) / norms[i];
    }
  return out;
}

struct LossBreakdown {
  double ce = 0, ca = 0, e = 0, c = 0;  // raw term values
  double total = 0;                     // weighted sum

  static LossBreakdown combine(const LossWeights& w, double ce, double ca, double e, double c) {
    return {ce, ca, e, c, w.lambda_ce * ce + w.lambda_ca * ca + w.lambda_e * e + w.lambda_c * c};
  }
};

template <typename Scalar>
struct TraceGrad {
  Vector<Scalar> f;
  Matrix<Scalar> saliency;
  Vector<Scalar> logits;
};

template <typename Scalar>
struct TotalLoss {
  LossBreakdown breakdown;
  std::vector<TraceGrad<Scalar>> grads;  // one per trace
};

// Batch objective: mean over samples of the per-sample terms plus the batch
// contrastive term. A zero weight skips that term's gradient entirely.
template <typename Scalar>
TotalLoss<Scalar> total_loss(const LossWeights& w, std::span<const ForwardTrace<Scalar>> traces,
                             std::span<const int> labels, std::span<const std::vector<int>> concepts) {
  const std::size_t n = traces.size();
  if (labels.size() != n || concepts.size() != n) throw Error("total_loss: batch size mismatch");
  TotalLoss<Scalar> out;
  out.grads.resize(n);
  if (n == 0) return out;
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  double ce = 0, ca = 0, e = 0, c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = traces[i];
    auto& g = out.grads[i];
    g.f = Vector<Scalar>::Zero(t.f.size());
    g.logits = Vector<Scalar>::Zero(t.logits.size());
    g.saliency = Matrix<Scalar>::Zero(t.saliency.rows(), t.saliency.cols());

    const auto lce = loss_ce(t.logits, labels[i]);
    ce += lce.value;
    if (w.lambda_ce > 0) g.logits += lce.grad * static_cast<Scalar>(w.lambda_ce) * inv_n;

    const auto lca = loss_ca(t.f, std::span<const int>(concepts[i]), w.gamma);
    ca += lca.value;
    if (w.lambda_ca > 0) g.f += lca.grad * static_cast<Scalar>(w.lambda_ca) * inv_n;

    if (t.saliency.size() > 0) {
      const auto le = loss_entropy(t.saliency, w.entropy_reduction);
      e += le.value;
      if (w.lambda_e > 0) g.saliency += le.grad * static_cast<Scalar>(w.lambda_e) * inv_n;
    }
  }
  if (n >= 2 && w.lambda_c > 0) {
    std::vector<Vector<Scalar>> fs(n);
    for (std::size_t i = 0; i < n; ++i) fs[i] = traces[i].f;
    const auto lc = loss_contrastive<Scalar>(fs, labels, w.tau);
    c = lc.value;
    for (std::size_t i = 0; i < n; ++i) out.grads[i].f += lc.grad[i] * static_cast<Scalar>(w.lambda_c);
  }
  out.breakdown = LossBreakdown::combine(w, ce / n, ca / n, e / n, c);
  return out;
}

}  // namespace slcbm
