#pragma once

// The concept head: a 1x1 convolution producing concept saliency maps,
// saliency-biased cross-attention fusing them with the similarity vector into
// concept scores f, a linear classifier g, and class saliency as the
// classifier-weighted sum of concept maps. Also the linear-probe baseline with
// Grad-CAM saliency.
//
// Shapes: C concepts, D feature channels, K classes, N = H*W cells.
//   S  = conv_w F^T + conv_b                 (C x N)
//   t_i = z_i conv_w_i,  q_i = attn_q t_i
//   k_n = attn_k F_n,    v_n = attn_v F_n
//   alpha_i = softmax_n(q_i . k_n / sqrt(D) + S_in)
//   r_i = sum_n alpha_in v_n
//   f_i = z_i + out_scale * (t_i . r_i) / sqrt(D)
//   logits = W f + b

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "slcbm/core.hpp"
#include "slcbm/encoders.hpp"

namespace slcbm {

template <typename Scalar>
struct LinearHead {
  Matrix<Scalar> w;  // K x C
  Vector<Scalar> b;  // K

  int num_classes() const { return static_cast<int>(w.rows()); }
  int num_concepts() const { return static_cast<int>(w.cols()); }

  template <typename T>
  LinearHead<T> cast() const {
    return {w.template cast<T>(), b.template cast<T>()};
  }
};

template <typename Scalar>
struct ModelParams {
  Matrix<Scalar> conv_w;  // C x D
  Vector<Scalar> conv_b;  // C
  Matrix<Scalar> attn_q, attn_k, attn_v;  // D x D
  Scalar out_scale = 0;
  LinearHead<Scalar> classifier;

  int num_concepts() const { return static_cast<int>(conv_w.rows()); }
  int feature_dim() const { return static_cast<int>(conv_w.cols()); }
  int num_classes() const { return classifier.num_classes(); }

  // Conv and attention ~ N(0, 1/D); classifier ~ N(0, 1/C); biases and
  // out_scale zero, so an untrained head is the pure projection model.
  static ModelParams init(int C, int D, int K, Rng& rng) {
    ModelParams p;
    const double sd = 1.0 / std::sqrt(static_cast<double>(D));
    p.conv_w = random_normal<Scalar>(C, D, sd, rng);
    p.conv_b = Vector<Scalar>::Zero(C);
    p.attn_q = random_normal<Scalar>(D, D, sd, rng);
    p.attn_k = random_normal<Scalar>(D, D, sd, rng);
    p.attn_v = random_normal<Scalar>(D, D, sd, rng);
    p.out_scale = 0;
    p.classifier.w = random_normal<Scalar>(K, C, 1.0 / std::sqrt(static_cast<double>(C)), rng);
    p.classifier.b = Vector<Scalar>::Zero(K);
    return p;
  }

  static ModelParams zeros(int C, int D, int K) {
    ModelParams p;
    p.conv_w = Matrix<Scalar>::Zero(C, D);
    p.conv_b = Vector<Scalar>::Zero(C);
    p.attn_q = p.attn_k = p.attn_v = Matrix<Scalar>::Zero(D, D);
    p.out_scale = 0;
    p.classifier.w = Matrix<Scalar>::Zero(K, C);
    p.classifier.b = Vector<Scalar>::Zero(K);
    return p;
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> p;
    p.conv_w = conv_w.template cast<T>();
    p.conv_b = conv_b.template cast<T>();
    p.attn_q = attn_q.template cast<T>();
    p.attn_k = attn_k.template cast<T>();
    p.attn_v = attn_v.template cast<T>();
    p.out_scale = static_cast<T>(out_scale);
    p.classifier = classifier.template cast<T>();
    return p;
  }

  // Visits every learnable array as (name, contiguous data, element count).
  template <typename Fn>
  void visit(Fn&& fn) {
    fn("conv_w", conv_w.data(), conv_w.size());
    fn("conv_b", conv_b.data(), conv_b.size());
    fn("attn_q", attn_q.data(), attn_q.size());
    fn("attn_k", attn_k.data(), attn_k.size());
    fn("attn_v", attn_v.data(), attn_v.size());
    fn("out_scale", &out_scale, Eigen::Index{1});
    fn("cls_w", classifier.w.data(), classifier.w.size());
    fn("cls_b", classifier.b.data(), classifier.b.size());
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ModelParams*>(this)->visit([&](const char* name, Scalar* data, Eigen::Index n) {
      fn(name, static_cast<const Scalar*>(data), n);
    });
  }

  ModelParams& operator+=(const ModelParams& o) {
    conv_w += o.conv_w;
    conv_b += o.conv_b;
    attn_q += o.attn_q;
    attn_k += o.attn_k;
    attn_v += o.attn_v;
    out_scale += o.out_scale;
    classifier.w += o.classifier.w;
    classifier.b += o.classifier.b;
    return *this;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const char*, const Scalar* d, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) ok = ok && std::isfinite(static_cast<double>(d[i]));
    });
    return ok;
  }
};

template <typename Scalar>
struct ForwardTrace {
  int height = 0;
  int width = 0;
  Vector<Scalar> z;
  Matrix<Scalar> saliency;  // C x (H*W), raw concept maps
  Vector<Scalar> f;
  Vector<Scalar> logits;

  Eigen::Index predicted() const { return argmax(logits); }
};

// Intermediates kept for the backward pass.
template <typename Scalar>
struct FuseCache {
  Matrix<Scalar> t, q, k, v, alpha, r;  // C x D, C x D, N x D, N x D, C x N, C x D
  Vector<Scalar> u;                     // t_i . r_i
};

template <typename Scalar>
Matrix<Scalar> concept_saliency(const ModelParams<Scalar>& p, const Matrix<Scalar>& F) {
  Matrix<Scalar> S = p.conv_w * F.transpose();
  S.colwise() += p.conv_b;
  return S;
}

template <typename Scalar>
Vector<Scalar> fuse(const ModelParams<Scalar>& p, const Vector<Scalar>& z, const Matrix<Scalar>& S,
                    const Matrix<Scalar>& F, FuseCache<Scalar>* cache = nullptr) {
  const Eigen::Index C = p.conv_w.rows();
  if (z.size() != C || S.rows() != C || S.cols() != F.rows() || F.cols() != p.conv_w.cols())
    throw Error("fuse: shape mismatch");
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(F.cols()));

  FuseCache<Scalar> local;
  FuseCache<Scalar>& c = cache ? *cache : local;
  c.t = z.asDiagonal() * p.conv_w;
  c.q = c.t * p.attn_q.transpose();
  c.k = F * p.attn_k.transpose();
  c.v = F * p.attn_v.transpose();
  c.alpha = c.q * c.k.transpose() * inv_sqrt_d + S;
  for (Eigen::Index i = 0; i < C; ++i) {
    auto row = c.alpha.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  c.r = c.alpha * c.v;
  c.u = (c.t.cwiseProduct(c.r)).rowwise().sum();
  return z + p.out_scale * inv_sqrt_d * c.u;
}

template <typename Scalar>
Vector<Scalar> classify(const LinearHead<Scalar>& head, const Vector<Scalar>& f) {
  if (f.size() != head.w.cols()) throw Error("classify: concept dimension mismatch");
  return head.w * f + head.b;
}

// S_l = sum_i W[l, i] S_i, one value per cell.
template <typename Scalar>
Vector<Scalar> class_saliency(const LinearHead<Scalar>& head, const Matrix<Scalar>& S, int label) {
  if (label < 0 || label >= head.num_classes())
    throw ValidationError("class_saliency: class " + std::to_string(label) + " out of range");
  return S.transpose() * head.w.row(label).transpose();
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const ModelParams<Scalar>& p, const SpatialFeatures<Scalar>& feats,
                             const ConceptFeatures<Scalar>& E, FuseCache<Scalar>* cache = nullptr) {
  if (E.size() != p.num_concepts() || E.rows.cols() != feats.dim() || p.feature_dim() != feats.dim())
    throw Error("forward: inconsistent shapes");
  ForwardTrace<Scalar> t;
  t.height = feats.height;
  t.width = feats.width;
  t.z = similarity_vector(E, feats.summary);
  t.saliency = concept_saliency(p, feats.grid);
  t.f = fuse(p, t.z, t.saliency, feats.grid, cache);
  t.logits = classify(p.classifier, t.f);
  return t;
}

template <typename Scalar>
struct BackwardResult {
  ModelParams<Scalar> params;
  Vector<Scalar> z;  // dL/dz
  Matrix<Scalar> F;  // dL/dF (features are frozen; used by gradient checks)
};

// Back-propagates upstream gradients on f, on the saliency stack and on the
// logits through the head.
template <typename Scalar>
BackwardResult<Scalar> backward(const ModelParams<Scalar>& p, const SpatialFeatures<Scalar>& feats,
                                const ForwardTrace<Scalar>& trace, const FuseCache<Scalar>& c,
                                Vector<Scalar> grad_f, const Matrix<Scalar>& grad_saliency,
                                const Vector<Scalar>& grad_logits, bool want_input_grads = false) {
  const Matrix<Scalar>& F = feats.grid;
  const Eigen::Index C = p.conv_w.rows(), D = p.conv_w.cols();
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(D));
  BackwardResult<Scalar> g;
  g.params = ModelParams<Scalar>::zeros(static_cast<int>(C), static_cast<int>(D), p.num_classes());

  // classifier
  g.params.classifier.w = grad_logits * trace.f.transpose();
  g.params.classifier.b = grad_logits;
  grad_f += p.classifier.w.transpose() * grad_logits;

  // f = z + out_scale * u / sqrt(D)
  g.params.out_scale = grad_f.dot(c.u) * inv_sqrt_d;
  const Vector<Scalar> grad_u = grad_f * (p.out_scale * inv_sqrt_d);
  Vector<Scalar> grad_z = grad_f;
  Matrix<Scalar> grad_t = grad_u.asDiagonal() * c.r;
  const Matrix<Scalar> grad_r = grad_u.asDiagonal() * c.t;

  // r = alpha v
  const Matrix<Scalar> grad_alpha = grad_r * c.v.transpose();
  const Matrix<Scalar> grad_v = c.alpha.transpose() * grad_r;

  // softmax rows
  Matrix<Scalar> grad_logit = c.alpha.cwiseProduct(grad_alpha);
  const Vector<Scalar> inner = grad_logit.rowwise().sum();
  grad_logit -= c.alpha.cwiseProduct(inner.replicate(1, c.alpha.cols()));

  // attention logits = q k^T / sqrt(D) + S
  const Matrix<Scalar> grad_q = grad_logit * c.k * inv_sqrt_d;
  const Matrix<Scalar> grad_k = grad_logit.transpose() * c.q * inv_sqrt_d;
  const Matrix<Scalar> grad_S = grad_logit + grad_saliency;

  g.params.attn_q = grad_q.transpose() * c.t;
  grad_t += grad_q * p.attn_q;
  g.params.attn_k = grad_k.transpose() * F;
  g.params.attn_v = grad_v.transpose() * F;

  // S = conv_w F^T + conv_b;  t = diag(z) conv_w
  g.params.conv_w = grad_S * F + trace.z.asDiagonal() * grad_t;
  g.params.conv_b = grad_S.rowwise().sum();
  grad_z += grad_t.cwiseProduct(p.conv_w).rowwise().sum();

  if (want_input_grads) {
    g.z = grad_z;
    g.F = grad_k * p.attn_k + grad_v * p.attn_v + grad_S.transpose() * p.conv_w;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Grad-CAM

// Gradient of a scalar score with respect to the (N x D) feature grid.
template <typename Scalar>
using FeatureGradFn = std::function<Matrix<Scalar>(const Matrix<Scalar>&)>;

// Channel weights are the cell-mean of dScore/dF; map = relu(F w).
template <typename Scalar>
Vector<Scalar> gradcam_saliency(const Matrix<Scalar>& F, const FeatureGradFn<Scalar>& score_grad) {
  const Matrix<Scalar> grad = score_grad(F);
  if (grad.rows() != F.rows() || grad.cols() != F.cols()) throw Error("gradcam: gradient shape mismatch");
  const Vector<Scalar> weights = grad.colwise().mean().transpose();
  return (F * weights).cwiseMax(Scalar(0));
}

// Per-cell gradient of a function of z for a summary that is the cell mean.
template <typename Scalar>
Matrix<Scalar> summary_grad_to_cells(const Vector<Scalar>& ds, Eigen::Index cells) {
  return (ds.transpose() / static_cast<Scalar>(cells)).replicate(cells, 1);
}

// Baseline: f = z, logits = W z + b; concept maps are Grad-CAM of each z_i.
template <typename Scalar>
ForwardTrace<Scalar> baseline_forward(const LinearHead<Scalar>& head, const SpatialFeatures<Scalar>& feats,
                                      const ConceptFeatures<Scalar>& E) {
  ForwardTrace<Scalar> t;
  t.height = feats.height;
  t.width = feats.width;
  t.z = similarity_vector(E, feats.summary);
  t.f = t.z;
  t.logits = classify(head, t.f);
  const Eigen::Index C = E.rows.rows(), N = feats.cells();
  t.saliency.resize(C, N);
  for (Eigen::Index i = 0; i < C; ++i) {
    const Vector<Scalar> dz = Vector<Scalar>::Unit(C, i);
    const Vector<Scalar> ds = similarity_vjp(E, feats.summary, dz);
    t.saliency.row(i) =
        gradcam_saliency<Scalar>(feats.grid, [&](const Matrix<Scalar>&) { return summary_grad_to_cells(ds, N); })
            .transpose();
  }
  return t;
}

// Class-level Grad-CAM for the baseline: gradient of logit `label`.
template <typename Scalar>
Vector<Scalar> baseline_class_gradcam(const LinearHead<Scalar>& head, const SpatialFeatures<Scalar>& feats,
                                      const ConceptFeatures<Scalar>& E, int label) {
  if (label < 0 || label >= head.num_classes()) throw ValidationError("baseline_class_gradcam: class out of range");
  const Vector<Scalar> dz = head.w.row(label).transpose();
  const Vector<Scalar> ds = similarity_vjp(E, feats.summary, dz);
  return gradcam_saliency<Scalar>(feats.grid,
                                  [&](const Matrix<Scalar>&) { return summary_grad_to_cells(ds, feats.cells()); });
}

// ---------------------------------------------------------------------------
// Runtime model: frozen backbone + concept features + one of the two heads,
// evaluated in double precision.

enum class HeadKind { SlCbm, Baseline };

inline std::string to_string(HeadKind k) { return k == HeadKind::SlCbm ? "slcbm" : "baseline"; }

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "slcbm") return HeadKind::SlCbm;
  if (s == "baseline") return HeadKind::Baseline;
  throw ValidationError("unknown head '" + s + "' (expected slcbm or baseline)");
}

class ConceptModel {
 public:
  ConceptModel(HeadKind kind, const BackboneConfig& bb, ConceptFeatures<double> E, ModelParams<double> params)
      : kind_(kind), backbone_(bb), E_(std::move(E)), params_(std::move(params)) {}

  HeadKind kind() const { return kind_; }
  const Backbone& backbone() const { return backbone_; }
  const ConceptFeatures<double>& concepts() const { return E_; }
  const ModelParams<double>& params() const { return params_; }
  const LinearHead<double>& classifier() const { return params_.classifier; }

  template <typename Img>
  SpatialFeatures<double> encode(const Img& image) const {
    return backbone_.encode(image);
  }

  // Full trace including the concept saliency stack (Grad-CAM for the baseline).
  ForwardTrace<double> trace(const SpatialFeatures<double>& feats) const {
    if (kind_ == HeadKind::SlCbm) return forward(params_, feats, E_);
    return baseline_forward(params_.classifier, feats, E_);
  }

  // Logits only; skips saliency for the baseline.
  VectorD logits(const SpatialFeatures<double>& feats) const {
    if (kind_ == HeadKind::SlCbm) return forward(params_, feats, E_).logits;
    return classify(params_.classifier, similarity_vector(E_, feats.summary));
  }

  template <typename Img>
  VectorD class_probabilities(const Img& image) const {
    return softmax(logits(encode(image)));
  }

  VectorD class_map(const ForwardTrace<double>& t, const SpatialFeatures<double>& feats, int label) const {
    if (kind_ == HeadKind::SlCbm) return class_saliency(params_.classifier, t.saliency, label);
    return baseline_class_gradcam(params_.classifier, feats, E_, label);
  }

 private:
  HeadKind kind_;
  Backbone backbone_;
  ConceptFeatures<double> E_;
  ModelParams<double> params_;
};

}  // namespace slcbm
