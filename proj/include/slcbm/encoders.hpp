#pragma once

// Frozen feature extraction: a seeded random-projection patch backbone that
// yields a spatial feature grid plus a pooled summary, concept prototypes
// averaged from mask-covered cells, and the cosine similarity projection.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"

namespace slcbm {

struct BackboneConfig {
  int patch_size = 8;
  int feature_dim = 64;
  std::uint64_t seed = 1;

  bool operator==(const BackboneConfig&) const = default;
};

// Grid F is (H*W) x D with cell (h, w) at row h*W + w.
template <typename Scalar = double>
struct SpatialFeatures {
  int height = 0;
  int width = 0;
  Matrix<Scalar> grid;
  Vector<Scalar> summary;

  int cells() const { return height * width; }
  int dim() const { return static_cast<int>(grid.cols()); }

  template <typename T>
  SpatialFeatures<T> cast() const {
    return {height, width, grid.template cast<T>(), summary.template cast<T>()};
  }
};

// C x D, unit-norm rows.
template <typename Scalar = double>
struct ConceptFeatures {
  Matrix<Scalar> rows;

  int size() const { return static_cast<int>(rows.rows()); }

  template <typename T>
  ConceptFeatures<T> cast() const {
    return {rows.template cast<T>()};
  }
};

class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
    if (cfg.patch_size < 1) throw ValidationError("patch_size must be positive");
    if (cfg.feature_dim < 4) throw ValidationError("feature_dim must be at least 4");
    const int in = 3 * cfg.patch_size * cfg.patch_size;
    Rng rng(cfg.seed);
    projection_ = random_normal<double>(cfg.feature_dim, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }

  const BackboneConfig& config() const { return cfg_; }

  // Any image type with width, height and at(y, x, channel) in [0, 1].
  template <typename Img>
  SpatialFeatures<double> encode(const Img& image) const {
    const int p = cfg_.patch_size;
    if (image.width % p != 0 || image.height % p != 0)
      throw ValidationError("image size " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                            " not divisible by patch size " + std::to_string(p));
    if (image.width / p < 2 || image.height / p < 2) throw ValidationError("feature grid must be at least 2x2");
    SpatialFeatures<double> out;
    out.height = image.height / p;
    out.width = image.width / p;
    out.grid.resize(out.cells(), cfg_.feature_dim);
    VectorD patch(3 * p * p);
    for (int gh = 0; gh < out.height; ++gh)
      for (int gw = 0; gw < out.width; ++gw) {
        int k = 0;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int c = 0; c < 3; ++c) patch(k++) = image.at(gh * p + y, gw * p + x, c);
        out.grid.row(gh * out.width + gw) = (projection_ * patch).array().tanh().transpose();
      }
    out.summary = out.grid.colwise().mean().transpose();
    return out;
  }

 private:
  BackboneConfig cfg_;
  MatrixD projection_;
};

inline std::vector<SpatialFeatures<double>> encode_all(const Backbone& bb, std::span<const Sample> samples) {
  std::vector<SpatialFeatures<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(bb.encode(s.image));
  return out;
}

// Prototype for concept i: mean over training samples containing i of the
// mean feature over cells whose mask coverage exceeds 0.5, normalized.
inline ConceptFeatures<double> build_concept_prototypes(const BackboneConfig& cfg, const ConceptVocabulary& vocab,
                                                        std::span<const Sample> train,
                                                        std::span<const SpatialFeatures<double>> features) {
  if (train.size() != features.size()) throw Error("prototype build: samples/features size mismatch");
  const int C = static_cast<int>(vocab.size());
  const int D = cfg.feature_dim;
  MatrixD local = MatrixD::Zero(C, D), whole = MatrixD::Zero(C, D);
  std::vector<int> local_n(C, 0), whole_n(C, 0);

  for (std::size_t n = 0; n < train.size(); ++n) {
    const auto& s = train[n];
    const auto& f = features[n];
    for (int i : s.concepts) {
      whole.row(i) += f.summary.transpose();
      ++whole_n[i];
      const BinaryMask grid = downsample_mask(s.concept_masks[i], cfg.patch_size);
      VectorD acc = VectorD::Zero(D);
      int covered = 0;
      for (int c = 0; c < f.cells(); ++c)
        if (grid.bits[c]) {
          acc += f.grid.row(c).transpose();
          ++covered;
        }
      if (covered > 0) {
        local.row(i) += (acc / covered).transpose();
        ++local_n[i];
      }
    }
  }

  ConceptFeatures<double> E{MatrixD(C, D)};
  for (int i = 0; i < C; ++i) {
    if (whole_n[i] == 0)
      throw ValidationError("concept '" + vocab.names[i] + "' never appears in the training samples");
    VectorD proto;
    if (local_n[i] > 0) {
      proto = local.row(i).transpose() / local_n[i];
    } else {
      log().warn("concept '{}' never covers a feature cell above 0.5; using whole-image average", vocab.names[i]);
      proto = whole.row(i).transpose() / whole_n[i];
    }
    const double norm = proto.norm();
    if (!(norm > 0.0)) throw Error("concept '" + vocab.names[i] + "' has a zero prototype");
    E.rows.row(i) = (proto / norm).transpose();
  }
  return E;
}

inline ConceptFeatures<double> build_concept_prototypes(const BackboneConfig& cfg, const ConceptVocabulary& vocab,
                                                        std::span<const Sample> train) {
  const Backbone bb(cfg);
  const auto feats = encode_all(bb, train);
  return build_concept_prototypes(cfg, vocab, train, feats);
}

inline constexpr double kSimilarityEps = 1e-8;

// z_i = cos(E_i, s); clamped into [-1, 1] against rounding.
template <typename Scalar>
Vector<Scalar> similarity_vector(const ConceptFeatures<Scalar>& E, const Vector<Scalar>& s) {
  if (E.rows.cols() != s.size()) throw Error("similarity_vector: dimension mismatch");
  const Scalar norm = std::max<Scalar>(s.norm(), static_cast<Scalar>(kSimilarityEps));
  Vector<Scalar> z = E.rows * s / norm;
  return z.cwiseMax(Scalar(-1)).cwiseMin(Scalar(1));
}

// Vector-Jacobian product of similarity_vector with respect to s.
template <typename Scalar>
Vector<Scalar> similarity_vjp(const ConceptFeatures<Scalar>& E, const Vector<Scalar>& s, const Vector<Scalar>& dz) {
  const Scalar raw = s.norm();
  if (raw <= static_cast<Scalar>(kSimilarityEps)) return E.rows.transpose() * dz / static_cast<Scalar>(kSimilarityEps);
  const Vector<Scalar> z = E.rows * s / raw;
  return (E.rows.transpose() * dz - s * (z.dot(dz) / raw)) / raw;
}

}  // namespace slcbm
