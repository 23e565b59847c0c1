#pragma once

// Randomized check suites shared by the unit tests and the acceptance runner.
// Every oracle here is written independently of the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "slcbm/slcbm.hpp"

namespace slcbm::testing {

struct SuiteResult {
  std::string name;
  int instances = 0;
  int failures = 0;
  double worst = 0;  // largest observed error measure
  std::string first_failure = {};

  bool ok() const { return instances > 0 && failures == 0; }

  void fail(const std::string& what) {
    if (failures++ == 0) first_failure = what;
  }
};

// ---------------------------------------------------------------------------
// Random instances

inline VectorD random_vector(Eigen::Index n, Rng& rng, double sd = 1.0) { return random_normal<double>(n, 1, sd, rng); }

inline ConceptFeatures<double> random_concepts(int C, int D, Rng& rng) {
  ConceptFeatures<double> E{random_normal<double>(C, D, 1.0, rng)};
  E.rows.rowwise().normalize();
  return E;
}

inline SpatialFeatures<double> random_features(int H, int W, int D, Rng& rng) {
  SpatialFeatures<double> f;
  f.height = H;
  f.width = W;
  f.grid = random_normal<double>(H * W, D, 1.0, rng).array().tanh().matrix();
  f.summary = f.grid.colwise().mean().transpose();
  return f;
}

// Fully random parameters, including out_scale and biases, so every path of
// the head is exercised.
inline ModelParams<double> random_params(int C, int D, int K, Rng& rng) {
  ModelParams<double> p;
  p.conv_w = random_normal<double>(C, D, 0.7, rng);
  p.conv_b = random_vector(C, rng, 0.5);
  p.attn_q = random_normal<double>(D, D, 0.7, rng);
  p.attn_k = random_normal<double>(D, D, 0.7, rng);
  p.attn_v = random_normal<double>(D, D, 0.7, rng);
  p.out_scale = std::normal_distribution<double>(0.0, 1.0)(rng);
  p.classifier.w = random_normal<double>(K, C, 1.0, rng);
  p.classifier.b = random_vector(K, rng, 0.5);
  return p;
}

// Random non-empty concept subset of [0, C), sorted.
inline std::vector<int> random_concept_set(int C, Rng& rng) {
  std::vector<int> s;
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < C; ++i)
    if (coin(rng)) s.push_back(i);
  if (s.empty()) s.push_back(std::uniform_int_distribution<int>(0, C - 1)(rng));
  return s;
}

// ---------------------------------------------------------------------------
// Finite differences

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdRelTol = 1e-3;
inline constexpr double kFdAbsFloor = 1e-7;  // entries this close count as equal regardless of scale

inline double central_difference(double& x, const std::function<double()>& fn) {
  const double saved = x;
  x = saved + kFdStep;
  const double up = fn();
  x = saved - kFdStep;
  const double down = fn();
  x = saved;
  return (up - down) / (2 * kFdStep);
}

inline double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= kFdAbsFloor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// Compares analytic[k] with the central difference of fn in data[k], k < n.
inline void check_array(SuiteResult& r, const std::string& what, double* data, const double* analytic, Eigen::Index n,
                        const std::function<double()>& fn) {
  for (Eigen::Index k = 0; k < n; ++k) {
    const double numeric = central_difference(data[k], fn);
    const double err = relative_error(analytic[k], numeric);
    r.worst = std::max(r.worst, err);
    if (err > kFdRelTol) {
      std::ostringstream msg;
      msg << what << "[" << k << "]: analytic " << analytic[k] << " vs numeric " << numeric;
      r.fail(msg.str());
    }
  }
}

// Instance shape for gradient checks: C <= 4, D <= 6, H = W = 2.
struct SmallShape {
  int C, D, K;
};

inline SmallShape small_shape(int i) { return {2 + i % 3, 4 + (i / 3) % 3, 2 + i % 2}; }

// ---------------------------------------------------------------------------
// Gradient suite

inline SuiteResult grad_ce(int instances, std::uint64_t seed = 11) {
  SuiteResult r{"L_ce"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int K = 2 + i % 4;
    VectorD logits = random_vector(K, rng, 2.0);
    const int label = std::uniform_int_distribution<int>(0, K - 1)(rng);
    const auto g = loss_ce(logits, label).grad;
    check_array(r, "dlogits", logits.data(), g.data(), K, [&] { return loss_ce(logits, label).value; });
  }
  return r;
}

inline SuiteResult grad_ca(int instances, std::uint64_t seed = 12) {
  SuiteResult r{"L_ca"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int C = 2 + i % 3;
    VectorD f = random_vector(C, rng, 1.5);
    const auto concepts = random_concept_set(C, rng);
    const double gamma = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    const auto g = loss_ca(f, std::span<const int>(concepts), gamma).grad;
    check_array(r, "df", f.data(), g.data(), C,
                [&] { return loss_ca(f, std::span<const int>(concepts), gamma).value; });
  }
  return r;
}

inline SuiteResult grad_entropy(int instances, std::uint64_t seed = 13) {
  SuiteResult r{"L_e"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int C = 2 + i % 3;
    MatrixD S = random_normal<double>(C, 4, 1.5, rng);
    const Reduction red = i % 2 ? Reduction::Mean : Reduction::Sum;
    const auto g = loss_entropy(S, red).grad;
    check_array(r, "dS", S.data(), g.data(), S.size(), [&] { return loss_entropy(S, red).value; });
  }
  return r;
}

inline SuiteResult grad_contrastive(int instances, std::uint64_t seed = 14) {
  SuiteResult r{"L_c"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int C = 2 + i % 3;
    const int n = 3 + i % 3;
    std::vector<VectorD> batch(n);
    for (auto& v : batch) v = random_vector(C, rng);
    std::vector<int> labels(n);
    for (int k = 0; k < n; ++k) labels[k] = k % 2;
    const double tau = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    auto value = [&] { return loss_contrastive<double>(batch, labels, tau).value; };
    const auto g = loss_contrastive<double>(batch, labels, tau).grad;
    for (int k = 0; k < n; ++k) check_array(r, "df" + std::to_string(k), batch[k].data(), g[k].data(), C, value);
  }
  return r;
}

// Weighted total loss of a 3-sample batch through the full head; analytic
// gradients for every parameter array plus z and F of each sample.
inline SuiteResult grad_full_forward(int instances, std::uint64_t seed = 15) {
  SuiteResult r{"forward"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const auto [C, D, K] = small_shape(i);
    const int n = 3;
    auto p = random_params(C, D, K, rng);
    const auto E = random_concepts(C, D, rng);
    std::vector<SpatialFeatures<double>> feats;
    std::vector<VectorD> zs;
    std::vector<int> labels;
    std::vector<std::vector<int>> concepts;
    for (int k = 0; k < n; ++k) {
      feats.push_back(random_features(2, 2, D, rng));
      zs.push_back(similarity_vector(E, feats.back().summary));
      labels.push_back(k % 2 == 0 ? 0 : std::uniform_int_distribution<int>(0, K - 1)(rng));
      concepts.push_back(random_concept_set(C, rng));
    }
    LossWeights w;
    w.lambda_ce = 1.0;
    w.lambda_ca = 2.0;
    w.lambda_e = 0.5;
    w.lambda_c = 0.3;
    w.tau = 0.5;

    // z is treated as an input in its own right (its dependence on F through
    // the summary is the backbone's, which is frozen).
    auto traces_of = [&](std::vector<FuseCache<double>>* caches) {
      std::vector<ForwardTrace<double>> ts(n);
      for (int k = 0; k < n; ++k) {
        auto& t = ts[k];
        t.height = t.width = 2;
        t.z = zs[k];
        t.saliency = concept_saliency(p, feats[k].grid);
        t.f = fuse(p, t.z, t.saliency, feats[k].grid, caches ? &(*caches)[k] : nullptr);
        t.logits = classify(p.classifier, t.f);
      }
      return ts;
    };
    auto value = [&] {
      const auto ts = traces_of(nullptr);
      return total_loss<double>(w, ts, labels, concepts).breakdown.total;
    };

    std::vector<FuseCache<double>> caches(n);
    const auto ts = traces_of(&caches);
    const auto tl = total_loss<double>(w, ts, labels, concepts);
    auto grad = ModelParams<double>::zeros(C, D, K);
    std::vector<BackwardResult<double>> per(n);
    for (int k = 0; k < n; ++k) {
      const auto& g = tl.grads[k];
      per[k] = backward(p, feats[k], ts[k], caches[k], g.f, g.saliency, g.logits, true);
      grad += per[k].params;
    }

    std::vector<std::pair<std::string, std::pair<double*, const double*>>> arrays;
    std::vector<Eigen::Index> sizes;
    p.visit([&](const char* name, double* d, Eigen::Index m) {
      arrays.push_back({name, {d, nullptr}});
      sizes.push_back(m);
    });
    std::size_t a = 0;
    grad.visit([&](const char*, const double* d, Eigen::Index) { arrays[a++].second.second = d; });
    for (std::size_t j = 0; j < arrays.size(); ++j)
      check_array(r, arrays[j].first, arrays[j].second.first, arrays[j].second.second, sizes[j], value);
    for (int k = 0; k < n; ++k) {
      check_array(r, "dz" + std::to_string(k), zs[k].data(), per[k].z.data(), C, value);
      check_array(r, "dF" + std::to_string(k), feats[k].grid.data(), per[k].F.data(), feats[k].grid.size(), value);
    }
  }
  return r;
}

inline std::vector<SuiteResult> gradient_suite(int instances) {
  return {grad_ce(instances), grad_ca(instances), grad_entropy(instances), grad_contrastive(instances),
          grad_full_forward(instances)};
}

// ---------------------------------------------------------------------------
// Metric oracles

// Concept i is in the top-k iff fewer than k entries beat it (larger score,
// or equal score at a lower index).
inline int oracle_topk_hits(const VectorD& f, const std::vector<int>& gt) {
  const int k = static_cast<int>(gt.size());
  int hits = 0;
  for (int c : gt) {
    int better = 0;
    for (int j = 0; j < f.size(); ++j) better += f(j) > f(c) || (f(j) == f(c) && j < c);
    hits += better < k;
  }
  return hits;
}

inline std::vector<std::uint8_t> oracle_binarize(const std::vector<double>& s) {
  double lo = s[0], hi = s[0];
  for (double v : s) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<std::uint8_t> b(s.size(), 0);
  if (hi == lo) return b;
  for (std::size_t i = 0; i < s.size(); ++i) b[i] = (s[i] - lo) / (hi - lo) > 0.5;
  return b;
}

struct OracleOverlap {
  int inter = 0, uni = 0, b = 0, m = 0;
};

inline OracleOverlap oracle_counts(const std::vector<std::uint8_t>& B, const std::vector<std::uint8_t>& M) {
  OracleOverlap o;
  for (std::size_t i = 0; i < B.size(); ++i) {
    o.inter += B[i] == 1 && M[i] == 1;
    o.uni += B[i] == 1 || M[i] == 1;
    o.b += B[i] == 1;
    o.m += M[i] == 1;
  }
  return o;
}

// Bilinear sample of an h x w grid at output pixel (y, x) of an H x W image,
// written from the half-pixel mapping directly.
inline double oracle_bilinear(const std::vector<double>& g, int h, int w, int H, int W, int y, int x) {
  auto clampd = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
  const double sy = clampd((y + 0.5) * h / H - 0.5, 0, h - 1);
  const double sx = clampd((x + 0.5) * w / W - 0.5, 0, w - 1);
  double acc = 0;
  for (int gy = 0; gy < h; ++gy)
    for (int gx = 0; gx < w; ++gx) {
      const double wy = std::max(0.0, 1 - std::abs(sy - gy));
      const double wx = std::max(0.0, 1 - std::abs(sx - gx));
      acc += wy * wx * g[gy * w + gx];
    }
  return acc;
}

// AD / AI / AG of one map, recomputed from scratch.
struct OracleFaith {
  double ad = 0, ai = 0, ag = 0;
};

inline OracleFaith oracle_faith_map(const ConceptModel& model, const Image& img, int label, const VectorD& map, int h,
                                    int w) {
  std::vector<double> g(map.data(), map.data() + map.size());
  const double lo = *std::min_element(g.begin(), g.end()), hi = *std::max_element(g.begin(), g.end());
  for (double& v : g) v = hi > lo ? (v - lo) / (hi - lo) : (hi > 0 ? 1.0 : 0.0);
  RealImage masked(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double m = oracle_bilinear(g, h, w, img.height, img.width, y, x);
      for (int c = 0; c < 3; ++c) masked.at(y, x, c) = img.rgb[(y * img.width + x) * 3 + c] / 255.0 * m;
    }
  auto prob = [&](const auto& image) {
    const VectorD logits = model.logits(model.encode(image));
    double z = 0;
    for (int k = 0; k < logits.size(); ++k) z += std::exp(logits(k) - logits.maxCoeff());
    return std::exp(logits(label) - logits.maxCoeff()) / z;
  };
  const double p0 = prob(img), p1 = prob(masked);
  OracleFaith f;
  f.ad = p1 < p0 ? (p0 - p1) / p0 : 0.0;
  f.ai = p1 > p0 ? 1.0 : 0.0;
  f.ag = p1 > p0 ? (p1 - p0) / std::max(1 - p0, 1e-8) : 0.0;
  return f;
}

// Small random model over 16x16 images (2x2 grid with patch 8).
struct TinyWorld {
  ConceptModel model;
  std::vector<Sample> samples;
};

inline TinyWorld tiny_world(std::uint64_t seed, int C = 4, int K = 3, int n = 3, HeadKind kind = HeadKind::SlCbm) {
  Rng rng(seed);
  BackboneConfig bb{8, 6, seed};
  auto p = random_params(C, bb.feature_dim, K, rng);
  auto E = random_concepts(C, bb.feature_dim, rng);
  std::vector<Sample> samples;
  std::uniform_int_distribution<int> byte(0, 255);
  for (int k = 0; k < n; ++k) {
    Sample s;
    s.id = "t" + std::to_string(k);
    s.image = Image(16, 16);
    for (auto& v : s.image.rgb) v = static_cast<std::uint8_t>(byte(rng));
    s.label = std::uniform_int_distribution<int>(0, K - 1)(rng);
    s.concepts = random_concept_set(C, rng);
    s.concept_masks.assign(C, BinaryMask(16, 16));
    s.class_mask = BinaryMask(16, 16);
    for (int c : s.concepts)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) s.concept_masks[c].set(y, x, ((x / 8) + (y / 8) + c) % 2 == 0);
    samples.push_back(std::move(s));
  }
  return {ConceptModel(kind, bb, std::move(E), std::move(p)), std::move(samples)};
}

inline std::vector<SuiteResult> metric_oracle_suite(int instances, std::uint64_t seed = 21) {
  SuiteResult acc{"concept_accuracy"}, ov{"overlap_metrics"}, bin{"binarize"}, faith{"AD/AI/AG"};
  for (int i = 0; i < instances; ++i) {
    Rng rng(derive_seed(seed, i));
    // Scores on a coarse integer lattice so ties are frequent.
    const int C = 3 + i % 6;
    VectorD f(C);
    for (int c = 0; c < C; ++c) f(c) = std::uniform_int_distribution<int>(-3, 3)(rng);
    const auto gt = random_concept_set(C, rng);
    const double expected = static_cast<double>(oracle_topk_hits(f, gt)) / static_cast<double>(gt.size());
    const auto got = concept_accuracy(f, gt);
    ++acc.instances;
    if (!got || *got != expected) acc.fail("instance " + std::to_string(i));

    const int N = 4 + i % 13;
    std::vector<double> s(N);
    for (auto& v : s) v = i % 3 == 0 ? std::uniform_int_distribution<int>(0, 4)(rng) : std::normal_distribution<>()(rng);
    const auto b_oracle = oracle_binarize(s);
    const auto b = binarize(Eigen::Map<const VectorD>(s.data(), N));
    ++bin.instances;
    if (b != b_oracle) bin.fail("instance " + std::to_string(i));

    std::vector<std::uint8_t> M(N);
    for (auto& v : M) v = std::bernoulli_distribution(0.4)(rng);
    const auto cnt = oracle_counts(b_oracle, M);
    const auto o = overlap_metrics(b_oracle, M);
    const double iou = cnt.uni ? static_cast<double>(cnt.inter) / cnt.uni : 0.0;
    const double dice = cnt.b + cnt.m ? 2.0 * cnt.inter / (cnt.b + cnt.m) : 0.0;
    const double ciou = cnt.b ? static_cast<double>(cnt.inter) / cnt.b : 0.0;
    const double err = std::max({std::abs(o.iou - iou), std::abs(o.dice - dice), std::abs(o.ciou - ciou)});
    ++ov.instances;
    ov.worst = std::max(ov.worst, err);
    if (err > 1e-9) ov.fail("instance " + std::to_string(i));
  }

  // Faithfulness: fewer, heavier instances cover 100 maps at each level.
  const int worlds = std::max(1, instances / 4);
  for (int wi = 0; wi < worlds; ++wi) {
    auto world = tiny_world(derive_seed(seed, 1000 + wi), 4, 3, 4, wi % 4 == 3 ? HeadKind::Baseline : HeadKind::SlCbm);
    const auto records = run_model(world.model, world.samples);
    for (const Level level : {Level::Concept, Level::Class}) {
      OracleFaith sum;
      for (std::size_t k = 0; k < world.samples.size(); ++k) {
        const auto& s = world.samples[k];
        const auto& t = records[k].trace;
        std::vector<VectorD> maps;
        if (level == Level::Class) maps.push_back(world.model.class_map(t, records[k].features, s.label));
        else
          for (int c : s.concepts) maps.push_back(t.saliency.row(c).transpose());
        OracleFaith one;
        for (const auto& m : maps) {
          const auto f = oracle_faith_map(world.model, s.image, s.label, m, t.height, t.width);
          one.ad += f.ad;
          one.ai += f.ai;
          one.ag += f.ag;
        }
        sum.ad += one.ad / maps.size();
        sum.ai += one.ai / maps.size();
        sum.ag += one.ag / maps.size();
      }
      const double n = static_cast<double>(world.samples.size());
      const auto got = faithfulness_unannotated(world.model, world.samples, records, level);
      const double err =
          std::max({std::abs(got.ad - sum.ad / n), std::abs(got.ai - sum.ai / n), std::abs(got.ag - sum.ag / n)});
      ++faith.instances;
      faith.worst = std::max(faith.worst, err);
      if (err > 1e-9) faith.fail("world " + std::to_string(wi));
    }
  }
  return {acc, ov, bin, faith};
}

// ---------------------------------------------------------------------------
// Structural identities

inline SuiteResult identity_dice_iou(int instances, std::uint64_t seed = 31) {
  SuiteResult r{"dice = 2 iou / (1 + iou)"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int N = 1 + i % 40;
    std::vector<std::uint8_t> B(N), M(N);
    for (int k = 0; k < N; ++k) {
      B[k] = std::bernoulli_distribution(0.5)(rng);
      M[k] = std::bernoulli_distribution(0.5)(rng);
    }
    const auto o = overlap_metrics(B, M);
    const double err = std::abs(o.dice - 2 * o.iou / (1 + o.iou));
    r.worst = std::max(r.worst, err);
    if (err > 1e-12) r.fail("instance " + std::to_string(i));
  }
  return r;
}

// Small-integer maps, weights and coefficients keep every product exact.
inline SuiteResult identity_class_saliency_linearity(int instances, std::uint64_t seed = 32) {
  SuiteResult r{"class_saliency linearity"};
  auto ints = [](Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    MatrixD m(rows, cols);
    std::uniform_int_distribution<int> d(-8, 8);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = d(rng);
    return m;
  };
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int C = 2 + i % 5, K = 2 + i % 3, N = 4 + i % 6;
    LinearHead<double> head{ints(K, C, rng), VectorD::Zero(K)};
    const MatrixD S = ints(C, N, rng), S2 = ints(C, N, rng);
    const double a = std::uniform_int_distribution<int>(-4, 4)(rng) / 4.0;
    const double b = std::uniform_int_distribution<int>(-4, 4)(rng) / 2.0;
    const int l = i % K;
    const VectorD lhs = class_saliency(head, MatrixD(a * S + b * S2), l);
    const VectorD rhs = a * class_saliency(head, S, l) + b * class_saliency(head, S2, l);
    if (lhs != rhs) r.fail("instance " + std::to_string(i));
  }
  return r;
}

inline SuiteResult identity_residual(int instances, std::uint64_t seed = 33) {
  SuiteResult r{"out_scale = 0 => f = z"};
  for (int i = 0; i < instances; ++i, ++r.instances) {
    Rng rng(derive_seed(seed, i));
    const int C = 2 + i % 6, D = 4 + i % 5, K = 2 + i % 4;
    auto p = random_params(C, D, K, rng);
    p.out_scale = 0;
    const auto E = random_concepts(C, D, rng);
    const auto feats = random_features(2 + i % 2, 2 + i % 3, D, rng);
    const auto t = forward(p, feats, E);
    if (t.f != t.z) r.fail("instance " + std::to_string(i));
  }
  return r;
}

inline SuiteResult identity_all_ones_mask(int instances, std::uint64_t seed = 34) {
  SuiteResult r{"all-ones saliency => AD = AG = AI = 0"};
  for (int i = 0; i < instances; ++i) {
    auto world = tiny_world(derive_seed(seed, i), 3 + i % 3, 2 + i % 3, 2,
                            i % 2 ? HeadKind::Baseline : HeadKind::SlCbm);
    const auto records = run_model(world.model, world.samples);
    for (std::size_t k = 0; k < world.samples.size(); ++k, ++r.instances) {
      const auto& s = world.samples[k];
      const auto& t = records[k].trace;
      const double p0 = softmax(t.logits)(s.label);
      const VectorD ones = VectorD::Ones(t.height * t.width);
      const double p1 = world.model.class_probabilities(mask_image(s.image, ones, t.height, t.width))(s.label);
      const auto c = prob_change(p0, p1);
      if (c.drop != 0.0 || c.gain != 0.0 || c.increase != 0.0) r.fail("world " + std::to_string(i));
    }
  }
  return r;
}

// Class accuracy counted the way a report counts it.
inline double class_accuracy_of(std::span<const EvalRecord> records, std::span<const Sample> samples) {
  std::size_t correct = 0;
  for (std::size_t n = 0; n < samples.size(); ++n) correct += records[n].trace.predicted() == samples[n].label;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline const std::vector<InterventionPolicy>& all_policies() {
  static const std::vector<InterventionPolicy> p{{PolicyKind::Rand, 7},
                                                 {PolicyKind::Ucp},
                                                 {PolicyKind::Lcp},
                                                 {PolicyKind::Cctp},
                                                 {PolicyKind::Ag},
                                                 {PolicyKind::Ag, 0, true}};
  return p;
}

// At count 0 every curve equals 1 - class accuracy; at count C all coincide.
inline void check_intervention_endpoints(SuiteResult& zero, SuiteResult& full, const ConceptModel& model,
                                         std::span<const Sample> samples, std::span<const EvalRecord> records,
                                         const ReplacementCalibration& cal, const std::string& where) {
  const int C = model.concepts().size();
  const std::vector<int> counts{0, C};
  const double expected0 = 1.0 - class_accuracy_of(records, samples);
  std::optional<double> at_c;
  for (const auto& policy : all_policies()) {
    const auto curve = intervention_curve(model, samples, records, cal, policy, counts, 3);
    ++zero.instances;
    if (curve.mean_error[0] != expected0) zero.fail(where + " policy " + to_string(policy.kind));
    ++full.instances;
    if (!at_c) at_c = curve.mean_error[1];
    if (curve.mean_error[1] != *at_c || curve.std_error[1] != 0.0) full.fail(where + " policy " + to_string(policy.kind));
  }
}

inline std::vector<SuiteResult> structural_suite(int instances, std::uint64_t seed = 35) {
  std::vector<SuiteResult> out{identity_dice_iou(instances), identity_class_saliency_linearity(instances),
                               identity_residual(instances), identity_all_ones_mask(std::max(1, instances / 10))};
  SuiteResult zero{"count 0 => 1 - class accuracy"}, full{"count C => policies coincide"};
  for (int i = 0; i < std::max(1, instances / 20); ++i) {
    auto world = tiny_world(derive_seed(seed, i), 4, 3, 6, i % 3 == 2 ? HeadKind::Baseline : HeadKind::SlCbm);
    const auto records = run_model(world.model, world.samples);
    const auto cal = calibrate(world.model, world.samples);
    check_intervention_endpoints(zero, full, world.model, world.samples, records, cal, "world " + std::to_string(i));
  }
  out.push_back(zero);
  out.push_back(full);
  return out;
}

}  // namespace slcbm::testing
