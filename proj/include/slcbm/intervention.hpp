#pragma once

// Test-time concept intervention: rank concepts by a policy, overwrite the
// first n predicted scores with calibrated ground-truth values, re-classify
// with the frozen classifier, and report task error against the count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/metrics.hpp"
#include "slcbm/model.hpp"

namespace slcbm {

enum class PolicyKind { Rand, Ucp, Lcp, Cctp, Ag };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Rand: return "rand";
    case PolicyKind::Ucp: return "ucp";
    case PolicyKind::Lcp: return "lcp";
    case PolicyKind::Cctp: return "cctp";
    case PolicyKind::Ag: return "ag";
  }
  return {};
}

inline PolicyKind policy_from_string(const std::string& s) {
  for (auto k : {PolicyKind::Rand, PolicyKind::Ucp, PolicyKind::Lcp, PolicyKind::Cctp, PolicyKind::Ag})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown policy '" + s + "' (expected rand, ucp, lcp, cctp or ag)");
}

struct InterventionPolicy {
  PolicyKind kind = PolicyKind::Rand;
  std::uint64_t seed = 0;    // RAND only
  bool ag_ascending = false;  // AG: least faithful first

  bool deterministic() const { return kind != PolicyKind::Rand; }
};

// Per-concept 5th / 95th percentile of training-set concept scores.
struct ReplacementCalibration {
  VectorD lo, hi;
};

// Linear-interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("percentile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (v[j] - v[i]) * (pos - static_cast<double>(i));
}

inline ReplacementCalibration calibrate(std::span<const VectorD> train_scores) {
  if (train_scores.empty()) throw ValidationError("calibration needs at least one training sample");
  const Eigen::Index C = train_scores[0].size();
  ReplacementCalibration cal{VectorD(C), VectorD(C)};
  std::vector<double> col(train_scores.size());
  for (Eigen::Index i = 0; i < C; ++i) {
    for (std::size_t n = 0; n < train_scores.size(); ++n) col[n] = train_scores[n](i);
    cal.lo(i) = percentile(col, 5.0);
    cal.hi(i) = percentile(col, 95.0);
  }
  return cal;
}

inline ReplacementCalibration calibrate(const ConceptModel& model, std::span<const Sample> train) {
  std::vector<VectorD> fs;
  fs.reserve(train.size());
  for (const auto& s : train) {
    const auto feats = model.encode(s.image);
    fs.push_back(model.kind() == HeadKind::SlCbm ? forward(model.params(), feats, model.concepts()).f
                                                 : similarity_vector(model.concepts(), feats.summary));
  }
  return calibrate(fs);
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Bernoulli entropy of logistic(x); depends on |x| only, so x and -x tie exactly.
inline double logistic_entropy(double x) {
  const double q = logistic(-std::abs(x));
  if (q <= 0.0) return 0.0;
  return -q * std::log(q) - (1.0 - q) * std::log1p(-q);
}

// Indices sorted by key descending, ties by lower index.
inline std::vector<int> order_descending(const VectorD& key) {
  std::vector<int> idx(static_cast<std::size_t>(key.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return key(a) > key(b); });
  return idx;
}

// `stream` selects an independent random permutation for RAND.
inline std::vector<int> rank_concepts(const InterventionPolicy& policy, const ConceptModel& model, const Sample& s,
                                      const EvalRecord& rec, std::uint64_t stream = 0) {
  const VectorD& f = rec.trace.f;
  const Eigen::Index C = f.size();
  VectorD key(C);
  switch (policy.kind) {
    case PolicyKind::Rand: {
      std::vector<int> perm(static_cast<std::size_t>(C));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(policy.seed, stream));
      std::shuffle(perm.begin(), perm.end(), rng);
      return perm;
    }
    case PolicyKind::Ucp:
      for (Eigen::Index i = 0; i < C; ++i) key(i) = logistic_entropy(f(i));
      break;
    case PolicyKind::Lcp:
      for (Eigen::Index i = 0; i < C; ++i) key(i) = std::abs(logistic(f(i)) - (s.has_concept(static_cast<int>(i)) ? 1.0 : 0.0));
      break;
    case PolicyKind::Cctp: {
      const auto predicted = rec.trace.predicted();
      key = model.classifier().w.row(predicted).transpose().cwiseProduct(f).cwiseAbs();
      break;
    }
    case PolicyKind::Ag: {
      const double p0 = softmax(rec.trace.logits)(s.label);
      for (Eigen::Index i = 0; i < C; ++i) {
        const RealImage masked = mask_image(s.image, rec.trace.saliency.row(i).transpose(), rec.trace.height,
                                            rec.trace.width);
        key(i) = prob_change(p0, model.class_probabilities(masked)(s.label)).gain;
      }
      if (policy.ag_ascending) key = -key;
      break;
    }
  }
  return order_descending(key);
}

inline VectorD intervene(const VectorD& f, const Sample& s, std::span<const int> order, int n,
                         const ReplacementCalibration& cal) {
  const int C = static_cast<int>(f.size());
  if (n < 0) throw ValidationError("intervention count must be non-negative");
  if (n > C) {
    log().warn("intervention count {} exceeds concept count {}; clamping", n, C);
    n = C;
  }
  VectorD out = f;
  for (int k = 0; k < n && k < static_cast<int>(order.size()); ++k) {
    const int i = order[k];
    out(i) = s.has_concept(i) ? cal.hi(i) : cal.lo(i);
  }
  return out;
}

struct InterventionCurve {
  std::vector<int> counts;
  std::vector<double> mean_error;
  std::vector<double> std_error;

  // Whitespace-separated table with header `x mean std`.
  std::string to_table() const {
    std::ostringstream out;
    out << "x mean std\n";
    out.setf(std::ios::fixed);
    out.precision(6);
    for (std::size_t i = 0; i < counts.size(); ++i)
      out << counts[i] << ' ' << mean_error[i] << ' ' << std_error[i] << '\n';
    return out.str();
  }
};

inline InterventionCurve intervention_curve(const ConceptModel& model, std::span<const Sample> samples,
                                            std::span<const EvalRecord> records, const ReplacementCalibration& cal,
                                            const InterventionPolicy& policy, std::span<const int> counts,
                                            int repeats = 1) {
  if (samples.size() != records.size()) throw Error("intervention_curve: size mismatch");
  if (!std::is_sorted(counts.begin(), counts.end()) ||
      std::adjacent_find(counts.begin(), counts.end()) != counts.end())
    throw ValidationError("intervention counts must be strictly increasing");
  if (repeats < 1) throw ValidationError("repeats must be at least 1");
  const int runs = policy.deterministic() ? 1 : repeats;
  const std::size_t N = samples.size();

  std::vector<std::vector<double>> errors(counts.size());
  for (int run = 0; run < runs; ++run) {
    std::vector<std::vector<int>> orders(N);
    for (std::size_t n = 0; n < N; ++n)
      orders[n] = rank_concepts(policy, model, samples[n], records[n], derive_seed(run, n));
    for (std::size_t ci = 0; ci < counts.size(); ++ci) {
      std::size_t correct = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const VectorD f = intervene(records[n].trace.f, samples[n], orders[n], counts[ci], cal);
        correct += argmax(classify(model.classifier(), f)) == samples[n].label;
      }
      errors[ci].push_back(N ? 1.0 - static_cast<double>(correct) / static_cast<double>(N) : 0.0);
    }
  }

  InterventionCurve curve;
  curve.counts.assign(counts.begin(), counts.end());
  for (const auto& e : errors) {
    // offset from the first run, so identical runs average to exactly that value
    double offset = 0;
    for (double v : e) offset += v - e.front();
    const double mean = e.front() + offset / static_cast<double>(e.size());
    double var = 0;
    for (double v : e) var += (v - mean) * (v - mean);
    curve.mean_error.push_back(mean);
    curve.std_error.push_back(e.size() > 1 ? std::sqrt(var / static_cast<double>(e.size())) : 0.0);
  }
  return curve;
}

}  // namespace slcbm
