#pragma once

// Evaluation metrics: top-k concept accuracy, NEC-m / ANEC, annotated
// locality metrics (IoU, Dice, C-IoU) on binarized saliency, and the
// annotation-free Average Drop / Increase / Gain under saliency masking.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/losses.hpp"
#include "slcbm/model.hpp"

namespace slcbm {

// Indices of the k largest entries, ordered by score descending then index.
inline std::vector<int> top_k(const VectorD& f, int k) {
  std::vector<int> idx(static_cast<std::size_t>(f.size()));
  std::iota(idx.begin(), idx.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(f.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return f(a) != f(b) ? f(a) > f(b) : a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

// |P n C_gt| / k with P the top-k concepts, k = |C_gt|. Undefined for empty C_gt.
inline std::optional<double> concept_accuracy(const VectorD& f, std::span<const int> gt) {
  if (gt.empty()) return std::nullopt;
  const auto pred = top_k(f, static_cast<int>(gt.size()));
  int hit = 0;
  for (int p : pred) hit += std::find(gt.begin(), gt.end(), p) != gt.end();
  return static_cast<double>(hit) / static_cast<double>(gt.size());
}

// Keeps the m concepts with largest |W[l_hat, i] f_i| for the originally
// predicted class and zeroes the rest.
inline VectorD nec_prune(const LinearHead<double>& head, const VectorD& f, int m) {
  const auto predicted = static_cast<int>(argmax(classify(head, f)));
  const VectorD contrib = head.w.row(predicted).transpose().cwiseProduct(f).cwiseAbs();
  VectorD kept = VectorD::Zero(f.size());
  for (int i : top_k(contrib, m)) kept(i) = f(i);
  return kept;
}

inline int clamp_nec_m(int m, int C) {
  if (m < 1) throw ValidationError("NEC m must be at least 1");
  if (m > C) {
    log().warn("NEC m={} exceeds concept count {}; clamping", m, C);
    return C;
  }
  return m;
}

inline double nec_accuracy(const LinearHead<double>& head, std::span<const VectorD> fs, std::span<const int> labels,
                           int m) {
  if (fs.size() != labels.size()) throw Error("nec_accuracy: size mismatch");
  if (fs.empty()) return 0.0;
  m = clamp_nec_m(m, head.num_concepts());
  int correct = 0;
  for (std::size_t n = 0; n < fs.size(); ++n)
    correct += argmax(classify(head, nec_prune(head, fs[n], m))) == labels[n];
  return static_cast<double>(correct) / static_cast<double>(fs.size());
}

inline double anec(const LinearHead<double>& head, std::span<const VectorD> fs, std::span<const int> labels,
                   std::span<const int> ms) {
  if (ms.empty()) throw ValidationError("ANEC needs at least one m");
  double acc = 0;
  for (int m : ms) acc += nec_accuracy(head, fs, labels, m);
  return acc / static_cast<double>(ms.size());
}

// Max-min normalization to [0, 1]; a constant map becomes all zeros.
inline VectorD normalize_minmax(const VectorD& s) {
  if (s.size() == 0) return s;
  const double lo = s.minCoeff(), hi = s.maxCoeff();
  if (!(hi > lo)) return VectorD::Zero(s.size());
  return (s.array() - lo) / (hi - lo);
}

inline std::vector<std::uint8_t> binarize(const VectorD& s) {
  const VectorD n = normalize_minmax(s);
  std::vector<std::uint8_t> b(static_cast<std::size_t>(n.size()));
  for (Eigen::Index i = 0; i < n.size(); ++i) b[i] = n(i) > 0.5 ? 1 : 0;
  return b;
}

struct Overlap {
  double iou = 0, dice = 0, ciou = 0;
};

inline Overlap overlap_metrics(std::span<const std::uint8_t> B, std::span<const std::uint8_t> M) {
  if (B.size() != M.size()) throw Error("overlap_metrics: shape mismatch");
  std::size_t inter = 0, b = 0, m = 0;
  for (std::size_t i = 0; i < B.size(); ++i) {
    inter += B[i] && M[i];
    b += B[i] != 0;
    m += M[i] != 0;
  }
  const std::size_t uni = b + m - inter;
  Overlap o;
  if (uni > 0) o.iou = static_cast<double>(inter) / static_cast<double>(uni);
  if (b + m > 0) o.dice = 2.0 * static_cast<double>(inter) / static_cast<double>(b + m);
  if (b > 0) o.ciou = static_cast<double>(inter) / static_cast<double>(b);
  return o;
}

// mean_i metric_i * 1[correct_i]
inline double accuracy_weighted(std::span<const double> metric, const std::vector<bool>& correct) {
  if (metric.size() != correct.size()) throw Error("accuracy_weighted: size mismatch");
  if (metric.empty()) {
    log().warn("accuracy_weighted over an empty set; returning 0");
    return 0.0;
  }
  double acc = 0;
  for (std::size_t i = 0; i < metric.size(); ++i) acc += correct[i] ? metric[i] : 0.0;
  return acc / static_cast<double>(metric.size());
}

// Bilinear resize of an (h x w) grid to (H x W) with half-pixel centers and
// edge clamping.
inline MatrixD upsample_bilinear(const VectorD& grid, int h, int w, int H, int W) {
  if (grid.size() != static_cast<Eigen::Index>(h) * w) throw Error("upsample: grid size mismatch");
  MatrixD out(H, W);
  const double sy = static_cast<double>(h) / H, sx = static_cast<double>(w) / W;
  for (int y = 0; y < H; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (int x = 0; x < W; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      // a + t (b - a) is exact when a == b, so constant maps stay constant.
      const double top = grid(y0 * w + x0) + tx * (grid(y0 * w + x1) - grid(y0 * w + x0));
      const double bot = grid(y1 * w + x0) + tx * (grid(y1 * w + x1) - grid(y1 * w + x0));
      out(y, x) = top + ty * (bot - top);
    }
  }
  return out;
}

// Max-min normalization for masking. A constant map keeps everything when
// positive and nothing otherwise, so an all-ones map is the identity mask.
inline VectorD normalize_for_masking(const VectorD& s) {
  if (s.size() > 0 && !(s.maxCoeff() > s.minCoeff()))
    return VectorD::Constant(s.size(), s.maxCoeff() > 0 ? 1.0 : 0.0);
  return normalize_minmax(s);
}

// x (.) S: normalized, upsampled saliency applied to every channel.
template <typename Img>
RealImage mask_image(const Img& image, const VectorD& saliency, int grid_h, int grid_w) {
  const MatrixD m = upsample_bilinear(normalize_for_masking(saliency), grid_h, grid_w, image.height, image.width);
  RealImage out(image.width, image.height);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x, c) * m(y, x);
  return out;
}

// Per-map contributions of the annotation-free metrics given the class
// probability before (p0) and after (p1) masking.
struct ProbChange {
  double drop = 0;      // max(0, p0 - p1) / p0
  double increase = 0;  // 1[p1 > p0]
  double gain = 0;      // max(0, p1 - p0) / (1 - p0)
};

inline ProbChange prob_change(double p0, double p1) {
  ProbChange c;
  c.drop = std::max(0.0, p0 - p1) / std::max(p0, 1e-12);
  c.increase = p1 > p0 ? 1.0 : 0.0;
  c.gain = std::max(0.0, p1 - p0) / std::max(1.0 - p0, 1e-8);
  return c;
}

enum class Level { Concept, Class };

inline Level level_from_string(const std::string& s) {
  if (s == "concept") return Level::Concept;
  if (s == "class") return Level::Class;
  throw ValidationError("unknown level '" + s + "' (expected concept or class)");
}

struct Faithfulness {
  double ad = 0, ai = 0, ag = 0;
};

// One sample's encoded features and trace, shared by all metrics.
struct EvalRecord {
  SpatialFeatures<double> features;
  ForwardTrace<double> trace;
};

inline std::vector<EvalRecord> run_model(const ConceptModel& model, std::span<const Sample> samples) {
  std::vector<EvalRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    auto feats = model.encode(s.image);
    auto trace = model.trace(feats);
    out.push_back({std::move(feats), std::move(trace)});
  }
  return out;
}

// AD / AI / AG for one sample. Concept level averages over the maps of the
// ground-truth concepts; class level uses the map of the ground-truth class.
inline std::optional<Faithfulness> sample_faithfulness(const ConceptModel& model, const Sample& s,
                                                       const EvalRecord& rec, Level level) {
  const double p0 = softmax(rec.trace.logits)(s.label);
  std::vector<VectorD> maps;
  if (level == Level::Class) {
    maps.push_back(model.class_map(rec.trace, rec.features, s.label));
  } else {
    for (int c : s.concepts) maps.push_back(rec.trace.saliency.row(c).transpose());
  }
  if (maps.empty()) return std::nullopt;
  Faithfulness f;
  for (const auto& m : maps) {
    const double p1 = model.class_probabilities(mask_image(s.image, m, rec.trace.height, rec.trace.width))(s.label);
    const auto c = prob_change(p0, p1);
    f.ad += c.drop;
    f.ai += c.increase;
    f.ag += c.gain;
  }
  const double n = static_cast<double>(maps.size());
  return Faithfulness{f.ad / n, f.ai / n, f.ag / n};
}

inline Faithfulness faithfulness_unannotated(const ConceptModel& model, std::span<const Sample> samples,
                                             std::span<const EvalRecord> records, Level level) {
  Faithfulness total;
  int n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto f = sample_faithfulness(model, samples[i], records[i], level);
    if (!f) continue;
    total.ad += f->ad;
    total.ai += f->ai;
    total.ag += f->ag;
    ++n;
  }
  if (n == 0) return total;
  return {total.ad / n, total.ai / n, total.ag / n};
}

inline Faithfulness faithfulness_unannotated(const ConceptModel& model, std::span<const Sample> samples, Level level) {
  const auto records = run_model(model, samples);
  return faithfulness_unannotated(model, samples, records, level);
}

// ---------------------------------------------------------------------------
// Report

struct LevelPair {
  double concept_level = 0, class_level = 0;
};

struct MetricsReport {
  std::size_t samples = 0;
  std::size_t concept_excluded = 0;  // samples with empty C_gt
  double concept_accuracy = 0;
  double class_accuracy = 0;
  std::map<int, double> nec;
  double anec = 0;
  LevelPair iou, dice, ciou, ad, ai, ag;
  double saliency_entropy_per_cell = 0;  // mean over samples, nats

  nlohmann::json to_json() const;
};

inline double percent2(double v) { return std::round(v * 10000.0) / 100.0; }

inline nlohmann::json MetricsReport::to_json() const {
  auto pair = [](const LevelPair& p) {
    return nlohmann::json{{"concept", percent2(p.concept_level)}, {"class", percent2(p.class_level)}};
  };
  nlohmann::json nec_json = nlohmann::json::object();
  for (const auto& [m, v] : nec) nec_json[std::to_string(m)] = percent2(v);
  return {{"units", "percent"},
          {"samples", samples},
          {"concept_excluded", concept_excluded},
          {"concept_accuracy", percent2(concept_accuracy)},
          {"class_accuracy", percent2(class_accuracy)},
          {"nec", nec_json},
          {"anec", percent2(anec)},
          {"iou", pair(iou)},
          {"dice", pair(dice)},
          {"ciou", pair(ciou)},
          {"ad", pair(ad)},
          {"ai", pair(ai)},
          {"ag", pair(ag)},
          {"diagnostics", {{"saliency_entropy_per_cell_nats", std::round(saliency_entropy_per_cell * 1e6) / 1e6}}}};
}

struct ReportOptions {
  std::vector<int> nec_ms{5, 10, 15};
};

inline MetricsReport compute_report(const ConceptModel& model, std::span<const Sample> samples,
                                    const ReportOptions& opts = {}) {
  const auto records = run_model(model, samples);
  MetricsReport r;
  r.samples = samples.size();
  if (samples.empty()) {
    log().warn("evaluating an empty sample set");
    return r;
  }
  const int patch = model.backbone().config().patch_size;
  const int C = model.concepts().size();

  std::vector<VectorD> fs;
  std::vector<int> labels;
  std::vector<bool> correct;
  double concept_acc = 0;
  std::size_t concept_n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& t = records[i].trace;
    fs.push_back(t.f);
    labels.push_back(samples[i].label);
    correct.push_back(t.predicted() == samples[i].label);
    if (const auto a = concept_accuracy(t.f, samples[i].concepts)) {
      concept_acc += *a;
      ++concept_n;
    }
    if (model.kind() == HeadKind::SlCbm)
      r.saliency_entropy_per_cell += loss_entropy(t.saliency, Reduction::Mean).value;
  }
  r.concept_excluded = samples.size() - concept_n;
  r.concept_accuracy = concept_n ? concept_acc / static_cast<double>(concept_n) : 0.0;
  r.class_accuracy = static_cast<double>(std::count(correct.begin(), correct.end(), true)) / samples.size();
  r.saliency_entropy_per_cell /= static_cast<double>(samples.size());

  std::vector<int> ms;
  for (int m : opts.nec_ms) {
    const int mm = clamp_nec_m(m, C);
    r.nec[m] = nec_accuracy(model.classifier(), fs, labels, mm);
    ms.push_back(mm);
  }
  r.anec = anec(model.classifier(), fs, labels, ms);

  // Annotated metrics on the feature grid, weighted by correctness.
  for (const Level level : {Level::Concept, Level::Class}) {
    std::vector<double> iou, dice, ciou;
    std::vector<bool> ok;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const auto& rec = records[i];
      Overlap sum;
      int maps = 0;
      auto add = [&](const VectorD& sal, const BinaryMask& mask) {
        const BinaryMask M = downsample_mask(mask, patch);
        if (M.empty()) return;  // annotation vanishes at feature resolution
        const auto o = overlap_metrics(binarize(sal), M.bits);
        sum.iou += o.iou;
        sum.dice += o.dice;
        sum.ciou += o.ciou;
        ++maps;
      };
      if (level == Level::Concept) {
        for (int c : s.concepts) add(rec.trace.saliency.row(c).transpose(), s.concept_masks[c]);
      } else {
        add(model.class_map(rec.trace, rec.features, s.label), s.class_mask);
      }
      if (maps == 0) continue;
      iou.push_back(sum.iou / maps);
      dice.push_back(sum.dice / maps);
      ciou.push_back(sum.ciou / maps);
      ok.push_back(correct[i]);
    }
    auto set = [&](LevelPair& p, double v) { (level == Level::Concept ? p.concept_level : p.class_level) = v; };
    set(r.iou, accuracy_weighted(iou, ok));
    set(r.dice, accuracy_weighted(dice, ok));
    set(r.ciou, accuracy_weighted(ciou, ok));

    const auto f = faithfulness_unannotated(model, samples, records, level);
    set(r.ad, f.ad);
    set(r.ai, f.ai);
    set(r.ag, f.ag);
  }
  return r;
}

}  // namespace slcbm
