#pragma once

// Deterministic mini-batch training of a concept head over frozen features,
// evaluation of a checkpoint on a dataset's test split, and the regularization
// ablation grid driver.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slcbm/checkpoint.hpp"
#include "slcbm/config.hpp"
#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/encoders.hpp"
#include "slcbm/losses.hpp"
#include "slcbm/metrics.hpp"
#include "slcbm/model.hpp"
#include "slcbm/optim.hpp"

namespace slcbm {

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  std::size_t batch = 0;
  LossBreakdown loss;
  LossWeights weights;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"epoch", epoch},
            {"batch_size", batch},
            {"total", loss.total},
            {"terms", {{"ce", loss.ce}, {"ca", loss.ca}, {"e", loss.e}, {"c", loss.c}}},
            {"weighted",
             {{"ce", weights.lambda_ce * loss.ce},
              {"ca", weights.lambda_ca * loss.ca},
              {"e", weights.lambda_e * loss.e},
              {"c", weights.lambda_c * loss.c}}}};
  }
};

using StepCallback = std::function<void(const StepRecord&)>;

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepRecord> log;

  // One JSON object per line.
  std::string log_jsonl() const {
    std::string out;
    for (const auto& r : log) out += r.to_json().dump() + "\n";
    return out;
  }
};

// Training subset for `fraction`: the ceil(fraction * N) samples with the
// smallest seeded hash, kept in dataset order.
inline std::vector<std::size_t> select_fraction(std::size_t n, double fraction, std::uint64_t seed) {
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = derive_seed(seed, a, 0xF4AC), hb = derive_seed(seed, b, 0xF4AC);
    return ha != hb ? ha < hb : a < b;
  });
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  return order;
}

namespace detail {

inline void check_finite(const LossBreakdown& l, std::int64_t step) {
  const std::pair<const char*, double> terms[] = {{"ce", l.ce}, {"ca", l.ca}, {"e", l.e}, {"c", l.c}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v))
      throw Error("training diverged at step " + std::to_string(step) + ": loss term '" + name + "' is non-finite");
  if (!std::isfinite(l.total)) throw Error("training diverged at step " + std::to_string(step) + ": total loss");
}

template <typename Scalar>
TrainResult train_impl(const TrainConfig& cfg, const Dataset& data, const StepCallback& on_step) {
  const int C = static_cast<int>(data.num_concepts());
  const int K = static_cast<int>(data.num_classes());
  const int D = cfg.backbone.feature_dim;

  const auto chosen = select_fraction(data.train.size(), cfg.data_fraction, cfg.seed);
  if (chosen.empty()) throw ValidationError("training split is empty");
  std::vector<Sample> train;
  train.reserve(chosen.size());
  for (auto i : chosen) train.push_back(data.train[i]);
  log().info("training {} head on {} of {} samples", to_string(cfg.head), train.size(), data.train.size());

  const Backbone backbone(cfg.backbone);
  const auto feats64 = encode_all(backbone, train);
  // Concept features are stored as float32; train against the stored values.
  const ConceptFeatures<float> E32 = build_concept_prototypes(cfg.backbone, data.vocab, train, feats64).cast<float>();
  const ConceptFeatures<Scalar> E = E32.cast<Scalar>();

  std::vector<SpatialFeatures<Scalar>> feats;
  feats.reserve(train.size());
  for (const auto& f : feats64) feats.push_back(f.template cast<Scalar>());

  Rng init_rng(derive_seed(cfg.seed, 0x1417));
  ModelParams<Scalar> params;
  if (cfg.head == HeadKind::SlCbm) {
    params = ModelParams<Scalar>::init(C, D, K, init_rng);
  } else {
    params = ModelParams<Scalar>::zeros(C, D, K);
    params.classifier.w = random_normal<Scalar>(K, C, 1.0 / std::sqrt(static_cast<double>(C)), init_rng);
  }
  Adam<Scalar> adam(cfg.optimizer);

  TrainResult result;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;
  LossBreakdown epoch_mean;
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    epoch_mean = {};
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t n = std::min(B, order.size() - start);
      std::vector<ForwardTrace<Scalar>> traces(n);
      std::vector<FuseCache<Scalar>> caches(n);
      std::vector<int> labels(n);
      std::vector<std::vector<int>> concepts(n);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t idx = order[start + b];
        if (cfg.head == HeadKind::SlCbm) {
          traces[b] = forward(params, feats[idx], E, &caches[b]);
        } else {
          traces[b].z = similarity_vector(E, feats[idx].summary);
          traces[b].f = traces[b].z;
          traces[b].logits = classify(params.classifier, traces[b].f);
        }
        labels[b] = train[idx].label;
        concepts[b] = train[idx].concepts;
      }
      const auto loss = total_loss<Scalar>(cfg.loss, traces, labels, concepts);
      check_finite(loss.breakdown, step);

      auto grad = ModelParams<Scalar>::zeros(C, D, K);
      for (std::size_t b = 0; b < n; ++b) {
        const auto& g = loss.grads[b];
        if (cfg.head == HeadKind::SlCbm) {
          grad += backward(params, feats[order[start + b]], traces[b], caches[b], g.f, g.saliency, g.logits).params;
        } else {
          grad.classifier.w += g.logits * traces[b].f.transpose();
          grad.classifier.b += g.logits;
        }
      }
      auto flat = flatten(params);
      const auto gflat = flatten(grad);
      adam.step(flat, gflat);
      unflatten<Scalar>(params, flat);
      if (!params.all_finite())
        throw Error("training diverged at step " + std::to_string(step) + ": parameters became non-finite");

      StepRecord rec{step, epoch, n, loss.breakdown, cfg.loss};
      if (on_step) on_step(rec);
      result.log.push_back(rec);
      epoch_mean.ce += loss.breakdown.ce;
      epoch_mean.ca += loss.breakdown.ca;
      epoch_mean.e += loss.breakdown.e;
      epoch_mean.c += loss.breakdown.c;
      epoch_mean.total += loss.breakdown.total;
      ++batches;
      ++step;
    }
    if (batches > 0) {
      epoch_mean = LossBreakdown::combine(cfg.loss, epoch_mean.ce / batches, epoch_mean.ca / batches,
                                          epoch_mean.e / batches, epoch_mean.c / batches);
      log().info("epoch {}: total {:.6f} (ce {:.4f}, ca {:.6f}, e {:.4f}, c {:.4f})", epoch, epoch_mean.total,
                 epoch_mean.ce, epoch_mean.ca, epoch_mean.e, epoch_mean.c);
    }
  }

  Checkpoint& ck = result.checkpoint;
  ck.config = cfg;
  ck.vocab = data.vocab;
  ck.class_names = data.class_names;
  ck.concepts = E32;
  ck.params = params.template cast<float>();
  ck.steps = step;
  ck.final_losses = epoch_mean;
  return result;
}

}  // namespace detail

inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const StepCallback& on_step = {}) {
  cfg.validate();
  validate_dataset(data);
  if (cfg.double_precision) return detail::train_impl<double>(cfg, data, on_step);
  return detail::train_impl<float>(cfg, data, on_step);
}

inline void check_vocabulary(const Checkpoint& ck, const Dataset& data) {
  const auto& a = ck.vocab.names;
  const auto& b = data.vocab.names;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    const std::string ca = i < a.size() ? a[i] : "<none>";
    const std::string cb = i < b.size() ? b[i] : "<none>";
    if (ca != cb)
      throw ValidationError("vocabulary mismatch at concept " + std::to_string(i) + ": checkpoint has '" + ca +
                            "', dataset has '" + cb + "'");
  }
  if (ck.class_names != data.class_names) throw ValidationError("class names differ between checkpoint and dataset");
}

inline MetricsReport evaluate(const Checkpoint& ck, const Dataset& data, const ReportOptions& opts = {}) {
  check_vocabulary(ck, data);
  return compute_report(ck.model(), data.test, opts);
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationCell {
  double lambda_e = 0, lambda_c = 0, fraction = 1;
  std::uint64_t seed = 0;
  std::optional<MetricsReport> report;
  LossBreakdown final_losses;
  std::string error;

  nlohmann::json to_json() const {
    nlohmann::json j{{"lambda_e", lambda_e}, {"lambda_c", lambda_c}, {"fraction", fraction}, {"seed", seed}};
    if (report) {
      j["report"] = report->to_json();
      j["final_losses"] = detail::losses_to_json(final_losses);
    } else {
      j["error"] = error;
    }
    return j;
  }
};

inline const std::vector<double> kDefaultLambdaEGrid{0, 0.1, 0.5, 1.0, 1.5, 2.0, 5.0, 10.0};
inline const std::vector<double> kDefaultLambdaCGrid{0, 1};

// Config for grid point (ie, ic, ifr); its seed is derived from the base seed
// and the grid coordinates.
inline TrainConfig ablation_cell_config(const TrainConfig& base, std::span<const double> lambda_e,
                                        std::span<const double> lambda_c, std::span<const double> fractions,
                                        std::size_t ie, std::size_t ic, std::size_t ifr) {
  TrainConfig c = base;
  c.loss.lambda_e = lambda_e[ie];
  c.loss.lambda_c = lambda_c[ic];
  c.data_fraction = fractions[ifr];
  c.seed = derive_seed(base.seed, ie, (ic << 20) | ifr);
  return c;
}

inline std::vector<AblationCell> ablate(const TrainConfig& base, const Dataset& data, std::span<const double> lambda_e,
                                        std::span<const double> lambda_c, std::span<const double> fractions,
                                        const ReportOptions& opts = {}) {
  if (lambda_e.empty() || lambda_c.empty() || fractions.empty()) throw ValidationError("ablation grids must be non-empty");
  std::vector<AblationCell> cells;
  for (std::size_t ie = 0; ie < lambda_e.size(); ++ie)
    for (std::size_t ic = 0; ic < lambda_c.size(); ++ic)
      for (std::size_t ifr = 0; ifr < fractions.size(); ++ifr) {
        const auto cfg = ablation_cell_config(base, lambda_e, lambda_c, fractions, ie, ic, ifr);
        AblationCell cell{cfg.loss.lambda_e, cfg.loss.lambda_c, cfg.data_fraction, cfg.seed, std::nullopt, {}, {}};
        try {
          const auto result = train(cfg, data);
          cell.report = evaluate(result.checkpoint, data, opts);
          cell.final_losses = result.checkpoint.final_losses;
        } catch (const std::exception& e) {
          cell.error = e.what();
          log().warn("ablation cell lambda_e={} lambda_c={} fraction={} failed: {}", cell.lambda_e, cell.lambda_c,
                     cell.fraction, cell.error);
        }
        cells.push_back(std::move(cell));
      }
  return cells;
}

}  // namespace slcbm
