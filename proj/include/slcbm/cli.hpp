#pragma once

// Command-line front end. Exit codes: 0 success, 1 invalid input or usage,
// 2 runtime failure.

#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "slcbm/checkpoint.hpp"
#include "slcbm/config.hpp"
#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/intervention.hpp"
#include "slcbm/metrics.hpp"
#include "slcbm/render.hpp"
#include "slcbm/trainer.hpp"

namespace slcbm::cli {

// `start:stop:step` -> start, start+step, ... while < stop, then stop itself.
// A bare integer `n` means the single count n.
inline std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> parts;
  std::stringstream ss(text);
  std::string tok;
  try {
    while (std::getline(ss, tok, ':')) {
      std::size_t used = 0;
      parts.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    }
  } catch (const std::exception&) {
    throw ValidationError("--counts: expected integers in start:stop:step form, got '" + text + "'");
  }
  if (parts.size() == 1) parts = {parts[0], parts[0], 1};
  if (parts.size() != 3) throw ValidationError("--counts: expected start:stop:step, got '" + text + "'");
  const int start = parts[0], stop = parts[1], step = parts[2];
  if (start < 0 || stop < start || step < 1) throw ValidationError("--counts: need 0 <= start <= stop and step >= 1");
  std::vector<int> out;
  for (int c = start; c < stop; c += step) out.push_back(c);
  out.push_back(stop);
  return out;
}

namespace detail {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") out << text;
  else write_file_atomic(path, text);
}

inline Dataset load_data(const std::string& flag_path, const std::string& config_path) {
  const std::string path = !flag_path.empty() ? flag_path : config_path;
  if (path.empty()) throw ValidationError("no dataset given (use --data or [train] data in --config)");
  return load_dataset(path);
}

struct GenerateOpts {
  std::uint64_t seed = 1;
  std::string out;
  int per_class = 300;
  int image_size = 64;
  int classes = 6;
  int placement_step = 8;
};

struct TrainOpts {
  std::string data, out, config, log;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> head;
  std::optional<double> lambda_e, lambda_c, fraction;
  std::optional<int> epochs;
};

struct EvaluateOpts {
  std::string ckpt, data, out, level = "both";
};

struct InterveneOpts {
  std::string ckpt, data, out, plot, policy = "rand", counts;
  int repeats = 5;
  std::uint64_t seed = 1;
  bool ag_ascending = false;
};

struct AblateOpts {
  std::string data, out, config;
  std::optional<std::uint64_t> seed;
  std::vector<double> lambda_e = kDefaultLambdaEGrid;
  std::vector<double> lambda_c = kDefaultLambdaCGrid;
  std::vector<double> fraction{1.0};
};

struct RenderOpts {
  std::string ckpt, data, out;
  int samples = 4;
};

inline TrainConfig base_config(const std::string& config_path) {
  return config_path.empty() ? TrainConfig{} : load_config(config_path);
}

inline int do_generate(const GenerateOpts& o) {
  SynthSpec spec;
  spec.seed = o.seed;
  spec.samples_per_class = o.per_class;
  spec.image_size = o.image_size;
  spec.num_classes = o.classes;
  spec.placement_step = o.placement_step;
  const auto d = generate_dataset(spec);
  save_dataset(d, o.out);
  log().info("wrote {} train and {} test samples to {}", d.train.size(), d.test.size(), o.out);
  return 0;
}

inline int do_train(const TrainOpts& o) {
  TrainConfig cfg = base_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.head) cfg.head = head_kind_from_string(*o.head);
  if (o.lambda_e) cfg.loss.lambda_e = *o.lambda_e;
  if (o.lambda_c) cfg.loss.lambda_c = *o.lambda_c;
  if (o.fraction) cfg.data_fraction = *o.fraction;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (!o.data.empty()) cfg.data_path = o.data;
  cfg.validate();
  const auto data = load_data(cfg.data_path, "");
  const auto result = train(cfg, data);
  save_checkpoint(result.checkpoint, o.out);
  write_file_atomic(o.log.empty() ? o.out + ".log.jsonl" : o.log, result.log_jsonl());
  return 0;
}

inline int do_evaluate(const EvaluateOpts& o, Streams s) {
  const auto ck = load_checkpoint(o.ckpt);
  const auto data = load_data(o.data, ck.config.data_path);
  auto j = evaluate(ck, data).to_json();
  if (o.level != "both") {
    const std::string drop = o.level == "concept" ? "class" : "concept";
    for (const char* key : {"iou", "dice", "ciou", "ad", "ai", "ag"}) j[key].erase(drop);
  }
  write_text(o.out, j.dump(2) + "\n", s.out);
  return 0;
}

inline int do_intervene(const InterveneOpts& o, Streams s) {
  const auto ck = load_checkpoint(o.ckpt);
  const auto data = load_data(o.data, ck.config.data_path);
  check_vocabulary(ck, data);
  const auto model = ck.model();
  const int C = static_cast<int>(data.num_concepts());
  const auto counts = parse_counts(o.counts.empty() ? "0:" + std::to_string(C) + ":1" : o.counts);
  InterventionPolicy policy{policy_from_string(o.policy), o.seed, o.ag_ascending};
  const auto cal = calibrate(model, data.train);
  const auto records = run_model(model, data.test);
  const auto curve = intervention_curve(model, data.test, records, cal, policy, counts, o.repeats);
  write_text(o.out, curve.to_table(), s.out);
  if (!o.plot.empty()) png::write(o.plot, slcbm::detail::to_raster(plot_curve(curve)));
  return 0;
}

inline int do_ablate(const AblateOpts& o, Streams s) {
  TrainConfig cfg = base_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.data.empty()) cfg.data_path = o.data;
  cfg.validate();
  const auto data = load_data(cfg.data_path, "");
  const auto cells = ablate(cfg, data, o.lambda_e, o.lambda_c, o.fraction);
  nlohmann::json j{{"base_seed", cfg.seed}, {"cells", nlohmann::json::array()}};
  for (const auto& c : cells) j["cells"].push_back(c.to_json());
  write_text(o.out, j.dump(2) + "\n", s.out);
  return 0;
}

inline int do_render(const RenderOpts& o, Streams s) {
  const auto ck = load_checkpoint(o.ckpt);
  const auto data = load_data(o.data, ck.config.data_path);
  check_vocabulary(ck, data);
  const auto model = ck.model();
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(o.samples, 0)), data.test.size());
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& p : render_sample_saliency(model, data.test[i], data.vocab.names, data.class_names, o.out))
      s.out << p.string() << "\n";
  return 0;
}

}  // namespace detail

// `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Concept bottleneck models with semantic-locality saliency", "slcbm"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", "slcbm 1.0.0");

  GenerateOpts g;
  auto* gen = app.add_subcommand("generate-data", "Render the synthetic shapes dataset to a directory");
  gen->add_option("--seed", g.seed, "Dataset seed");
  gen->add_option("--out", g.out, "Output dataset directory")->required();
  gen->add_option("--per-class", g.per_class, "Samples per class")->check(CLI::PositiveNumber);
  gen->add_option("--image-size", g.image_size, "Canvas side in pixels")->check(CLI::Range(16, 4096));
  gen->add_option("--classes", g.classes, "Number of classes (at most 6)")->check(CLI::Range(2, 6));
  gen->add_option("--placement-step", g.placement_step, "Object centers on multiples of this many pixels (0: any)")
      ->check(CLI::NonNegativeNumber);

  TrainOpts t;
  auto* tr = app.add_subcommand("train", "Train a concept head and write a checkpoint");
  tr->add_option("--data", t.data, "Dataset directory (overrides [train] data)");
  tr->add_option("--out", t.out, "Checkpoint path")->required();
  tr->add_option("--config", t.config, "INI config file")->check(CLI::ExistingFile);
  tr->add_option("--log", t.log, "Training log path (default: <out>.log.jsonl)");
  tr->add_option("--seed", t.seed, "Training seed (default: config, else 1)");
  tr->add_option("--head", t.head, "Head type (default: config, else slcbm)")
      ->check(CLI::IsMember({"slcbm", "baseline"}));
  tr->add_option("--lambda-e", t.lambda_e, "Entropy weight (default: config, else 5)");
  tr->add_option("--lambda-c", t.lambda_c, "Contrastive weight (default: config, else 0)");
  tr->add_option("--fraction", t.fraction, "Training data fraction in (0, 1] (default: config, else 1)");
  tr->add_option("--epochs", t.epochs, "Epochs (default: config, else 300)");

  EvaluateOpts e;
  auto* ev = app.add_subcommand("evaluate", "Compute the metrics report on the test split");
  ev->add_option("--ckpt", e.ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", e.data, "Dataset directory (default: the checkpoint's)");
  ev->add_option("--out", e.out, "Report JSON path, '-' for stdout");
  ev->add_option("--level", e.level, "Saliency level to report")->check(CLI::IsMember({"both", "concept", "class"}));

  InterveneOpts iv;
  auto* in = app.add_subcommand("intervene", "Task error against the number of intervened concepts");
  in->add_option("--ckpt", iv.ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  in->add_option("--data", iv.data, "Dataset directory (default: the checkpoint's)");
  in->add_option("--out", iv.out, "Table path, '-' for stdout");
  in->add_option("--plot", iv.plot, "Optional PNG line plot of the curve");
  in->add_option("--policy", iv.policy, "Concept ranking policy")
      ->check(CLI::IsMember({"rand", "ucp", "lcp", "cctp", "ag"}));
  in->add_option("--counts", iv.counts,
                 "Counts as start:stop:step; yields start, start+step, ... below stop, then stop "
                 "(default: 0:C:1)");
  in->add_option("--repeats", iv.repeats, "Repeats for the random policy")->check(CLI::PositiveNumber);
  in->add_option("--seed", iv.seed, "Seed for the random policy");
  in->add_flag("--ag-ascending", iv.ag_ascending, "AG policy: least faithful concepts first");

  AblateOpts ab;
  auto* abl = app.add_subcommand("ablate", "Train and evaluate over a grid of loss weights and data fractions");
  abl->add_option("--data", ab.data, "Dataset directory (overrides [train] data)");
  abl->add_option("--config", ab.config, "INI config file for the base run")->check(CLI::ExistingFile);
  abl->add_option("--out", ab.out, "Results JSON path, '-' for stdout");
  abl->add_option("--seed", ab.seed, "Base seed (default: config, else 1)");
  abl->add_option("--lambda-e", ab.lambda_e, "Entropy weight grid")->delimiter(',');
  abl->add_option("--lambda-c", ab.lambda_c, "Contrastive weight grid")->delimiter(',');
  abl->add_option("--fraction", ab.fraction, "Data fraction grid")->delimiter(',');

  RenderOpts rd;
  auto* rs = app.add_subcommand("render-saliency", "Write top-5 concept and class saliency overlays");
  rs->add_option("--ckpt", rd.ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
  rs->add_option("--data", rd.data, "Dataset directory (default: the checkpoint's)");
  rs->add_option("--out", rd.out, "Output directory")->required();
  rs->add_option("--samples", rd.samples, "Number of test samples to render")->check(CLI::NonNegativeNumber);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "usage: run '" << (sub == &app ? std::string("slcbm") : "slcbm " + sub->get_name()) << " --help'\n";
    return 1;
  }

  const Streams s{out, err};
  try {
    if (gen->parsed()) return do_generate(g);
    if (tr->parsed()) return do_train(t);
    if (ev->parsed()) return do_evaluate(e, s);
    if (in->parsed()) return do_intervene(iv, s);
    if (abl->parsed()) return do_ablate(ab, s);
    if (rs->parsed()) return do_render(rd, s);
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}

}  // namespace slcbm::cli
