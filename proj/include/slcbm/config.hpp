#pragma once

// Training configuration and its plain-text INI form:
//
//   [train]      learning_rate, batch_size, epochs, seed, data_fraction,
//                double_precision, head, data
//   [optimizer]  beta1, beta2, eps
//   [loss]       lambda_ce, lambda_ca, lambda_e, lambda_c, gamma, tau,
//                entropy_reduction (sum | mean)
//   [backbone]   patch_size, feature_dim, seed
//
// Every key is optional; unknown sections or keys are rejected.

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include "slcbm/core.hpp"
#include "slcbm/encoders.hpp"
#include "slcbm/losses.hpp"
#include "slcbm/model.hpp"
#include "slcbm/optim.hpp"

namespace slcbm {

struct TrainConfig {
  AdamConfig optimizer;
  int batch_size = 4;
  int epochs = 300;
  std::uint64_t seed = 1;
  LossWeights loss;
  BackboneConfig backbone;
  std::string data_path;
  double data_fraction = 1.0;
  bool double_precision = false;
  HeadKind head = HeadKind::SlCbm;

  void validate() const {
    if (!(optimizer.learning_rate > 0)) throw ValidationError("learning_rate must be positive");
    if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1))
      throw ValidationError("adam betas must lie in [0, 1)");
    if (!(optimizer.eps > 0)) throw ValidationError("adam eps must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be positive");
    if (loss.lambda_c > 0 && batch_size < 2) throw ValidationError("batch_size must be at least 2 when lambda_c > 0");
    if (epochs < 0) throw ValidationError("epochs must be non-negative");
    if (!(data_fraction > 0 && data_fraction <= 1)) throw ValidationError("data_fraction must lie in (0, 1]");
    if (backbone.patch_size < 1 || backbone.feature_dim < 4) throw ValidationError("invalid backbone config");
    loss.validate();
  }

  bool operator==(const TrainConfig&) const = default;
};

inline std::string to_string(Reduction r) { return r == Reduction::Sum ? "sum" : "mean"; }

inline Reduction reduction_from_string(const std::string& s) {
  if (s == "sum") return Reduction::Sum;
  if (s == "mean") return Reduction::Mean;
  throw ValidationError("entropy_reduction must be 'sum' or 'mean', got '" + s + "'");
}

inline nlohmann::json to_json(const BackboneConfig& b) {
  return {{"patch_size", b.patch_size}, {"feature_dim", b.feature_dim}, {"seed", b.seed}};
}

inline BackboneConfig backbone_from_json(const nlohmann::json& j) {
  return {j.at("patch_size").get<int>(), j.at("feature_dim").get<int>(), j.at("seed").get<std::uint64_t>()};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"train",
           {{"learning_rate", c.optimizer.learning_rate},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"data_fraction", c.data_fraction},
            {"double_precision", c.double_precision},
            {"head", to_string(c.head)},
            {"data", c.data_path}}},
          {"optimizer", {{"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}}},
          {"loss",
           {{"lambda_ce", c.loss.lambda_ce},
            {"lambda_ca", c.loss.lambda_ca},
            {"lambda_e", c.loss.lambda_e},
            {"lambda_c", c.loss.lambda_c},
            {"gamma", c.loss.gamma},
            {"tau", c.loss.tau},
            {"entropy_reduction", to_string(c.loss.entropy_reduction)}}},
          {"backbone", to_json(c.backbone)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  const auto& t = j.at("train");
  c.optimizer.learning_rate = t.at("learning_rate").get<double>();
  c.batch_size = t.at("batch_size").get<int>();
  c.epochs = t.at("epochs").get<int>();
  c.seed = t.at("seed").get<std::uint64_t>();
  c.data_fraction = t.at("data_fraction").get<double>();
  c.double_precision = t.at("double_precision").get<bool>();
  c.head = head_kind_from_string(t.at("head").get<std::string>());
  c.data_path = t.at("data").get<std::string>();
  const auto& o = j.at("optimizer");
  c.optimizer.beta1 = o.at("beta1").get<double>();
  c.optimizer.beta2 = o.at("beta2").get<double>();
  c.optimizer.eps = o.at("eps").get<double>();
  const auto& l = j.at("loss");
  c.loss.lambda_ce = l.at("lambda_ce").get<double>();
  c.loss.lambda_ca = l.at("lambda_ca").get<double>();
  c.loss.lambda_e = l.at("lambda_e").get<double>();
  c.loss.lambda_c = l.at("lambda_c").get<double>();
  c.loss.gamma = l.at("gamma").get<double>();
  c.loss.tau = l.at("tau").get<double>();
  c.loss.entropy_reduction = reduction_from_string(l.at("entropy_reduction").get<std::string>());
  c.backbone = backbone_from_json(j.at("backbone"));
  return c;
}

namespace detail {

template <typename T>
T ini_value(const boost::property_tree::ptree& node, const std::string& key) {
  try {
    return node.get_value<T>();
  } catch (const boost::property_tree::ptree_bad_data&) {
    throw ValidationError("config: invalid value '" + node.data() + "' for " + key);
  }
}

inline bool ini_bool(const boost::property_tree::ptree& node, const std::string& key) {
  const auto& v = node.data();
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config: invalid boolean '" + v + "' for " + key);
}

}  // namespace detail

inline TrainConfig parse_config(const std::string& text, TrainConfig c = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ValidationError("config: key '" + section + "' must be inside a section");
    for (const auto& [key, node] : body) {
      const std::string name = section + "." + key;
      using detail::ini_value;
      if (section == "train") {
        if (key == "learning_rate") c.optimizer.learning_rate = ini_value<double>(node, name);
        else if (key == "batch_size") c.batch_size = ini_value<int>(node, name);
        else if (key == "epochs") c.epochs = ini_value<int>(node, name);
        else if (key == "seed") c.seed = ini_value<std::uint64_t>(node, name);
        else if (key == "data_fraction") c.data_fraction = ini_value<double>(node, name);
        else if (key == "double_precision") c.double_precision = detail::ini_bool(node, name);
        else if (key == "head") c.head = head_kind_from_string(node.data());
        else if (key == "data") c.data_path = node.data();
        else throw ValidationError("config: unknown key " + name);
      } else if (section == "optimizer") {
        if (key == "beta1") c.optimizer.beta1 = ini_value<double>(node, name);
        else if (key == "beta2") c.optimizer.beta2 = ini_value<double>(node, name);
        else if (key == "eps") c.optimizer.eps = ini_value<double>(node, name);
        else throw ValidationError("config: unknown key " + name);
      } else if (section == "loss") {
        if (key == "lambda_ce") c.loss.lambda_ce = ini_value<double>(node, name);
        else if (key == "lambda_ca") c.loss.lambda_ca = ini_value<double>(node, name);
        else if (key == "lambda_e") c.loss.lambda_e = ini_value<double>(node, name);
        else if (key == "lambda_c") c.loss.lambda_c = ini_value<double>(node, name);
        else if (key == "gamma") c.loss.gamma = ini_value<double>(node, name);
        else if (key == "tau") c.loss.tau = ini_value<double>(node, name);
        else if (key == "entropy_reduction") c.loss.entropy_reduction = reduction_from_string(node.data());
        else throw ValidationError("config: unknown key " + name);
      } else if (section == "backbone") {
        if (key == "patch_size") c.backbone.patch_size = ini_value<int>(node, name);
        else if (key == "feature_dim") c.backbone.feature_dim = ini_value<int>(node, name);
        else if (key == "seed") c.backbone.seed = ini_value<std::uint64_t>(node, name);
        else throw ValidationError("config: unknown key " + name);
      } else {
        throw ValidationError("config: unknown section [" + section + "]");
      }
    }
  }
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

inline std::string format_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "[train]\n"
      << "learning_rate = " << c.optimizer.learning_rate << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "epochs = " << c.epochs << "\n"
      << "seed = " << c.seed << "\n"
      << "data_fraction = " << c.data_fraction << "\n"
      << "double_precision = " << (c.double_precision ? "true" : "false") << "\n"
      << "head = " << to_string(c.head) << "\n";
  if (!c.data_path.empty()) out << "data = " << c.data_path << "\n";
  out << "\n[optimizer]\n"
      << "beta1 = " << c.optimizer.beta1 << "\n"
      << "beta2 = " << c.optimizer.beta2 << "\n"
      << "eps = " << c.optimizer.eps << "\n"
      << "\n[loss]\n"
      << "lambda_ce = " << c.loss.lambda_ce << "\n"
      << "lambda_ca = " << c.loss.lambda_ca << "\n"
      << "lambda_e = " << c.loss.lambda_e << "\n"
      << "lambda_c = " << c.loss.lambda_c << "\n"
      << "gamma = " << c.loss.gamma << "\n"
      << "tau = " << c.loss.tau << "\n"
      << "entropy_reduction = " << to_string(c.loss.entropy_reduction) << "\n"
      << "\n[backbone]\n"
      << "patch_size = " << c.backbone.patch_size << "\n"
      << "feature_dim = " << c.backbone.feature_dim << "\n"
      << "seed = " << c.backbone.seed << "\n";
  return out.str();
}

}  // namespace slcbm
