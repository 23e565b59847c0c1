#pragma once

// Checkpoint archive:
//
//   bytes 0..7    magic "SLCBMCK1"
//   bytes 8..15   header length L, uint64 little-endian
//   next L bytes  JSON header (config, head, vocab, class names, step count,
//                 final losses, and an "arrays" table of name/shape/offset)
//   remainder     float32 little-endian payload; each array row-major at
//                 its byte offset relative to the payload start

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slcbm/config.hpp"
#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/encoders.hpp"
#include "slcbm/losses.hpp"
#include "slcbm/model.hpp"

namespace slcbm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr int kCheckpointSchemaVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'C', 'B', 'M', 'C', 'K', '1'};

struct Checkpoint {
  TrainConfig config;  // includes the backbone config
  ConceptVocabulary vocab;
  std::vector<std::string> class_names;
  ConceptFeatures<float> concepts;
  ModelParams<float> params;
  std::int64_t steps = 0;
  LossBreakdown final_losses;

  HeadKind head() const { return config.head; }

  ConceptModel model() const {
    return ConceptModel(config.head, config.backbone, concepts.cast<double>(), params.cast<double>());
  }
};

namespace detail {

struct ArrayRef {
  std::string name;
  std::vector<Eigen::Index> shape;
};

inline std::vector<float> row_major(const Matrix<float>& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  return out;
}

inline Matrix<float> from_row_major(const float* d, Eigen::Index rows, Eigen::Index cols) {
  Matrix<float> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = d[r * cols + c];
  return m;
}

inline nlohmann::json losses_to_json(const LossBreakdown& l) {
  return {{"ce", l.ce}, {"ca", l.ca}, {"e", l.e}, {"c", l.c}, {"total", l.total}};
}

inline LossBreakdown losses_from_json(const nlohmann::json& j) {
  return {j.at("ce").get<double>(), j.at("ca").get<double>(), j.at("e").get<double>(), j.at("c").get<double>(),
          j.at("total").get<double>()};
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::vector<std::pair<std::string, std::vector<float>>> arrays;
  std::vector<std::vector<Eigen::Index>> shapes;
  auto add = [&](const std::string& name, const Matrix<float>& m) {
    arrays.emplace_back(name, detail::row_major(m));
    shapes.push_back({m.rows(), m.cols()});
  };
  auto add_vec = [&](const std::string& name, const Vector<float>& v) {
    arrays.emplace_back(name, std::vector<float>(v.data(), v.data() + v.size()));
    shapes.push_back({v.size()});
  };
  add("concepts", ck.concepts.rows);
  if (ck.head() == HeadKind::SlCbm) {
    add("conv_w", ck.params.conv_w);
    add_vec("conv_b", ck.params.conv_b);
    add("attn_q", ck.params.attn_q);
    add("attn_k", ck.params.attn_k);
    add("attn_v", ck.params.attn_v);
    arrays.emplace_back("out_scale", std::vector<float>{ck.params.out_scale});
    shapes.push_back({1});
  }
  add("cls_w", ck.params.classifier.w);
  add_vec("cls_b", ck.params.classifier.b);

  nlohmann::json header;
  header["schema_version"] = kCheckpointSchemaVersion;
  header["config"] = to_json(ck.config);
  header["head"] = to_string(ck.head());
  header["vocab"] = ck.vocab.names;
  header["class_names"] = ck.class_names;
  header["steps"] = ck.steps;
  header["final_losses"] = detail::losses_to_json(ck.final_losses);
  header["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    header["arrays"].push_back({{"name", arrays[i].first}, {"shape", shapes[i]}, {"offset", offset}});
    offset += arrays[i].second.size() * sizeof(float);
  }

  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = h.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += h;
  for (const auto& [name, data] : arrays)
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw ValidationError("not a checkpoint file (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (16 + len > bytes.size()) throw ValidationError("checkpoint: truncated header");
  Checkpoint ck;
  const char* payload = bytes.data() + 16 + len;
  const std::size_t payload_size = bytes.size() - 16 - len;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(16, len));
    const int version = header.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw ValidationError("checkpoint: unsupported schema_version " + std::to_string(version));
    ck.config = train_config_from_json(header.at("config"));
    ck.vocab.names = header.at("vocab").get<std::vector<std::string>>();
    ck.class_names = header.at("class_names").get<std::vector<std::string>>();
    ck.steps = header.at("steps").get<std::int64_t>();
    ck.final_losses = detail::losses_from_json(header.at("final_losses"));

    const Eigen::Index C = static_cast<Eigen::Index>(ck.vocab.size());
    const Eigen::Index K = static_cast<Eigen::Index>(ck.class_names.size());
    const Eigen::Index D = ck.config.backbone.feature_dim;
    ck.params = ModelParams<float>::zeros(static_cast<int>(C), static_cast<int>(D), static_cast<int>(K));
    ck.concepts.rows = Matrix<float>::Zero(C, D);

    for (const auto& a : header.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      const auto shape = a.at("shape").get<std::vector<Eigen::Index>>();
      const auto offset = a.at("offset").get<std::size_t>();
      Eigen::Index count = 1;
      for (auto s : shape) count *= s;
      if (offset + static_cast<std::size_t>(count) * sizeof(float) > payload_size)
        throw ValidationError("checkpoint: array '" + name + "' exceeds payload");
      std::vector<float> data(static_cast<std::size_t>(count));
      std::memcpy(data.data(), payload + offset, data.size() * sizeof(float));
      auto expect = [&](Eigen::Index r, Eigen::Index c) {
        const bool ok = c < 0 ? (shape.size() == 1 && shape[0] == r)
                              : (shape.size() == 2 && shape[0] == r && shape[1] == c);
        if (!ok) throw ValidationError("checkpoint: array '" + name + "' has unexpected shape");
      };
      auto vec = [&] { return Eigen::Map<const Vector<float>>(data.data(), count); };
      if (name == "concepts") { expect(C, D); ck.concepts.rows = detail::from_row_major(data.data(), C, D); }
      else if (name == "conv_w") { expect(C, D); ck.params.conv_w = detail::from_row_major(data.data(), C, D); }
      else if (name == "conv_b") { expect(C, -1); ck.params.conv_b = vec(); }
      else if (name == "attn_q") { expect(D, D); ck.params.attn_q = detail::from_row_major(data.data(), D, D); }
      else if (name == "attn_k") { expect(D, D); ck.params.attn_k = detail::from_row_major(data.data(), D, D); }
      else if (name == "attn_v") { expect(D, D); ck.params.attn_v = detail::from_row_major(data.data(), D, D); }
      else if (name == "out_scale") { expect(1, -1); ck.params.out_scale = data[0]; }
      else if (name == "cls_w") { expect(K, C); ck.params.classifier.w = detail::from_row_major(data.data(), K, C); }
      else if (name == "cls_b") { expect(K, -1); ck.params.classifier.b = vec(); }
      else throw ValidationError("checkpoint: unknown array '" + name + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace slcbm
