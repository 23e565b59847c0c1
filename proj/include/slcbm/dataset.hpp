#pragma once

// Synthetic shapes dataset with per-concept segmentation masks, and the
// on-disk directory format shared with externally prepared datasets:
//
//   manifest.json
//   images/{id}.png              8-bit RGB
//   masks/{id}/{concept}.png     8-bit gray, values in {0, 255}
//   masks/{id}/class.png
//
// Concept mask files are written only for ground-truth concepts; a missing
// file reads as an all-zero mask.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slcbm/core.hpp"
#include "slcbm/png.hpp"

namespace slcbm {

inline constexpr int kManifestSchemaVersion = 1;

struct ConceptVocabulary {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }

  void validate() const {
    if (names.size() < 2) throw ValidationError("concept vocabulary needs at least 2 concepts");
    std::set<std::string> seen;
    for (const auto& n : names) {
      if (n.empty()) throw ValidationError("concept vocabulary contains an empty name");
      if (!seen.insert(n).second) throw ValidationError("duplicate concept name '" + n + "'");
    }
  }

  std::optional<int> index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<int>(it - names.begin());
  }

  bool operator==(const ConceptVocabulary&) const = default;
};

// 8-bit RGB image, row-major interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] / 255.0; }
  void set(int y, int x, int c, double v) {
    rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c] =
        static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }

  bool operator==(const Image&) const = default;
};

// Real-valued RGB image in [0, 1]; produced by saliency masking.
struct RealImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  RealImage() = default;
  RealImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0) {}
  explicit RealImage(const Image& img) : RealImage(img.width, img.height) {
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = img.rgb[i] / 255.0;
  }

  double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

// Binary grid with entries in {0, 1}.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  void set(int y, int x, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  bool empty() const { return count() == 0; }

  bool operator==(const BinaryMask&) const = default;
};

struct Sample {
  std::string id;
  Image image;
  int label = 0;
  std::vector<int> concepts;  // sorted ascending
  std::vector<BinaryMask> concept_masks;  // one per vocabulary entry
  BinaryMask class_mask;

  bool has_concept(int i) const { return std::binary_search(concepts.begin(), concepts.end(), i); }

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  ConceptVocabulary vocab;
  std::vector<std::string> class_names;
  std::vector<Sample> train;
  std::vector<Sample> test;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t num_concepts() const { return vocab.size(); }

  bool operator==(const Dataset&) const = default;
};

// Area coverage of `mask` over each patch of a grid with `patch` pixel cells,
// thresholded at > 0.5. Result is (height/patch) x (width/patch), row-major.
inline BinaryMask downsample_mask(const BinaryMask& mask, int patch) {
  if (patch <= 0 || mask.width % patch != 0 || mask.height % patch != 0)
    throw ValidationError("mask size not divisible by patch size");
  BinaryMask grid(mask.width / patch, mask.height / patch);
  const double area = static_cast<double>(patch) * patch;
  for (int gy = 0; gy < grid.height; ++gy)
    for (int gx = 0; gx < grid.width; ++gx) {
      int on = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x) on += mask.at(gy * patch + y, gx * patch + x);
      grid.set(gy, gx, on / area > 0.5);
    }
  return grid;
}

inline void validate_sample(const Sample& s, std::size_t num_classes, std::size_t num_concepts) {
  const std::string where = "sample '" + s.id + "': ";
  if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes)
    throw ValidationError(where + "class index " + std::to_string(s.label) + " out of range [0," +
                          std::to_string(num_classes) + ")");
  for (std::size_t k = 0; k < s.concepts.size(); ++k) {
    const int c = s.concepts[k];
    if (c < 0 || static_cast<std::size_t>(c) >= num_concepts)
      throw ValidationError(where + "concept index " + std::to_string(c) + " out of range");
    if (k > 0 && s.concepts[k - 1] >= c) throw ValidationError(where + "concept list must be sorted and unique");
  }
  if (s.image.rgb.size() != static_cast<std::size_t>(s.image.width) * s.image.height * 3)
    throw ValidationError(where + "image buffer size mismatch");
  if (s.concept_masks.size() != num_concepts) throw ValidationError(where + "expected one mask per concept");
  auto check_mask = [&](const BinaryMask& m, const std::string& what) {
    if (m.width != s.image.width || m.height != s.image.height)
      throw ValidationError(where + what + " mask shape differs from image shape");
    for (auto b : m.bits)
      if (b > 1) throw ValidationError(where + what + ": non-binary mask");
  };
  for (std::size_t i = 0; i < num_concepts; ++i) {
    check_mask(s.concept_masks[i], "concept " + std::to_string(i));
    if (!s.has_concept(static_cast<int>(i)) && !s.concept_masks[i].empty())
      throw ValidationError(where + "mask of absent concept " + std::to_string(i) + " is non-empty");
  }
  check_mask(s.class_mask, "class");
}

inline void validate_dataset(const Dataset& d) {
  d.vocab.validate();
  if (d.class_names.empty()) throw ValidationError("dataset has no classes");
  for (const auto& s : d.train) validate_sample(s, d.num_classes(), d.num_concepts());
  for (const auto& s : d.test) validate_sample(s, d.num_classes(), d.num_concepts());
}

// ---------------------------------------------------------------------------
// Synthetic generator

enum class Color { Red, Green, Blue };
enum class Shape { Circle, Square, Triangle };

struct ClassEntry {
  Color color;
  Shape shape;
};

struct SynthSpec {
  int image_size = 64;
  int num_classes = 6;
  ConceptVocabulary concept_vocab{{"red", "green", "blue", "circle", "square", "triangle", "solid", "striped",
                                   "large", "small", "upper", "lower"}};
  std::vector<ClassEntry> class_table{{Color::Red, Shape::Circle},   {Color::Green, Shape::Square},
                                      {Color::Blue, Shape::Triangle}, {Color::Red, Shape::Square},
                                      {Color::Green, Shape::Triangle}, {Color::Blue, Shape::Circle}};
  int samples_per_class = 300;
  std::uint64_t seed = 1;
  // Object centers are drawn from multiples of this many pixels (0: any pixel).
  int placement_step = 8;
};

namespace synth {

// Concept slots in the default vocabulary.
inline constexpr int kColor0 = 0, kShape0 = 3, kSolid = 6, kStriped = 7, kLarge = 8, kSmall = 9, kUpper = 10,
                     kLower = 11;
inline constexpr int kNumConcepts = 12;

inline std::string color_name(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
  }
  return {};
}

inline std::string shape_name(Shape s) {
  switch (s) {
    case Shape::Circle: return "circle";
    case Shape::Square: return "square";
    case Shape::Triangle: return "triangle";
  }
  return {};
}

inline std::array<double, 3> rgb_of(Color c) {
  switch (c) {
    case Color::Red: return {0.85, 0.12, 0.12};
    case Color::Green: return {0.12, 0.75, 0.20};
    case Color::Blue: return {0.15, 0.25, 0.90};
  }
  return {0, 0, 0};
}

inline bool inside(Shape shape, double dx, double dy, double r) {
  switch (shape) {
    case Shape::Circle: return dx * dx + dy * dy <= r * r;
    case Shape::Square: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case Shape::Triangle: {
      const double t = dy + r;  // distance below the apex
      return t >= 0.0 && t <= 2.0 * r && std::abs(dx) <= 0.5 * t;
    }
  }
  return false;
}

inline bool on_stripe(int y, int x) { return (x + y) % 5 < 3; }

// Renders one sample. Lighting falls off from top to bottom over the whole
// canvas so that vertical placement is visible inside the object itself.
inline Sample render(const SynthSpec& spec, int label, std::uint64_t sample_seed, std::string id) {
  Rng rng(sample_seed);
  std::bernoulli_distribution coin(0.5);
  const bool striped = coin(rng);
  const bool large = coin(rng);
  const bool upper = coin(rng);

  const int n = spec.image_size;
  const ClassEntry cls = spec.class_table[static_cast<std::size_t>(label)];
  const int r = static_cast<int>(std::lround(n * (large ? 0.30 : 0.14)));
  const int step = spec.placement_step;
  auto pick = [&](int lo, int hi) {
    if (hi < lo) hi = lo;
    if (step > 1) {
      const int a = (lo + step - 1) / step, b = hi / step;
      if (a <= b) return step * std::uniform_int_distribution<int>(a, b)(rng);
    }
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  const int cx = pick(r + 1, n - 2 - r);
  const int cy = upper ? pick(r + 1, n / 2 - 2) : pick(n / 2 + 1, n - 2 - r);

  Sample s;
  s.id = std::move(id);
  s.label = label;
  s.image = Image(n, n);
  s.class_mask = BinaryMask(n, n);
  BinaryMask stripes(n, n);
  std::uniform_real_distribution<double> noise(-0.03, 0.03);
  const auto base = rgb_of(cls.color);
  for (int y = 0; y < n; ++y) {
    const double light = 1.0 - 0.45 * y / (n - 1);
    for (int x = 0; x < n; ++x) {
      const bool obj = inside(cls.shape, x + 0.5 - cx, y + 0.5 - cy, r);
      const bool stripe = obj && striped && on_stripe(y, x);
      for (int c = 0; c < 3; ++c) {
        double v = 0.55;
        if (obj) v = (!striped || stripe) ? base[c] : 0.35 * base[c] + 0.65;
        s.image.set(y, x, c, v * light + noise(rng));
      }
      s.class_mask.set(y, x, obj);
      stripes.set(y, x, stripe);
    }
  }

  const int C = static_cast<int>(spec.concept_vocab.size());
  s.concept_masks.assign(C, BinaryMask(n, n));
  const int color_idx = kColor0 + static_cast<int>(cls.color);
  const int shape_idx = kShape0 + static_cast<int>(cls.shape);
  const int texture_idx = striped ? kStriped : kSolid;
  const int size_idx = large ? kLarge : kSmall;
  const int pos_idx = upper ? kUpper : kLower;
  s.concepts = {color_idx, shape_idx, texture_idx, size_idx, pos_idx};
  std::sort(s.concepts.begin(), s.concepts.end());
  for (int i : {color_idx, shape_idx, size_idx, pos_idx}) s.concept_masks[i] = s.class_mask;
  s.concept_masks[texture_idx] = striped ? stripes : s.class_mask;
  return s;
}

}  // namespace synth

inline Dataset generate_dataset(const SynthSpec& spec) {
  if (spec.image_size < 16) throw ValidationError("canvas too small");
  if (spec.placement_step < 0) throw ValidationError("placement_step must be non-negative");
  spec.concept_vocab.validate();
  if (spec.concept_vocab.size() != synth::kNumConcepts)
    throw ValidationError("synthetic generator requires the 12-concept vocabulary");
  if (spec.num_classes < 1) throw ValidationError("num_classes must be positive");
  if (static_cast<std::size_t>(spec.num_classes) > spec.class_table.size())
    throw ValidationError("num_classes " + std::to_string(spec.num_classes) + " exceeds class_table entries (" +
                          std::to_string(spec.class_table.size()) + ")");
  if (spec.samples_per_class < 1) throw ValidationError("samples_per_class must be positive");

  Dataset d;
  d.vocab = spec.concept_vocab;
  for (int k = 0; k < spec.num_classes; ++k)
    d.class_names.push_back(synth::color_name(spec.class_table[k].color) + "-" +
                            synth::shape_name(spec.class_table[k].shape));

  const std::size_t total = static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class;
  std::vector<Sample> all;
  all.reserve(total);
  char id[32];
  for (std::size_t n = 0; n < total; ++n) {
    std::snprintf(id, sizeof id, "s%05zu", n);
    all.push_back(synth::render(spec, static_cast<int>(n / spec.samples_per_class), spec.seed ^ mix64(n), id));
  }

  // 80/20 split: the 20% of indices with the smallest hash go to test.
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ha = derive_seed(spec.seed, a, 0x5151), hb = derive_seed(spec.seed, b, 0x5151);
    return ha != hb ? ha < hb : a < b;
  });
  std::vector<bool> is_test(total, false);
  for (std::size_t k = 0; k < total / 5; ++k) is_test[order[k]] = true;
  for (std::size_t n = 0; n < total; ++n) (is_test[n] ? d.test : d.train).push_back(std::move(all[n]));
  return d;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline png::Raster to_raster(const Image& img) { return {img.width, img.height, 3, img.rgb}; }

inline png::Raster to_raster(const BinaryMask& m) {
  png::Raster r{m.width, m.height, 1, m.bits};
  for (auto& v : r.pixels) v = v ? 255 : 0;
  return r;
}

inline BinaryMask mask_from_raster(const png::Raster& r, const std::string& name) {
  if (r.channels != 1) throw ValidationError(name + ": mask must be single-channel");
  BinaryMask m(r.width, r.height);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    const auto v = r.pixels[i];
    if (v != 0 && v != 255) throw ValidationError(name + ": non-binary mask");
    m.bits[i] = v ? 1 : 0;
  }
  return m;
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw ValidationError("manifest.json: " + where + "missing key '" + key + "'");
  return j.at(key);
}

inline nlohmann::json sample_record(const Sample& s) {
  return {{"id", s.id}, {"label", s.label}, {"concepts", s.concepts}};
}

inline void save_sample_files(const std::filesystem::path& root, const Sample& s) {
  png::write(root / "images" / (s.id + ".png"), to_raster(s.image));
  const auto mdir = root / "masks" / s.id;
  for (int c : s.concepts) png::write(mdir / (std::to_string(c) + ".png"), to_raster(s.concept_masks[c]));
  png::write(mdir / "class.png", to_raster(s.class_mask));
}

inline Sample load_sample(const std::filesystem::path& root, const nlohmann::json& rec, const std::string& where,
                          std::size_t num_concepts) {
  Sample s;
  try {
    s.id = require(rec, "id", where).get<std::string>();
    s.label = require(rec, "label", where).get<int>();
    s.concepts = require(rec, "concepts", where).get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest.json: " + where + e.what());
  }
  std::sort(s.concepts.begin(), s.concepts.end());
  for (int c : s.concepts)
    if (c < 0 || static_cast<std::size_t>(c) >= num_concepts)
      throw ValidationError("sample '" + s.id + "': concept index " + std::to_string(c) + " out of range");

  const auto img_path = root / "images" / (s.id + ".png");
  const auto raster = png::read(img_path);
  if (raster.channels != 3) throw ValidationError(img_path.string() + ": image must be RGB");
  s.image.width = raster.width;
  s.image.height = raster.height;
  s.image.rgb = raster.pixels;

  const auto mdir = root / "masks" / s.id;
  s.concept_masks.assign(num_concepts, BinaryMask(s.image.width, s.image.height));
  for (std::size_t c = 0; c < num_concepts; ++c) {
    const auto p = mdir / (std::to_string(c) + ".png");
    if (std::filesystem::exists(p)) s.concept_masks[c] = mask_from_raster(png::read(p), p.string());
  }
  const auto cp = mdir / "class.png";
  if (!std::filesystem::exists(cp)) throw ValidationError("missing class mask " + cp.string());
  s.class_mask = mask_from_raster(png::read(cp), cp.string());
  return s;
}

}  // namespace detail

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  validate_dataset(d);
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw IoError("cannot create dataset directory " + path.string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["schema_version"] = kManifestSchemaVersion;
  manifest["vocab"] = d.vocab.names;
  manifest["class_names"] = d.class_names;
  manifest["train"] = nlohmann::json::array();
  manifest["test"] = nlohmann::json::array();
  for (const auto& s : d.train) {
    detail::save_sample_files(path, s);
    manifest["train"].push_back(detail::sample_record(s));
  }
  for (const auto& s : d.test) {
    detail::save_sample_files(path, s);
    manifest["test"].push_back(detail::sample_record(s));
  }
  // Manifest last: its presence marks a complete dataset.
  write_file_atomic(path / "manifest.json", manifest.dump(1) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  const auto mpath = path / "manifest.json";
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(mpath));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("manifest.json: parse error: " + std::string(e.what()));
  }
  Dataset d;
  try {
    const int version = detail::require(m, "schema_version", "").get<int>();
    if (version != kManifestSchemaVersion)
      throw ValidationError("manifest.json: unsupported schema_version " + std::to_string(version));
    d.vocab.names = detail::require(m, "vocab", "").get<std::vector<std::string>>();
    d.class_names = detail::require(m, "class_names", "").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  d.vocab.validate();
  const auto& train = detail::require(m, "train", "");
  const auto& test = detail::require(m, "test", "");
  if (!train.is_array() || !test.is_array()) throw ValidationError("manifest.json: 'train' and 'test' must be arrays");
  for (std::size_t i = 0; i < train.size(); ++i)
    d.train.push_back(detail::load_sample(path, train[i], "train[" + std::to_string(i) + "]: ", d.num_concepts()));
  for (std::size_t i = 0; i < test.size(); ++i)
    d.test.push_back(detail::load_sample(path, test[i], "test[" + std::to_string(i) + "]: ", d.num_concepts()));
  validate_dataset(d);
  return d;
}

}  // namespace slcbm
