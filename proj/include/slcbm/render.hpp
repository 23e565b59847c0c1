#pragma once

// Saliency overlays (viridis, alpha 0.5) and a plain raster line plot for
// intervention curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slcbm/core.hpp"
#include "slcbm/dataset.hpp"
#include "slcbm/intervention.hpp"
#include "slcbm/metrics.hpp"
#include "slcbm/model.hpp"
#include "slcbm/png.hpp"

namespace slcbm {

namespace detail {

inline constexpr std::array<std::array<std::uint8_t, 3>, 256> kViridis{{
    {68,1,84}, {68,2,86}, {69,4,87}, {69,5,89}, {70,7,90}, {70,8,92}, {70,10,93}, {70,11,94},
    {71,13,96}, {71,14,97}, {71,16,99}, {71,17,100}, {71,19,101}, {72,20,103}, {72,22,104}, {72,23,105},
    {72,24,106}, {72,26,108}, {72,27,109}, {72,28,110}, {72,29,111}, {72,31,112}, {72,32,113}, {72,33,115},
    {72,35,116}, {72,36,117}, {72,37,118}, {72,38,119}, {72,40,120}, {72,41,121}, {71,42,122}, {71,44,122},
    {71,45,123}, {71,46,124}, {71,47,125}, {70,48,126}, {70,50,126}, {70,51,127}, {70,52,128}, {69,53,129},
    {69,55,129}, {69,56,130}, {68,57,131}, {68,58,131}, {68,59,132}, {67,61,132}, {67,62,133}, {66,63,133},
    {66,64,134}, {66,65,134}, {65,66,135}, {65,68,135}, {64,69,136}, {64,70,136}, {63,71,136}, {63,72,137},
    {62,73,137}, {62,74,137}, {62,76,138}, {61,77,138}, {61,78,138}, {60,79,138}, {60,80,139}, {59,81,139},
    {59,82,139}, {58,83,139}, {58,84,140}, {57,85,140}, {57,86,140}, {56,88,140}, {56,89,140}, {55,90,140},
    {55,91,141}, {54,92,141}, {54,93,141}, {53,94,141}, {53,95,141}, {52,96,141}, {52,97,141}, {51,98,141},
    {51,99,141}, {50,100,142}, {50,101,142}, {49,102,142}, {49,103,142}, {49,104,142}, {48,105,142}, {48,106,142},
    {47,107,142}, {47,108,142}, {46,109,142}, {46,110,142}, {46,111,142}, {45,112,142}, {45,113,142}, {44,113,142},
    {44,114,142}, {44,115,142}, {43,116,142}, {43,117,142}, {42,118,142}, {42,119,142}, {42,120,142}, {41,121,142},
    {41,122,142}, {41,123,142}, {40,124,142}, {40,125,142}, {39,126,142}, {39,127,142}, {39,128,142}, {38,129,142},
    {38,130,142}, {38,130,142}, {37,131,142}, {37,132,142}, {37,133,142}, {36,134,142}, {36,135,142}, {35,136,142},
    {35,137,142}, {35,138,141}, {34,139,141}, {34,140,141}, {34,141,141}, {33,142,141}, {33,143,141}, {33,144,141},
    {33,145,140}, {32,146,140}, {32,146,140}, {32,147,140}, {31,148,140}, {31,149,139}, {31,150,139}, {31,151,139},
    {31,152,139}, {31,153,138}, {31,154,138}, {30,155,138}, {30,156,137}, {30,157,137}, {31,158,137}, {31,159,136},
    {31,160,136}, {31,161,136}, {31,161,135}, {31,162,135}, {32,163,134}, {32,164,134}, {33,165,133}, {33,166,133},
    {34,167,133}, {34,168,132}, {35,169,131}, {36,170,131}, {37,171,130}, {37,172,130}, {38,173,129}, {39,173,129},
    {40,174,128}, {41,175,127}, {42,176,127}, {44,177,126}, {45,178,125}, {46,179,124}, {47,180,124}, {49,181,123},
    {50,182,122}, {52,182,121}, {53,183,121}, {55,184,120}, {56,185,119}, {58,186,118}, {59,187,117}, {61,188,116},
    {63,188,115}, {64,189,114}, {66,190,113}, {68,191,112}, {70,192,111}, {72,193,110}, {74,193,109}, {76,194,108},
    {78,195,107}, {80,196,106}, {82,197,105}, {84,197,104}, {86,198,103}, {88,199,101}, {90,200,100}, {92,200,99},
    {94,201,98}, {96,202,96}, {99,203,95}, {101,203,94}, {103,204,92}, {105,205,91}, {108,205,90}, {110,206,88},
    {112,207,87}, {115,208,86}, {117,208,84}, {119,209,83}, {122,209,81}, {124,210,80}, {127,211,78}, {129,211,77},
    {132,212,75}, {134,213,73}, {137,213,72}, {139,214,70}, {142,214,69}, {144,215,67}, {147,215,65}, {149,216,64},
    {152,216,62}, {155,217,60}, {157,217,59}, {160,218,57}, {162,218,55}, {165,219,54}, {168,219,52}, {170,220,50},
    {173,220,48}, {176,221,47}, {178,221,45}, {181,222,43}, {184,222,41}, {186,222,40}, {189,223,38}, {192,223,37},
    {194,223,35}, {197,224,33}, {200,224,32}, {202,225,31}, {205,225,29}, {208,225,28}, {210,226,27}, {213,226,26},
    {216,226,25}, {218,227,25}, {221,227,24}, {223,227,24}, {226,228,24}, {229,228,25}, {231,228,25}, {234,229,26},
    {236,229,27}, {239,229,28}, {241,229,29}, {244,230,30}, {246,230,32}, {248,230,33}, {251,231,35}, {253,231,37},
}};

}  // namespace detail

inline std::array<std::uint8_t, 3> viridis(double t) {
  const auto i = static_cast<std::size_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  return detail::kViridis[i];
}


// Min-max normalized saliency upsampled to image size, mapped through
// viridis and blended over the image at `alpha`.
inline Image saliency_overlay(const Image& img, const VectorD& saliency, int grid_h, int grid_w, double alpha = 0.5) {
  const MatrixD m = upsample_bilinear(normalize_minmax(saliency), grid_h, grid_w, img.height, img.width);
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto c = viridis(m(y, x));
      for (int ch = 0; ch < 3; ++ch) out.set(y, x, ch, (1 - alpha) * img.at(y, x, ch) + alpha * c[ch] / 255.0);
    }
  return out;
}

// File-name-safe rendering of a concept or class name.
inline std::string file_token(const std::string& s) {
  std::string out;
  for (char ch : s) out += std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ? ch : '_';
  return out;
}

// Writes {id}_image.png, {id}_concept{r}_{name}.png for the top-5 predicted
// concepts (r = 1..5), and {id}_class_{name}.png for the predicted class.
// Returns the written paths in that order.
inline std::vector<std::filesystem::path> render_sample_saliency(const ConceptModel& model, const Sample& s,
                                                                 const std::vector<std::string>& concept_names,
                                                                 const std::vector<std::string>& class_names,
                                                                 const std::filesystem::path& dir, int top = 5) {
  std::filesystem::create_directories(dir);
  const auto feats = model.encode(s.image);
  const auto t = model.trace(feats);
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const Image& img) {
    written.push_back(dir / (s.id + "_" + name + ".png"));
    png::write(written.back(), detail::to_raster(img));
  };
  emit("image", s.image);
  const auto ranked = top_k(t.f, std::min<int>(top, static_cast<int>(t.f.size())));
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const int i = ranked[r];
    emit("concept" + std::to_string(r + 1) + "_" + file_token(concept_names.at(i)),
         saliency_overlay(s.image, t.saliency.row(i).transpose(), t.height, t.width));
  }
  const int pred = t.predicted();
  emit("class_" + file_token(class_names.at(pred)),
       saliency_overlay(s.image, model.class_map(t, feats, pred), t.height, t.width));
  return written;
}

// Mean error with a +-std band on a white canvas; x spans the counts, y spans [0, 1].
inline Image plot_curve(const InterventionCurve& curve, int width = 480, int height = 320) {
  Image img(width, height);
  std::fill(img.rgb.begin(), img.rgb.end(), 255);
  const int m = 30;
  const int pw = width - 2 * m, ph = height - 2 * m;
  auto px = [&](double x) {
    const double x0 = curve.counts.front(), x1 = curve.counts.back();
    return m + static_cast<int>(std::lround(x1 > x0 ? (x - x0) / (x1 - x0) * pw : 0));
  };
  auto py = [&](double y) { return m + static_cast<int>(std::lround((1.0 - std::clamp(y, 0.0, 1.0)) * ph)); };
  auto put = [&](int x, int y, std::array<double, 3> c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    for (int ch = 0; ch < 3; ++ch) img.set(y, x, ch, c[ch]);
  };
  const std::array<double, 3> black{0, 0, 0}, line{0.13, 0.29, 0.53}, band{0.78, 0.85, 0.93};
  if (curve.counts.empty()) return img;
  for (std::size_t i = 0; i + 1 < curve.counts.size(); ++i) {
    const int xa = px(curve.counts[i]), xb = px(curve.counts[i + 1]);
    for (int x = xa; x <= xb; ++x) {
      const double u = xb > xa ? static_cast<double>(x - xa) / (xb - xa) : 0.0;
      const double mu = curve.mean_error[i] + u * (curve.mean_error[i + 1] - curve.mean_error[i]);
      const double sd = curve.std_error[i] + u * (curve.std_error[i + 1] - curve.std_error[i]);
      for (int y = py(mu + sd); y <= py(mu - sd); ++y) put(x, y, band);
    }
  }
  for (int x = m; x <= m + pw; ++x) put(x, m + ph, black);
  for (int y = m; y <= m + ph; ++y) put(m, y, black);
  for (std::size_t i = 0; i + 1 < curve.counts.size(); ++i) {
    const int xa = px(curve.counts[i]), xb = px(curve.counts[i + 1]);
    const int ya = py(curve.mean_error[i]), yb = py(curve.mean_error[i + 1]);
    const int steps = std::max({std::abs(xb - xa), std::abs(yb - ya), 1});
    for (int k = 0; k <= steps; ++k) {
      const int x = xa + static_cast<int>(std::lround(static_cast<double>(k) * (xb - xa) / steps));
      const int y = ya + static_cast<int>(std::lround(static_cast<double>(k) * (yb - ya) / steps));
      for (int d = -1; d <= 1; ++d) put(x, y + d, line);
    }
  }
  return img;
}

}  // namespace slcbm
