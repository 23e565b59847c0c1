#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "slcbm/core.hpp"
#include "slcbm/model.hpp"

namespace slcbm {

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

// Adam with bias correction over a flat parameter vector.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

  void step(std::span<Scalar> params, std::span<const Scalar> grads) {
    if (params.size() != grads.size()) throw Error("adam: parameter/gradient size mismatch");
    if (m_.empty()) {
      m_.assign(params.size(), 0.0);
      v_.assign(params.size(), 0.0);
    }
    if (m_.size() != params.size()) throw Error("adam: parameter count changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i] / c1, vhat = v_[i] / c2;
      params[i] = static_cast<Scalar>(params[i] - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

template <typename Scalar>
std::vector<Scalar> flatten(const ModelParams<Scalar>& p) {
  std::vector<Scalar> out;
  p.visit([&](const char*, const Scalar* d, Eigen::Index n) { out.insert(out.end(), d, d + n); });
  return out;
}

template <typename Scalar>
void unflatten(ModelParams<Scalar>& p, std::span<const Scalar> flat) {
  std::size_t k = 0;
  p.visit([&](const char*, Scalar* d, Eigen::Index n) {
    if (k + static_cast<std::size_t>(n) > flat.size()) throw Error("unflatten: buffer too small");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), n, d);
    k += static_cast<std::size_t>(n);
  });
  if (k != flat.size()) throw Error("unflatten: buffer size mismatch");
}

}  // namespace slcbm
