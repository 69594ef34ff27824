// Parametric distributions with exact log-densities, reparameterized
// sampling and closed-form divergences. Immutable value types.
#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "uda/autodiff.hpp"
#include "uda/common.hpp"

namespace uda::dist {

struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> stddev;

  DiagGaussian(std::vector<double> mean_, std::vector<double> stddev_)
      : mean(std::move(mean_)), stddev(std::move(stddev_)) {
    require(mean.size() == stddev.size(), "DiagGaussian: mean/stddev dimension mismatch");
    require(!mean.empty(), "DiagGaussian: dimension must be positive");
    for (double s : stddev) require(s > 0.0, "DiagGaussian: stddev components must be > 0");
  }

  std::size_t dim() const { return mean.size(); }

  double log_pdf(std::span<const double> x) const {
    require(x.size() == dim(), "log_pdf: point dimension " + std::to_string(x.size()) +
                                   " != distribution dimension " + std::to_string(dim()));
    double acc = -0.5 * static_cast<double>(dim()) * std::log(2.0 * M_PI);
    for (std::size_t k = 0; k < dim(); ++k) {
      acc -= std::log(stddev[k]);
      acc -= 0.5 * sqr((x[k] - mean[k]) / stddev[k]);
    }
    return acc;
  }
};

class Categorical {
 public:
  // Renormalizes when the mass is within 1e-9 of one, rejects otherwise.
  explicit Categorical(std::vector<double> probs) : p_(std::move(probs)) {
    require(!p_.empty(), "Categorical: empty support");
    double total = 0.0;
    for (double v : p_) {
      require(v >= 0.0, "Categorical: negative probability " + std::to_string(v));
      total += v;
    }
    require(std::abs(total - 1.0) <= 1e-9,
            "Categorical: probabilities sum to " + std::to_string(total) + ", not 1");
    for (double& v : p_) v /= total;
  }

  static Categorical uniform(std::size_t support) {
    return Categorical(std::vector<double>(support, 1.0 / static_cast<double>(support)));
  }
  static Categorical point_mass(std::size_t support, std::size_t atom) {
    std::vector<double> p(support, 0.0);
    p.at(atom) = 1.0;
    return Categorical(std::move(p));
  }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const std::vector<double>& probs() const { return p_; }

  int sample(Rng& rng) const {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < p_.size(); ++i) {
      acc += p_[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(p_.size()) - 1;
  }

 private:
  std::vector<double> p_;
};

inline void check_same_support(const Categorical& p, const Categorical& q, const char* op) {
  require(p.size() == q.size(), std::string(op) + ": support sizes differ, " +
                                    std::to_string(p.size()) + " vs " + std::to_string(q.size()));
}

// KL(p || q); +infinity when q fails to dominate p.
inline ExtReal kl(const Categorical& p, const Categorical& q) {
  check_same_support(p, q, "kl");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return ExtReal::infinity();
    acc += p[i] * std::log(p[i] / q[i]);
  }
  return ExtReal::finite(std::max(acc, 0.0));
}

inline double kl(const DiagGaussian& p, const DiagGaussian& q) {
  require(p.dim() == q.dim(), "kl: gaussian dimensions differ");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.dim(); ++k) {
    acc += std::log(q.stddev[k] / p.stddev[k]) +
           (sqr(p.stddev[k]) + sqr(p.mean[k] - q.mean[k])) / (2.0 * sqr(q.stddev[k])) - 0.5;
  }
  return std::max(acc, 0.0);
}

inline ExtReal jeffrey(const Categorical& p, const Categorical& q) { return kl(p, q) + kl(q, p); }
inline double jeffrey(const DiagGaussian& p, const DiagGaussian& q) { return kl(p, q) + kl(q, p); }

inline double tv(const Categorical& p, const Categorical& q) {
  check_same_support(p, q, "tv");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

// mean + stddev .* noise, differentiable through mean and stddev. Shapes are
// either vectors (single point) or matrices (one row per point).
inline ad::Tensor sample_reparam(const ad::Tensor& mean, const ad::Tensor& stddev,
                                 const std::vector<double>& noise) {
  require(noise.size() == mean.size(), "sample_reparam: noise size " +
                                           std::to_string(noise.size()) + " != parameter size " +
                                           std::to_string(mean.size()));
  return ad::add(mean, ad::mul(stddev, ad::Tensor(mean.shape(), noise)));
}

inline std::vector<double> sample_reparam(const DiagGaussian& g, std::span<const double> noise) {
  require(noise.size() == g.dim(), "sample_reparam: noise dimension mismatch");
  std::vector<double> out(g.dim());
  for (std::size_t k = 0; k < g.dim(); ++k) out[k] = g.mean[k] + g.stddev[k] * noise[k];
  return out;
}

}  // namespace uda::dist
