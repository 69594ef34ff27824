// Empirical divergence estimators: the mixture-based mini-batch KL
// estimator, exact small-support Wasserstein, the Donsker-Varadhan lower
// bound, and the empirical-KL convergence experiment. All pure functions.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "uda/autodiff.hpp"
#include "uda/common.hpp"
#include "uda/distributions.hpp"
#include "uda/transport.hpp"

namespace uda::est {

struct SampleBatch {
  std::vector<std::vector<double>> points;
  std::vector<dist::DiagGaussian> components;  // empty, or one per point

  std::size_t size() const { return points.size(); }
  std::size_t dim() const { return points.empty() ? 0 : points.front().size(); }

  void validate() const {
    require(!points.empty(), "SampleBatch: empty batch");
    for (const auto& x : points)
      require(x.size() == dim(), "SampleBatch: points have mixed dimensions");
    if (!components.empty()) {
      require(components.size() == points.size(),
              "SampleBatch: " + std::to_string(components.size()) + " components for " +
                  std::to_string(points.size()) + " points");
      for (const auto& g : components)
        require(g.dim() == dim(), "SampleBatch: component dimension mismatch");
    }
  }

  static SampleBatch from_points(std::vector<std::vector<double>> pts) {
    SampleBatch b;
    b.points = std::move(pts);
    b.validate();
    return b;
  }
};

namespace detail {

inline ad::Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.front().size());
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(n) * d);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return ad::Tensor({n, d}, std::move(flat));
}

inline ad::Tensor component_means(const SampleBatch& b) {
  std::vector<std::vector<double>> rows;
  rows.reserve(b.size());
  for (const auto& g : b.components) rows.push_back(g.mean);
  return stack_rows(rows);
}

inline ad::Tensor component_stddevs(const SampleBatch& b) {
  std::vector<std::vector<double>> rows;
  rows.reserve(b.size());
  for (const auto& g : b.components) rows.push_back(g.stddev);
  return stack_rows(rows);
}

// (1/b) sum_k [ log mixture_own(t_k) - log mixture_other(t_k) ] with t_k one
// reparameterized draw per component of `own`.
inline double mixture_direction(const ad::Tensor& own_mu, const ad::Tensor& own_sig,
                                const ad::Tensor& other_mu, const ad::Tensor& other_sig,
                                Rng& noise_rng) {
  const int b = own_mu.rows(), d = own_mu.cols();
  std::vector<double> samples(static_cast<std::size_t>(b) * d);
  for (std::size_t i = 0; i < samples.size(); ++i)
    samples[i] = own_mu.data()[i] + own_sig.data()[i] * noise_rng.gaussian();
  ad::Tensor t({b, d}, std::move(samples));
  ad::Tensor log_own = ad::logsumexp_axis1(ad::gaussian_logpdf_matrix(t, own_mu, own_sig));
  ad::Tensor log_other = ad::logsumexp_axis1(ad::gaussian_logpdf_matrix(t, other_mu, other_sig));
  const double mixture_sizes = std::log(static_cast<double>(other_mu.rows())) -
                               std::log(static_cast<double>(own_mu.rows()));
  return ad::mean(ad::sub(log_own, log_other)).value() + mixture_sizes;
}

}  // namespace detail

struct MinibatchKl {
  double forward;  // estimate of KL(P_T' || P_T), target mixture vs source
  double reverse;  // estimate of KL(P_T || P_T')
};

// Mixture form of the mini-batch KL estimator: each batch point carries a
// diagonal Gaussian; one reparameterized draw per point (per `draws` round)
// is scored against the two batch mixtures (1/b) sum_k N(.; mu_k, sig_k^2),
// log-sum-exp stabilized. Results are averaged over `draws`.
inline MinibatchKl minibatch_kl(const SampleBatch& src, const SampleBatch& tgt,
                                std::uint64_t seed, int draws = 1) {
  src.validate();
  tgt.validate();
  require(!src.components.empty() && !tgt.components.empty(),
          "minibatch_kl: batches must carry per-point Gaussians");
  require(src.size() >= 2 && tgt.size() >= 2,
          "minibatch_kl: batch sizes must be >= 2, got " + std::to_string(src.size()) + " and " +
              std::to_string(tgt.size()));
  require(src.dim() == tgt.dim(), "minibatch_kl: batch dimensions differ");
  require(draws >= 1, "minibatch_kl: draws must be >= 1");

  ad::Tensor mu_s = detail::component_means(src), sig_s = detail::component_stddevs(src);
  ad::Tensor mu_t = detail::component_means(tgt), sig_t = detail::component_stddevs(tgt);

  double fwd = 0.0, rev = 0.0;
  for (int k = 0; k < draws; ++k) {
    Rng fwd_rng = Rng::stream(seed, 2 * static_cast<std::uint64_t>(k));
    Rng rev_rng = Rng::stream(seed, 2 * static_cast<std::uint64_t>(k) + 1);
    fwd += detail::mixture_direction(mu_t, sig_t, mu_s, sig_s, fwd_rng);
    rev += detail::mixture_direction(mu_s, sig_s, mu_t, sig_t, rev_rng);
  }
  return {fwd / draws, rev / draws};
}

// Exact 1-D order-one Wasserstein distance between two equally weighted
// empirical measures: pair order statistics.
inline double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  require(a.size() == b.size(), "wasserstein1_1d: sample counts differ, " +
                                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  require(!a.empty(), "wasserstein1_1d: empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

// Exact optimal-transport value between categoricals under a nonnegative
// cost matrix. Supports <= 4 go through vertex enumeration, larger supports
// through min-cost flow; supports above 64 are rejected rather than
// approximated.
inline double wasserstein_discrete(const dist::Categorical& p, const dist::Categorical& q,
                                   const std::vector<std::vector<double>>& cost) {
  require(p.size() == q.size(), "wasserstein_discrete: support sizes differ");
  require(cost.size() == p.size(), "wasserstein_discrete: cost rows " +
                                       std::to_string(cost.size()) + " != support " +
                                       std::to_string(p.size()));
  for (const auto& row : cost) {
    require(row.size() == q.size(), "wasserstein_discrete: cost matrix is not square");
    for (double v : row)
      require(v >= 0.0, "wasserstein_discrete: negative cost " + std::to_string(v));
  }
  require(p.size() <= 64, "wasserstein_discrete: support " + std::to_string(p.size()) +
                              " exceeds the exact-solver cap of 64");
  if (p.size() <= 4) return detail::ot_vertex_enumeration(p.probs(), q.probs(), cost);
  return detail::ot_min_cost_flow(p.probs(), q.probs(), cost);
}

inline std::vector<std::vector<double>> discrete_metric_cost(std::size_t support) {
  std::vector<std::vector<double>> cost(support, std::vector<double>(support, 1.0));
  for (std::size_t i = 0; i < support; ++i) cost[i][i] = 0.0;
  return cost;
}

// Donsker-Varadhan objective mean_Q f - log mean_P exp(f); a lower bound on
// KL(Q || P) for any bounded probe f.
inline double dv_lower_bound(const std::function<double(std::span<const double>)>& f,
                             const SampleBatch& samples_q, const SampleBatch& samples_p) {
  samples_q.validate();
  samples_p.validate();
  double mean_q = 0.0;
  for (const auto& x : samples_q.points) mean_q += f(x);
  mean_q /= static_cast<double>(samples_q.size());

  std::vector<double> fp(samples_p.size());
  for (std::size_t i = 0; i < fp.size(); ++i) fp[i] = f(samples_p.points[i]);
  const double mx = *std::max_element(fp.begin(), fp.end());
  double acc = 0.0;
  for (double v : fp) acc += std::exp(v - mx);
  const double log_mean_p = mx + std::log(acc / static_cast<double>(fp.size()));
  return mean_q - log_mean_p;
}

struct KlConvergence {
  std::vector<double> kls;  // sorted per-trial plug-in KL(mu_hat || mu)
  double quantile(double level) const { return quantile_sorted(kls, level); }
};

// Draws `trials` empirical distributions of n samples from mu and records
// the plug-in KL of each histogram against mu.
inline KlConvergence empirical_kl_convergence(const dist::Categorical& mu, int n, int trials,
                                              std::uint64_t seed) {
  require(n >= 1, "empirical_kl_convergence: n must be >= 1");
  require(trials >= 1, "empirical_kl_convergence: trials must be >= 1");
  KlConvergence out;
  out.kls.resize(trials);
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(t));
    std::vector<int> counts(mu.size(), 0);
    for (int i = 0; i < n; ++i) ++counts[mu.sample(rng)];
    double kl = 0.0;
    for (std::size_t z = 0; z < mu.size(); ++z) {
      if (counts[z] == 0) continue;
      const double phat = static_cast<double>(counts[z]) / n;
      kl += phat * std::log(phat / mu[z]);
    }
    out.kls[t] = std::max(kl, 0.0);
  }
  std::sort(out.kls.begin(), out.kls.end());
  return out;
}

// High-probability envelope for the plug-in KL of an n-sample empirical
// distribution on a finite support: (|Z|/n) log(n+1) + 1/(n log(1/delta)).
inline double plugin_kl_quantile_envelope(std::size_t support, int n, double delta) {
  require(delta > 0.0 && delta < 1.0, "plugin_kl_quantile_envelope: delta outside (0,1)");
  return (static_cast<double>(support) / n) * std::log(static_cast<double>(n) + 1.0) +
         1.0 / (n * std::log(1.0 / delta));
}

}  // namespace uda::est
