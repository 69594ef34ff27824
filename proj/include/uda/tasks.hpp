// Synthetic UDA task generators with closed-form inter-domain divergences,
// plus an IDX image-file reader for optional real-data runs.
//
// Target labels sit behind an evaluation scope: trainers receive an
// input-only view of the target domain, evaluation code asks the scope.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "uda/common.hpp"
#include "uda/distributions.hpp"
#include "uda/estimators.hpp"

namespace uda::tasks {

struct LabeledSample {
  std::vector<std::vector<double>> x;
  std::vector<int> y;

  std::size_t size() const { return x.size(); }
};

struct LinearClassifier {
  std::vector<double> weights;
  double bias = 0.0;

  int predict(const std::vector<double>& x) const {
    double s = bias;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * x[k];
    return s > 0.0 ? 1 : 0;
  }
};

namespace detail {

// Two-class isotropic Gaussian mixture with optional label flipping.
struct GaussianDomain {
  std::vector<std::vector<double>> class_means;  // [class][dim]
  double sigma = 1.0;
  std::vector<double> priors;
  double label_flip_prob = 0.0;

  int dim() const { return static_cast<int>(class_means.front().size()); }

  LabeledSample sample(int count, Rng& rng) const {
    LabeledSample out;
    out.x.reserve(count);
    out.y.reserve(count);
    dist::Categorical prior(priors);
    for (int i = 0; i < count; ++i) {
      const int cls = prior.sample(rng);
      std::vector<double> point(class_means[cls]);
      for (auto& v : point) v += sigma * rng.gaussian();
      int label = cls;
      if (label_flip_prob > 0.0 && rng.uniform() < label_flip_prob)
        label = 1 - label;
      out.x.push_back(std::move(point));
      out.y.push_back(label);
    }
    return out;
  }

  // Exact 0-1 risk of a linear rule on the mixture (binary classes).
  double risk01(const LinearClassifier& c) const {
    require(class_means.size() == 2, "risk01: analytic form needs two classes");
    double norm = 0.0;
    for (double w : c.weights) norm += w * w;
    norm = std::sqrt(norm);
    require(norm > 0.0, "risk01: zero weight vector");
    double risk = 0.0;
    for (int cls = 0; cls < 2; ++cls) {
      double margin = c.bias;
      for (std::size_t k = 0; k < c.weights.size(); ++k)
        margin += c.weights[k] * class_means[cls][k];
      const double p_pred_one = norm_cdf(margin / (sigma * norm));
      const double p_wrong_clean = cls == 1 ? 1.0 - p_pred_one : p_pred_one;
      risk += priors[cls] * ((1.0 - label_flip_prob) * p_wrong_clean +
                             label_flip_prob * (1.0 - p_wrong_clean));
    }
    return risk;
  }
};

}  // namespace detail

class DomainPair;

// Capability object handing out labelled target data for evaluation only.
class TargetEvalScope {
 public:
  LabeledSample sample_target(int count, std::uint64_t seed) const;
  double analytic_target_risk01(const LinearClassifier& c) const;

 private:
  friend class DomainPair;
  explicit TargetEvalScope(const DomainPair* owner) : owner_(owner) {}
  const DomainPair* owner_;
};

class DomainPair {
 public:
  static DomainPair from_gaussians(detail::GaussianDomain source, detail::GaussianDomain target,
                                   double true_kl) {
    DomainPair p;
    p.source_ = std::move(source);
    p.target_ = std::move(target);
    p.true_kl_forward_ = true_kl;  // symmetric under a pure mean shift
    p.true_kl_reverse_ = true_kl;
    return p;
  }

  static DomainPair from_data(LabeledSample source, LabeledSample target) {
    DomainPair p;
    p.source_data_ = std::move(source);
    p.target_data_ = std::move(target);
    return p;
  }

  LabeledSample sample_source(int count, std::uint64_t seed) const {
    if (source_) {
      Rng rng = Rng::stream(seed, 0xda7a);
      return source_->sample(count, rng);
    }
    return slice(*source_data_, count);
  }

  std::vector<std::vector<double>> sample_target_inputs(int count, std::uint64_t seed) const {
    return sample_target_full(count, seed).x;  // labels never leave this call
  }

  TargetEvalScope eval_scope() const { return TargetEvalScope(this); }

  double analytic_source_risk01(const LinearClassifier& c) const {
    require(source_.has_value(), "analytic_source_risk01: no closed-form source domain");
    return source_->risk01(c);
  }

  std::optional<double> true_kl_forward() const { return true_kl_forward_; }
  std::optional<double> true_kl_reverse() const { return true_kl_reverse_; }

  int dim() const {
    if (source_) return source_->dim();
    return static_cast<int>(source_data_->x.front().size());
  }
  int classes() const { return 2; }

 private:
  friend class TargetEvalScope;

  LabeledSample sample_target_full(int count, std::uint64_t seed) const {
    if (target_) {
      Rng rng = Rng::stream(seed, 0x7a67);
      return target_->sample(count, rng);
    }
    return slice(*target_data_, count);
  }

  static LabeledSample slice(const LabeledSample& data, int count) {
    require(count <= static_cast<int>(data.size()),
            "requested " + std::to_string(count) + " points from a fixed dataset of " +
                std::to_string(data.size()));
    LabeledSample out;
    out.x.assign(data.x.begin(), data.x.begin() + count);
    out.y.assign(data.y.begin(), data.y.begin() + count);
    return out;
  }

  std::optional<detail::GaussianDomain> source_, target_;
  std::optional<LabeledSample> source_data_, target_data_;
  std::optional<double> true_kl_forward_, true_kl_reverse_;
};

inline LabeledSample TargetEvalScope::sample_target(int count, std::uint64_t seed) const {
  return owner_->sample_target_full(count, seed);
}
inline double TargetEvalScope::analytic_target_risk01(const LinearClassifier& c) const {
  require(owner_->target_.has_value(), "analytic_target_risk01: no closed-form target domain");
  return owner_->target_->risk01(c);
}

// Source classes at +-mean_scale * e1; target shifts every class mean by
// delta. Shared priors, so the joint divergence chain rule gives
// KL = ||delta||^2 / (2 sigma^2) in both directions.
inline DomainPair gaussian_shift_task(int d, const std::vector<double>& delta, double sigma,
                                      const std::vector<double>& class_priors,
                                      double mean_scale = 1.0, double target_flip_prob = 0.0) {
  require(sigma > 0.0, "gaussian_shift_task: sigma must be > 0");
  require(static_cast<int>(delta.size()) == d, "gaussian_shift_task: delta must have dimension d");
  require(class_priors.size() == 2, "gaussian_shift_task: two class priors expected");
  detail::GaussianDomain src;
  src.sigma = sigma;
  src.priors = class_priors;
  src.class_means.assign(2, std::vector<double>(d, 0.0));
  src.class_means[0][0] = -mean_scale;
  src.class_means[1][0] = mean_scale;
  detail::GaussianDomain tgt = src;
  tgt.label_flip_prob = target_flip_prob;
  double shift_sq = 0.0;
  for (int k = 0; k < d; ++k) {
    tgt.class_means[0][k] += delta[k];
    tgt.class_means[1][k] += delta[k];
    shift_sq += sqr(delta[k]);
  }
  return DomainPair::from_gaussians(std::move(src), std::move(tgt),
                                    shift_sq / (2.0 * sqr(sigma)));
}

// 2-D two-class task with source means (+-1, 0); target inputs are rotated
// about the origin, so target means are the rotated source means and
// KL = (1 - cos angle) / sigma^2 under shared priors.
inline DomainPair rotated_gaussians_task(double angle_deg, double sigma = 1.0,
                                         double target_flip_prob = 0.0) {
  require(angle_deg >= 0.0 && angle_deg <= 90.0,
          "rotated_gaussians_task: angle must lie in [0, 90] degrees");
  require(sigma > 0.0, "rotated_gaussians_task: sigma must be > 0");
  const double a = angle_deg * M_PI / 180.0;
  detail::GaussianDomain src;
  src.sigma = sigma;
  src.priors = {0.5, 0.5};
  src.class_means = {{-1.0, 0.0}, {1.0, 0.0}};
  detail::GaussianDomain tgt = src;
  tgt.label_flip_prob = target_flip_prob;
  for (auto& mean : tgt.class_means) {
    const double x = mean[0], y = mean[1];
    mean[0] = std::cos(a) * x - std::sin(a) * y;
    mean[1] = std::sin(a) * x + std::cos(a) * y;
  }
  return DomainPair::from_gaussians(std::move(src), std::move(tgt),
                                    (1.0 - std::cos(a)) / sqr(sigma));
}

// Wraps raw input points as a representation batch whose per-point Gaussian
// has a fixed isotropic bandwidth, for feeding the mixture KL estimator.
inline est::SampleBatch smoothed_input_batch(const std::vector<std::vector<double>>& inputs,
                                             double bandwidth) {
  require(bandwidth > 0.0, "smoothed_input_batch: bandwidth must be > 0");
  est::SampleBatch batch;
  batch.points = inputs;
  for (const auto& x : inputs)
    batch.components.emplace_back(x, std::vector<double>(x.size(), bandwidth));
  batch.validate();
  return batch;
}

// ---------------------------------------------------------------------------
// IDX binary format (big-endian magic 0x00 0x00 dtype ndim, u32 dims, payload)
// ---------------------------------------------------------------------------

struct IdxData {
  std::vector<int> dims;
  std::vector<double> values;  // unsigned bytes rescaled to [0, 1]
};

inline IdxData idx_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "idx_read: cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  require(raw.size() >= 4, "idx_read: " + path + ": file shorter than the 4-byte magic");
  require(raw[0] == 0 && raw[1] == 0,
          "idx_read: " + path + ": bad magic bytes at offset 0 (expected 0x00 0x00)");
  require(raw[2] == 0x08, "idx_read: " + path + ": unsupported dtype 0x" +
                              std::to_string(raw[2]) + " at byte offset 2 (only unsigned byte)");
  const int ndim = raw[3];
  require(ndim >= 1 && ndim <= 4, "idx_read: " + path + ": implausible rank " +
                                      std::to_string(ndim) + " at byte offset 3");
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(ndim);
  require(raw.size() >= header, "idx_read: " + path + ": truncated dimension header, expected " +
                                    std::to_string(header) + " bytes, got " +
                                    std::to_string(raw.size()));
  IdxData out;
  std::size_t count = 1;
  for (int k = 0; k < ndim; ++k) {
    const std::size_t off = 4 + 4 * static_cast<std::size_t>(k);
    const std::uint32_t dim = (static_cast<std::uint32_t>(raw[off]) << 24) |
                              (static_cast<std::uint32_t>(raw[off + 1]) << 16) |
                              (static_cast<std::uint32_t>(raw[off + 2]) << 8) |
                              static_cast<std::uint32_t>(raw[off + 3]);
    require(dim > 0, "idx_read: " + path + ": zero extent at byte offset " + std::to_string(off));
    out.dims.push_back(static_cast<int>(dim));
    count *= dim;
  }
  require(raw.size() == header + count,
          "idx_read: " + path + ": payload size mismatch, header declares " +
              std::to_string(count) + " bytes (file should be " + std::to_string(header + count) +
              " bytes, got " + std::to_string(raw.size()) + ")");
  out.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) out.values[i] = raw[header + i] / 255.0;
  return out;
}

inline void idx_write_u8(const std::string& path, const std::vector<int>& dims,
                         const std::vector<unsigned char>& payload) {
  std::size_t count = 1;
  for (int d : dims) {
    require(d > 0, "idx_write_u8: extents must be positive");
    count *= static_cast<std::size_t>(d);
  }
  require(count == payload.size(), "idx_write_u8: payload length " +
                                       std::to_string(payload.size()) + " does not match dims (" +
                                       std::to_string(count) + ")");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "idx_write_u8: cannot open " + path);
  const unsigned char magic[4] = {0, 0, 0x08, static_cast<unsigned char>(dims.size())};
  out.write(reinterpret_cast<const char*>(magic), 4);
  for (int d : dims) {
    const std::uint32_t v = static_cast<std::uint32_t>(d);
    const unsigned char be[4] = {static_cast<unsigned char>(v >> 24),
                                 static_cast<unsigned char>((v >> 16) & 0xff),
                                 static_cast<unsigned char>((v >> 8) & 0xff),
                                 static_cast<unsigned char>(v & 0xff)};
    out.write(reinterpret_cast<const char*>(be), 4);
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
}

}  // namespace uda::tasks
