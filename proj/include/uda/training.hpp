// Trainers for the bound-inspired algorithms: ERM, KL-guided marginal
// alignment, gradient penalty, controlling label information, and SGLD with
// per-step trajectory logging.
//
// Determinism contract: everything is driven by named sub-streams of the
// config seed (source batches, target batches, source noise, target noise,
// SGLD noise, init, eval), so disabling a term never shifts the draws of the
// remaining terms and reduction configs reproduce each other step for step.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "uda/autodiff.hpp"
#include "uda/bounds.hpp"
#include "uda/common.hpp"
#include "uda/distributions.hpp"
#include "uda/estimators.hpp"
#include "uda/tasks.hpp"

namespace uda::training {

struct TrainConfig {
  double lr = 0.05;
  int batch = 32;
  int epochs = 10;
  double lambda1 = 0.0;     // gradient-penalty weight
  double lambda2 = 0.0;     // auxiliary-classifier (label information) weight
  double beta1 = 0.0;       // weight on KL(P_T' || P_T)
  double beta2 = 0.0;       // weight on KL(P_T || P_T')
  double sgld_sigma = 0.0;  // per-step isotropic noise scale; 0 = plain SGD
  std::uint64_t seed = 1;
  int repr_dim = 2;
  int hidden_dim = 0;         // 0 = linear encoder
  double init_sigma_bias = -2.0;  // stddev-head bias at init (softplus scale)
  ad::HvpMode hvp_mode = ad::HvpMode::kFiniteDifference;
  bool cl_source_term = false;  // add the source pseudo-label term to the aux step
  int log_every = 0;            // trajectory cadence; 0 = auto (1 if <=5000 steps, else 10)

  bool uses_target() const { return beta1 > 0.0 || beta2 > 0.0 || lambda2 > 0.0; }

  void validate() const {
    require(lr > 0.0, "TrainConfig: lr must be > 0");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(lambda1 >= 0.0 && lambda2 >= 0.0 && beta1 >= 0.0 && beta2 >= 0.0,
            "TrainConfig: regularizer weights must be >= 0");
    require(sgld_sigma >= 0.0, "TrainConfig: sgld_sigma must be >= 0");
    require(repr_dim >= 1, "TrainConfig: repr_dim must be >= 1");
    require(batch >= 1, "TrainConfig: batch must be >= 1");
    require(batch >= 2 || !(beta1 > 0.0 || beta2 > 0.0),
            "TrainConfig: alignment needs batch >= 2 (the mixture estimator is degenerate)");
  }
};

// Stochastic-representation classifier: encoder emits a diagonal Gaussian
// over the representation space, the linear head classifies a sample of it.
// aux_* is the auxiliary classifier; it always mirrors the head's shape.
struct EncoderClassifier {
  int input_dim = 0, hidden_dim = 0, repr_dim = 0, classes = 0;
  std::vector<std::pair<std::string, ad::Tensor>> params;

  const ad::Tensor& get(const std::string& name) const {
    for (const auto& [k, v] : params)
      if (k == name) return v;
    throw error("EncoderClassifier: no parameter named " + name);
  }
  void set(const std::string& name, ad::Tensor value) {
    for (auto& [k, v] : params)
      if (k == name) {
        v = std::move(value);
        return;
      }
    throw error("EncoderClassifier: no parameter named " + name);
  }
  bool is_aux(std::size_t index) const { return params[index].first.rfind("aux_", 0) == 0; }

  static EncoderClassifier init(int input_dim, int repr_dim, int classes, int hidden_dim,
                                std::uint64_t seed, double sigma_bias = -2.0) {
    EncoderClassifier model;
    model.input_dim = input_dim;
    model.hidden_dim = hidden_dim;
    model.repr_dim = repr_dim;
    model.classes = classes;
    Rng rng = Rng::stream(seed, 0x1217);
    auto dense = [&](int rows, int cols) {
      std::vector<double> w(static_cast<std::size_t>(rows) * cols);
      const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
      for (auto& v : w) v = scale * rng.gaussian();
      return ad::Tensor({rows, cols}, std::move(w));
    };
    const int enc_in = hidden_dim > 0 ? hidden_dim : input_dim;
    if (hidden_dim > 0) {
      model.params.emplace_back("hid_w", dense(input_dim, hidden_dim));
      model.params.emplace_back("hid_b", ad::Tensor::zeros({hidden_dim}));
    }
    model.params.emplace_back("mu_w", dense(enc_in, repr_dim));
    model.params.emplace_back("mu_b", ad::Tensor::zeros({repr_dim}));
    // a low stddev-head bias makes initial representations track the means
    // so domain misalignment is visible from the start; alignment-plus-
    // penalty runs want it higher (the mixture curvature scales as 1/sigma^4)
    model.params.emplace_back("sig_w", dense(enc_in, repr_dim));
    model.params.emplace_back("sig_b", ad::Tensor::full({repr_dim}, sigma_bias));
    model.params.emplace_back("cls_w", dense(repr_dim, classes));
    model.params.emplace_back("cls_b", ad::Tensor::zeros({classes}));
    // the auxiliary classifier starts as a copy of the head
    model.params.emplace_back("aux_w", model.get("cls_w"));
    model.params.emplace_back("aux_b", model.get("cls_b"));
    return model;
  }
};

struct EvalMetrics {
  double risk01 = 0.0;
  double ce = 0.0;
  double accuracy = 0.0;
};

using EvalFn = std::function<EvalMetrics(const EncoderClassifier&)>;

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_ce = 0.0;
  double src_risk01 = 0.0;
  double tgt_risk01 = 0.0;
  double tgt_ce = 0.0;
  double tgt_acc = 0.0;
  double jeffrey = 0.0;  // forward + reverse mixture estimates on representations
  double kl_fwd_est = 0.0;
  double kl_rev_est = 0.0;
  double cl_penalty = 0.0;  // ||W - W~||^2 after the epoch
};

struct TrainResult {
  EncoderClassifier model;
  bounds::TrajectoryLog trajectory;
  std::vector<EpochMetrics> epochs;
};

namespace detail {

struct Layout {
  int hid_w = -1, hid_b = -1, mu_w = -1, mu_b = -1, sig_w = -1, sig_b = -1;
  int cls_w = -1, cls_b = -1, aux_w = -1, aux_b = -1;

  static Layout of(const EncoderClassifier& model) {
    Layout l;
    for (int i = 0; i < static_cast<int>(model.params.size()); ++i) {
      const auto& name = model.params[i].first;
      if (name == "hid_w") l.hid_w = i;
      else if (name == "hid_b") l.hid_b = i;
      else if (name == "mu_w") l.mu_w = i;
      else if (name == "mu_b") l.mu_b = i;
      else if (name == "sig_w") l.sig_w = i;
      else if (name == "sig_b") l.sig_b = i;
      else if (name == "cls_w") l.cls_w = i;
      else if (name == "cls_b") l.cls_b = i;
      else if (name == "aux_w") l.aux_w = i;
      else if (name == "aux_b") l.aux_b = i;
    }
    return l;
  }
};

struct Encoded {
  ad::Tensor mu, sig, t;
};

// sigma is softplus-activated with a small floor so it stays strictly
// positive through float underflow.
inline Encoded encode(const std::vector<ad::Tensor>& p, const Layout& l, const ad::Tensor& x,
                      const std::vector<double>& noise) {
  ad::Tensor h = x;
  if (l.hid_w >= 0) h = ad::relu(ad::affine(h, p[l.hid_w], p[l.hid_b]));
  Encoded e{ad::affine(h, p[l.mu_w], p[l.mu_b]),
            ad::add_scalar(ad::softplus(ad::affine(h, p[l.sig_w], p[l.sig_b])), 1e-6),
            ad::Tensor()};
  e.t = dist::sample_reparam(e.mu, e.sig, noise);
  return e;
}

inline ad::Tensor rows_subset(const tasks::LabeledSample& s, const std::vector<int>& idx) {
  const int d = static_cast<int>(s.x.front().size());
  std::vector<double> flat(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int k = 0; k < d; ++k) flat[i * d + k] = s.x[idx[i]][k];
  return ad::Tensor({static_cast<int>(idx.size()), d}, std::move(flat));
}

inline ad::Tensor rows_subset(const std::vector<std::vector<double>>& xs,
                              const std::vector<int>& idx) {
  const int d = static_cast<int>(xs.front().size());
  std::vector<double> flat(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (int k = 0; k < d; ++k) flat[i * d + k] = xs[idx[i]][k];
  return ad::Tensor({static_cast<int>(idx.size()), d}, std::move(flat));
}

// Batch selection: iid with replacement, except that asking for the whole
// set (or more) returns it in order so full-batch runs are exactly the
// population pass.
inline std::vector<int> sample_indices(Rng& rng, int n, int b) {
  std::vector<int> idx;
  if (b >= n) {
    idx.resize(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  idx.resize(b);
  for (int i = 0; i < b; ++i) idx[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  return idx;
}

// Mixture estimate of KL(P_a || P_b) from taped representation batches:
// mean_k [ log (1/|a|) sum_j N(t_k; a_j) - log (1/|b|) sum_j N(t_k; b_j) ].
inline ad::Tensor taped_mixture_kl(const Encoded& a, const Encoded& b) {
  ad::Tensor log_own = ad::logsumexp_axis1(ad::gaussian_logpdf_matrix(a.t, a.mu, a.sig));
  ad::Tensor log_other = ad::logsumexp_axis1(ad::gaussian_logpdf_matrix(a.t, b.mu, b.sig));
  const double size_shift = std::log(static_cast<double>(b.mu.rows())) -
                            std::log(static_cast<double>(a.mu.rows()));
  return ad::add_scalar(ad::mean(ad::sub(log_own, log_other)), size_shift);
}

struct StepBatch {
  std::vector<int> src_idx, tgt_idx;
  std::vector<double> noise_s, noise_t;
};

struct LossParts {
  double total = 0.0;
  double ce = 0.0;
};

struct GradEval {
  std::vector<ad::Tensor> grads;  // aligned with model.params; aux entries zero
  LossParts loss;
};

}  // namespace detail

// Mean 0-1 risk, cross-entropy, and accuracy on a labelled sample;
// representations are evaluated at the posterior mean (no noise).
inline EvalMetrics evaluate(const EncoderClassifier& model, const tasks::LabeledSample& sample) {
  require(!sample.x.empty(), "evaluate: empty sample");
  const auto layout = detail::Layout::of(model);
  std::vector<ad::Tensor> values;
  values.reserve(model.params.size());
  for (const auto& [name, v] : model.params) values.push_back(v);
  std::vector<int> all(sample.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  ad::Tensor x = detail::rows_subset(sample, all);
  std::vector<double> zero_noise(sample.size() * model.repr_dim, 0.0);
  auto enc = detail::encode(values, layout, x, zero_noise);
  ad::Tensor logits = ad::affine(enc.t, values[layout.cls_w], values[layout.cls_b]);

  EvalMetrics out;
  out.ce = ad::softmax_cross_entropy(logits, sample.y).value();
  double wrong = 0.0;
  const int k = model.classes;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    int best = 0;
    for (int c = 1; c < k; ++c)
      if (logits[i * k + c] > logits[i * k + best]) best = c;
    wrong += best != sample.y[i] ? 1.0 : 0.0;
  }
  out.risk01 = wrong / static_cast<double>(sample.size());
  out.accuracy = 1.0 - out.risk01;
  return out;
}

namespace detail {

// One loss-and-gradient evaluation at the given parameter values, for a
// fixed batch and fixed noise. Everything the update needs flows through
// here so the gradient-penalty probes see exactly the same objective.
inline GradEval eval_grads(const EncoderClassifier& model, const Layout& layout,
                           const std::vector<ad::Tensor>& values,
                           const tasks::LabeledSample& src,
                           const std::vector<std::vector<double>>& tgt, const TrainConfig& cfg,
                           const StepBatch& batch) {
  ad::Tape tape;
  std::vector<ad::Tensor> leaves(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    leaves[i] = model.is_aux(i) ? values[i] : tape.leaf(values[i]);  // aux enters as constant

  ad::Tensor xs = rows_subset(src, batch.src_idx);
  auto enc_s = encode(leaves, layout, xs, batch.noise_s);
  std::vector<int> labels(batch.src_idx.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = src.y[batch.src_idx[i]];
  ad::Tensor logits = ad::affine(enc_s.t, leaves[layout.cls_w], leaves[layout.cls_b]);
  ad::Tensor loss = ad::softmax_cross_entropy(logits, labels);
  const double ce_value = loss.value();

  if (cfg.beta1 > 0.0 || cfg.beta2 > 0.0) {
    ad::Tensor xt = rows_subset(tgt, batch.tgt_idx);
    auto enc_t = encode(leaves, layout, xt, batch.noise_t);
    if (cfg.beta1 > 0.0)
      loss = ad::add(loss, ad::scale(taped_mixture_kl(enc_t, enc_s), cfg.beta1));
    if (cfg.beta2 > 0.0)
      loss = ad::add(loss, ad::scale(taped_mixture_kl(enc_s, enc_t), cfg.beta2));
  }
  if (cfg.lambda2 > 0.0) {
    ad::Tensor gap = ad::add(ad::l2_norm_squared(ad::sub(leaves[layout.cls_w], values[layout.aux_w])),
                             ad::l2_norm_squared(ad::sub(leaves[layout.cls_b], values[layout.aux_b])));
    loss = ad::add(loss, ad::scale(gap, cfg.lambda2));
  }

  GradEval out;
  out.loss.total = loss.value();
  out.loss.ce = ce_value;
  auto grads = tape.backward(loss);
  out.grads.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out.grads[i] = model.is_aux(i) ? ad::Tensor::zeros(values[i].shape())
                                   : grads.grad(leaves[i]).detached();
  return out;
}

inline double stacked_norm(const std::vector<ad::Tensor>& ts) {
  double acc = 0.0;
  for (const auto& t : ts)
    for (double v : t.data()) acc += v * v;
  return std::sqrt(acc);
}

// Total update direction at the given parameter point: base gradient plus,
// when the penalty is on, 2 lambda1 H g with H the Hessian of the same
// objective (finite differences on the gradient by default, double
// backward in exact mode).
inline GradEval total_grad(const EncoderClassifier& model, const Layout& layout,
                           const std::vector<ad::Tensor>& values,
                           const tasks::LabeledSample& src,
                           const std::vector<std::vector<double>>& tgt, const TrainConfig& cfg,
                           const StepBatch& batch) {
  GradEval base = eval_grads(model, layout, values, src, tgt, cfg, batch);
  if (cfg.lambda1 <= 0.0) return base;

  std::vector<ad::Tensor> hv(values.size());
  if (cfg.hvp_mode == ad::HvpMode::kFiniteDifference) {
    const double g_norm = stacked_norm(base.grads);
    if (g_norm == 0.0) return base;
    double w_norm = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!model.is_aux(i)) w_norm += sqr(values[i].l2_norm());
    w_norm = std::sqrt(w_norm);
    const double eps = std::sqrt(std::numeric_limits<double>::epsilon()) * (1.0 + w_norm) /
                       std::max(g_norm, 1e-12);
    auto shifted = [&](double sign) {
      std::vector<ad::Tensor> moved(values.size());
      for (std::size_t i = 0; i < values.size(); ++i) {
        std::vector<double> d = values[i].data();
        const auto& g = base.grads[i].data();
        for (std::size_t k = 0; k < d.size(); ++k) d[k] += sign * eps * g[k];
        moved[i] = ad::Tensor(values[i].shape(), std::move(d));
      }
      return eval_grads(model, layout, moved, src, tgt, cfg, batch).grads;
    };
    auto plus = shifted(1.0), minus = shifted(-1.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::vector<double> d(values[i].size());
      for (std::size_t k = 0; k < d.size(); ++k)
        d[k] = (plus[i][k] - minus[i][k]) / (2.0 * eps);
      hv[i] = ad::Tensor(values[i].shape(), std::move(d));
    }
  } else {
    // double backward through the adjoint graph
    ad::Tape tape;
    std::vector<ad::Tensor> leaves(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      leaves[i] = model.is_aux(i) ? values[i] : tape.leaf(values[i]);
    ad::Tensor xs = rows_subset(src, batch.src_idx);
    auto enc_s = encode(leaves, layout, xs, batch.noise_s);
    std::vector<int> labels(batch.src_idx.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = src.y[batch.src_idx[i]];
    ad::Tensor loss =
        ad::softmax_cross_entropy(ad::affine(enc_s.t, leaves[layout.cls_w], leaves[layout.cls_b]), labels);
    if (cfg.beta1 > 0.0 || cfg.beta2 > 0.0) {
      ad::Tensor xt = rows_subset(tgt, batch.tgt_idx);
      auto enc_t = encode(leaves, layout, xt, batch.noise_t);
      if (cfg.beta1 > 0.0) loss = ad::add(loss, ad::scale(taped_mixture_kl(enc_t, enc_s), cfg.beta1));
      if (cfg.beta2 > 0.0) loss = ad::add(loss, ad::scale(taped_mixture_kl(enc_s, enc_t), cfg.beta2));
    }
    if (cfg.lambda2 > 0.0) {
      ad::Tensor gap = ad::add(ad::l2_norm_squared(ad::sub(leaves[layout.cls_w], values[layout.aux_w])),
                               ad::l2_norm_squared(ad::sub(leaves[layout.cls_b], values[layout.aux_b])));
      loss = ad::add(loss, ad::scale(gap, cfg.lambda2));
    }
    auto grads = tape.backward(loss);
    ad::Tensor dot_sum = ad::Tensor::scalar(0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (model.is_aux(i)) continue;
      ad::Tensor g = grads.grad(leaves[i]);
      if (!g.on_tape()) continue;
      dot_sum = ad::add(dot_sum, ad::dot(g, base.grads[i]));
    }
    auto second = tape.backward(dot_sum);
    for (std::size_t i = 0; i < values.size(); ++i)
      hv[i] = model.is_aux(i) ? ad::Tensor::zeros(values[i].shape())
                              : second.grad(leaves[i]).detached();
  }

  for (std::size_t i = 0; i < values.size(); ++i) {
    if (model.is_aux(i)) continue;
    std::vector<double> d = base.grads[i].data();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += 2.0 * cfg.lambda1 * hv[i][k];
    base.grads[i] = ad::Tensor(base.grads[i].shape(), std::move(d));
  }
  return base;
}

}  // namespace detail

// One auxiliary-classifier update: pseudo labels come from the main head on
// the (pre-update) target representations with gradients cut, then the
// auxiliary head takes one cross-entropy step on them alone.
inline void cl_update(EncoderClassifier& model, const ad::Tensor& repr_t_const,
                      const std::vector<int>& pseudo_labels, double lr,
                      const ad::Tensor* repr_s_const = nullptr,
                      const std::vector<int>* pseudo_labels_s = nullptr) {
  ad::Tape tape;
  ad::Tensor aux_w = tape.leaf(model.get("aux_w"));
  ad::Tensor aux_b = tape.leaf(model.get("aux_b"));
  ad::Tensor loss = ad::softmax_cross_entropy(ad::affine(repr_t_const, aux_w, aux_b), pseudo_labels);
  if (repr_s_const != nullptr && pseudo_labels_s != nullptr)
    loss = ad::add(loss,
                   ad::softmax_cross_entropy(ad::affine(*repr_s_const, aux_w, aux_b), *pseudo_labels_s));
  auto grads = tape.backward(loss);
  for (const char* name : {"aux_w", "aux_b"}) {
    const ad::Tensor& leaf = std::string(name) == "aux_w" ? aux_w : aux_b;
    std::vector<double> d = model.get(name).data();
    const ad::Tensor g = grads.grad(leaf);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= lr * g[k];
    model.set(name, ad::Tensor(g.shape(), std::move(d)));
  }
}

inline double cl_penalty_value(const EncoderClassifier& model) {
  double acc = 0.0;
  const auto& cw = model.get("cls_w").data();
  const auto& aw = model.get("aux_w").data();
  for (std::size_t k = 0; k < cw.size(); ++k) acc += sqr(cw[k] - aw[k]);
  const auto& cb = model.get("cls_b").data();
  const auto& ab = model.get("aux_b").data();
  for (std::size_t k = 0; k < cb.size(); ++k) acc += sqr(cb[k] - ab[k]);
  return acc;
}

inline TrainResult train(EncoderClassifier model, const tasks::LabeledSample& src,
                         const std::vector<std::vector<double>>& tgt_inputs,
                         const TrainConfig& cfg, const EvalFn& eval_target = EvalFn()) {
  cfg.validate();
  require(!src.x.empty(), "train: empty source sample");
  require(!cfg.uses_target() || !tgt_inputs.empty(), "train: target inputs required");
  const auto layout = detail::Layout::of(model);
  const int n_src = static_cast<int>(src.size());
  const int n_tgt = static_cast<int>(tgt_inputs.size());
  const int steps_per_epoch = std::max(1, n_src / std::min(cfg.batch, n_src));
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  const int cadence = cfg.log_every > 0 ? cfg.log_every : (total_steps <= 5000 ? 1 : 10);

  Rng src_batch_rng = Rng::stream(cfg.seed, 1);
  Rng tgt_batch_rng = Rng::stream(cfg.seed, 2);
  Rng src_noise_rng = Rng::stream(cfg.seed, 3);
  Rng tgt_noise_rng = Rng::stream(cfg.seed, 4);
  Rng sgld_rng = Rng::stream(cfg.seed, 5);

  std::vector<int> full_src(n_src), full_tgt(n_tgt);
  for (int i = 0; i < n_src; ++i) full_src[i] = i;
  for (int i = 0; i < n_tgt; ++i) full_tgt[i] = i;

  TrainResult result;
  result.trajectory.reserve(total_steps / cadence + 1);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_acc = 0.0, ce_acc = 0.0;
    for (int s = 0; s < steps_per_epoch; ++s, ++step) {
      detail::StepBatch batch;
      batch.src_idx = detail::sample_indices(src_batch_rng, n_src, cfg.batch);
      batch.noise_s = src_noise_rng.gaussians(batch.src_idx.size() * cfg.repr_dim);
      if (cfg.uses_target()) {
        batch.tgt_idx = detail::sample_indices(tgt_batch_rng, n_tgt, cfg.batch);
        batch.noise_t = tgt_noise_rng.gaussians(batch.tgt_idx.size() * cfg.repr_dim);
      }

      std::vector<ad::Tensor> values;
      values.reserve(model.params.size());
      for (const auto& [name, v] : model.params) values.push_back(v);

      auto step_grad = detail::total_grad(model, layout, values, src, tgt_inputs, cfg, batch);
      require(std::isfinite(step_grad.loss.total),
              "train: diverged at step " + std::to_string(step) + " (loss is not finite)");
      loss_acc += step_grad.loss.total;
      ce_acc += step_grad.loss.ce;

      // pseudo labels for the auxiliary step use the pre-update weights
      ad::Tensor repr_t_const;
      std::vector<int> pseudo;
      ad::Tensor repr_s_const;
      std::vector<int> pseudo_s;
      if (cfg.lambda2 > 0.0) {
        auto label_of = [&](const ad::Tensor& logits, std::size_t row) {
          int best = 0;
          for (int c = 1; c < model.classes; ++c)
            if (logits[row * model.classes + c] > logits[row * model.classes + best]) best = c;
          return best;
        };
        ad::Tensor xt = detail::rows_subset(tgt_inputs, batch.tgt_idx);
        auto enc_t = detail::encode(values, layout, xt, batch.noise_t);
        ad::Tensor logits_t =
            ad::affine(enc_t.t, values[layout.cls_w], values[layout.cls_b]);
        repr_t_const = enc_t.t.detached();
        pseudo.resize(batch.tgt_idx.size());
        for (std::size_t i = 0; i < pseudo.size(); ++i)
          pseudo[i] = label_of(logits_t, i);
        if (cfg.cl_source_term) {
          ad::Tensor xs = detail::rows_subset(src, batch.src_idx);
          auto enc_s = detail::encode(values, layout, xs, batch.noise_s);
          ad::Tensor logits_s =
              ad::affine(enc_s.t, values[layout.cls_w], values[layout.cls_b]);
          repr_s_const = enc_s.t.detached();
          pseudo_s.resize(batch.src_idx.size());
          for (std::size_t i = 0; i < pseudo_s.size(); ++i)
            pseudo_s[i] = label_of(logits_s, i);
        }
      }

      // trajectory record: noise-free batch-vs-full deviation of the base
      // objective's gradient (the quantity the gradient penalty restricts);
      // full-batch runs log v_t = 0 exactly. grad_norm_sq tracks the applied
      // update direction, penalty included.
      if (step % cadence == 0) {
        detail::StepBatch quiet = batch;
        std::fill(quiet.noise_s.begin(), quiet.noise_s.end(), 0.0);
        std::fill(quiet.noise_t.begin(), quiet.noise_t.end(), 0.0);
        detail::StepBatch whole;
        whole.src_idx = full_src;
        whole.noise_s.assign(static_cast<std::size_t>(n_src) * cfg.repr_dim, 0.0);
        if (cfg.uses_target()) {
          whole.tgt_idx = full_tgt;
          whole.noise_t.assign(static_cast<std::size_t>(n_tgt) * cfg.repr_dim, 0.0);
        }
        auto quiet_grad = detail::eval_grads(model, layout, values, src, tgt_inputs, cfg, quiet);
        auto whole_grad = detail::eval_grads(model, layout, values, src, tgt_inputs, cfg, whole);
        double dev = 0.0, norm_sq = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
          for (std::size_t k = 0; k < quiet_grad.grads[i].size(); ++k)
            dev += sqr(quiet_grad.grads[i][k] - whole_grad.grads[i][k]);
          norm_sq += sqr(step_grad.grads[i].l2_norm());
        }
        result.trajectory.push_back({cfg.lr, cfg.sgld_sigma, dev, norm_sq});
      }

      // parameter update (auxiliary head is excluded; it has its own step)
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (model.is_aux(i)) continue;
        std::vector<double> d = values[i].data();
        const auto& g = step_grad.grads[i].data();
        for (std::size_t k = 0; k < d.size(); ++k) {
          d[k] -= cfg.lr * g[k];
          if (cfg.sgld_sigma > 0.0) d[k] += cfg.sgld_sigma * sgld_rng.gaussian();
        }
        model.params[i].second = ad::Tensor(values[i].shape(), std::move(d));
      }

      if (cfg.lambda2 > 0.0)
        cl_update(model, repr_t_const, pseudo, cfg.lr,
                  cfg.cl_source_term ? &repr_s_const : nullptr,
                  cfg.cl_source_term ? &pseudo_s : nullptr);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_acc / steps_per_epoch;
    em.train_ce = ce_acc / steps_per_epoch;
    em.src_risk01 = evaluate(model, src).risk01;
    em.cl_penalty = cl_penalty_value(model);
    if (eval_target) {
      EvalMetrics tm = eval_target(model);
      em.tgt_risk01 = tm.risk01;
      em.tgt_ce = tm.ce;
      em.tgt_acc = tm.accuracy;
    }
    if (!tgt_inputs.empty() && n_tgt >= 2 && n_src >= 2) {
      // representation-space divergence estimate on deterministic eval batches
      const int eb = std::min({256, n_src, n_tgt});
      Rng eval_rng = Rng::stream(cfg.seed, 0xE0 + static_cast<std::uint64_t>(epoch));
      auto sidx = detail::sample_indices(eval_rng, n_src, eb);
      auto tidx = detail::sample_indices(eval_rng, n_tgt, eb);
      std::vector<ad::Tensor> values;
      for (const auto& [name, v] : model.params) values.push_back(v);
      std::vector<double> zero_s(sidx.size() * cfg.repr_dim, 0.0), zero_t(tidx.size() * cfg.repr_dim, 0.0);
      auto es = detail::encode(values, layout, detail::rows_subset(src, sidx), zero_s);
      auto et = detail::encode(values, layout, detail::rows_subset(tgt_inputs, tidx), zero_t);
      est::SampleBatch bs, bt;
      for (std::size_t i = 0; i < sidx.size(); ++i) {
        std::vector<double> mean(cfg.repr_dim), sd(cfg.repr_dim);
        for (int k = 0; k < cfg.repr_dim; ++k) {
          mean[k] = es.mu[i * cfg.repr_dim + k];
          sd[k] = es.sig[i * cfg.repr_dim + k];
        }
        bs.points.push_back(mean);
        bs.components.emplace_back(mean, sd);
      }
      for (std::size_t i = 0; i < tidx.size(); ++i) {
        std::vector<double> mean(cfg.repr_dim), sd(cfg.repr_dim);
        for (int k = 0; k < cfg.repr_dim; ++k) {
          mean[k] = et.mu[i * cfg.repr_dim + k];
          sd[k] = et.sig[i * cfg.repr_dim + k];
        }
        bt.points.push_back(mean);
        bt.components.emplace_back(mean, sd);
      }
      auto kl_est = est::minibatch_kl(bs, bt, cfg.seed ^ (0xABCDu + epoch), 8);
      em.kl_fwd_est = kl_est.forward;
      em.kl_rev_est = kl_est.reverse;
      em.jeffrey = kl_est.forward + kl_est.reverse;
    }
    result.epochs.push_back(em);
  }

  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: text header (shape manifest, seed, step) + raw doubles
// ---------------------------------------------------------------------------

inline void save_checkpoint(const EncoderClassifier& model, const std::string& path,
                            std::uint64_t seed, long step) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "save_checkpoint: cannot open " + path);
  out << "udackpt v1\n";
  out << "seed " << seed << "\n";
  out << "step " << step << "\n";
  out << "dims " << model.input_dim << " " << model.hidden_dim << " " << model.repr_dim << " "
      << model.classes << "\n";
  for (const auto& [name, tensor] : model.params) {
    out << "param " << name;
    for (int e : tensor.shape()) out << " " << e;
    out << "\n";
  }
  out << "end\n";
  for (const auto& [name, tensor] : model.params)
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
}

struct Checkpoint {
  EncoderClassifier model;
  std::uint64_t seed = 0;
  long step = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(in, line);
  require(line == "udackpt v1", "load_checkpoint: bad header in " + path);
  Checkpoint ck;
  std::vector<std::pair<std::string, ad::Shape>> manifest;
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "seed") ls >> ck.seed;
    else if (tag == "step") ls >> ck.step;
    else if (tag == "dims")
      ls >> ck.model.input_dim >> ck.model.hidden_dim >> ck.model.repr_dim >> ck.model.classes;
    else if (tag == "param") {
      std::string name;
      ls >> name;
      ad::Shape shape;
      int e;
      while (ls >> e) shape.push_back(e);
      manifest.emplace_back(name, shape);
    } else {
      throw error("load_checkpoint: unexpected line '" + line + "'");
    }
  }
  require(line == "end", "load_checkpoint: missing end marker");
  for (const auto& [name, shape] : manifest) {
    std::vector<double> data(ad::shape_size(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    require(in.good(), "load_checkpoint: truncated payload for " + name);
    ck.model.params.emplace_back(name, ad::Tensor(shape, std::move(data)));
  }
  return ck;
}

}  // namespace uda::training
