// Experiment orchestration behind the CLI: parses experiment configs, runs
// bound-verification suites and training sweeps, and writes CSV artifacts.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uda/bounds.hpp"
#include "uda/config.hpp"
#include "uda/csv.hpp"
#include "uda/estimators.hpp"
#include "uda/micro_world.hpp"
#include "uda/tasks.hpp"
#include "uda/training.hpp"

namespace uda::harness {

struct Overrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
};

namespace detail {

// Removes this run's partial outputs if anything throws mid-way.
class OutputTracker {
 public:
  explicit OutputTracker(std::string dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }
  std::string path(const std::string& filename) {
    const std::string full = dir_ + "/" + filename;
    created_.push_back(full);
    return full;
  }
  void discard_all() {
    for (const auto& p : created_) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
  }
  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<std::string> created_;
};

struct TaskBundle {
  tasks::DomainPair pair;
  int n_source = 256;
  int n_target = 256;
  int n_eval = 2048;
};

inline TaskBundle make_task(const cfg::Section& s) {
  s.check_keys({"name", "angle_deg", "sigma", "flip_prob", "d", "delta", "mean_scale",
                "class_priors", "n_source", "n_target", "n_eval"});
  const std::string name = s.get("name");
  std::optional<tasks::DomainPair> pair;
  if (name == "rotated_gaussians") {
    pair = tasks::rotated_gaussians_task(s.get_double("angle_deg"), s.get_double_or("sigma", 1.0),
                                         s.get_double_or("flip_prob", 0.0));
  } else if (name == "gaussian_shift") {
    const int d = static_cast<int>(s.get_int_or("d", 2));
    std::vector<double> delta(d, 0.0);
    if (s.find("delta")) {
      delta = s.get_doubles("delta");
      require(static_cast<int>(delta.size()) == d, "task.delta must have d entries");
    }
    std::vector<double> priors{0.5, 0.5};
    if (s.find("class_priors")) priors = s.get_doubles("class_priors");
    pair = tasks::gaussian_shift_task(d, delta, s.get_double_or("sigma", 1.0), priors,
                                      s.get_double_or("mean_scale", 1.0),
                                      s.get_double_or("flip_prob", 0.0));
  } else {
    throw error("task.name: expected rotated_gaussians or gaussian_shift, got " + name);
  }
  TaskBundle b{*pair};
  b.n_source = static_cast<int>(s.get_int_or("n_source", 256));
  b.n_target = static_cast<int>(s.get_int_or("n_target", 256));
  b.n_eval = static_cast<int>(s.get_int_or("n_eval", 2048));
  return b;
}

inline training::TrainConfig make_trainer(const cfg::Section& s, std::uint64_t seed) {
  s.check_keys({"lr", "batch", "epochs", "beta1", "beta2", "lambda1", "lambda2", "sgld_sigma",
                "repr_dim", "hidden_dim", "hvp", "cl_source_term", "log_every",
                "init_sigma_bias"});
  training::TrainConfig cfg;
  cfg.lr = s.get_double_or("lr", 0.05);
  cfg.batch = static_cast<int>(s.get_int_or("batch", 32));
  cfg.epochs = static_cast<int>(s.get_int_or("epochs", 10));
  cfg.beta1 = s.get_double_or("beta1", 0.0);
  cfg.beta2 = s.get_double_or("beta2", 0.0);
  cfg.lambda1 = s.get_double_or("lambda1", 0.0);
  cfg.lambda2 = s.get_double_or("lambda2", 0.0);
  cfg.sgld_sigma = s.get_double_or("sgld_sigma", 0.0);
  cfg.repr_dim = static_cast<int>(s.get_int_or("repr_dim", 2));
  cfg.hidden_dim = static_cast<int>(s.get_int_or("hidden_dim", 0));
  cfg.log_every = static_cast<int>(s.get_int_or("log_every", 0));
  cfg.init_sigma_bias = s.get_double_or("init_sigma_bias", -2.0);
  const std::string hvp = s.get_or("hvp", "fd");
  if (hvp == "fd") cfg.hvp_mode = ad::HvpMode::kFiniteDifference;
  else if (hvp == "exact") cfg.hvp_mode = ad::HvpMode::kExact;
  else throw error("trainer.hvp: expected fd or exact, got " + hvp);
  cfg.cl_source_term = s.get_int_or("cl_source_term", 0) != 0;
  cfg.seed = seed;
  return cfg;
}

// Applies a sweep method tag by zeroing the regularizers it does not use.
inline training::TrainConfig apply_method(training::TrainConfig cfg, const std::string& method) {
  auto need = [&](double v, const char* key) {
    require(v > 0.0, "sweep method " + method + " needs trainer." + key + " > 0");
    return v;
  };
  if (method == "erm") {
    cfg.beta1 = cfg.beta2 = cfg.lambda1 = cfg.lambda2 = 0.0;
  } else if (method == "kl") {
    need(cfg.beta1 + cfg.beta2, "beta1/beta2");
    cfg.lambda1 = cfg.lambda2 = 0.0;
  } else if (method == "erm_gp") {
    need(cfg.lambda1, "lambda1");
    cfg.beta1 = cfg.beta2 = cfg.lambda2 = 0.0;
  } else if (method == "kl_gp") {
    need(cfg.beta1 + cfg.beta2, "beta1/beta2");
    need(cfg.lambda1, "lambda1");
    cfg.lambda2 = 0.0;
  } else if (method == "kl_cl") {
    need(cfg.beta1 + cfg.beta2, "beta1/beta2");
    need(cfg.lambda2, "lambda2");
    cfg.lambda1 = 0.0;
  } else {
    throw error("unknown sweep method " + method);
  }
  return cfg;
}

struct RunArtifacts {
  training::TrainResult result;
  double final_tgt_acc = 0.0;
  double final_tgt_risk = 0.0;
  double final_jeffrey = 0.0;
  double trajectory_sum = 0.0;
};

inline RunArtifacts run_one_training(const TaskBundle& task, training::TrainConfig cfg,
                                     OutputTracker& out, const std::string& file_prefix) {
  auto src = task.pair.sample_source(task.n_source, cfg.seed ^ 0x5157ULL);
  auto tgt = task.pair.sample_target_inputs(task.n_target, cfg.seed ^ 0x7157ULL);
  auto eval_sample = task.pair.eval_scope().sample_target(task.n_eval, cfg.seed ^ 0xE7A1ULL);

  auto model = training::EncoderClassifier::init(task.pair.dim(), cfg.repr_dim,
                                                 task.pair.classes(), cfg.hidden_dim, cfg.seed,
                                                 cfg.init_sigma_bias);
  training::EvalFn eval_fn = [&](const training::EncoderClassifier& m) {
    return training::evaluate(m, eval_sample);
  };
  auto result = training::train(std::move(model), src, tgt, cfg, eval_fn);

  csv::Writer metrics(out.path(file_prefix + "_metrics.csv"), csv::kMetricsSchema);
  csv::Writer plot(out.path(file_prefix + "_plotdata.csv"), csv::kPlotDataSchema);
  for (const auto& e : result.epochs) {
    metrics.row({std::to_string(e.epoch), csv::fmt(e.train_loss), csv::fmt(e.train_ce),
                 csv::fmt(e.src_risk01), csv::fmt(e.tgt_risk01), csv::fmt(e.tgt_ce),
                 csv::fmt(e.tgt_acc), csv::fmt(e.jeffrey), csv::fmt(e.kl_fwd_est),
                 csv::fmt(e.kl_rev_est), csv::fmt(e.cl_penalty)});
    plot.row({std::to_string(e.epoch), csv::fmt(e.tgt_risk01), csv::fmt(e.jeffrey)});
  }
  csv::Writer traj(out.path(file_prefix + "_trajectory.csv"), csv::kTrajectorySchema);
  double traj_sum = 0.0;
  for (std::size_t t = 0; t < result.trajectory.size(); ++t) {
    const auto& step = result.trajectory[t];
    traj.row({std::to_string(t), csv::fmt(step.lr), csv::fmt(step.sigma), csv::fmt(step.v),
              csv::fmt(step.grad_norm_sq)});
    if (step.sigma > 0.0) traj_sum += sqr(step.lr / step.sigma) * step.v;
  }

  RunArtifacts a{std::move(result)};
  const auto& last = a.result.epochs.back();
  a.final_tgt_acc = last.tgt_acc;
  a.final_tgt_risk = last.tgt_risk01;
  a.final_jeffrey = last.jeffrey;
  a.trajectory_sum = traj_sum;
  return a;
}

struct Moments {
  double mean = 0.0;
  double stdev = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double v : xs) m.mean += v;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double acc = 0.0;
    for (double v : xs) acc += sqr(v - m.mean);
    m.stdev = std::sqrt(acc / static_cast<double>(xs.size() - 1));
  }
  return m;
}

inline void write_aggregate_row(csv::Writer& w, const std::string& method,
                                const std::vector<RunArtifacts>& runs) {
  std::vector<double> accs, risks, jeffreys, sums;
  for (const auto& r : runs) {
    accs.push_back(r.final_tgt_acc);
    risks.push_back(r.final_tgt_risk);
    jeffreys.push_back(r.final_jeffrey);
    sums.push_back(r.trajectory_sum);
  }
  const auto acc = moments(accs), risk = moments(risks), jef = moments(jeffreys),
             ts = moments(sums);
  w.row({method, std::to_string(runs.size()), csv::fmt(acc.mean), csv::fmt(acc.stdev),
         csv::fmt(risk.mean), csv::fmt(risk.stdev), csv::fmt(jef.mean), csv::fmt(jef.stdev),
         csv::fmt(ts.mean)});
}

// Analytic PP-bound verification on the rotated-Gaussians family: exact 0-1
// risks via the Gaussian CDF for a fixed linear rule, closed-form KL.
inline void run_bounds_analytic(const cfg::Config& config, OutputTracker& out) {
  const auto& task_sec = config.get("task");
  task_sec.check_keys({"name", "angles_deg", "sigma", "flip_prob"});
  require(task_sec.get("name") == "rotated_gaussians",
          "bounds: analytic route supports task.name = rotated_gaussians");
  const double sigma = task_sec.get_double_or("sigma", 1.0);
  const auto& cls_sec = config.get("classifier");
  cls_sec.check_keys({"weights", "bias"});
  tasks::LinearClassifier rule{cls_sec.get_doubles("weights"), cls_sec.get_double_or("bias", 0.0)};

  csv::Writer w(out.path("bounds.csv"), csv::kBoundReportSchema);
  for (double angle : task_sec.get_doubles("angles_deg")) {
    auto task = tasks::rotated_gaussians_task(angle, sigma);
    const double src_risk = task.analytic_source_risk01(rule);
    const double tgt_risk = task.eval_scope().analytic_target_risk01(rule);
    const double kl = task.true_kl_forward().value();

    bounds::PpIngredients in;
    in.subgaussian_r = 0.5;  // 0-1 loss: M = 1, R = M/2
    in.loss_bound = 1.0;
    in.kl_tgt_src = ExtReal::finite(kl);
    in.kl_src_tgt = ExtReal::finite(kl);
    auto reports = bounds::pp_bounds(in, std::abs(tgt_risk - src_risk), tgt_risk - src_risk, 1e-9);
    for (auto& rep : reports) {
      rep.add("angle_deg", angle);
      w.raw_row(rep.csv_row());
    }

    auto sandwich = bounds::pp_sandwich(0.5, kl, kl, src_risk);
    bounds::BoundReport upper;
    upper.name = "pp_risk_sandwich_upper";
    upper.lhs = tgt_risk;
    upper.rhs = ExtReal::finite(sandwich.upper);
    upper.add("angle_deg", angle);
    upper.add("source_risk", src_risk);
    upper.settle(1e-9);
    w.raw_row(upper.csv_row());
    bounds::BoundReport lower;
    lower.name = "pp_risk_sandwich_lower";
    lower.lhs = sandwich.lower;
    lower.rhs = ExtReal::finite(tgt_risk);
    lower.add("angle_deg", angle);
    lower.add("source_risk", src_risk);
    lower.settle(1e-9);
    w.raw_row(lower.csv_row());
  }
}

inline oracle::MicroWorld world_from_config(const cfg::Section& s, std::uint64_t fallback_seed) {
  s.check_keys({"name", "preset", "world_file", "world_seed"});
  if (s.find("world_file")) return oracle::MicroWorld::load(s.get("world_file"));
  const std::string preset = s.get_or("preset", "random");
  if (preset == "independence") {
    oracle::MicroWorld w;
    w.x_size = 2;
    w.y_size = 2;
    w.n = 2;
    w.m = 1;
    w.mu = dist::Categorical::uniform(4);
    w.mu_prime = w.mu;
    w.loss = oracle::MicroWorld::zero_one_loss(2);
    w.kernel = oracle::MicroWorld::Kernel::kGibbs;
    w.gamma = 0.0;
    return w;
  }
  if (preset == "flip") {
    oracle::MicroWorld w;
    w.x_size = 2;
    w.y_size = 2;
    w.n = 1;
    w.m = 1;
    w.mu = dist::Categorical({0.5, 0.0, 0.0, 0.5});
    w.mu_prime = dist::Categorical({0.25, 0.25, 0.0, 0.5});
    w.loss = oracle::MicroWorld::zero_one_loss(2);
    return w;
  }
  if (preset == "random")
    return oracle::random_world(static_cast<std::uint64_t>(s.get_int_or("world_seed",
                                                                        static_cast<long>(fallback_seed))));
  throw error("task.preset: expected independence, flip or random, got " + preset);
}

inline void write_world_quantities(const oracle::MicroWorld& world,
                                   const oracle::ExactQuantities& q, OutputTracker& out) {
  csv::Writer w(out.path("quantities.csv"), csv::kQuantitiesSchema);
  w.row({"err", csv::fmt(q.err)});
  w.row({"lambda_star", csv::fmt(q.lambda_star)});
  w.row({"dis", csv::fmt(q.dis_value)});
  w.row({"kl_src_tgt", csv::fmt(q.kl_src_tgt.value_or_inf())});
  w.row({"kl_tgt_src", csv::fmt(q.kl_tgt_src.value_or_inf())});
  w.row({"kl_x_fwd", csv::fmt(q.kl_x_fwd.value_or_inf())});
  w.row({"tv_joint", csv::fmt(q.tv_joint)});
  w.row({"hypotheses", csv::fmt(world.hypothesis_count())});
  for (int i = 0; i < world.n; ++i)
    w.row({"i_w_z" + std::to_string(i), csv::fmt(q.i_w_zi[i])});
  double max_gap = 0.0;
  for (double g : q.err_pp) max_gap = std::max(max_gap, std::abs(g));
  w.row({"max_abs_pp_gap", csv::fmt(max_gap)});
}

inline void run_bounds_microworld(const cfg::Config& config, OutputTracker& out,
                                  std::uint64_t seed) {
  auto world = world_from_config(config.get("task"), seed);
  auto q = oracle::enumerate(world);
  csv::Writer w(out.path("bounds.csv"), csv::kBoundReportSchema);
  for (auto& rep : oracle::verify_ep_bounds(q, world)) w.raw_row(rep.csv_row());

  // hypothesis-uniform bounds checked at the worst population gap
  double lhs_abs = 0.0, lhs_signed = 0.0;
  for (double g : q.err_pp) {
    if (std::abs(g) > lhs_abs) lhs_abs = std::abs(g);
    lhs_signed = std::max(lhs_signed, g);
  }
  const double m = world.max_loss();
  bounds::PpIngredients in;
  in.subgaussian_r = m / 2.0;
  in.loss_bound = m;
  in.kl_tgt_src = q.kl_tgt_src;
  in.kl_src_tgt = q.kl_src_tgt;
  in.kl_x = q.kl_x_fwd;
  in.lambda_star = q.lambda_star;
  in.lipschitz_beta = m;
  in.w1 = q.tv_joint;  // discrete metric: Wasserstein = total variation
  in.w1_x = q.tv_x;
  in.dis_value = q.dis_value;
  for (auto& rep : bounds::pp_bounds(in, lhs_abs, lhs_signed, 1e-9)) w.raw_row(rep.csv_row());
  write_world_quantities(world, q, out);
}

inline void run_convergence(const cfg::Config& config, OutputTracker& out, std::uint64_t seed) {
  const auto& s = config.get("convergence");
  s.check_keys({"support", "probs", "ns", "trials", "deltas"});
  const int support = static_cast<int>(s.get_int_or("support", 4));
  dist::Categorical mu = s.find("probs") ? dist::Categorical(s.get_doubles("probs"))
                                         : dist::Categorical::uniform(support);
  const int trials = static_cast<int>(s.get_int_or("trials", 1000));
  std::vector<double> deltas{0.1, 0.05};
  if (s.find("deltas")) deltas = s.get_doubles("deltas");

  csv::Writer w(out.path("convergence.csv"), csv::kConvergenceSchema);
  for (double n_raw : s.get_doubles("ns")) {
    const int n = static_cast<int>(n_raw);
    auto conv = est::empirical_kl_convergence(mu, n, trials, seed);
    for (double delta : deltas) {
      const double quant = conv.quantile(1.0 - delta);
      const double envelope = est::plugin_kl_quantile_envelope(mu.size(), n, delta);
      w.row({std::to_string(n), std::to_string(trials), csv::fmt(delta), csv::fmt(quant),
             csv::fmt(envelope), quant <= envelope ? "true" : "false"});
    }
  }
}

}  // namespace detail

// Runs the experiment described by the config. Returns the output directory.
inline std::string run(const std::string& kind, const std::string& config_path,
                       const Overrides& overrides = {}) {
  cfg::Config config = cfg::Config::parse_file(config_path);
  const auto& exp = config.get("experiment");
  exp.check_keys({"kind", "out", "seeds", "methods"});
  if (exp.find("kind"))
    require(exp.get("kind") == kind, "experiment.kind = " + exp.get("kind") +
                                         " does not match the " + kind + " subcommand");
  std::vector<std::uint64_t> seeds =
      overrides.seed ? std::vector<std::uint64_t>{*overrides.seed} : exp.get_u64s("seeds");
  require(!seeds.empty(), "experiment.seeds must be nonempty");
  const std::string out_dir = overrides.out_dir.value_or(exp.get("out"));

  detail::OutputTracker out(out_dir);
  try {
    if (kind == "bounds") {
      const auto& task_sec = config.get("task");
      if (task_sec.get_or("name", "microworld") == "microworld")
        detail::run_bounds_microworld(config, out, seeds.front());
      else
        detail::run_bounds_analytic(config, out);
    } else if (kind == "oracle") {
      auto world = detail::world_from_config(config.get("task"), seeds.front());
      auto q = oracle::enumerate(world);
      csv::Writer w(out.path("bounds.csv"), csv::kBoundReportSchema);
      for (auto& rep : oracle::verify_ep_bounds(q, world)) w.raw_row(rep.csv_row());
      detail::write_world_quantities(world, q, out);
    } else if (kind == "train") {
      auto task = detail::make_task(config.get("task"));
      std::vector<detail::RunArtifacts> runs;
      for (auto seed : seeds)
        runs.push_back(detail::run_one_training(task, detail::make_trainer(config.get("trainer"), seed),
                                                out, "seed_" + std::to_string(seed)));
      csv::Writer agg(out.path("aggregate.csv"), csv::kAggregateSchema);
      detail::write_aggregate_row(agg, "train", runs);
    } else if (kind == "sweep") {
      auto task = detail::make_task(config.get("task"));
      auto methods = exp.get_strings("methods");
      require(!methods.empty(), "experiment.methods must be nonempty for sweeps");
      csv::Writer agg(out.path("aggregate.csv"), csv::kAggregateSchema);
      for (const auto& method : methods) {
        std::vector<detail::RunArtifacts> runs;
        for (auto seed : seeds) {
          auto cfg_m = detail::apply_method(detail::make_trainer(config.get("trainer"), seed), method);
          runs.push_back(detail::run_one_training(task, cfg_m, out,
                                                  method + "_seed_" + std::to_string(seed)));
        }
        detail::write_aggregate_row(agg, method, runs);
      }
    } else if (kind == "convergence") {
      detail::run_convergence(config, out, seeds.front());
    } else {
      throw error("unknown experiment kind " + kind);
    }
  } catch (...) {
    out.discard_all();
    throw;
  }
  return out.dir();
}

// Human-readable summary of a results directory: per-method aggregates,
// bound-validity counts, convergence envelopes.
inline int report(const std::string& dir, std::ostream& os = std::cout) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), "report: " + dir + " is not a directory");
  bool found = false;

  const std::string agg_path = dir + "/aggregate.csv";
  if (fs::exists(agg_path)) {
    found = true;
    auto t = csv::read(agg_path);
    os << "== method summary (" << agg_path << ")\n";
    const int c_m = t.column("method"), c_s = t.column("seeds"), c_acc = t.column("mean_tgt_acc"),
              c_std = t.column("std_tgt_acc"), c_j = t.column("mean_final_jeffrey");
    for (const auto& row : t.rows) {
      os << "  " << row[c_m] << ": tgt acc " << row[c_acc] << " +- " << row[c_std] << "  (seeds "
         << row[c_s] << ", jeffrey " << row[c_j] << ")\n";
    }
  }

  const std::string bounds_path = dir + "/bounds.csv";
  if (fs::exists(bounds_path)) {
    found = true;
    auto t = csv::read(bounds_path);
    int valid = 0, total = 0;
    double min_slack = std::numeric_limits<double>::infinity();
    const int c_valid = t.column("valid"), c_slack = t.column("slack"), c_name = t.column("name");
    std::string tightest;
    for (const auto& row : t.rows) {
      ++total;
      if (row[c_valid] == "true") ++valid;
      const double slack = std::strtod(row[c_slack].c_str(), nullptr);
      if (slack < min_slack) {
        min_slack = slack;
        tightest = row[c_name];
      }
    }
    os << "== bound reports (" << bounds_path << ")\n";
    os << "  valid " << valid << "/" << total << ", tightest slack " << min_slack << " ("
       << tightest << ")\n";
  }

  const std::string conv_path = dir + "/convergence.csv";
  if (fs::exists(conv_path)) {
    found = true;
    auto t = csv::read(conv_path);
    os << "== empirical-kl convergence (" << conv_path << ")\n";
    const int c_n = t.column("n"), c_d = t.column("delta"), c_q = t.column("quantile"),
              c_e = t.column("envelope"), c_w = t.column("within");
    for (const auto& row : t.rows)
      os << "  n=" << row[c_n] << " delta=" << row[c_d] << " quantile=" << row[c_q]
         << " envelope=" << row[c_e] << " within=" << row[c_w] << "\n";
  }

  // lone per-seed metrics (train runs without aggregation)
  std::vector<std::string> metric_files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 12 && name.substr(name.size() - 12) == "_metrics.csv")
      metric_files.push_back(entry.path().string());
  }
  std::sort(metric_files.begin(), metric_files.end());
  if (!found && metric_files.empty())
    throw error("report: no artifacts found in " + dir +
                " (expected aggregate.csv, bounds.csv, convergence.csv or *_metrics.csv)");
  if (!metric_files.empty()) {
    os << "== per-run finals\n";
    for (const auto& path : metric_files) {
      auto t = csv::read(path);
      if (t.rows.empty()) continue;
      const auto& last = t.rows.back();
      os << "  " << fs::path(path).filename().string() << ": epochs " << t.rows.size()
         << ", tgt acc " << last[t.column("tgt_acc")] << ", jeffrey "
         << last[t.column("jeffrey")] << "\n";
    }
  }
  return 0;
}

}  // namespace uda::harness
