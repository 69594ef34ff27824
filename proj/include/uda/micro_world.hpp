// Fully enumerable finite UDA instances: the ground-truth engine that
// verifies every expectation-based bound and the cross-entropy / pseudo-label
// decompositions with no sampling error.
//
// Conventions: instances z = (x, y) are flattened as z = x * y_size + y;
// hypotheses are all deterministic maps X -> Y encoded base-y_size, so
// predict(w, x) = (w / y_size^x) % y_size. Both algorithm kernels condition
// on the labelled source sample only, so the joint over (W, S, S'_X')
// factorizes as P(W, S) x P_X'^m; the disintegrated tables are built from
// that product exactly.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "uda/bounds.hpp"
#include "uda/common.hpp"
#include "uda/config.hpp"
#include "uda/distributions.hpp"
#include "uda/estimators.hpp"

namespace uda::oracle {

struct MicroWorld {
  enum class Kernel { kErmUniformTies, kGibbs };

  int x_size = 2;
  int y_size = 2;
  int n = 1;
  int m = 1;
  dist::Categorical mu{std::vector<double>{1.0}};        // over X x Y
  dist::Categorical mu_prime{std::vector<double>{1.0}};  // over X x Y
  std::vector<double> loss;                              // [pred * y_size + truth]
  Kernel kernel = Kernel::kErmUniformTies;
  double gamma = 1.0;  // Gibbs concentration: P(w|s) ~ exp(-gamma * sum_i loss_i(w)); 0 = uniform

  int z_size() const { return x_size * y_size; }
  int z_of(int x, int y) const { return x * y_size + y; }
  int x_of(int z) const { return z / y_size; }
  int y_of(int z) const { return z % y_size; }

  int hypothesis_count() const {
    int c = 1;
    for (int i = 0; i < x_size; ++i) c *= y_size;
    return c;
  }
  int predict(int w, int x) const {
    for (int i = 0; i < x; ++i) w /= y_size;
    return w % y_size;
  }
  double loss_at(int pred, int truth) const { return loss[pred * y_size + truth]; }
  double max_loss() const { return *std::max_element(loss.begin(), loss.end()); }

  static std::vector<double> zero_one_loss(int y_size) {
    std::vector<double> table(y_size * y_size, 1.0);
    for (int y = 0; y < y_size; ++y) table[y * y_size + y] = 0.0;
    return table;
  }

  void validate() const {
    require(x_size >= 1 && x_size <= 4, "MicroWorld: x_size must be in 1..4, got " +
                                            std::to_string(x_size));
    require(y_size >= 2 && y_size <= 3, "MicroWorld: y_size must be in 2..3, got " +
                                            std::to_string(y_size));
    require(n >= 1 && n <= 3, "MicroWorld: n must be in 1..3, got " + std::to_string(n));
    require(m >= 1 && m <= 2, "MicroWorld: m must be in 1..2, got " + std::to_string(m));
    require(static_cast<int>(mu.size()) == z_size(), "MicroWorld: mu has support " +
                                                         std::to_string(mu.size()) + ", expected " +
                                                         std::to_string(z_size()));
    require(static_cast<int>(mu_prime.size()) == z_size(), "MicroWorld: mu_prime support mismatch");
    require(static_cast<int>(loss.size()) == y_size * y_size, "MicroWorld: loss table must be y_size^2");
    for (double v : loss) require(v >= 0.0 && std::isfinite(v), "MicroWorld: loss entries must be finite and >= 0");
    require(gamma >= 0.0, "MicroWorld: gamma must be >= 0");

    double budget = static_cast<double>(hypothesis_count());
    for (int i = 0; i < n; ++i) budget *= z_size();
    for (int j = 0; j < m; ++j) budget *= x_size;
    require(budget <= 1e7, "MicroWorld: enumeration size " + std::to_string(budget) +
                               " exceeds 1e7 (|Z|^n * |X|^m * |W| with |Z|=" +
                               std::to_string(z_size()) + ", |W|=" +
                               std::to_string(hypothesis_count()) + ")");
  }

  // --- fixture serialization (grammar in docs/formats.md) ---

  std::string to_text() const {
    cfg::Section s;
    s.name = "world";
    auto list = [](const std::vector<double>& v) {
      std::string out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out += (i ? "," : "") + bounds::fmt_double(v[i]);
      return out;
    };
    s.entries = {{"x_size", std::to_string(x_size)},
                 {"y_size", std::to_string(y_size)},
                 {"n", std::to_string(n)},
                 {"m", std::to_string(m)},
                 {"algorithm", kernel == Kernel::kErmUniformTies ? "erm" : "gibbs"},
                 {"gamma", bounds::fmt_double(gamma)},
                 {"mu", list(mu.probs())},
                 {"mu_prime", list(mu_prime.probs())},
                 {"loss", list(loss)}};
    cfg::Config c;
    c.sections.push_back(std::move(s));
    return c.to_text();
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), "MicroWorld::save: cannot open " + path);
    out << to_text();
  }

  static MicroWorld from_section(const cfg::Section& s) {
    s.check_keys({"x_size", "y_size", "n", "m", "algorithm", "gamma", "mu", "mu_prime", "loss"});
    MicroWorld w;
    w.x_size = static_cast<int>(s.get_int("x_size"));
    w.y_size = static_cast<int>(s.get_int("y_size"));
    w.n = static_cast<int>(s.get_int("n"));
    w.m = static_cast<int>(s.get_int("m"));
    const std::string alg = s.get_or("algorithm", "erm");
    if (alg == "erm")
      w.kernel = Kernel::kErmUniformTies;
    else if (alg == "gibbs")
      w.kernel = Kernel::kGibbs;
    else
      throw error("world.algorithm: expected erm or gibbs, got " + alg);
    w.gamma = s.get_double_or("gamma", 1.0);
    w.mu = dist::Categorical(s.get_doubles("mu"));
    w.mu_prime = dist::Categorical(s.get_doubles("mu_prime"));
    if (s.find("loss"))
      w.loss = s.get_doubles("loss");
    else
      w.loss = zero_one_loss(w.y_size);
    w.validate();
    return w;
  }

  static MicroWorld load(const std::string& path) {
    return from_section(cfg::Config::parse_file(path).get("world"));
  }
};

// Everything enumerate() derives. Disintegrated tables are indexed
// [i][j][x'_value]; posterior tables [i][j][z_value][x'_value].
struct ExactQuantities {
  double err = 0.0;                // expected target risk minus source empirical risk
  std::vector<double> err_pp;      // per-w population gap
  std::vector<double> risk_src, risk_tgt;
  std::vector<double> p_w;         // marginal of the algorithm output
  std::vector<double> p_x, p_x_prime;

  std::vector<std::vector<std::vector<double>>> p_w_z;  // [i][w][z], joint with one sample

  std::vector<std::vector<std::vector<double>>> mi_disint;
  std::vector<std::vector<std::vector<ExtReal>>> lautum_disint;
  std::vector<std::vector<std::vector<std::vector<double>>>> post_tv;
  std::vector<std::vector<std::vector<std::vector<double>>>> post_w_hamming;
  std::vector<std::vector<std::vector<std::vector<double>>>> post_w_discrete;
  std::vector<std::vector<std::vector<std::vector<double>>>> post_kl;

  std::vector<double> i_w_zi;                        // I(W; Z_i)
  std::vector<std::vector<double>> i_w_zi_given_xj;  // conditional MI per (i, j)
  std::vector<std::vector<double>> i_xj_zi_given_w;  // per (i, j)

  double lambda_star = 0.0;
  double dis_value = 0.0;  // with the product prior P_W x P_W

  ExtReal kl_src_tgt, kl_tgt_src, kl_x_fwd;  // KL(mu||mu'), KL(mu'||mu), KL(P_X'||P_X)
  double tv_joint = 0.0, tv_x = 0.0;
};

namespace detail {

inline double kl_tables(const std::vector<double>& p, const std::vector<double>& q,
                        bool* infinite = nullptr) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) {
      if (infinite) {
        *infinite = true;
        return 0.0;
      }
      require(false, "kl_tables: absolute continuity violated");
    }
    acc += p[i] * std::log(p[i] / q[i]);
  }
  if (infinite) *infinite = false;
  return std::max(acc, 0.0);
}

inline ExtReal kl_tables_ext(const std::vector<double>& p, const std::vector<double>& q) {
  bool inf = false;
  const double v = kl_tables(p, q, &inf);
  return inf ? ExtReal::infinity() : ExtReal::finite(v);
}

// P(w|s) for the source sample s (vector of z indices).
inline std::vector<double> kernel_row(const MicroWorld& w,
                                      const std::vector<std::vector<double>>& loss_mat,
                                      const std::vector<int>& s) {
  const int wn = w.hypothesis_count();
  std::vector<double> emp(wn, 0.0);
  for (int h = 0; h < wn; ++h)
    for (int zi : s) emp[h] += loss_mat[h][zi];
  std::vector<double> row(wn, 0.0);
  if (w.kernel == MicroWorld::Kernel::kErmUniformTies) {
    const double best = *std::min_element(emp.begin(), emp.end());
    int ties = 0;
    for (int h = 0; h < wn; ++h)
      if (emp[h] <= best + 1e-12) ++ties;
    for (int h = 0; h < wn; ++h)
      if (emp[h] <= best + 1e-12) row[h] = 1.0 / ties;
  } else {
    const double shift = *std::min_element(emp.begin(), emp.end());
    double total = 0.0;
    for (int h = 0; h < wn; ++h) {
      row[h] = std::exp(-w.gamma * (emp[h] - shift));
      total += row[h];
    }
    for (double& v : row) v /= total;
  }
  return row;
}

}  // namespace detail

inline double lambda_star(const MicroWorld& w);

inline ExactQuantities enumerate(const MicroWorld& world) {
  world.validate();
  const int wn = world.hypothesis_count(), zn = world.z_size();
  const int xn = world.x_size;

  std::vector<std::vector<double>> loss_mat(wn, std::vector<double>(zn));
  for (int h = 0; h < wn; ++h)
    for (int z = 0; z < zn; ++z)
      loss_mat[h][z] = world.loss_at(world.predict(h, world.x_of(z)), world.y_of(z));

  ExactQuantities q;
  q.risk_src.assign(wn, 0.0);
  q.risk_tgt.assign(wn, 0.0);
  for (int h = 0; h < wn; ++h)
    for (int z = 0; z < zn; ++z) {
      q.risk_src[h] += world.mu[z] * loss_mat[h][z];
      q.risk_tgt[h] += world.mu_prime[z] * loss_mat[h][z];
    }
  q.err_pp.resize(wn);
  for (int h = 0; h < wn; ++h) q.err_pp[h] = q.risk_tgt[h] - q.risk_src[h];

  q.p_x.assign(xn, 0.0);
  q.p_x_prime.assign(xn, 0.0);
  for (int z = 0; z < zn; ++z) {
    q.p_x[world.x_of(z)] += world.mu[z];
    q.p_x_prime[world.x_of(z)] += world.mu_prime[z];
  }

  // --- exhaustive sweep over source samples ---
  q.p_w.assign(wn, 0.0);
  q.p_w_z.assign(world.n, std::vector<std::vector<double>>(wn, std::vector<double>(zn, 0.0)));
  std::vector<int> s(world.n, 0);
  while (true) {
    double ps = 1.0;
    for (int zi : s) ps *= world.mu[zi];
    if (ps > 0.0) {
      const auto row = detail::kernel_row(world, loss_mat, s);
      for (int h = 0; h < wn; ++h) {
        const double p = ps * row[h];
        if (p == 0.0) continue;
        q.p_w[h] += p;
        double emp = 0.0;
        for (int zi : s) emp += loss_mat[h][zi];
        emp /= world.n;
        q.err += p * (q.risk_tgt[h] - emp);
        for (int i = 0; i < world.n; ++i) q.p_w_z[i][h][s[i]] += p;
      }
    }
    int pos = world.n - 1;
    while (pos >= 0 && ++s[pos] == zn) s[pos--] = 0;
    if (pos < 0) break;
  }

  // --- mutual information per sample index ---
  q.i_w_zi.assign(world.n, 0.0);
  for (int i = 0; i < world.n; ++i) {
    double acc = 0.0;
    for (int h = 0; h < wn; ++h)
      for (int z = 0; z < zn; ++z) {
        const double p = q.p_w_z[i][h][z];
        if (p <= 0.0) continue;
        acc += p * std::log(p / (q.p_w[h] * world.mu[z]));
      }
    q.i_w_zi[i] = std::max(acc, 0.0);
  }

  // The kernels condition on S only, so conditioning on X'_j leaves the
  // (W, Z_i) joint untouched; the disintegrated tables are constant in the
  // target realization and I(X'_j; Z_i | W) vanishes up to rounding.
  q.mi_disint.assign(world.n, std::vector<std::vector<double>>(world.m, std::vector<double>(xn)));
  q.lautum_disint.assign(world.n, std::vector<std::vector<ExtReal>>(
                                      world.m, std::vector<ExtReal>(xn)));
  for (int i = 0; i < world.n; ++i) {
    ExtReal lautum = ExtReal::finite(0.0);
    double acc = 0.0;
    bool infinite = false;
    for (int h = 0; h < wn && !infinite; ++h)
      for (int z = 0; z < zn; ++z) {
        const double prod = q.p_w[h] * world.mu[z];
        if (prod <= 0.0) continue;
        if (q.p_w_z[i][h][z] <= 0.0) {
          infinite = true;
          break;
        }
        acc += prod * std::log(prod / q.p_w_z[i][h][z]);
      }
    lautum = infinite ? ExtReal::infinity() : ExtReal::finite(std::max(acc, 0.0));
    for (int j = 0; j < world.m; ++j)
      for (int v = 0; v < xn; ++v) {
        q.mi_disint[i][j][v] = q.i_w_zi[i];
        q.lautum_disint[i][j][v] = lautum;
      }
  }

  // Conditional mutual informations evaluated with the generic formulas on
  // the assembled triple joint P(w, z, v) = P(w, z_i) P_X'(v), so the chain
  // rule I(W;Z_i|X'_j) = I(W;Z_i) + I(X'_j;Z_i|W) is checked numerically
  // rather than by construction.
  q.i_w_zi_given_xj.assign(world.n, std::vector<double>(world.m, 0.0));
  q.i_xj_zi_given_w.assign(world.n, std::vector<double>(world.m, 0.0));
  for (int i = 0; i < world.n; ++i)
    for (int j = 0; j < world.m; ++j) {
      std::vector<double> p_wv(wn * xn, 0.0), p_zv(zn * xn, 0.0), p_wz(wn * zn, 0.0);
      std::vector<double> p_v(xn, 0.0), p_wj(wn, 0.0);
      auto p3 = [&](int h, int z, int v) { return q.p_w_z[i][h][z] * q.p_x_prime[v]; };
      for (int h = 0; h < wn; ++h)
        for (int z = 0; z < zn; ++z)
          for (int v = 0; v < xn; ++v) {
            const double p = p3(h, z, v);
            p_wv[h * xn + v] += p;
            p_zv[z * xn + v] += p;
            p_wz[h * zn + z] += p;
            p_v[v] += p;
            p_wj[h] += p;
          }
      double cond_wz = 0.0, cond_xz = 0.0;
      for (int h = 0; h < wn; ++h)
        for (int z = 0; z < zn; ++z)
          for (int v = 0; v < xn; ++v) {
            const double p = p3(h, z, v);
            if (p <= 0.0) continue;
            cond_wz += p * std::log(p * p_v[v] / (p_wv[h * xn + v] * p_zv[z * xn + v]));
            cond_xz += p * std::log(p * p_wj[h] / (p_wz[h * zn + z] * p_wv[h * xn + v]));
          }
      q.i_w_zi_given_xj[i][j] = std::max(cond_wz, 0.0);
      q.i_xj_zi_given_w[i][j] = std::max(cond_xz, 0.0);
    }

  // --- posterior-vs-prior distances ---
  const auto hamming_cost = [&]() {
    std::vector<std::vector<double>> c(wn, std::vector<double>(wn, 0.0));
    for (int a = 0; a < wn; ++a)
      for (int b = 0; b < wn; ++b)
        for (int x = 0; x < xn; ++x) c[a][b] += world.predict(a, x) != world.predict(b, x) ? 1.0 : 0.0;
    return c;
  }();
  const auto discrete_cost = est::discrete_metric_cost(wn);

  auto table4 = [&]() {
    return std::vector<std::vector<std::vector<std::vector<double>>>>(
        world.n, std::vector<std::vector<std::vector<double>>>(
                     world.m, std::vector<std::vector<double>>(zn, std::vector<double>(xn, 0.0))));
  };
  q.post_tv = table4();
  q.post_w_hamming = table4();
  q.post_w_discrete = table4();
  q.post_kl = table4();

  for (int i = 0; i < world.n; ++i) {
    for (int z = 0; z < zn; ++z) {
      if (world.mu[z] <= 0.0) continue;  // never weighted in any expectation
      std::vector<double> post(wn);
      for (int h = 0; h < wn; ++h) post[h] = q.p_w_z[i][h][z] / world.mu[z];
      dist::Categorical post_c(post), prior_c(q.p_w);
      const double tv_val = dist::tv(post_c, prior_c);
      const double wh = est::wasserstein_discrete(post_c, prior_c, hamming_cost);
      const double wd = est::wasserstein_discrete(post_c, prior_c, discrete_cost);
      const double klv = detail::kl_tables(post, q.p_w);  // prior dominates posteriors
      for (int j = 0; j < world.m; ++j)
        for (int v = 0; v < xn; ++v) {
          q.post_tv[i][j][z][v] = tv_val;
          q.post_w_hamming[i][j][z][v] = wh;
          q.post_w_discrete[i][j][z][v] = wd;
          q.post_kl[i][j][z][v] = klv;
        }
    }
  }

  // --- scalar summaries ---
  q.lambda_star = lambda_star(world);

  double dis = 0.0;
  for (int a = 0; a < wn; ++a) {
    if (q.p_w[a] <= 0.0) continue;
    for (int b = 0; b < wn; ++b) {
      if (q.p_w[b] <= 0.0) continue;
      double gap = 0.0;
      for (int x = 0; x < xn; ++x)
        gap += (q.p_x_prime[x] - q.p_x[x]) * world.loss_at(world.predict(a, x), world.predict(b, x));
      dis += q.p_w[a] * q.p_w[b] * gap;
    }
  }
  q.dis_value = std::abs(dis);

  q.kl_src_tgt = detail::kl_tables_ext(world.mu.probs(), world.mu_prime.probs());
  q.kl_tgt_src = detail::kl_tables_ext(world.mu_prime.probs(), world.mu.probs());
  q.kl_x_fwd = detail::kl_tables_ext(q.p_x_prime, q.p_x);
  q.tv_joint = dist::tv(world.mu, world.mu_prime);
  q.tv_x = dist::tv(dist::Categorical(q.p_x), dist::Categorical(q.p_x_prime));
  return q;
}

inline double lambda_star(const MicroWorld& world) {
  const int wn = world.hypothesis_count(), zn = world.z_size();
  double best = std::numeric_limits<double>::infinity();
  for (int h = 0; h < wn; ++h) {
    double joint = 0.0;
    for (int z = 0; z < zn; ++z) {
      const double l = world.loss_at(world.predict(h, world.x_of(z)), world.y_of(z));
      joint += world.mu[z] * l + world.mu_prime[z] * l;
    }
    best = std::min(best, joint);
  }
  return best;
}

// Expected cross-hypothesis loss gap between domains under a supplied joint
// prior over W x W (row-major |W|^2 table).
inline double dis_exact(const MicroWorld& world, const std::vector<double>& w_pair_prior) {
  const int wn = world.hypothesis_count();
  require(static_cast<int>(w_pair_prior.size()) == wn * wn,
          "dis_exact: prior must have |W|^2 entries");
  std::vector<double> px(world.x_size, 0.0), pxp(world.x_size, 0.0);
  for (int z = 0; z < world.z_size(); ++z) {
    px[world.x_of(z)] += world.mu[z];
    pxp[world.x_of(z)] += world.mu_prime[z];
  }
  double acc = 0.0;
  for (int a = 0; a < wn; ++a)
    for (int b = 0; b < wn; ++b) {
      const double p = w_pair_prior[a * wn + b];
      if (p <= 0.0) continue;
      for (int x = 0; x < world.x_size; ++x)
        acc += p * (pxp[x] - px[x]) * world.loss_at(world.predict(a, x), world.predict(b, x));
    }
  return std::abs(acc);
}

// Validity reports for the four expectation-based bound families, all
// evaluated exactly from the enumeration. Also checks the internal ordering
// posterior-TV form <= posterior-KL form <= disintegrated-MI form.
inline std::vector<bounds::BoundReport> verify_ep_bounds(const ExactQuantities& q,
                                                         const MicroWorld& world,
                                                         double tol = 1e-9) {
  const double m_bound = world.max_loss();
  const double r = m_bound / 2.0;  // bounded loss is (M/2)-subgaussian
  const double lhs = std::abs(q.err);
  const double inv_nm = 1.0 / (world.n * world.m);
  const int xn = world.x_size, zn = world.z_size();

  auto expect_x = [&](int i, int j, const std::vector<std::vector<std::vector<double>>>& t,
                      auto&& f) {
    double acc = 0.0;
    for (int v = 0; v < xn; ++v) acc += q.p_x_prime[v] * f(t[i][j][v]);
    return acc;
  };
  auto expect_xz = [&](int i, int j,
                       const std::vector<std::vector<std::vector<std::vector<double>>>>& t,
                       auto&& f) {
    double acc = 0.0;
    for (int z = 0; z < zn; ++z) {
      if (world.mu[z] <= 0.0) continue;
      for (int v = 0; v < xn; ++v) acc += world.mu[z] * q.p_x_prime[v] * f(t[i][j][z][v]);
    }
    return acc;
  };

  std::vector<bounds::BoundReport> out;

  {  // disintegrated mutual information + KL(mu || mu')
    double mi_term = 0.0;
    for (int i = 0; i < world.n; ++i)
      for (int j = 0; j < world.m; ++j)
        mi_term += expect_x(i, j, q.mi_disint,
                            [&](double v) { return std::sqrt(2.0 * r * r * v); });
    mi_term *= inv_nm;
    bounds::BoundReport rep;
    rep.name = "ep_disintegrated_mi";
    rep.lhs = lhs;
    rep.rhs = q.kl_src_tgt.scaled(2.0 * r * r).sqrt() + mi_term;
    rep.add("r", r);
    rep.add("mi_term", mi_term);
    rep.add("kl_src_tgt", q.kl_src_tgt.value_or_inf());
    rep.settle(tol);
    out.push_back(std::move(rep));
  }

  {  // min(disintegrated MI, disintegrated Lautum) + min-direction KL
    double info_term = 0.0;
    for (int i = 0; i < world.n; ++i)
      for (int j = 0; j < world.m; ++j)
        for (int v = 0; v < xn; ++v) {
          const ExtReal lautum = q.lautum_disint[i][j][v];
          const double smaller = lautum.is_infinite()
                                     ? q.mi_disint[i][j][v]
                                     : std::min(q.mi_disint[i][j][v], lautum.value());
          info_term += q.p_x_prime[v] * std::sqrt(smaller);
        }
    info_term *= inv_nm * m_bound / std::sqrt(2.0);
    bounds::BoundReport rep;
    rep.name = "ep_mi_lautum_min";
    rep.lhs = lhs;
    rep.rhs = min(q.kl_src_tgt, q.kl_tgt_src).scaled(0.5 * m_bound * m_bound).sqrt() + info_term;
    rep.add("m", m_bound);
    rep.add("info_term", info_term);
    rep.settle(tol);
    out.push_back(std::move(rep));
  }

  {  // posterior Wasserstein under Hamming on W; discrete metric on Z
    double post_term = 0.0;
    for (int i = 0; i < world.n; ++i)
      for (int j = 0; j < world.m; ++j)
        post_term += expect_xz(i, j, q.post_w_hamming, [](double v) { return v; });
    post_term *= inv_nm * m_bound;  // loss gap <= M * 1{predictions differ} <= M * hamming
    bounds::BoundReport rep;
    rep.name = "ep_posterior_wasserstein";
    rep.lhs = lhs;
    rep.rhs = ExtReal::finite(post_term + m_bound * q.tv_joint);
    rep.add("m", m_bound);
    rep.add("posterior_term", post_term);
    rep.add("tv_joint", q.tv_joint);
    rep.settle(tol);
    out.push_back(std::move(rep));
  }

  double tv_form_rhs = 0.0, kl_form_rhs = 0.0;
  {  // posterior total variation
    double post_term = 0.0;
    for (int i = 0; i < world.n; ++i)
      for (int j = 0; j < world.m; ++j)
        post_term += expect_xz(i, j, q.post_tv, [](double v) { return v; });
    post_term *= inv_nm * m_bound;
    bounds::BoundReport rep;
    rep.name = "ep_posterior_tv";
    rep.lhs = lhs;
    tv_form_rhs = post_term + m_bound * q.tv_joint;
    rep.rhs = ExtReal::finite(tv_form_rhs);
    rep.add("m", m_bound);
    rep.add("posterior_term", post_term);
    rep.add("tv_joint", q.tv_joint);
    rep.settle(tol);
    out.push_back(std::move(rep));
  }

  {  // posterior KL (Pinsker'd posterior-TV form)
    double post_term = 0.0;
    for (int i = 0; i < world.n; ++i)
      for (int j = 0; j < world.m; ++j)
        post_term += expect_xz(i, j, q.post_kl, [&](double v) {
          return std::sqrt(0.5 * m_bound * m_bound * v);
        });
    post_term *= inv_nm;
    bounds::BoundReport rep;
    rep.name = "ep_posterior_kl";
    rep.lhs = lhs;
    rep.rhs = q.kl_src_tgt.scaled(0.5 * m_bound * m_bound).sqrt() + post_term;
    kl_form_rhs = rep.rhs.is_infinite() ? std::numeric_limits<double>::infinity()
                                        : rep.rhs.value();
    rep.add("m", m_bound);
    rep.add("posterior_term", post_term);
    rep.settle(tol);
    out.push_back(std::move(rep));
  }

  // ordering: TV form tightens the KL form, which tightens the MI form
  require(tv_form_rhs <= kl_form_rhs + tol,
          "verify_ep_bounds: posterior-TV form exceeds posterior-KL form");
  const auto& mi_rep = out.front();
  if (mi_rep.rhs.is_finite())
    require(kl_form_rhs <= mi_rep.rhs.value() + tol,
            "verify_ep_bounds: posterior-KL form exceeds disintegrated-MI form");
  return out;
}

struct CeDecomposition {
  ExtReal ce;            // expected cross-entropy of the classifier
  double h_y_given_t;    // label entropy given the representation
  ExtReal kl_term;       // E KL(true conditional || classifier)
  double mi_term;        // label information held in the weights, I(W; Y | T)
};

// Classifier table q[w][t][y]; repr_map sends each x to a representation
// atom. The identity ce = H(Y|T) + E KL - I(W;Y|T) is asserted whenever all
// terms are finite.
inline CeDecomposition ce_decomposition(const MicroWorld& world, const ExactQuantities& q,
                                        const std::vector<int>& repr_map,
                                        const std::vector<std::vector<std::vector<double>>>& q_table,
                                        int sample_index = 0) {
  require(sample_index >= 0 && sample_index < world.n, "ce_decomposition: bad sample index");
  require(static_cast<int>(repr_map.size()) == world.x_size,
          "ce_decomposition: repr_map must cover X");
  const int wn = world.hypothesis_count(), yn = world.y_size;
  const int tn = 1 + *std::max_element(repr_map.begin(), repr_map.end());
  require(static_cast<int>(q_table.size()) == wn, "ce_decomposition: classifier table must cover W");

  // joint P(w, t, y) pushed forward from P(w, z)
  std::vector<std::vector<std::vector<double>>> p_wty(
      wn, std::vector<std::vector<double>>(tn, std::vector<double>(yn, 0.0)));
  for (int h = 0; h < wn; ++h)
    for (int z = 0; z < world.z_size(); ++z)
      p_wty[h][repr_map[world.x_of(z)]][world.y_of(z)] += q.p_w_z[sample_index][h][z];

  std::vector<std::vector<double>> p_ty(tn, std::vector<double>(yn, 0.0));
  std::vector<std::vector<double>> p_wt(wn, std::vector<double>(tn, 0.0));
  std::vector<double> p_t(tn, 0.0);
  for (int h = 0; h < wn; ++h)
    for (int t = 0; t < tn; ++t)
      for (int y = 0; y < yn; ++y) {
        p_ty[t][y] += p_wty[h][t][y];
        p_wt[h][t] += p_wty[h][t][y];
        p_t[t] += p_wty[h][t][y];
      }

  CeDecomposition out;
  out.h_y_given_t = 0.0;
  for (int t = 0; t < tn; ++t)
    for (int y = 0; y < yn; ++y)
      if (p_ty[t][y] > 0.0) out.h_y_given_t -= p_ty[t][y] * std::log(p_ty[t][y] / p_t[t]);

  double ce = 0.0, kl = 0.0, mi = 0.0;
  bool ce_inf = false, kl_inf = false;
  for (int h = 0; h < wn; ++h)
    for (int t = 0; t < tn; ++t)
      for (int y = 0; y < yn; ++y) {
        const double p = p_wty[h][t][y];
        if (p <= 0.0) continue;
        const double qv = q_table[h][t][y];
        if (qv <= 0.0) {
          ce_inf = kl_inf = true;
          continue;
        }
        ce -= p * std::log(qv);
        kl += p * std::log((p / p_wt[h][t]) / qv);
        mi += p * std::log((p / p_t[t]) / ((p_wt[h][t] / p_t[t]) * (p_ty[t][y] / p_t[t])));
      }
  out.ce = ce_inf ? ExtReal::infinity() : ExtReal::finite(ce);
  out.kl_term = kl_inf ? ExtReal::infinity() : ExtReal::finite(kl);
  out.mi_term = std::max(mi, 0.0);

  if (!ce_inf) {
    const double recomposed = out.h_y_given_t + out.kl_term.value() - out.mi_term;
    require(std::abs(out.ce.value() - recomposed) <= 1e-9,
            "ce_decomposition: identity violated by " +
                std::to_string(std::abs(out.ce.value() - recomposed)));
  }
  return out;
}

struct PseudoLabelDiag {
  ExtReal kl_joint;        // KL of target vs source joints over (T, Y)
  ExtReal kl_marginal;     // KL of target vs source representation marginals
  ExtReal kl_conditional;  // KL of the true target conditional vs the pseudo-labeler
};

// q_y_given_t[t][y] is the source classifier reused as the pseudo-labeler on
// target representations. When it equals the true source conditional, the
// joint KL splits exactly into marginal + conditional.
inline PseudoLabelDiag pseudo_label_diagnostic(const MicroWorld& world,
                                               const std::vector<int>& repr_map,
                                               const std::vector<std::vector<double>>& q_y_given_t) {
  require(static_cast<int>(repr_map.size()) == world.x_size,
          "pseudo_label_diagnostic: repr_map must cover X");
  const int yn = world.y_size;
  const int tn = 1 + *std::max_element(repr_map.begin(), repr_map.end());
  require(static_cast<int>(q_y_given_t.size()) == tn,
          "pseudo_label_diagnostic: classifier must cover the representation atoms");

  std::vector<double> src_ty(tn * yn, 0.0), tgt_ty(tn * yn, 0.0);
  for (int z = 0; z < world.z_size(); ++z) {
    const int t = repr_map[world.x_of(z)], y = world.y_of(z);
    src_ty[t * yn + y] += world.mu[z];
    tgt_ty[t * yn + y] += world.mu_prime[z];
  }
  std::vector<double> src_t(tn, 0.0), tgt_t(tn, 0.0);
  for (int t = 0; t < tn; ++t)
    for (int y = 0; y < yn; ++y) {
      src_t[t] += src_ty[t * yn + y];
      tgt_t[t] += tgt_ty[t * yn + y];
    }

  PseudoLabelDiag out;
  out.kl_joint = detail::kl_tables_ext(tgt_ty, src_ty);
  out.kl_marginal = detail::kl_tables_ext(tgt_t, src_t);

  double cond = 0.0;
  bool cond_inf = false;
  for (int t = 0; t < tn && !cond_inf; ++t) {
    if (tgt_t[t] <= 0.0) continue;
    for (int y = 0; y < yn; ++y) {
      const double p = tgt_ty[t * yn + y];
      if (p <= 0.0) continue;
      if (q_y_given_t[t][y] <= 0.0) {
        cond_inf = true;
        break;
      }
      cond += p * std::log((p / tgt_t[t]) / q_y_given_t[t][y]);
    }
  }
  out.kl_conditional = cond_inf ? ExtReal::infinity() : ExtReal::finite(cond);

  // identity check applies when the pseudo-labeler matches the true source
  // conditional
  bool matches = true;
  for (int t = 0; t < tn && matches; ++t) {
    if (src_t[t] <= 0.0) continue;
    for (int y = 0; y < yn; ++y)
      if (std::abs(q_y_given_t[t][y] - src_ty[t * yn + y] / src_t[t]) > 1e-12) {
        matches = false;
        break;
      }
  }
  if (matches && out.kl_joint.is_finite() && out.kl_marginal.is_finite() &&
      out.kl_conditional.is_finite()) {
    const double split = out.kl_marginal.value() + out.kl_conditional.value();
    require(std::abs(out.kl_joint.value() - split) <= 1e-9,
            "pseudo_label_diagnostic: decomposition violated by " +
                std::to_string(std::abs(out.kl_joint.value() - split)));
  }
  return out;
}

// Random worlds for property suites. Sizes are kept small enough that the
// hypothesis space stays within the exact-OT support cap (|Y|^|X| <= 64).
struct RandomWorldOptions {
  bool allow_gibbs = true;
  bool strictly_positive = true;  // keep mu, mu' fully supported
};

inline MicroWorld random_world(std::uint64_t seed, const RandomWorldOptions& opts = {}) {
  Rng rng(seed);
  MicroWorld w;
  w.y_size = 2 + static_cast<int>(rng.below(2));
  w.x_size = 2 + static_cast<int>(rng.below(w.y_size == 3 ? 2 : 3));  // cap |W| at 64
  w.n = 1 + static_cast<int>(rng.below(3));
  w.m = 1 + static_cast<int>(rng.below(2));
  const int zn = w.x_size * w.y_size;
  auto random_dist = [&](double floor) {
    std::vector<double> p(zn);
    double total = 0.0;
    for (auto& v : p) {
      v = floor + rng.uniform();
      total += v;
    }
    for (auto& v : p) v /= total;
    return dist::Categorical(p);
  };
  const double floor = opts.strictly_positive ? 5e-3 : 0.0;
  w.mu = random_dist(floor);
  w.mu_prime = random_dist(floor);
  w.loss = MicroWorld::zero_one_loss(w.y_size);
  if (opts.allow_gibbs && rng.below(2) == 0) {
    w.kernel = MicroWorld::Kernel::kGibbs;
    w.gamma = rng.uniform(0.25, 4.0);
  } else {
    w.kernel = MicroWorld::Kernel::kErmUniformTies;
  }
  w.validate();
  return w;
}

}  // namespace uda::oracle
