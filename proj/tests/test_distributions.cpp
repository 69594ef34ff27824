#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "uda/distributions.hpp"

using namespace uda;
using namespace uda::dist;

namespace {

Categorical random_categorical(Rng& rng, std::size_t support, double floor = 0.0) {
  std::vector<double> p(support);
  double total = 0.0;
  for (auto& v : p) {
    v = floor + rng.uniform();
    total += v;
  }
  for (auto& v : p) v /= total;
  return Categorical(p);
}

// Direct-summation oracle, kept separate from the library implementation.
double kl_by_summation(const std::vector<double>& p, const std::vector<double>& q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
  return acc;
}

}  // namespace

TEST_CASE("closed-form divergences match analytic values", "[distributions]") {
  DiagGaussian std_normal({0.0}, {1.0});
  DiagGaussian shifted({1.0}, {1.0});
  CHECK(kl(std_normal, shifted) == Catch::Approx(0.5));
  CHECK(jeffrey(std_normal, shifted) == Catch::Approx(1.0));

  Categorical b9({0.9, 0.1}), b5({0.5, 0.5});
  // oracle: 0.9 ln 1.8 + 0.1 ln 0.2 and the reverse direction
  const double fwd = kl_by_summation(b9.probs(), b5.probs());
  const double rev = kl_by_summation(b5.probs(), b9.probs());
  CHECK(fwd == Catch::Approx(0.3680642071684971).epsilon(1e-12));
  CHECK(kl(b9, b5).value() == Catch::Approx(fwd).epsilon(1e-12));
  CHECK(jeffrey(b9, b5).value() == Catch::Approx(fwd + rev).epsilon(1e-12));
  CHECK(jeffrey(b9, b5).value() == Catch::Approx(0.8788898309344878).epsilon(1e-12));

  CHECK(tv(b5, b9) == Catch::Approx(0.4));
  CHECK(tv(b9, b9) == 0.0);
}

TEST_CASE("kl identity, nonnegativity and absolute-continuity flag", "[distributions]") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = random_categorical(rng, 2 + rng.below(5));
    CHECK(kl(p, p).value() <= 1e-12);
    auto q = random_categorical(rng, p.size());
    CHECK(kl(p, q).value() >= 0.0);
  }
  DiagGaussian g({0.2, -0.4}, {0.7, 1.3});
  CHECK(kl(g, g) <= 1e-12);

  Categorical with_zero({0.5, 0.5, 0.0});
  Categorical full({0.25, 0.25, 0.5});
  CHECK(kl(full, with_zero).is_infinite());
  CHECK_FALSE(kl(with_zero, full).is_infinite());
  CHECK(jeffrey(full, with_zero).is_infinite());
}

TEST_CASE("categorical constructor renormalizes only within tolerance", "[distributions]") {
  Categorical near({0.5 + 4e-10, 0.5});
  CHECK(near[0] + near[1] == Catch::Approx(1.0).margin(1e-15));
  CHECK_THROWS_AS(Categorical({0.5, 0.6}), uda::error);
  CHECK_THROWS_AS(Categorical({0.7, -0.3, 0.6}), uda::error);
}

TEST_CASE("pinsker and bretagnolle-huber caps over random pairs", "[distributions]") {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t support = 2 + rng.below(6);
    auto p = random_categorical(rng, support);
    auto q = random_categorical(rng, support, 1e-3);
    const double t = tv(p, q);
    const double k = kl(p, q).value();
    CHECK(t <= std::sqrt(0.5 * k) + 1e-10);
    CHECK(t <= std::sqrt(1.0 - std::exp(-k)) + 1e-10);
  }
}

TEST_CASE("joint categorical chain rule", "[distributions]") {
  // mu over X x Y assembled from a marginal and conditional rows; the joint
  // KL must equal marginal KL plus expected conditional KL.
  Rng rng(5150);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nx = 2 + rng.below(3), ny = 2 + rng.below(2);
    auto px = random_categorical(rng, nx, 1e-3);
    auto pxp = random_categorical(rng, nx, 1e-3);
    std::vector<Categorical> rows, rows_p;
    for (std::size_t x = 0; x < nx; ++x) {
      rows.push_back(random_categorical(rng, ny, 1e-3));
      rows_p.push_back(random_categorical(rng, ny, 1e-3));
    }
    std::vector<double> joint(nx * ny), joint_p(nx * ny);
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t y = 0; y < ny; ++y) {
        joint[x * ny + y] = px[x] * rows[x][y];
        joint_p[x * ny + y] = pxp[x] * rows_p[x][y];
      }
    const double lhs = kl(Categorical(joint_p), Categorical(joint)).value();
    double rhs = kl(pxp, px).value();
    for (std::size_t x = 0; x < nx; ++x) rhs += pxp[x] * kl(rows_p[x], rows[x]).value();
    CHECK(lhs == Catch::Approx(rhs).margin(1e-12));
  }
}

TEST_CASE("gaussian log_pdf values and normalization", "[distributions]") {
  DiagGaussian g({0.0}, {1.0});
  CHECK(g.log_pdf(std::vector<double>{0.0}) == Catch::Approx(-0.5 * std::log(2.0 * M_PI)));
  CHECK(g.log_pdf(std::vector<double>{1.0}) ==
        Catch::Approx(-0.5 - 0.5 * std::log(2.0 * M_PI)));

  // trapezoid quadrature of exp(log_pdf) over a wide grid, within 1%
  DiagGaussian g2({0.4}, {0.8});
  const int steps = 4000;
  const double lo = 0.4 - 8.0, hi = 0.4 + 8.0, h = (hi - lo) / steps;
  double mass = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    mass += w * std::exp(g2.log_pdf(std::vector<double>{x}));
  }
  mass *= h;
  CHECK(mass == Catch::Approx(1.0).epsilon(0.01));
}

TEST_CASE("reparameterized sampling is differentiable and degenerate-safe", "[distributions]") {
  // noise = 0 gives the mean
  DiagGaussian g({1.0, -2.0}, {0.5, 0.25});
  auto at_zero = sample_reparam(g, std::vector<double>{0.0, 0.0});
  CHECK(at_zero[0] == 1.0);
  CHECK(at_zero[1] == -2.0);

  // stddev -> 0 limit collapses onto the mean for any noise
  DiagGaussian tight({1.0}, {1e-300});
  CHECK(sample_reparam(tight, std::vector<double>{3.0})[0] == Catch::Approx(1.0));

  // d/dmean E||T||^2 = 2 mean when noise has mean zero; single draw at
  // noise eps gives gradient 2(mean + stddev*eps), checked against central
  // finite differences of the taped expression.
  ad::Tape tape;
  std::vector<double> mean{0.7, -0.3}, stddev{0.4, 0.9}, noise{0.31, -1.2};
  ad::Tensor m = tape.leaf({2}, mean);
  ad::Tensor s({2}, stddev);
  ad::Tensor t = sample_reparam(m, s, noise);
  ad::Tensor obj = ad::l2_norm_squared(t);
  ad::Tensor grad = tape.backward(obj).grad(m);
  for (int i = 0; i < 2; ++i) {
    const double step = 1e-6;
    auto eval = [&](double delta) {
      std::vector<double> mm = mean;
      mm[i] += delta;
      double acc = 0.0;
      for (int k = 0; k < 2; ++k) acc += sqr(mm[k] + stddev[k] * noise[k]);
      return acc;
    };
    const double fd = (eval(step) - eval(-step)) / (2.0 * step);
    CHECK(grad[i] == Catch::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("golden formula: mutual information as a minimum over priors", "[distributions]") {
  // I(X;Y) = min_P E_X KL(Q_{Y|X} || P), attained at the Y-marginal.
  Rng rng(808);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t nx = 2 + rng.below(3), ny = 2 + rng.below(3);
    auto px = random_categorical(rng, nx, 1e-3);
    std::vector<Categorical> rows;
    for (std::size_t x = 0; x < nx; ++x) rows.push_back(random_categorical(rng, ny, 1e-3));
    std::vector<double> py(ny, 0.0);
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t y = 0; y < ny; ++y) py[y] += px[x] * rows[x][y];
    Categorical marginal(py);

    auto objective = [&](const Categorical& prior) {
      double acc = 0.0;
      for (std::size_t x = 0; x < nx; ++x) acc += px[x] * kl(rows[x], prior).value();
      return acc;
    };
    const double mi = objective(marginal);
    CHECK(mi >= -1e-12);
    for (int probe = 0; probe < 20; ++probe)
      CHECK(objective(random_categorical(rng, ny, 1e-3)) >= mi - 1e-9);
  }
}

TEST_CASE("kl separates distinct parameters", "[distributions]") {
  Rng rng(1213);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_categorical(rng, 3);
    auto q = random_categorical(rng, 3);
    if (tv(p, q) > 1e-6) CHECK(kl(p, q).value() > 0.0);
  }
  DiagGaussian a({0.0, 1.0}, {1.0, 0.5});
  DiagGaussian b({0.0, 1.0}, {1.0, 0.500001});
  CHECK(kl(a, b) > 0.0);
}
