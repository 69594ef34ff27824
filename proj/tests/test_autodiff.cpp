#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "uda/autodiff.hpp"
#include "uda/common.hpp"

using namespace uda;
using namespace uda::ad;

namespace {

// Central finite-difference gradient of f at x, the independent oracle for
// every backward check below.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

double max_rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(1.0, std::abs(want[i]));
    worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
  }
  return worst;
}

// Scalar function of a flat parameter vector built from a random sequence of
// ops; evaluable both through the tape and as plain doubles for the oracle.
struct RandomGraph {
  int dim;
  std::vector<int> ops;  // op codes drawn per layer

  double eval_plain(const std::vector<double>& x) const {
    Tape tape;  // unused: constants only
    Tensor t({dim}, x);
    return eval(t).value();
  }
  Tensor eval_taped(Tape& tape, const std::vector<double>& x) const {
    return eval(tape.leaf({dim}, x));
  }
  Tensor eval(Tensor t) const {
    Tensor acc = t;
    for (int op : ops) {
      switch (op) {
        case 0: acc = relu(acc); break;
        case 1: acc = exp(scale(acc, 0.3)); break;
        case 2: acc = log(add_scalar(square(acc), 1.0)); break;
        case 3: acc = mul(acc, add_scalar(acc, 0.5)); break;
        case 4: acc = softplus(acc); break;
        case 5: acc = sub(acc, scale(acc, 0.25)); break;
        default: acc = add(acc, acc); break;
      }
    }
    return mean(square(acc));
  }
};

}  // namespace

TEST_CASE("forward op values match analytic cases", "[autodiff]") {
  Tensor three = Tensor::scalar(3.0);
  CHECK(square(three).value() == Catch::Approx(9.0));

  Tensor a = Tensor::full({2, 3}, 1.0);
  Tensor b = Tensor::full({3, 1}, 1.0);
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape({2, 1}));
  CHECK(c[0] == Catch::Approx(3.0));
  CHECK(c[1] == Catch::Approx(3.0));

  Tensor logits({1, 2}, {0.0, 0.0});
  CHECK(softmax_cross_entropy(logits, {0}).value() == Catch::Approx(std::log(2.0)));
}

TEST_CASE("shape mismatches are rejected with extents named", "[autodiff]") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                   Catch::Matchers::ContainsSubstring("[3,2]"));
  CHECK_THROWS_WITH(matmul(a, Tensor::zeros({2, 2})),
                    Catch::Matchers::ContainsSubstring("[2,3]"));
  Tape tape;
  Tensor v = tape.leaf({2}, {1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(v), uda::error);  // non-scalar root
}

TEST_CASE("backward matches hand-derived gradients", "[autodiff]") {
  Tape tape;
  Tensor x = tape.leaf({1}, {3.0});
  Tensor y = square(x);
  CHECK(tape.backward(y).grad(x)[0] == Catch::Approx(6.0));

  Tape tape2;
  Tensor v = tape2.leaf({2}, {-1.0, 2.0});
  Tensor r = sum(relu(v));
  Tensor g = tape2.backward(r).grad(v);
  CHECK(g[0] == Catch::Approx(0.0));
  CHECK(g[1] == Catch::Approx(1.0));
}

TEST_CASE("backward matches central finite differences on random graphs", "[autodiff]") {
  Rng rng(20240811);
  for (int trial = 0; trial < 100; ++trial) {
    RandomGraph graph;
    graph.dim = 2 + static_cast<int>(rng.below(4));
    const int depth = 2 + static_cast<int>(rng.below(3));
    for (int i = 0; i < depth; ++i) graph.ops.push_back(static_cast<int>(rng.below(6)));

    std::vector<double> x(graph.dim);
    for (auto& v : x) v = rng.uniform(-1.5, 1.5);
    // keep relu kinks away from the evaluation point
    for (auto& v : x)
      if (std::abs(v) < 0.05) v += 0.1;

    Tape tape;
    Tensor leaf = tape.leaf({graph.dim}, x);
    Tensor loss = graph.eval(leaf);
    Tensor grad = tape.backward(loss).grad(leaf);

    auto oracle = fd_gradient([&](const std::vector<double>& p) { return graph.eval_plain(p); }, x);
    INFO("trial " << trial);
    CHECK(max_rel_err(grad.data(), oracle) < 1e-4);
  }
}

TEST_CASE("mixture log-density and cross-entropy gradients pass the fd oracle", "[autodiff]") {
  Rng rng(7);
  const int b = 3, d = 2;
  std::vector<double> mu(b * d), raw_sig(b * d), xs(b * d);
  for (auto& v : mu) v = rng.uniform(-1, 1);
  for (auto& v : raw_sig) v = rng.uniform(-0.5, 0.5);
  for (auto& v : xs) v = rng.uniform(-1, 1);

  auto loss_from = [&](const std::vector<double>& m) {
    Tensor mt({b, d}, m);
    Tensor st = softplus(Tensor({b, d}, raw_sig));
    Tensor xt({b, d}, xs);
    return mean(logsumexp_axis1(gaussian_logpdf_matrix(xt, mt, st))).value();
  };

  Tape tape;
  Tensor mt = tape.leaf({b, d}, mu);
  Tensor st = softplus(tape.leaf({b, d}, raw_sig));
  Tensor xt({b, d}, xs);
  Tensor loss = mean(logsumexp_axis1(gaussian_logpdf_matrix(xt, mt, st)));
  Tensor grad = tape.backward(loss).grad(mt);
  CHECK(max_rel_err(grad.data(), fd_gradient(loss_from, mu)) < 1e-4);

  // cross-entropy wrt logits
  std::vector<double> lg(9);
  for (auto& v : lg) v = rng.uniform(-2, 2);
  std::vector<int> labels{1, 0, 2};
  auto ce_from = [&](const std::vector<double>& l) {
    return softmax_cross_entropy(Tensor({3, 3}, l), labels).value();
  };
  Tape tape2;
  Tensor lt = tape2.leaf({3, 3}, lg);
  Tensor ce = softmax_cross_entropy(lt, labels);
  Tensor gce = tape2.backward(ce).grad(lt);
  CHECK(max_rel_err(gce.data(), fd_gradient(ce_from, lg)) < 1e-4);
}

TEST_CASE("backward is linear in the root", "[autodiff]") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 3;
    std::vector<double> x(d);
    for (auto& v : x) v = rng.uniform(0.2, 1.5);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);

    Tape tape;
    Tensor leaf = tape.leaf({d}, x);
    Tensor f = sum(square(leaf));
    Tensor g = sum(log(leaf));
    Tensor combo = add(scale(f, a), scale(g, b));

    Tensor grad_combo = tape.backward(combo).grad(leaf);
    Tensor grad_f = tape.backward(f).grad(leaf);
    Tensor grad_g = tape.backward(g).grad(leaf);
    for (int i = 0; i < d; ++i)
      CHECK(grad_combo[i] == Catch::Approx(a * grad_f[i] + b * grad_g[i]).margin(1e-12));
  }
}

TEST_CASE("gradients of a gradient: double backward on a quartic", "[autodiff]") {
  // f(x) = sum x^4; df/dx = 4x^3; d/dx dot(df, v) = 12 x^2 v
  Tape tape;
  std::vector<double> x{0.5, -1.25};
  std::vector<double> v{2.0, 3.0};
  Tensor leaf = tape.leaf({2}, x);
  Tensor f = sum(square(square(leaf)));
  Tensor g = tape.backward(f).grad(leaf);
  Tensor s = dot(g, Tensor({2}, v));
  Tensor hv = tape.backward(s).grad(leaf);
  for (int i = 0; i < 2; ++i) CHECK(hv[i] == Catch::Approx(12.0 * x[i] * x[i] * v[i]));
}

TEST_CASE("hessian-vector products: analytic and cross-mode checks", "[autodiff]") {
  // identity Hessian: L = 0.5 ||w||^2
  ScalarLossFn half_sq = [](Tape&, const Tensor& w) { return scale(l2_norm_squared(w), 0.5); };
  Tensor w({3}, {0.3, -1.0, 2.0});
  Tensor v({3}, {1.0, -2.0, 0.5});
  for (HvpMode mode : {HvpMode::kExact, HvpMode::kFiniteDifference}) {
    Tensor hv = hessian_vector_product(half_sq, w, v, mode);
    for (int i = 0; i < 3; ++i) CHECK(hv[i] == Catch::Approx(v[i]).epsilon(1e-6));
  }

  // diagonal D = (1,4): L = 0.5 w' D w, Hv = Dv
  ScalarLossFn diag_q = [](Tape&, const Tensor& w) {
    Tensor d({2}, {1.0, 4.0});
    return scale(dot(mul(w, d), w), 0.5);
  };
  Tensor w2({2}, {0.7, -0.2});
  Tensor ones({2}, {1.0, 1.0});
  Tensor hv = hessian_vector_product(diag_q, w2, ones, HvpMode::kExact);
  CHECK(hv[0] == Catch::Approx(1.0));
  CHECK(hv[1] == Catch::Approx(4.0));

  // zero direction short-circuits
  Tensor hz = hessian_vector_product(half_sq, w, Tensor::zeros({3}), HvpMode::kFiniteDifference);
  for (int i = 0; i < 3; ++i) CHECK(hz[i] == 0.0);

  // random quadratics: exact vs fd agreement
  Rng rng(4242);
  for (int trial = 0; trial < 25; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(3));
    std::vector<double> amat(d * d), wv(d), vv(d);
    for (auto& q : amat) q = rng.uniform(-1, 1);
    for (auto& q : wv) q = rng.uniform(-1, 1);
    for (auto& q : vv) q = rng.uniform(-1, 1);
    Tensor a({d, d}, amat);
    // quadratic through matmul: L = 0.5 * (Aw) . (Aw)
    ScalarLossFn quad2 = [a](Tape&, const Tensor& w) {
      Tensor wcol = transpose(broadcast_axis0(w, 1));  // (d x 1)
      Tensor aw = matmul(a, wcol);
      return scale(l2_norm_squared(aw), 0.5);
    };
    Tensor we({d}, wv), ve({d}, vv);
    Tensor exact = hessian_vector_product(quad2, we, ve, HvpMode::kExact);
    Tensor fd = hessian_vector_product(quad2, we, ve, HvpMode::kFiniteDifference);
    double rel = max_rel_err(fd.data(), exact.data());
    INFO("trial " << trial);
    CHECK(rel < 1e-3);
  }
}
