#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "uda/bounds.hpp"
#include "uda/micro_world.hpp"

using namespace uda;
using namespace uda::bounds;

namespace {

PpIngredients base_ingredients() {
  PpIngredients in;
  in.subgaussian_r = 0.5;
  in.loss_bound = 1.0;
  in.kl_tgt_src = ExtReal::finite(0.5);
  in.kl_src_tgt = ExtReal::finite(0.5);
  return in;
}

const BoundReport& find(const std::vector<BoundReport>& reports, const std::string& name) {
  for (const auto& r : reports)
    if (r.name == name) return r;
  FAIL("missing report " + name);
  return reports.front();
}

}  // namespace

TEST_CASE("pp bound arithmetic on pinned cases", "[bounds]") {
  auto in = base_ingredients();
  auto reports = pp_bounds(in, 0.1, 0.1, 1e-9);
  CHECK(find(reports, "pp_kl_subgaussian").rhs.value() == Catch::Approx(0.5));  // sqrt(2*.25*.5)

  // zero divergences and zero joint risk collapse everything to zero
  PpIngredients zero = base_ingredients();
  zero.kl_tgt_src = ExtReal::finite(0.0);
  zero.kl_src_tgt = ExtReal::finite(0.0);
  zero.kl_x = ExtReal::finite(0.0);
  zero.lambda_star = 0.0;
  zero.w1 = 0.0;
  zero.w1_x = 0.0;
  zero.lipschitz_beta = 1.0;
  for (const auto& rep : pp_bounds(zero, 0.0, 0.0, 1e-9)) {
    CHECK(rep.rhs.value() == Catch::Approx(0.0).margin(1e-15));
    CHECK(rep.valid);
  }

  // Cor of the TV caps at kl = 0.5 with M = 1: min(sqrt(.25), sqrt(1-e^-.5))
  const auto& caps = find(reports, "pp_tv_kl_caps");
  CHECK(caps.rhs.value() == Catch::Approx(0.5));
  CHECK(caps.rhs.value() <= std::sqrt(0.5 * 0.5) + 1e-12);  // ties allowed vs plain form
}

TEST_CASE("tv-cap form never exceeds the plain kl form on a grid", "[bounds]") {
  for (double kl = 0.0; kl <= 12.0; kl += 0.01) {
    PpIngredients in = base_ingredients();
    in.kl_tgt_src = ExtReal::finite(kl);
    in.kl_src_tgt = ExtReal::finite(kl);
    auto reports = pp_bounds(in, 0.0, 0.0, 1e-9);
    const double caps = find(reports, "pp_tv_kl_caps").rhs.value();
    const double plain = std::sqrt(0.5 * kl);  // (M/sqrt(2)) sqrt(kl) with M = 1
    CHECK(caps <= plain + 1e-12);
  }
}

TEST_CASE("min-direction form never exceeds the jeffrey form", "[bounds]") {
  Rng rng(9001);
  for (int trial = 0; trial < 500; ++trial) {
    PpIngredients in = base_ingredients();
    in.kl_tgt_src = ExtReal::finite(rng.uniform(0.0, 5.0));
    in.kl_src_tgt = ExtReal::finite(rng.uniform(0.0, 5.0));
    auto reports = pp_bounds(in, 0.0, 0.0, 1e-9);
    CHECK(find(reports, "pp_kl_min_direction").rhs.value() <=
          find(reports, "pp_jeffrey").rhs.value() + 1e-12);
  }
}

TEST_CASE("every rhs is monotone in its ingredients", "[bounds]") {
  Rng rng(77);
  auto fill = [&](double scale) {
    PpIngredients in;
    in.subgaussian_r = 0.5;
    in.loss_bound = 1.0;
    in.kl_tgt_src = ExtReal::finite(scale * 0.8);
    in.kl_src_tgt = ExtReal::finite(scale * 1.1);
    in.kl_x = ExtReal::finite(scale * 0.6);
    in.w1 = scale * 0.4;
    in.w1_x = scale * 0.3;
    in.lipschitz_beta = 1.0;
    in.lambda_star = scale * 0.2;
    return in;
  };
  for (int trial = 0; trial < 100; ++trial) {
    const double lo = rng.uniform(0.0, 2.0);
    const double hi = lo + rng.uniform(0.0, 2.0);
    auto rep_lo = pp_bounds(fill(lo), 0.0, 0.0, 1e-9);
    auto rep_hi = pp_bounds(fill(hi), 0.0, 0.0, 1e-9);
    REQUIRE(rep_lo.size() == rep_hi.size());
    for (std::size_t k = 0; k < rep_lo.size(); ++k)
      CHECK(rep_lo[k].rhs.value() <= rep_hi[k].rhs.value() + 1e-12);
  }
}

TEST_CASE("negative ingredients are rejected", "[bounds]") {
  PpIngredients in = base_ingredients();
  in.w1 = -0.25;
  in.lipschitz_beta = 1.0;
  CHECK_THROWS_WITH(pp_bounds(in, 0.0, 0.0, 1e-9),
                    Catch::Matchers::ContainsSubstring("negative ingredient"));
}

TEST_CASE("risk sandwich arithmetic and enumeration coverage", "[bounds]") {
  auto s = pp_sandwich(0.5, 0.0, 0.0, 0.42);
  CHECK(s.lower == Catch::Approx(0.42));
  CHECK(s.upper == Catch::Approx(0.42));

  auto wide = pp_sandwich(0.5, 2.0, 2.0, 0.3);
  CHECK(wide.lower == Catch::Approx(0.3 - 1.0));  // reported unclamped
  CHECK(wide.upper == Catch::Approx(0.3 + 1.0));

  // per-hypothesis target risks live inside the sandwich on random worlds
  for (std::uint64_t seed = 900; seed < 1100; ++seed) {
    auto w = oracle::random_world(seed);
    auto q = oracle::enumerate(w);
    const double r = w.max_loss() / 2.0;
    for (int h = 0; h < w.hypothesis_count(); ++h) {
      auto sw = pp_sandwich(r, q.kl_tgt_src.value(), q.kl_tgt_src.value(), q.risk_src[h]);
      CHECK(q.risk_tgt[h] >= sw.lower - 1e-9);
      CHECK(q.risk_tgt[h] <= sw.upper + 1e-9);
    }
  }
}

TEST_CASE("trajectory bound reductions", "[bounds]") {
  // all v_t = 0: only the divergence term remains
  TrajectoryLog quiet(5, TrajectoryStep{0.1, 0.2, 0.0, 0.0});
  auto rep = ep_trajectory_bound(0.5, 8, ExtReal::finite(0.32), quiet, 0.0, 1e-9);
  CHECK(rep.rhs.value() == Catch::Approx(std::sqrt(2.0 * 0.25 * 0.32)));

  // single step with lr = sigma and v = 2n: rhs = R sqrt(2)
  const int n = 8;
  TrajectoryLog single{TrajectoryStep{0.3, 0.3, 2.0 * n, 0.0}};
  auto rep2 = ep_trajectory_bound(0.5, n, ExtReal::finite(0.0), single, 0.0, 1e-9);
  CHECK(rep2.rhs.value() == Catch::Approx(0.5 * std::sqrt(2.0)));

  // noiseless steps leave the bound undefined
  TrajectoryLog bad{TrajectoryStep{0.1, 0.0, 1.0, 0.0}};
  CHECK_THROWS_AS(ep_trajectory_bound(0.5, n, ExtReal::finite(0.0), bad, 0.0, 1e-9), uda::error);
}

TEST_CASE("pp reports validate against exact micro-world gaps", "[bounds]") {
  for (std::uint64_t seed = 4000; seed < 4100; ++seed) {
    auto w = oracle::random_world(seed);
    auto q = oracle::enumerate(w);
    const double m = w.max_loss();
    PpIngredients in;
    in.subgaussian_r = m / 2.0;
    in.loss_bound = m;
    in.kl_tgt_src = q.kl_tgt_src;
    in.kl_src_tgt = q.kl_src_tgt;
    in.kl_x = q.kl_x_fwd;
    in.lambda_star = q.lambda_star;
    in.lipschitz_beta = m;  // bounded loss under the discrete metric
    in.w1 = q.tv_joint;     // Wasserstein equals TV under that metric
    in.w1_x = q.tv_x;
    in.dis_value = q.dis_value;
    for (int h = 0; h < w.hypothesis_count(); ++h) {
      const double gap = q.err_pp[h];
      auto reports = pp_bounds(in, std::abs(gap), gap, 1e-9);
      for (const auto& rep : reports) {
        INFO("seed " << seed << " hypothesis " << h << " report " << rep.name);
        CHECK(rep.valid);
      }
    }
  }
}

TEST_CASE("tighter subgaussian claims and beta proxies are flagged", "[bounds]") {
  PpIngredients in = base_ingredients();
  in.subgaussian_r = 0.3;  // tighter than M/2 = 0.5 with no evidence
  in.w1 = 0.4;
  in.lipschitz_beta = 0.9;
  in.beta_is_heuristic = true;
  auto reports = pp_bounds(in, 0.0, 0.0, 1e-9);
  auto has_flag = [](const BoundReport& rep, const std::string& key) {
    for (const auto& [k, v] : rep.ingredients)
      if (k == key) return true;
    return false;
  };
  CHECK(has_flag(find(reports, "pp_kl_subgaussian"), "unverified_r"));
  CHECK(has_flag(find(reports, "pp_wasserstein"), "heuristic_beta"));
  CHECK_FALSE(has_flag(find(reports, "pp_kl_min_direction"), "unverified_r"));

  in.r_evidence = true;
  auto verified = pp_bounds(in, 0.0, 0.0, 1e-9);
  CHECK_FALSE(has_flag(find(verified, "pp_kl_subgaussian"), "unverified_r"));
}
