#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sievebias/quadrature.hpp"

using namespace sievebias;

namespace {

double prod(std::span<const double> w) {
  double p = 1.0;
  for (double x : w) p *= x;
  return p;
}

// Z_k for the theorem2 function to leading order: the higher moments of the
// bump are common to all terms and cancel, leaving
// J [M^-k - mean over V of (1/M + v_1)^k].
double theorem2_zk_closed_form(int M, double delta, int k, double J) {
  const double w = 1.0 / M;
  const double mean_shift = 0.5 * (std::pow(w + delta / 2, k) + std::pow(w - delta / 2, k));
  return J * (std::pow(w, k) - mean_shift);
}

}  // namespace

TEST(Bump, Values) {
  const double xi = 0.3;
  std::vector<double> zero{0.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(bump(zero, xi), 1.0);
  std::vector<double> edge{xi, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(bump(edge, xi), 0.0);
  std::vector<double> half{xi / 2, xi / 2, 0.0};  // |v|^2 = xi^2/2
  EXPECT_NEAR(bump(half, xi), 0.25, 1e-15);
  std::vector<double> outside{xi, xi, 0.0};
  EXPECT_EQ(bump(outside, xi), 0.0);
  EXPECT_THROW(bump(zero, 0.0), std::invalid_argument);
}

TEST(BallRuleTest, WeightsMatchClosedForms) {
  for (int d = 0; d <= 4; ++d) {
    for (int q : {0, 2}) {
      const auto rule = make_ball_rule(d, q, 2, 8);
      double s = 0.0;
      for (double w : rule.weights) s += w;
      EXPECT_NEAR(s, BallRule::total_weight(d, q), 1e-12 * BallRule::total_weight(d, q)) << d << "," << q;
    }
  }
  // q = 2: |S^{d-1}| * 8 / (d (d+2) (d+4))
  for (int d = 1; d <= 4; ++d) {
    EXPECT_NEAR(BallRule::total_weight(d, 2), BallRule::sphere_area(d) * 8.0 / (d * (d + 2.0) * (d + 4.0)), 1e-13);
  }
  // second moment of t_1 over B^3 with (1 - |t|^2)^2: (1/3) |S^2| B(5/2, 3)/2
  const auto rule = make_ball_rule(3, 2, 2, 8);
  double m2 = 0.0;
  for (std::size_t n = 0; n < rule.size(); ++n) m2 += rule.weights[n] * rule.nodes[3 * n] * rule.nodes[3 * n];
  const double expect = BallRule::sphere_area(3) * boost::math::beta(2.5, 3.0) / 2.0 / 3.0;
  EXPECT_NEAR(m2, expect, 1e-13);
}

TEST(TestFunctions, Theorem1Values) {
  for (int sigma : {-1, 1}) {
    auto s = make_theorem1_spec(3, 1.0 / 27, sigma);
    std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 - 2.0 / 3};
    EXPECT_NEAR(f_one_M(w, s), sigma * 1.0, 1e-12);  // (-1)^{M+1} = 1 for M = 3
  }
  auto s4 = make_theorem1_spec(4, 1.0 / 48, 1);
  std::vector<double> w4(4, 0.25);
  EXPECT_DOUBLE_EQ(f_one_M(w4, s4), -1.0);
  // support: any u with min u_i <= 1/(2M) gives 0
  auto s = make_theorem1_spec(3, 1.0 / 27, 1);
  std::vector<double> boundary{1.0 / 6, 0.5, 1.0 / 3};
  EXPECT_EQ(f_one_M(boundary, s), 0.0);
  std::vector<double> bad{0.5, 0.5, 0.5};
  EXPECT_THROW(f_one_M(bad, s), std::invalid_argument);
}

TEST(TestFunctions, Theorem2Values) {
  const int M = 4;
  const double delta = 1.0 / 64;
  auto s = make_theorem2_spec(M, delta);
  EXPECT_EQ(s.bumps.size(), 1u + 6u);
  std::vector<double> w(4, 0.25);
  EXPECT_NEAR(f_one_M(w, s), std::pow(0.25, 4), 1e-18);
  EXPECT_THROW(make_theorem2_spec(3, delta), std::invalid_argument);
  // at a shifted center the shifted bump dominates
  std::vector<double> shifted{0.25 + delta / 2, 0.25 + delta / 2, 0.25 - delta / 2, 0.25 - delta / 2};
  EXPECT_NEAR(f_one_M(shifted, s), -prod(shifted) / 6.0, 1e-18);
}

TEST(TestFunctions, SymmetryAndSupportSampling) {
  std::mt19937_64 rng(11);
  for (auto spec : {make_theorem1_spec(3, 1.0 / 27, 1), make_theorem2_spec(4, 1.0 / 50)}) {
    const int M = spec.M;
    std::normal_distribution<double> n(0.0, spec.variant == Variant::theorem1 ? 0.02 : 0.01);
    for (int trial = 0; trial < 2000; ++trial) {
      std::vector<double> u(M);
      double s = 0.0;
      for (int i = 0; i < M - 1; ++i) {
        u[i] = 1.0 / M + n(rng);
        s += u[i];
      }
      u[M - 1] = 1.0 - s;
      const double base = f_one_M(u, spec);
      auto p = u;
      std::shuffle(p.begin(), p.end(), rng);
      double ps = 0.0;
      for (double x : p) ps += x;
      if (std::abs(ps - 1.0) > 1e-12) continue;
      EXPECT_NEAR(f_one_M(p, spec), base, 1e-12);
      EXPECT_LE(std::abs(base), 1.0);
      if (*std::min_element(u.begin(), u.end()) <= spec.support_floor()) EXPECT_EQ(base, 0.0);
    }
  }
}

TEST(TestFunctions, CustomSpecs) {
  auto zero = make_zero_spec(3, 1.0 / 27);
  std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_EQ(f_one_M(w, zero), 0.0);
  // asymmetric bump set is rejected
  std::vector<BumpTerm> asym{{{0.30, 0.35, 0.35}, 1.0}};
  EXPECT_THROW(make_custom_spec(3, 0.01, 0.01, asym), std::invalid_argument);
  std::vector<BumpTerm> sym{{{0.30, 0.35, 0.35}, 1.0}, {{0.35, 0.30, 0.35}, 1.0}, {{0.35, 0.35, 0.30}, 1.0}};
  EXPECT_NO_THROW(make_custom_spec(3, 0.01, 0.01, sym));
  // support reaching the floor is rejected
  std::vector<BumpTerm> wide{{{1.0 / 3, 1.0 / 3, 1.0 / 3}, 1.0}};
  EXPECT_THROW(make_custom_spec(3, 0.25, 0.25, wide), std::invalid_argument);
  EXPECT_NE(make_theorem1_spec(3, 1.0 / 27, 1).hash(), make_theorem1_spec(3, 1.0 / 27, -1).hash());
}

TEST(HyperplaneIntegral, ClosedFormMatchesQuadratureAndGrid) {
  for (int M : {2, 3, 4, 5}) {
    auto spec = make_theorem1_spec(M, 1.0 / (3.0 * M * M), 1);
    QuadratureConfig q;
    auto ms = moments(spec, q, 0);
    EXPECT_NEAR(ms.J, ms.J_exact, 1e-12 * ms.J_exact) << M;
  }
  const double xi = 0.05;
  std::vector<double> zero{0.0};
  const double grid = grid_slice_integral({3}, zero, -xi, xi, 800, [&](std::span<const double> w) {
    return bump(w, xi);
  });
  EXPECT_NEAR(grid, bump_hyperplane_integral(3, xi), 1e-5 * bump_hyperplane_integral(3, xi));
}

TEST(FAlpha, OnesCollapsesToTestFunction) {
  auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  auto table = make_coefficient_table(3);
  QuadratureConfig q;
  std::vector<double> v{0.34, 0.33, 0.33};
  EXPECT_DOUBLE_EQ(f_alpha(v, Partition::ones(3), spec, table, q).value, f_one_M(v, spec));
}

TEST(FAlpha, SinglePartEqualsScaledZ0) {
  for (int sigma : {-1, 1}) {
    auto spec = make_theorem1_spec(3, 1.0 / 27, sigma);
    auto table = make_coefficient_table(3);
    QuadratureConfig q;
    auto ms = moments(spec, q, 1);
    std::vector<double> one{1.0};
    const double f = f_alpha(one, Partition({3}), spec, table, q).value;
    EXPECT_NEAR(f, ms.Z[0] / 3.0, 1e-13 * std::abs(ms.Z[0]));
  }
}

TEST(FAlpha, OneDimensionalSliceMatchesGrid) {
  auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  auto table = make_coefficient_table(3);
  QuadratureConfig q;
  q.levels = 3;
  for (double v1 : {1.0 / 3, 1.0 / 3 + 0.01, 1.0 / 3 - 0.02}) {
    std::vector<double> v{v1, 1.0 - v1};
    const auto r = f_alpha(v, Partition({1, 2}), spec, table, q);
    const double grid = grid_slice_integral({1, 2}, v, 0.2, 0.5, 200000, [&](std::span<const double> w) {
      return f_one_M(w, spec) / prod(w);
    });
    const double expect = -0.5 * v[0] * v[1] * grid;  // e_(1,2) = -1/2
    EXPECT_NEAR(r.value, expect, 1e-8 * std::abs(expect) + 1e-14) << v1;
    EXPECT_LE(r.error, 1e-10 * std::abs(r.value) + r.floor);
  }
  // reversed argument order is the same point up to symmetry
  std::vector<double> v{0.34, 0.66};
  std::vector<double> rev{0.66, 0.34};
  EXPECT_DOUBLE_EQ(f_alpha(v, Partition({1, 2}), spec, table, q).value,
                   f_alpha(rev, Partition({1, 2}), spec, table, q).value);
  // arguments outside the class regions give 0
  std::vector<double> off{0.5, 0.5};
  EXPECT_EQ(f_alpha(off, Partition({1, 2}), spec, table, q).value, 0.0);
  std::vector<double> badsum{0.3, 0.3};
  EXPECT_THROW(f_alpha(badsum, Partition({1, 2}), spec, table, q), std::invalid_argument);
}

TEST(FAlpha, TwoDimensionalSliceMatchesGrid) {
  auto spec = make_theorem1_spec(4, 1.0 / 48, 1);
  auto table = make_coefficient_table(4);
  QuadratureConfig q;
  std::vector<double> v{0.26, 0.74};
  const auto r = f_alpha(v, Partition({1, 3}), spec, table, q);
  const double grid = grid_slice_integral({1, 3}, v, 0.2, 0.3, 1500, [&](std::span<const double> w) {
    return f_one_M(w, spec) / prod(w);
  });
  const double expect = table.e_double(Partition({1, 3})) * v[0] * v[1] * grid;
  EXPECT_NEAR(r.value, expect, 2e-6 * std::abs(expect));
}

TEST(FAlpha, BoundPropagationUnderStrictDelta) {
  const int M = 3;
  const double delta = std::pow(2.0 * M, -M);
  auto spec = make_theorem1_spec(M, delta, 1);
  auto table = make_coefficient_table(M);
  QuadratureConfig q;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double bound = delta * std::pow(2.0 * M, M);
  EXPECT_LE(bound, 1.0 + 1e-15);
  for (int n = 0; n < 300; ++n) {
    std::vector<double> v{1.0 / M + delta * u(rng), 0.0};
    v[1] = 1.0 - v[0];
    EXPECT_LE(std::abs(f_alpha(v, Partition({1, 2}), spec, table, q).value), bound);
  }
  std::vector<double> one{1.0};
  EXPECT_LE(std::abs(f_alpha(one, Partition({3}), spec, table, q).value), bound);
}

TEST(Moments, Theorem1FirstMomentAndGridOracle) {
  auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  QuadratureConfig q;
  q.subdivisions = 1;
  q.levels = 3;
  auto ms = moments(spec, q, 3);
  EXPECT_NEAR(ms.Z[1], ms.Z[0] / 3.0, 1e-6 * std::abs(ms.Z[0]));
  EXPECT_TRUE(refinement_order_ok(ms.Z_history[0], ms.Z_floor[0]));
  const double xi = spec.xi;
  std::vector<double> one{1.0};
  const double grid = grid_slice_integral({3}, one, 1.0 / 3 - xi, 1.0 / 3 + xi, 600, [&](std::span<const double> w) {
    return f_one_M(w, spec) / prod(w);
  });
  EXPECT_NEAR(ms.Z[0], grid, 1e-5 * std::abs(grid));
  EXPECT_GT(ms.Z[0], 0.0);
}

TEST(Moments, Theorem2CancellationAndSigns) {
  const int M = 4;
  const double delta = 1.0 / 4096;
  auto spec = make_theorem2_spec(M, delta);
  QuadratureConfig q;
  auto ms = moments(spec, q, 6);
  EXPECT_NEAR(ms.J, ms.J_exact, 1e-12 * ms.J_exact);
  EXPECT_LE(std::abs(ms.Z[0]), 1e-8 * ms.J);
  for (int k = 2; k <= 6; ++k) {
    EXPECT_LT(ms.Z[k], 0.0) << k;
    const double cf = theorem2_zk_closed_form(M, delta, k, ms.J_exact);
    EXPECT_NEAR(ms.Z[k], cf, 1e-6 * std::abs(cf)) << k;
  }
  EXPECT_NEAR(ms.Z[2], -ms.J * delta * delta / 4, 1e-6 * ms.J * delta * delta / 4);
}

TEST(Moments, Theorem2AgainstGridAtModerateRadius) {
  // radius delta^3 = 0.008 so the midpoint grid resolves every bump
  const int M = 2;
  const double delta = 0.2;
  auto spec = make_theorem2_spec(M, delta);
  QuadratureConfig q;
  auto ms = moments(spec, q, 3);
  std::vector<double> one{1.0};
  for (int k = 0; k <= 3; ++k) {
    const double grid = grid_slice_integral({2}, one, 0.3, 0.7, 400000, [&](std::span<const double> w) {
      return std::pow(w[0], k) * f_one_M(w, spec) / prod(w);
    });
    EXPECT_NEAR(ms.Z[k], grid, 1e-8 * ms.J) << k;
  }
}

TEST(Moments, LowerBoundCheck) {
  QuadratureConfig q;
  auto r = zk_lower_bound_check(4, 1.0 / 4096, q, 6);
  ASSERT_EQ(r.rows.size(), 5u);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(row.holds) << row.k;
    EXPECT_GE(row.minus_Zk, row.second_difference * (1 - 1e-6)) << row.k;
  }
  EXPECT_NEAR(r.eps, 1.0 / (4096.0 * 8), 1e-18);
  // the ratio (-Z_{k+1} M)/(-Z_k) follows (k+1)/(k-1) at leading order
  for (const auto& row : r.rows) {
    if (row.k < 6) EXPECT_NEAR(row.ratio_next, (row.k + 1.0) / (row.k - 1.0), 1e-3) << row.k;
  }
  EXPECT_THROW(zk_lower_bound_check(3, 1e-3, q), std::invalid_argument);
}

TEST(Identity, ResidualsVanishForM3) {
  auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  auto table = make_coefficient_table(3);
  QuadratureConfig q;
  q.subdivisions = 1;
  q.levels = 3;
  std::vector<double> none;
  auto e = verify_main_identity(spec, Partition{}, none, table, q);
  EXPECT_EQ(e.terms.size(), 3u);
  EXPECT_LE(e.normalized, 1e-4);
  EXPECT_GT(e.max_term, 0.0);
  std::vector<double> v{1.0 / 3};
  auto b = verify_main_identity(spec, Partition({1}), v, table, q);
  EXPECT_EQ(b.terms.size(), 2u);
  EXPECT_LE(b.normalized, 1e-4);
  std::vector<double> v2{0.5};
  EXPECT_THROW(verify_main_identity(spec, Partition({2}), v2, table, q), std::invalid_argument);
}

TEST(Identity, ResidualsVanishForM4Theorem2) {
  auto spec = make_theorem2_spec(4, 1.0 / 48);
  auto table = make_coefficient_table(4);
  QuadratureConfig q;
  q.subdivisions = 1;
  q.levels = 2;
  std::vector<double> v{0.25 + 0.5 / 48};
  auto r = verify_main_identity(spec, Partition({1}), v, table, q);
  EXPECT_LE(r.normalized, 1e-3);
}

TEST(Refinement, OrderCheck) {
  EXPECT_TRUE(refinement_order_ok({1.0, 1.1, 1.101, 1.10101}, 0.0));
  EXPECT_FALSE(refinement_order_ok({1.0, 1.1, 1.15, 1.17}, 0.0));
  EXPECT_TRUE(refinement_order_ok({1.0, 1.0 + 1e-17, 1.0}, 1e-15));
}

TEST(Evaluator, InterpolationCloseToExact) {
  auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  auto table = make_coefficient_table(3);
  QuadratureConfig q;
  FAlphaEvaluator interp(spec, table, q, false);
  FAlphaEvaluator exact(spec, table, q, true);
  EXPECT_TRUE(interp.interpolating());
  EXPECT_FALSE(exact.interpolating());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double scale = std::abs(exact(std::vector<double>{1.0 / 3, 2.0 / 3}, Partition({1, 2})));
  for (int n = 0; n < 200; ++n) {
    std::vector<double> v{1.0 / 3 + u(rng) / 27, 0.0};
    v[1] = 1.0 - v[0];
    EXPECT_NEAR(interp(v, Partition({1, 2})), exact(v, Partition({1, 2})), 2e-3 * scale);
  }
  auto tiny = make_theorem2_spec(4, 1.0 / 48);
  FAlphaEvaluator t(tiny, make_coefficient_table(4), q, false);
  EXPECT_FALSE(t.interpolating());
}
