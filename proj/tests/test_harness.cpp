#include <gtest/gtest.h>

#include <cmath>

#include "sievebias/harness.hpp"

using namespace sievebias;

namespace {

WindowConfig thm1_window(u64 x, u64 y, int sigma = 1) {
  WindowConfig c;
  c.x = x;
  c.y = y;
  c.M = 3;
  c.delta = 1.0 / 27;
  c.varpi = 0.46;
  c.nu = 0.51;
  c.sigma = sigma;
  return c;
}

struct Trial {
  int mu = 1;
  int omega_total = 0;
  std::vector<u64> primes;  // distinct
};

Trial factor_trial(u64 n) {
  Trial t;
  for (u64 p = 2; p * p <= n; ++p) {
    if (n % p) continue;
    int e = 0;
    while (n % p == 0) {
      n /= p;
      ++e;
    }
    t.primes.push_back(p);
    t.omega_total += e;
    t.mu = e > 1 ? 0 : -t.mu;
  }
  if (n > 1) {
    t.primes.push_back(n);
    ++t.omega_total;
    t.mu = -t.mu;
  }
  return t;
}

const WeightedSlab& thm1_slab() {
  static const WeightedSlab s = assemble_slab(thm1_window(1000000, 10000), make_theorem1_spec(3, 1.0 / 27, 1),
                                              QuadratureConfig{});
  return s;
}

}  // namespace

TEST(RemainderScan, UnbiasedSlabIsPureRounding) {
  auto s = assemble_slab(thm1_window(1000000, 10000), make_zero_spec(3, 1.0 / 27), QuadratureConfig{});
  auto rep = remainder_scan(s, 500);
  EXPECT_TRUE(rep.routes_agree);
  for (const auto& r : rep.rows) {
    ASSERT_EQ(r.r_d, 0.0);
    ASSERT_LE(std::abs(r.r_d_mass), 2.0) << r.d;
  }
  EXPECT_EQ(rep.sum_a, 10000.0);
}

TEST(RemainderScan, MatchesDirectDivisorSums) {
  const auto& s = thm1_slab();
  auto rep = remainder_scan(s, 300);
  EXPECT_TRUE(rep.routes_agree);
  EXPECT_EQ(rep.cross_checked_up_to, 300u);
  const auto b = s.dense_b();
  for (u64 d : {1ull, 2ull, 7ull, 61ull, 97ull, 300ull}) {
    double direct = 0.0;
    for (u64 n = s.cfg.x + 1; n <= s.cfg.end(); ++n) {
      if (n % d == 0) direct += 1.0 + b[n - s.cfg.x - 1];
    }
    EXPECT_NEAR(rep.rows[d - 1].A_d, direct, 1e-9) << d;
    EXPECT_GE(rep.rows[d - 1].A_d, 0.0);
  }
  // d = 1 carries the global sum of b_n
  EXPECT_EQ(rep.rows[0].r_d, slab_stats(s).sum_b);
  EXPECT_NE(rep.rows[0].r_d, 0.0);
  EXPECT_THROW(remainder_scan(s, 0), std::invalid_argument);
  RemainderOptions tiny;
  tiny.memory_budget_bytes = 1024;
  EXPECT_THROW(remainder_scan(s, 1000, tiny), BudgetError);
}

TEST(ClassCancellation, DomainChecksAndDirectSum) {
  const auto& s = thm1_slab();
  EXPECT_THROW(class_cancellation(s, {2}, {1}), std::invalid_argument);  // sum 2 = M - 1
  EXPECT_THROW(class_cancellation(s, {1}, {4}), std::invalid_argument);  // 2 lies in no class
  auto e = class_cancellation(s, {}, {1});
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].sum, slab_stats(s).sum_b);

  // first prime of P_1 and a direct scan over the slab
  auto [small, window] = sieve_class_tables(s.cfg);
  const u64 p = build_prime_classes(s.cfg, small, window).of(1).front();
  auto r = class_cancellation(s, {1}, {p});
  double direct = 0.0;
  const auto alphas = s.alphas();
  for (const auto& en : s.entries) {
    if (en.n % p == 0 && alphas[en.alpha_index].contains({1})) direct += en.b;
  }
  EXPECT_NEAR(r[0].sum, direct, 1e-12);
  EXPECT_NEAR(r[0].normalized, direct * p / 10000.0, 1e-12);
}

TEST(MomentScan, AgreesWithDivisorSumOracle) {
  const auto& s = thm1_slab();
  auto ms = moments(make_theorem1_spec(3, 1.0 / 27, 1), QuadratureConfig{}, 3);
  auto rep = moment_scan(s, 3, &ms);
  ASSERT_EQ(rep.rows.size(), 3u);
  const auto b = s.dense_b();
  // oracle over a sub-sample: exact values via the divisor-lattice recursion
  double s2 = 0.0, s1 = 0.0, mu = 0.0, la = 0.0;
  for (u64 n = s.cfg.x + 1; n <= s.cfg.end(); ++n) {
    const double a = 1.0 + b[n - s.cfg.x - 1];
    s1 += a * lambda_k_oracle(n, 1);
    s2 += a * lambda_k_oracle(n, 2);
    const auto t = factor_trial(n);
    mu += a * t.mu;
    la += a * (t.omega_total % 2 == 0 ? 1 : -1);
  }
  EXPECT_NEAR(rep.rows[0].S, s1, 1e-9 * std::abs(s1));
  EXPECT_NEAR(rep.rows[1].S, s2, 1e-9 * std::abs(s2));
  EXPECT_NEAR(rep.parity.sum_mu, mu, 1e-8);
  EXPECT_NEAR(rep.parity.sum_lambda, la, 1e-8);
  const double L = std::log(1e6);
  EXPECT_NEAR(rep.rows[1].T, s2 / (2 * 10000 * L), 1e-12);
  EXPECT_NEAR(rep.rows[0].predicted_bias, ms.Z[1], 1e-18);
  EXPECT_NEAR(rep.parity.predicted, -ms.Z[0] * 10000 / L, 1e-9);
  EXPECT_EQ(rep.parity.mismatch_squarefree, 0u);
  EXPECT_EQ(rep.parity.mu_lambda_mismatch, [&] {
    std::size_t c = 0;
    for (const auto& e : s.entries) c += (e.b != 0.0 && !squarefree_factors(e.factors));
    return c;
  }());

  auto other = moments(make_theorem1_spec(3, 1.0 / 27, -1), QuadratureConfig{}, 3);
  EXPECT_THROW(moment_scan(s, 3, &other), std::invalid_argument);
  EXPECT_THROW(moment_scan(s, 5, &ms), std::invalid_argument);
}

TEST(MomentScan, UnbiasedWindowFromZeroIsPsi) {
  auto s = selberg_sequence(0, 100000);
  for (auto& e : s.entries) e.b = 0.0;
  auto rep = moment_scan(s, 2, nullptr);
  const double psi = chebyshev_psi(100000);
  EXPECT_NEAR(rep.rows[0].S, psi, 1e-12 * psi);
  EXPECT_FALSE(rep.has_prediction);
}

TEST(MomentScan, SelbergSequenceCancelsPrimes) {
  auto s = selberg_sequence(0, 100000);
  auto rep = moment_scan(s, 1, nullptr);
  // a_p = 0 on primes, so S_1 only sees prime powers p^a with a even
  double even_powers = 0.0;
  for (u64 p = 2; p * p <= 100000; ++p) {
    if (factor_trial(p).primes.size() != 1 || factor_trial(p).omega_total != 1) continue;
    for (u64 q = p * p; q <= 100000; q *= p * p) {
      even_powers += 2 * std::log(static_cast<double>(p));
      if (q > 100000 / (p * p)) break;
    }
  }
  EXPECT_NEAR(rep.rows[0].S, even_powers, 1e-8 * even_powers);
  EXPECT_LE(std::abs(rep.rows[0].S), 10 * std::sqrt(1e5));
}

TEST(Hooley, EdgeCasesAndOracle) {
  const auto& s = thm1_slab();
  EXPECT_EQ(hooley_progression_bias(s, 0.0).value, 0.0);
  EXPECT_EQ(hooley_progression_bias(s, -1.0).D, 0u);
  EXPECT_THROW(hooley_progression_bias(s, 0.6), std::invalid_argument);
  auto h = hooley_progression_bias(s, 0.3);
  EXPECT_EQ(h.D, static_cast<u64>(std::floor(std::pow(1e6, 0.3))));
  const auto b = s.dense_b();
  double total = 0.0, plain = 0.0;
  for (u64 d = 1; d <= h.D; ++d) {
    double acc = 0.0;
    long long un = 0;
    for (u64 n = s.cfg.x + 1; n <= s.cfg.end(); ++n) {
      if (n % d) continue;
      const int mu = factor_trial(n).mu;
      acc += mu * (1.0 + b[n - s.cfg.x - 1]);
      un += mu;
    }
    total += std::abs(acc);
    plain += std::abs(static_cast<double>(un));
  }
  EXPECT_NEAR(h.value, total / 10000, 1e-10);
  EXPECT_NEAR(h.unbiased, plain / 10000, 1e-12);
}

TEST(Lemma2, SinglePrimeCountsPrimes) {
  auto f = lemma2_bump_spec(1);
  auto r = lemma2_check(1, f, 1000000, 10000, QuadratureConfig{});
  std::size_t count = 0;
  for (u64 n = 1000001; n <= 1010000; ++n) count += factor_trial(n).omega_total == 1;
  EXPECT_EQ(r.sum, static_cast<double>(count));
  EXPECT_NEAR(r.prediction, 10000 / std::log(1e6), 1e-9);
}

TEST(Lemma2, ZeroFunction) {
  auto zero = make_custom_spec(2, 0.0, 0.25, {});
  auto r = lemma2_check(2, zero, 1000000, 10000, QuadratureConfig{});
  EXPECT_EQ(r.sum, 0.0);
  EXPECT_EQ(r.prediction, 0.0);
  EXPECT_EQ(r.rel_error, 0.0);
}

TEST(Lemma2, TwoPrimesMatchBruteForce) {
  auto f = lemma2_bump_spec(2);
  const u64 x = 1000000, y = 20000;
  auto r = lemma2_check(2, f, x, y, QuadratureConfig{});
  double brute = 0.0;
  for (u64 n = x + 1; n <= x + y; ++n) {
    const auto t = factor_trial(n);
    if (t.omega_total != 2) continue;
    const double L = std::log(static_cast<double>(n));
    const u64 p = t.primes.front();
    const u64 q = n / p;
    std::vector<double> u{std::log(static_cast<double>(p)) / L, 0.0};
    u[1] = 1.0 - u[0];
    brute += (p == q ? 1.0 : 2.0) * f_one_M(u, f);
  }
  EXPECT_NEAR(r.sum, brute, 1e-9 * brute);
  EXPECT_GT(r.sum, 0.0);
  // integral oracle: midpoint rule in u_1 on [0, 1]
  double I = 0.0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    const double u = (i + 0.5) / N;
    std::vector<double> v{u, 1.0 - u};
    I += f_one_M(v, f) / (u * (1 - u)) / N;
  }
  EXPECT_NEAR(r.integral, I, 1e-6 * I);
  EXPECT_LT(r.rel_error, 0.25);
}
