#pragma once

// Measurements on built slabs: weighted divisor counts and remainders,
// class-restricted cancellation, the weighted sums S_k = sum a_n Lambda_k(n),
// parity sums, Hooley's averaged progression bias, and the sum-over-primes
// versus integral comparison for bump functions.

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sievebias/arith.hpp"
#include "sievebias/errors.hpp"
#include "sievebias/partition.hpp"
#include "sievebias/quadrature.hpp"
#include "sievebias/sequence.hpp"

namespace sievebias {

/// log x for the window (x, x+y]; log(x+y) when the window starts at 0 or 1.
inline double window_log(const WeightedSlab& s) {
  return std::log(static_cast<double>(s.cfg.x >= 2 ? s.cfg.x : s.cfg.end()));
}

// ---------------------------------------------------------------------------
// Remainders

struct RemainderRow {
  u64 d = 0;
  u64 count = 0;            // floor((x+y)/d) - floor(x/d)
  double A_d = 0.0;         // sum over d | n of a_n
  double r_d = 0.0;         // A_d - count
  double r_d_mass = 0.0;    // A_d - y/d
  double normalized = 0.0;  // d |r_d| / y
};

struct RemainderReport {
  u64 x = 0, y = 0, d_max = 0;
  std::vector<RemainderRow> rows;  // d = 1..d_max
  double sum_a = 0.0;
  double sum_abs_r = 0.0;
  double max_normalized = 0.0;
  u64 argmax_d = 0;
  u64 cross_checked_up_to = 0;
  bool routes_agree = true;
};

struct RemainderOptions {
  // The per-entry divisibility route costs O(d * entries); it is run for
  // d up to this bound.
  u64 cross_check_up_to = 1000;
  std::size_t memory_budget_bytes = std::size_t{1} << 31;
};

/// A_d for every d <= d_max by walking the multiples of d, cross-checked
/// against a per-entry divisibility scan. Both accumulate b_n in increasing n
/// with Neumaier summation, so they agree bit for bit.
inline RemainderReport remainder_scan(const WeightedSlab& s, u64 d_max, const RemainderOptions& opt = {}) {
  if (d_max < 1) throw std::invalid_argument("remainder_scan: d_max must be >= 1");
  const double bytes = static_cast<double>(d_max) * sizeof(RemainderRow) + static_cast<double>(s.K) * sizeof(double);
  if (bytes > static_cast<double>(opt.memory_budget_bytes)) {
    throw BudgetError("remainder_scan: d_max = " + std::to_string(d_max) + " exceeds the memory budget");
  }
  RemainderReport rep;
  rep.x = s.cfg.x;
  rep.y = s.cfg.y;
  rep.d_max = d_max;
  rep.cross_checked_up_to = std::min(d_max, opt.cross_check_up_to);
  const auto b = s.dense_b();
  const u64 x = s.cfg.x, end = s.cfg.end();
  NeumaierSum total_abs;
  rep.rows.reserve(static_cast<std::size_t>(d_max));
  for (u64 d = 1; d <= d_max; ++d) {
    RemainderRow row;
    row.d = d;
    row.count = end / d - x / d;
    NeumaierSum walk;
    for (u64 n = (x / d + 1) * d; n <= end; n += d) walk.add(b[static_cast<std::size_t>(n - x - 1)]);
    if (d <= rep.cross_checked_up_to) {
      NeumaierSum scan;
      for (const auto& e : s.entries) {
        if (e.n % d == 0) scan.add(e.b);
      }
      if (std::bit_cast<std::uint64_t>(scan.value()) != std::bit_cast<std::uint64_t>(walk.value())) {
        rep.routes_agree = false;
      }
    }
    row.A_d = static_cast<double>(row.count) + walk.value();
    row.r_d = walk.value();
    row.r_d_mass = row.A_d - static_cast<double>(s.cfg.y) / static_cast<double>(d);
    row.normalized = static_cast<double>(d) * std::abs(row.r_d) / static_cast<double>(s.cfg.y);
    total_abs.add(std::abs(row.r_d));
    if (row.normalized > rep.max_normalized) {
      rep.max_normalized = row.normalized;
      rep.argmax_d = d;
    }
    if (row.A_d < 0) throw std::logic_error("remainder_scan: negative A_d");
    rep.rows.push_back(row);
  }
  rep.sum_a = rep.rows.front().A_d;
  rep.sum_abs_r = total_abs.value();
  return rep;
}

// ---------------------------------------------------------------------------
// Class-restricted cancellation

struct ClassResidual {
  u64 d = 0;
  double sum = 0.0;         // sum over alpha containing beta, n in C_alpha, d | n, of b_n
  double normalized = 0.0;  // sum * d / y
  std::size_t terms = 0;
};

/// Class multiset of the prime factors of d (by log p / log anchor), or
/// nullopt when some factor lies in no class.
inline std::optional<Partition> divisor_class(u64 d, const WindowConfig& c) {
  if (d == 1) return Partition{};
  const double L = std::log(static_cast<double>(c.scale()));
  std::vector<int> cls;
  for (const auto& pp : factorize(d).prime_powers) {
    const int k = size_class(std::log(static_cast<double>(pp.prime)) / L, c.M, c.delta);
    if (k == 0) return std::nullopt;
    for (unsigned e = 0; e < pp.exponent; ++e) cls.push_back(k);
  }
  return Partition(cls);
}

inline std::vector<ClassResidual> class_cancellation(const WeightedSlab& s, const Partition& beta,
                                                     const std::vector<u64>& sample_d) {
  if (s.kind != SlabKind::construction) throw std::invalid_argument("class_cancellation: needs a construction slab");
  const auto Q = index_set_q(s.cfg.M);
  if (std::find(Q.begin(), Q.end(), beta) == Q.end()) {
    throw std::invalid_argument("class_cancellation: beta = " + beta.str() + " is not in Q (sum must be <= M-2)");
  }
  const auto alphas = s.alphas();
  std::vector<ClassResidual> out;
  for (u64 d : sample_d) {
    const auto cls = d >= 1 ? divisor_class(d, s.cfg) : std::nullopt;
    if (!cls || *cls != beta) {
      throw std::invalid_argument("class_cancellation: d = " + std::to_string(d) + " is not in D_" + beta.str());
    }
    ClassResidual r;
    r.d = d;
    NeumaierSum acc;
    for (const auto& e : s.entries) {
      if (e.n % d != 0 || !alphas[e.alpha_index].contains(beta)) continue;
      acc.add(e.b);
      ++r.terms;
    }
    r.sum = acc.value();
    r.normalized = r.sum * static_cast<double>(d) / static_cast<double>(s.cfg.y);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moment and parity sums

struct MomentRow {
  int k = 0;
  double S = 0.0;                  // sum a_n Lambda_k(n)
  double baseline = 0.0;           // sum Lambda_k(n)
  double construction = 0.0;       // sum b_n Lambda_k(n)
  double T = 0.0;                  // S / (k y log^{k-1} x)
  double observed_bias = 0.0;      // S / (y log^{k-1} x) - k
  double baseline_drift = 0.0;     // baseline / (y log^{k-1} x) - k
  double construction_bias = 0.0;  // construction / (y log^{k-1} x)
  double predicted_bias = 0.0;     // (-1)^{M+1} Z_k
  double ratio = std::numeric_limits<double>::quiet_NaN();  // observed / predicted
};

struct ParitySums {
  double sum_mu = 0.0;       // sum a_n mu(n)
  double sum_lambda = 0.0;   // sum a_n lambda(n)
  double b_mu = 0.0;         // sum b_n mu(n)
  double b_lambda = 0.0;
  double normalized_mu = 0.0;      // sum_mu log x / y
  double normalized_lambda = 0.0;
  double predicted = 0.0;          // (-1)^M Z_0 y / log x
  double predicted_normalized = 0.0;
  std::size_t mu_lambda_mismatch = 0;           // entries with b_n != 0 and mu(n) != lambda(n)
  std::size_t mismatch_squarefree = 0;          // of those, squarefree ones (must be 0)
  std::size_t non_squarefree_entries = 0;
  double non_squarefree_scale = 0.0;            // x^{1 - 1/M + delta}
};

struct MomentReport {
  u64 x = 0, y = 0;
  int M = 0;
  double log_x = 0.0;
  bool has_prediction = false;
  std::uint64_t spec_hash = 0;
  std::vector<MomentRow> rows;  // k = 1..k_max
  ParitySums parity;
};

/// S_k over the window for k = 1..k_max with the predicted bias taken from
/// `moments` (which must describe the slab's test function). Reference slabs
/// pass moments = nullptr and get no prediction.
inline MomentReport moment_scan(const WeightedSlab& s, int k_max, const MomentSet* moments,
                                const SieveOptions& opt = {}) {
  if (k_max < 1) throw std::invalid_argument("moment_scan: k_max must be >= 1");
  if (moments) {
    if (s.kind != SlabKind::construction || moments->spec_hash != s.spec_hash) {
      throw std::invalid_argument("moment_scan: mismatched spec hash between slab and moments");
    }
    if (static_cast<int>(moments->Z.size()) <= k_max) throw std::invalid_argument("moment_scan: moments lack Z_k_max");
  }
  MomentReport rep;
  rep.x = s.cfg.x;
  rep.y = s.cfg.y;
  rep.M = s.cfg.M;
  rep.log_x = window_log(s);
  rep.has_prediction = moments != nullptr;
  rep.spec_hash = s.spec_hash;

  const auto b = s.dense_b();
  const auto rf = factor_range(s.cfg.x, s.cfg.end(), opt);
  const std::size_t K = static_cast<std::size_t>(k_max);
  std::vector<NeumaierSum> base(K), cons(K);
  NeumaierSum mu_sum, la_sum, bmu, bla;
  for (u64 n = s.cfg.x + 1; n <= s.cfg.end(); ++n) {
    const auto pp = rf.at(n);
    Factorization f{n, std::vector<PrimePower>(pp.begin(), pp.end())};
    const double bn = b[static_cast<std::size_t>(n - s.cfg.x - 1)];
    const int mu = mobius(f), la = liouville(f);
    mu_sum.add(mu);
    la_sum.add(la);
    if (bn != 0.0) {
      bmu.add(bn * mu);
      bla.add(bn * la);
    }
    if (f.omega() == 0) continue;
    for (std::size_t k = 0; k < K; ++k) {
      const double lk = lambda_k(f, static_cast<unsigned>(k + 1));
      if (lk == 0.0) continue;
      base[k].add(lk);
      if (bn != 0.0) cons[k].add(bn * lk);
    }
  }
  const double y = static_cast<double>(s.cfg.y);
  for (std::size_t k = 0; k < K; ++k) {
    MomentRow row;
    row.k = static_cast<int>(k + 1);
    const double scale = y * std::pow(rep.log_x, static_cast<double>(k));
    row.baseline = base[k].value();
    row.construction = cons[k].value();
    row.S = row.baseline + row.construction;
    row.T = row.S / (row.k * scale);
    row.observed_bias = row.S / scale - row.k;
    row.baseline_drift = row.baseline / scale - row.k;
    row.construction_bias = row.construction / scale;
    if (moments) {
      const double sign = (s.cfg.M + 1) % 2 == 0 ? 1.0 : -1.0;
      row.predicted_bias = sign * moments->Z[k + 1];
      row.ratio = row.predicted_bias != 0.0 ? row.observed_bias / row.predicted_bias
                                            : std::numeric_limits<double>::quiet_NaN();
    }
    rep.rows.push_back(row);
  }

  ParitySums& P = rep.parity;
  P.b_mu = bmu.value();
  P.b_lambda = bla.value();
  P.sum_mu = mu_sum.value() + P.b_mu;
  P.sum_lambda = la_sum.value() + P.b_lambda;
  P.normalized_mu = P.sum_mu * rep.log_x / y;
  P.normalized_lambda = P.sum_lambda * rep.log_x / y;
  if (moments) {
    const double sign = s.cfg.M % 2 == 0 ? 1.0 : -1.0;
    P.predicted = sign * moments->Z[0] * y / rep.log_x;
    P.predicted_normalized = sign * moments->Z[0];
  }
  for (const auto& e : s.entries) {
    const bool sf = squarefree_factors(e.factors);
    if (!sf) ++P.non_squarefree_entries;
    if (e.b == 0.0) continue;
    const int mu = sf ? ((e.factors.size() % 2 == 0) ? 1 : -1) : 0;
    const int la = (e.factors.size() % 2 == 0) ? 1 : -1;
    if (mu != la) {
      ++P.mu_lambda_mismatch;
      if (sf) ++P.mismatch_squarefree;
    }
  }
  if (s.cfg.M > 0) {
    P.non_squarefree_scale = std::pow(static_cast<double>(s.cfg.x), 1.0 - 1.0 / s.cfg.M + s.cfg.delta);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Hooley's averaged progression bias

struct HooleyReport {
  double alpha_exp = 0.0;
  u64 D = 0;
  double value = 0.0;     // sum_{d <= D} |sum_{d | n} mu(n) a_n| / y
  double unbiased = 0.0;  // the same with a_n = 1
};

inline HooleyReport hooley_progression_bias(const WeightedSlab& s, double alpha_exp, const SieveOptions& opt = {}) {
  const double ceiling = s.kind == SlabKind::construction ? 1.0 - s.cfg.varpi : 1.0;
  if (!(alpha_exp < ceiling)) {
    throw std::invalid_argument("hooley_progression_bias: alpha must be < " + std::to_string(ceiling));
  }
  HooleyReport rep;
  rep.alpha_exp = alpha_exp;
  if (alpha_exp <= 0) return rep;
  const double L = window_log(s);
  rep.D = static_cast<u64>(std::floor(std::exp(alpha_exp * L) * (1 + 1e-12)));
  const auto b = s.dense_b();
  const auto rf = factor_range(s.cfg.x, s.cfg.end(), opt);
  std::vector<int> mu(static_cast<std::size_t>(s.K));
  for (u64 n = s.cfg.x + 1; n <= s.cfg.end(); ++n) {
    const auto pp = rf.at(n);
    mu[static_cast<std::size_t>(n - s.cfg.x - 1)] = mobius(Factorization{n, {pp.begin(), pp.end()}});
  }
  NeumaierSum total, plain;
  const u64 x = s.cfg.x, end = s.cfg.end();
  for (u64 d = 1; d <= rep.D; ++d) {
    NeumaierSum acc;
    long long unweighted = 0;
    for (u64 n = (x / d + 1) * d; n <= end; n += d) {
      const std::size_t i = static_cast<std::size_t>(n - x - 1);
      if (mu[i] == 0) continue;
      acc.add(mu[i] * (1.0 + b[i]));
      unweighted += mu[i];
    }
    total.add(std::abs(acc.value()));
    plain.add(std::abs(static_cast<double>(unweighted)));
  }
  rep.value = total.value() / static_cast<double>(s.cfg.y);
  rep.unbiased = plain.value() / static_cast<double>(s.cfg.y);
  return rep;
}

// ---------------------------------------------------------------------------
// Sums over products of r primes versus the integral

struct Lemma2Result {
  int r = 0;
  u64 x = 0, y = 0;
  double sum = 0.0;         // over ordered tuples with p_1...p_r in (x, x+y]
  double integral = 0.0;    // over U_r of f / (u_1...u_r)
  double prediction = 0.0;  // (y / log x) * integral
  double rel_error = 0.0;
  std::size_t tuples = 0;   // unordered tuples visited with nonzero weight
};

struct Lemma2Options {
  std::size_t max_tuples = std::size_t{1} << 30;
  SieveOptions sieve;
};

/// Symmetric bump used for the r-prime check: centered at (1/r, ..., 1/r)
/// with radius 1/(2r), and 1/4 for r = 1 where U_1 is the single point 1.
inline TestFunctionSpec lemma2_bump_spec(int r) {
  if (r < 1) throw std::invalid_argument("lemma2_bump_spec: r must be >= 1");
  std::vector<double> c(static_cast<std::size_t>(r), 1.0 / r);
  const double xi = r == 1 ? 0.25 : 0.5 / r;
  return make_custom_spec(r, 0.0, xi, {{c, 1.0}});
}

inline Lemma2Result lemma2_check(int r, const TestFunctionSpec& f, u64 x, u64 y, const QuadratureConfig& quad,
                                 const Lemma2Options& opt = {}) {
  if (r < 1 || f.M != r) throw std::invalid_argument("lemma2_check: test function must live on U_r");
  if (x < 2 || y < 1) throw std::invalid_argument("lemma2_check: need x >= 2, y >= 1");
  Lemma2Result res;
  res.r = r;
  res.x = x;
  res.y = y;
  const u64 end = x + y;
  const double logx = std::log(static_cast<double>(x));

  if (r == 1) {
    res.integral = f_one_M(std::vector<double>{1.0}, f);
  } else {
    res.integral = moments(f, quad, 0).Z[0];
  }
  res.prediction = static_cast<double>(y) / logx * res.integral;
  if (f.bumps.empty()) return res;

  // f vanishes once some log p / log n <= 1/(2r), so primes p <= x^{1/(2r)}
  // never contribute
  const u64 pmin = std::max<u64>(2, static_cast<u64>(std::floor(std::pow(static_cast<double>(x), f.support_floor()))));
  u64 pmax = end;
  if (r >= 2) {
    long double m = static_cast<long double>(end);
    for (int i = 0; i < r - 1; ++i) m /= static_cast<long double>(pmin);
    pmax = static_cast<u64>(std::floor(m));
  }
  const PrimeTable table = r == 1 ? sieve_primes(x + 1, end, opt.sieve) : sieve_primes(pmin, pmax, opt.sieve);
  const auto& P = table.primes;

  const BigInt r_fact = factorial(r);
  std::vector<u64> cur(static_cast<std::size_t>(r));
  std::vector<double> u(static_cast<std::size_t>(r));
  NeumaierSum acc;
  auto emit = [&](u64 n) {
    // orderings of the multiset cur
    BigInt denom = 1;
    int run = 1;
    for (int i = 1; i <= r; ++i) {
      if (i < r && cur[i] == cur[i - 1]) {
        ++run;
      } else {
        denom *= factorial(run);
        run = 1;
      }
    }
    const double weight = static_cast<double>(r_fact / denom);
    const double L = std::log(static_cast<double>(n));
    for (int i = 0; i < r; ++i) u[i] = std::log(static_cast<double>(cur[i])) / L;
    double sum = 0.0;
    for (double t : u) sum += t;
    u[r - 1] += 1.0 - sum;  // exact simplex point up to rounding of the logs
    const double val = f_one_M(u, f);
    if (val != 0.0) {
      acc.add(weight * val);
      ++res.tuples;
      if (res.tuples > opt.max_tuples) throw BudgetError("lemma2_check: tuple cap exceeded");
    }
  };
  using wide = unsigned __int128;
  auto rec = [&](auto&& self, int pos, wide prod, std::size_t start) -> void {
    if (pos == r - 1) {
      const u64 lo = static_cast<u64>(wide(x) / prod) + 1;
      const u64 hi = static_cast<u64>(wide(end) / prod);
      auto first = std::lower_bound(P.begin() + static_cast<std::ptrdiff_t>(start), P.end(), lo);
      auto last = std::upper_bound(first, P.end(), hi);
      for (auto it = first; it != last; ++it) {
        cur[pos] = *it;
        emit(static_cast<u64>(prod * *it));
      }
      return;
    }
    for (std::size_t j = start; j < P.size(); ++j) {
      // the remaining r - pos factors are all >= P[j]
      wide low = prod;
      bool over = false;
      for (int i = pos; i < r; ++i) {
        low *= P[j];
        if (low > end) {
          over = true;
          break;
        }
      }
      if (over) break;
      cur[pos] = P[j];
      self(self, pos + 1, prod * P[j], j);
    }
  };
  rec(rec, 0, 1, 0);
  res.sum = acc.value();
  res.rel_error = res.prediction != 0.0 ? std::abs(res.sum - res.prediction) / std::abs(res.prediction) : 0.0;
  return res;
}

}  // namespace sievebias
