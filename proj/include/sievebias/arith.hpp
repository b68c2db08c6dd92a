#pragma once

// Prime generation, factorization and the classical arithmetic functions
// mu, lambda (Liouville), Lambda and the generalized von Mangoldt functions
// Lambda_k(n) = sum_{d | n} mu(d) log^k(n/d).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sievebias/binary_io.hpp"
#include "sievebias/errors.hpp"

namespace sievebias {

using u64 = std::uint64_t;

// Neumaier's variant of Kahan summation. Adding 0.0 leaves the state
// untouched, so two accumulations that see the same nonzero terms in the
// same order agree bit for bit.
class NeumaierSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  NeumaierSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline u64 isqrt(u64 n) {
  u64 r = static_cast<u64>(std::sqrt(static_cast<long double>(n)));
  while (r > 0 && r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r;
}

// ---------------------------------------------------------------------------
// Prime tables

struct PrimeTable {
  u64 range_lo = 2;
  u64 range_hi = 1;
  std::vector<u64> primes;  // strictly increasing, all in [range_lo, range_hi]

  bool covers(u64 lo, u64 hi) const noexcept { return range_lo <= lo && hi <= range_hi; }

  // Primes p with lo <= p <= hi (clipped to the table range).
  std::span<const u64> slice(u64 lo, u64 hi) const {
    auto first = std::lower_bound(primes.begin(), primes.end(), lo);
    auto last = std::upper_bound(first, primes.end(), hi);
    return {primes.data() + (first - primes.begin()), static_cast<std::size_t>(last - first)};
  }

  bool contains(u64 p) const { return std::binary_search(primes.begin(), primes.end(), p); }
};

struct SieveOptions {
  std::size_t segment_size = std::size_t{1} << 20;
  std::size_t memory_budget_bytes = std::size_t{1} << 31;
};

namespace detail {

inline std::vector<u64> simple_sieve(u64 limit) {
  std::vector<u64> out;
  if (limit < 2) return out;
  std::vector<bool> composite(limit + 1, false);
  for (u64 p = 2; p <= limit; ++p) {
    if (composite[p]) continue;
    out.push_back(p);
    for (u64 m = p * p; m <= limit; m += p) composite[m] = true;
  }
  return out;
}

inline double estimated_prime_count(u64 lo, u64 hi) {
  const double width = static_cast<double>(hi - lo) + 1.0;
  const double logl = std::log(std::max<double>(static_cast<double>(lo), 3.0));
  return 1.3 * width / std::max(1.0, logl - 1.0) + 64.0;
}

}  // namespace detail

/// Segmented sieve of Eratosthenes over [lo, hi]. The result does not depend
/// on the segment size.
inline PrimeTable sieve_primes(u64 lo, u64 hi, const SieveOptions& opt = {}) {
  if (lo < 2) throw std::invalid_argument("sieve_primes: lo must be >= 2");
  if (lo > hi) throw std::invalid_argument("sieve_primes: inverted range");
  if (hi >= (u64{1} << 62)) throw std::invalid_argument("sieve_primes: hi too large");
  if (opt.segment_size == 0) throw std::invalid_argument("sieve_primes: zero segment size");
  const double need = detail::estimated_prime_count(lo, hi) * sizeof(u64) +
                      static_cast<double>(opt.segment_size);
  if (need > static_cast<double>(opt.memory_budget_bytes)) {
    throw BudgetError("sieve_primes: range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] exceeds the memory budget");
  }

  PrimeTable table;
  table.range_lo = lo;
  table.range_hi = hi;
  const auto base = detail::simple_sieve(isqrt(hi));
  std::vector<unsigned char> seg(opt.segment_size);
  for (u64 s = lo;; s += opt.segment_size) {
    const u64 e = std::min<u64>(hi, s + opt.segment_size - 1);
    const std::size_t len = static_cast<std::size_t>(e - s + 1);
    std::fill_n(seg.begin(), len, 1);
    for (u64 p : base) {
      if (p * p > e) break;
      u64 start = std::max(p * p, ((s + p - 1) / p) * p);
      for (u64 m = start; m <= e; m += p) seg[m - s] = 0;
    }
    for (std::size_t i = 0; i < len; ++i) {
      if (seg[i]) table.primes.push_back(s + i);
    }
    if (e == hi) break;
  }
  return table;
}

// Binary layout (little-endian): "SBPRIME1", lo u64, hi u64, count u64,
// then count primes as u64.
inline constexpr std::string_view kPrimeTableMagic = "SBPRIME1";

inline void write_prime_table(std::ostream& os, const PrimeTable& t) {
  binary::put_magic(os, kPrimeTableMagic);
  binary::put_uint<u64>(os, t.range_lo);
  binary::put_uint<u64>(os, t.range_hi);
  binary::put_uint<u64>(os, t.primes.size());
  for (u64 p : t.primes) binary::put_uint<u64>(os, p);
}

inline PrimeTable read_prime_table(std::istream& is) {
  binary::expect_magic(is, kPrimeTableMagic);
  PrimeTable t;
  t.range_lo = binary::get_uint<u64>(is);
  t.range_hi = binary::get_uint<u64>(is);
  const u64 count = binary::get_uint<u64>(is);
  t.primes.resize(count);
  for (auto& p : t.primes) p = binary::get_uint<u64>(is);
  if (!std::is_sorted(t.primes.begin(), t.primes.end()) ||
      (!t.primes.empty() && (t.primes.front() < t.range_lo || t.primes.back() > t.range_hi))) {
    throw std::runtime_error("read_prime_table: corrupt table");
  }
  return t;
}

inline void export_prime_table_csv(std::ostream& os, const PrimeTable& t) {
  os << "index,prime\n";
  for (std::size_t i = 0; i < t.primes.size(); ++i) os << i << ',' << t.primes[i] << '\n';
}

// ---------------------------------------------------------------------------
// Factorization and multiplicative functions

struct PrimePower {
  u64 prime = 0;
  unsigned exponent = 0;
  friend bool operator==(const PrimePower&, const PrimePower&) = default;
};

struct Factorization {
  u64 n = 1;
  std::vector<PrimePower> prime_powers;  // primes strictly increasing

  unsigned omega() const noexcept { return static_cast<unsigned>(prime_powers.size()); }
  unsigned big_omega() const noexcept {
    unsigned s = 0;
    for (const auto& pp : prime_powers) s += pp.exponent;
    return s;
  }
  bool squarefree() const noexcept {
    return std::all_of(prime_powers.begin(), prime_powers.end(),
                       [](const PrimePower& pp) { return pp.exponent == 1; });
  }
};

/// Trial division by the primes of `aux`, which must start at 2 and reach
/// sqrt(n).
inline Factorization factorize(u64 n, const PrimeTable& aux) {
  if (n == 0) throw std::invalid_argument("factorize: n must be >= 1");
  if (aux.range_lo > 2 || aux.range_hi < isqrt(n)) {
    throw CoverageError("factorize: auxiliary table does not cover sqrt(" + std::to_string(n) + ")");
  }
  Factorization f{n, {}};
  u64 m = n;
  for (u64 p : aux.primes) {
    if (p * p > m) break;
    if (m % p != 0) continue;
    unsigned e = 0;
    while (m % p == 0) {
      m /= p;
      ++e;
    }
    f.prime_powers.push_back({p, e});
  }
  if (m > 1) f.prime_powers.push_back({m, 1});
  return f;
}

/// Self-contained trial division (2, 3, then 6k +- 1); for isolated values.
inline Factorization factorize(u64 n) {
  if (n == 0) throw std::invalid_argument("factorize: n must be >= 1");
  Factorization f{n, {}};
  u64 m = n;
  auto strip = [&](u64 p) {
    unsigned e = 0;
    while (m % p == 0) {
      m /= p;
      ++e;
    }
    if (e) f.prime_powers.push_back({p, e});
  };
  strip(2);
  strip(3);
  for (u64 p = 5; p * p <= m; p += 6) {
    strip(p);
    strip(p + 2);
  }
  if (m > 1) f.prime_powers.push_back({m, 1});
  return f;
}

inline int mobius(const Factorization& f) noexcept {
  if (!f.squarefree()) return 0;
  return (f.omega() % 2 == 0) ? 1 : -1;
}

inline int liouville(const Factorization& f) noexcept { return (f.big_omega() % 2 == 0) ? 1 : -1; }

/// von Mangoldt: log p if n = p^a, else 0.
inline double von_mangoldt(const Factorization& f) {
  return f.omega() == 1 ? std::log(static_cast<double>(f.prime_powers[0].prime)) : 0.0;
}

/// Lambda_k(n) as the squarefree-divisor sum
///   sum_{S subset of primes(n)} (-1)^{|S|} (log n - sum_{p in S} log p)^k,
/// with log n assembled from the prime logs so that every term shares one
/// representation.
inline double lambda_k(const Factorization& f, unsigned k) {
  if (k == 0) throw std::invalid_argument("lambda_k: k must be >= 1");
  const std::size_t w = f.prime_powers.size();
  // the alternating sum vanishes identically once n has more than k distinct primes
  if (w == 0 || w > k) return 0.0;
  if (w > 20) throw std::invalid_argument("lambda_k: too many distinct primes");
  std::vector<double> logs(w);
  double log_n = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    logs[i] = std::log(static_cast<double>(f.prime_powers[i].prime));
    log_n += f.prime_powers[i].exponent * logs[i];
  }
  NeumaierSum sum;
  for (u64 mask = 0; mask < (u64{1} << w); ++mask) {
    double t = log_n;
    int parity = 0;
    for (std::size_t i = 0; i < w; ++i) {
      if (mask >> i & 1u) {
        t -= logs[i];
        parity ^= 1;
      }
    }
    double term = 1.0;
    for (unsigned j = 0; j < k; ++j) term *= t;
    sum.add(parity ? -term : term);
  }
  return sum.value();
}

inline double lambda_k(u64 n, unsigned k) { return lambda_k(factorize(n), k); }

/// Independent route through the recursion
///   Lambda_{k+1}(m) = Lambda_k(m) log m + sum_{p^e | m, e >= 1} Lambda_k(m / p^e) log p,
/// i.e. Lambda_{k+1} = Lambda_k * log + Lambda_k (conv) Lambda, evaluated on
/// the divisor lattice of n.
inline double lambda_k_oracle(u64 n, unsigned k) {
  if (k == 0) throw std::invalid_argument("lambda_k_oracle: k must be >= 1");
  if (n == 1) return 0.0;
  const Factorization f = factorize(n);
  std::vector<u64> divisors{1};
  for (const auto& pp : f.prime_powers) {
    const std::size_t count = divisors.size();
    u64 power = 1;
    for (unsigned e = 1; e <= pp.exponent; ++e) {
      power *= pp.prime;
      for (std::size_t i = 0; i < count; ++i) divisors.push_back(divisors[i] * power);
    }
  }
  std::sort(divisors.begin(), divisors.end());
  auto index_of = [&](u64 d) {
    return static_cast<std::size_t>(std::lower_bound(divisors.begin(), divisors.end(), d) -
                                    divisors.begin());
  };

  // level[i] = Lambda_j(divisors[i]); start with j = 1 (classical Lambda).
  std::vector<double> level(divisors.size(), 0.0);
  for (std::size_t i = 0; i < divisors.size(); ++i) {
    const u64 d = divisors[i];
    for (const auto& pp : f.prime_powers) {
      u64 m = d;
      while (m % pp.prime == 0) m /= pp.prime;
      if (m == 1 && d > 1) level[i] = std::log(static_cast<double>(pp.prime));
    }
  }
  for (unsigned j = 1; j < k; ++j) {
    std::vector<double> next(divisors.size(), 0.0);
    for (std::size_t i = 0; i < divisors.size(); ++i) {
      const u64 d = divisors[i];
      NeumaierSum s;
      s.add(level[i] * std::log(static_cast<double>(d)));
      for (const auto& pp : f.prime_powers) {
        const double lp = std::log(static_cast<double>(pp.prime));
        u64 m = d;
        while (m % pp.prime == 0) {
          m /= pp.prime;
          s.add(level[index_of(m)] * lp);
        }
      }
      next[i] = s.value();
    }
    level = std::move(next);
  }
  return level.back();
}

/// psi(x) = sum_{p^a <= x} log p, accumulated in increasing (p, a) order.
inline double chebyshev_psi(u64 x, const SieveOptions& opt = {}) {
  if (x < 2) throw std::invalid_argument("chebyshev_psi: x must be >= 2");
  const PrimeTable t = sieve_primes(2, x, opt);
  NeumaierSum s;
  for (u64 p : t.primes) {
    const double lp = std::log(static_cast<double>(p));
    for (u64 q = p; q <= x; q *= p) {
      s.add(lp);
      if (q > x / p) break;
    }
  }
  return s.value();
}

// ---------------------------------------------------------------------------
// Bulk factorization of a window (lo, hi]

class RangeFactorization {
 public:
  RangeFactorization() = default;

  u64 lo() const noexcept { return lo_; }  // exclusive
  u64 hi() const noexcept { return hi_; }  // inclusive
  std::size_t size() const noexcept { return static_cast<std::size_t>(hi_ - lo_); }

  std::span<const PrimePower> at(u64 n) const {
    if (n <= lo_ || n > hi_) throw std::out_of_range("RangeFactorization: n outside window");
    const std::size_t i = static_cast<std::size_t>(n - lo_ - 1);
    return {factors_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  Factorization factorization(u64 n) const {
    auto s = at(n);
    return Factorization{n, std::vector<PrimePower>(s.begin(), s.end())};
  }

  friend RangeFactorization factor_range(u64 lo, u64 hi, const SieveOptions& opt);

 private:
  u64 lo_ = 0;
  u64 hi_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<PrimePower> factors_;
};

/// Factorizations of every n in (lo, hi] by sieving with the primes up to
/// sqrt(hi).
inline RangeFactorization factor_range(u64 lo, u64 hi, const SieveOptions& opt = {}) {
  if (hi <= lo) throw std::invalid_argument("factor_range: empty window");
  const std::size_t len = static_cast<std::size_t>(hi - lo);
  if (static_cast<double>(len) * 48.0 > static_cast<double>(opt.memory_budget_bytes)) {
    throw BudgetError("factor_range: window too large for the memory budget");
  }
  const auto base = detail::simple_sieve(isqrt(hi));

  struct Event {
    std::uint32_t index;
    PrimePower pp;
  };
  std::vector<Event> events;
  events.reserve(len * 3);
  std::vector<u64> rest(len);
  std::iota(rest.begin(), rest.end(), lo + 1);
  for (u64 p : base) {
    const u64 first = ((lo / p) + 1) * p;
    for (u64 m = first; m <= hi; m += p) {
      const std::size_t i = static_cast<std::size_t>(m - lo - 1);
      unsigned e = 0;
      while (rest[i] % p == 0) {
        rest[i] /= p;
        ++e;
      }
      events.push_back({static_cast<std::uint32_t>(i), {p, e}});
    }
  }
  for (std::size_t i = 0; i < len; ++i) {
    if (rest[i] > 1) events.push_back({static_cast<std::uint32_t>(i), {rest[i], 1}});
  }

  RangeFactorization out;
  out.lo_ = lo;
  out.hi_ = hi;
  out.offsets_.assign(len + 1, 0);
  for (const auto& ev : events) ++out.offsets_[ev.index + 1];
  std::partial_sum(out.offsets_.begin(), out.offsets_.end(), out.offsets_.begin());
  out.factors_.resize(events.size());
  std::vector<std::size_t> cursor(out.offsets_.begin(), out.offsets_.end() - 1);
  // Events for one index arrive in increasing prime order (base primes, then
  // the cofactor), so a stable scatter keeps each list sorted.
  for (const auto& ev : events) out.factors_[cursor[ev.index]++] = ev.pp;
  return out;
}

}  // namespace sievebias
