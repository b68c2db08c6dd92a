#pragma once

// The weighted sequence a_n = 1 + b_n on a window (x, x+y].
//
// Integers built from one prime of each size class P_{alpha_i} get
// b_n = f_alpha(log p_1/log n, ..., log p_r/log n); every other n has b_n = 0
// and is not stored. Class membership of a prime p is decided by
// log p / log(anchor) with anchor = x unless set explicitly, so a window and
// its halves see the same classes when they share the anchor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sievebias/arith.hpp"
#include "sievebias/binary_io.hpp"
#include "sievebias/errors.hpp"
#include "sievebias/partition.hpp"
#include "sievebias/quadrature.hpp"

namespace sievebias {

enum class WindowMode { desk_window, paper_schedule };

// How the sign sigma of the theorem1 test function is chosen. `fixed` takes
// the configured sigma; the other three are the case labels (i)-(iii).
enum class Schedule { fixed, all_minus, all_plus, doubly_exponential };

inline std::string to_string(WindowMode m) { return m == WindowMode::desk_window ? "desk_window" : "paper_schedule"; }

inline WindowMode parse_window_mode(const std::string& s) {
  if (s == "desk_window" || s == "desk") return WindowMode::desk_window;
  if (s == "paper_schedule") return WindowMode::paper_schedule;
  throw std::invalid_argument("unknown window mode '" + s + "'");
}

inline std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::fixed: return "fixed";
    case Schedule::all_minus: return "all_minus";
    case Schedule::all_plus: return "all_plus";
    case Schedule::doubly_exponential: return "doubly_exponential";
  }
  return "?";
}

inline Schedule parse_schedule(const std::string& s) {
  if (s == "fixed") return Schedule::fixed;
  if (s == "all_minus") return Schedule::all_minus;
  if (s == "all_plus") return Schedule::all_plus;
  if (s == "doubly_exponential" || s == "doubly_exponential_alternation") return Schedule::doubly_exponential;
  throw std::invalid_argument("unknown schedule '" + s + "'");
}

struct WindowConfig {
  u64 x = 0;       // window is (x, x+y]
  u64 y = 0;
  u64 anchor = 0;  // scale for the prime classes; 0 means x
  int M = 3;
  double delta = 1.0 / 27;
  double varpi = 0.46;
  double nu = 0.51;
  double c1 = 1.0;  // interval shape in paper_schedule mode
  WindowMode mode = WindowMode::desk_window;
  int sigma = 1;
  Schedule schedule = Schedule::fixed;

  u64 scale() const noexcept { return anchor ? anchor : x; }
  u64 end() const noexcept { return x + y; }

  bool operator==(const WindowConfig&) const = default;
};

/// sigma for a window starting at x under schedule (iii): -1 when
/// 2^(2^r) < x <= 2^(2^(r+1)) with r even, +1 with r odd.
inline int doubly_exponential_sigma(long double x) {
  if (x <= 4) return -1;  // r = 0 covers (2, 4]; below that there is nothing to label
  const long double l = std::log2(std::log2(x));
  int r = static_cast<int>(std::ceil(l)) - 1;
  if (r < 0) r = 0;
  return r % 2 == 0 ? -1 : 1;
}

inline int effective_sigma(const WindowConfig& c) {
  switch (c.schedule) {
    case Schedule::fixed: return c.sigma;
    case Schedule::all_minus: return -1;
    case Schedule::all_plus: return 1;
    case Schedule::doubly_exponential: return doubly_exponential_sigma(static_cast<long double>(c.x));
  }
  return c.sigma;
}

struct IntervalStep {
  long double x = 0;
  long double K = 0;  // floor(x_{j+1}) - floor(x_j)
};

/// x_{j+1} = x_j (1 + exp(-c1 sqrt(log x_j))), returning `count` steps
/// starting at x_0.
inline std::vector<IntervalStep> interval_schedule(long double x0, long double c1, int count) {
  if (!(x0 > 1)) throw std::invalid_argument("interval_schedule: x_0 must exceed 1");
  if (c1 < 0) throw std::invalid_argument("interval_schedule: c_1 must be non-negative");
  std::vector<IntervalStep> out;
  long double xj = x0;
  for (int j = 0; j < count; ++j) {
    const long double next = xj * (1.0L + std::exp(-c1 * std::sqrt(std::log(xj))));
    if (!std::isfinite(next)) throw std::overflow_error("interval_schedule: x_j overflowed");
    out.push_back({xj, std::floor(next) - std::floor(xj)});
    xj = next;
  }
  return out;
}

struct CheckedConfig {
  WindowConfig cfg;
  int sigma = 1;                           // after applying the schedule
  std::vector<std::pair<double, double>> J;  // J_1..J_M as exponent intervals
  double level_exponent = 0.0;             // 1 - varpi
  int max_beta_sum = 0;                    // largest |beta| with d in D_beta and d <= x^(1-varpi)
};

/// Checks every constraint and reports all violations together.
inline CheckedConfig validate_config(const WindowConfig& c) {
  std::vector<std::string> bad;
  if (c.M < 2) bad.push_back("M >= 2 required (got " + std::to_string(c.M) + ")");
  if (c.M > 12) bad.push_back("M <= 12 required (got " + std::to_string(c.M) + ")");
  if (!(c.delta > 0)) bad.push_back("delta > 0 required");
  if (c.M >= 2 && c.delta > 1.0 / (3.0 * c.M * c.M)) {
    bad.push_back("delta <= 1/(3M^2) = " + std::to_string(1.0 / (3.0 * c.M * c.M)) + " violated");
  }
  if (!(c.nu > 0.5)) bad.push_back("nu > 1/2 required");
  if (!(c.nu < 1)) bad.push_back("nu < 1 required");
  const double lower = c.M * c.delta + (c.M > 0 ? 1.0 / c.M : 0.0);
  if (!(lower < 1 - c.nu)) {
    bad.push_back("no admissible varpi: M*delta + 1/M = " + std::to_string(lower) + " >= 1 - nu = " +
                  std::to_string(1 - c.nu));
  }
  if (!(lower < c.varpi)) bad.push_back("M*delta + 1/M < varpi violated");
  if (!(c.varpi < 1 - c.nu)) bad.push_back("varpi < 1 - nu violated");
  if (c.x < 2) bad.push_back("window start x >= 2 required");
  if (c.y < 1) bad.push_back("window length y >= 1 required");
  if (c.x > std::numeric_limits<u64>::max() / 2 || c.y > std::numeric_limits<u64>::max() / 2) {
    bad.push_back("window exceeds 64-bit range");
  }
  if (c.anchor != 0 && c.anchor < 2) bad.push_back("anchor >= 2 required when set");
  if (c.sigma != 1 && c.sigma != -1) bad.push_back("sigma must be +1 or -1");
  if (c.mode == WindowMode::paper_schedule && c.x >= 2 && c.c1 >= 0) {
    const auto step = interval_schedule(static_cast<long double>(c.x), c.c1, 1);
    if (static_cast<long double>(c.y) != step[0].K) {
      bad.push_back("paper_schedule mode: y must equal K_0 = " + std::to_string(static_cast<double>(step[0].K)));
    }
  }
  if (c.c1 < 0) bad.push_back("c1 >= 0 required");
  if (!bad.empty()) throw ConfigError(std::move(bad));

  CheckedConfig out;
  out.cfg = c;
  out.sigma = effective_sigma(c);
  for (int i = 1; i <= c.M; ++i) out.J.emplace_back(i * (1.0 / c.M - c.delta), i * (1.0 / c.M + c.delta));
  out.level_exponent = 1 - c.varpi;
  out.max_beta_sum = static_cast<int>(std::floor(out.level_exponent / (1.0 / c.M - c.delta)));
  if (out.max_beta_sum > c.M - 2) throw std::logic_error("validate_config: d-range bound exceeds M-2");
  return out;
}

// ---------------------------------------------------------------------------
// Prime classes

struct PrimeClassSet {
  int M = 0;
  double delta = 0.0;
  u64 anchor = 0;
  std::vector<std::pair<double, double>> J;  // index i-1
  std::vector<std::vector<u64>> classes;     // index i-1, increasing

  const std::vector<u64>& of(int i) const { return classes.at(static_cast<std::size_t>(i - 1)); }
};

namespace detail {

// Smallest m >= 1 with log m >= e * L, and largest m with log m <= e * L.
inline u64 exp_ceil(double e, double L) {
  long double g = std::ceil(std::exp(static_cast<long double>(e) * L));
  u64 m = g < 1 ? 1 : static_cast<u64>(g);
  while (m > 1 && std::log(static_cast<double>(m - 1)) >= e * L) --m;
  while (std::log(static_cast<double>(m)) < e * L) ++m;
  return m;
}

inline u64 exp_floor(double e, double L) {
  long double g = std::floor(std::exp(static_cast<long double>(e) * L));
  u64 m = g < 1 ? 1 : static_cast<u64>(g);
  while (std::log(static_cast<double>(m + 1)) <= e * L) ++m;
  while (m > 1 && std::log(static_cast<double>(m)) > e * L) --m;
  return m;
}

}  // namespace detail

/// Integer range [lo, hi] that can hold members of P_i, clipped to the window
/// end. Class M is clipped to the window itself, since primes of that size
/// only enter as the single factor of alpha = (M).
inline std::pair<u64, u64> class_range(const WindowConfig& c, int i) {
  const double L = std::log(static_cast<double>(c.scale()));
  u64 lo = detail::exp_ceil(i * (1.0 / c.M - c.delta), L);
  u64 hi = std::min(detail::exp_floor(i * (1.0 / c.M + c.delta), L), c.end());
  if (i == c.M) lo = std::max(lo, c.x + 1);
  lo = std::max<u64>(lo, 2);
  return {lo, hi};
}

/// Prime tables needed by build_prime_classes: classes 1..M-1 and the window.
inline std::pair<PrimeTable, PrimeTable> sieve_class_tables(const WindowConfig& c, const SieveOptions& opt = {}) {
  const u64 lo = class_range(c, 1).first;
  const u64 hi = std::max(lo, class_range(c, c.M - 1).second);
  return {sieve_primes(lo, hi, opt), sieve_primes(c.x + 1 >= 2 ? c.x + 1 : 2, c.end(), opt)};
}

/// P_i = primes p with log p / log(anchor) in J_i (classes below M from
/// `small`, class M from `window`).
inline PrimeClassSet build_prime_classes(const WindowConfig& c, const PrimeTable& small, const PrimeTable& window) {
  PrimeClassSet s;
  s.M = c.M;
  s.delta = c.delta;
  s.anchor = c.scale();
  const double L = std::log(static_cast<double>(s.anchor));
  for (int i = 1; i <= c.M; ++i) {
    s.J.emplace_back(i * (1.0 / c.M - c.delta), i * (1.0 / c.M + c.delta));
    const auto [lo, hi] = class_range(c, i);
    std::vector<u64> members;
    if (lo <= hi) {
      const PrimeTable& t = (i == c.M) ? window : small;
      if (!t.covers(lo, hi)) {
        throw CoverageError("build_prime_classes: prime table [" + std::to_string(t.range_lo) + ", " +
                            std::to_string(t.range_hi) + "] does not cover class " + std::to_string(i) + " range [" +
                            std::to_string(lo) + ", " + std::to_string(hi) + "]");
      }
      for (u64 p : t.slice(lo, hi)) {
        const double e = std::log(static_cast<double>(p)) / L;
        if (e >= s.J.back().first && e <= s.J.back().second) members.push_back(p);
      }
    }
    s.classes.push_back(std::move(members));
  }
  for (int i = 1; i < c.M; ++i) {
    if (!s.of(i).empty() && !s.of(i + 1).empty() && s.of(i).back() >= s.of(i + 1).front()) {
      throw std::logic_error("build_prime_classes: classes overlap");
    }
  }
  return s;
}

inline PrimeClassSet build_prime_classes(const WindowConfig& c, const PrimeTable& primes) {
  return build_prime_classes(c, primes, primes);
}

// ---------------------------------------------------------------------------
// Enumeration of C_alpha

struct ClassMember {
  u64 n = 0;
  std::vector<u64> factors;  // sorted, the canonical factor list
};

/// Every n in (x, x+y] of the form p_1...p_r with p_i in P_{alpha_i}, once,
/// sorted by n. Repeated parts of alpha take non-decreasing primes, so each
/// multiset of factors is produced exactly once; repeated primes are kept.
inline std::vector<ClassMember> enumerate_class(const Partition& alpha, const WindowConfig& c,
                                                const PrimeClassSet& classes) {
  if (alpha.sum() != c.M) throw std::invalid_argument("enumerate_class: alpha must be a partition of M");
  const int r = alpha.size();
  std::vector<const std::vector<u64>*> cls;
  for (int i = 0; i < r; ++i) {
    cls.push_back(&classes.of(alpha[i]));
    if (cls.back()->empty()) return {};
  }
  using wide = unsigned __int128;
  const wide lo = c.x, hi = c.end();
  // saturates at 2^100, far above any window end
  const wide cap = wide(1) << 100;
  auto mul = [cap](wide a, wide b) { return (b != 0 && a > cap / b) ? cap : std::min(cap, a * b); };
  // bounds on the product of positions i..r-1, ignoring the ordering constraint
  std::vector<wide> min_rest(static_cast<std::size_t>(r + 1), 1), max_rest(static_cast<std::size_t>(r + 1), 1);
  for (int i = r - 1; i >= 0; --i) {
    min_rest[i] = mul(min_rest[i + 1], cls[i]->front());
    max_rest[i] = mul(max_rest[i + 1], cls[i]->back());
  }

  std::vector<ClassMember> out;
  std::vector<u64> cur(static_cast<std::size_t>(r));
  auto rec = [&](auto&& self, int pos, wide prod, std::size_t start) -> void {
    const auto& P = *cls[pos];
    if (pos == r - 1) {
      // last factor: x < prod * p <= x + y
      const u64 pmin = static_cast<u64>(lo / prod) + 1;
      const u64 pmax = static_cast<u64>(hi / prod);
      auto first = std::lower_bound(P.begin() + static_cast<std::ptrdiff_t>(start), P.end(), pmin);
      auto last = std::upper_bound(first, P.end(), pmax);
      for (auto it = first; it != last; ++it) {
        cur[pos] = *it;
        out.push_back({static_cast<u64>(prod * *it), cur});
      }
      return;
    }
    for (std::size_t j = start; j < P.size(); ++j) {
      const wide next = prod * P[j];
      if (mul(next, min_rest[pos + 1]) > hi) break;
      if (mul(next, max_rest[pos + 1]) <= lo) continue;
      cur[pos] = P[j];
      const bool same = alpha[pos + 1] == alpha[pos];
      self(self, pos + 1, next, same ? j : 0);
    }
  };
  rec(rec, 0, 1, 0);
  std::sort(out.begin(), out.end(), [](const ClassMember& a, const ClassMember& b) { return a.n < b.n; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].n == out[i - 1].n) throw std::logic_error("enumerate_class: duplicate product");
  }
  return out;
}

// ---------------------------------------------------------------------------
// b_n

inline std::vector<double> normalized_logs(u64 n, std::span<const u64> factors) {
  const double L = std::log(static_cast<double>(n));
  std::vector<double> v;
  v.reserve(factors.size());
  for (u64 p : factors) v.push_back(std::log(static_cast<double>(p)) / L);
  return v;
}

namespace detail {

inline double checked_b(double b, u64 n) {
  if (!(std::abs(b) <= 1.0)) {
    throw std::domain_error("b_n = " + std::to_string(b) + " at n = " + std::to_string(n) + " leaves [-1, 1]");
  }
  return b;
}

}  // namespace detail

/// b_n = f_alpha(log p_i / log n) through a (possibly interpolating) evaluator.
inline double evaluate_b(u64 n, const Partition& alpha, std::span<const u64> factors, FAlphaEvaluator& eval) {
  return detail::checked_b(eval(normalized_logs(n, factors), alpha), n);
}

/// Same, evaluated exactly.
inline double evaluate_b(u64 n, const Partition& alpha, std::span<const u64> factors, const TestFunctionSpec& spec,
                         const CoefficientTable& table, const QuadratureConfig& quad) {
  return detail::checked_b(f_alpha(normalized_logs(n, factors), alpha, spec, table, quad).value, n);
}

// ---------------------------------------------------------------------------
// Slabs

enum class SlabKind : std::uint8_t { construction = 0, selberg = 1 };

inline constexpr std::uint8_t kSelbergAlpha = 0xFF;

struct SlabEntry {
  u64 n = 0;
  std::uint8_t alpha_index = 0;  // into enumerate_partitions(M); kSelbergAlpha for the reference slab
  std::vector<u64> factors;      // with multiplicity, non-decreasing
  double b = 0.0;

  bool operator==(const SlabEntry&) const = default;
};

struct WeightedSlab {
  SlabKind kind = SlabKind::construction;
  WindowConfig cfg;
  std::uint64_t spec_hash = 0;
  u64 K = 0;  // integers in the window
  std::vector<SlabEntry> entries;  // sorted by n; n not listed has b_n = 0

  std::vector<Partition> alphas() const { return cfg.M > 0 ? enumerate_partitions(cfg.M) : std::vector<Partition>{}; }

  // b_n for every n in the window, index n - x - 1.
  std::vector<double> dense_b() const {
    std::vector<double> b(static_cast<std::size_t>(K), 0.0);
    for (const auto& e : entries) b[static_cast<std::size_t>(e.n - cfg.x - 1)] = e.b;
    return b;
  }
};

struct SlabBuildOptions {
  bool exact = false;       // disable the interpolation cache
  double grid_step = 1e-3;
  SieveOptions sieve;
  std::size_t max_entries = std::size_t{1} << 26;
};

struct SlabStats {
  std::map<std::string, std::size_t> count_per_alpha;
  std::size_t entries = 0;
  std::size_t non_squarefree = 0;
  double sum_b = 0.0;
  double sum_abs_b = 0.0;
  double max_abs_b = 0.0;
};

inline bool squarefree_factors(std::span<const u64> f) { return std::adjacent_find(f.begin(), f.end()) == f.end(); }

inline SlabStats slab_stats(const WeightedSlab& s) {
  SlabStats st;
  const auto alphas = s.alphas();
  NeumaierSum sb, sa;
  for (const auto& e : s.entries) {
    const std::string key = e.alpha_index == kSelbergAlpha ? "selberg" : alphas.at(e.alpha_index).str();
    ++st.count_per_alpha[key];
    if (!squarefree_factors(e.factors)) ++st.non_squarefree;
    sb.add(e.b);
    sa.add(std::abs(e.b));
    st.max_abs_b = std::max(st.max_abs_b, std::abs(e.b));
  }
  st.entries = s.entries.size();
  st.sum_b = sb.value();
  st.sum_abs_b = sa.value();
  return st;
}

/// The construction on (x, x+y]: enumerate every C_alpha, alpha in P(M), and
/// attach b_n. The test function must be the one the window asks for.
inline WeightedSlab assemble_slab(const WindowConfig& c, FAlphaEvaluator& eval, const SlabBuildOptions& opt = {}) {
  const CheckedConfig cc = validate_config(c);
  const TestFunctionSpec& spec = eval.spec();
  if (spec.M != c.M || spec.delta != c.delta) {
    throw std::invalid_argument("assemble_slab: test function (M, delta) does not match the window");
  }
  if (spec.variant == Variant::theorem1 && spec.sigma != cc.sigma) {
    throw std::invalid_argument("assemble_slab: test function sigma does not match the schedule");
  }
  const auto [small, window] = sieve_class_tables(c, opt.sieve);
  const PrimeClassSet classes = build_prime_classes(c, small, window);
  const auto alphas = enumerate_partitions(c.M);

  WeightedSlab slab;
  slab.cfg = c;
  slab.spec_hash = spec.hash();
  slab.K = c.y;
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    for (auto& m : enumerate_class(alphas[a], c, classes)) {
      const double b = evaluate_b(m.n, alphas[a], m.factors, eval);
      slab.entries.push_back({m.n, static_cast<std::uint8_t>(a), std::move(m.factors), b});
      if (slab.entries.size() > opt.max_entries) throw BudgetError("assemble_slab: entry cap exceeded");
    }
  }
  std::sort(slab.entries.begin(), slab.entries.end(), [](const SlabEntry& a, const SlabEntry& b) { return a.n < b.n; });
  for (std::size_t i = 1; i < slab.entries.size(); ++i) {
    if (slab.entries[i].n == slab.entries[i - 1].n) {
      throw std::logic_error("assemble_slab: n = " + std::to_string(slab.entries[i].n) + " lies in two classes");
    }
  }
  return slab;
}

inline WeightedSlab assemble_slab(const WindowConfig& c, const TestFunctionSpec& spec, const QuadratureConfig& quad,
                                  const SlabBuildOptions& opt = {}) {
  FAlphaEvaluator eval(spec, make_coefficient_table(spec.M), quad, opt.exact, opt.grid_step);
  return assemble_slab(c, eval, opt);
}

/// Reference slab a_n = 1 + lambda(n) on (x, x+y]; x = 0 is allowed.
inline WeightedSlab selberg_sequence(u64 x, u64 y, const SieveOptions& opt = {}) {
  if (y < 1) throw std::invalid_argument("selberg_sequence: empty window");
  WeightedSlab slab;
  slab.kind = SlabKind::selberg;
  slab.cfg.x = x;
  slab.cfg.y = y;
  slab.cfg.M = 0;
  slab.K = y;
  const auto rf = factor_range(x, x + y, opt);
  slab.entries.reserve(static_cast<std::size_t>(y));
  for (u64 n = x + 1; n <= x + y; ++n) {
    SlabEntry e;
    e.n = n;
    e.alpha_index = kSelbergAlpha;
    int omega = 0;
    for (const auto& pp : rf.at(n)) {
      for (unsigned k = 0; k < pp.exponent; ++k) e.factors.push_back(pp.prime);
      omega += static_cast<int>(pp.exponent);
    }
    e.b = omega % 2 == 0 ? 1.0 : -1.0;
    slab.entries.push_back(std::move(e));
  }
  return slab;
}

// ---------------------------------------------------------------------------
// Slab files

inline constexpr std::string_view kSlabMagic = "SBSLAB01";

inline void write_slab(std::ostream& os, const WeightedSlab& s) {
  using namespace binary;
  put_magic(os, kSlabMagic);
  put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
  put_uint<std::uint64_t>(os, s.cfg.x);
  put_uint<std::uint64_t>(os, s.cfg.y);
  put_uint<std::uint64_t>(os, s.cfg.anchor);
  put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(s.cfg.M));
  put_f64(os, s.cfg.delta);
  put_f64(os, s.cfg.varpi);
  put_f64(os, s.cfg.nu);
  put_f64(os, s.cfg.c1);
  put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(s.cfg.mode));
  put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(static_cast<std::int8_t>(s.cfg.sigma)));
  put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(s.cfg.schedule));
  put_uint<std::uint64_t>(os, s.spec_hash);
  put_uint<std::uint64_t>(os, s.K);
  put_uint<std::uint64_t>(os, s.entries.size());
  for (const auto& e : s.entries) {
    put_uint<std::uint64_t>(os, e.n);
    put_uint<std::uint8_t>(os, e.alpha_index);
    if (e.factors.size() > 255) throw std::length_error("write_slab: too many factors");
    put_uint<std::uint8_t>(os, static_cast<std::uint8_t>(e.factors.size()));
    for (u64 p : e.factors) put_uint<std::uint64_t>(os, p);
    put_f64(os, e.b);
  }
  if (!os) throw std::runtime_error("write_slab: stream failure");
}

inline WeightedSlab read_slab(std::istream& is) {
  using namespace binary;
  expect_magic(is, kSlabMagic);
  WeightedSlab s;
  const auto kind = get_uint<std::uint8_t>(is);
  if (kind > 1) throw std::runtime_error("read_slab: unknown slab kind");
  s.kind = static_cast<SlabKind>(kind);
  s.cfg.x = get_uint<std::uint64_t>(is);
  s.cfg.y = get_uint<std::uint64_t>(is);
  s.cfg.anchor = get_uint<std::uint64_t>(is);
  s.cfg.M = static_cast<int>(get_uint<std::uint32_t>(is));
  s.cfg.delta = get_f64(is);
  s.cfg.varpi = get_f64(is);
  s.cfg.nu = get_f64(is);
  s.cfg.c1 = get_f64(is);
  s.cfg.mode = static_cast<WindowMode>(get_uint<std::uint8_t>(is));
  s.cfg.sigma = static_cast<std::int8_t>(get_uint<std::uint8_t>(is));
  s.cfg.schedule = static_cast<Schedule>(get_uint<std::uint8_t>(is));
  s.spec_hash = get_uint<std::uint64_t>(is);
  s.K = get_uint<std::uint64_t>(is);
  const auto count = get_uint<std::uint64_t>(is);
  if (count > s.K) throw std::runtime_error("read_slab: more entries than integers in the window");
  s.entries.resize(static_cast<std::size_t>(count));
  for (auto& e : s.entries) {
    e.n = get_uint<std::uint64_t>(is);
    e.alpha_index = get_uint<std::uint8_t>(is);
    e.factors.resize(get_uint<std::uint8_t>(is));
    for (auto& p : e.factors) p = get_uint<std::uint64_t>(is);
    e.b = get_f64(is);
  }
  return s;
}

inline void export_slab_csv(std::ostream& os, const WeightedSlab& s) {
  const auto alphas = s.alphas();
  os << "n,alpha,factors,b,a\n";
  char buf[64];
  for (const auto& e : s.entries) {
    os << e.n << ",\"" << (e.alpha_index == kSelbergAlpha ? std::string("selberg") : alphas.at(e.alpha_index).str())
       << "\",";
    for (std::size_t i = 0; i < e.factors.size(); ++i) os << (i ? "*" : "") << e.factors[i];
    std::snprintf(buf, sizeof buf, "%.17g", e.b);
    os << ',' << buf;
    std::snprintf(buf, sizeof buf, "%.17g", 1.0 + e.b);
    os << ',' << buf << '\n';
  }
}

}  // namespace sievebias
