#pragma once

// Exact combinatorics of integer partitions: enumeration, multiset
// permutation counts, the coefficients e_alpha, the linear system they
// solve, and the generating-function coefficients gamma_m and W(M, N).
// Everything here is exact rational arithmetic.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace sievebias {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline std::string to_string(const Rational& q) {
  if (denominator(q) == 1) return numerator(q).str();
  return numerator(q).str() + "/" + denominator(q).str();
}

// A partition is kept as its non-decreasing list of parts. The empty
// partition plays the role of the unit for +.
class Partition {
 public:
  Partition() = default;
  Partition(std::initializer_list<int> parts) : parts_(parts) { normalize(); }
  explicit Partition(std::vector<int> parts) : parts_(std::move(parts)) { normalize(); }

  static Partition ones(int m) { return Partition(std::vector<int>(static_cast<std::size_t>(m), 1)); }

  const std::vector<int>& parts() const noexcept { return parts_; }
  int size() const noexcept { return static_cast<int>(parts_.size()); }
  int sum() const noexcept {
    int s = 0;
    for (int p : parts_) s += p;
    return s;
  }
  bool empty() const noexcept { return parts_.empty(); }
  int operator[](std::size_t i) const { return parts_[i]; }

  // multiplicity of each distinct part, in increasing part order
  std::vector<std::pair<int, int>> multiplicities() const {
    std::vector<std::pair<int, int>> out;
    for (int p : parts_) {
      if (!out.empty() && out.back().first == p) {
        ++out.back().second;
      } else {
        out.emplace_back(p, 1);
      }
    }
    return out;
  }

  /// True if every part of `sub` occurs in *this at least as often.
  bool contains(const Partition& sub) const {
    std::size_t i = 0;
    for (int p : sub.parts_) {
      while (i < parts_.size() && parts_[i] < p) ++i;
      if (i == parts_.size() || parts_[i] != p) return false;
      ++i;
    }
    return true;
  }

  friend Partition operator+(const Partition& a, const Partition& b) {
    std::vector<int> merged;
    merged.reserve(a.parts_.size() + b.parts_.size());
    std::merge(a.parts_.begin(), a.parts_.end(), b.parts_.begin(), b.parts_.end(),
               std::back_inserter(merged));
    Partition out;
    out.parts_ = std::move(merged);
    return out;
  }

  /// Multiset difference; `b` must be contained in `a`.
  friend Partition operator-(const Partition& a, const Partition& b) {
    if (!a.contains(b)) {
      throw std::invalid_argument("partition difference: " + b.str() + " is not contained in " + a.str());
    }
    std::vector<int> out;
    std::size_t j = 0;
    for (int p : a.parts_) {
      if (j < b.parts_.size() && b.parts_[j] == p) {
        ++j;
      } else {
        out.push_back(p);
      }
    }
    Partition r;
    r.parts_ = std::move(out);
    return r;
  }

  friend bool operator==(const Partition&, const Partition&) = default;
  friend std::strong_ordering operator<=>(const Partition& a, const Partition& b) {
    return std::lexicographical_compare_three_way(a.parts_.begin(), a.parts_.end(), b.parts_.begin(),
                                                  b.parts_.end());
  }

  std::string str() const {
    if (parts_.empty()) return "E";
    std::string s = "(";
    for (std::size_t i = 0; i < parts_.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(parts_[i]);
    }
    return s + ")";
  }

 private:
  void normalize() {
    for (int p : parts_) {
      if (p <= 0) throw std::invalid_argument("partition parts must be positive");
    }
    std::sort(parts_.begin(), parts_.end());
  }
  std::vector<int> parts_;
};

namespace detail {
inline void partitions_rec(int remaining, int min_part, std::vector<int>& cur, std::vector<Partition>& out) {
  if (remaining == 0) {
    out.emplace_back(cur);
    return;
  }
  for (int p = min_part; p <= remaining; ++p) {
    cur.push_back(p);
    partitions_rec(remaining - p, p, cur, out);
    cur.pop_back();
  }
}
}  // namespace detail

/// All partitions of m in lexicographic order of their sorted parts.
/// P(0) holds only the empty partition.
inline std::vector<Partition> enumerate_partitions(int m) {
  if (m < 0) throw std::invalid_argument("enumerate_partitions: m must be >= 0");
  std::vector<Partition> out;
  std::vector<int> cur;
  detail::partitions_rec(m, 1, cur, out);
  return out;
}

inline BigInt factorial(int n) {
  BigInt f = 1;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

/// Number of distinct orderings of the parts of alpha.
inline BigInt perm_count(const Partition& alpha) {
  if (alpha.empty()) throw std::invalid_argument("perm_count: empty partition");
  BigInt r = factorial(alpha.size());
  for (const auto& [part, mult] : alpha.multiplicities()) r /= factorial(mult);
  return r;
}

/// e_alpha = (-1)^(sum + length) / (product of parts). Equals 1 on (1,...,1)
/// and on the empty partition.
inline Rational e_coefficient(const Partition& alpha) {
  BigInt denom = 1;
  for (int p : alpha.parts()) denom *= p;
  const int sign = ((alpha.sum() + alpha.size()) % 2 == 0) ? 1 : -1;
  return Rational(sign) / Rational(denom);
}

/// Q = {E} together with all partitions of 1..M-2.
inline std::vector<Partition> index_set_q(int M) {
  std::vector<Partition> q{Partition{}};
  for (int m = 1; m <= M - 2; ++m) {
    auto pm = enumerate_partitions(m);
    q.insert(q.end(), pm.begin(), pm.end());
  }
  return q;
}

struct CoefficientTable {
  int M = 0;
  std::map<Partition, Rational> e;
  std::map<Partition, BigInt> perm;
  std::vector<Partition> Q;

  const Rational& e_of(const Partition& a) const {
    auto it = e.find(a);
    if (it == e.end()) throw std::out_of_range("CoefficientTable: no entry for " + a.str());
    return it->second;
  }
  double e_double(const Partition& a) const { return e_of(a).convert_to<double>(); }
};

inline CoefficientTable make_coefficient_table(int M) {
  if (M < 1) throw std::invalid_argument("make_coefficient_table: M must be >= 1");
  CoefficientTable t;
  t.M = M;
  for (int m = 0; m <= M; ++m) {
    for (const auto& a : enumerate_partitions(m)) {
      t.e.emplace(a, e_coefficient(a));
      if (!a.empty()) t.perm.emplace(a, perm_count(a));
    }
  }
  t.Q = index_set_q(M);
  return t;
}

struct SystemResidual {
  Partition beta;
  Rational residual;
};

/// For each beta in Q, the exact value of
///   sum over mu in P(M - sum(beta)) of perm(mu)/|mu|! * e_{beta+mu}.
inline std::vector<SystemResidual> verify_coefficient_system(int M) {
  if (M < 2 || M > 12) throw std::invalid_argument("verify_coefficient_system: need 2 <= M <= 12");
  std::vector<SystemResidual> out;
  for (const auto& beta : index_set_q(M)) {
    Rational acc = 0;
    for (const auto& mu : enumerate_partitions(M - beta.sum())) {
      acc += Rational(perm_count(mu)) / Rational(factorial(mu.size())) * e_coefficient(beta + mu);
    }
    out.push_back({beta, acc});
  }
  return out;
}

struct MultiplicativityReport {
  std::size_t pairs_checked = 0;
  std::vector<std::pair<Partition, Partition>> failures;
};

/// Checks e_{beta+mu} = e_beta * e_mu for all pairs with sum(beta)+sum(mu) <= max_sum.
inline MultiplicativityReport verify_e_multiplicativity(int max_sum) {
  MultiplicativityReport r;
  std::vector<std::vector<Partition>> by_sum;
  for (int m = 0; m <= max_sum; ++m) by_sum.push_back(enumerate_partitions(m));
  for (int a = 0; a <= max_sum; ++a) {
    for (int b = 0; a + b <= max_sum; ++b) {
      for (const auto& beta : by_sum[a]) {
        for (const auto& mu : by_sum[b]) {
          ++r.pairs_checked;
          if (e_coefficient(beta + mu) != e_coefficient(beta) * e_coefficient(mu)) {
            r.failures.emplace_back(beta, mu);
          }
        }
      }
    }
  }
  return r;
}

namespace detail {

// Visits every ordered composition of m (parts >= 1).
template <typename F>
void for_each_composition(int m, F&& visit) {
  if (m < 1) return;
  std::vector<int> parts;
  // bit i of mask set = a cut after position i+1
  const std::uint64_t count = std::uint64_t{1} << (m - 1);
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    parts.clear();
    int run = 1;
    for (int i = 0; i < m - 1; ++i) {
      if (mask >> i & 1u) {
        parts.push_back(run);
        run = 1;
      } else {
        ++run;
      }
    }
    parts.push_back(run);
    visit(parts);
  }
}

// Coefficients of prod_i (1 - y^{d_i}) as a dense vector indexed by degree.
inline std::vector<long long> signed_subset_sums(const std::vector<int>& d, int max_degree) {
  std::vector<long long> poly(static_cast<std::size_t>(max_degree) + 1, 0);
  poly[0] = 1;
  for (int di : d) {
    for (int deg = max_degree; deg >= di; --deg) poly[deg] -= poly[deg - di];
  }
  return poly;
}

inline Rational gamma_partition_route(int m) {
  Rational acc = 0;
  for (const auto& mu : enumerate_partitions(m)) {
    BigInt prod = 1;
    for (int p : mu.parts()) prod *= p;
    const int sign = (mu.size() % 2 == 0) ? 1 : -1;
    acc += Rational(sign * perm_count(mu)) / Rational(factorial(mu.size()) * prod);
  }
  return acc;
}

inline Rational w_partition_route(int M, int N) {
  Rational acc = 0;
  for (const auto& a : enumerate_partitions(M)) {
    BigInt prod = 1;
    for (int p : a.parts()) prod *= p;
    const auto poly = signed_subset_sums(a.parts(), M);
    if (poly[N] == 0) continue;
    acc += Rational(perm_count(a) * poly[N]) / Rational(factorial(a.size()) * prod);
  }
  return acc;
}

}  // namespace detail

/// gamma_m = sum_r (-1)^r / r! * sum over compositions d_1+...+d_r = m of
/// 1/(d_1...d_r), summed over compositions directly and cross-checked
/// against the partition form.
inline Rational gamma_m(int m) {
  if (m < 1 || m > 20) throw std::invalid_argument("gamma_m: need 1 <= m <= 20");
  // group compositions by (length, product of parts); the counts are exact integers
  std::map<std::pair<int, std::uint64_t>, std::uint64_t> counts;
  detail::for_each_composition(m, [&](const std::vector<int>& d) {
    std::uint64_t prod = 1;
    for (int di : d) prod *= static_cast<std::uint64_t>(di);
    ++counts[{static_cast<int>(d.size()), prod}];
  });
  Rational acc = 0;
  for (const auto& [key, count] : counts) {
    const auto [r, prod] = key;
    const int sign = (r % 2 == 0) ? 1 : -1;
    acc += Rational(BigInt(sign) * count) / Rational(factorial(r) * prod);
  }
  if (acc != detail::gamma_partition_route(m)) {
    throw std::logic_error("gamma_m: composition and partition routes disagree at m=" + std::to_string(m));
  }
  return acc;
}

/// W(M, N) = sum_r 1/r! sum over compositions d of M into r parts of
/// 1/(d_1...d_r) * sum over eps in {0,1}^r with sum eps_i d_i = N of
/// (-1)^{sum eps}. The inner eps-sum is the y^N coefficient of
/// prod (1 - y^{d_i}).
inline Rational w_coefficient(int M, int N) {
  if (N < 0 || N > M || M > 12 || M < 1) throw std::invalid_argument("w_coefficient: need 0 <= N <= M <= 12");
  std::map<std::pair<int, std::uint64_t>, long long> weights;
  detail::for_each_composition(M, [&](const std::vector<int>& d) {
    const auto poly = detail::signed_subset_sums(d, M);
    if (poly[N] == 0) return;
    std::uint64_t prod = 1;
    for (int di : d) prod *= static_cast<std::uint64_t>(di);
    weights[{static_cast<int>(d.size()), prod}] += poly[N];
  });
  Rational acc = 0;
  for (const auto& [key, w] : weights) {
    const auto [r, prod] = key;
    acc += Rational(BigInt(w)) / Rational(factorial(r) * prod);
  }
  if (acc != detail::w_partition_route(M, N)) {
    throw std::logic_error("w_coefficient: composition and partition routes disagree at (" +
                           std::to_string(M) + "," + std::to_string(N) + ")");
  }
  return acc;
}

}  // namespace sievebias
