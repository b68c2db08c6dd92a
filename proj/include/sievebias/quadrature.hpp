#pragma once

// Test functions on the simplex U_M = {u_i >= 0, sum u_i = 1} and the
// integrals built from them.
//
// Every f_{1_M} here is a finite sum of bumps
//   coef_b * ell(u - c_b; xi),   ell(v; xi) = xi^-4 * max(0, xi^2 - |v|^2)^2,
// optionally multiplied by the cofactor u_1...u_M. Integrals over simplex
// slices are computed bump by bump: the support of ell(. - c) on an affine
// slice is a ball around the orthogonal projection of c, so each integral is
// an integral over a unit ball with weight (1 - |t|^2)^2, done in polar
// coordinates with Gauss-Legendre panels. Tiny radii cost nothing extra.
//
// Measure convention: on a slice {sum of block j = v_j} the measure drops the
// last coordinate of each block (Lebesgue in the remaining ones). This is the
// measure in which sums over primes turn into integrals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/legendre.hpp>

#include "sievebias/arith.hpp"
#include "sievebias/binary_io.hpp"
#include "sievebias/errors.hpp"
#include "sievebias/partition.hpp"

namespace sievebias {

/// ell(v; xi) = xi^-4 max(0, xi^2 - |v|^2)^2.
inline double bump(std::span<const double> v, double xi) {
  if (!(xi > 0)) throw std::invalid_argument("bump: radius must be positive");
  double r2 = 0.0;
  for (double c : v) r2 += c * c;
  const double gap = xi * xi - r2;
  if (gap <= 0) return 0.0;
  const double s = gap / (xi * xi);
  return s * s;
}

// ---------------------------------------------------------------------------
// Test functions

enum class Variant { theorem1, theorem2, custom };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::theorem1: return "thm1";
    case Variant::theorem2: return "thm2";
    case Variant::custom: return "custom";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "thm1" || s == "theorem1") return Variant::theorem1;
  if (s == "thm2" || s == "theorem2") return Variant::theorem2;
  if (s == "custom") return Variant::custom;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

struct BumpTerm {
  std::vector<double> center;  // a point of U_M
  double coef = 0.0;
};

struct TestFunctionSpec {
  Variant variant = Variant::theorem1;
  int M = 0;
  double delta = 0.0;
  int sigma = 1;                  // theorem1 only
  double xi = 0.0;                // common bump radius
  bool product_cofactor = false;  // f = u_1...u_M * (bump sum) when true
  std::vector<BumpTerm> bumps;

  double support_floor() const { return 1.0 / (2.0 * M); }
  std::vector<double> center_w() const { return std::vector<double>(static_cast<std::size_t>(M), 1.0 / M); }

  // f_{1_M}(u) / (u_1...u_M) without the bump sum, i.e. the smooth factor
  // multiplying ell in every integrand.
  double reciprocal_cofactor(std::span<const double> w) const {
    if (product_cofactor) return 1.0;
    double p = 1.0;
    for (double x : w) p *= x;
    return 1.0 / p;
  }

  std::string canonical() const {
    std::ostringstream os;
    os << std::hexfloat << to_string(variant) << ';' << M << ';' << delta << ';' << sigma << ';' << xi << ';'
       << product_cofactor;
    for (const auto& b : bumps) {
      os << ";[" << b.coef;
      for (double c : b.center) os << ',' << c;
      os << ']';
    }
    return os.str();
  }
  std::uint64_t hash() const { return binary::fnv1a(canonical()); }
};

namespace detail {

inline void check_support(const TestFunctionSpec& s) {
  const double eps = s.support_floor();
  // on the hyperplane sum u = 1 a ball of radius xi around c reaches down to
  // c_i - xi sqrt(1 - 1/M) in coordinate i
  const double reach = s.xi * std::sqrt(1.0 - 1.0 / s.M);
  for (const auto& b : s.bumps) {
    if (static_cast<int>(b.center.size()) != s.M) throw std::invalid_argument("bump center has wrong dimension");
    double sum = 0.0;
    for (double c : b.center) {
      sum += c;
      if (c - reach <= eps) {
        throw std::invalid_argument("bump support reaches min u_i <= 1/(2M); f would not vanish there");
      }
    }
    if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("bump center must lie on sum u_i = 1");
  }
}

// The bump list must be invariant under coordinate permutations; adjacent
// transpositions generate the symmetric group.
inline void check_permutation_closed(const TestFunctionSpec& s) {
  auto same = [](const BumpTerm& a, const BumpTerm& b) {
    if (std::abs(a.coef - b.coef) > 1e-15 * std::max(1.0, std::abs(a.coef))) return false;
    for (std::size_t i = 0; i < a.center.size(); ++i) {
      if (std::abs(a.center[i] - b.center[i]) > 1e-15) return false;
    }
    return true;
  };
  for (const auto& b : s.bumps) {
    for (int i = 0; i + 1 < s.M; ++i) {
      BumpTerm t = b;
      std::swap(t.center[i], t.center[i + 1]);
      if (std::none_of(s.bumps.begin(), s.bumps.end(), [&](const BumpTerm& o) { return same(o, t); })) {
        throw std::invalid_argument("custom test function is not symmetric under coordinate permutations");
      }
    }
  }
}

}  // namespace detail

/// f_{1_M} = (-1)^{M+1} sigma ell(u - w; delta), w = (1/M, ..., 1/M).
inline TestFunctionSpec make_theorem1_spec(int M, double delta, int sigma) {
  if (M < 2) throw std::invalid_argument("theorem1 spec: M must be >= 2");
  if (!(delta > 0)) throw std::invalid_argument("theorem1 spec: delta must be positive");
  if (sigma != 1 && sigma != -1) throw std::invalid_argument("theorem1 spec: sigma must be +1 or -1");
  TestFunctionSpec s;
  s.variant = Variant::theorem1;
  s.M = M;
  s.delta = delta;
  s.sigma = sigma;
  s.xi = delta;
  s.product_cofactor = false;
  const double sign = ((M + 1) % 2 == 0) ? 1.0 : -1.0;
  s.bumps.push_back({s.center_w(), sign * sigma});
  detail::check_support(s);
  return s;
}

/// f_{1_M} = u_1...u_M [ell(u - w; delta^3) - binom(M, M/2)^-1 sum_{v in V} ell(u - w - v; delta^3)],
/// V = vectors with M/2 entries +delta/2 and M/2 entries -delta/2.
inline TestFunctionSpec make_theorem2_spec(int M, double delta) {
  if (M < 2 || M % 2 != 0) throw std::invalid_argument("theorem2 spec: M must be even");
  if (!(delta > 0)) throw std::invalid_argument("theorem2 spec: delta must be positive");
  TestFunctionSpec s;
  s.variant = Variant::theorem2;
  s.M = M;
  s.delta = delta;
  s.sigma = 1;
  s.xi = delta * delta * delta;
  s.product_cofactor = true;
  const auto w = s.center_w();
  s.bumps.push_back({w, 1.0});
  std::vector<int> mask(static_cast<std::size_t>(M), 0);
  std::fill(mask.begin() + M / 2, mask.end(), 1);
  std::vector<std::vector<double>> shifts;
  do {
    std::vector<double> c = w;
    for (int i = 0; i < M; ++i) c[i] += mask[i] ? delta / 2 : -delta / 2;
    shifts.push_back(std::move(c));
  } while (std::next_permutation(mask.begin(), mask.end()));
  const double coef = -1.0 / static_cast<double>(shifts.size());
  for (auto& c : shifts) s.bumps.push_back({std::move(c), coef});
  detail::check_support(s);
  return s;
}

/// A user-supplied symmetric bump sum. An empty list is the zero function.
inline TestFunctionSpec make_custom_spec(int M, double delta, double xi, std::vector<BumpTerm> bumps,
                                         bool product_cofactor = false) {
  if (M < 1) throw std::invalid_argument("custom spec: M must be >= 1");
  if (!(xi > 0)) throw std::invalid_argument("custom spec: radius must be positive");
  TestFunctionSpec s;
  s.variant = Variant::custom;
  s.M = M;
  s.delta = delta;
  s.xi = xi;
  s.product_cofactor = product_cofactor;
  s.bumps = std::move(bumps);
  detail::check_support(s);
  detail::check_permutation_closed(s);
  return s;
}

inline TestFunctionSpec make_zero_spec(int M, double delta) { return make_custom_spec(M, delta, delta, {}); }

/// f_{1_M}(u) for u on the simplex.
inline double f_one_M(std::span<const double> u, const TestFunctionSpec& spec) {
  if (static_cast<int>(u.size()) != spec.M) throw std::invalid_argument("f_one_M: wrong dimension");
  double sum = 0.0;
  for (double x : u) sum += x;
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("f_one_M: point is not on sum u_i = 1");
  std::vector<double> diff(u.size());
  double acc = 0.0;
  for (const auto& b : spec.bumps) {
    for (std::size_t i = 0; i < u.size(); ++i) diff[i] = u[i] - b.center[i];
    acc += b.coef * bump(diff, spec.xi);
  }
  if (spec.product_cofactor) {
    for (double x : u) acc *= x;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Ball rules

struct QuadratureConfig {
  int subdivisions = 2;   // radial panels at the coarsest level
  int nodes_per_panel = 8;
  int levels = 2;         // successive halvings; the last two give the error estimate
  double rel_tol = 1e-6;
};

namespace detail {

struct GaussPanel {
  std::vector<double> x, w;  // on [-1, 1]
};

inline const GaussPanel& gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, GaussPanel> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  GaussPanel g;
  for (double z : boost::math::legendre_p_zeros<double>(n)) {
    const double dp = boost::math::legendre_p_prime(n, z);
    const double wt = 2.0 / ((1.0 - z * z) * dp * dp);
    if (z == 0.0) {
      g.x.push_back(0.0);
      g.w.push_back(wt);
    } else {
      g.x.push_back(-z);
      g.w.push_back(wt);
      g.x.push_back(z);
      g.w.push_back(wt);
    }
  }
  return cache.emplace(n, std::move(g)).first->second;
}

// composite Gauss-Legendre on [a, b]
inline void composite_gl(double a, double b, int panels, int npp, std::vector<double>& x, std::vector<double>& w) {
  const auto& g = gauss_legendre(npp);
  const double h = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = a + (p + 0.5) * h;
    for (std::size_t i = 0; i < g.x.size(); ++i) {
      x.push_back(mid + 0.5 * h * g.x[i]);
      w.push_back(0.5 * h * g.w[i]);
    }
  }
}

}  // namespace detail

/// Nodes and weights approximating the integral over the unit d-ball of
/// (1 - |t|^2)^q g(t). Radius: composite Gauss-Legendre. Sphere: nested
/// hyperspherical angles, Gauss-Legendre in the polar angles (with the
/// sin^j Jacobian in the weight) and the trapezoid rule in the azimuth.
struct BallRule {
  int d = 0;
  int q = 0;
  std::vector<double> nodes;  // d coordinates per node
  std::vector<double> weights;

  std::size_t size() const noexcept { return weights.size(); }

  static double sphere_area(int d) {  // |S^{d-1}|
    return 2.0 * std::pow(std::numbers::pi, d / 2.0) / boost::math::tgamma(d / 2.0);
  }
  // exact value of the integral with g = 1
  static double total_weight(int d, int q) {
    if (d == 0) return 1.0;
    return sphere_area(d) * boost::math::beta(d / 2.0, q + 1.0) / 2.0;
  }
};

inline BallRule make_ball_rule(int d, int q, int panels, int npp) {
  if (d < 0 || q < 0 || panels < 1 || npp < 1) throw std::invalid_argument("make_ball_rule: bad parameters");
  BallRule rule;
  rule.d = d;
  rule.q = q;
  if (d == 0) {
    rule.weights.push_back(1.0);
    return rule;
  }
  // directions on S^{d-1}
  std::vector<double> dirs;
  std::vector<double> dir_w;
  if (d == 1) {
    dirs = {-1.0, 1.0};
    dir_w = {1.0, 1.0};
  } else {
    const int nphi = 16 * panels;
    for (int j = 0; j < nphi; ++j) {
      const double phi = 2.0 * std::numbers::pi * j / nphi;
      dirs.push_back(std::cos(phi));
      dirs.push_back(std::sin(phi));
      dir_w.push_back(2.0 * std::numbers::pi / nphi);
    }
    std::vector<double> psi, psi_w;
    detail::composite_gl(0.0, std::numbers::pi, panels, npp, psi, psi_w);
    for (int dim = 3; dim <= d; ++dim) {
      // lift S^{dim-2} to S^{dim-1}: theta = (cos psi, sin psi * theta')
      std::vector<double> nd;
      std::vector<double> nw;
      const int prev = dim - 1;
      for (std::size_t a = 0; a < psi.size(); ++a) {
        const double c = std::cos(psi[a]);
        const double s = std::sin(psi[a]);
        const double jw = psi_w[a] * std::pow(s, dim - 2);
        for (std::size_t k = 0; k < dir_w.size(); ++k) {
          nd.push_back(c);
          for (int i = 0; i < prev; ++i) nd.push_back(s * dirs[k * prev + i]);
          nw.push_back(jw * dir_w[k]);
        }
      }
      dirs = std::move(nd);
      dir_w = std::move(nw);
    }
  }
  std::vector<double> r, rw;
  detail::composite_gl(0.0, 1.0, panels, npp, r, rw);
  for (std::size_t a = 0; a < r.size(); ++a) {
    const double radial = rw[a] * std::pow(r[a], d - 1) * std::pow(1.0 - r[a] * r[a], q);
    for (std::size_t k = 0; k < dir_w.size(); ++k) {
      for (int i = 0; i < d; ++i) rule.nodes.push_back(r[a] * dirs[k * d + i]);
      rule.weights.push_back(radial * dir_w[k]);
    }
  }
  return rule;
}

inline const BallRule& cached_ball_rule(int d, int q, int panels, int npp) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int, int>, BallRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_tuple(d, q, panels, npp);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, make_ball_rule(d, q, panels, npp)).first;
  return it->second;
}

// ---------------------------------------------------------------------------
// Slice geometry

/// An affine slice of R^M: coordinates are grouped into consecutive blocks,
/// and block j is constrained to sum to a target v_j. Carries an orthonormal
/// basis of the direction space (Helmert vectors per block) and the factor
/// converting orthonormal volume into the drop-last-coordinate measure.
struct SliceGeometry {
  int M = 0;
  std::vector<int> blocks;
  std::vector<int> offsets;
  int dim = 0;
  std::vector<double> basis;  // dim rows of length M
  double jacobian = 1.0;

  explicit SliceGeometry(std::vector<int> block_sizes) : blocks(std::move(block_sizes)) {
    for (int b : blocks) {
      if (b < 1) throw std::invalid_argument("SliceGeometry: empty block");
      offsets.push_back(M);
      M += b;
      dim += b - 1;
      jacobian /= std::sqrt(static_cast<double>(b));
    }
    basis.assign(static_cast<std::size_t>(dim) * M, 0.0);
    int row = 0;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      for (int k = 1; k < blocks[j]; ++k, ++row) {
        const double norm = 1.0 / std::sqrt(static_cast<double>(k) * (k + 1));
        for (int i = 0; i < k; ++i) basis[row * M + offsets[j] + i] = norm;
        basis[row * M + offsets[j] + k] = -k * norm;
      }
    }
  }
};

/// Visits the quadrature nodes of the integral over the slice of
/// ell(w - c; xi) h(w). The visitor receives (w, weight) where weight already
/// includes the bump factor, so the integral is sum weight * h(w). Returns
/// false when the bump misses the slice.
template <typename Visitor>
bool visit_bump_slice(const SliceGeometry& g, std::span<const double> targets, std::span<const double> center,
                      double xi, const BallRule& rule, Visitor&& visit) {
  if (rule.d != g.dim) throw std::logic_error("visit_bump_slice: rule dimension mismatch");
  std::vector<double> p(static_cast<std::size_t>(g.M));
  double dist2 = 0.0;
  for (std::size_t j = 0; j < g.blocks.size(); ++j) {
    double s = 0.0;
    for (int i = 0; i < g.blocks[j]; ++i) s += center[g.offsets[j] + i];
    const double gap = targets[j] - s;
    dist2 += gap * gap / g.blocks[j];
    for (int i = 0; i < g.blocks[j]; ++i) p[g.offsets[j] + i] = center[g.offsets[j] + i] + gap / g.blocks[j];
  }
  const double R2 = xi * xi - dist2;
  if (R2 <= 0) return false;
  const double R = std::sqrt(R2);
  const double ratio = R2 / (xi * xi);
  const double scale = g.jacobian * ratio * ratio * std::pow(R, g.dim);
  std::vector<double> w(static_cast<std::size_t>(g.M));
  for (std::size_t n = 0; n < rule.size(); ++n) {
    w = p;
    const double* t = rule.nodes.data() + n * g.dim;
    for (int k = 0; k < g.dim; ++k) {
      const double c = R * t[k];
      const double* row = g.basis.data() + static_cast<std::size_t>(k) * g.M;
      for (int i = 0; i < g.M; ++i) w[i] += c * row[i];
    }
    visit(std::span<const double>(w), scale * rule.weights[n]);
  }
  return true;
}

/// Exact integral over the slice {sum v = 0} of ell(v; xi) in the measure
/// that drops the last coordinate: |S^{M-2}| * 8 / ((M-1)(M+1)(M+3)) * xi^{M-1} / sqrt(M).
inline double bump_hyperplane_integral(int M, double xi) {
  const int d = M - 1;
  const double ball = (d == 0) ? 1.0 : BallRule::sphere_area(d) * 8.0 / (d * (d + 2.0) * (d + 4.0));
  return ball * std::pow(xi, d) / std::sqrt(static_cast<double>(M));
}

struct QuadResult {
  double value = 0.0;
  double error = 0.0;  // |last level - previous level|
  double floor = 0.0;  // round-off floor: 64 eps * sum |weight * integrand|
  std::vector<double> history;

  bool converged(double rel_tol) const { return error <= std::max(rel_tol * std::abs(value), floor); }
};

/// True when every refinement step either shrank the change by at least
/// `factor` or the change was already at the round-off floor.
inline bool refinement_order_ok(const std::vector<double>& history, double floor, double factor = 4.0) {
  for (std::size_t i = 2; i < history.size(); ++i) {
    const double prev = std::abs(history[i - 1] - history[i - 2]);
    const double cur = std::abs(history[i] - history[i - 1]);
    if (prev <= floor) continue;
    if (cur > prev / factor && cur > floor) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Argument layout for f_alpha

/// Class i of a normalized log-size v, i.e. v in J_i = [i(1/M - delta), i(1/M + delta)];
/// 0 if v lies in no J_i.
inline int size_class(double v, int M, double delta) {
  for (int i = 1; i <= M; ++i) {
    if (v >= i * (1.0 / M - delta) && v <= i * (1.0 / M + delta)) return i;
  }
  return 0;
}

struct ArgumentLayout {
  bool valid = false;
  std::vector<int> order;   // argument indices sorted by class (stable)
  std::vector<int> blocks;  // classes in that order
};

inline ArgumentLayout layout_from_classes(const std::vector<int>& classes) {
  ArgumentLayout L;
  L.order.resize(classes.size());
  std::iota(L.order.begin(), L.order.end(), 0);
  std::stable_sort(L.order.begin(), L.order.end(), [&](int a, int b) { return classes[a] < classes[b]; });
  for (int i : L.order) L.blocks.push_back(classes[i]);
  L.valid = std::all_of(classes.begin(), classes.end(), [](int c) { return c > 0; });
  return L;
}

/// Layout of the arguments of f_alpha; invalid when some argument lies in no
/// J_i or the classes do not form alpha.
inline ArgumentLayout classify_arguments(std::span<const double> v, const Partition& alpha, int M, double delta) {
  std::vector<int> classes;
  for (double x : v) classes.push_back(size_class(x, M, delta));
  ArgumentLayout L = layout_from_classes(classes);
  if (L.valid) L.valid = (Partition(L.blocks) == alpha);
  return L;
}

// ---------------------------------------------------------------------------
// f_alpha

namespace detail {

// Integral over the slice of ell(w - c_b) * cofactor(w) / prod w for the
// selected bumps (all when bump < 0), at one panel count. Returns
// (value, sum |terms|).
inline std::pair<double, double> slice_sum(const TestFunctionSpec& spec, const SliceGeometry& g,
                                           std::span<const double> targets, int bump_index, int panels, int npp) {
  const BallRule& rule = cached_ball_rule(g.dim, 2, panels, npp);
  NeumaierSum total;
  double abs_sum = 0.0;
  for (std::size_t b = 0; b < spec.bumps.size(); ++b) {
    if (bump_index >= 0 && static_cast<int>(b) != bump_index) continue;
    const double coef = spec.bumps[b].coef;
    NeumaierSum part;
    visit_bump_slice(g, targets, spec.bumps[b].center, spec.xi, rule, [&](std::span<const double> w, double wt) {
      const double term = wt * spec.reciprocal_cofactor(w);
      part.add(term);
      abs_sum += std::abs(coef * term);
    });
    total.add(coef * part.value());
  }
  return {total.value(), abs_sum};
}

}  // namespace detail

/// f_alpha(v) = e_alpha v_1...v_r * integral of f_{1_M}(w)/prod w over the w
/// with block sums v_j (block sizes = the classes of the v_j). Zero when the
/// arguments do not sit in the class regions of alpha. With bump_index >= 0
/// only that bump's contribution is returned.
inline QuadResult f_alpha(std::span<const double> v, const Partition& alpha, const TestFunctionSpec& spec,
                          const CoefficientTable& table, const QuadratureConfig& quad, int bump_index = -1) {
  if (alpha.sum() != spec.M) throw std::invalid_argument("f_alpha: alpha must be a partition of M");
  if (static_cast<int>(v.size()) != alpha.size()) throw std::invalid_argument("f_alpha: argument count mismatch");
  double sum = 0.0;
  for (double x : v) sum += x;
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("f_alpha: arguments must sum to 1");
  QuadResult res;
  const ArgumentLayout L = classify_arguments(v, alpha, spec.M, spec.delta);
  if (!L.valid) {
    res.history = {0.0};
    return res;
  }
  std::vector<double> targets;
  for (int i : L.order) targets.push_back(v[i]);
  if (alpha == Partition::ones(spec.M)) {
    if (bump_index < 0) {
      res.value = f_one_M(targets, spec);
    } else {
      std::vector<double> diff(targets.size());
      for (std::size_t i = 0; i < targets.size(); ++i) diff[i] = targets[i] - spec.bumps[bump_index].center[i];
      res.value = spec.bumps[bump_index].coef * bump(diff, spec.xi);
      if (spec.product_cofactor) {
        for (double x : targets) res.value *= x;
      }
    }
    res.history = {res.value};
    return res;
  }
  double prefactor = table.e_double(alpha);
  for (double x : v) prefactor *= x;
  const SliceGeometry g(L.blocks);
  for (int level = 0; level < std::max(1, quad.levels); ++level) {
    const auto [val, abs_sum] =
        detail::slice_sum(spec, g, targets, bump_index, quad.subdivisions << level, quad.nodes_per_panel);
    res.history.push_back(prefactor * val);
    res.floor = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(prefactor) * abs_sum;
  }
  res.value = res.history.back();
  if (res.history.size() >= 2) res.error = std::abs(res.history.back() - res.history[res.history.size() - 2]);
  if (!res.converged(quad.rel_tol)) {
    throw QuadratureError("f_alpha: refinement did not reach the tolerance for alpha=" + alpha.str());
  }
  return res;
}

// ---------------------------------------------------------------------------
// Moments

struct MomentSet {
  int M = 0;
  double delta = 0.0;
  Variant variant = Variant::theorem1;
  std::uint64_t spec_hash = 0;
  std::vector<double> Z;  // index k = 0..k_max
  std::vector<double> Z_error;
  std::vector<double> Z_floor;
  std::vector<std::vector<double>> Z_history;  // [k][level]
  double J = 0.0;         // quadrature
  double J_error = 0.0;
  double J_exact = 0.0;   // closed form
};

/// Z_k = integral over U_M of u_1^k f_{1_M}(u) / (u_1...u_M), k = 0..k_max,
/// and J = integral over sum v = 0 of ell(v; xi).
inline MomentSet moments(const TestFunctionSpec& spec, const QuadratureConfig& quad, int k_max) {
  if (k_max < 0) throw std::invalid_argument("moments: k_max must be >= 0");
  MomentSet ms;
  ms.M = spec.M;
  ms.delta = spec.delta;
  ms.variant = spec.variant;
  ms.spec_hash = spec.hash();
  const std::size_t K = static_cast<std::size_t>(k_max) + 1;
  ms.Z.assign(K, 0.0);
  ms.Z_error.assign(K, 0.0);
  ms.Z_floor.assign(K, 0.0);
  ms.Z_history.assign(K, {});
  const SliceGeometry g({spec.M});
  const std::vector<double> one{1.0}, zero{0.0};
  const std::vector<double> origin(static_cast<std::size_t>(spec.M), 0.0);
  std::vector<double> J_hist;
  const int levels = std::max(1, quad.levels);
  for (int level = 0; level < levels; ++level) {
    const BallRule& rule = cached_ball_rule(g.dim, 2, quad.subdivisions << level, quad.nodes_per_panel);
    std::vector<NeumaierSum> acc(K);
    std::vector<double> abs_acc(K, 0.0);
    for (const auto& b : spec.bumps) {
      std::vector<NeumaierSum> part(K);
      visit_bump_slice(g, one, b.center, spec.xi, rule, [&](std::span<const double> w, double wt) {
        double t = wt * spec.reciprocal_cofactor(w);
        for (std::size_t k = 0; k < K; ++k) {
          part[k].add(t);
          abs_acc[k] += std::abs(b.coef * t);
          t *= w[0];
        }
      });
      for (std::size_t k = 0; k < K; ++k) acc[k].add(b.coef * part[k].value());
    }
    for (std::size_t k = 0; k < K; ++k) {
      ms.Z_history[k].push_back(acc[k].value());
      ms.Z_floor[k] = 64.0 * std::numeric_limits<double>::epsilon() * abs_acc[k];
    }
    NeumaierSum jsum;
    visit_bump_slice(g, zero, origin, spec.xi, rule, [&](std::span<const double>, double wt) { jsum.add(wt); });
    J_hist.push_back(jsum.value());
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto& h = ms.Z_history[k];
    ms.Z[k] = h.back();
    ms.Z_error[k] = h.size() >= 2 ? std::abs(h.back() - h[h.size() - 2]) : 0.0;
  }
  ms.J = J_hist.back();
  ms.J_error = J_hist.size() >= 2 ? std::abs(J_hist.back() - J_hist[J_hist.size() - 2]) : 0.0;
  ms.J_exact = bump_hyperplane_integral(spec.M, spec.xi);
  return ms;
}

// ---------------------------------------------------------------------------
// Lower bound for -Z_k (theorem2 shape)

struct ZkBoundRow {
  int k = 0;
  double minus_Zk = 0.0;
  double bound = 0.0;          // (J/(2M^{k-1})) k (1+lambda)^{k-1} (delta^2/(8M^2) - C delta^3/M)
  double second_difference = 0.0;  // (J/(2M^{k-1})) [(1+eps-lambda)^k - 2(1+lambda)^k + (1-eps-lambda)^k]
  bool holds = false;
  double ratio_next = 0.0;     // (-Z_{k+1} M) / (-Z_k)
};

struct ZkBoundReport {
  int M = 0;
  double delta = 0.0;
  double eps = 0.0;     // delta / (2M)
  double lambda = 0.0;  // delta^3 / M
  double C = 0.0;       // smallest C >= 0 for which every row holds
  double J = 0.0;
  double leading_Z2 = 0.0;  // J delta^2 / (8 M^3)
  std::vector<ZkBoundRow> rows;
};

inline ZkBoundReport zk_lower_bound_check(int M, double delta, const QuadratureConfig& quad, int k_max = 6) {
  if (M % 2 != 0) throw std::invalid_argument("zk_lower_bound_check: M must be even");
  if (delta > 1.0 / (3.0 * M * M)) throw std::invalid_argument("zk_lower_bound_check: need delta <= 1/(3M^2)");
  if (k_max < 3) throw std::invalid_argument("zk_lower_bound_check: k_max must be >= 3");
  const auto spec = make_theorem2_spec(M, delta);
  const auto ms = moments(spec, quad, k_max);
  ZkBoundReport r;
  r.M = M;
  r.delta = delta;
  r.eps = delta / (2.0 * M);
  r.lambda = delta * delta * delta / M;
  r.J = ms.J;
  r.leading_Z2 = ms.J * delta * delta / (8.0 * M * M * M);
  // C needed so that -Z_k >= A_k (delta^2/(8M^2) - C delta^3/M)
  for (int k = 2; k <= k_max; ++k) {
    const double A = ms.J / (2.0 * std::pow(M, k - 1)) * k * std::pow(1.0 + r.lambda, k - 1);
    const double need = (delta * delta / (8.0 * M * M) - (-ms.Z[k]) / A) / (delta * delta * delta / M);
    r.C = std::max(r.C, need);
  }
  for (int k = 2; k <= k_max; ++k) {
    ZkBoundRow row;
    row.k = k;
    row.minus_Zk = -ms.Z[k];
    const double A = ms.J / (2.0 * std::pow(M, k - 1));
    row.bound = A * k * std::pow(1.0 + r.lambda, k - 1) *
                (delta * delta / (8.0 * M * M) - r.C * delta * delta * delta / M);
    row.second_difference = A * (std::pow(1 + r.eps - r.lambda, k) - 2 * std::pow(1 + r.lambda, k) +
                                 std::pow(1 - r.eps - r.lambda, k));
    row.holds = row.minus_Zk > 0 && row.minus_Zk >= row.bound;
    if (k < k_max) row.ratio_next = (-ms.Z[k + 1] * M) / (-ms.Z[k]);
    r.rows.push_back(row);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Identity check: for beta in Q and v in J_beta,
//   sum_{mu in P(M - sum beta)} 1/|mu|! * int_{u in V_|mu|(1 - sum v)} f_{beta+mu}(v, u) / (u_1...u_|mu|)
// vanishes.

struct IdentityTerm {
  Partition mu;
  double value = 0.0;
};

struct IdentityResidual {
  Partition beta;
  std::vector<double> v;
  std::vector<IdentityTerm> terms;     // finest level
  double sum = 0.0;
  double max_term = 0.0;
  double normalized = 0.0;             // |sum| / max |term|
  std::vector<double> normalized_history;
  std::vector<double> sum_history;
  double floor = 0.0;                  // normalized round-off floor
};

namespace detail {

// distinct orderings of the parts of mu
inline std::vector<std::vector<int>> distinct_orderings(const Partition& mu) {
  std::vector<std::vector<int>> out;
  std::vector<int> p = mu.parts();
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

// One mu-term of the identity at one refinement level. Returns (value, sum |pieces|).
inline std::pair<double, double> identity_term(const TestFunctionSpec& spec, const CoefficientTable& table,
                                               const Partition& beta, std::span<const double> v,
                                               const Partition& mu, int panels, int npp) {
  const int s = beta.size();
  const int t = mu.size();
  double A = 1.0;
  for (double x : v) A -= x;
  const Partition alpha = beta + mu;
  QuadratureConfig inner;
  inner.subdivisions = panels;
  inner.nodes_per_panel = npp;
  inner.levels = 1;
  inner.rel_tol = std::numeric_limits<double>::infinity();

  NeumaierSum total;
  double abs_sum = 0.0;
  std::vector<double> args(static_cast<std::size_t>(s + t));
  for (int j = 0; j < s; ++j) args[j] = v[j];

  if (t == 1) {
    args[s] = A;
    const double f = f_alpha(args, alpha, spec, table, inner).value;
    total.add(f / A);
    abs_sum += std::abs(f / A);
    return {total.value(), abs_sum};
  }

  const BallRule& outer = cached_ball_rule(t - 1, 0, panels, npp);
  for (const auto& rho : distinct_orderings(mu)) {
    std::vector<int> classes(beta.parts());
    classes.insert(classes.end(), rho.begin(), rho.end());
    const ArgumentLayout L = layout_from_classes(classes);
    // block offset in R^M of each argument
    std::vector<int> block_offset(classes.size());
    int off = 0;
    for (int idx : L.order) {
      block_offset[idx] = off;
      off += classes[idx];
    }
    for (std::size_t b = 0; b < spec.bumps.size(); ++b) {
      const auto& c = spec.bumps[b].center;
      auto block_sum = [&](int idx) {
        double acc = 0.0;
        for (int i = 0; i < classes[idx]; ++i) acc += c[block_offset[idx] + i];
        return acc;
      };
      double Rv2 = spec.xi * spec.xi;
      for (int j = 0; j < s; ++j) {
        const double gap = v[j] - block_sum(j);
        Rv2 -= gap * gap / classes[j];
      }
      if (Rv2 <= 0) continue;
      // support of this bump in u: sum (u_j - S_j)^2 / rho_j < Rv2 on sum u = A
      std::vector<double> S(static_cast<std::size_t>(t)), sq(static_cast<std::size_t>(t));
      double sumS = 0.0, sumRho = 0.0;
      for (int j = 0; j < t; ++j) {
        S[j] = block_sum(s + j);
        sumS += S[j];
        sumRho += rho[j];
        sq[j] = std::sqrt(static_cast<double>(rho[j]));
      }
      const double lam = (A - sumS) / sumRho;
      const double R2 = Rv2 - lam * lam * sumRho;
      if (R2 <= 0) continue;
      const double R = std::sqrt(R2);
      Eigen::VectorXd a(t);
      for (int j = 0; j < t; ++j) a[j] = sq[j];
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
      const Eigen::MatrixXd Qfull = qr.householderQ() * Eigen::MatrixXd::Identity(t, t);
      const Eigen::MatrixXd Q = Qfull.rightCols(t - 1);
      const Eigen::MatrixXd DQ = a.asDiagonal() * Q;
      const double jac = std::pow(R, t - 1) * std::sqrt((DQ.transpose() * DQ).determinant()) /
                         std::sqrt(static_cast<double>(t));
      NeumaierSum part;
      for (std::size_t n = 0; n < outer.size(); ++n) {
        Eigen::VectorXd sv(t - 1);
        for (int k = 0; k < t - 1; ++k) sv[k] = outer.nodes[n * (t - 1) + k];
        const Eigen::VectorXd du = DQ * (R * sv);
        double prod_u = 1.0;
        for (int j = 0; j < t; ++j) {
          args[s + j] = S[j] + lam * rho[j] + du[j];
          prod_u *= args[s + j];
        }
        const double f = f_alpha(args, alpha, spec, table, inner, static_cast<int>(b)).value;
        const double term = outer.weights[n] * jac * f / prod_u;
        part.add(term);
        abs_sum += std::abs(term);
      }
      total.add(part.value());
    }
  }
  return {total.value(), abs_sum};
}

}  // namespace detail

inline IdentityResidual verify_main_identity(const TestFunctionSpec& spec, const Partition& beta,
                                             std::span<const double> v, const CoefficientTable& table,
                                             const QuadratureConfig& quad) {
  if (beta.sum() > spec.M - 2) {
    throw std::invalid_argument("verify_main_identity: beta=" + beta.str() + " is not in Q");
  }
  if (static_cast<int>(v.size()) != beta.size()) throw std::invalid_argument("verify_main_identity: |v| != |beta|");
  double sv = 0.0;
  for (int j = 0; j < beta.size(); ++j) {
    const double lo = beta[j] * (1.0 / spec.M - spec.delta), hi = beta[j] * (1.0 / spec.M + spec.delta);
    if (v[j] < lo || v[j] > hi) throw std::invalid_argument("verify_main_identity: v_j outside J_{beta_j}");
    sv += v[j];
  }
  if (sv >= 1.0) throw std::invalid_argument("verify_main_identity: sum v must be < 1");

  IdentityResidual res;
  res.beta = beta;
  res.v.assign(v.begin(), v.end());
  const auto mus = enumerate_partitions(spec.M - beta.sum());
  for (int level = 0; level < std::max(1, quad.levels); ++level) {
    const int panels = quad.subdivisions << level;
    std::vector<IdentityTerm> terms;
    NeumaierSum total;
    double max_term = 0.0, abs_pieces = 0.0;
    for (const auto& mu : mus) {
      auto [val, abs_sum] = detail::identity_term(spec, table, beta, v, mu, panels, quad.nodes_per_panel);
      const double term = val / boost::math::factorial<double>(static_cast<unsigned>(mu.size()));
      terms.push_back({mu, term});
      total.add(term);
      max_term = std::max(max_term, std::abs(term));
      abs_pieces += abs_sum / boost::math::factorial<double>(static_cast<unsigned>(mu.size()));
    }
    res.terms = std::move(terms);
    res.sum = total.value();
    res.max_term = max_term;
    res.normalized = max_term > 0 ? std::abs(res.sum) / max_term : 0.0;
    res.floor = max_term > 0 ? 64.0 * std::numeric_limits<double>::epsilon() * abs_pieces / max_term : 0.0;
    res.normalized_history.push_back(res.normalized);
    res.sum_history.push_back(res.sum);
  }
  return res;
}

/// Deterministic sample points for the identity check: the class centers
/// first, then uniform draws from the middle 80% of each J_{beta_j}.
inline std::vector<std::vector<double>> identity_sample_points(const Partition& beta, int M, double delta, int count,
                                                               std::uint64_t seed) {
  std::vector<std::vector<double>> out;
  if (beta.empty()) {
    out.emplace_back();
    return out;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int n = 0; n < count; ++n) {
    std::vector<double> v;
    for (int b : beta.parts()) v.push_back(b * (1.0 / M + (n == 0 ? 0.0 : u(rng) * delta)));
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Independent oracle: midpoint tensor grid in the free coordinates

/// Integral over the slice {block sums = targets} of g(w) in the
/// drop-last-coordinate measure, by the midpoint rule on an n^dim grid over
/// the box [lo, hi] in each free coordinate. Points whose dependent
/// coordinates fall outside [lo, hi] contribute g as evaluated; the caller
/// chooses a box containing the support of g.
template <typename G>
double grid_slice_integral(const std::vector<int>& blocks, std::span<const double> targets, double lo, double hi,
                           int n, G&& g) {
  const SliceGeometry geom(blocks);
  const int dim = geom.dim;
  const double h = (hi - lo) / n;
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  std::vector<double> w(static_cast<std::size_t>(geom.M));
  NeumaierSum acc;
  const double cell = std::pow(h, dim);
  while (true) {
    int k = 0;
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      double s = 0.0;
      for (int i = 0; i + 1 < blocks[j]; ++i, ++k) {
        w[geom.offsets[j] + i] = lo + (idx[k] + 0.5) * h;
        s += w[geom.offsets[j] + i];
      }
      w[geom.offsets[j] + blocks[j] - 1] = targets[j] - s;
    }
    acc.add(g(std::span<const double>(w)));
    int pos = 0;
    while (pos < dim && ++idx[pos] == n) idx[pos++] = 0;
    if (pos == dim) break;
  }
  return acc.value() * cell;
}

// ---------------------------------------------------------------------------
// Memoized f_alpha evaluation for slab building

/// Evaluates f_alpha at normalized log-vectors. In interpolating mode the
/// values are taken from a grid of step `grid_step` in the free coordinates
/// (all but the last, after sorting into class order) by multilinear
/// interpolation between exactly evaluated corners. Interpolation is
/// switched off automatically when the bump radius is within 20 grid steps,
/// where the grid would not resolve the bumps.
class FAlphaEvaluator {
 public:
  FAlphaEvaluator(TestFunctionSpec spec, CoefficientTable table, QuadratureConfig quad, bool exact,
                  double grid_step = 1e-3)
      : spec_(std::move(spec)), table_(std::move(table)), quad_(quad), step_(grid_step) {
    interpolate_ = !exact && spec_.xi >= 20.0 * step_;
  }

  bool interpolating() const noexcept { return interpolate_; }
  const TestFunctionSpec& spec() const noexcept { return spec_; }
  const CoefficientTable& table() const noexcept { return table_; }
  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

  double operator()(std::span<const double> v, const Partition& alpha) {
    if (alpha == Partition::ones(spec_.M)) return f_alpha(v, alpha, spec_, table_, quad_).value;
    const ArgumentLayout L = classify_arguments(v, alpha, spec_.M, spec_.delta);
    if (!L.valid) return 0.0;
    std::vector<double> sorted;
    for (int i : L.order) sorted.push_back(v[i]);
    if (!interpolate_ || sorted.size() == 1) return exact_sorted(sorted, alpha);
    const int free = static_cast<int>(sorted.size()) - 1;
    std::vector<long long> base(static_cast<std::size_t>(free));
    std::vector<double> frac(static_cast<std::size_t>(free));
    for (int i = 0; i < free; ++i) {
      const double g = sorted[i] / step_;
      base[i] = static_cast<long long>(std::floor(g));
      frac[i] = g - static_cast<double>(base[i]);
    }
    double acc = 0.0;
    std::vector<double> corner(sorted.size());
    for (int mask = 0; mask < (1 << free); ++mask) {
      double weight = 1.0;
      double s = 0.0;
      for (int i = 0; i < free; ++i) {
        const bool up = mask >> i & 1;
        weight *= up ? frac[i] : 1.0 - frac[i];
        corner[i] = static_cast<double>(base[i] + (up ? 1 : 0)) * step_;
        s += corner[i];
      }
      if (weight == 0.0) continue;
      corner[free] = 1.0 - s;
      acc += weight * exact_sorted(corner, alpha);
    }
    return acc;
  }

 private:
  double exact_sorted(const std::vector<double>& sorted, const Partition& alpha) {
    std::string key = alpha.str();
    for (double x : sorted) {
      key += ':';
      key += std::to_string(std::bit_cast<std::uint64_t>(x));
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    const double val = f_alpha(sorted, alpha, spec_, table_, quad_).value;
    std::lock_guard<std::mutex> lock(mu_);
    cache_[key] = val;  // identical keys always carry identical values
    return val;
  }

  TestFunctionSpec spec_;
  CoefficientTable table_;
  QuadratureConfig quad_;
  double step_;
  bool interpolate_ = true;
  mutable std::mutex mu_;
  std::unordered_map<std::string, double> cache_;
};

}  // namespace sievebias
