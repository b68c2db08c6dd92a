// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any
// fails. Tolerances are fixed here and never adjusted to the outcome.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>

#include "sievebias/sievebias.hpp"

using namespace sievebias;

namespace {

int failures = 0;

void report(const std::string& id, bool ok, const std::string& what) {
  std::printf("%s %-3s %s\n", ok ? "PASS" : "FAIL", id.c_str(), what.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

bool prime_by_trial(u64 n) {
  if (n < 2) return false;
  for (u64 d = 2; d * d <= n; ++d) {
    if (n % d == 0) return false;
  }
  return true;
}

// Every step shrinks by `factor` unless the previous value is already at the floor.
bool decreasing_by(const std::vector<double>& h, double floor, double factor) {
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h[i - 1] <= floor) continue;
    if (h[i] > h[i - 1] / factor && h[i] > floor) return false;
  }
  return true;
}

WindowConfig thm1_window(u64 x, int sigma) {
  WindowConfig c;
  c.x = x;
  c.y = x / 100;
  c.M = 3;
  c.delta = 1.0 / 27;
  c.varpi = 0.46;
  c.nu = 0.51;
  c.sigma = sigma;
  return c;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  bool gamma = gamma_m(1) == -1;
  for (int m = 2; m <= 20; ++m) gamma &= gamma_m(m) == 0;
  bool w = true;
  for (int M = 1; M <= 10; ++M) {
    for (int N = 0; N <= M; ++N) w &= w_coefficient(M, N) == (N == 0 ? 1 : N == 1 ? -1 : 0);
  }
  bool sys = true;
  std::size_t rows = 0;
  for (int M = 2; M <= 10; ++M) {
    for (const auto& r : verify_coefficient_system(M)) {
      sys &= r.residual == 0;
      ++rows;
    }
  }
  const auto mult = verify_e_multiplicativity(12);
  const double t = seconds_since(t0);
  report("1a", gamma, "gamma_1 = -1 and gamma_m = 0 for 2 <= m <= 20 (exact)");
  report("1b", w, "W(M,0) = 1, W(M,1) = -1, W(M,N) = 0 for 2 <= N <= M, M <= 10 (exact)");
  report("1c", sys, fmt("coefficient system residuals exactly 0 for all beta in Q, M <= 10 (%zu rows)", rows));
  report("1d", mult.failures.empty(), fmt("e multiplicative for sum <= 12 (%zu pairs)", mult.pairs_checked));
  report("1e", t < 5.0, fmt("exact identities in %.2f s < 5 s", t));
}

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  QuadratureConfig q;
  q.subdivisions = 1;
  q.levels = 4;
  const auto ms = moments(spec, q, 1);
  const double rel = std::abs(ms.Z[1] - ms.Z[0] / 3) / std::abs(ms.Z[0]);
  const double t = seconds_since(t0);
  report("2a", rel <= 1e-6, fmt("Z_1 = Z_0/3: relative gap %.3e <= 1e-6 (Z_0 = %.12g)", rel, ms.Z[0]));
  // the production rule is at round-off from the first level, so the order
  // is measured on a two-node rule where the changes stay above the floor
  QuadratureConfig coarse;
  coarse.subdivisions = 1;
  coarse.nodes_per_panel = 2;
  coarse.levels = 5;
  const auto mc = moments(spec, coarse, 1);
  const auto& hist = mc.Z_history[0];
  double worst_order = 1e9;
  std::string h;
  for (std::size_t i = 2; i < hist.size(); ++i) {
    const double prev = std::abs(hist[i - 1] - hist[i - 2]);
    const double cur = std::abs(hist[i] - hist[i - 1]);
    worst_order = std::min(worst_order, std::log2(prev / cur));
    h += fmt(" %.2e", cur);
  }
  const bool order = worst_order >= 2.0 && refinement_order_ok(ms.Z_history[0], ms.Z_floor[0]) &&
                     refinement_order_ok(ms.Z_history[1], ms.Z_floor[1]);
  report("2b", order, fmt("refinement order %.2f >= 2 (two-node rule, changes of Z_0:", worst_order) + h +
                          "; production rule at round-off)");
  report("2c", t < 60.0, fmt("thm1 moments in %.2f s < 60 s", t));
}

void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  const int M = 4;
  const double delta = 1.0 / 4096;
  const auto ms = moments(make_theorem2_spec(M, delta), QuadratureConfig{}, 6);
  const double t = seconds_since(t0);
  report("3a", std::abs(ms.Z[0]) <= 1e-8 * ms.J, fmt("|Z_0| = %.3e <= 1e-8 J = %.3e", std::abs(ms.Z[0]), 1e-8 * ms.J));
  bool neg = true;
  std::string zs;
  for (int k = 2; k <= 6; ++k) {
    neg &= ms.Z[k] < 0;
    zs += fmt(" %.3e", ms.Z[k]);
  }
  report("3b", neg, "Z_k < 0 for k = 2..6:" + zs);
  const double lead = ms.J * delta * delta / (8.0 * M * M * M);
  const double ratio = -ms.Z[2] / lead;
  report("3c", ratio >= 0.25 && ratio <= 4.0,
         fmt("-Z_2 = %.4e vs J delta^2/(8M^3) = %.4e: ratio %.3f within [1/4, 4]", -ms.Z[2], lead, ratio));
  report("3d", t < 60.0, fmt("thm2 moments in %.2f s < 60 s", t));
}

void criterion4() {
  const auto spec = make_theorem1_spec(3, 1.0 / 27, 1);
  const auto table = make_coefficient_table(3);
  QuadratureConfig q;
  q.subdivisions = 1;
  q.levels = 3;
  double worst = 0.0;
  bool small = true, order = true;
  std::size_t count = 0;
  std::string bad, worst_hist;
  for (const auto& beta : index_set_q(3)) {
    for (const auto& v : identity_sample_points(beta, 3, spec.delta, 5, 1)) {
      const auto r = verify_main_identity(spec, beta, v, table, q);
      ++count;
      if (r.normalized >= worst) {
        worst_hist.clear();
        for (double h : r.normalized_history) worst_hist += fmt(" %.2e", h);
        worst_hist += fmt(", floor %.1e", r.floor);
      }
      worst = std::max(worst, r.normalized);
      small &= r.normalized <= 1e-3;
      if (!decreasing_by(r.normalized_history, r.floor, 4.0)) {
        order = false;
        bad += " " + beta.str();
      }
    }
  }
  report("4a", small, fmt("identity residuals: worst normalized %.3e <= 1e-3 over %zu points", worst, count));
  report("4b", order, "residuals shrink >= 4x per refinement level above the round-off floor (worst point:" + worst_hist +
                          ")" + (bad.empty() ? "" : " fails at" + bad));
}

void criterion5() {
  const QuadratureConfig q;
  const auto r1 = lemma2_check(1, lemma2_bump_spec(1), 100000000, 1000000, q);
  report("5a", r1.rel_error <= 0.05,
         fmt("r=1 at x=1e8, y=1e6: %.0f primes vs y/log x = %.1f, error %.4f <= 0.05", r1.sum, r1.prediction, r1.rel_error));
  const auto f2 = lemma2_bump_spec(2);
  const auto a = lemma2_check(2, f2, 10000000, 100000, q);
  const auto b = lemma2_check(2, f2, 100000000, 1000000, q);
  report("5b", b.rel_error <= 0.10, fmt("r=2 at x=1e8: sum %.2f vs %.2f, error %.4f <= 0.10", b.sum, b.prediction, b.rel_error));
  report("5c", b.rel_error < a.rel_error, fmt("r=2 error shrinks: %.4f at 1e7 -> %.4f at 1e8", a.rel_error, b.rel_error));
}

void criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  const QuadratureConfig q;
  const std::vector<u64> xs{1000000, 10000000, 100000000};
  bool in_range = true, unique = true, sign_all = true;
  std::string sign_detail, t_detail, close_detail, rem_detail;
  bool close = true, t_below = true, rem_ok = true;
  for (int sigma : {1, -1}) {
    const auto spec = make_theorem1_spec(3, 1.0 / 27, sigma);
    const auto ms = moments(spec, q, 2);
    for (u64 x : xs) {
      const auto cfg = thm1_window(x, sigma);
      const auto slab = assemble_slab(cfg, spec, q);
      const auto alphas = slab.alphas();
      const double L = std::log(static_cast<double>(cfg.scale()));
      std::set<u64> seen;
      for (const auto& e : slab.entries) {
        const double a = 1.0 + e.b;
        in_range &= a >= 0.0 && a <= 2.0;
        unique &= seen.insert(e.n).second;
        // factors are primes multiplying to n whose size classes form alpha
        u64 prod = 1;
        std::vector<int> cls;
        for (u64 p : e.factors) {
          unique &= prime_by_trial(p);
          prod *= p;
          cls.push_back(size_class(std::log(static_cast<double>(p)) / L, cfg.M, cfg.delta));
        }
        unique &= prod == e.n && Partition(cls) == alphas[e.alpha_index];
      }
      const auto rep = moment_scan(slab, 1, &ms);
      const auto& row = rep.rows[0];
      const bool same_sign = row.observed_bias * row.predicted_bias > 0;
      sign_all &= same_sign;
      sign_detail += fmt(" [s=%+d x=%.0e obs %.5f pred %.5f]", sigma, static_cast<double>(x), row.observed_bias,
                         row.predicted_bias);
      if (x == 100000000) {
        const double rel = std::abs(row.observed_bias - row.predicted_bias) / std::abs(row.predicted_bias);
        close &= rel <= 0.35;
        close_detail += fmt(" [s=%+d rel %.3f]", sigma, rel);

        auto [small, window] = sieve_class_tables(cfg);
        const auto P1 = build_prime_classes(cfg, small, window).of(1);
        const auto rem = remainder_scan(slab, P1.back());
        double worst = 0.0;
        for (u64 p : P1) worst = std::max(worst, rem.rows[p - 1].normalized);
        rem_ok &= worst <= 0.05 && rem.routes_agree;
        rem_detail += fmt(" [s=%+d |P_1|=%zu max %.5f]", sigma, P1.size(), worst);
      }
      if (row.predicted_bias < 0) {
        t_below &= row.T < 1.0;
        t_detail += fmt(" [x=%.0e T_1 %.5f]", static_cast<double>(x), row.T);
      }
    }
  }
  report("6a", in_range, "every a_n in [0, 2]");
  report("6b", unique, "class uniqueness: one alpha per n, factors prime with classes matching alpha");
  report("6c", sign_all, "k=1 observed bias has the predicted sign at every x:" + sign_detail);
  report("6c'", close, "k=1 observed bias within 35% of prediction at x=1e8:" + close_detail);
  report("6d", t_below, "T_1 < 1 where the predicted bias is negative:" + t_detail);
  report("6e", rem_ok, "d |r_d| / y <= 0.05 for d in P_1 at x=1e8:" + rem_detail);
  const double t = seconds_since(t0);
  report("6f", t < 1800.0, fmt("thm1 experiment in %.1f s < 1800 s", t));
}

void criterion7() {
  WindowConfig cfg;
  cfg.x = 100000000;
  cfg.y = 1000000;
  cfg.M = 4;
  cfg.delta = 1.0 / 48;
  cfg.varpi = 0.4;
  cfg.nu = 0.51;
  const auto spec = make_theorem2_spec(cfg.M, cfg.delta);
  const QuadratureConfig q;
  const auto ms = moments(spec, q, 3);
  const auto slab = assemble_slab(cfg, spec, q);
  const auto rep = moment_scan(slab, 2, &ms);
  const double L = std::log(static_cast<double>(cfg.x));
  const auto& k1 = rep.rows[0];
  const auto& k2 = rep.rows[1];
  report("7a", std::abs(k1.observed_bias) <= 0.05, fmt("|k=1 bias| = %.5f <= 0.05 (%zu entries)", std::abs(k1.observed_bias), slab.entries.size()));
  const double parity = std::abs(rep.parity.sum_mu) * L / static_cast<double>(cfg.y);
  report("7b", parity <= 0.05, fmt("|sum a_n mu(n)| log x / y = %.5f <= 0.05", parity));
  const double predicted = ((cfg.M + 1) % 2 == 0 ? 1.0 : -1.0) * ms.Z[2];
  report("7c", k2.observed_bias * predicted > 0,
         fmt("k=2 bias sign: observed %.5f (baseline %.5f + construction %.3e) vs predicted %.3e", k2.observed_bias,
             k2.baseline_drift, k2.construction_bias, predicted));
}

void criterion8() {
  const u64 N = 1000000;
  auto zero = selberg_sequence(0, N);
  for (auto& e : zero.entries) e.b = 0.0;
  const double psi = chebyshev_psi(N);
  const double s1 = moment_scan(zero, 1, nullptr).rows[0].S;
  report("8a", std::abs(s1 - psi) <= 1e-12 * psi, fmt("b = 0: S_1 = %.6f vs psi(1e6) = %.6f", s1, psi));
  const auto w = thm1_window(N, 1);
  const auto zs = assemble_slab(w, make_zero_spec(3, 1.0 / 27), QuadratureConfig{});
  const double ws = moment_scan(zs, 1, nullptr).rows[0].S;
  const double wpsi = chebyshev_psi(w.end()) - chebyshev_psi(w.x);
  report("8b", std::abs(ws - wpsi) <= 1e-9 * wpsi, fmt("zero-function window: S_1 = %.6f vs psi(x+y)-psi(x) = %.6f", ws, wpsi));
  const double sel = moment_scan(selberg_sequence(0, N), 1, nullptr).rows[0].S;
  report("8c", std::abs(sel) <= 10 * std::sqrt(static_cast<double>(N)),
         fmt("Selberg sequence: |S_1| = %.2f <= 10 sqrt(x) = %.0f", std::abs(sel), 10 * std::sqrt(static_cast<double>(N))));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, void (*)()>> all{{"1", criterion1}, {"2", criterion2}, {"3", criterion3},
                                                             {"4", criterion4}, {"5", criterion5}, {"6", criterion6},
                                                             {"7", criterion7}, {"8", criterion8}};
  for (const auto& [id, run] : all) {
    try {
      run();
    } catch (const std::exception& e) {
      report(id, false, std::string("aborted: ") + e.what());
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
