#pragma once

// Experiment configuration, JSON/CSV artifacts and the staged pipeline
// identities -> moments -> build -> verify -> report.
//
// Content artifacts carry the config hash and nothing time- or host-dependent,
// so a rerun reproduces them byte for byte; timestamps go to metadata.json.
// Stage results are cached under $SIEVEBIAS_CACHE_DIR (default
// <output_dir>/cache) keyed by a hash of exactly the inputs of that stage.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "sievebias/arith.hpp"
#include "sievebias/errors.hpp"
#include "sievebias/harness.hpp"
#include "sievebias/partition.hpp"
#include "sievebias/quadrature.hpp"
#include "sievebias/sequence.hpp"

namespace sievebias {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

// ---------------------------------------------------------------------------
// Configuration

struct TestFunctionConfig {
  Variant variant = Variant::theorem1;
  double xi = 0.0;  // custom only
  bool product_cofactor = false;
  std::vector<BumpTerm> bumps;

  bool operator==(const TestFunctionConfig& o) const {
    if (variant != o.variant || xi != o.xi || product_cofactor != o.product_cofactor) return false;
    if (bumps.size() != o.bumps.size()) return false;
    for (std::size_t i = 0; i < bumps.size(); ++i) {
      if (bumps[i].center != o.bumps[i].center || bumps[i].coef != o.bumps[i].coef) return false;
    }
    return true;
  }
};

struct VerifyConfig {
  int k_max = 2;         // S_k for k = 1..k_max
  int moment_k_max = 6;  // Z_k for k = 0..moment_k_max
  u64 d_max = 1000;
  double hooley_alpha = 0.3;
  int identity_samples = 5;
  bool numeric_identity = true;

  bool operator==(const VerifyConfig&) const = default;
};

inline const std::vector<std::string>& all_stages() {
  static const std::vector<std::string> s{"identities", "moments", "build", "verify", "report"};
  return s;
}

inline WindowConfig default_experiment_window() {
  WindowConfig w;
  w.x = 1000000;
  return w;
}

struct ExperimentConfig {
  WindowConfig window = default_experiment_window();  // y = 0: x * y_fraction
  std::vector<u64> x_levels;  // empty: the single window
  double y_fraction = 0.01;   // y = x * y_fraction for x_levels (and when window.y = 0)
  TestFunctionConfig test_function;
  QuadratureConfig quadrature;
  std::vector<std::string> stages = all_stages();
  VerifyConfig verify;
  std::string output_dir = "sievebias-out";
  int threads = 1;
  std::uint64_t seed = 1;
  bool exact = false;

  bool operator==(const ExperimentConfig& o) const {
    return window == o.window && x_levels == o.x_levels && y_fraction == o.y_fraction &&
           test_function == o.test_function && quadrature.subdivisions == o.quadrature.subdivisions &&
           quadrature.nodes_per_panel == o.quadrature.nodes_per_panel && quadrature.levels == o.quadrature.levels &&
           quadrature.rel_tol == o.quadrature.rel_tol && stages == o.stages && verify == o.verify &&
           output_dir == o.output_dir && threads == o.threads && seed == o.seed && exact == o.exact;
  }

  bool has_stage(const std::string& s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

  // The windows this run builds, one per x level.
  std::vector<WindowConfig> windows() const {
    std::vector<WindowConfig> out;
    auto with_x = [&](u64 x, u64 y) {
      WindowConfig w = window;
      w.x = x;
      w.y = y ? y : static_cast<u64>(std::llround(static_cast<double>(x) * y_fraction));
      return w;
    };
    if (x_levels.empty()) {
      out.push_back(with_x(window.x, window.y));
    } else {
      for (u64 x : x_levels) out.push_back(with_x(x, 0));
    }
    return out;
  }
};

inline Json to_json(const QuadratureConfig& q) {
  return Json{{"subdivisions", q.subdivisions},
              {"nodes_per_panel", q.nodes_per_panel},
              {"levels", q.levels},
              {"rel_tol", q.rel_tol}};
}

inline Json to_json(const WindowConfig& w) {
  return Json{{"x", w.x},           {"y", w.y},         {"anchor", w.anchor}, {"M", w.M},
              {"delta", w.delta},   {"varpi", w.varpi}, {"nu", w.nu},         {"c1", w.c1},
              {"mode", to_string(w.mode)}, {"sigma", w.sigma}, {"schedule", to_string(w.schedule)}};
}

inline Json to_json(const ExperimentConfig& c) {
  Json bumps = Json::array();
  for (const auto& b : c.test_function.bumps) bumps.push_back(Json{{"center", b.center}, {"coef", b.coef}});
  return Json{{"window", to_json(c.window)},
              {"x_levels", c.x_levels},
              {"y_fraction", c.y_fraction},
              {"test_function",
               Json{{"variant", to_string(c.test_function.variant)},
                    {"xi", c.test_function.xi},
                    {"product_cofactor", c.test_function.product_cofactor},
                    {"bumps", bumps}}},
              {"quadrature", to_json(c.quadrature)},
              {"stages", c.stages},
              {"verify",
               Json{{"k_max", c.verify.k_max},
                    {"moment_k_max", c.verify.moment_k_max},
                    {"d_max", c.verify.d_max},
                    {"hooley_alpha", c.verify.hooley_alpha},
                    {"identity_samples", c.verify.identity_samples},
                    {"numeric_identity", c.verify.numeric_identity}}},
              {"output_dir", c.output_dir},
              {"threads", c.threads},
              {"seed", c.seed},
              {"exact", c.exact}};
}

namespace detail {

// Reads one JSON object against a fixed key set, collecting every problem.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path, std::vector<std::string>& bad, std::set<std::string> allowed)
      : j_(j), path_(std::move(path)), bad_(bad) {
    if (!j.is_object()) {
      bad_.push_back(where("") + ": expected an object");
      ok_ = false;
      return;
    }
    for (const auto& [k, v] : j.items()) {
      if (!allowed.count(k)) bad_.push_back("unknown key '" + where(k) + "'");
    }
  }

  const Json* get(const std::string& key) const {
    if (!ok_) return nullptr;
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void number(const std::string& key, T& out) const {
    const Json* v = get(key);
    if (!v) return;
    if (!v->is_number()) {
      bad_.push_back(where(key) + ": expected a number");
      return;
    }
    if constexpr (std::is_integral_v<T>) {
      const double d = v->get<double>();
      if (v->is_number_float() && d != std::floor(d)) {
        bad_.push_back(where(key) + ": expected an integer");
        return;
      }
      if (std::is_unsigned_v<T> && d < 0) {
        bad_.push_back(where(key) + ": must be non-negative");
        return;
      }
      out = v->is_number_float() ? static_cast<T>(d) : v->get<T>();
    } else {
      out = v->get<T>();
    }
  }

  void boolean(const std::string& key, bool& out) const {
    const Json* v = get(key);
    if (!v) return;
    if (!v->is_boolean()) {
      bad_.push_back(where(key) + ": expected true or false");
      return;
    }
    out = v->get<bool>();
  }

  template <class F>
  void string(const std::string& key, F&& assign) const {
    const Json* v = get(key);
    if (!v) return;
    if (!v->is_string()) {
      bad_.push_back(where(key) + ": expected a string");
      return;
    }
    try {
      assign(v->get<std::string>());
    } catch (const std::exception& e) {
      bad_.push_back(where(key) + ": " + e.what());
    }
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : key.empty() ? path_ : path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::vector<std::string>& bad_;
  bool ok_ = true;
};

}  // namespace detail

/// Strict parse: unknown keys and type errors are all reported together.
/// Missing keys keep their defaults.
inline ExperimentConfig parse_experiment_config(const Json& j) {
  ExperimentConfig c;
  std::vector<std::string> bad;
  detail::ObjectReader top(j, "", bad,
                           {"window", "x_levels", "y_fraction", "test_function", "quadrature", "stages", "verify",
                            "output_dir", "threads", "seed", "exact"});
  if (const Json* w = top.get("window")) {
    detail::ObjectReader r(*w, "window", bad,
                           {"x", "y", "anchor", "M", "delta", "varpi", "nu", "c1", "mode", "sigma", "schedule"});
    r.number("x", c.window.x);
    r.number("y", c.window.y);
    r.number("anchor", c.window.anchor);
    r.number("M", c.window.M);
    r.number("delta", c.window.delta);
    r.number("varpi", c.window.varpi);
    r.number("nu", c.window.nu);
    r.number("c1", c.window.c1);
    r.number("sigma", c.window.sigma);
    r.string("mode", [&](const std::string& s) { c.window.mode = parse_window_mode(s); });
    r.string("schedule", [&](const std::string& s) { c.window.schedule = parse_schedule(s); });
  }
  if (const Json* xs = top.get("x_levels")) {
    if (!xs->is_array()) {
      bad.push_back("x_levels: expected an array");
    } else {
      for (const auto& v : *xs) {
        if (!v.is_number() || v.get<double>() < 2 || v.get<double>() != std::floor(v.get<double>())) {
          bad.push_back("x_levels: entries must be integers >= 2");
          break;
        }
        c.x_levels.push_back(v.is_number_float() ? static_cast<u64>(v.get<double>()) : v.get<u64>());
      }
    }
  }
  top.number("y_fraction", c.y_fraction);
  if (const Json* t = top.get("test_function")) {
    detail::ObjectReader r(*t, "test_function", bad, {"variant", "xi", "product_cofactor", "bumps"});
    r.string("variant", [&](const std::string& s) { c.test_function.variant = parse_variant(s); });
    r.number("xi", c.test_function.xi);
    r.boolean("product_cofactor", c.test_function.product_cofactor);
    if (const Json* bs = r.get("bumps")) {
      if (!bs->is_array()) {
        bad.push_back("test_function.bumps: expected an array");
      } else {
        for (const auto& b : *bs) {
          detail::ObjectReader br(b, "test_function.bumps[]", bad, {"center", "coef"});
          BumpTerm term;
          br.number("coef", term.coef);
          if (const Json* ce = br.get("center")) {
            if (!ce->is_array()) {
              bad.push_back("test_function.bumps[].center: expected an array");
            } else {
              for (const auto& x : *ce) {
                if (!x.is_number()) {
                  bad.push_back("test_function.bumps[].center: expected numbers");
                  break;
                }
                term.center.push_back(x.get<double>());
              }
            }
          }
          c.test_function.bumps.push_back(std::move(term));
        }
      }
    }
  }
  if (const Json* q = top.get("quadrature")) {
    detail::ObjectReader r(*q, "quadrature", bad, {"subdivisions", "nodes_per_panel", "levels", "rel_tol"});
    r.number("subdivisions", c.quadrature.subdivisions);
    r.number("nodes_per_panel", c.quadrature.nodes_per_panel);
    r.number("levels", c.quadrature.levels);
    r.number("rel_tol", c.quadrature.rel_tol);
  }
  if (const Json* st = top.get("stages")) {
    c.stages.clear();
    if (!st->is_array()) {
      bad.push_back("stages: expected an array");
    } else {
      for (const auto& s : *st) {
        const auto& all = all_stages();
        if (!s.is_string() || std::find(all.begin(), all.end(), s.get<std::string>()) == all.end()) {
          bad.push_back("stages: unknown stage " + s.dump());
          continue;
        }
        c.stages.push_back(s.get<std::string>());
      }
    }
  }
  if (const Json* v = top.get("verify")) {
    detail::ObjectReader r(*v, "verify", bad,
                           {"k_max", "moment_k_max", "d_max", "hooley_alpha", "identity_samples", "numeric_identity"});
    r.number("k_max", c.verify.k_max);
    r.number("moment_k_max", c.verify.moment_k_max);
    r.number("d_max", c.verify.d_max);
    r.number("hooley_alpha", c.verify.hooley_alpha);
    r.number("identity_samples", c.verify.identity_samples);
    r.boolean("numeric_identity", c.verify.numeric_identity);
  }
  top.string("output_dir", [&](const std::string& s) { c.output_dir = s; });
  top.number("threads", c.threads);
  top.number("seed", c.seed);
  top.boolean("exact", c.exact);

  if (c.threads < 1) bad.push_back("threads: must be >= 1");
  if (!(c.y_fraction > 0)) bad.push_back("y_fraction: must be positive");
  if (c.verify.k_max < 1) bad.push_back("verify.k_max: must be >= 1");
  if (c.verify.moment_k_max < c.verify.k_max) bad.push_back("verify.moment_k_max: must be >= verify.k_max");
  if (c.verify.d_max < 1) bad.push_back("verify.d_max: must be >= 1");
  if (c.verify.identity_samples < 1) bad.push_back("verify.identity_samples: must be >= 1");
  if (c.quadrature.subdivisions < 1 || c.quadrature.nodes_per_panel < 1 || c.quadrature.levels < 1) {
    bad.push_back("quadrature: subdivisions, nodes_per_panel and levels must be >= 1");
  }
  if (!bad.empty()) throw ConfigError(std::move(bad));
  // window constraints are checked on every window the run builds
  std::vector<std::string> wbad;
  for (const auto& w : c.windows()) {
    try {
      validate_config(w);
    } catch (const ConfigError& e) {
      for (const auto& v : e.violations()) wbad.push_back("window x=" + std::to_string(w.x) + ": " + v);
    }
  }
  if (!wbad.empty()) throw ConfigError(std::move(wbad));
  return c;
}

inline ExperimentConfig load_experiment_config(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open config " + p.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
  }
  return parse_experiment_config(j);
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(binary::fnv1a(to_json(c).dump())); }

/// Test function for one window of the experiment.
inline TestFunctionSpec spec_for_window(const TestFunctionConfig& t, const WindowConfig& w) {
  switch (t.variant) {
    case Variant::theorem1: return make_theorem1_spec(w.M, w.delta, effective_sigma(w));
    case Variant::theorem2: return make_theorem2_spec(w.M, w.delta);
    case Variant::custom: return make_custom_spec(w.M, w.delta, t.xi, t.bumps, t.product_cofactor);
  }
  throw std::logic_error("spec_for_window: bad variant");
}

// ---------------------------------------------------------------------------
// JSON views of the results

inline Json to_json(const MomentSet& m) {
  return Json{{"M", m.M},
              {"delta", m.delta},
              {"variant", to_string(m.variant)},
              {"spec_hash", hex64(m.spec_hash)},
              {"Z", m.Z},
              {"Z_error", m.Z_error},
              {"Z_floor", m.Z_floor},
              {"Z_history", m.Z_history},
              {"J", m.J},
              {"J_error", m.J_error},
              {"J_exact", m.J_exact}};
}

inline MomentSet moments_from_json(const Json& j) {
  MomentSet m;
  try {
    m.M = j.at("M").get<int>();
    m.delta = j.at("delta").get<double>();
    m.variant = parse_variant(j.at("variant").get<std::string>());
    m.spec_hash = parse_hex64(j.at("spec_hash").get<std::string>());
    m.Z = j.at("Z").get<std::vector<double>>();
    m.Z_error = j.at("Z_error").get<std::vector<double>>();
    m.Z_floor = j.at("Z_floor").get<std::vector<double>>();
    m.Z_history = j.at("Z_history").get<std::vector<std::vector<double>>>();
    m.J = j.at("J").get<double>();
    m.J_error = j.at("J_error").get<double>();
    m.J_exact = j.at("J_exact").get<double>();
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("malformed moments artifact: ") + e.what());
  }
  return m;
}

inline Json to_json(const ZkBoundReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"k", row.k},
                        {"minus_Zk", row.minus_Zk},
                        {"bound", row.bound},
                        {"second_difference", row.second_difference},
                        {"holds", row.holds},
                        {"ratio_next", row.ratio_next}});
  }
  return Json{{"M", r.M},     {"delta", r.delta}, {"eps", r.eps},   {"lambda", r.lambda},
              {"C", r.C},     {"J", r.J},         {"leading_Z2", r.leading_Z2}, {"rows", rows}};
}

inline Json to_json(const SlabStats& s) {
  Json per = Json::object();
  for (const auto& [k, v] : s.count_per_alpha) per[k] = v;
  return Json{{"entries", s.entries},   {"count_per_alpha", per}, {"non_squarefree", s.non_squarefree},
              {"sum_b", s.sum_b},       {"sum_abs_b", s.sum_abs_b}, {"max_abs_b", s.max_abs_b}};
}

inline Json to_json(const RemainderReport& r, bool rows) {
  Json j{{"x", r.x},
         {"y", r.y},
         {"d_max", r.d_max},
         {"sum_a", r.sum_a},
         {"sum_abs_r", r.sum_abs_r},
         {"max_normalized", r.max_normalized},
         {"argmax_d", r.argmax_d},
         {"cross_checked_up_to", r.cross_checked_up_to},
         {"routes_agree", r.routes_agree}};
  if (rows) {
    Json a = Json::array();
    for (const auto& row : r.rows) {
      a.push_back(Json{{"d", row.d}, {"A_d", row.A_d}, {"r_d", row.r_d}, {"normalized", row.normalized}});
    }
    j["rows"] = a;
  }
  return j;
}

inline Json to_json(const MomentReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"k", row.k},
                        {"S", row.S},
                        {"T", row.T},
                        {"baseline", row.baseline},
                        {"construction", row.construction},
                        {"observed_bias", row.observed_bias},
                        {"baseline_drift", row.baseline_drift},
                        {"construction_bias", row.construction_bias},
                        {"predicted_bias", row.predicted_bias},
                        {"ratio", std::isfinite(row.ratio) ? Json(row.ratio) : Json(nullptr)}});
  }
  const auto& P = r.parity;
  return Json{{"x", r.x},
              {"y", r.y},
              {"M", r.M},
              {"log_x", r.log_x},
              {"has_prediction", r.has_prediction},
              {"spec_hash", hex64(r.spec_hash)},
              {"rows", rows},
              {"parity",
               Json{{"sum_mu", P.sum_mu},
                    {"sum_lambda", P.sum_lambda},
                    {"b_mu", P.b_mu},
                    {"b_lambda", P.b_lambda},
                    {"normalized_mu", P.normalized_mu},
                    {"normalized_lambda", P.normalized_lambda},
                    {"predicted", P.predicted},
                    {"predicted_normalized", P.predicted_normalized},
                    {"mu_lambda_mismatch", P.mu_lambda_mismatch},
                    {"mismatch_squarefree", P.mismatch_squarefree},
                    {"non_squarefree_entries", P.non_squarefree_entries},
                    {"non_squarefree_scale", P.non_squarefree_scale}}}};
}

inline Json to_json(const HooleyReport& h) {
  return Json{{"alpha", h.alpha_exp}, {"D", h.D}, {"value", h.value}, {"unbiased", h.unbiased}};
}

inline Json to_json(const Lemma2Result& r) {
  return Json{{"r", r.r},         {"x", r.x},     {"y", r.y},         {"sum", r.sum}, {"integral", r.integral},
              {"prediction", r.prediction}, {"rel_error", r.rel_error}, {"tuples", r.tuples}};
}

inline Json to_json(const IdentityResidual& r) {
  Json terms = Json::array();
  for (const auto& t : r.terms) terms.push_back(Json{{"mu", t.mu.str()}, {"value", t.value}});
  return Json{{"beta", r.beta.str()},
              {"v", r.v},
              {"sum", r.sum},
              {"max_term", r.max_term},
              {"normalized", r.normalized},
              {"normalized_history", r.normalized_history},
              {"floor", r.floor},
              {"terms", terms}};
}

// ---------------------------------------------------------------------------
// Files

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing artifact " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

inline Json read_json(const fs::path& p) {
  try {
    return Json::parse(read_text(p));
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("malformed artifact " + p.string() + ": " + e.what());
  }
}

inline void save_slab(const fs::path& p, const WeightedSlab& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  write_slab(out, s);
}

inline WeightedSlab load_slab(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing slab " + p.string());
  return read_slab(in);
}

inline fs::path cache_directory(const ExperimentConfig& c) {
  if (const char* env = std::getenv("SIEVEBIAS_CACHE_DIR"); env && *env) return fs::path(env);
  return fs::path(c.output_dir) / "cache";
}

// ---------------------------------------------------------------------------
// Stage computations (pure: config in, JSON out)

/// Exact identity table: one row per identity instance with its parameters,
/// exact residual (rational string) and pass flag.
inline Json exact_identities(int system_max_m = 10, int mult_max_sum = 12) {
  Json rows = Json::array();
  bool all = true;
  auto row = [&](const std::string& name, Json params, const Rational& residual) {
    const bool pass = residual == 0;
    all &= pass;
    rows.push_back(Json{{"name", name}, {"params", std::move(params)}, {"residual", to_string(residual)}, {"pass", pass}});
  };
  for (int m = 1; m <= std::max(20, system_max_m); ++m) row("gamma", Json{{"m", m}}, gamma_m(m) - (m == 1 ? -1 : 0));
  for (int M = 1; M <= system_max_m; ++M) {
    for (int N = 0; N <= M; ++N) row("W", Json{{"M", M}, {"N", N}}, w_coefficient(M, N) - (N == 0 ? 1 : N == 1 ? -1 : 0));
  }
  for (int M = 2; M <= system_max_m; ++M) {
    for (const auto& r : verify_coefficient_system(M)) row("system", Json{{"M", M}, {"beta", r.beta.str()}}, r.residual);
  }
  const auto mult = verify_e_multiplicativity(mult_max_sum);
  row("e_multiplicativity", Json{{"max_sum", mult_max_sum}, {"pairs", mult.pairs_checked}},
      Rational(static_cast<long long>(mult.failures.size())));
  return Json{{"rows", rows}, {"all_exact", all}};
}

inline Json identities_artifact(const ExperimentConfig& c) {
  Json j = exact_identities();
  if (c.verify.numeric_identity) {
    const auto w0 = c.windows().front();
    const auto spec = spec_for_window(c.test_function, w0);
    const auto table = make_coefficient_table(spec.M);
    Json num = Json::array();
    for (const auto& beta : index_set_q(spec.M)) {
      const auto pts = identity_sample_points(beta, spec.M, spec.delta, c.verify.identity_samples, c.seed);
      for (const auto& v : pts) num.push_back(to_json(verify_main_identity(spec, beta, v, table, c.quadrature)));
    }
    j["numeric"] = num;
  }
  return j;
}

inline Json moments_artifact(const ExperimentConfig& c) {
  const auto w0 = c.windows().front();
  const auto spec = spec_for_window(c.test_function, w0);
  Json j{{"moments", to_json(moments(spec, c.quadrature, c.verify.moment_k_max))}};
  if (spec.variant == Variant::theorem2) {
    j["lower_bound"] = to_json(zk_lower_bound_check(spec.M, spec.delta, c.quadrature, std::max(3, c.verify.moment_k_max)));
  }
  return j;
}

inline Json verify_artifact(const ExperimentConfig& c, const WeightedSlab& slab, const MomentSet& ms) {
  Json j;
  const auto rem = remainder_scan(slab, c.verify.d_max);
  j["remainders"] = to_json(rem, false);
  // class-restricted sums at the smallest primes of each class below M
  auto [small, window] = sieve_class_tables(slab.cfg);
  const auto classes = build_prime_classes(slab.cfg, small, window);
  Json cc = Json::array();
  for (const auto& beta : index_set_q(slab.cfg.M)) {
    std::vector<u64> ds;
    if (beta.empty()) {
      ds.push_back(1);
    } else {
      // d = product of the smallest available primes of the classes in beta
      std::map<int, std::size_t> used;
      u64 d = 1;
      bool ok = true;
      for (int part : beta.parts()) {
        const auto& P = classes.of(part);
        const std::size_t idx = used[part]++;
        if (idx >= P.size()) {
          ok = false;
          break;
        }
        d *= P[idx];
      }
      if (ok) ds.push_back(d);
    }
    for (const auto& r : class_cancellation(slab, beta, ds)) {
      cc.push_back(Json{{"beta", beta.str()}, {"d", r.d}, {"sum", r.sum}, {"normalized", r.normalized}, {"terms", r.terms}});
    }
  }
  j["class_cancellation"] = cc;
  j["sums"] = to_json(moment_scan(slab, c.verify.k_max, &ms));
  j["hooley"] = to_json(hooley_progression_bias(slab, c.verify.hooley_alpha));
  j["slab"] = to_json(slab_stats(slab));
  return j;
}

// ---------------------------------------------------------------------------
// Report tables

inline std::string identity_csv(const Json& ident) {
  std::ostringstream os;
  os << "name,params,residual,pass\n";
  if (ident.is_null()) return os.str();
  for (const auto& r : ident.at("rows")) {
    std::string params;
    for (const auto& [k, v] : r.at("params").items()) {
      if (!params.empty()) params += ";";
      params += k + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
    }
    os << r.at("name").get<std::string>() << ",\"" << params << "\"," << r.at("residual").get<std::string>() << ','
       << (r.at("pass").get<bool>() ? "pass" : "fail") << '\n';
  }
  if (ident.contains("numeric")) {
    for (const auto& n : ident.at("numeric")) {
      os << "identity_numeric,\"beta=" << n.at("beta").get<std::string>() << "\","
         << fmt_double(n.at("normalized").get<double>()) << ",\n";
    }
  }
  return os.str();
}

inline std::string moments_csv(const Json& mom) {
  std::ostringstream os;
  os << "k,Z,Z_error,Z_floor\n";
  if (mom.is_null()) return os.str();
  const auto ms = moments_from_json(mom.at("moments"));
  for (std::size_t k = 0; k < ms.Z.size(); ++k) {
    os << k << ',' << fmt_double(ms.Z[k]) << ',' << fmt_double(ms.Z_error[k]) << ',' << fmt_double(ms.Z_floor[k])
       << '\n';
  }
  return os.str();
}

struct ReportTables {
  std::string identity_residuals;
  std::string moments;
  std::string remainders;
  std::string bias_table;
  std::string tk_series;
};

/// Summary tables from the artifacts of a run directory. Every artifact named
/// in manifest.json must exist; without a manifest whatever is present is
/// rendered (an empty directory gives header-only tables).
inline ReportTables report_render(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("missing artifact directory " + dir.string());
  Json manifest;
  if (fs::exists(dir / "manifest.json")) {
    manifest = read_json(dir / "manifest.json");
    for (const auto& a : manifest.at("artifacts")) {
      if (!fs::exists(dir / a.get<std::string>())) throw std::runtime_error("missing artifact " + a.get<std::string>());
    }
  }
  ReportTables t;
  const Json ident = fs::exists(dir / "identities.json") ? read_json(dir / "identities.json") : Json();
  const Json mom = fs::exists(dir / "moments.json") ? read_json(dir / "moments.json") : Json();
  t.identity_residuals = identity_csv(ident);
  t.moments = moments_csv(mom);

  std::vector<std::pair<u64, Json>> verifies;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("verify-x", 0) == 0 && entry.path().extension() == ".json") {
      Json j = read_json(entry.path());
      verifies.emplace_back(j.at("x").get<u64>(), std::move(j));
    }
  }
  std::sort(verifies.begin(), verifies.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::ostringstream rem, bias, tk;
  rem << "x,y,d_max,sum_abs_r,max_normalized,argmax_d,routes_agree\n";
  bias << "x,k,S_k,T_k,predicted,observed,ratio\n";
  int kmax = 0;
  for (const auto& [x, j] : verifies) kmax = std::max(kmax, static_cast<int>(j.at("sums").at("rows").size()));
  tk << "x,log_x";
  for (int k = 1; k <= kmax; ++k) tk << ",T_" << k;
  tk << '\n';
  for (const auto& [x, j] : verifies) {
    const auto& r = j.at("remainders");
    rem << x << ',' << r.at("y") << ',' << r.at("d_max") << ',' << fmt_double(r.at("sum_abs_r").get<double>()) << ','
        << fmt_double(r.at("max_normalized").get<double>()) << ',' << r.at("argmax_d") << ','
        << (r.at("routes_agree").get<bool>() ? "true" : "false") << '\n';
    const auto& s = j.at("sums");
    tk << x << ',' << fmt_double(s.at("log_x").get<double>());
    for (const auto& row : s.at("rows")) {
      const Json& ratio = row.at("ratio");
      bias << x << ',' << row.at("k") << ',' << fmt_double(row.at("S").get<double>()) << ','
           << fmt_double(row.at("T").get<double>()) << ',' << fmt_double(row.at("predicted_bias").get<double>()) << ','
           << fmt_double(row.at("observed_bias").get<double>()) << ','
           << (ratio.is_null() ? std::string("nan") : fmt_double(ratio.get<double>())) << '\n';
      tk << ',' << fmt_double(row.at("T").get<double>());
    }
    tk << '\n';
  }
  t.remainders = rem.str();
  t.bias_table = bias.str();
  t.tk_series = tk.str();
  return t;
}

inline void write_report(const fs::path& dir, const ReportTables& t) {
  write_text(dir / "identity_residuals.csv", t.identity_residuals);
  write_text(dir / "moments.csv", t.moments);
  write_text(dir / "remainders.csv", t.remainders);
  write_text(dir / "bias_table.csv", t.bias_table);
  write_text(dir / "tk_series.csv", t.tk_series);
}

// ---------------------------------------------------------------------------
// Pipeline

struct StageRecord {
  std::string stage;
  std::string key;
  bool cached = false;
  double seconds = 0.0;
};

struct PipelineResult {
  int status = 0;  // 0 ok, 1 stage failure
  std::string config_hash;
  std::vector<StageRecord> stages;
  std::vector<std::string> artifacts;
  Json error;
};

namespace detail {

inline std::string stage_key(const std::string& stage, const Json& inputs) {
  return hex64(binary::fnv1a(stage + ";" + inputs.dump()));
}

// A cached JSON artifact validates when it parses and names the same key.
inline std::optional<Json> cached_json(const fs::path& p, const std::string& key) {
  if (!fs::exists(p)) return std::nullopt;
  try {
    Json j = read_json(p);
    if (j.value("stage_key", std::string()) == key) return j;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

inline PipelineResult run_pipeline(const ExperimentConfig& c) {
  PipelineResult res;
  res.config_hash = config_hash(c);
  const fs::path out(c.output_dir);
  const fs::path cache = cache_directory(c);
  fs::create_directories(out);
  fs::create_directories(cache);
  const Json quad = to_json(c.quadrature);
  const auto windows = c.windows();
  const auto t_start = detail::utc_now();
  std::string current;

  auto timed = [&](const std::string& stage, const std::string& key, auto&& body) {
    current = stage;
    const auto t0 = std::chrono::steady_clock::now();
    const bool cached = body();
    res.stages.push_back({stage, key, cached, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  };
  // runs `make` unless a validated artifact is cached, then publishes it
  auto json_stage = [&](const std::string& stage, const Json& inputs, const std::string& file, auto&& make) {
    const std::string key = detail::stage_key(stage, inputs);
    timed(stage, key, [&] {
      const fs::path cp = cache / (stage + "-" + key + ".json");
      auto hit = detail::cached_json(cp, key);
      Json j;
      if (hit) {
        j = std::move(*hit);
      } else {
        j = Json{{"stage_key", key}, {"config_hash", res.config_hash}};
        const Json body = make();
        for (const auto& [k, v] : body.items()) j[k] = v;
        write_json(cp, j);
      }
      j["config_hash"] = res.config_hash;
      write_json(out / file, j);
      res.artifacts.push_back(file);
      return hit.has_value();
    });
  };

  try {
    if (c.has_stage("identities")) {
      Json inputs{{"quadrature", quad},
                  {"window", to_json(windows.front())},
                  {"test_function", to_json(c)["test_function"]},
                  {"samples", c.verify.identity_samples},
                  {"numeric", c.verify.numeric_identity},
                  {"seed", c.seed}};
      json_stage("identities", inputs, "identities.json", [&] { return identities_artifact(c); });
    }
    std::optional<MomentSet> ms;
    const Json mom_inputs{{"spec", spec_for_window(c.test_function, windows.front()).canonical()},
                          {"quadrature", quad},
                          {"k_max", c.verify.moment_k_max}};
    if (c.has_stage("moments") || c.has_stage("verify")) {
      json_stage("moments", mom_inputs, "moments.json", [&] { return moments_artifact(c); });
      ms = moments_from_json(read_json(out / "moments.json").at("moments"));
    }
    for (const auto& w : windows) {
      const auto spec = spec_for_window(c.test_function, w);
      const std::string tag = "x" + std::to_string(w.x);
      const Json build_inputs{{"window", to_json(w)}, {"spec", spec.canonical()}, {"quadrature", quad}, {"exact", c.exact}};
      const std::string bkey = detail::stage_key("build", build_inputs);
      std::optional<WeightedSlab> slab;
      if (c.has_stage("build") || c.has_stage("verify")) {
        timed("build", bkey, [&] {
          const fs::path cp = cache / ("slab-" + bkey + ".bin");
          bool hit = false;
          if (fs::exists(cp)) {
            try {
              auto s = load_slab(cp);
              if (s.cfg == w && s.spec_hash == spec.hash()) {
                slab = std::move(s);
                hit = true;
              }
            } catch (const std::exception&) {
            }
          }
          if (!hit) {
            SlabBuildOptions opt;
            opt.exact = c.exact;
            slab = assemble_slab(w, spec, c.quadrature, opt);
            save_slab(cp, *slab);
          }
          fs::copy_file(cp, out / ("slab-" + tag + ".bin"), fs::copy_options::overwrite_existing);
          res.artifacts.push_back("slab-" + tag + ".bin");
          return hit;
        });
      }
      if (c.has_stage("verify")) {
        if (ms && spec.hash() != ms->spec_hash) {
          // each window may carry its own sigma under a schedule
          ms = moments(spec, c.quadrature, c.verify.moment_k_max);
        }
        Json inputs{{"build", bkey}, {"verify", to_json(c)["verify"]}};
        json_stage("verify", inputs, "verify-" + tag + ".json", [&] {
          Json j = verify_artifact(c, *slab, *ms);
          Json withx{{"x", w.x}};
          for (auto& [k, v] : j.items()) withx[k] = v;
          return withx;
        });
      }
    }
    if (c.has_stage("report")) {
      current = "report";
      write_json(out / "manifest.json", Json{{"config_hash", res.config_hash}, {"artifacts", res.artifacts}});
      const auto t0 = std::chrono::steady_clock::now();
      write_report(out, report_render(out));
      res.stages.push_back({"report", res.config_hash, false,
                            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
    }
  } catch (const std::exception& e) {
    res.status = 1;
    res.error = Json{{"stage", current}, {"error", e.what()}, {"config_hash", res.config_hash}};
    write_json(out / "error.json", res.error);
  }
  write_json(out / "config.json", to_json(c));
  Json stages = Json::array();
  for (const auto& s : res.stages) {
    stages.push_back(Json{{"stage", s.stage}, {"key", s.key}, {"cached", s.cached}, {"seconds", s.seconds}});
  }
  char host[256] = "unknown";
  gethostname(host, sizeof host - 1);
  write_json(out / "metadata.json", Json{{"config_hash", res.config_hash},
                                        {"started", t_start},
                                        {"finished", detail::utc_now()},
                                        {"host", host},
                                        {"threads", c.threads},
                                        {"cache_dir", cache.string()},
                                        {"status", res.status},
                                        {"stages", stages}});
  return res;
}

}  // namespace sievebias
