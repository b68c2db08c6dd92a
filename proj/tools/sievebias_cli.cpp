// sievebias command-line front end. Every subcommand prints a JSON report on
// stdout; --json/--csv also write it to files. Exit status: 0 ok, 1 a check
// or stage failed, 2 bad arguments or configuration.

#include <CLI11.hpp>

#include <cmath>
#include <iostream>

#include "sievebias/sievebias.hpp"

using namespace sievebias;

namespace {

struct Output {
  std::string json_path;
  std::string csv_path;

  void add(CLI::App* app, bool csv = true) {
    app->add_option("--json", json_path, "also write the JSON report here");
    if (csv) app->add_option("--csv", csv_path, "write a CSV table here");
  }

  void emit(const Json& j, const std::string& csv = {}) const {
    std::cout << j.dump(2) << '\n';
    if (!json_path.empty()) write_json(json_path, j);
    if (!csv_path.empty()) write_text(csv_path, csv);
  }
};

// Window and test-function flags shared by build and moments. Values start
// from --config when given; any flag passed explicitly overrides it.
struct WindowFlags {
  std::string config;
  u64 x = 1000000;
  u64 y = 0;
  int M = 3;
  double delta = 1.0 / 27;
  double varpi = 0.46;
  double nu = 0.51;
  int sigma = 1;
  std::string variant = "theorem1";
  std::string mode = "desk_window";
  std::string schedule = "fixed";
  double xi = 0.0;

  CLI::App* app = nullptr;

  void add(CLI::App* a, bool window) {
    app = a;
    a->add_option("--config", config, "experiment config (JSON)");
    a->add_option("--m", M, "number of prime-size classes M");
    a->add_option("--delta", delta, "class half-width delta");
    a->add_option("--variant", variant, "theorem1 | theorem2 | custom");
    a->add_option("--sigma", sigma, "sign sigma for theorem1 (+1 or -1)");
    a->add_option("--xi", xi, "bump radius for the custom variant");
    if (window) {
      a->add_option("--x", x, "window start x");
      a->add_option("--window", y, "window length y (default x/100)");
      a->add_option("--varpi", varpi, "level exponent varpi");
      a->add_option("--nu", nu, "distribution exponent nu");
      a->add_option("--mode", mode, "desk_window | paper_schedule");
      a->add_option("--schedule", schedule, "fixed | all_minus | all_plus | doubly_exponential");
    }
  }

  bool given(const std::string& flag) const {
    const auto* opt = app->get_option_no_throw(flag);
    return opt && opt->count() > 0;
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config.empty()) c = load_experiment_config(config);
    WindowConfig& w = c.window;
    if (config.empty() || given("--x")) w.x = x;
    if (given("--window")) w.y = y;
    if (w.y == 0) w.y = static_cast<u64>(std::llround(static_cast<double>(w.x) * c.y_fraction));
    if (given("--m")) w.M = M;
    if (given("--delta")) w.delta = delta;
    if (given("--varpi")) w.varpi = varpi;
    if (given("--nu")) w.nu = nu;
    if (given("--sigma")) w.sigma = sigma;
    if (given("--mode")) w.mode = parse_window_mode(mode);
    if (given("--schedule")) w.schedule = parse_schedule(schedule);
    if (given("--variant")) c.test_function.variant = parse_variant(variant);
    if (given("--xi")) c.test_function.xi = xi;
    c.x_levels.clear();
    return c;
  }
};

WeightedSlab open_slab(const std::string& path) { return load_slab(path); }

int cmd_verify_identities(int max_m, const Output& out) {
  const Json j = exact_identities(max_m, max_m);
  out.emit(j, identity_csv(j));
  return j.at("all_exact").get<bool>() ? 0 : 1;
}

int cmd_moments(const WindowFlags& f, int k_max, const Output& out) {
  const ExperimentConfig c = f.resolve();
  const auto spec = spec_for_window(c.test_function, c.window);
  Json j{{"moments", to_json(moments(spec, c.quadrature, k_max))}};
  if (spec.variant == Variant::theorem2) j["lower_bound"] = to_json(zk_lower_bound_check(spec.M, spec.delta, c.quadrature, k_max));
  out.emit(j, moments_csv(j));
  return 0;
}

int cmd_build(const WindowFlags& f, const std::string& slab_path, bool exact, const Output& out) {
  const ExperimentConfig c = f.resolve();
  validate_config(c.window);
  const auto spec = spec_for_window(c.test_function, c.window);
  SlabBuildOptions opt;
  opt.exact = exact || c.exact;
  const auto slab = assemble_slab(c.window, spec, c.quadrature, opt);
  save_slab(slab_path, slab);
  std::ostringstream csv;
  export_slab_csv(csv, slab);
  out.emit(Json{{"slab", slab_path}, {"window", to_json(c.window)}, {"spec_hash", hex64(spec.hash())},
                {"stats", to_json(slab_stats(slab))}},
           csv.str());
  return 0;
}

int cmd_check_axioms(const std::string& path, double nu, u64 d_max, const Output& out) {
  const auto slab = open_slab(path);
  if (d_max == 0) d_max = static_cast<u64>(std::floor(std::pow(static_cast<double>(slab.cfg.x), nu)));
  const auto rep = remainder_scan(slab, std::max<u64>(d_max, 1));
  std::ostringstream csv;
  csv << "d,A_d,r_d,normalized\n";
  for (const auto& r : rep.rows) {
    csv << r.d << ',' << fmt_double(r.A_d) << ',' << fmt_double(r.r_d) << ',' << fmt_double(r.normalized) << '\n';
  }
  Json j = to_json(rep, false);
  j["nu"] = nu;
  out.emit(j, csv.str());
  return rep.routes_agree ? 0 : 1;
}

int cmd_sums(const std::string& path, int k_max, const std::string& moments_path, const Output& out) {
  const auto slab = open_slab(path);
  std::optional<MomentSet> ms;
  if (!moments_path.empty()) {
    Json mj = read_json(moments_path);
    ms = moments_from_json(mj.contains("moments") ? mj.at("moments") : mj);
  }
  const auto rep = moment_scan(slab, k_max, ms ? &*ms : nullptr);
  const Json j = to_json(rep);
  std::ostringstream csv;
  csv << "x,k,S_k,T_k,predicted,observed,ratio\n";
  for (const auto& r : rep.rows) {
    csv << rep.x << ',' << r.k << ',' << fmt_double(r.S) << ',' << fmt_double(r.T) << ',' << fmt_double(r.predicted_bias)
        << ',' << fmt_double(r.observed_bias) << ',' << fmt_double(r.ratio) << '\n';
  }
  out.emit(j, csv.str());
  return 0;
}

int cmd_hooley(const std::string& path, double alpha, const Output& out) {
  const auto slab = open_slab(path);
  out.emit(to_json(hooley_progression_bias(slab, alpha)));
  return 0;
}

int cmd_lemma2(int r, u64 x, u64 y, const Output& out) {
  if (y == 0) y = x / 100;
  const auto rep = lemma2_check(r, lemma2_bump_spec(r), x, y, QuadratureConfig{});
  out.emit(to_json(rep));
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto t = report_render(dir);
  write_report(dir, t);
  std::cout << t.bias_table;
  return 0;
}

int cmd_run(const std::string& config, const std::string& output_dir, const std::vector<std::string>& stages,
            const std::vector<u64>& x_levels, std::optional<u64> seed) {
  ExperimentConfig c = load_experiment_config(config);
  if (!output_dir.empty()) c.output_dir = output_dir;
  if (!stages.empty()) {
    Json j = to_json(c);
    j["stages"] = stages;
    c = parse_experiment_config(j);
  }
  if (!x_levels.empty()) c.x_levels = x_levels;
  if (seed) c.seed = *seed;
  const auto res = run_pipeline(c);
  Json stages_json = Json::array();
  for (const auto& s : res.stages) {
    stages_json.push_back(Json{{"stage", s.stage}, {"key", s.key}, {"cached", s.cached}, {"seconds", s.seconds}});
  }
  Json j{{"status", res.status}, {"config_hash", res.config_hash}, {"output_dir", c.output_dir}, {"stages", stages_json}};
  if (res.status) j["error"] = res.error;
  std::cout << j.dump(2) << '\n';
  return res.status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biased sieve sequences: construction and verification"};
  app.require_subcommand(1);

  int max_m = 12;
  Output o_ident;
  auto* ident = app.add_subcommand("verify-identities", "exact coefficient identities");
  ident->add_option("--max-m", max_m, "largest M for the W table and coefficient system")->check(CLI::Range(2, 12));
  o_ident.add(ident);

  WindowFlags f_mom;
  int mom_k = 6;
  Output o_mom;
  auto* mom = app.add_subcommand("moments", "simplex moments Z_k and J");
  f_mom.add(mom, false);
  mom->add_option("--k-max", mom_k, "largest k");
  o_mom.add(mom);

  WindowFlags f_build;
  std::string build_out;
  bool build_exact = false;
  Output o_build;
  auto* build = app.add_subcommand("build", "assemble a weighted slab");
  f_build.add(build, true);
  build->add_option("--out", build_out, "slab file")->required();
  build->add_flag("--exact", build_exact, "evaluate every b_n by quadrature (no interpolation)");
  o_build.add(build);

  std::string ax_slab;
  double ax_nu = 0.5;
  u64 ax_d = 0;
  Output o_ax;
  auto* ax = app.add_subcommand("check-axioms", "remainders r_d up to D");
  ax->add_option("--slab", ax_slab)->required();
  ax->add_option("--nu", ax_nu, "D = x^nu when --d-max is absent");
  ax->add_option("--d-max", ax_d, "largest modulus D");
  o_ax.add(ax);

  std::string sums_slab, sums_mom;
  int sums_k = 2;
  Output o_sums;
  auto* sums = app.add_subcommand("sums", "Lambda_k-weighted sums and parity sums");
  sums->add_option("--slab", sums_slab)->required();
  sums->add_option("--k-max", sums_k);
  sums->add_option("--moments", sums_mom, "moments JSON for the predicted bias");
  o_sums.add(sums);

  std::string h_slab;
  double h_alpha = 0.3;
  Output o_h;
  auto* hooley = app.add_subcommand("hooley", "averaged progression bias");
  hooley->add_option("--slab", h_slab)->required();
  hooley->add_option("--alpha", h_alpha, "moduli up to x^alpha");
  o_h.add(hooley, false);

  int l_r = 1;
  u64 l_x = 100000000, l_y = 0;
  Output o_l;
  auto* lemma = app.add_subcommand("lemma2", "r-prime sum against its integral");
  lemma->add_option("--r", l_r)->check(CLI::Range(1, 6));
  lemma->add_option("--x", l_x);
  lemma->add_option("--window", l_y, "window length (default x/100)");
  o_l.add(lemma, false);

  std::string rep_dir;
  auto* report = app.add_subcommand("report", "summary tables from a run directory");
  report->add_option("--dir", rep_dir)->required();

  std::string run_cfg, run_out;
  std::vector<std::string> run_stages;
  std::vector<u64> run_x;
  u64 run_seed = 0;
  auto* run = app.add_subcommand("run", "staged pipeline from a config file");
  run->add_option("--config", run_cfg)->required();
  run->add_option("--output-dir", run_out);
  run->add_option("--stages", run_stages);
  run->add_option("--x-levels", run_x);
  run->add_option("--seed", run_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ident) return cmd_verify_identities(max_m, o_ident);
    if (*mom) return cmd_moments(f_mom, mom_k, o_mom);
    if (*build) return cmd_build(f_build, build_out, build_exact, o_build);
    if (*ax) return cmd_check_axioms(ax_slab, ax_nu, ax_d, o_ax);
    if (*sums) return cmd_sums(sums_slab, sums_k, sums_mom, o_sums);
    if (*hooley) return cmd_hooley(h_slab, h_alpha, o_h);
    if (*lemma) return cmd_lemma2(l_r, l_x, l_y, o_l);
    if (*report) return cmd_report(rep_dir);
    if (*run) {
      return cmd_run(run_cfg, run_out, run_stages, run_x,
                     run->count("--seed") ? std::optional<u64>(run_seed) : std::nullopt);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
