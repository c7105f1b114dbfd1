#include "gjelab/experiments.hpp"

#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <map>

#include "gjelab/csv.hpp"
#include "gjelab/duality.hpp"
#include "gjelab/geometry.hpp"
#include "gjelab/numerics.hpp"
#include "gjelab/regularity.hpp"
#include "gjelab/solver.hpp"
#include "gjelab/svg.hpp"

namespace gjelab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "gjelab 0.1.0";

[[noreturn]] void config_error(const std::string& msg) {
  throw GjeError(ErrorCode::ConfigInvalid, msg);
}

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    config_error("parse failure in " + path.string() + ": " + e.what());
  }
  return j;
}

Interval interval_of(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) config_error(what + " must be [lo, hi]");
  return Interval{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

GenFun load_genfun_file(const fs::path& path) {
  json j = load_json(path);
  for (const char* key : {"dimension", "g", "U_box", "V_box", "z_interval", "J_interval"})
    if (!j.contains(key)) config_error(path.string() + " missing field '" + key + "'");
  DomainBox box;
  box.n = j["dimension"].get<int>();
  if (!j["U_box"].is_array() || static_cast<int>(j["U_box"].size()) != box.n)
    config_error("U_box must list one interval per dimension");
  if (!j["V_box"].is_array() || static_cast<int>(j["V_box"].size()) != box.n)
    config_error("V_box must list one interval per dimension");
  for (int i = 0; i < box.n; ++i) {
    box.u_box.push_back(interval_of(j["U_box"][i], "U_box"));
    box.v_box.push_back(interval_of(j["V_box"][i], "V_box"));
  }
  box.z_interval = interval_of(j["z_interval"], "z_interval");
  box.j_interval = interval_of(j["J_interval"], "J_interval");
  box.diagonal_exclusion = j.value("diagonal_exclusion_radius", 0.0);
  return GenFun::parse(j["g"].get<std::string>(), std::move(box));
}

std::function<double(const Eigen::Vector2d&)> expr_function(const std::string& src) {
  auto expr = std::make_shared<Expr>(parse_expression(src, 2));
  return [expr](const Eigen::Vector2d& x) {
    std::array<double, 2> xv{x.x(), x.y()}, yv{0.0, 0.0};
    return expr->eval(EvalPoint{xv, yv, 0.0});
  };
}

void write_grid_file(const fs::path& path, const GridFunction& g, uint64_t source_hash) {
  std::ofstream out(path);
  if (!out) config_error("cannot write " + path.string());
  const GridSpec& s = g.spec();
  out << "# gjelab-grid v1\n";
  out << "# " << format_g17(s.origin.x()) << " " << format_g17(s.origin.y()) << " "
      << format_g17(s.h) << " " << s.nx << " " << s.ny << " " << source_hash << "\n";
  for (double v : g.values()) out << format_g17(v) << "\n";
}

GridFunction read_grid_file(const fs::path& path, uint64_t* source_hash) {
  std::ifstream in(path);
  if (!in) config_error("cannot read " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != "# gjelab-grid v1")
    throw GjeError(ErrorCode::SchemaMismatch, "not a grid file: " + path.string());
  char hash_tag;
  GridSpec s;
  uint64_t hash;
  in >> hash_tag >> s.origin.x() >> s.origin.y() >> s.h >> s.nx >> s.ny >> hash;
  if (source_hash) *source_hash = hash;
  std::vector<double> vals(s.size());
  for (double& v : vals) in >> v;
  if (!in) throw GjeError(ErrorCode::SchemaMismatch, "truncated grid file " + path.string());
  return GridFunction(s, std::move(vals));
}

// ---------------------------------------------------------------------------
// run plumbing

namespace {

struct RunContext {
  fs::path out;
  json config;
  uint64_t seed{0};
  bool verbose{false};
  std::map<std::string, bool> gates;
  std::vector<std::string> artifacts;

  void note(const std::string& line) const {
    if (verbose) std::cout << line << "\n";
  }
  void gate(const std::string& name, bool pass) {
    gates[name] = pass;
    if (verbose) std::cout << "[gate] " << name << ": " << (pass ? "pass" : "FAIL") << "\n";
  }
  fs::path artifact(const std::string& name) {
    artifacts.push_back(name);
    return out / name;
  }
};

GridSpec spec_from(const json& sub, int grid_nodes) {
  Eigen::Vector2d lo(-1.0, -1.0), hi(1.0, 1.0);
  if (sub.contains("domain")) {
    Interval dx = interval_of(sub["domain"][0], "domain");
    Interval dy = interval_of(sub["domain"][1], "domain");
    lo = {dx.lo, dy.lo};
    hi = {dx.hi, dy.hi};
  }
  return GridSpec::over_box(lo, hi, grid_nodes);
}

Eigen::Vector2d point_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 2) config_error(std::string(what) + " must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::vector<double> log_spaced(double lo, double hi, int count) {
  std::vector<double> out;
  for (int k = 0; k < count; ++k)
    out.push_back(lo * std::pow(hi / lo, count > 1 ? double(k) / (count - 1) : 0.0));
  return out;
}

// ---------------------------------------------------------------------------
// kind runners

void run_check(RunContext& ctx, const GenFun& gf) {
  json sub = ctx.config.value("check", json::object());
  int a3_samples = sub.value("a3_samples", 2000);
  int a3_pairs = sub.value("a3_pairs", 16);
  int a1_samples = sub.value("a1star_samples", 24);

  bool a2_pass = true;
  try {
    gf.check_a2(ctx.seed, 256);
  } catch (const GjeError&) {
    a2_pass = false;
  }
  ctx.gate("a2_sampled", a2_pass);

  A1StarReport a1 = check_a1star(gf, a1_samples, 12, ctx.seed + 1);
  ctx.gate("a1star_injective", a1.injective);

  A3Report a3 = check_a3(gf, a3_samples, ctx.seed + 2, a3_pairs);
  ctx.gate("a3_nonnegative", a3.verdict >= 0);

  const char* verdict = a3.verdict > 0 ? "A3" : (a3.verdict == 0 ? "A3w" : "FAIL");
  {
    std::ofstream txt(ctx.artifact("check_report.txt"));
    txt << "a2_sampled = " << (a2_pass ? "pass" : "fail") << "\n";
    txt << "a1star_injective = " << (a1.injective ? "true" : "false") << "\n";
    txt << "a3_c_min = " << format_g17(a3.c_min) << "\n";
    txt << "a3_verdict = " << verdict << "\n";
    txt << "a3_samples = " << a3.samples << "\n";
    txt << "a3_pairs_per_sample = " << a3.pairs_per_sample << "\n";
  }
  json rep{{"a2_sampled", a2_pass},
           {"a1star_injective", a1.injective},
           {"a3_c_min", a3.c_min},
           {"a3_verdict", verdict},
           {"a3_samples", a3.samples},
           {"a3_pairs_per_sample", a3.pairs_per_sample}};
  if (a3.argmin.x.size() == 2) {
    rep["a3_argmin_x"] = {a3.argmin.x[0], a3.argmin.x[1]};
    rep["a3_argmin_u"] = a3.argmin.u;
    rep["a3_argmin_p"] = {a3.argmin.p[0], a3.argmin.p[1]};
  }
  std::ofstream(ctx.artifact("check_report.json")) << rep.dump(2) << "\n";
}

void run_solve(RunContext& ctx, const GenFun& gf) {
  json sub = ctx.config.value("solve", json::object());
  if (!sub.contains("boundary")) config_error("solve.boundary expression is required");
  auto bc = expr_function(sub["boundary"].get<std::string>());
  std::function<double(const Eigen::Vector2d&)> f;
  if (sub.contains("f") && sub["f"].is_string())
    f = expr_function(sub["f"].get<std::string>());
  else {
    double fc = sub.value("f", 1.0);
    f = [fc](const Eigen::Vector2d&) { return fc; };
  }
  std::function<double(const Eigen::Vector2d&)> exact;
  if (sub.contains("exact")) exact = expr_function(sub["exact"].get<std::string>());

  std::vector<int> grids;
  if (sub.contains("grids"))
    for (const auto& g : sub["grids"]) grids.push_back(g.get<int>());
  else
    grids.push_back(sub.value("grid", 129));

  CsvTable table({"grid", "h", "newton_iters", "residual_inf", "min_eigen_w", "converged",
                  "error_inf", "order"});
  std::vector<double> errs, hs;
  bool all_converged = true;
  GridFunction last;
  for (int n : grids) {
    GridSpec spec = spec_from(sub, n);
    DirichletProblem prob;
    prob.gf = &gf;
    prob.grid = spec;
    prob.boundary = bc;
    prob.f = f;
    prob.tol = sub.value("tolerance", 1e-8);
    SolveReport rep = solve_dirichlet(prob);
    all_converged = all_converged && rep.converged;
    double err = std::numeric_limits<double>::quiet_NaN();
    if (exact) {
      err = 0.0;
      for (int j = 0; j < spec.ny; ++j)
        for (int i = 0; i < spec.nx; ++i)
          err = std::max(err, std::abs(rep.u.at(i, j) - exact(spec.node(i, j))));
      errs.push_back(err);
      hs.push_back(spec.h);
    }
    double order = std::numeric_limits<double>::quiet_NaN();
    if (errs.size() >= 2) {
      size_t k = errs.size() - 1;
      order = std::log(errs[k - 1] / errs[k]) / std::log(hs[k - 1] / hs[k]);
    }
    table.add_row(std::array<double, 8>{double(n), spec.h, double(rep.newton_iters),
                                        rep.residual_inf, rep.min_eigen_w,
                                        double(rep.converged), err, order});
    last = rep.u;
    ctx.note("solve " + std::to_string(n) + ": residual " + format_g17(rep.residual_inf));
  }
  table.write(ctx.artifact("solve.csv"));
  write_grid_file(ctx.artifact("solution.grid"), last,
                  fnv1a64({reinterpret_cast<const char*>(last.values().data()),
                           last.values().size() * sizeof(double)}));
  ctx.gate("converged", all_converged);
  if (exact && errs.size() >= 2) {
    double min_order = 1e300;
    for (size_t k = 1; k < errs.size(); ++k)
      min_order = std::min(min_order, std::log(errs[k - 1] / errs[k]) / std::log(hs[k - 1] / hs[k]));
    if (sub.contains("min_order")) ctx.gate("order", min_order >= sub["min_order"].get<double>());
    SvgPlot plot("max error vs spacing", true, true);
    plot.add_series("error", hs, errs, "#c22");
    plot.write(ctx.artifact("convergence.svg"));
  }
}

void run_sections(RunContext& ctx, const GenFun& gf) {
  json sub = ctx.config.value("sections", json::object());
  if (!sub.contains("u")) config_error("sections.u expression is required");
  auto u_fn = expr_function(sub["u"].get<std::string>());
  auto f = sub.contains("f") && sub["f"].is_string()
               ? expr_function(sub["f"].get<std::string>())
               : expr_function(std::to_string(sub.value("f", 1.0)));
  int n = sub.value("grid", 512);
  GridSpec spec = spec_from(sub, n);
  GridFunction u = GridFunction::sample(spec, u_fn);
  Eigen::Vector2d x0 = sub.contains("x0") ? point_from(sub["x0"], "x0") : Eigen::Vector2d(0, 0);
  double lambda = sub.value("lambda", 1.0), Lambda = sub.value("Lambda", 1.0);
  auto hs = log_spaced(sub.value("h_min", 0.004), sub.value("h_max", 0.4), sub.value("h_count", 9));

  SectionEstimates est = verify_section_estimates(u, gf, x0, hs, f, lambda, Lambda);
  CsvTable table({"h", "sup_defect", "area_raw", "nu", "area_tilde", "r1", "rn", "ratio_volume",
                  "ratio_density", "ratio_axes", "ratio_shape", "convexity_defect",
                  "e_eig_ratio"});
  for (const auto& r : est.rows)
    table.add_row(std::array<double, 13>{r.h, r.sup_defect, r.area_raw, r.nu, r.area_tilde, r.r1,
                                         r.rn, r.ratio_volume, r.ratio_density, r.ratio_axes,
                                         r.ratio_shape, r.convexity_defect, r.e_eig_ratio});
  table.write(ctx.artifact("sections.csv"));

  SvgPlot overlay("section boundaries");
  int count = 0;
  for (double h : hs) {
    if (count++ % std::max<size_t>(1, hs.size() / 4) != 0) continue;
    Section s = extract_section(u, gf, x0, h);
    overlay.add_polygon(s.polygon, count % 2 ? "#36c" : "#c63");
  }
  overlay.write(ctx.artifact("sections.svg"));

  SvgPlot ratios("section estimate ratios vs h", true, true);
  std::vector<double> rh, rv, ra;
  for (const auto& r : est.rows) {
    rh.push_back(r.h);
    rv.push_back(r.ratio_volume);
    ra.push_back(r.ratio_axes);
  }
  ratios.add_series("h^n/(area nu)", rh, rv, "#36c");
  ratios.add_series("h^(n/2)/(r1 rn)", rh, ra, "#c63");
  ratios.write(ctx.artifact("section_ratios.svg"));

  ctx.gate("no_ratio_drift", !est.drift_flag);
}

void run_cascade(RunContext& ctx, const GenFun& gf) {
  json sub = ctx.config.value("cascade", json::object());
  if (!sub.contains("boundary") || !sub.contains("f"))
    config_error("cascade needs boundary and f");
  auto bc = expr_function(sub["boundary"].get<std::string>());
  auto f = expr_function(sub["f"].get<std::string>());
  int n = sub.value("grid", 257);
  GridSpec spec = spec_from(sub, n);
  Eigen::Vector2d x0 = sub.contains("x0") ? point_from(sub["x0"], "x0") : Eigen::Vector2d(0, 0);
  double h0 = sub.value("h0", 0.3);
  double tau0 = sub.value("tau0", 0.25);
  int stages = sub.value("stages", 5);

  DirichletProblem prob;
  prob.gf = &gf;
  prob.grid = spec;
  prob.boundary = bc;
  prob.f = f;
  SolveReport global = solve_dirichlet(prob);
  ctx.gate("global_converged", global.converged);

  std::vector<CascadeState> states;
  bool contained = true, x0_in = true;
  for (int k = 0; k < stages; ++k) {
    states.push_back(approximating_problem(global.u, gf, f, x0, k, tau0, h0));
    x0_in = x0_in && states.back().x0_in_v_tau;
    if (k > 0) contained = contained && cascade_containment(states[k - 1], states[k]);
    ctx.note("stage " + std::to_string(k) + ": |D2u_k(x0)| = " +
             format_g17(states.back().d2_x0_norm));
  }
  ctx.gate("stages_nested", contained);
  ctx.gate("x0_in_v_tau", x0_in);

  CsvTable table({"k", "hk", "fk", "omega_k", "d2_x0_norm", "sup_d2_v_tau", "delta_next",
                  "ratio_delta_omega"});
  for (size_t k = 0; k < states.size(); ++k) {
    double delta = std::numeric_limits<double>::quiet_NaN();
    double ratio = std::numeric_limits<double>::quiet_NaN();
    if (k + 1 < states.size()) {
      delta = (states[k].d2_x0 - states[k + 1].d2_x0).lpNorm<Eigen::Infinity>();
      if (states[k].omega_k > 0) ratio = delta / states[k].omega_k;
    }
    table.add_row(std::array<double, 8>{double(states[k].k), states[k].hk, states[k].fk,
                                        states[k].omega_k, states[k].d2_x0_norm,
                                        states[k].sup_d2_v_tau, delta, ratio});
  }
  table.write(ctx.artifact("cascade.csv"));

  SvgPlot trace("second derivative trace across stages");
  std::vector<double> ks, d2s;
  for (const auto& st : states) {
    ks.push_back(st.k);
    d2s.push_back(st.d2_x0_norm);
  }
  trace.add_series("|D2u_k(x0)|", ks, d2s, "#36c");
  trace.add_line(0, states[0].sup_d2_v_tau + 1.0, double(states.size() - 1),
                 states[0].sup_d2_v_tau + 1.0, "#c22");
  trace.write(ctx.artifact("cascade_trace.svg"));
}

void run_exponent(RunContext& ctx, const GenFun& gf) {
  json sub = ctx.config.value("exponent", json::object());
  if (!sub.contains("u")) config_error("exponent.u expression is required");
  auto u_fn = expr_function(sub["u"].get<std::string>());
  int n = sub.value("grid", 257);
  GridSpec spec = spec_from(sub, n);
  GridFunction u = GridFunction::sample(spec, u_fn);
  Eigen::Vector2d x0 = sub.contains("x0") ? point_from(sub["x0"], "x0") : Eigen::Vector2d(0, 0);

  double r_min = sub.value("r_min", 4.0 * spec.h);
  double r_max = sub.value("r_max", std::min(0.5, r_min * std::pow(10.0, 1.5)));
  auto radii = log_spaced(r_min, r_max, sub.value("r_count", 12));
  ExponentFit fit = fit_exponent(u, gf, x0, radii);

  CsvTable table({"r", "sup_defect", "inf_defect"});
  for (size_t k = 0; k < fit.radii.size(); ++k)
    table.add_row(std::array<double, 3>{fit.radii[k], fit.sup_defect[k], fit.inf_defect[k]});
  table.write(ctx.artifact("exponent.csv"));

  json summary{{"alpha_hat", fit.alpha_hat},
               {"gamma_hat", fit.gamma_hat},
               {"r2_sup", fit.r2_sup},
               {"r2_inf", fit.r2_inf}};
  ctx.gate("fit_quality", fit.r2_sup >= 0.99);
  if (sub.contains("expected_alpha")) {
    double tol = sub.value("alpha_tolerance", 0.02);
    ctx.gate("alpha_expected",
             std::abs(fit.alpha_hat - sub["expected_alpha"].get<double>()) <= tol);
  }
  if (sub.contains("p_list")) {
    bool ok = true;
    json pvals = json::array();
    for (const auto& pj : sub["p_list"]) {
      double p = pj.get<double>();
      double sa = sharp_alpha(2, p);
      pvals.push_back({{"p", p}, {"sharp_alpha", sa}});
      ok = ok && (fit.alpha_hat >= sa - 0.02);
    }
    summary["sharp_alpha"] = pvals;
    ctx.gate("alpha_vs_sharp", ok);
  }
  std::ofstream(ctx.artifact("exponent_summary.json")) << summary.dump(2) << "\n";

  SvgPlot plot("support defect vs radius", true, true);
  plot.add_series("sup", fit.radii, fit.sup_defect, "#36c");
  if (fit.inf_positive) plot.add_series("inf", fit.radii, fit.inf_defect, "#c63");
  plot.write(ctx.artifact("exponent_fit.svg"));
}

void run_duality(RunContext& ctx, const GenFun& gf) {
  json sub = ctx.config.value("duality", json::object());
  if (!sub.contains("u")) config_error("duality.u expression is required");
  auto u_fn = expr_function(sub["u"].get<std::string>());
  std::vector<int> grids;
  if (sub.contains("grids"))
    for (const auto& g : sub["grids"]) grids.push_back(g.get<int>());
  else
    grids.push_back(sub.value("grid", 129));

  CsvTable table({"grid", "h", "dual_nodes", "defect", "envelope_gap", "bound_2h"});
  bool defect_ok = true;
  DualFunction last_dual;
  for (int n : grids) {
    GridSpec spec = spec_from(sub, n);
    GridFunction u = GridFunction::sample(spec, u_fn);
    EnvelopeOptions opts;
    opts.dual_nodes = sub.value("dual_nodes", n);
    opts.stride = sub.value("stride", 0);
    if (sub.contains("dual_box")) {
      Interval bx = interval_of(sub["dual_box"][0], "dual_box");
      Interval by = interval_of(sub["dual_box"][1], "dual_box");
      opts.v_lo = {bx.lo, by.lo};
      opts.v_hi = {bx.hi, by.hi};
    }
    DoubleTransformReport rep = double_transform_check(u, gf, opts);
    defect_ok = defect_ok && rep.max_abs_defect <= 2.0 * spec.h;
    table.add_row(std::array<double, 6>{double(n), spec.h, double(opts.dual_nodes),
                                        rep.max_abs_defect, rep.envelope_gap, 2.0 * spec.h});
    last_dual = g_star_transform(u, gf, opts);
    ctx.note("duality " + std::to_string(n) + ": defect " + format_g17(rep.max_abs_defect));
  }
  table.write(ctx.artifact("duality.csv"));
  {
    GridFunction vg(last_dual.grid, last_dual.values);
    write_grid_file(ctx.artifact("dual_function.grid"), vg, last_dual.source_hash);
  }
  ctx.gate("double_transform_defect", defect_ok);

  // z-solve residual spot check
  std::mt19937_64 rng(ctx.seed + 5);
  double worst = 0.0;
  const DomainBox& box = gf.box();
  for (int k = 0; k < 200; ++k) {
    auto xs = box.sample_x(rng, 0.05);
    auto ys = box.sample_y(rng, 0.05);
    double z = box.sample_z(rng, 0.05);
    std::span<const double> xsp(xs.data(), 2), ysp(ys.data(), 2);
    if (box.excluded_by_diagonal(xsp, ysp)) continue;
    Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(xs.data(), 2);
    Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(ys.data(), 2);
    double g = gf.eval(x, y, z);
    double zi = z_inverse(gf, x, y, g);
    worst = std::max(worst, std::abs(gf.eval(x, y, zi) - g));
  }
  ctx.gate("z_inverse_residual", worst <= 1e-12);
}

}  // namespace

int run_experiment_file(const fs::path& config_path, const RunOverrides& overrides) {
  json config;
  GenFun* gf_ptr = nullptr;
  try {
    config = load_json(config_path);
    if (!config.contains("kind")) config_error("config missing 'kind'");
    if (!config.contains("seed") && !overrides.seed)
      config_error("config missing 'seed' (all sampling must be reproducible)");
    if (!config.contains("generating_function"))
      config_error("config missing 'generating_function'");
  } catch (const GjeError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  RunContext ctx;
  ctx.config = config;
  ctx.verbose = overrides.verbose;
  if (overrides.seed) ctx.config["seed"] = *overrides.seed;
  ctx.seed = ctx.config["seed"].get<uint64_t>();
  if (overrides.grid) {
    for (const char* kind : {"solve", "sections", "cascade", "exponent", "duality"})
      if (ctx.config.contains(kind)) ctx.config[kind]["grid"] = *overrides.grid;
  }
  std::string kind = ctx.config["kind"].get<std::string>();

  fs::path out = overrides.out ? *overrides.out
                               : fs::path(ctx.config.value("out", "runs/" + kind));
  ctx.out = out;

  auto wall_start = std::chrono::steady_clock::now();
  int status = 0;
  try {
    fs::create_directories(out);
    fs::path gf_path = ctx.config["generating_function"].get<std::string>();
    if (gf_path.is_relative()) gf_path = config_path.parent_path() / gf_path;
    GenFun gf = load_genfun_file(gf_path);
    gf_ptr = &gf;

    if (kind == "check")
      run_check(ctx, gf);
    else if (kind == "solve")
      run_solve(ctx, gf);
    else if (kind == "sections")
      run_sections(ctx, gf);
    else if (kind == "cascade")
      run_cascade(ctx, gf);
    else if (kind == "exponent")
      run_exponent(ctx, gf);
    else if (kind == "duality")
      run_duality(ctx, gf);
    else
      config_error("unknown kind '" + kind + "'");
  } catch (const GjeError& e) {
    if (e.code() == ErrorCode::ConfigInvalid) {
      std::cerr << e.what() << "\n";
      return 2;
    }
    std::cerr << "run failed: " << e.what() << "\n";
    status = 1;
  }
  (void)gf_ptr;
  double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();

  for (const auto& [name, pass] : ctx.gates)
    if (!pass) status = std::max(status, 1);

  // resolved config + manifest make the run directory self-describing
  std::string resolved = ctx.config.dump(2);
  std::ofstream(ctx.out / "config_resolved.json") << resolved << "\n";
  json manifest{{"kind", kind},
                {"code_version", kVersion},
                {"config_hash", format_g17(double(fnv1a64({resolved.data(), resolved.size()})))},
                {"seed", ctx.seed},
                {"wall_time_s", wall},
                {"exit_status", status},
                {"artifacts", ctx.artifacts}};
  json gates = json::object();
  for (const auto& [name, pass] : ctx.gates) gates[name] = pass;
  manifest["gates"] = gates;
  std::ofstream(ctx.out / "run_manifest.json") << manifest.dump(2) << "\n";
  return status;
}

int run_compare(const fs::path& dir_a, const fs::path& dir_b, bool verbose) {
  json ma, mb;
  try {
    ma = load_json(dir_a / "run_manifest.json");
    mb = load_json(dir_b / "run_manifest.json");
  } catch (const GjeError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  if (ma["kind"] != mb["kind"]) {
    std::cerr << "kind mismatch: " << ma["kind"] << " vs " << mb["kind"] << "\n";
    return 2;
  }
  bool same_config = ma["config_hash"] == mb["config_hash"];

  std::ofstream report(dir_a / "diff_report.txt");
  report << "compare " << dir_a.string() << " vs " << dir_b.string() << "\n";
  report << "kind = " << ma["kind"].get<std::string>() << ", identical config = "
         << (same_config ? "yes" : "no") << "\n";

  int status = 0;
  int diff_lines = 0;
  for (const auto& art : ma["artifacts"]) {
    std::string name = art.get<std::string>();
    if (name.size() < 4 || name.substr(name.size() - 4) != ".csv") continue;
    if (!fs::exists(dir_b / name)) {
      report << name << ": missing in second run\n";
      status = std::max(status, 2);
      continue;
    }
    CsvTable ta = CsvTable::read(dir_a / name);
    CsvTable tb = CsvTable::read(dir_b / name);
    if (ta.columns() != tb.columns()) {
      report << name << ": column mismatch\n";
      status = std::max(status, 2);
      continue;
    }
    if (same_config && ta.rows().size() != tb.rows().size()) {
      report << name << ": row count differs\n";
      status = std::max(status, 1);
      continue;
    }
    double worst = 0.0;
    size_t rows = std::min(ta.rows().size(), tb.rows().size());
    for (size_t r = 0; r < rows; ++r)
      for (size_t c = 0; c < ta.columns().size(); ++c) {
        double a = ta.rows()[r][c], b = tb.rows()[r][c];
        if (std::isnan(a) && std::isnan(b)) continue;
        worst = std::max(worst, std::abs(a - b) / (1.0 + std::abs(a)));
      }
    if (worst > 0) {
      report << name << ": max relative diff " << format_g17(worst) << "\n";
      ++diff_lines;
    }
    if (same_config && worst > 1e-12) status = std::max(status, 1);
  }
  if (diff_lines == 0) report << "(empty diff)\n";

  // Richardson order table for solve studies at different grids
  if (ma["kind"] == "solve" && fs::exists(dir_a / "solve.csv") && fs::exists(dir_b / "solve.csv")) {
    CsvTable ta = CsvTable::read(dir_a / "solve.csv");
    CsvTable tb = CsvTable::read(dir_b / "solve.csv");
    int ch = ta.column_index("h"), ce = ta.column_index("error_inf");
    if (ch >= 0 && ce >= 0 && !ta.rows().empty() && !tb.rows().empty()) {
      double ha = ta.rows().back()[ch], ea = ta.rows().back()[ce];
      double hb = tb.rows().back()[ch], eb = tb.rows().back()[ce];
      if (ha != hb && ea > 0 && eb > 0) {
        double order = std::log(ea / eb) / std::log(ha / hb);
        report << "richardson_order = " << format_g17(order) << "\n";
      }
    }
  }
  if (verbose) std::cout << "diff report written to " << (dir_a / "diff_report.txt") << "\n";
  return status;
}

}  // namespace gjelab
