/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

// Experiment driver for joint regional state and readout estimation:
// single runs, (delta, shot-budget) sweeps, analysis validators, and
// benchmark tables.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qtdm/io.hpp"
#include "qtdm/metrics.hpp"
#include "qtdm/solver.hpp"
#include "qtdm/theory.hpp"
#include "qtdm/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qtdm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitContract = 3;
constexpr int kExitPartial = 4;

int thread_budget() {
  if (const char* env = std::getenv("QTDM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

struct ExperimentConfig {
  std::string geometry = "ring";
  double nu = 0.1;
  std::optional<double> eps;
  std::optional<double> delta_target;
  std::int64_t shots = 10000;
  int seeds = 1;
  std::uint64_t master_seed = 1;
  std::vector<std::string> modes{"ideal", "joint", "oracle"};
  std::string out = "qtdm_out";
  SolverConfig solver;

  double resolve_eps() const {
    if (eps) return *eps;
    if (delta_target) return eps_for_delta_target(*delta_target);
    return eps_for_delta_target(0.08);
  }

  void validate() const {
    if (modes.empty()) throw std::invalid_argument("at least one mode is required");
    if (seeds < 1) throw std::invalid_argument("seeds must be >= 1");
    if (nu < 0.0 || nu >= 1.0) throw std::invalid_argument("nu must be in [0,1)");
    if (shots < 1) throw std::invalid_argument("shots must be >= 1");
    for (const auto& m : modes) (void)mode_from_string(m);
    (void)geometry_from_string(geometry);
  }
};

void apply_config_file(const std::string& path, ExperimentConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  json j;
  f >> j;
  if (j.contains("geometry")) cfg.geometry = j["geometry"].get<std::string>();
  if (j.contains("nu")) cfg.nu = j["nu"].get<double>();
  if (j.contains("eps")) cfg.eps = j["eps"].get<double>();
  if (j.contains("delta")) cfg.delta_target = j["delta"].get<double>();
  if (j.contains("shots")) cfg.shots = j["shots"].get<std::int64_t>();
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<int>();
  if (j.contains("master_seed")) cfg.master_seed = j["master_seed"].get<std::uint64_t>();
  if (j.contains("modes")) cfg.modes = j["modes"].get<std::vector<std::string>>();
  if (j.contains("out")) cfg.out = j["out"].get<std::string>();
  if (j.contains("solver")) solver_config_from_json(j["solver"], cfg.solver);
}

struct ModeOutcome {
  EstimatorMode mode;
  double e_rho = 0.0;
  double e_c = 0.0;
  double r_cons = 0.0;
  double l_bar = 0.0;
  int outer_iterations = 0;
  int subsolver_warnings = 0;
};

json to_json(const ModeOutcome& m) {
  return json{{"mode", to_string(m.mode)},
              {"e_rho", m.e_rho},
              {"e_c", m.e_c},
              {"r_cons", m.r_cons},
              {"l_bar", m.l_bar},
              {"outer_iterations", m.outer_iterations},
              {"subsolver_warnings", m.subsolver_warnings}};
}

// Runs the requested estimator modes on one instance. Estimates are saved
// under dir/<mode>/ when dir is nonempty.
std::vector<ModeOutcome> run_modes(const Instance& inst,
                                   const SolverConfig& base,
                                   const std::vector<std::string>& modes,
                                   const fs::path& dir, bool parallel_regions) {
  std::vector<ModeOutcome> out;
  for (const auto& name : modes) {
    SolverConfig cfg = base;
    cfg.mode = mode_from_string(name);
    cfg.parallel_regions = parallel_regions;
    const EstimateResult res = run_estimator(inst, cfg);
    ModeOutcome mo;
    mo.mode = cfg.mode;
    mo.e_rho = metrics::state_error(res.rho_hat, inst.regional_truths);
    mo.e_c = metrics::confusion_error(res.c_hat, inst.confusions_truth);
    mo.l_bar = res.l_bar;
    mo.outer_iterations = res.outer_iterations;
    mo.subsolver_warnings = res.subsolver_warnings;
    mo.r_cons = res.trace.empty() ? 0.0 : res.trace.back().r_cons;
    if (!dir.empty()) io::save_estimate(res, dir / to_string(cfg.mode));
    out.push_back(mo);
  }
  return out;
}

const ModeOutcome* find_mode(const std::vector<ModeOutcome>& v, EstimatorMode m) {
  for (const auto& mo : v)
    if (mo.mode == m) return &mo;
  return nullptr;
}

json gains_json(const std::vector<ModeOutcome>& outcomes) {
  json j = json::object();
  const auto* i = find_mode(outcomes, EstimatorMode::IdealFixed);
  const auto* jt = find_mode(outcomes, EstimatorMode::Joint);
  const auto* o = find_mode(outcomes, EstimatorMode::OracleFixed);
  if (i && jt && i->e_rho > 0.0)
    j["g_rho"] = metrics::recovery_gain(i->e_rho, jt->e_rho);
  if (i && jt && o && i->e_rho > o->e_rho)
    j["gamma_rho_gap"] = metrics::oracle_gap(i->e_rho, jt->e_rho, o->e_rho);
  return j;
}

int cmd_run(const ExperimentConfig& cfg) {
  const Geometry kind = geometry_from_string(cfg.geometry);
  const RegionGraph graph = build_geometry(kind);
  const double eps = cfg.resolve_eps();
  const Instance inst =
      build_instance(graph, cfg.nu, eps, cfg.shots, cfg.master_seed);

  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  io::save_instance(inst, dir / "instance");

  const bool par = thread_budget() > 1;
  const auto outcomes = run_modes(inst, cfg.solver, cfg.modes, dir, par);

  json man;
  man["format"] = "qtdm-run";
  man["version"] = kVersion;
  man["geometry"] = cfg.geometry;
  man["graph"] = to_json(graph);
  man["nu"] = cfg.nu;
  man["eps"] = eps;
  if (cfg.delta_target) man["delta_target"] = *cfg.delta_target;
  man["delta_c_star"] = inst.delta_c_star;
  man["shots_per_region"] = cfg.shots;
  man["master_seed"] = cfg.master_seed;
  man["seeds"] = io::seed_ledger_to_json(inst.seeds);
  man["solver"] = to_json(cfg.solver);
  man["modes"] = cfg.modes;
  std::ofstream(dir / "manifest.json") << man.dump(2) << "\n";

  json rep;
  rep["format"] = "qtdm-report";
  rep["version"] = kVersion;
  rep["geometry"] = cfg.geometry;
  rep["delta_c_star"] = inst.delta_c_star;
  rep["shots_per_region"] = cfg.shots;
  rep["master_seed"] = cfg.master_seed;
  rep["modes"] = json::array();
  double l_bar = 0.0;
  for (const auto& mo : outcomes) {
    rep["modes"].push_back(to_json(mo));
    if (mo.mode == EstimatorMode::Joint) l_bar = mo.l_bar;
  }
  if (l_bar == 0.0 && !outcomes.empty()) l_bar = outcomes.front().l_bar;
  std::vector<std::int64_t> m_r;
  for (const auto& p : inst.povms) m_r.push_back(p.n_outcomes());
  rep["budgets"] = metrics::to_json(metrics::budgets(graph, m_r, l_bar));
  rep["gains"] = gains_json(outcomes);
  std::ofstream(dir / "report.json") << rep.dump(2) << "\n";

  std::cout << "run written to " << dir.string() << "\n";
  return kExitOk;
}

//-----------------------------------------------------------------------------
// sweep
//-----------------------------------------------------------------------------

struct SweepPoint {
  std::string geometry;
  double eps = 0.0;
  std::int64_t t_tot = 0;
  std::uint64_t seed_index = 0;
};

struct SweepRowSet {
  bool failed = false;
  std::string error;
  double delta_c_star = 0.0;
  std::vector<ModeOutcome> outcomes;
  double g_rho = std::numeric_limits<double>::quiet_NaN();
  double gamma_gap = std::numeric_limits<double>::quiet_NaN();
};

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_sweep(const ExperimentConfig& cfg, std::vector<std::string> geometries,
              std::vector<double> deltas, std::vector<double> eps_grid,
              std::vector<std::int64_t> ttot_grid, int max_points) {
  if (geometries.empty()) geometries = {cfg.geometry};
  std::vector<double> eps_values = eps_grid;
  if (eps_values.empty()) {
    if (deltas.empty()) deltas = {0.0, 0.02, 0.05, 0.08, 0.12};
    for (double d : deltas) eps_values.push_back(eps_for_delta_target(d));
  }
  if (ttot_grid.empty()) ttot_grid = {0};  // 0 = use cfg.shots per region

  std::vector<SweepPoint> points;
  for (const auto& g : geometries)
    for (double e : eps_values)
      for (std::int64_t t : ttot_grid)
        for (int s = 0; s < cfg.seeds; ++s)
          points.push_back({g, e, t, std::uint64_t(s)});
  if (int(points.size()) > max_points) {
    std::cerr << "sweep grid has " << points.size() << " points, cap is "
              << max_points << "\n";
    return kExitConfig;
  }

  std::vector<SweepRowSet> results(points.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::min<int>(thread_budget(), int(points.size()));
  auto worker = [&]() {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= points.size()) return;
      const SweepPoint& pt = points[idx];
      SweepRowSet& slot = results[idx];
      try {
        const RegionGraph graph = build_geometry(geometry_from_string(pt.geometry));
        std::int64_t shots = cfg.shots;
        if (pt.t_tot > 0) shots = std::max<std::int64_t>(1, pt.t_tot / graph.n_regions());
        const std::uint64_t seed =
            derive_seed(cfg.master_seed, pt.geometry + "/sweep", pt.seed_index);
        const Instance inst = build_instance(graph, cfg.nu, pt.eps, shots, seed);
        slot.delta_c_star = inst.delta_c_star;
        slot.outcomes = run_modes(inst, cfg.solver, cfg.modes, fs::path(), false);
        const auto* i = find_mode(slot.outcomes, EstimatorMode::IdealFixed);
        const auto* j = find_mode(slot.outcomes, EstimatorMode::Joint);
        const auto* o = find_mode(slot.outcomes, EstimatorMode::OracleFixed);
        if (i && j && i->e_rho > 0.0)
          slot.g_rho = metrics::recovery_gain(i->e_rho, j->e_rho);
        if (i && j && o && i->e_rho > o->e_rho)
          slot.gamma_gap = metrics::oracle_gap(i->e_rho, j->e_rho, o->e_rho);
      } catch (const std::exception& ex) {
        slot.failed = true;
        slot.error = ex.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  fs::create_directories(fs::path(cfg.out));
  {
    json man;
    man["format"] = "qtdm-sweep";
    man["version"] = kVersion;
    man["geometries"] = geometries;
    man["eps_grid"] = eps_values;
    if (!deltas.empty()) man["delta_grid"] = deltas;
    man["ttot_grid"] = ttot_grid;
    man["seeds"] = cfg.seeds;
    man["master_seed"] = cfg.master_seed;
    man["nu"] = cfg.nu;
    man["modes"] = cfg.modes;
    man["solver"] = to_json(cfg.solver);
    std::ofstream(fs::path(cfg.out) / "sweep_manifest.json") << man.dump(2) << "\n";
  }
  const fs::path csv_path = fs::path(cfg.out) / "sweep.csv";
  std::ofstream csv(csv_path);
  csv << "geometry,eps,delta_c_star,t_tot,seed,mode,e_rho,e_c,g_rho,"
         "gamma_rho_gap,l_bar,c_bud,w_bud\n";
  char line[512];
  bool any_failed = false;

  // Per-seed rows in canonical order, then one median row per grid point.
  std::size_t idx = 0;
  for (const auto& g : geometries)
    for (double e : eps_values)
      for (std::int64_t t : ttot_grid) {
        std::map<std::string, std::vector<double>> med_e, med_ec;
        std::vector<double> med_g, med_gam;
        std::int64_t t_tot_actual = 0;
        for (int s = 0; s < cfg.seeds; ++s, ++idx) {
          const SweepRowSet& slot = results[idx];
          const RegionGraph graph = build_geometry(geometry_from_string(g));
          std::int64_t shots = cfg.shots;
          if (t > 0) shots = std::max<std::int64_t>(1, t / graph.n_regions());
          t_tot_actual = shots * graph.n_regions();
          if (slot.failed) {
            any_failed = true;
            csv << g << "," << e << ",," << t_tot_actual << "," << s
                << ",error,,,,,,,\n";
            continue;
          }
          std::vector<std::int64_t> m_r;
          for (const auto& reg : graph.regions)
            m_r.push_back(std::int64_t(1) << (2 * int(reg.size())));
          for (const auto& mo : slot.outcomes) {
            const auto bud = metrics::budgets(graph, m_r, mo.l_bar);
            const bool is_joint = mo.mode == EstimatorMode::Joint;
            std::snprintf(line, sizeof(line),
                          "%s,%.10g,%.10g,%lld,%d,%s,%.10g,%.10g,%.10g,%.10g,"
                          "%.10g,%.10g,%.10g\n",
                          g.c_str(), e, slot.delta_c_star,
                          static_cast<long long>(t_tot_actual), s,
                          to_string(mo.mode).c_str(), mo.e_rho, mo.e_c,
                          is_joint ? slot.g_rho : std::numeric_limits<double>::quiet_NaN(),
                          is_joint ? slot.gamma_gap : std::numeric_limits<double>::quiet_NaN(),
                          mo.l_bar, bud.c_bud, bud.w_bud);
            csv << line;
            med_e[to_string(mo.mode)].push_back(mo.e_rho);
            med_ec[to_string(mo.mode)].push_back(mo.e_c);
          }
          if (!std::isnan(slot.g_rho)) med_g.push_back(slot.g_rho);
          if (!std::isnan(slot.gamma_gap)) med_gam.push_back(slot.gamma_gap);
        }
        for (const auto& [mode_name, es] : med_e) {
          const bool is_joint = mode_name == "joint";
          std::snprintf(line, sizeof(line),
                        "%s,%.10g,,%lld,median,%s,%.10g,%.10g,%.10g,%.10g,,,\n",
                        g.c_str(), e, static_cast<long long>(t_tot_actual),
                        mode_name.c_str(), median(es), median(med_ec[mode_name]),
                        is_joint ? median(med_g) : std::numeric_limits<double>::quiet_NaN(),
                        is_joint ? median(med_gam) : std::numeric_limits<double>::quiet_NaN());
          csv << line;
        }
      }
  std::cout << "sweep written to " << csv_path.string() << "\n";
  return any_failed ? kExitPartial : kExitOk;
}

//-----------------------------------------------------------------------------
// theory
//-----------------------------------------------------------------------------

int cmd_theory(const ExperimentConfig& cfg) {
  fs::create_directories(fs::path(cfg.out));
  json out;
  out["format"] = "qtdm-theory";
  out["version"] = kVersion;
  bool hard_fail = false;

  // Interior fixture: two overlapping 2-qubit regions.
  const Instance fix = build_instance(make_region_graph(3, {{0, 1}, {1, 2}}),
                                      cfg.nu, 0.05, 800, cfg.master_seed, 0.1);

  // Identifiability spectra for both confusion parameterizations.
  for (auto param : {theory::ConfusionParam::Full, theory::ConfusionParam::Tensor}) {
    theory::LinearizedModel model = theory::tangent_basis(fix, param);
    theory::linearized_map(fix, model);
    const auto rep = theory::identifiability_report(fix, model);
    out["identifiability"][theory::to_string(param)] = theory::to_json(rep);
    if (rep.kernel_dim + rep.rank != rep.tangent_dim) hard_fail = true;

    // Growth probes along the best-identified direction and, when present,
    // a kernel direction (the latter is informational: it documents the
    // directions in which quadratic growth fails).
    Eigen::BDCSVD<RealMatrix> svd(model.map, Eigen::ComputeFullV);
    const auto top = theory::quadratic_growth_probe(
        fix, model, svd.matrixV().col(0), {1e-2, 1e-3, 1e-4}, rep.sigma_min,
        rep.kappa);
    out["growth_probe"][theory::to_string(param)]["top_direction"] =
        theory::to_json(top);
    if (rep.kernel_dim > 0) {
      const auto ker = theory::quadratic_growth_probe(
          fix, model, svd.matrixV().col(svd.matrixV().cols() - 1),
          {1e-2, 1e-3, 1e-4}, rep.sigma_min, rep.kappa);
      json jker = theory::to_json(ker);
      jker["flag"] = "no quadratic growth along kernel directions";
      out["growth_probe"][theory::to_string(param)]["kernel_direction"] = jker;
    }

    // Finite-difference decay of the linearization remainder: halving t
    // quarters the remainder (hard contract).
    Rng rng(17);
    int fd_pass = 0, fd_total = 0;
    for (int trial = 0; trial < 20; ++trial) {
      RealVector v(model.tangent_dim());
      for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.next_normal();
      v.normalize();
      const RealVector flat = model.basis * v;
      const RealVector lin = model.map * v;
      auto pred = [&](double t) {
        std::vector<double> stk;
        for (int r = 0; r < fix.n_regions(); ++r) {
          const ComplexMatrix rho_t = fix.regional_truths[std::size_t(r)].mat +
                                      t * model.state_part(flat, r);
          const RealMatrix c_t =
              fix.confusions_truth[std::size_t(r)].m +
              t * model.conf_part(flat, r, fix.povms[std::size_t(r)].n_outcomes());
          const RealVector p =
              c_t * (born_matrix(fix.povms[std::size_t(r)]) * herm_to_vec(rho_t));
          stk.insert(stk.end(), p.data(), p.data() + p.size());
        }
        return RealVector(Eigen::Map<RealVector>(stk.data(), Eigen::Index(stk.size())));
      };
      const RealVector base = pred(0.0);
      const double r1 = (pred(1e-3) - base - 1e-3 * lin).norm();
      const double r2 = (pred(5e-4) - base - 5e-4 * lin).norm();
      if (r2 <= 0.0) continue;
      ++fd_total;
      if (std::abs(r1 / r2 - 4.0) < 0.5) ++fd_pass;
    }
    out["finite_difference"][theory::to_string(param)] = {
        {"pass", fd_pass}, {"total", fd_total}};
    if (fd_pass != fd_total) hard_fail = true;
  }

  // Likelihood identity on 50 random interior fixtures (hard contract).
  {
    int pass = 0;
    const Povm povm = tensor_povm(2);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      Rng rng(derive_seed(cfg.master_seed, "kl", std::uint64_t(trial)));
      ComplexMatrix a(4, 4);
      for (Eigen::Index jj = 0; jj < 4; ++jj)
        for (Eigen::Index ii = 0; ii < 4; ++ii)
          a(ii, jj) = Complex(rng.next_normal(), rng.next_normal());
      ComplexMatrix w = a * a.adjoint();
      w /= w.trace().real();
      const DensityMatrix rho = DensityMatrix::trusted({0, 1}, std::move(w));
      ConfusionMatrix c = gen_confusion(16, 0.06, derive_seed(cfg.master_seed, "klc",
                                                              std::uint64_t(trial)));
      c.m = 0.85 * c.m + 0.15 * RealMatrix::Constant(16, 16, 1.0 / 16.0);
      const RealVector noisy = c.m * born(rho, povm).p;
      const auto shots = sample_shots(ProbabilityVector::from(noisy), 2000,
                                      derive_seed(cfg.master_seed, "kls",
                                                  std::uint64_t(trial)));
      const double rel = theory::kl_mle_identity_check(shots.counts, rho, povm, c);
      worst = std::max(worst, rel);
      if (rel < 1e-9) ++pass;
    }
    out["kl_identity"] = {{"pass", pass}, {"total", 50}, {"worst_rel", worst}};
    if (pass != 50) hard_fail = true;
  }

  // Parameter/communication scaling bounds on the four geometries (hard).
  for (const char* name : {"ring", "ladder", "torus", "hub"}) {
    const RegionGraph g = build_geometry(geometry_from_string(name));
    std::vector<std::int64_t> m_r;
    for (const auto& reg : g.regions)
      m_r.push_back(std::int64_t(1) << (2 * int(reg.size())));
    const auto rep = metrics::scaling_bounds_check(g, m_r, 1);
    json lines = json::array();
    for (const auto& l : rep.lines)
      lines.push_back({{"name", l.name}, {"holds", l.holds}, {"lhs", l.lhs},
                       {"rhs", l.rhs}});
    out["scaling_bounds"][name] = {{"ok", rep.ok}, {"lines", lines}};
    if (!rep.ok) hard_fail = true;
  }

  out["hard_contracts_ok"] = !hard_fail;
  std::ofstream(fs::path(cfg.out) / "theory.json") << out.dump(2) << "\n";
  std::cout << "theory report written to "
            << (fs::path(cfg.out) / "theory.json").string() << "\n";
  return hard_fail ? kExitContract : kExitOk;
}

//-----------------------------------------------------------------------------
// report
//-----------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_prefix) {
  struct GeoAgg {
    int q = 0, r = 0, q_ov = 0;
    std::vector<double> e_i, e_j, e_o, e_c_j, g, gam, c_bud, w_bud;
    bool incomplete = false;
  };
  std::map<std::string, GeoAgg> agg;

  for (const auto& dir : run_dirs) {
    std::ifstream f(fs::path(dir) / "report.json");
    if (!f) {
      std::cerr << "missing report.json in " << dir << "\n";
      return kExitConfig;
    }
    json rep;
    f >> rep;
    const std::string geo = rep.at("geometry").get<std::string>();
    GeoAgg& a = agg[geo];
    const RegionGraph g = build_geometry(geometry_from_string(geo));
    a.q = g.n_sites;
    a.r = g.n_regions();
    a.q_ov = int(g.overlaps.front().shared.size());
    bool has_i = false, has_j = false, has_o = false;
    for (const auto& mo : rep.at("modes")) {
      const std::string m = mo.at("mode").get<std::string>();
      if (m == "ideal") {
        a.e_i.push_back(mo.at("e_rho").get<double>());
        has_i = true;
      } else if (m == "joint") {
        a.e_j.push_back(mo.at("e_rho").get<double>());
        a.e_c_j.push_back(mo.at("e_c").get<double>());
        has_j = true;
      } else if (m == "oracle") {
        a.e_o.push_back(mo.at("e_rho").get<double>());
        has_o = true;
      }
    }
    a.incomplete = a.incomplete || !(has_i && has_j && has_o);
    if (rep.contains("gains")) {
      if (rep["gains"].contains("g_rho"))
        a.g.push_back(rep["gains"]["g_rho"].get<double>());
      if (rep["gains"].contains("gamma_rho_gap"))
        a.gam.push_back(rep["gains"]["gamma_rho_gap"].get<double>());
    }
    if (rep.contains("budgets")) {
      a.c_bud.push_back(rep["budgets"]["c_bud"].get<double>());
      a.w_bud.push_back(rep["budgets"]["w_bud"].get<double>());
    }
  }

  const fs::path csv_path = out_prefix + ".csv";
  const fs::path txt_path = out_prefix + ".txt";
  std::ofstream csv(csv_path);
  std::ofstream txt(txt_path);
  csv << "geometry,q,R,q_ov,e_rho_ideal,e_rho_joint,e_rho_oracle,e_c_joint,"
         "g_rho,gamma_rho_gap,c_bud,w_bud,status\n";
  char line[512];
  std::snprintf(line, sizeof(line), "%-8s %3s %3s %5s %8s %8s %8s %8s %7s %7s %11s %11s\n",
                "geometry", "q", "R", "q_ov", "e_rho_I", "e_rho_J", "e_rho_O",
                "e_C_J", "G_rho", "Gamma", "C_bud", "W_bud");
  txt << line;
  for (const auto& [geo, a] : agg) {
    std::snprintf(line, sizeof(line),
                  "%s,%d,%d,%d,%.3f,%.3f,%.3f,%.3f,%.1f,%.1f,%.6g,%.6g,%s\n",
                  geo.c_str(), a.q, a.r, a.q_ov, median(a.e_i), median(a.e_j),
                  median(a.e_o), median(a.e_c_j), median(a.g), median(a.gam),
                  median(a.c_bud), median(a.w_bud),
                  a.incomplete ? "incomplete" : "ok");
    csv << line;
    std::snprintf(line, sizeof(line),
                  "%-8s %3d %3d %5d %8.3f %8.3f %8.3f %8.3f %7.1f %7.1f %11.4g %11.4g%s\n",
                  geo.c_str(), a.q, a.r, a.q_ov, median(a.e_i), median(a.e_j),
                  median(a.e_o), median(a.e_c_j), median(a.g), median(a.gam),
                  median(a.c_bud), median(a.w_bud),
                  a.incomplete ? "  [incomplete]" : "");
    txt << line;
  }
  std::cout << "report written to " << csv_path.string() << " and "
            << txt_path.string() << "\n";
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint regional quantum state tomography with readout errors"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_file;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config file (flags override)");
    sub->add_option("--geometry", cfg.geometry, "ring|ladder|torus|hub");
    sub->add_option("--nu", cfg.nu, "mixing weight of the global state");
    sub->add_option("--eps", [&cfg](const std::vector<std::string>& v) {
      cfg.eps = std::stod(v.front());
      return true;
    }, "confusion perturbation scale");
    sub->add_option("--delta", [&cfg](const std::vector<std::string>& v) {
      cfg.delta_target = std::stod(v.front());
      return true;
    }, "target deviation from ideal readout (calibrated to eps)");
    sub->add_option("--shots", cfg.shots, "shots per region");
    sub->add_option("--seeds", cfg.seeds, "number of seeds");
    sub->add_option("--master-seed", cfg.master_seed, "master seed");
    sub->add_option("--modes", cfg.modes, "estimator modes: ideal joint oracle");
    sub->add_option("--out", cfg.out, "output directory");
    sub->add_option("--beta", cfg.solver.beta, "ADMM penalty");
    sub->add_option("--gamma-rho", cfg.solver.gamma_rho, "state proximal weight");
    sub->add_option("--gamma-c", cfg.solver.gamma_c, "confusion proximal weight");
    sub->add_option("--lambda", cfg.solver.lambda, "readout regularization");
    sub->add_option("--inner-tol", cfg.solver.inner_tol, "inner consensus tolerance");
    sub->add_option("--inner-max", cfg.solver.inner_max, "inner iteration cap");
    sub->add_option("--outer-tol", cfg.solver.outer_tol, "outer change tolerance");
    sub->add_option("--outer-max", cfg.solver.outer_max, "outer iteration cap");
  };

  CLI::App* run = app.add_subcommand("run", "build one instance and run the estimators");
  add_common(run);

  CLI::App* sweep = app.add_subcommand("sweep", "grid over readout deviation and shot budget");
  add_common(sweep);
  std::vector<std::string> sweep_geoms;
  std::vector<double> sweep_deltas, sweep_eps;
  std::vector<std::int64_t> sweep_ttot;
  int sweep_cap = 4096;
  sweep->add_option("--geometries", sweep_geoms, "geometries to sweep");
  sweep->add_option("--delta-grid", sweep_deltas, "target delta grid");
  sweep->add_option("--eps-grid", sweep_eps, "eps grid (overrides delta grid)");
  sweep->add_option("--ttot-grid", sweep_ttot, "total shot budgets");
  sweep->add_option("--max-points", sweep_cap, "sweep grid budget");

  CLI::App* theory_cmd = app.add_subcommand("theory", "run the analysis validators");
  add_common(theory_cmd);

  CLI::App* report = app.add_subcommand("report", "aggregate run directories into a benchmark table");
  std::vector<std::string> run_dirs;
  std::string report_prefix = "benchmark";
  report->add_option("dirs", run_dirs, "run directories")->required();
  report->add_option("--out-prefix", report_prefix, "output file prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    // Flags override the config file: parse the file first, then re-parse
    // the command line on top of it.
    if (!config_file.empty()) {
      apply_config_file(config_file, cfg);
      CLI11_PARSE(app, argc, argv);
    }
    cfg.solver.validate();
    if (!report->parsed()) cfg.validate();
    if (run->parsed()) return cmd_run(cfg);
    if (sweep->parsed())
      return cmd_sweep(cfg, sweep_geoms, sweep_deltas, sweep_eps, sweep_ttot,
                       sweep_cap);
    if (theory_cmd->parsed()) return cmd_theory(cfg);
    if (report->parsed()) return cmd_report(run_dirs, report_prefix);
  } catch (const std::invalid_argument& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitContract;
  }
  return kExitConfig;
}
