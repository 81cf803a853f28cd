/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtdm/instance.hpp"
#include "qtdm/qmat.hpp"

namespace qtdm {

enum class EstimatorMode { IdealFixed, Joint, OracleFixed };

inline std::string to_string(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::IdealFixed: return "ideal";
    case EstimatorMode::Joint: return "joint";
    case EstimatorMode::OracleFixed: return "oracle";
  }
  return "?";
}

inline EstimatorMode mode_from_string(const std::string& s) {
  if (s == "ideal" || s == "I") return EstimatorMode::IdealFixed;
  if (s == "joint" || s == "J") return EstimatorMode::Joint;
  if (s == "oracle" || s == "O") return EstimatorMode::OracleFixed;
  throw std::invalid_argument("unknown estimator mode: " + s);
}

struct SolverConfig {
  double beta = 1.0;        // ADMM penalty
  double gamma_rho = 0.1;   // state proximal weight
  double gamma_c = 0.1;     // confusion proximal weight
  double lambda = 1e-2;     // readout regularization
  double inner_tol = 1e-6;  // consensus residual threshold, scaled by sqrt(dim)
  int inner_max = 200;
  double outer_tol = 1e-5;  // combined iterate change
  int outer_max = 120;
  double subsolver_tol = 1e-9;  // relative objective change in the per-region solves
  int subsolver_max = 500;
  EstimatorMode mode = EstimatorMode::Joint;
  // Reference confusion matrices for the regularizer; identity when empty.
  std::vector<RealMatrix> reference_confusions;
  bool parallel_regions = false;  // must reproduce the sequential schedule exactly

  void validate() const {
    if (beta <= 0.0) throw std::invalid_argument("SolverConfig: beta must be > 0");
    if (gamma_rho < 0.0 || gamma_c < 0.0 || lambda < 0.0)
      throw std::invalid_argument("SolverConfig: negative weight");
    if (inner_tol <= 0.0 || outer_tol <= 0.0 || subsolver_tol <= 0.0)
      throw std::invalid_argument("SolverConfig: tolerances must be > 0");
    if (inner_max < 1 || outer_max < 0 || subsolver_max < 1)
      throw std::invalid_argument("SolverConfig: iteration caps out of range");
  }
};

inline nlohmann::json to_json(const SolverConfig& c) {
  return nlohmann::json{{"beta", c.beta},
                        {"gamma_rho", c.gamma_rho},
                        {"gamma_c", c.gamma_c},
                        {"lambda", c.lambda},
                        {"inner_tol", c.inner_tol},
                        {"inner_max", c.inner_max},
                        {"outer_tol", c.outer_tol},
                        {"outer_max", c.outer_max},
                        {"subsolver_tol", c.subsolver_tol},
                        {"subsolver_max", c.subsolver_max},
                        {"mode", to_string(c.mode)}};
}

inline void solver_config_from_json(const nlohmann::json& j, SolverConfig& c) {
  if (j.contains("beta")) c.beta = j["beta"].get<double>();
  if (j.contains("gamma_rho")) c.gamma_rho = j["gamma_rho"].get<double>();
  if (j.contains("gamma_c")) c.gamma_c = j["gamma_c"].get<double>();
  if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
  if (j.contains("inner_tol")) c.inner_tol = j["inner_tol"].get<double>();
  if (j.contains("inner_max")) c.inner_max = j["inner_max"].get<int>();
  if (j.contains("outer_tol")) c.outer_tol = j["outer_tol"].get<double>();
  if (j.contains("outer_max")) c.outer_max = j["outer_max"].get<int>();
  if (j.contains("subsolver_tol")) c.subsolver_tol = j["subsolver_tol"].get<double>();
  if (j.contains("subsolver_max")) c.subsolver_max = j["subsolver_max"].get<int>();
  if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
}

//=============================================================================
// Per-iteration trace
//=============================================================================

struct TraceRow {
  int k = 0;
  int l = 0;
  double r_cons = 0.0;
  double objective = 0.0;
  std::int64_t wall_ns = 0;
  // Feasibility diagnostics for auditing the iterates.
  double dual_asym = 0.0;   // max over pairs of max|lam_ab + lam_ba|
  double herm_err = 0.0;    // max over regions of max|rho - rho^H|
  double trace_err = 0.0;   // max over regions of |Tr rho - 1|
  double min_eig = 0.0;     // min over regions of the smallest eigenvalue
  double colsum_err = 0.0;  // max over regions/columns of |1^T C - 1|
  int subsolver_warnings = 0;
};

//=============================================================================
// Solver state
//=============================================================================

struct OverlapVars {
  ComplexMatrix z;       // consensus variable on the shared subsystem
  ComplexMatrix lam_ab;  // dual for the (a -> shared) constraint
  ComplexMatrix lam_ba;  // dual for the (b -> shared) constraint
};

struct SolverState {
  int k = 0;
  std::vector<DensityMatrix> rho;
  std::vector<ConfusionMatrix> confusion;
  std::vector<OverlapVars> overlap;
  std::vector<TraceRow> trace;
};

//=============================================================================
// Explicit ADMM update formulas
//=============================================================================

// z = (reduced_a + reduced_b + (lam_ab + lam_ba)/beta) / 2
inline ComplexMatrix consensus_update(const ComplexMatrix& reduced_a,
                                      const ComplexMatrix& reduced_b,
                                      const ComplexMatrix& lam_ab,
                                      const ComplexMatrix& lam_ba, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("consensus_update: beta must be > 0");
  if (reduced_a.rows() != reduced_b.rows() || reduced_a.rows() != lam_ab.rows() ||
      reduced_a.rows() != lam_ba.rows())
    throw std::invalid_argument("consensus_update: dimension mismatch");
  return 0.5 * (reduced_a + reduced_b + (lam_ab + lam_ba) / beta);
}

// lam' = lam + beta * (reduced - z)
inline ComplexMatrix dual_update(const ComplexMatrix& lam,
                                 const ComplexMatrix& reduced,
                                 const ComplexMatrix& z, double beta) {
  if (lam.rows() != reduced.rows() || lam.rows() != z.rows())
    throw std::invalid_argument("dual_update: dimension mismatch");
  return lam + beta * (reduced - z);
}

//=============================================================================
// Objectives
//=============================================================================

// sum_r [ 1/2 ||pi_hat_r - C_r pi_r(rho_r)||^2 + gamma/2 ||rho_r - anchor_r||_F^2 ]
inline double state_objective(const std::vector<DensityMatrix>& rhos,
                              const std::vector<ConfusionMatrix>& confusions,
                              const std::vector<DensityMatrix>& anchors,
                              double gamma_rho,
                              const std::vector<ProbabilityVector>& empirical,
                              const std::vector<Povm>& povms) {
  const std::size_t n = rhos.size();
  if (confusions.size() != n || anchors.size() != n || empirical.size() != n ||
      povms.size() != n)
    throw std::invalid_argument("state_objective: region count mismatch");
  double acc = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (rhos[r].dim() != povms[r].dim || anchors[r].dim() != rhos[r].dim() ||
        confusions[r].size() != povms[r].n_outcomes() ||
        empirical[r].size() != povms[r].n_outcomes())
      throw std::invalid_argument("state_objective: dimension mismatch in region " +
                                  std::to_string(r));
    const RealVector pred = confusions[r].m * born(rhos[r], povms[r]).p;
    acc += 0.5 * (empirical[r].p - pred).squaredNorm();
    acc += 0.5 * gamma_rho * (rhos[r].mat - anchors[r].mat).squaredNorm();
  }
  return acc;
}

//=============================================================================
// Accelerated projected gradient on quadratic models
//=============================================================================

namespace detail {

// f(x) = 1/2 x^T H x + b^T x + c0 over the density-matrix set (in the
// isometric Hermitian coordinates).
struct StateQp {
  const RealMatrix* H = nullptr;
  RealVector b;
  double c0 = 0.0;
  double L = 1.0;
  Eigen::Index d = 0;  // matrix dimension (coords have size d*d)

  double value(const RealVector& x, RealVector& hx_scratch) const {
    hx_scratch.noalias() = (*H) * x;
    return 0.5 * x.dot(hx_scratch) + b.dot(x) + c0;
  }
};

inline RealVector project_density_coords(const RealVector& x, Eigen::Index d) {
  return herm_to_vec(project_density_matrix(vec_to_herm(x, d)));
}

// Monotone FISTA with function-value restart. Returns the best iterate seen,
// so the result never exceeds the warm-start objective.
inline RealVector fista_state(const StateQp& qp, const RealVector& warm,
                              double tol, int max_iter, bool* warned,
                              int* iters_used = nullptr) {
  RealVector scratch(warm.size());
  RealVector x_prev = project_density_coords(warm, qp.d);
  double f_prev = qp.value(x_prev, scratch);
  RealVector x_best = x_prev;
  double f_best = f_prev;
  RealVector y = x_prev;
  double t = 1.0;
  bool converged = false;
  int it = 0;
  for (it = 0; it < max_iter; ++it) {
    scratch.noalias() = (*qp.H) * y;
    RealVector x_new = project_density_coords(y - (scratch + qp.b) / qp.L, qp.d);
    double f_new = qp.value(x_new, scratch);
    if (f_new > f_prev) {
      // Momentum overshoot: restart with a plain projected-gradient step,
      // which cannot increase the objective for step 1/L.
      scratch.noalias() = (*qp.H) * x_prev;
      x_new = project_density_coords(x_prev - (scratch + qp.b) / qp.L, qp.d);
      f_new = qp.value(x_new, scratch);
      t = 1.0;
    }
    if (f_new < f_best) {
      f_best = f_new;
      x_best = x_new;
    }
    const double rel = std::abs(f_new - f_prev) / std::max(1.0, std::abs(f_new));
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x_new + ((t - 1.0) / t_next) * (x_new - x_prev);
    x_prev = std::move(x_new);
    f_prev = f_new;
    t = t_next;
    if (rel < tol) {
      converged = true;
      break;
    }
  }
  if (!converged && warned) *warned = true;
  if (iters_used) *iters_used = it + 1;
  return x_best;
}

// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_lambda_max(const RealMatrix& h, double tol = 1e-6,
                               int max_iter = 500) {
  const Eigen::Index n = h.rows();
  RealVector v = RealVector::Ones(n) / std::sqrt(double(n));
  // Deterministic tie-breaking perturbation.
  for (Eigen::Index i = 0; i < n; ++i) v[i] += 1e-3 * double((i % 7) + 1);
  v.normalize();
  double lam = 0.0;
  RealVector w(n);
  for (int it = 0; it < max_iter; ++it) {
    w.noalias() = h * v;
    const double lam_new = v.dot(w);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    if (std::abs(lam_new - lam) <= tol * std::max(1.0, std::abs(lam_new))) {
      lam = lam_new;
      break;
    }
    lam = lam_new;
  }
  return lam;
}

} // namespace detail

//=============================================================================
// Public per-region solves
//=============================================================================

// One overlap term seen from a single region: its dual and the consensus
// target on the shared sites.
struct RegionOverlapTerm {
  std::vector<int> shared_sites;
  ComplexMatrix lambda;
  ComplexMatrix z;
};

// Approximately minimizes
//   1/2 ||pi_hat - C pi(rho)||^2 + gamma/2 ||rho - anchor||_F^2
//   + sum_ov [ <lambda, rho[ov] - z> + beta/2 ||rho[ov] - z||_F^2 ]
// over the density matrices, by accelerated projected gradient.
inline DensityMatrix solve_state_subproblem(
    const DensityMatrix& warm, const ConfusionMatrix& c, const Povm& povm,
    const ProbabilityVector& empirical, const DensityMatrix& anchor,
    const std::vector<RegionOverlapTerm>& overlaps, const SolverConfig& cfg,
    bool* warned = nullptr) {
  cfg.validate();
  if (warm.dim() != povm.dim || anchor.dim() != warm.dim())
    throw std::invalid_argument("solve_state_subproblem: dimension mismatch");
  if (c.size() != povm.n_outcomes() || empirical.size() != povm.n_outcomes())
    throw std::invalid_argument("solve_state_subproblem: outcome count mismatch");

  const Eigen::Index d = warm.dim();
  const RealMatrix s = born_matrix(povm);
  const RealMatrix a = c.m * s;
  RealMatrix h = a.transpose() * a;
  h.diagonal().array() += cfg.gamma_rho;

  const RealVector x_anchor = herm_to_vec(anchor.mat);
  RealVector b = -(a.transpose() * empirical.p) - cfg.gamma_rho * x_anchor;
  double c0 = 0.5 * empirical.p.squaredNorm() +
              0.5 * cfg.gamma_rho * x_anchor.squaredNorm();
  for (const auto& ov : overlaps) {
    const RealMatrix p = partial_trace_matrix(warm.sites, ov.shared_sites);
    h.noalias() += cfg.beta * (p.transpose() * p);
    const RealVector lam_v = herm_to_vec(symmetrize(ov.lambda));
    const RealVector z_v = herm_to_vec(symmetrize(ov.z));
    b.noalias() += p.transpose() * (lam_v - cfg.beta * z_v);
    c0 += -lam_v.dot(z_v) + 0.5 * cfg.beta * z_v.squaredNorm();
  }

  detail::StateQp qp;
  qp.H = &h;
  qp.b = std::move(b);
  qp.c0 = c0;
  qp.L = detail::power_lambda_max(h) * 1.02 + 1e-12;
  qp.d = d;
  const RealVector x = detail::fista_state(qp, herm_to_vec(warm.mat),
                                           cfg.subsolver_tol, cfg.subsolver_max,
                                           warned);
  return DensityMatrix::trusted(warm.sites, vec_to_herm(x, d));
}

// Approximately minimizes
//   1/2 ||pi_hat - C p||^2 + lambda ||C - Cbar||_F^2 + gamma_c/2 ||C - Ck||_F^2
// over column-stochastic matrices. p is the ideal outcome distribution of the
// fixed state iterate. Step size 1/L with L = ||p||^2 + 2 lambda + gamma_c,
// the exact Lipschitz constant of the gradient.
inline ConfusionMatrix confusion_update(const RealVector& p,
                                        const ProbabilityVector& empirical,
                                        const ConfusionMatrix& anchor,
                                        const ConfusionMatrix& reference,
                                        double lambda, double gamma_c,
                                        double tol, int max_iter,
                                        bool* warned = nullptr) {
  const Eigen::Index m = p.size();
  if (empirical.size() != m || anchor.size() != m || reference.size() != m)
    throw std::invalid_argument("confusion_update: dimension mismatch");
  const double lip = p.squaredNorm() + 2.0 * lambda + gamma_c;
  const double step = 1.0 / std::max(lip, 1e-300);

  auto project_cols = [](RealMatrix x) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x.col(j) = project_simplex(x.col(j));
    return x;
  };
  auto value = [&](const RealMatrix& x) {
    return 0.5 * (empirical.p - x * p).squaredNorm() +
           lambda * (x - reference.m).squaredNorm() +
           0.5 * gamma_c * (x - anchor.m).squaredNorm();
  };
  auto gradient = [&](const RealMatrix& x) {
    return ((x * p - empirical.p) * p.transpose() +
            2.0 * lambda * (x - reference.m) + gamma_c * (x - anchor.m))
        .eval();
  };

  RealMatrix x_prev = anchor.m;
  double f_prev = value(x_prev);
  RealMatrix x_best = x_prev;
  double f_best = f_prev;
  RealMatrix y = x_prev;
  double t = 1.0;
  bool converged = false;
  for (int it = 0; it < max_iter; ++it) {
    RealMatrix x_new = project_cols(y - step * gradient(y));
    double f_new = value(x_new);
    if (f_new > f_prev) {
      x_new = project_cols(x_prev - step * gradient(x_prev));
      f_new = value(x_new);
      t = 1.0;
    }
    if (f_new < f_best) {
      f_best = f_new;
      x_best = x_new;
    }
    const double rel = std::abs(f_new - f_prev) / std::max(1.0, std::abs(f_new));
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x_new + ((t - 1.0) / t_next) * (x_new - x_prev);
    x_prev = std::move(x_new);
    f_prev = f_new;
    t = t_next;
    if (rel < tol) {
      converged = true;
      break;
    }
  }
  if (!converged && warned) *warned = true;
  return ConfusionMatrix{std::move(x_best)};
}

inline ConfusionMatrix confusion_update(const DensityMatrix& rho, const Povm& povm,
                                        const ProbabilityVector& empirical,
                                        const ConfusionMatrix& anchor,
                                        const ConfusionMatrix& reference,
                                        double lambda, double gamma_c,
                                        const SolverConfig& cfg,
                                        bool* warned = nullptr) {
  return confusion_update(born(rho, povm).p, empirical, anchor, reference, lambda,
                          gamma_c, cfg.subsolver_tol, cfg.subsolver_max, warned);
}

//=============================================================================
// Inner consensus ADMM and the outer alternating loop
//=============================================================================

namespace detail {

// Immutable per-instance geometry/measurement context.
struct SolverContext {
  struct RegionCtx {
    RealMatrix born;            // M x d^2
    RealMatrix ptp;             // beta-independent sum of P^T P over overlaps
    std::vector<int> overlap_ids;
    std::vector<RealMatrix> pt; // coord partial trace per touching overlap
    Eigen::Index d = 0;
  };
  std::vector<RegionCtx> region;
  std::vector<Eigen::Index> shared_dim;  // per overlap pair
  double consensus_dim = 0.0;            // sum over directed overlaps of 4^{q_ov}

  static SolverContext build(const Instance& inst) {
    SolverContext ctx;
    const auto& g = inst.graph;
    ctx.region.resize(std::size_t(g.n_regions()));
    for (int r = 0; r < g.n_regions(); ++r) {
      auto& rc = ctx.region[std::size_t(r)];
      rc.d = inst.regional_truths[std::size_t(r)].dim();
      rc.born = born_matrix(inst.povms[std::size_t(r)]);
      rc.ptp = RealMatrix::Zero(herm_dim(rc.d), herm_dim(rc.d));
    }
    for (int i = 0; i < g.n_overlaps(); ++i) {
      const auto& ov = g.overlaps[std::size_t(i)];
      ctx.shared_dim.push_back(Eigen::Index(1) << ov.shared.size());
      for (int r : {ov.a, ov.b}) {
        auto& rc = ctx.region[std::size_t(r)];
        RealMatrix p = partial_trace_matrix(g.regions[std::size_t(r)], ov.shared);
        rc.ptp.noalias() += p.transpose() * p;
        rc.overlap_ids.push_back(i);
        rc.pt.push_back(std::move(p));
      }
      ctx.consensus_dim += 2.0 * double(herm_dim(ctx.shared_dim.back()));
    }
    return ctx;
  }
};

// Per-outer-iteration quadratic data for one region (depends on C_r^k).
struct RegionQpData {
  RealMatrix h;
  RealVector at_pi;  // A^T pi_hat
  double l_max = 1.0;
};

inline RegionQpData build_region_qp(const SolverContext::RegionCtx& rc,
                                    const RealMatrix& confusion,
                                    const RealVector& empirical,
                                    const SolverConfig& cfg) {
  RegionQpData qp;
  RealMatrix a(rc.born.rows(), rc.born.cols());
  a.noalias() = confusion * rc.born;
  qp.h = RealMatrix::Zero(a.cols(), a.cols());
  qp.h.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
  qp.h.triangularView<Eigen::StrictlyUpper>() = qp.h.transpose();
  qp.h.diagonal().array() += cfg.gamma_rho;
  qp.h.noalias() += cfg.beta * rc.ptp;
  qp.at_pi.noalias() = a.transpose() * empirical;
  qp.l_max = power_lambda_max(qp.h) * 1.02 + 1e-12;
  return qp;
}

inline void run_tasks(int n, bool parallel, const std::function<void(int)>& fn) {
  if (!parallel || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) pool.emplace_back(fn, i);
  for (auto& th : pool) th.join();
}

} // namespace detail

struct InnerResult {
  int iterations = 0;
  double r_cons = 0.0;
  double s_cons = 0.0;  // scaled dual residual (consensus-variable change)
  double objective = 0.0;
  int subsolver_warnings = 0;
};

// One inner consensus-ADMM solve of the proximal state subproblem at fixed
// confusion matrices. Regions are updated from the l-indexed snapshot
// (logically in parallel), then consensus and dual variables per overlap
// pair. Anchors are the rho entries of `state` on entry; on return the
// terminal iterates are stored back into `state`.
inline InnerResult inner_admm(SolverState& state, const Instance& inst,
                              const SolverConfig& cfg,
                              const detail::SolverContext& ctx,
                              const std::vector<detail::RegionQpData>& qp,
                              std::vector<TraceRow>* trace = nullptr,
                              std::int64_t wall_origin_ns = 0,
                              int force_iterations = -1) {
  const auto& g = inst.graph;
  const int nr = g.n_regions();
  const int no = g.n_overlaps();
  const double stop_level =
      cfg.inner_tol * std::sqrt(std::max(ctx.consensus_dim, 1.0));

  // Coordinates of the current iterates; anchors stay fixed.
  std::vector<RealVector> x(static_cast<std::size_t>(nr));
  std::vector<RealVector> x_anchor(static_cast<std::size_t>(nr));
  for (int r = 0; r < nr; ++r) {
    x[std::size_t(r)] = herm_to_vec(state.rho[std::size_t(r)].mat);
    x_anchor[std::size_t(r)] = x[std::size_t(r)];
  }
  std::vector<RealVector> z(static_cast<std::size_t>(no));
  std::vector<RealVector> lam_ab(static_cast<std::size_t>(no));
  std::vector<RealVector> lam_ba(static_cast<std::size_t>(no));
  for (int i = 0; i < no; ++i) {
    z[std::size_t(i)] = herm_to_vec(state.overlap[std::size_t(i)].z);
    lam_ab[std::size_t(i)] = herm_to_vec(state.overlap[std::size_t(i)].lam_ab);
    lam_ba[std::size_t(i)] = herm_to_vec(state.overlap[std::size_t(i)].lam_ba);
  }

  const auto t0 = std::chrono::steady_clock::now();
  InnerResult res;
  std::vector<int> warn_flags(std::size_t(nr), 0);
  std::vector<RealVector> reduced(static_cast<std::size_t>(no * 2));  // one slot per directed overlap
  std::vector<double> z_change(std::size_t(no), 0.0);

  const int max_l = force_iterations > 0 ? force_iterations : cfg.inner_max;
  for (int l = 1; l <= max_l; ++l) {
    // Region phase: solve every regional subproblem from the l-snapshot.
    detail::run_tasks(nr, cfg.parallel_regions, [&](int r) {
      const auto& rc = ctx.region[std::size_t(r)];
      detail::StateQp sqp;
      sqp.H = &qp[std::size_t(r)].h;
      sqp.L = qp[std::size_t(r)].l_max;
      sqp.d = rc.d;
      RealVector b = -qp[std::size_t(r)].at_pi - cfg.gamma_rho * x_anchor[std::size_t(r)];
      double c0 = 0.5 * inst.empirical(r).p.squaredNorm() +
                  0.5 * cfg.gamma_rho * x_anchor[std::size_t(r)].squaredNorm();
      for (std::size_t t = 0; t < rc.overlap_ids.size(); ++t) {
        const int i = rc.overlap_ids[t];
        const auto& lam = (g.overlaps[std::size_t(i)].a == r) ? lam_ab[std::size_t(i)]
                                                              : lam_ba[std::size_t(i)];
        b.noalias() += rc.pt[t].transpose() * (lam - cfg.beta * z[std::size_t(i)]);
        c0 += -lam.dot(z[std::size_t(i)]) +
              0.5 * cfg.beta * z[std::size_t(i)].squaredNorm();
      }
      sqp.b = std::move(b);
      sqp.c0 = c0;
      bool warned = false;
      x[std::size_t(r)] = detail::fista_state(sqp, x[std::size_t(r)],
                                              cfg.subsolver_tol, cfg.subsolver_max,
                                              &warned);
      if (warned) warn_flags[std::size_t(r)] = 1;
    });

    // Overlap phase: consensus and dual updates per pair.
    detail::run_tasks(no, cfg.parallel_regions, [&](int i) {
      const auto& ov = g.overlaps[std::size_t(i)];
      const auto& rca = ctx.region[std::size_t(ov.a)];
      const auto& rcb = ctx.region[std::size_t(ov.b)];
      std::size_t ta = 0, tb = 0;
      while (rca.overlap_ids[ta] != i) ++ta;
      while (rcb.overlap_ids[tb] != i) ++tb;
      const RealVector ra = rca.pt[ta] * x[std::size_t(ov.a)];
      const RealVector rb = rcb.pt[tb] * x[std::size_t(ov.b)];
      const RealVector z_new =
          0.5 * (ra + rb + (lam_ab[std::size_t(i)] + lam_ba[std::size_t(i)]) / cfg.beta);
      lam_ab[std::size_t(i)] += cfg.beta * (ra - z_new);
      lam_ba[std::size_t(i)] += cfg.beta * (rb - z_new);
      z_change[std::size_t(i)] = (z_new - z[std::size_t(i)]).squaredNorm();
      z[std::size_t(i)] = z_new;
      reduced[std::size_t(2 * i)] = ra;
      reduced[std::size_t(2 * i + 1)] = rb;
    });

    // Residuals and objective, accumulated in canonical order. The primal
    // residual is the consensus mismatch; the dual residual tracks the
    // consensus-variable change (both transmission directions).
    double sq = 0.0, dual_sq = 0.0;
    for (int i = 0; i < no; ++i) {
      sq += (reduced[std::size_t(2 * i)] - z[std::size_t(i)]).squaredNorm();
      sq += (reduced[std::size_t(2 * i + 1)] - z[std::size_t(i)]).squaredNorm();
      dual_sq += 2.0 * z_change[std::size_t(i)];
    }
    const double r_cons = std::sqrt(sq);
    const double s_cons = cfg.beta * std::sqrt(dual_sq);
    double obj = 0.0;
    for (int r = 0; r < nr; ++r) {
      const auto& rc = ctx.region[std::size_t(r)];
      const RealVector pred =
          state.confusion[std::size_t(r)].m * (rc.born * x[std::size_t(r)]);
      obj += 0.5 * (inst.empirical(r).p - pred).squaredNorm();
      obj += 0.5 * cfg.gamma_rho *
             (x[std::size_t(r)] - x_anchor[std::size_t(r)]).squaredNorm();
    }

    res.iterations = l;
    res.r_cons = r_cons;
    res.s_cons = s_cons;
    res.objective = obj;
    res.subsolver_warnings = 0;
    for (int w : warn_flags) res.subsolver_warnings += w;

    if (trace) {
      TraceRow row;
      row.k = state.k;
      row.l = l;
      row.r_cons = r_cons;
      row.objective = obj;
      row.wall_ns = wall_origin_ns +
                    std::chrono::duration_cast<std::chrono::nanoseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      row.subsolver_warnings = res.subsolver_warnings;
      for (int i = 0; i < no; ++i)
        row.dual_asym = std::max(
            row.dual_asym,
            (lam_ab[std::size_t(i)] + lam_ba[std::size_t(i)]).cwiseAbs().maxCoeff());
      for (int r = 0; r < nr; ++r) {
        const ComplexMatrix m = vec_to_herm(x[std::size_t(r)], ctx.region[std::size_t(r)].d);
        row.herm_err = std::max(row.herm_err, hermiticity_error(m));
        row.trace_err = std::max(row.trace_err, std::abs(m.trace().real() - 1.0));
        const double me = min_eigenvalue(m);
        row.min_eig = (r == 0) ? me : std::min(row.min_eig, me);
        for (Eigen::Index j = 0; j < state.confusion[std::size_t(r)].m.cols(); ++j)
          row.colsum_err = std::max(
              row.colsum_err,
              std::abs(state.confusion[std::size_t(r)].m.col(j).sum() - 1.0));
      }
      trace->push_back(row);
    }

    // Both the consensus mismatch and the consensus-variable drift must be
    // small: the primal residual alone can dip below tolerance long before
    // the duals equilibrate.
    if (force_iterations <= 0 && r_cons <= stop_level && s_cons <= stop_level)
      break;
  }

  // Copy terminal iterates back.
  for (int r = 0; r < nr; ++r)
    state.rho[std::size_t(r)] = DensityMatrix::trusted(
        g.regions[std::size_t(r)], vec_to_herm(x[std::size_t(r)], ctx.region[std::size_t(r)].d));
  for (int i = 0; i < no; ++i) {
    const Eigen::Index ds = ctx.shared_dim[std::size_t(i)];
    state.overlap[std::size_t(i)].z = vec_to_herm(z[std::size_t(i)], ds);
    state.overlap[std::size_t(i)].lam_ab = vec_to_herm(lam_ab[std::size_t(i)], ds);
    state.overlap[std::size_t(i)].lam_ba = vec_to_herm(lam_ba[std::size_t(i)], ds);
  }
  return res;
}

// Standalone inner solve that builds the measurement context on the fly.
// force_iterations > 0 disables the residual stop and runs exactly that many
// iterations (used for long-run reference values).
inline InnerResult run_inner_admm(SolverState& state, const Instance& inst,
                                  const SolverConfig& cfg,
                                  std::vector<TraceRow>* trace = nullptr,
                                  int force_iterations = -1) {
  const auto ctx = detail::SolverContext::build(inst);
  std::vector<detail::RegionQpData> qp;
  for (int r = 0; r < inst.n_regions(); ++r)
    qp.push_back(detail::build_region_qp(ctx.region[std::size_t(r)],
                                         state.confusion[std::size_t(r)].m,
                                         inst.empirical(r).p, cfg));
  return inner_admm(state, inst, cfg, ctx, qp, trace, 0, force_iterations);
}

// Feasible, seed-independent initialization: maximally mixed states and
// consensus variables, zero duals, confusion matrices at their pinned or
// reference values.
inline SolverState init_solver_state(const Instance& inst, const SolverConfig& cfg) {
  SolverState st;
  const auto& g = inst.graph;
  for (int r = 0; r < g.n_regions(); ++r) {
    const Eigen::Index d = inst.regional_truths[std::size_t(r)].dim();
    st.rho.push_back(DensityMatrix::trusted(
        g.regions[std::size_t(r)], ComplexMatrix::Identity(d, d) / double(d)));
    const Eigen::Index m = inst.povms[std::size_t(r)].n_outcomes();
    switch (cfg.mode) {
      case EstimatorMode::IdealFixed:
        st.confusion.push_back(ConfusionMatrix::identity(m));
        break;
      case EstimatorMode::OracleFixed:
        st.confusion.push_back(inst.confusions_truth[std::size_t(r)]);
        break;
      case EstimatorMode::Joint:
        if (!cfg.reference_confusions.empty())
          st.confusion.push_back(
              ConfusionMatrix::make(cfg.reference_confusions[std::size_t(r)]));
        else
          st.confusion.push_back(ConfusionMatrix::identity(m));
        break;
    }
  }
  for (const auto& ov : g.overlaps) {
    const Eigen::Index ds = Eigen::Index(1) << ov.shared.size();
    OverlapVars v;
    v.z = ComplexMatrix::Identity(ds, ds) / double(ds);
    v.lam_ab = ComplexMatrix::Zero(ds, ds);
    v.lam_ba = ComplexMatrix::Zero(ds, ds);
    st.overlap.push_back(std::move(v));
  }
  return st;
}

struct EstimateResult {
  EstimatorMode mode = EstimatorMode::Joint;
  std::vector<DensityMatrix> rho_hat;
  std::vector<ConfusionMatrix> c_hat;
  std::vector<TraceRow> trace;
  int outer_iterations = 0;
  double l_bar = 0.0;  // mean inner iterations per outer iteration
  double final_outer_change = 0.0;
  int subsolver_warnings = 0;
};

// Full estimator: alternates the inner consensus ADMM for the state block
// with parallel per-region confusion updates (Joint mode only; the fixed
// modes pin the confusion matrices and skip their update). Deterministic for
// fixed inputs regardless of scheduling.
inline EstimateResult run_estimator(
    const Instance& inst, const SolverConfig& cfg,
    const std::function<void(int, const SolverState&)>& per_outer_hook = {}) {
  cfg.validate();
  if (!cfg.reference_confusions.empty() &&
      cfg.reference_confusions.size() != std::size_t(inst.n_regions()))
    throw std::invalid_argument("run_estimator: reference confusion count mismatch");

  const auto ctx = detail::SolverContext::build(inst);
  SolverState st = init_solver_state(inst, cfg);
  const int nr = inst.n_regions();

  std::vector<ConfusionMatrix> references;
  for (int r = 0; r < nr; ++r) {
    if (!cfg.reference_confusions.empty())
      references.push_back(ConfusionMatrix::make(cfg.reference_confusions[std::size_t(r)]));
    else
      references.push_back(
          ConfusionMatrix::identity(inst.povms[std::size_t(r)].n_outcomes()));
  }

  EstimateResult out;
  out.mode = cfg.mode;

  std::vector<detail::RegionQpData> qp(static_cast<std::size_t>(nr));
  bool qp_dirty = true;
  const auto t0 = std::chrono::steady_clock::now();
  int total_inner = 0;

  for (int k = 0; k < cfg.outer_max; ++k) {
    st.k = k;
    if (qp_dirty) {
      for (int r = 0; r < nr; ++r)
        qp[std::size_t(r)] = detail::build_region_qp(ctx.region[std::size_t(r)],
                                                     st.confusion[std::size_t(r)].m,
                                                     inst.empirical(r).p, cfg);
      qp_dirty = (cfg.mode == EstimatorMode::Joint);
    }

    const std::vector<DensityMatrix> rho_prev = st.rho;
    const std::int64_t origin =
        std::chrono::duration_cast<std::chrono::nanoseconds>(
            std::chrono::steady_clock::now() - t0)
            .count();
    const InnerResult ir = inner_admm(st, inst, cfg, ctx, qp, &st.trace, origin);
    total_inner += ir.iterations;
    out.subsolver_warnings += ir.subsolver_warnings;

    double c_change = 0.0;
    if (cfg.mode == EstimatorMode::Joint) {
      std::vector<ConfusionMatrix> c_new(static_cast<std::size_t>(nr));
      std::vector<int> warn(std::size_t(nr), 0);
      detail::run_tasks(nr, cfg.parallel_regions, [&](int r) {
        bool w = false;
        const RealVector p =
            ctx.region[std::size_t(r)].born * herm_to_vec(st.rho[std::size_t(r)].mat);
        c_new[std::size_t(r)] = confusion_update(
            p, inst.empirical(r), st.confusion[std::size_t(r)], references[std::size_t(r)],
            cfg.lambda, cfg.gamma_c, cfg.subsolver_tol, cfg.subsolver_max, &w);
        if (w) warn[std::size_t(r)] = 1;
      });
      for (int r = 0; r < nr; ++r) {
        c_change = std::max(c_change,
                            (c_new[std::size_t(r)].m - st.confusion[std::size_t(r)].m).norm());
        st.confusion[std::size_t(r)] = std::move(c_new[std::size_t(r)]);
        out.subsolver_warnings += warn[std::size_t(r)];
      }
    }

    double rho_change = 0.0;
    for (int r = 0; r < nr; ++r)
      rho_change = std::max(rho_change,
                            (st.rho[std::size_t(r)].mat - rho_prev[std::size_t(r)].mat).norm());

    out.outer_iterations = k + 1;
    out.final_outer_change = rho_change + c_change;
    if (per_outer_hook) per_outer_hook(k, st);
    if (out.final_outer_change < cfg.outer_tol) break;
  }

  out.rho_hat = st.rho;
  out.c_hat = st.confusion;
  out.trace = std::move(st.trace);
  out.l_bar = out.outer_iterations > 0
                  ? double(total_inner) / double(out.outer_iterations)
                  : 0.0;
  return out;
}

} // namespace qtdm
