/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtdm/errors.hpp"
#include "qtdm/instance.hpp"
#include "qtdm/regions.hpp"
#include "qtdm/solver.hpp"

namespace qtdm {
namespace metrics {

//=============================================================================
// Error metrics
//=============================================================================

// Mean relative Frobenius error of the regional state estimates.
inline double state_error(const std::vector<DensityMatrix>& estimates,
                          const std::vector<DensityMatrix>& truths) {
  if (estimates.size() != truths.size() || estimates.empty())
    throw std::invalid_argument("state_error: region sets do not match");
  double acc = 0.0;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    if (estimates[r].dim() != truths[r].dim())
      throw std::invalid_argument("state_error: dimension mismatch in region " +
                                  std::to_string(r));
    acc += (estimates[r].mat - truths[r].mat).norm() / truths[r].mat.norm();
  }
  return acc / double(estimates.size());
}

inline double confusion_error(const std::vector<ConfusionMatrix>& estimates,
                              const std::vector<ConfusionMatrix>& truths) {
  if (estimates.size() != truths.size() || estimates.empty())
    throw std::invalid_argument("confusion_error: region sets do not match");
  double acc = 0.0;
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    if (estimates[r].size() != truths[r].size())
      throw std::invalid_argument("confusion_error: dimension mismatch in region " +
                                  std::to_string(r));
    acc += (estimates[r].m - truths[r].m).norm() / truths[r].m.norm();
  }
  return acc / double(estimates.size());
}

// Aggregate consensus residual of a solver state: both directed mismatches
// per overlap pair, with the shared variable common to both directions.
inline double consensus_residual(const RegionGraph& g, const SolverState& st) {
  double sq = 0.0;
  for (int i = 0; i < g.n_overlaps(); ++i) {
    const auto& ov = g.overlaps[std::size_t(i)];
    const ComplexMatrix ra = partial_trace(st.rho[std::size_t(ov.a)], ov.shared).mat;
    const ComplexMatrix rb = partial_trace(st.rho[std::size_t(ov.b)], ov.shared).mat;
    sq += (ra - st.overlap[std::size_t(i)].z).squaredNorm();
    sq += (rb - st.overlap[std::size_t(i)].z).squaredNorm();
  }
  return std::sqrt(sq);
}

// Normalized optimality gap against a long-run reference value.
inline double optimality_gap(double objective, double reference_min) {
  const double gap =
      (objective - reference_min) / std::max(1.0, std::abs(reference_min));
  return (gap < 1e-12) ? 0.0 : gap;
}

// Percentage reduction in state error of the joint estimator over the
// fixed-ideal baseline.
inline double recovery_gain(double e_ideal, double e_joint) {
  if (e_ideal <= 0.0)
    throw undefined_metric_error("recovery_gain: baseline error must be positive");
  return 100.0 * (e_ideal - e_joint) / e_ideal;
}

// Fraction (in percent) of the ideal-to-oracle improvement captured by the
// joint estimator.
inline double oracle_gap(double e_ideal, double e_joint, double e_oracle) {
  if (e_ideal <= e_oracle)
    throw undefined_metric_error(
        "oracle_gap: degenerate fixture, baseline does not exceed the oracle");
  return 100.0 * (e_ideal - e_joint) / (e_ideal - e_oracle);
}

//=============================================================================
// Budget and scaling arithmetic (exact integers)
//=============================================================================

using u128 = unsigned __int128;

inline u128 pow_u128(u128 base, int exp) {
  u128 out = 1;
  for (int i = 0; i < exp; ++i) out *= base;
  return out;
}

inline std::string u128_to_string(u128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.insert(s.begin(), char('0' + int(v % 10)));
    v /= 10;
  }
  return s;
}

struct Budgets {
  // Exact structural factors; the budgets are l_bar times these.
  u128 comm_factor = 0;     // sum over unordered overlap pairs of 4^{q_ov}
  u128 work_factor = 0;     // sum_r 4^{q_r} + sum_r M_r^2
  u128 n_comm = 0;          // both transmission directions per inner iteration
  u128 p_reg = 0;           // regional free parameters
  u128 p_glob = 0;          // global free parameters with M = 4^q
  double f_mem = 0.0;       // p_glob / p_reg
  double l_bar = 0.0;
  double c_bud = 0.0;       // l_bar * comm_factor
  double w_bud = 0.0;       // l_bar * work_factor
};

inline Budgets budgets(const RegionGraph& g, const std::vector<std::int64_t>& m_r,
                       double l_bar) {
  if (l_bar < 0.0) throw std::invalid_argument("budgets: l_bar must be >= 0");
  if (m_r.size() != std::size_t(g.n_regions()))
    throw std::invalid_argument("budgets: one POVM size per region required");
  Budgets b;
  b.l_bar = l_bar;
  for (const auto& ov : g.overlaps)
    b.comm_factor += pow_u128(4, int(ov.shared.size()));
  b.n_comm = 2 * b.comm_factor;
  for (int r = 0; r < g.n_regions(); ++r) {
    const int q_r = int(g.regions[std::size_t(r)].size());
    const u128 m = u128(m_r[std::size_t(r)]);
    b.work_factor += pow_u128(4, q_r) + m * m;
    b.p_reg += (pow_u128(4, q_r) - 1) + m * (m - 1);
  }
  const u128 m_glob = pow_u128(4, g.n_sites);
  b.p_glob = (m_glob - 1) + m_glob * (m_glob - 1);
  b.f_mem = double(b.p_glob) / double(b.p_reg);
  b.c_bud = l_bar * double(b.comm_factor);
  b.w_bud = l_bar * double(b.work_factor);
  return b;
}

// The five scaling inequalities relating regional and global model sizes,
// checked with exact integer arithmetic (fractional bounds are
// cross-multiplied). mu is the integer POVM oversampling factor with
// 4^{q_r} <= M_r <= mu 4^{q_r}.
struct ScalingBoundsReport {
  bool ok = true;
  struct Line {
    std::string name;
    bool holds = false;
    std::string lhs;
    std::string rhs;
  };
  std::vector<Line> lines;

  void add(const std::string& name, bool holds, u128 lhs, u128 rhs) {
    lines.push_back({name, holds, u128_to_string(lhs), u128_to_string(rhs)});
    ok = ok && holds;
  }
};

inline ScalingBoundsReport scaling_bounds_check(const RegionGraph& g,
                                                const std::vector<std::int64_t>& m_r,
                                                std::int64_t mu) {
  if (mu < 1) throw std::invalid_argument("scaling_bounds_check: mu must be >= 1");
  if (m_r.size() != std::size_t(g.n_regions()))
    throw std::invalid_argument("scaling_bounds_check: one POVM size per region required");
  int q_max = 0, q_min = 1 << 20, q_ov_max = 0, d_max = 0;
  for (int r = 0; r < g.n_regions(); ++r) {
    const int q_r = int(g.regions[std::size_t(r)].size());
    q_max = std::max(q_max, q_r);
    q_min = std::min(q_min, q_r);
    const u128 m = u128(m_r[std::size_t(r)]);
    if (m < pow_u128(4, q_r) || m > u128(mu) * pow_u128(4, q_r))
      throw std::invalid_argument(
          "scaling_bounds_check: M_r outside [4^q_r, mu 4^{q_r}] in region " +
          std::to_string(r));
    d_max = std::max(d_max, int(g.overlaps_of(r).size()));
  }
  for (const auto& ov : g.overlaps) q_ov_max = std::max(q_ov_max, int(ov.shared.size()));

  const Budgets b = budgets(g, m_r, 0.0);
  const u128 mu2p1 = 1 + u128(mu) * u128(mu);
  const u128 rr = u128(g.n_regions());

  ScalingBoundsReport rep;
  // P_reg <= (1 + mu^2) R 16^{q_max}
  rep.add("p_reg_upper", b.p_reg <= mu2p1 * rr * pow_u128(16, q_max), b.p_reg,
          mu2p1 * rr * pow_u128(16, q_max));
  // P_glob >= 16^q - 4^q
  const u128 glob_lower = pow_u128(16, g.n_sites) - pow_u128(4, g.n_sites);
  rep.add("p_glob_lower", b.p_glob >= glob_lower, b.p_glob, glob_lower);
  // F_mem >= (16^q - 4^q) / ((1 + mu^2) R 16^{q_max}), cross-multiplied
  rep.add("f_mem_lower",
          b.p_glob * (mu2p1 * rr * pow_u128(16, q_max)) >= glob_lower * b.p_reg,
          b.p_glob * (mu2p1 * rr * pow_u128(16, q_max)), glob_lower * b.p_reg);
  // N_comm <= d_max R 4^{q_ov,max}
  rep.add("n_comm_upper", b.n_comm <= u128(d_max) * rr * pow_u128(4, q_ov_max),
          b.n_comm, u128(d_max) * rr * pow_u128(4, q_ov_max));
  // N_comm / P_reg <= d_max 4^{q_ov,max} / (16^{q_min} - 4^{q_min}),
  // cross-multiplied
  const u128 denom = pow_u128(16, q_min) - pow_u128(4, q_min);
  rep.add("comm_per_param_upper",
          b.n_comm * denom <= u128(d_max) * pow_u128(4, q_ov_max) * b.p_reg,
          b.n_comm * denom, u128(d_max) * pow_u128(4, q_ov_max) * b.p_reg);
  return rep;
}

//=============================================================================
// Report bundle
//=============================================================================

struct MetricReport {
  double e_rho = 0.0;
  double e_c = 0.0;
  double g_rho = 0.0;           // recovery gain, percent
  double gamma_rho_gap = 0.0;   // oracle gap, percent
  double r_cons = 0.0;          // terminal consensus residual
  double g_opt = 0.0;
  double l_bar = 0.0;
  Budgets bud;
};

inline nlohmann::json to_json(const Budgets& b) {
  return nlohmann::json{{"comm_factor", u128_to_string(b.comm_factor)},
                        {"work_factor", u128_to_string(b.work_factor)},
                        {"n_comm", u128_to_string(b.n_comm)},
                        {"p_reg", u128_to_string(b.p_reg)},
                        {"p_glob", u128_to_string(b.p_glob)},
                        {"f_mem", b.f_mem},
                        {"l_bar", b.l_bar},
                        {"c_bud", b.c_bud},
                        {"w_bud", b.w_bud}};
}

inline nlohmann::json to_json(const MetricReport& m) {
  nlohmann::json j{{"e_rho", m.e_rho},       {"e_c", m.e_c},
                   {"g_rho", m.g_rho},       {"gamma_rho_gap", m.gamma_rho_gap},
                   {"r_cons", m.r_cons},     {"g_opt", m.g_opt},
                   {"l_bar", m.l_bar}};
  j["budgets"] = to_json(m.bud);
  return j;
}

} // namespace metrics
} // namespace qtdm
