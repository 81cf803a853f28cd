/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtdm/instance.hpp"
#include "qtdm/qmat.hpp"

namespace qtdm {
namespace theory {

// Numeric validators for the local analysis around the ground-truth pair:
// the linearized prediction map on the feasible perturbation set, its
// injectivity spectrum, the quadratic growth of the population misfit, and
// the equivalence of the KL objective with the shot likelihood.

enum class ConfusionParam { Full, Tensor };

inline std::string to_string(ConfusionParam p) {
  return p == ConfusionParam::Full ? "full" : "tensor";
}

//=============================================================================
// Linearized model
//=============================================================================

// Real coordinates: per region, the isometric Hermitian coordinates of the
// state perturbation, then per region the confusion perturbation — entrywise
// (Full) or restricted to sums of single-qubit factor perturbations embedded
// into the outcome index (Tensor). Both confusion parameterizations use a
// Frobenius-orthonormal basis, so coordinate norms equal the pair distance.
struct LinearizedModel {
  ConfusionParam param = ConfusionParam::Full;
  std::vector<Eigen::Index> state_offset, state_dim;  // per region; dim = Q_r
  std::vector<Eigen::Index> conf_offset, conf_size;   // per region
  std::vector<RealMatrix> conf_basis;  // per region: M_r^2 x conf_size (vectorized col-major)
  Eigen::Index total = 0;
  Eigen::Index out_dim = 0;  // sum of M_r
  RealMatrix constraints;    // K: rows vanish on the feasible perturbations
  RealMatrix basis;          // B: orthonormal null-space basis of K
  RealMatrix map;            // A o B, filled by linearized_map

  Eigen::Index tangent_dim() const { return basis.cols(); }

  // Realized perturbation of one coordinate vector.
  ComplexMatrix state_part(const RealVector& v, int r) const {
    return vec_to_herm(v.segment(state_offset[std::size_t(r)],
                                 state_dim[std::size_t(r)] * state_dim[std::size_t(r)]),
                       state_dim[std::size_t(r)]);
  }
  RealMatrix conf_part(const RealVector& v, int r, Eigen::Index m) const {
    const RealVector coef = v.segment(conf_offset[std::size_t(r)],
                                      conf_size[std::size_t(r)]);
    const RealVector flat = conf_basis[std::size_t(r)] * coef;
    return Eigen::Map<const RealMatrix>(flat.data(), m, m);
  }
};

namespace detail {

// Orthonormal (Frobenius) basis of the span of single-factor perturbations
// I (x) ... (x) F_j (x) ... (x) I over the base-4 outcome index, qubit 0 most
// significant. Columns are vectorized column-major.
inline RealMatrix tensor_conf_basis(int n_qubits) {
  const Eigen::Index m = Eigen::Index(1) << (2 * n_qubits);
  RealMatrix raw(m * m, 16 * n_qubits);
  raw.setZero();
  Eigen::Index col = 0;
  for (int qb = 0; qb < n_qubits; ++qb) {
    const int shift = 2 * (n_qubits - 1 - qb);
    for (Eigen::Index fb = 0; fb < 4; ++fb)
      for (Eigen::Index fa = 0; fa < 4; ++fa) {
        // F = E_{fa,fb} at factor qb, identity elsewhere.
        for (Eigen::Index a = 0; a < m; ++a) {
          if (((a >> shift) & 3) != fa) continue;
          const Eigen::Index b = (a & ~(Eigen::Index(3) << shift)) | (fb << shift);
          raw(b * m + a, col) = 1.0;
        }
        ++col;
      }
  }
  Eigen::BDCSVD<RealMatrix> svd(raw, Eigen::ComputeThinU);
  const double tol = 1e-10 * svd.singularValues().maxCoeff();
  Eigen::Index rank = 0;
  while (rank < svd.singularValues().size() && svd.singularValues()[rank] > tol)
    ++rank;
  return svd.matrixU().leftCols(rank);
}

} // namespace detail

// Builds the coordinate layout and the orthonormal basis B of the feasible
// perturbation set: Hermitian traceless states, zero-column-sum confusion
// perturbations, and matching reduced states on every overlap.
inline LinearizedModel tangent_basis(const Instance& inst, ConfusionParam param) {
  LinearizedModel model;
  model.param = param;
  const auto& g = inst.graph;
  const int nr = g.n_regions();

  Eigen::Index off = 0;
  for (int r = 0; r < nr; ++r) {
    const Eigen::Index d = inst.regional_truths[std::size_t(r)].dim();
    model.state_offset.push_back(off);
    model.state_dim.push_back(d);
    off += d * d;
  }
  for (int r = 0; r < nr; ++r) {
    const Eigen::Index m = inst.povms[std::size_t(r)].n_outcomes();
    model.conf_offset.push_back(off);
    if (param == ConfusionParam::Full)
      model.conf_basis.push_back(RealMatrix::Identity(m * m, m * m));
    else
      model.conf_basis.push_back(
          detail::tensor_conf_basis(int(g.regions[std::size_t(r)].size())));
    model.conf_size.push_back(model.conf_basis.back().cols());
    off += model.conf_size.back();
    model.out_dim += m;
  }
  model.total = off;
  if (model.total > 50000)
    throw resource_limit_error("tangent_basis: coordinate dimension " +
                               std::to_string(model.total) + " exceeds the cap");

  // Constraint rows.
  Eigen::Index n_rows = nr;  // one trace row per region
  for (int r = 0; r < nr; ++r) n_rows += inst.povms[std::size_t(r)].n_outcomes();
  for (const auto& ov : g.overlaps)
    n_rows += herm_dim(Eigen::Index(1) << ov.shared.size());

  RealMatrix k = RealMatrix::Zero(n_rows, model.total);
  Eigen::Index row = 0;
  for (int r = 0; r < nr; ++r) {
    // Tr(delta rho) = 0: the first d coordinates are the diagonal.
    for (Eigen::Index i = 0; i < model.state_dim[std::size_t(r)]; ++i)
      k(row, model.state_offset[std::size_t(r)] + i) = 1.0;
    ++row;
  }
  for (int r = 0; r < nr; ++r) {
    const Eigen::Index m = inst.povms[std::size_t(r)].n_outcomes();
    // 1^T delta C = 0: one row per column of the realized perturbation.
    for (Eigen::Index ccol = 0; ccol < m; ++ccol) {
      for (Eigen::Index t = 0; t < model.conf_size[std::size_t(r)]; ++t) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < m; ++i)
          s += model.conf_basis[std::size_t(r)](ccol * m + i, t);
        k(row, model.conf_offset[std::size_t(r)] + t) = s;
      }
      ++row;
    }
  }
  for (const auto& ov : g.overlaps) {
    const RealMatrix pa = partial_trace_matrix(g.regions[std::size_t(ov.a)], ov.shared);
    const RealMatrix pb = partial_trace_matrix(g.regions[std::size_t(ov.b)], ov.shared);
    k.block(row, model.state_offset[std::size_t(ov.a)], pa.rows(), pa.cols()) = pa;
    k.block(row, model.state_offset[std::size_t(ov.b)], pb.rows(), pb.cols()) -= pb;
    row += pa.rows();
  }
  model.constraints = k;

  // Null space of K via a rank-revealing QR of K^T: the trailing columns of
  // Q are an orthonormal basis of the orthogonal complement of the row
  // space.
  Eigen::ColPivHouseholderQR<RealMatrix> qr(k.transpose());
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  const RealMatrix q = qr.householderQ() * RealMatrix::Identity(model.total, model.total);
  model.basis = q.rightCols(model.total - rank);
  return model;
}

// Columns of the linearized prediction map restricted to the tangent basis:
// for each basis direction, the stacked per-region
// delta C_r pi_r(rho_r*) + C_r* pi_r(delta rho_r).
inline RealMatrix linearized_map(const Instance& inst, LinearizedModel& model) {
  const auto& g = inst.graph;
  const int nr = g.n_regions();
  RealMatrix a = RealMatrix::Zero(model.out_dim, model.total);
  Eigen::Index mo = 0;
  for (int r = 0; r < nr; ++r) {
    const Eigen::Index m = inst.povms[std::size_t(r)].n_outcomes();
    const RealMatrix s = born_matrix(inst.povms[std::size_t(r)]);
    a.block(mo, model.state_offset[std::size_t(r)], m, s.cols()) =
        inst.confusions_truth[std::size_t(r)].m * s;
    const RealVector& pi_star = inst.ideal_probs[std::size_t(r)].p;
    for (Eigen::Index t = 0; t < model.conf_size[std::size_t(r)]; ++t) {
      const Eigen::Map<const RealMatrix> dc(
          model.conf_basis[std::size_t(r)].col(t).data(), m, m);
      a.block(mo, model.conf_offset[std::size_t(r)] + t, m, 1) = dc * pi_star;
    }
    mo += m;
  }
  model.map = a * model.basis;
  return model.map;
}

//=============================================================================
// Identifiability report
//=============================================================================

struct IdentifiabilityReport {
  ConfusionParam param = ConfusionParam::Full;
  Eigen::Index tangent_dim = 0;
  Eigen::Index out_dim = 0;
  Eigen::Index rank = 0;
  Eigen::Index kernel_dim = 0;
  double sigma_max = 0.0;
  double sigma_min = 0.0;  // smallest singular value on the kernel complement
  double growth_constant_estimate = 0.0;  // sigma_min^2 / 8
  double kappa = 0.0;  // max over regions of the Born-map spectral norm
  RealVector spectrum;
};

inline IdentifiabilityReport identifiability_report(const Instance& inst,
                                                    LinearizedModel& model) {
  if (model.map.size() == 0) linearized_map(inst, model);
  IdentifiabilityReport rep;
  rep.param = model.param;
  rep.tangent_dim = model.tangent_dim();
  rep.out_dim = model.out_dim;
  Eigen::BDCSVD<RealMatrix> svd(model.map);
  rep.spectrum = svd.singularValues();
  rep.sigma_max = rep.spectrum.size() ? rep.spectrum.maxCoeff() : 0.0;
  const double cut = 1e-8 * rep.sigma_max;
  for (Eigen::Index i = 0; i < rep.spectrum.size(); ++i)
    if (rep.spectrum[i] > cut) ++rep.rank;
  rep.kernel_dim = rep.tangent_dim - rep.rank;
  rep.sigma_min = rep.rank > 0 ? rep.spectrum[rep.rank - 1] : 0.0;
  rep.growth_constant_estimate = rep.sigma_min * rep.sigma_min / 8.0;
  for (std::size_t r = 0; r < inst.povms.size(); ++r) {
    Eigen::BDCSVD<RealMatrix> bs(born_matrix(inst.povms[r]));
    rep.kappa = std::max(rep.kappa, bs.singularValues().maxCoeff());
  }
  return rep;
}

inline IdentifiabilityReport identifiability_report(const Instance& inst,
                                                    ConfusionParam param) {
  LinearizedModel model = tangent_basis(inst, param);
  return identifiability_report(inst, model);
}

//=============================================================================
// Quadratic growth probe
//=============================================================================

struct GrowthProbePoint {
  double t = 0.0;
  bool feasible = false;
  std::string note;
  double dist_sq = 0.0;    // d*^2 at the perturbed pair
  double misfit = 0.0;     // Q* at the perturbed pair
  double ratio = 0.0;      // Q* / d*^2
  double envelope = 0.0;   // (max(0, alpha - kappa d/2))^2 / 2
};

struct GrowthProbeResult {
  std::vector<GrowthProbePoint> points;
  double linear_norm_sq_half = 0.0;  // ||(A o B) v||^2 / 2, the t->0 limit
};

// Evaluates the population misfit against the squared pair distance along a
// tangent direction v (coordinates over B). The direction is rescaled to unit
// realized distance so the small-t ratio limit equals ||(A o B) v||^2 / 2.
inline GrowthProbeResult quadratic_growth_probe(const Instance& inst,
                                                const LinearizedModel& model,
                                                const RealVector& v_tangent,
                                                const std::vector<double>& t_grid,
                                                double alpha = 0.0,
                                                double kappa = 0.0) {
  if (v_tangent.size() != model.tangent_dim())
    throw std::invalid_argument("quadratic_growth_probe: direction size mismatch");
  const auto& g = inst.graph;
  const int nr = g.n_regions();
  RealVector v = model.basis * v_tangent;

  // Unit realized distance at t = 1.
  double unit_sq = 0.0;
  std::vector<ComplexMatrix> drho(static_cast<std::size_t>(nr));
  std::vector<RealMatrix> dc(static_cast<std::size_t>(nr));
  for (int r = 0; r < nr; ++r) {
    drho[std::size_t(r)] = model.state_part(v, r);
    dc[std::size_t(r)] =
        model.conf_part(v, r, inst.povms[std::size_t(r)].n_outcomes());
    unit_sq += drho[std::size_t(r)].squaredNorm() + dc[std::size_t(r)].squaredNorm();
  }
  if (unit_sq <= 0.0)
    throw std::invalid_argument("quadratic_growth_probe: zero direction");
  const double scale = 1.0 / std::sqrt(unit_sq);
  for (int r = 0; r < nr; ++r) {
    drho[std::size_t(r)] *= scale;
    dc[std::size_t(r)] *= scale;
  }

  GrowthProbeResult out;
  out.linear_norm_sq_half =
      0.5 * (model.map * v_tangent).squaredNorm() * scale * scale;

  for (double t : t_grid) {
    GrowthProbePoint pt;
    pt.t = t;
    bool ok = true;
    std::string note;
    double dist_sq = 0.0, misfit = 0.0;
    for (int r = 0; r < nr && ok; ++r) {
      const ComplexMatrix rho_t =
          inst.regional_truths[std::size_t(r)].mat + t * drho[std::size_t(r)];
      const RealMatrix c_t =
          inst.confusions_truth[std::size_t(r)].m + t * dc[std::size_t(r)];
      if (min_eigenvalue(symmetrize(rho_t)) < -1e-12) {
        ok = false;
        note = "state leaves the PSD cone in region " + std::to_string(r);
        break;
      }
      if (c_t.minCoeff() < -1e-12 || c_t.maxCoeff() > 1.0 + 1e-12) {
        ok = false;
        note = "confusion entry leaves [0,1] in region " + std::to_string(r);
        break;
      }
      dist_sq += (t * drho[std::size_t(r)]).squaredNorm() +
                 (t * dc[std::size_t(r)]).squaredNorm();
      const DensityMatrix rho_dm = DensityMatrix::trusted(
          g.regions[std::size_t(r)], rho_t);
      const RealVector pi_t =
          born_matrix(inst.povms[std::size_t(r)]) * herm_to_vec(rho_t);
      const RealVector pred = c_t * pi_t;
      const RealVector base = inst.confusions_truth[std::size_t(r)].m *
                              inst.ideal_probs[std::size_t(r)].p;
      misfit += 0.5 * (pred - base).squaredNorm();
      (void)rho_dm;
    }
    pt.feasible = ok;
    pt.note = note;
    if (ok) {
      pt.dist_sq = dist_sq;
      pt.misfit = misfit;
      pt.ratio = dist_sq > 0.0 ? misfit / dist_sq : 0.0;
      const double d = std::sqrt(dist_sq);
      const double lin = std::max(0.0, alpha - 0.5 * kappa * d);
      pt.envelope = 0.5 * lin * lin;
    }
    out.points.push_back(std::move(pt));
  }
  return out;
}

//=============================================================================
// KL / likelihood identity
//=============================================================================

// Relative discrepancy between the negative log likelihood of the recorded
// counts and T * KL(pi_hat || C pi(rho)) - T * sum pi_hat log pi_hat, with
// the 0 log 0 := 0 convention.
inline double kl_mle_identity_check(const std::vector<std::int64_t>& counts,
                                    const DensityMatrix& rho, const Povm& povm,
                                    const ConfusionMatrix& confusion) {
  if (Eigen::Index(counts.size()) != povm.n_outcomes() ||
      confusion.size() != povm.n_outcomes())
    throw std::invalid_argument("kl_mle_identity_check: outcome count mismatch");
  const RealVector pred = confusion.m * born(rho, povm).p;
  std::int64_t t_shots = 0;
  for (auto c : counts) t_shots += c;
  if (t_shots < 1) throw std::invalid_argument("kl_mle_identity_check: no shots");

  double nll = 0.0;
  for (std::size_t m = 0; m < counts.size(); ++m) {
    if (counts[m] == 0) continue;
    if (pred[Eigen::Index(m)] <= 0.0)
      throw undefined_metric_error(
          "kl_mle_identity_check: zero predicted probability with nonzero count");
    nll -= double(counts[m]) * std::log(pred[Eigen::Index(m)]);
  }
  double kl = 0.0, ent = 0.0;
  for (std::size_t m = 0; m < counts.size(); ++m) {
    const double ph = double(counts[m]) / double(t_shots);
    if (ph <= 0.0) continue;
    kl += ph * std::log(ph / pred[Eigen::Index(m)]);
    ent += ph * std::log(ph);
  }
  const double rhs = double(t_shots) * kl - double(t_shots) * ent;
  return std::abs(nll - rhs) / std::max(1.0, std::abs(nll));
}

//=============================================================================
// JSON
//=============================================================================

inline nlohmann::json to_json(const IdentifiabilityReport& rep) {
  nlohmann::json j;
  j["param"] = to_string(rep.param);
  j["tangent_dim"] = rep.tangent_dim;
  j["out_dim"] = rep.out_dim;
  j["rank"] = rep.rank;
  j["kernel_dim"] = rep.kernel_dim;
  j["sigma_max"] = rep.sigma_max;
  j["sigma_min"] = rep.sigma_min;
  j["growth_constant_estimate"] = rep.growth_constant_estimate;
  j["kappa"] = rep.kappa;
  j["spectrum"] = std::vector<double>(rep.spectrum.data(),
                                      rep.spectrum.data() + rep.spectrum.size());
  return j;
}

inline nlohmann::json to_json(const GrowthProbeResult& res) {
  nlohmann::json j;
  j["linear_norm_sq_half"] = res.linear_norm_sq_half;
  j["points"] = nlohmann::json::array();
  for (const auto& p : res.points)
    j["points"].push_back({{"t", p.t},
                           {"feasible", p.feasible},
                           {"note", p.note},
                           {"dist_sq", p.dist_sq},
                           {"misfit", p.misfit},
                           {"ratio", p.ratio},
                           {"envelope", p.envelope}});
  return j;
}

} // namespace theory
} // namespace qtdm
