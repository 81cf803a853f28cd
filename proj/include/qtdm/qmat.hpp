/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qtdm/errors.hpp"
#include "qtdm/linalg.hpp"
#include "qtdm/rng.hpp"

namespace qtdm {

//=============================================================================
// Domain types
//=============================================================================

// Tolerances for the physical-state invariants.
constexpr double kHermTol = 1e-12;
constexpr double kTraceTol = 1e-12;
constexpr double kEigTol = 1e-10;
constexpr double kPovmSumTol = 1e-10;
constexpr double kProbClampTol = 1e-12;
constexpr double kProbSumTol = 1e-10;

// Hermitian, PSD, unit-trace matrix over an ascending list of global site
// indices. The first listed site is the most significant bit of the
// computational-basis index, i.e. basis order follows |x_1> (x) ... (x) |x_n>.
struct DensityMatrix {
  std::vector<int> sites;
  ComplexMatrix mat;

  Eigen::Index dim() const { return mat.rows(); }
  int n_qubits() const { return static_cast<int>(sites.size()); }

  // Validating factory.
  static DensityMatrix make(std::vector<int> sites, ComplexMatrix m) {
    DensityMatrix rho{std::move(sites), std::move(m)};
    rho.validate();
    return rho;
  }

  // For callers that construct provably valid data on a hot path.
  static DensityMatrix trusted(std::vector<int> sites, ComplexMatrix m) {
    return DensityMatrix{std::move(sites), std::move(m)};
  }

  void validate() const {
    if (sites.empty()) throw std::invalid_argument("DensityMatrix: no sites");
    if (!std::is_sorted(sites.begin(), sites.end()) ||
        std::adjacent_find(sites.begin(), sites.end()) != sites.end())
      throw std::invalid_argument("DensityMatrix: sites must be strictly ascending");
    const Eigen::Index d = Eigen::Index(1) << sites.size();
    if (mat.rows() != d || mat.cols() != d)
      throw std::invalid_argument("DensityMatrix: dimension does not match site count");
    if (!is_finite(mat)) throw std::invalid_argument("DensityMatrix: non-finite entries");
    if (hermiticity_error(mat) > kHermTol)
      throw std::invalid_argument("DensityMatrix: not Hermitian");
    if (std::abs(mat.trace().real() - 1.0) > kTraceTol ||
        std::abs(mat.trace().imag()) > kTraceTol)
      throw std::invalid_argument("DensityMatrix: trace != 1");
    if (min_eigenvalue(symmetrize(mat)) < -kEigTol)
      throw std::invalid_argument("DensityMatrix: negative eigenvalue");
  }
};

// Ordered set of PSD effects summing to the identity.
struct Povm {
  Eigen::Index dim = 0;
  std::vector<ComplexMatrix> effects;

  int n_outcomes() const { return static_cast<int>(effects.size()); }

  void validate() const {
    if (dim < 1 || effects.empty()) throw std::invalid_argument("Povm: empty");
    ComplexMatrix sum = ComplexMatrix::Zero(dim, dim);
    for (const auto& e : effects) {
      if (e.rows() != dim || e.cols() != dim)
        throw std::invalid_argument("Povm: effect dimension mismatch");
      if (hermiticity_error(e) > kEigTol)
        throw std::invalid_argument("Povm: effect not Hermitian");
      if (min_eigenvalue(symmetrize(e)) < -kEigTol)
        throw std::invalid_argument("Povm: effect not PSD");
      sum += e;
    }
    if ((sum - ComplexMatrix::Identity(dim, dim)).cwiseAbs().maxCoeff() > kPovmSumTol)
      throw std::invalid_argument("Povm: effects do not sum to identity");
  }
};

// Nonnegative entries summing to one. Entries in [-1e-12, 0) are clamped to
// zero on construction; anything more negative signals an invalid state or
// effect and is rejected.
struct ProbabilityVector {
  RealVector p;

  Eigen::Index size() const { return p.size(); }
  double operator[](Eigen::Index i) const { return p[i]; }

  static ProbabilityVector from(RealVector v) {
    if (v.size() == 0) throw std::invalid_argument("ProbabilityVector: empty");
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i]))
        throw std::invalid_argument("ProbabilityVector: non-finite entry");
      if (v[i] < 0.0) {
        if (v[i] < -kProbClampTol)
          throw std::invalid_argument("ProbabilityVector: entry below clamp window");
        v[i] = 0.0;
      }
    }
    if (std::abs(v.sum() - 1.0) > kProbSumTol)
      throw std::invalid_argument("ProbabilityVector: sum != 1");
    return ProbabilityVector{std::move(v)};
  }
};

//=============================================================================
// Operations
//=============================================================================

// Haar-distributed random unitary: QR of a complex standard-Gaussian matrix
// with the R-diagonal phase correction. Deterministic for a fixed seed.
inline ComplexMatrix random_unitary(Eigen::Index dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("random_unitary: dim must be >= 1");
  Rng rng(seed);
  ComplexMatrix g(dim, dim);
  const double s = 1.0 / std::sqrt(2.0);
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index i = 0; i < dim; ++i)
      g(i, j) = Complex(s * rng.next_normal(), s * rng.next_normal());
  Eigen::HouseholderQR<ComplexMatrix> qr(g);
  ComplexMatrix q = qr.householderQ() * ComplexMatrix::Identity(dim, dim);
  ComplexMatrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < dim; ++j) {
    const Complex d = r(j, j);
    const double a = std::abs(d);
    q.col(j) *= (a > 0.0) ? d / a : Complex(1.0, 0.0);
  }
  return q;
}

// Single-qubit SIC POVM: four effects (I + r_m . sigma)/4 built from the
// tetrahedron Bloch vectors. Informationally complete with M = 4.
inline Povm sic_qubit_povm() {
  static const double k = 1.0 / std::sqrt(3.0);
  const double bloch[4][3] = {
      {k, k, k}, {k, -k, -k}, {-k, k, -k}, {-k, -k, k}};
  Povm povm;
  povm.dim = 2;
  povm.effects.reserve(4);
  for (const auto& r : bloch) {
    ComplexMatrix e(2, 2);
    // (I + x sx + y sy + z sz) / 4
    e(0, 0) = Complex(1.0 + r[2], 0.0);
    e(1, 1) = Complex(1.0 - r[2], 0.0);
    e(0, 1) = Complex(r[0], -r[1]);
    e(1, 0) = Complex(r[0], r[1]);
    povm.effects.push_back(0.25 * e);
  }
  return povm;
}

// Tensor powers of the single-qubit SIC POVM. Outcome index is base-4 with
// the first qubit as the most significant digit; 4^n effects on 2^n dims.
inline Povm tensor_povm(int n_qubits) {
  constexpr int kMaxQubits = 6;
  if (n_qubits < 1) throw std::invalid_argument("tensor_povm: n_qubits must be >= 1");
  if (n_qubits > kMaxQubits)
    throw resource_limit_error("tensor_povm: " + std::to_string(n_qubits) +
                               " qubits exceeds the effect-count cap");
  const Povm base = sic_qubit_povm();
  Povm povm;
  povm.dim = Eigen::Index(1) << n_qubits;
  const std::size_t m = std::size_t(1) << (2 * n_qubits);
  povm.effects.reserve(m);
  for (std::size_t idx = 0; idx < m; ++idx) {
    ComplexMatrix e = ComplexMatrix::Identity(1, 1);
    for (int qb = 0; qb < n_qubits; ++qb) {
      const int digit = int((idx >> (2 * (n_qubits - 1 - qb))) & 3u);
      e = kron(e, base.effects[std::size_t(digit)]);
    }
    povm.effects.push_back(std::move(e));
  }
  return povm;
}

// Born rule: entry m is Re Tr(E_m rho).
inline ProbabilityVector born(const DensityMatrix& rho, const Povm& povm) {
  if (rho.dim() != povm.dim)
    throw std::invalid_argument("born: state and POVM dimension mismatch");
  RealVector p(povm.n_outcomes());
  for (int m = 0; m < povm.n_outcomes(); ++m)
    p[m] = povm.effects[std::size_t(m)].cwiseProduct(rho.mat.transpose()).sum().real();
  return ProbabilityVector::from(std::move(p));
}

//-----------------------------------------------------------------------------
// Partial trace
//-----------------------------------------------------------------------------

namespace detail {

// Positions (0 = most significant bit) of the kept and traced sites within
// the register's site list.
struct TraceLayout {
  std::vector<int> keep_pos;
  std::vector<int> traced_pos;
  int n = 0;

  static TraceLayout make(const std::vector<int>& sites,
                          const std::vector<int>& keep_sites) {
    TraceLayout lay;
    lay.n = static_cast<int>(sites.size());
    if (keep_sites.empty())
      throw std::invalid_argument("partial_trace: empty keep set");
    for (int s : keep_sites) {
      auto it = std::lower_bound(sites.begin(), sites.end(), s);
      if (it == sites.end() || *it != s)
        throw std::invalid_argument("partial_trace: keep site " +
                                    std::to_string(s) + " not in register");
      lay.keep_pos.push_back(static_cast<int>(it - sites.begin()));
    }
    if (!std::is_sorted(lay.keep_pos.begin(), lay.keep_pos.end()) ||
        std::adjacent_find(lay.keep_pos.begin(), lay.keep_pos.end()) !=
            lay.keep_pos.end())
      throw std::invalid_argument("partial_trace: keep sites must be ascending and unique");
    for (int pos = 0; pos < lay.n; ++pos)
      if (!std::binary_search(keep_sites.begin(), keep_sites.end(), sites[std::size_t(pos)]))
        lay.traced_pos.push_back(pos);
    return lay;
  }

  // Compose the full-register basis index from a kept index and a traced
  // index (both with their own first-listed-site-is-MSB convention).
  std::size_t full_index(std::size_t keep_idx, std::size_t traced_idx) const {
    std::size_t idx = 0;
    const int nk = static_cast<int>(keep_pos.size());
    const int nt = static_cast<int>(traced_pos.size());
    for (int a = 0; a < nk; ++a) {
      const std::size_t bit = (keep_idx >> (nk - 1 - a)) & 1u;
      idx |= bit << (n - 1 - keep_pos[std::size_t(a)]);
    }
    for (int a = 0; a < nt; ++a) {
      const std::size_t bit = (traced_idx >> (nt - 1 - a)) & 1u;
      idx |= bit << (n - 1 - traced_pos[std::size_t(a)]);
    }
    return idx;
  }
};

} // namespace detail

// Reduced state on keep_sites (ascending global order), summing over the
// computational-basis indices of the traced sites.
inline DensityMatrix partial_trace(const DensityMatrix& rho,
                                   const std::vector<int>& keep_sites) {
  const auto lay = detail::TraceLayout::make(rho.sites, keep_sites);
  const std::size_t dk = std::size_t(1) << lay.keep_pos.size();
  const std::size_t dt = std::size_t(1) << lay.traced_pos.size();
  ComplexMatrix out = ComplexMatrix::Zero(Eigen::Index(dk), Eigen::Index(dk));
  for (std::size_t e = 0; e < dt; ++e) {
    for (std::size_t i = 0; i < dk; ++i) {
      const std::size_t row = lay.full_index(i, e);
      for (std::size_t j = 0; j < dk; ++j)
        out(Eigen::Index(i), Eigen::Index(j)) +=
            rho.mat(Eigen::Index(row), Eigen::Index(lay.full_index(j, e)));
    }
  }
  return DensityMatrix::trusted(keep_sites, std::move(out));
}

// Reduced density matrix of a pure state given as a 2^n state vector over
// sites 0..n-1 (site 0 most significant). Avoids materializing |psi><psi|.
inline ComplexMatrix reduced_from_statevector(const ComplexVector& psi,
                                              int n_qubits,
                                              const std::vector<int>& keep_sites) {
  if (psi.size() != (Eigen::Index(1) << n_qubits))
    throw std::invalid_argument("reduced_from_statevector: length != 2^n");
  std::vector<int> sites;
  sites.resize(std::size_t(n_qubits));
  std::iota(sites.begin(), sites.end(), 0);
  const auto lay = detail::TraceLayout::make(sites, keep_sites);
  const std::size_t dk = std::size_t(1) << lay.keep_pos.size();
  const std::size_t dt = std::size_t(1) << lay.traced_pos.size();
  ComplexMatrix out = ComplexMatrix::Zero(Eigen::Index(dk), Eigen::Index(dk));
  ComplexVector v{Eigen::Index(dk)};
  for (std::size_t e = 0; e < dt; ++e) {
    for (std::size_t b = 0; b < dk; ++b)
      v[Eigen::Index(b)] = psi[Eigen::Index(lay.full_index(b, e))];
    out.noalias() += v * v.adjoint();
  }
  return out;
}

// Adjoint of the partial-trace map from a register onto a kept subset:
// places X on the kept sites and the (unnormalized) identity on the rest.
inline ComplexMatrix embed_on_register(const ComplexMatrix& x,
                                       const std::vector<int>& sites,
                                       const std::vector<int>& keep_sites) {
  const auto lay = detail::TraceLayout::make(sites, keep_sites);
  const std::size_t dk = std::size_t(1) << lay.keep_pos.size();
  const std::size_t dt = std::size_t(1) << lay.traced_pos.size();
  if (x.rows() != Eigen::Index(dk) || x.cols() != Eigen::Index(dk))
    throw std::invalid_argument("embed_on_register: block dimension mismatch");
  const std::size_t d = std::size_t(1) << sites.size();
  ComplexMatrix out = ComplexMatrix::Zero(Eigen::Index(d), Eigen::Index(d));
  for (std::size_t e = 0; e < dt; ++e)
    for (std::size_t i = 0; i < dk; ++i)
      for (std::size_t j = 0; j < dk; ++j)
        out(Eigen::Index(lay.full_index(i, e)), Eigen::Index(lay.full_index(j, e))) +=
            x(Eigen::Index(i), Eigen::Index(j));
  return out;
}

//-----------------------------------------------------------------------------
// Projections
//-----------------------------------------------------------------------------

// Euclidean projection onto the probability simplex {x >= 0, sum x = 1} by
// sort-and-threshold.
inline RealVector project_simplex(const RealVector& v) {
  const Eigen::Index n = v.size();
  if (n == 0) throw std::invalid_argument("project_simplex: empty vector");
  if (!v.allFinite()) throw std::invalid_argument("project_simplex: non-finite entry");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, theta = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cum += u[std::size_t(i)];
    const double t = (cum - 1.0) / double(i + 1);
    if (u[std::size_t(i)] - t > 0.0) {
      k = i + 1;
      theta = t;
    }
  }
  (void)k;
  RealVector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

// Frobenius-nearest density matrix: eigendecompose the symmetrized input and
// project the spectrum onto the probability simplex.
inline ComplexMatrix project_density_matrix(const ComplexMatrix& h) {
  if (!is_finite(h)) throw std::invalid_argument("project_density: non-finite entries");
  if (h.rows() != h.cols()) throw std::invalid_argument("project_density: square matrix required");
  const ComplexMatrix sym = symmetrize(h);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(sym);
  const RealVector w = project_simplex(es.eigenvalues());
  return es.eigenvectors() * w.asDiagonal() * es.eigenvectors().adjoint();
}

inline DensityMatrix project_density(const std::vector<int>& sites,
                                     const ComplexMatrix& h) {
  return DensityMatrix::trusted(sites, project_density_matrix(h));
}

//-----------------------------------------------------------------------------
// Coordinate-space helpers (shared by the solver and the theory validators)
//-----------------------------------------------------------------------------

// M x d^2 real matrix S with S * herm_to_vec(rho) = born probabilities.
inline RealMatrix born_matrix(const Povm& povm) {
  RealMatrix s(povm.n_outcomes(), herm_dim(povm.dim));
  for (int m = 0; m < povm.n_outcomes(); ++m)
    s.row(m) = herm_to_vec(povm.effects[std::size_t(m)]).transpose();
  return s;
}

// Real-coordinate matrix of the partial trace from `sites` onto
// `keep_sites`: maps herm coords of the register to herm coords of the
// reduced space.
inline RealMatrix partial_trace_matrix(const std::vector<int>& sites,
                                       const std::vector<int>& keep_sites) {
  const Eigen::Index d = Eigen::Index(1) << sites.size();
  const Eigen::Index dk = Eigen::Index(1) << keep_sites.size();
  RealMatrix p(herm_dim(dk), herm_dim(d));
  RealVector basis = RealVector::Zero(herm_dim(d));
  DensityMatrix probe = DensityMatrix::trusted(sites, ComplexMatrix::Zero(d, d));
  for (Eigen::Index c = 0; c < herm_dim(d); ++c) {
    basis[c] = 1.0;
    probe.mat = vec_to_herm(basis, d);
    p.col(c) = herm_to_vec(partial_trace(probe, keep_sites).mat);
    basis[c] = 0.0;
  }
  return p;
}

} // namespace qtdm
