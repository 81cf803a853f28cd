/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>

#include <Eigen/Dense>

#include "qtdm/errors.hpp"

namespace qtdm {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline bool is_finite(const ComplexMatrix& a) {
  return a.real().allFinite() && a.imag().allFinite();
}

inline double hermiticity_error(const ComplexMatrix& a) {
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

inline ComplexMatrix symmetrize(const ComplexMatrix& a) {
  return 0.5 * (a + a.adjoint());
}

inline double min_eigenvalue(const ComplexMatrix& herm) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(herm,
                                                  Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// ---------------------------------------------------------------------------
// Isometric real coordinates for Hermitian matrices.
//
// A d x d Hermitian matrix maps to d^2 reals: the diagonal first, then for
// each upper-triangle entry (i<j, column-major order) sqrt(2)*Re and
// sqrt(2)*Im. The map preserves the Frobenius norm and turns Tr(A B) into the
// Euclidean inner product of the coordinate vectors.
// ---------------------------------------------------------------------------

inline Eigen::Index herm_dim(Eigen::Index d) { return d * d; }

inline RealVector herm_to_vec(const ComplexMatrix& a) {
  const Eigen::Index d = a.rows();
  if (a.cols() != d) throw std::invalid_argument("herm_to_vec: square matrix required");
  RealVector x(d * d);
  Eigen::Index t = 0;
  for (Eigen::Index i = 0; i < d; ++i) x[t++] = a(i, i).real();
  const double s = std::sqrt(2.0);
  for (Eigen::Index j = 1; j < d; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      x[t++] = s * a(i, j).real();
      x[t++] = s * a(i, j).imag();
    }
  }
  return x;
}

inline ComplexMatrix vec_to_herm(const RealVector& x, Eigen::Index d) {
  if (x.size() != d * d) throw std::invalid_argument("vec_to_herm: size mismatch");
  ComplexMatrix a(d, d);
  Eigen::Index t = 0;
  for (Eigen::Index i = 0; i < d; ++i) a(i, i) = Complex(x[t++], 0.0);
  const double s = 1.0 / std::sqrt(2.0);
  for (Eigen::Index j = 1; j < d; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) {
      const double re = s * x[t++];
      const double im = s * x[t++];
      a(i, j) = Complex(re, im);
      a(j, i) = Complex(re, -im);
    }
  }
  return a;
}

// Kronecker product of complex matrices; the first factor is the most
// significant block.
inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

} // namespace qtdm
