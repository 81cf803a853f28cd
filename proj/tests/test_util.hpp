/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <vector>

#include "qtdm/qmat.hpp"
#include "qtdm/rng.hpp"

namespace testutil {

// Full-rank random density matrix (normalized Wishart).
inline qtdm::DensityMatrix random_density(const std::vector<int>& sites,
                                          std::uint64_t seed) {
  const Eigen::Index d = Eigen::Index(1) << sites.size();
  qtdm::Rng rng(seed);
  qtdm::ComplexMatrix a(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i)
      a(i, j) = qtdm::Complex(rng.next_normal(), rng.next_normal());
  qtdm::ComplexMatrix w = a * a.adjoint();
  w /= w.trace().real();
  return qtdm::DensityMatrix::trusted(sites, std::move(w));
}

// Random Hermitian matrix with entries of order one.
inline qtdm::ComplexMatrix random_hermitian(Eigen::Index d, std::uint64_t seed) {
  qtdm::Rng rng(seed);
  qtdm::ComplexMatrix a(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i)
      a(i, j) = qtdm::Complex(rng.next_normal(), rng.next_normal());
  return qtdm::symmetrize(a);
}

} // namespace testutil
