/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qtdm/theory.hpp"

#include "test_util.hpp"

using namespace qtdm;
using theory::ConfusionParam;
using theory::LinearizedModel;

namespace {

// Interior fixtures: strictly positive confusion entries and full-rank
// regional states.
Instance one_qubit_fixture() {
  return build_instance(make_region_graph(1, {{0}}), 0.2, 0.05, 500, 7, 0.1);
}

Instance chain_fixture() {
  return build_instance(make_region_graph(3, {{0, 1}, {1, 2}}), 0.2, 0.05, 800,
                        11, 0.1);
}

// Stacked per-region prediction of the perturbed pair, used by the
// finite-difference checks.
RealVector stacked_prediction(const Instance& inst,
                              const std::vector<ComplexMatrix>& drho,
                              const std::vector<RealMatrix>& dc, double t) {
  std::vector<double> out;
  for (int r = 0; r < inst.n_regions(); ++r) {
    const ComplexMatrix rho_t =
        inst.regional_truths[std::size_t(r)].mat + t * drho[std::size_t(r)];
    const RealMatrix c_t =
        inst.confusions_truth[std::size_t(r)].m + t * dc[std::size_t(r)];
    const RealVector pi_t =
        born_matrix(inst.povms[std::size_t(r)]) * herm_to_vec(rho_t);
    const RealVector pred = c_t * pi_t;
    out.insert(out.end(), pred.data(), pred.data() + pred.size());
  }
  return Eigen::Map<RealVector>(out.data(), Eigen::Index(out.size()));
}

} // namespace

TEST_CASE("tangent dimension of a single 1-qubit region") {
  const Instance inst = one_qubit_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  // Traceless Hermitian 2x2: 3 real dims; 4x4 zero-column-sum: 12.
  CHECK(model.tangent_dim() == 15);
  CHECK(model.total == 20);
  // The basis satisfies the constraints.
  CHECK((model.constraints * model.basis).cwiseAbs().maxCoeff() < 1e-10);
  // Orthonormality.
  CHECK((model.basis.transpose() * model.basis -
         RealMatrix::Identity(15, 15)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("fully overlapping regions halve the state block") {
  const Instance inst =
      build_instance(make_region_graph(2, {{0, 1}, {0, 1}}), 0.2, 0.05, 300, 5, 0.1);
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  // Two copies of a 2-qubit region forced equal: one traceless Hermitian
  // block (15) plus two zero-column-sum confusion blocks (240 each).
  CHECK(model.tangent_dim() == 15 + 2 * 240);

  // Any tangent direction realizes identical state perturbations.
  Rng rng(3);
  RealVector v(model.tangent_dim());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.next_normal();
  const RealVector full = model.basis * v;
  const ComplexMatrix d0 = model.state_part(full, 0);
  const ComplexMatrix d1 = model.state_part(full, 1);
  CHECK((d0 - d1).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(d0.trace().real()) < 1e-10);
}

TEST_CASE("chain fixture tangent dimensions by rank accounting") {
  const Instance inst = chain_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  // Coordinates: 2 * 16 (states) + 2 * 256 (confusions) = 544. Constraints:
  // 2 trace rows + 2 * 16 column sums + 4 overlap rows, with exactly one
  // redundancy (the traced overlap rows reproduce the difference of the two
  // trace rows), so the rank is 37.
  CHECK(model.total == 544);
  CHECK(model.tangent_dim() == 544 - 37);
  CHECK((model.constraints * model.basis).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("tensor confusion parameterization is smaller and isometric") {
  const Instance inst = chain_fixture();
  LinearizedModel full = theory::tangent_basis(inst, ConfusionParam::Full);
  LinearizedModel tensor = theory::tangent_basis(inst, ConfusionParam::Tensor);
  CHECK(tensor.tangent_dim() < full.tangent_dim());

  // The tensor basis spans sums of single-factor perturbations and is
  // orthonormal in the Frobenius sense: realized norms equal coordinate
  // norms.
  Rng rng(17);
  RealVector v(tensor.tangent_dim());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.next_normal();
  const RealVector flat = tensor.basis * v;
  double realized = 0.0;
  for (int r = 0; r < inst.n_regions(); ++r) {
    realized += tensor.state_part(flat, r).squaredNorm();
    realized += tensor.conf_part(flat, r, 16).squaredNorm();
  }
  CHECK(realized == doctest::Approx(v.squaredNorm()).epsilon(1e-10));

  // Realized confusion perturbations have zero column sums.
  const RealMatrix dc = tensor.conf_part(flat, 0, 16);
  CHECK(dc.colwise().sum().cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("linearized map: kernel and scaling structure") {
  const Instance inst = one_qubit_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  theory::linearized_map(inst, model);
  CHECK(model.map.rows() == 4);
  CHECK(model.map.cols() == 15);

  // Scaling a direction scales the output linearly.
  RealVector v = RealVector::Zero(15);
  v[3] = 1.0;
  CHECK(((model.map * (2.5 * v)) - 2.5 * (model.map * v)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("finite differences confirm the linearized map") {
  const Instance inst = chain_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  theory::linearized_map(inst, model);
  Rng rng(23);
  for (int trial = 0; trial < 5; ++trial) {
    RealVector v(model.tangent_dim());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.next_normal();
    v.normalize();
    const RealVector flat = model.basis * v;
    std::vector<ComplexMatrix> drho;
    std::vector<RealMatrix> dc;
    for (int r = 0; r < inst.n_regions(); ++r) {
      drho.push_back(model.state_part(flat, r));
      dc.push_back(model.conf_part(flat, r, 16));
    }
    const RealVector base = stacked_prediction(inst, drho, dc, 0.0);
    const RealVector lin = model.map * v;
    // The expansion is exactly quadratic: remainder(t) = t^2 * bilinear.
    const double rem3 =
        (stacked_prediction(inst, drho, dc, 1e-3) - base - 1e-3 * lin).norm();
    const double rem4 =
        (stacked_prediction(inst, drho, dc, 1e-4) - base - 1e-4 * lin).norm();
    CHECK(rem4 > 0.0);
    CHECK(rem3 / rem4 == doctest::Approx(100.0).epsilon(0.2));

    // Halving t quarters the remainder.
    const double rem3h =
        (stacked_prediction(inst, drho, dc, 5e-4) - base - 5e-4 * lin).norm();
    CHECK(rem3 / rem3h == doctest::Approx(4.0).epsilon(0.13));
  }
}

TEST_CASE("identifiability report on the 1-qubit fixture") {
  const Instance inst = one_qubit_fixture();
  const auto rep = theory::identifiability_report(inst, ConfusionParam::Full);
  CHECK(rep.tangent_dim == 15);
  CHECK(rep.out_dim == 4);
  // Rank-nullity: the map lands in R^4, so at least 11 kernel directions.
  CHECK(rep.kernel_dim >= rep.tangent_dim - rep.out_dim);
  CHECK(rep.kernel_dim + rep.rank == rep.tangent_dim);
  CHECK(rep.kernel_dim > 0);
  CHECK(rep.sigma_min > 0.0);
  CHECK(rep.growth_constant_estimate ==
        doctest::Approx(rep.sigma_min * rep.sigma_min / 8.0).epsilon(1e-12));
  CHECK(rep.kappa > 0.0);
}

TEST_CASE("tensor parameterization shrinks the kernel") {
  const Instance inst = chain_fixture();
  const auto full = theory::identifiability_report(inst, ConfusionParam::Full);
  const auto tensor = theory::identifiability_report(inst, ConfusionParam::Tensor);
  CHECK(full.kernel_dim >= full.tangent_dim - full.out_dim);
  CHECK(full.kernel_dim > 0);
  CHECK(tensor.kernel_dim < full.kernel_dim);
}

TEST_CASE("quadratic growth probe limits") {
  const Instance inst = chain_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Tensor);
  theory::linearized_map(inst, model);
  Eigen::BDCSVD<RealMatrix> svd(model.map, Eigen::ComputeFullV);
  const auto rep = theory::identifiability_report(inst, model);

  // Kernel-complement direction: the top singular direction.
  const RealVector v_top = svd.matrixV().col(0);
  const auto probe = theory::quadratic_growth_probe(
      inst, model, v_top, {1e-2, 1e-3, 1e-4}, rep.sigma_min, rep.kappa);
  REQUIRE(probe.points.size() == 3);
  for (const auto& pt : probe.points) {
    REQUIRE(pt.feasible);
    CHECK(pt.ratio > 0.0);
  }
  // Small-t limit: ratio -> ||A v||^2 / 2 within 1%.
  CHECK(probe.points[2].ratio ==
        doctest::Approx(probe.linear_norm_sq_half).epsilon(0.01));
  // Doubling t quadruples the squared distance exactly.
  const auto probe2 = theory::quadratic_growth_probe(inst, model, v_top,
                                                     {1e-3, 2e-3}, 0.0, 0.0);
  CHECK(probe2.points[1].dist_sq ==
        doctest::Approx(4.0 * probe2.points[0].dist_sq).epsilon(1e-10));

  // Ratios on kernel-complement directions dominate the envelope.
  for (Eigen::Index c = 0; c < rep.rank; c += std::max<Eigen::Index>(rep.rank / 5, 1)) {
    const auto pr = theory::quadratic_growth_probe(
        inst, model, svd.matrixV().col(c), {1e-3}, rep.sigma_min, rep.kappa);
    if (!pr.points[0].feasible) continue;
    CHECK(pr.points[0].ratio >= 0.9 * rep.sigma_min * rep.sigma_min / 2.0);
    CHECK(pr.points[0].ratio >= pr.points[0].envelope * 0.99);
  }
}

TEST_CASE("quadratic growth fails along kernel directions") {
  const Instance inst = chain_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  theory::linearized_map(inst, model);
  Eigen::BDCSVD<RealMatrix> svd(model.map, Eigen::ComputeFullV);
  const auto rep = theory::identifiability_report(inst, model);
  REQUIRE(rep.kernel_dim > 0);
  const RealVector v_ker = svd.matrixV().col(svd.matrixV().cols() - 1);
  const auto probe = theory::quadratic_growth_probe(inst, model, v_ker,
                                                    {1e-2, 1e-3, 1e-4});
  // Q* = O(t^4) along the kernel: the ratio collapses quadratically.
  REQUIRE(probe.points[0].feasible);
  REQUIRE(probe.points[2].feasible);
  const bool collapsed =
      probe.points[2].ratio < 1e-4 * std::max(probe.points[0].ratio, 1e-12) ||
      probe.points[2].ratio < 1e-14;
  CHECK(collapsed);
}

TEST_CASE("growth probe skips infeasible step sizes with a note") {
  const Instance inst = one_qubit_fixture();
  LinearizedModel model = theory::tangent_basis(inst, ConfusionParam::Full);
  theory::linearized_map(inst, model);
  RealVector v = RealVector::Zero(model.tangent_dim());
  v[0] = 1.0;
  const auto probe = theory::quadratic_growth_probe(inst, model, v, {1e-4, 50.0});
  CHECK(probe.points[0].feasible);
  CHECK_FALSE(probe.points[1].feasible);
  CHECK(!probe.points[1].note.empty());
}

TEST_CASE("KL identity holds on random interior fixtures") {
  Rng rng(99);
  const Povm povm = tensor_povm(1);
  for (int trial = 0; trial < 10; ++trial) {
    const DensityMatrix rho = testutil::random_density({0}, 3000 + trial);
    // Interior confusion: blend toward uniform columns.
    ConfusionMatrix c = gen_confusion(4, 0.08, 4000 + trial);
    c.m = 0.85 * c.m + 0.15 * RealMatrix::Constant(4, 4, 0.25);
    const RealVector noisy = c.m * born(rho, povm).p;
    const auto shots = sample_shots(ProbabilityVector::from(noisy), 1000,
                                    5000 + trial);
    const double rel = theory::kl_mle_identity_check(shots.counts, rho, povm, c);
    CHECK(rel < 1e-9);
  }
}

TEST_CASE("KL identity conventions") {
  const Povm povm = tensor_povm(1);
  const DensityMatrix rho = testutil::random_density({0}, 1);
  ConfusionMatrix c = ConfusionMatrix::identity(4);
  c.m = 0.9 * c.m + 0.1 * RealMatrix::Constant(4, 4, 0.25);

  // All counts in one bin: the empirical entropy term vanishes by the
  // 0 log 0 convention and the identity still holds.
  std::vector<std::int64_t> counts{500, 0, 0, 0};
  CHECK(theory::kl_mle_identity_check(counts, rho, povm, c) < 1e-12);

  // Zero predicted probability with a nonzero count is rejected.
  Povm proj;
  proj.dim = 2;
  ComplexMatrix e0 = ComplexMatrix::Zero(2, 2);
  e0(0, 0) = 1.0;
  ComplexMatrix e1 = ComplexMatrix::Zero(2, 2);
  e1(1, 1) = 1.0;
  proj.effects = {e0, e1};
  ComplexMatrix pure = ComplexMatrix::Zero(2, 2);
  pure(0, 0) = 1.0;
  const DensityMatrix zero_state = DensityMatrix::make({0}, pure);
  std::vector<std::int64_t> bad{0, 5};
  CHECK_THROWS_AS(theory::kl_mle_identity_check(bad, zero_state, proj,
                                                ConfusionMatrix::identity(2)),
                  undefined_metric_error);
}
