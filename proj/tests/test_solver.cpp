/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qtdm/metrics.hpp"
#include "qtdm/solver.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

using namespace qtdm;

namespace {

// Two overlapping 3-site regions on 4 sites (64 outcomes per region):
// large enough to exercise every code path, small enough to iterate fast.
RegionGraph small_graph() {
  return make_region_graph(4, {{0, 1, 2}, {1, 2, 3}});
}

Instance small_instance(double eps, std::int64_t shots, std::uint64_t seed) {
  return build_instance(small_graph(), 0.1, eps, shots, seed);
}

// Naive re-evaluation of the state objective with raw loops.
double objective_oracle(const Instance& inst,
                        const std::vector<DensityMatrix>& rhos,
                        const std::vector<ConfusionMatrix>& cs,
                        const std::vector<DensityMatrix>& anchors,
                        double gamma) {
  double acc = 0.0;
  for (int r = 0; r < inst.n_regions(); ++r) {
    const RealVector p =
        oracles::born_bruteforce(rhos[std::size_t(r)].mat,
                                 inst.povms[std::size_t(r)].effects);
    const RealVector pred = cs[std::size_t(r)].m * p;
    for (Eigen::Index m = 0; m < pred.size(); ++m) {
      const double d = inst.empirical(r)[m] - pred[m];
      acc += 0.5 * d * d;
    }
    acc += 0.5 * gamma *
           (rhos[std::size_t(r)].mat - anchors[std::size_t(r)].mat).squaredNorm();
  }
  return acc;
}

} // namespace

TEST_CASE("state_objective reference values") {
  const Instance inst = small_instance(0.05, 400, 1);
  const Povm povm = tensor_povm(1);

  // Exact fit at the anchors gives zero.
  std::vector<DensityMatrix> rhos{testutil::random_density({0}, 3)};
  std::vector<ConfusionMatrix> cs{ConfusionMatrix::identity(4)};
  std::vector<ProbabilityVector> emp{born(rhos[0], povm)};
  CHECK(state_objective(rhos, cs, rhos, 0.7, emp, {povm}) == doctest::Approx(0.0));

  // Unit squared distance between two deterministic distributions: all
  // columns of C equal e2, so the prediction is e2 while the data is e1.
  RealMatrix ce2 = RealMatrix::Zero(4, 4);
  ce2.row(1).setOnes();
  RealVector e1 = RealVector::Zero(4);
  e1[0] = 1.0;
  std::vector<ConfusionMatrix> c2{ConfusionMatrix::make(ce2)};
  std::vector<ProbabilityVector> emp1{ProbabilityVector::from(e1)};
  CHECK(state_objective(rhos, c2, rhos, 0.0, emp1, {povm}) ==
        doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(state_objective(rhos, cs, rhos, 0.1, emp1, {tensor_povm(2)}),
                  std::invalid_argument);
}

TEST_CASE("state_objective matches a naive recomputation") {
  const Instance inst = small_instance(0.08, 900, 7);
  std::vector<DensityMatrix> rhos, anchors;
  std::vector<ConfusionMatrix> cs;
  std::vector<ProbabilityVector> emp;
  for (int r = 0; r < inst.n_regions(); ++r) {
    rhos.push_back(testutil::random_density(inst.graph.regions[std::size_t(r)],
                                            100 + std::uint64_t(r)));
    anchors.push_back(testutil::random_density(inst.graph.regions[std::size_t(r)],
                                               200 + std::uint64_t(r)));
    cs.push_back(gen_confusion(64, 0.05, 300 + std::uint64_t(r)));
    emp.push_back(inst.empirical(r));
  }
  const double mine = state_objective(rhos, cs, anchors, 0.37, emp, inst.povms);
  const double oracle = objective_oracle(inst, rhos, cs, anchors, 0.37);
  CHECK(mine == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("consensus_update reference values") {
  const ComplexMatrix x = testutil::random_hermitian(4, 5);
  const ComplexMatrix zero = ComplexMatrix::Zero(4, 4);
  CHECK((consensus_update(x, x, zero, zero, 1.0) - x).cwiseAbs().maxCoeff() < 1e-15);

  // Antisymmetric duals cancel.
  const ComplexMatrix lam = testutil::random_hermitian(4, 6);
  const ComplexMatrix y = testutil::random_hermitian(4, 7);
  CHECK((consensus_update(x, y, lam, -lam, 2.0) - 0.5 * (x + y)).cwiseAbs().maxCoeff() <
        1e-14);

  // Scalar case: (0.2 + 0.4 + 0.1/1) / 2 = 0.35.
  ComplexMatrix a(1, 1), b(1, 1), l1(1, 1), l2(1, 1);
  a << 0.2;
  b << 0.4;
  l1 << 0.06;
  l2 << 0.04;
  CHECK(consensus_update(a, b, l1, l2, 1.0)(0, 0).real() ==
        doctest::Approx(0.35).epsilon(1e-15));

  CHECK_THROWS_AS(consensus_update(a, b, l1, l2, 0.0), std::invalid_argument);
}

TEST_CASE("dual_update reference values and antisymmetry") {
  const ComplexMatrix lam = testutil::random_hermitian(4, 8);
  const ComplexMatrix z = testutil::random_hermitian(4, 9);
  CHECK((dual_update(lam, z, z, 1.7) - lam).cwiseAbs().maxCoeff() < 1e-15);

  const ComplexMatrix x = testutil::random_hermitian(4, 10);
  CHECK((dual_update(ComplexMatrix::Zero(4, 4), x, ComplexMatrix::Zero(4, 4), 1.0) - x)
            .cwiseAbs()
            .maxCoeff() < 1e-15);

  // One full consensus + dual step from arbitrary Hermitian inputs makes the
  // pair of duals exactly antisymmetric.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ComplexMatrix ra = testutil::random_hermitian(4, 20 + seed);
    const ComplexMatrix rb = testutil::random_hermitian(4, 30 + seed);
    const ComplexMatrix la = testutil::random_hermitian(4, 40 + seed);
    const ComplexMatrix lb = testutil::random_hermitian(4, 50 + seed);
    const double beta = 0.7;
    const ComplexMatrix z1 = consensus_update(ra, rb, la, lb, beta);
    const ComplexMatrix la1 = dual_update(la, ra, z1, beta);
    const ComplexMatrix lb1 = dual_update(lb, rb, z1, beta);
    CHECK((la1 + lb1).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("solve_state_subproblem is dominated by the proximal anchor at large gamma") {
  const Povm povm = tensor_povm(2);
  const DensityMatrix anchor = testutil::random_density({0, 1}, 77);
  const DensityMatrix warm = testutil::random_density({0, 1}, 78);
  SolverConfig cfg;
  cfg.gamma_rho = 1e6;
  cfg.subsolver_max = 2000;
  const ProbabilityVector emp = born(testutil::random_density({0, 1}, 79), povm);
  const DensityMatrix out = solve_state_subproblem(
      warm, ConfusionMatrix::identity(16), povm, emp, anchor, {}, cfg);
  CHECK((out.mat - anchor.mat).norm() < 1e-4);
}

TEST_CASE("solve_state_subproblem solves the single-qubit exact-fit problem") {
  const Povm povm = tensor_povm(1);
  const DensityMatrix truth = testutil::random_density({0}, 123);
  const ProbabilityVector emp = born(truth, povm);
  SolverConfig cfg;
  cfg.gamma_rho = 0.0;
  cfg.subsolver_tol = 1e-14;
  cfg.subsolver_max = 5000;
  const DensityMatrix start =
      DensityMatrix::make({0}, ComplexMatrix::Identity(2, 2) / 2.0);
  const DensityMatrix fit = solve_state_subproblem(
      start, ConfusionMatrix::identity(4), povm, emp, start, {}, cfg);
  const double f = 0.5 * (emp.p - born(fit, povm).p).squaredNorm();
  CHECK(f <= 1e-8);

  // Cross-check against the exhaustive Bloch-ball search.
  const double grid_min = oracles::bloch_grid_search_min(
      emp.p, RealMatrix::Identity(4, 4), povm.effects, 0.01);
  CHECK(f <= grid_min + 1e-8);
}

TEST_CASE("solve_state_subproblem keeps an optimal warm start") {
  const Povm povm = tensor_povm(2);
  const DensityMatrix anchor = testutil::random_density({0, 1}, 500);
  const ProbabilityVector emp = born(anchor, povm);
  SolverConfig cfg;
  const DensityMatrix out = solve_state_subproblem(
      anchor, ConfusionMatrix::identity(16), povm, emp, anchor, {}, cfg);
  // The warm start is the unconstrained optimum; nothing should move.
  CHECK((out.mat - anchor.mat).norm() < 1e-6);
}

TEST_CASE("solve_state_subproblem never increases its objective") {
  const Povm povm = tensor_povm(2);
  SolverConfig cfg;
  cfg.subsolver_max = 40;  // force early stop
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const DensityMatrix warm = testutil::random_density({0, 1}, 600 + seed);
    const DensityMatrix anchor = testutil::random_density({0, 1}, 700 + seed);
    const ProbabilityVector emp =
        born(testutil::random_density({0, 1}, 800 + seed), povm);
    std::vector<RegionOverlapTerm> ovs;
    RegionOverlapTerm term;
    term.shared_sites = {0};
    term.lambda = testutil::random_hermitian(2, 900 + seed) * 0.1;
    term.z = testutil::random_hermitian(2, 950 + seed);
    ovs.push_back(term);

    auto value = [&](const DensityMatrix& rho) {
      double f = 0.5 * (emp.p - born(rho, povm).p).squaredNorm() +
                 0.5 * cfg.gamma_rho * (rho.mat - anchor.mat).squaredNorm();
      const ComplexMatrix red = partial_trace(rho, {0}).mat;
      f += (term.lambda.adjoint() * (red - term.z)).trace().real() +
           0.5 * cfg.beta * (red - term.z).squaredNorm();
      return f;
    };
    const DensityMatrix out = solve_state_subproblem(
        warm, ConfusionMatrix::identity(16), povm, emp, anchor, ovs, cfg);
    CHECK(value(out) <= value(warm) + 1e-12);
    out.validate();
  }
}

TEST_CASE("confusion_update pulls toward the reference at large lambda") {
  const Eigen::Index m = 16;
  const ConfusionMatrix ref = gen_confusion(m, 0.05, 11);
  const ConfusionMatrix warm = ConfusionMatrix::identity(m);
  RealVector p = RealVector::Constant(m, 1.0 / double(m));
  const ProbabilityVector emp =
      ProbabilityVector::from(RealVector::Constant(m, 1.0 / double(m)));
  const ConfusionMatrix out =
      confusion_update(p, emp, warm, ref, 1e6, 0.1, 1e-14, 5000);
  CHECK((out.m - ref.m).norm() < 1e-4);
}

TEST_CASE("confusion_update fits only the active column") {
  const Eigen::Index m = 8;
  RealVector p = RealVector::Zero(m);
  p[0] = 1.0;  // deterministic ideal outcome: only column 0 enters the fit
  Rng rng(2024);
  RealVector raw(m);
  for (Eigen::Index i = 0; i < m; ++i) raw[i] = rng.next_double();
  raw /= raw.sum();
  const ProbabilityVector emp = ProbabilityVector::from(raw);
  const ConfusionMatrix warm = gen_confusion(m, 0.03, 5);
  const ConfusionMatrix out =
      confusion_update(p, emp, warm, warm, 0.0, 0.0, 1e-14, 5000);
  // Column 0 reaches the projected optimum (the empirical distribution
  // itself); the others have zero gradient and stay at the warm start.
  CHECK((out.m.col(0) - emp.p).cwiseAbs().maxCoeff() < 1e-7);
  for (Eigen::Index j = 1; j < m; ++j)
    CHECK((out.m.col(j) - warm.m.col(j)).cwiseAbs().maxCoeff() < 1e-12);
  out.validate();
}

TEST_CASE("confusion_update keeps an optimal warm start") {
  const Eigen::Index m = 16;
  const ConfusionMatrix truth = gen_confusion(m, 0.04, 21);
  RealVector p(m);
  Rng rng(77);
  for (Eigen::Index i = 0; i < m; ++i) p[i] = rng.next_double();
  p /= p.sum();
  const ProbabilityVector emp = ProbabilityVector::from((truth.m * p).eval());
  // lambda = 0, gamma small: the truth solves the fit exactly.
  const ConfusionMatrix out = confusion_update(p, emp, truth, truth, 0.0, 0.1,
                                               1e-12, 2000);
  CHECK((out.m - truth.m).norm() < 1e-9);
}

TEST_CASE("inner_admm terminates immediately at a consensus-feasible stationary point") {
  Instance inst = small_instance(0.0, 100, 42);
  // Uniform data makes the maximally mixed initialization stationary.
  for (int r = 0; r < inst.n_regions(); ++r) {
    const Eigen::Index m = inst.povms[std::size_t(r)].n_outcomes();
    inst.samples[std::size_t(r)].empirical =
        ProbabilityVector::from(RealVector::Constant(m, 1.0 / double(m)));
  }
  SolverConfig cfg;
  cfg.mode = EstimatorMode::IdealFixed;
  SolverState st = init_solver_state(inst, cfg);
  const InnerResult res = run_inner_admm(st, inst, cfg);
  CHECK(res.iterations == 1);
  CHECK(res.r_cons < cfg.inner_tol * std::sqrt(2.0 * 16.0));
}

TEST_CASE("inner_admm with no overlaps equals independent proximal fits") {
  const RegionGraph g = make_region_graph(4, {{0, 1}, {2, 3}});
  CHECK(g.n_overlaps() == 0);
  const Instance inst = build_instance(g, 0.1, 0.05, 700, 9);
  SolverConfig cfg;
  cfg.mode = EstimatorMode::IdealFixed;
  cfg.subsolver_tol = 1e-12;
  cfg.subsolver_max = 3000;
  SolverState st = init_solver_state(inst, cfg);
  const std::vector<DensityMatrix> anchors = st.rho;
  run_inner_admm(st, inst, cfg);
  for (int r = 0; r < 2; ++r) {
    const DensityMatrix direct = solve_state_subproblem(
        anchors[std::size_t(r)], st.confusion[std::size_t(r)],
        inst.povms[std::size_t(r)], inst.empirical(r), anchors[std::size_t(r)], {},
        cfg);
    CHECK((st.rho[std::size_t(r)].mat - direct.mat).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("inner_admm drives the consensus residual below tolerance") {
  const Instance inst = small_instance(0.05, 2000, 31);
  SolverConfig cfg;
  cfg.mode = EstimatorMode::OracleFixed;
  SolverState st = init_solver_state(inst, cfg);
  std::vector<TraceRow> trace;
  const InnerResult res = run_inner_admm(st, inst, cfg, &trace);
  const double level = cfg.inner_tol * std::sqrt(2.0 * 16.0);
  CHECK(res.iterations <= cfg.inner_max);
  CHECK(res.r_cons <= level);
  // The residual trace is consistent with the state left behind.
  CHECK(metrics::consensus_residual(inst.graph, st) ==
        doctest::Approx(res.r_cons).epsilon(1e-9));

  // Optimality gap against a long-run reference of the same loop.
  SolverState ref = init_solver_state(inst, cfg);
  std::vector<TraceRow> ref_trace;
  run_inner_admm(ref, inst, cfg, &ref_trace, 2000);
  double jmin = 1e300;
  for (const auto& row : ref_trace) jmin = std::min(jmin, row.objective);
  CHECK(metrics::optimality_gap(res.objective, jmin) < 1e-6);
}

TEST_CASE("dual antisymmetry and feasibility hold along the trace") {
  const Instance inst = small_instance(0.05, 1500, 77);
  SolverConfig cfg;
  cfg.mode = EstimatorMode::Joint;
  cfg.outer_max = 3;
  const EstimateResult res = run_estimator(inst, cfg);
  REQUIRE(!res.trace.empty());
  for (const auto& row : res.trace) {
    CHECK(row.dual_asym <= 1e-10);
    CHECK(row.herm_err <= 1e-12);
    CHECK(row.trace_err <= 1e-12);
    CHECK(row.min_eig >= -1e-10);
    CHECK(row.colsum_err <= 1e-12);
  }
}

TEST_CASE("run_estimator modes agree bit-for-bit when readout is ideal") {
  const Instance inst = small_instance(0.0, 800, 4);
  SolverConfig ci, co;
  ci.mode = EstimatorMode::IdealFixed;
  co.mode = EstimatorMode::OracleFixed;
  ci.outer_max = co.outer_max = 6;
  const EstimateResult a = run_estimator(inst, ci);
  const EstimateResult b = run_estimator(inst, co);
  REQUIRE(a.rho_hat.size() == b.rho_hat.size());
  for (std::size_t r = 0; r < a.rho_hat.size(); ++r) {
    CHECK((a.rho_hat[r].mat - b.rho_hat[r].mat).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.c_hat[r].m - b.c_hat[r].m).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("run_estimator with outer_max = 0 returns the initialization") {
  const Instance inst = small_instance(0.02, 300, 15);
  SolverConfig cfg;
  cfg.mode = EstimatorMode::Joint;
  cfg.outer_max = 0;
  const EstimateResult res = run_estimator(inst, cfg);
  for (int r = 0; r < inst.n_regions(); ++r) {
    const Eigen::Index d = inst.regional_truths[std::size_t(r)].dim();
    CHECK((res.rho_hat[std::size_t(r)].mat -
           ComplexMatrix::Identity(d, d) / double(d)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(res.outer_iterations == 0);
}

TEST_CASE("run_estimator emits feasible iterates") {
  const Instance inst = small_instance(0.08, 2500, 12);
  SolverConfig cfg;
  cfg.mode = EstimatorMode::Joint;
  cfg.outer_max = 4;
  const EstimateResult res = run_estimator(inst, cfg);
  for (int r = 0; r < inst.n_regions(); ++r) {
    res.rho_hat[std::size_t(r)].validate();
    res.c_hat[std::size_t(r)].validate();
  }
  CHECK(res.l_bar > 0.0);
}

TEST_CASE("estimator ordering on a pinned noisy fixture") {
  // Regression fixture: readout deviation large enough that knowing the true
  // confusion matrices clearly helps, seed pinned.
  const Instance inst = small_instance(0.08, 200000, 4);
  SolverConfig cfg;
  cfg.mode = EstimatorMode::IdealFixed;
  const EstimateResult ei = run_estimator(inst, cfg);
  cfg.mode = EstimatorMode::Joint;
  const EstimateResult ej = run_estimator(inst, cfg);
  cfg.mode = EstimatorMode::OracleFixed;
  const EstimateResult eo = run_estimator(inst, cfg);
  const double e_i = metrics::state_error(ei.rho_hat, inst.regional_truths);
  const double e_j = metrics::state_error(ej.rho_hat, inst.regional_truths);
  const double e_o = metrics::state_error(eo.rho_hat, inst.regional_truths);
  CHECK(e_o < 0.5 * e_i);  // oracle advantage is large on this fixture
  CHECK(e_j < e_i);
  CHECK(e_o < e_j);
}

TEST_CASE("parallel region scheduling reproduces the sequential results exactly") {
  const Instance inst = small_instance(0.06, 1200, 55);
  SolverConfig seq, par;
  seq.mode = par.mode = EstimatorMode::Joint;
  seq.outer_max = par.outer_max = 3;
  par.parallel_regions = true;
  const EstimateResult a = run_estimator(inst, seq);
  const EstimateResult b = run_estimator(inst, par);
  for (std::size_t r = 0; r < a.rho_hat.size(); ++r) {
    CHECK((a.rho_hat[r].mat - b.rho_hat[r].mat).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.c_hat[r].m - b.c_hat[r].m).cwiseAbs().maxCoeff() == 0.0);
  }
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].r_cons == b.trace[i].r_cons);
    CHECK(a.trace[i].objective == b.trace[i].objective);
  }
}

TEST_CASE("solver config JSON round trip and validation") {
  SolverConfig cfg;
  cfg.beta = 2.5;
  cfg.lambda = 0.05;
  cfg.mode = EstimatorMode::OracleFixed;
  SolverConfig back;
  solver_config_from_json(to_json(cfg), back);
  CHECK(back.beta == cfg.beta);
  CHECK(back.lambda == cfg.lambda);
  CHECK(back.mode == cfg.mode);

  SolverConfig bad;
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
