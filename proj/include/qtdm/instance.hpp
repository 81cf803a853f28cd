/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qtdm/qmat.hpp"
#include "qtdm/regions.hpp"
#include "qtdm/rng.hpp"

namespace qtdm {

// Column-stochastic readout model: entry (m, m') is the probability of
// recording outcome m when the ideal outcome is m'.
struct ConfusionMatrix {
  RealMatrix m;

  Eigen::Index size() const { return m.rows(); }

  static ConfusionMatrix identity(Eigen::Index n) {
    return ConfusionMatrix{RealMatrix::Identity(n, n)};
  }

  static ConfusionMatrix make(RealMatrix cm) {
    ConfusionMatrix c{std::move(cm)};
    c.validate();
    return c;
  }

  void validate() const {
    if (m.rows() < 1 || m.rows() != m.cols())
      throw std::invalid_argument("ConfusionMatrix: square matrix required");
    if (!m.allFinite()) throw std::invalid_argument("ConfusionMatrix: non-finite entry");
    if (m.minCoeff() < -1e-12 || m.maxCoeff() > 1.0 + 1e-12)
      throw std::invalid_argument("ConfusionMatrix: entries outside [0,1]");
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (std::abs(m.col(j).sum() - 1.0) > 1e-12)
        throw std::invalid_argument("ConfusionMatrix: column " + std::to_string(j) +
                                    " does not sum to 1");
  }
};

// Ground truth: identity perturbed by eps * |G| with G entrywise standard
// normal, each column projected back onto the simplex. eps = 0 returns the
// identity exactly.
inline ConfusionMatrix gen_confusion(Eigen::Index m, double eps, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("gen_confusion: m must be >= 1");
  if (eps < 0.0) throw std::invalid_argument("gen_confusion: eps must be >= 0");
  RealMatrix c = RealMatrix::Identity(m, m);
  if (eps > 0.0) {
    Rng rng(seed);
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index i = 0; i < m; ++i)
        c(i, j) += eps * std::abs(rng.next_normal());
    for (Eigen::Index j = 0; j < m; ++j) c.col(j) = project_simplex(c.col(j));
  }
  return ConfusionMatrix{std::move(c)};
}

// Monte-Carlo calibration of eps -> E[delta_C*] for the 256-outcome readout
// model (20 seeds per grid point). Used to translate a target deviation from
// ideal readout into the generator's perturbation scale.
struct CalibrationPoint {
  double eps;
  double delta_mean;
};

inline constexpr CalibrationPoint kConfusionCalibration256[] = {
    {0.000, 0.00000}, {0.005, 0.00945}, {0.010, 0.01889}, {0.020, 0.03779},
    {0.030, 0.05668}, {0.050, 0.09447}, {0.080, 0.15115}, {0.120, 0.22672},
    {0.200, 0.37787}};

// Expected delta_C* for a given eps at 256 outcomes (piecewise linear).
inline double delta_for_eps(double eps) {
  const auto& tab = kConfusionCalibration256;
  const int n = int(std::size(tab));
  if (eps <= 0.0) return 0.0;
  for (int i = 1; i < n; ++i)
    if (eps <= tab[i].eps) {
      const double w = (eps - tab[i - 1].eps) / (tab[i].eps - tab[i - 1].eps);
      return tab[i - 1].delta_mean + w * (tab[i].delta_mean - tab[i - 1].delta_mean);
    }
  return tab[n - 1].delta_mean * (eps / tab[n - 1].eps);
}

// Perturbation scale that hits a target delta_C* at 256 outcomes.
inline double eps_for_delta_target(double delta) {
  const auto& tab = kConfusionCalibration256;
  const int n = int(std::size(tab));
  if (delta <= 0.0) return 0.0;
  for (int i = 1; i < n; ++i)
    if (delta <= tab[i].delta_mean) {
      const double w =
          (delta - tab[i - 1].delta_mean) / (tab[i].delta_mean - tab[i - 1].delta_mean);
      return tab[i - 1].eps + w * (tab[i].eps - tab[i - 1].eps);
    }
  return tab[n - 1].eps * (delta / tab[n - 1].delta_mean);
}

// Average relative Frobenius distance of the confusion matrices from the
// identity.
inline double deviation_delta_c(const std::vector<ConfusionMatrix>& confusions) {
  if (confusions.empty()) throw std::invalid_argument("deviation_delta_c: empty set");
  double acc = 0.0;
  for (const auto& c : confusions) {
    const Eigen::Index n = c.size();
    if (n != c.m.cols()) throw std::invalid_argument("deviation_delta_c: non-square");
    const double idn = std::sqrt(double(n));
    acc += (c.m - RealMatrix::Identity(n, n)).norm() / idn;
  }
  return acc / double(confusions.size());
}

// Caps for materializing the global ground truth. A dense 2^q x 2^q matrix
// is kept only for small q; beyond that only the 2^q state vector exists.
constexpr int kDenseStateCap = 10;
constexpr int kStateVectorCap = 24;

// Global pure component |psi>. Up to the dense cap this is U|0...0> with U a
// Haar random unitary; beyond it, a normalized complex Gaussian vector (the
// same distribution) is drawn directly so that no 2^q x 2^q unitary is ever
// formed.
inline ComplexVector make_global_pure_state(int q, std::uint64_t seed) {
  if (q < 1) throw std::invalid_argument("make_global_pure_state: q must be >= 1");
  if (q > kStateVectorCap)
    throw resource_limit_error("make_global_pure_state: q = " + std::to_string(q) +
                               " exceeds the state-vector cap");
  const Eigen::Index dim = Eigen::Index(1) << q;
  if (q <= kDenseStateCap) return random_unitary(dim, seed).col(0);
  Rng rng(seed);
  ComplexVector psi(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    psi[i] = Complex(rng.next_normal(), rng.next_normal());
  psi /= psi.norm();
  return psi;
}

// rho = (1 - nu) |psi><psi| + (nu / 2^q) I, materialized densely.
inline DensityMatrix make_global_state(int q, double nu, std::uint64_t seed) {
  if (nu < 0.0 || nu >= 1.0)
    throw std::invalid_argument("make_global_state: nu must be in [0,1)");
  if (q < 1) throw std::invalid_argument("make_global_state: q must be >= 1");
  if (q > kDenseStateCap)
    throw resource_limit_error("make_global_state: dense materialization capped at q = " +
                               std::to_string(kDenseStateCap));
  const Eigen::Index dim = Eigen::Index(1) << q;
  const ComplexVector psi = make_global_pure_state(q, seed);
  ComplexMatrix rho = (1.0 - nu) * (psi * psi.adjoint());
  rho += (nu / double(dim)) * ComplexMatrix::Identity(dim, dim);
  std::vector<int> sites;
  sites.resize(std::size_t(q));
  std::iota(sites.begin(), sites.end(), 0);
  return DensityMatrix::trusted(std::move(sites), std::move(rho));
}

// Regional ground truth without forming the global matrix: the maximally
// mixed component reduces analytically, the pure component contracts on the
// state vector.
inline DensityMatrix regional_truth_from_pure(const ComplexVector& psi, int q,
                                              double nu,
                                              const std::vector<int>& region_sites) {
  const Eigen::Index dk = Eigen::Index(1) << region_sites.size();
  ComplexMatrix rho = (1.0 - nu) * reduced_from_statevector(psi, q, region_sites);
  rho += (nu / double(dk)) * ComplexMatrix::Identity(dk, dk);
  return DensityMatrix::trusted(region_sites, std::move(rho));
}

// Empirical distribution from t categorical draws (inverse CDF).
struct ShotSample {
  std::vector<std::int64_t> counts;
  ProbabilityVector empirical;
};

inline ShotSample sample_shots(const ProbabilityVector& p, std::int64_t t,
                               std::uint64_t seed) {
  if (t < 1) throw std::invalid_argument("sample_shots: t must be >= 1");
  const Eigen::Index m = p.size();
  RealVector cum(m);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    acc += p[i];
    cum[i] = acc;
  }
  cum[m - 1] = std::max(cum[m - 1], 1.0);
  Rng rng(seed);
  std::vector<std::int64_t> counts(std::size_t(m), 0);
  for (std::int64_t s = 0; s < t; ++s) {
    const double u = rng.next_double();
    const double* begin = cum.data();
    const Eigen::Index idx = std::upper_bound(begin, begin + m, u) - begin;
    ++counts[std::size_t(std::min(idx, m - 1))];
  }
  RealVector emp(m);
  for (Eigen::Index i = 0; i < m; ++i) emp[i] = double(counts[std::size_t(i)]) / double(t);
  return ShotSample{std::move(counts), ProbabilityVector::from(std::move(emp))};
}

// Named sub-seeds derived from one master seed.
struct SeedLedger {
  std::uint64_t master = 0;
  std::uint64_t state = 0;
  std::vector<std::uint64_t> confusion;
  std::vector<std::uint64_t> sampling;

  static SeedLedger split(std::uint64_t master, int n_regions) {
    SeedLedger led;
    led.master = master;
    led.state = derive_seed(master, "state");
    for (int r = 0; r < n_regions; ++r) {
      led.confusion.push_back(derive_seed(master, "confusion", std::uint64_t(r)));
      led.sampling.push_back(derive_seed(master, "sampling", std::uint64_t(r)));
    }
    return led;
  }
};

// A reproducible benchmark instance: regional ground truths reduced from one
// global state, per-region readout models, and sampled shot statistics.
struct Instance {
  RegionGraph graph;
  double nu = 0.0;
  double eps = 0.0;
  std::int64_t shots_per_region = 0;
  SeedLedger seeds;

  ComplexVector global_pure;                    // |psi> on all sites
  std::optional<DensityMatrix> global_truth;    // dense, only for small q
  std::vector<DensityMatrix> regional_truths;
  std::vector<ConfusionMatrix> confusions_truth;
  std::vector<Povm> povms;
  std::vector<ProbabilityVector> ideal_probs;   // born(rho_r*)
  std::vector<ProbabilityVector> noisy_probs;   // C_r* born(rho_r*)
  std::vector<ShotSample> samples;
  double delta_c_star = 0.0;

  int n_regions() const { return graph.n_regions(); }
  const ProbabilityVector& empirical(int r) const {
    return samples[std::size_t(r)].empirical;
  }
};

// confusion_floor > 0 blends each ground-truth confusion matrix with the
// uniform column distribution, making every entry strictly positive (the
// interior reference needed by the local analysis probes).
inline Instance build_instance(const RegionGraph& graph, double nu, double eps,
                               std::int64_t shots_per_region,
                               std::uint64_t master_seed,
                               double confusion_floor = 0.0) {
  const auto rep = validate(graph);
  if (!rep.ok) throw std::invalid_argument("build_instance: " + rep.violations.front());
  if (confusion_floor < 0.0 || confusion_floor >= 1.0)
    throw std::invalid_argument("build_instance: confusion_floor must be in [0,1)");
  Instance inst;
  inst.graph = graph;
  inst.nu = nu;
  inst.eps = eps;
  inst.shots_per_region = shots_per_region;
  inst.seeds = SeedLedger::split(master_seed, graph.n_regions());

  inst.global_pure = make_global_pure_state(graph.n_sites, inst.seeds.state);
  if (graph.n_sites <= kDenseStateCap)
    inst.global_truth = make_global_state(graph.n_sites, nu, inst.seeds.state);

  for (int r = 0; r < graph.n_regions(); ++r) {
    const auto& sites = graph.regions[std::size_t(r)];
    inst.regional_truths.push_back(
        regional_truth_from_pure(inst.global_pure, graph.n_sites, nu, sites));
    inst.povms.push_back(tensor_povm(static_cast<int>(sites.size())));
    const Eigen::Index m = inst.povms.back().n_outcomes();
    ConfusionMatrix c = gen_confusion(m, eps, inst.seeds.confusion[std::size_t(r)]);
    if (confusion_floor > 0.0) {
      c.m = (1.0 - confusion_floor) * c.m +
            (confusion_floor / double(m)) * RealMatrix::Ones(m, m);
    }
    inst.confusions_truth.push_back(std::move(c));
    inst.ideal_probs.push_back(born(inst.regional_truths.back(), inst.povms.back()));
    RealVector noisy = inst.confusions_truth.back().m * inst.ideal_probs.back().p;
    inst.noisy_probs.push_back(ProbabilityVector::from(std::move(noisy)));
    inst.samples.push_back(sample_shots(inst.noisy_probs.back(), shots_per_region,
                                        inst.seeds.sampling[std::size_t(r)]));
  }
  inst.delta_c_star = deviation_delta_c(inst.confusions_truth);
  return inst;
}

} // namespace qtdm
