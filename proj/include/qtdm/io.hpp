/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtdm/instance.hpp"
#include "qtdm/solver.hpp"
#include "qtdm/version.hpp"

namespace qtdm {
namespace io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Binary arrays: one text header line `QTDM1 <dtype> <rows> <cols>\n`
// followed by raw row-major little-endian payload (complex128 or float64).
// Round trips are bit exact.
// ---------------------------------------------------------------------------

inline void write_array(const fs::path& path, const ComplexMatrix& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "QTDM1 c128 " << m.rows() << " " << m.cols() << "\n";
  std::vector<double> buf;
  buf.reserve(std::size_t(m.size()) * 2);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      buf.push_back(m(i, j).real());
      buf.push_back(m(i, j).imag());
    }
  f.write(reinterpret_cast<const char*>(buf.data()),
          std::streamsize(buf.size() * sizeof(double)));
}

inline void write_array(const fs::path& path, const RealMatrix& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << "QTDM1 f64 " << m.rows() << " " << m.cols() << "\n";
  std::vector<double> buf;
  buf.reserve(std::size_t(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) buf.push_back(m(i, j));
  f.write(reinterpret_cast<const char*>(buf.data()),
          std::streamsize(buf.size() * sizeof(double)));
}

inline void write_array(const fs::path& path, const RealVector& v) {
  RealMatrix m(v.size(), 1);
  m.col(0) = v;
  write_array(path, m);
}

namespace detail {

inline void read_header(std::ifstream& f, const fs::path& path,
                        const std::string& want_dtype, Eigen::Index& rows,
                        Eigen::Index& cols) {
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("truncated header in " + path.string());
  std::istringstream hs(line);
  std::string magic, dtype;
  hs >> magic >> dtype >> rows >> cols;
  if (magic != "QTDM1") throw std::runtime_error("bad magic in " + path.string());
  if (dtype != want_dtype)
    throw std::runtime_error("expected dtype " + want_dtype + " in " + path.string() +
                             ", found " + dtype);
  if (rows < 0 || cols < 0 || hs.fail())
    throw std::runtime_error("bad dims in " + path.string());
}

} // namespace detail

inline ComplexMatrix read_complex_array(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  Eigen::Index rows = 0, cols = 0;
  detail::read_header(f, path, "c128", rows, cols);
  std::vector<double> buf(std::size_t(rows) * std::size_t(cols) * 2);
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(double)));
  if (!f) throw std::runtime_error("truncated payload in " + path.string());
  ComplexMatrix m(rows, cols);
  std::size_t t = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = Complex(buf[t], buf[t + 1]);
      t += 2;
    }
  return m;
}

inline RealMatrix read_real_array(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  Eigen::Index rows = 0, cols = 0;
  detail::read_header(f, path, "f64", rows, cols);
  std::vector<double> buf(std::size_t(rows) * std::size_t(cols));
  f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(double)));
  if (!f) throw std::runtime_error("truncated payload in " + path.string());
  RealMatrix m(rows, cols);
  std::size_t t = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = buf[t++];
  return m;
}

// ---------------------------------------------------------------------------
// Instance directory
// ---------------------------------------------------------------------------

inline nlohmann::json seed_ledger_to_json(const SeedLedger& s) {
  return nlohmann::json{{"master", s.master},
                        {"state", s.state},
                        {"confusion", s.confusion},
                        {"sampling", s.sampling}};
}

inline void save_instance(const Instance& inst, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json man;
  man["format"] = "qtdm-instance";
  man["version"] = kVersion;
  man["graph"] = to_json(inst.graph);
  man["nu"] = inst.nu;
  man["eps"] = inst.eps;
  man["shots_per_region"] = inst.shots_per_region;
  man["delta_c_star"] = inst.delta_c_star;
  man["seeds"] = seed_ledger_to_json(inst.seeds);
  man["povm"] = "sic_tensor";
  std::ofstream(dir / "manifest.json") << man.dump(2) << "\n";
  for (int r = 0; r < inst.n_regions(); ++r) {
    const std::string tag = std::to_string(r);
    write_array(dir / ("region_" + tag + "_rho_truth.qtdm"),
                inst.regional_truths[std::size_t(r)].mat);
    write_array(dir / ("region_" + tag + "_confusion_truth.qtdm"),
                inst.confusions_truth[std::size_t(r)].m);
    write_array(dir / ("region_" + tag + "_empirical.qtdm"),
                inst.samples[std::size_t(r)].empirical.p);
    RealVector counts(inst.samples[std::size_t(r)].counts.size());
    for (Eigen::Index i = 0; i < counts.size(); ++i)
      counts[i] = double(inst.samples[std::size_t(r)].counts[std::size_t(i)]);
    write_array(dir / ("region_" + tag + "_counts.qtdm"), counts);
  }
}

inline Instance load_instance(const fs::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
  nlohmann::json man;
  mf >> man;
  if (man.at("format").get<std::string>() != "qtdm-instance")
    throw std::runtime_error("not an instance directory: " + dir.string());
  Instance inst;
  inst.graph = region_graph_from_json(man.at("graph"));
  inst.nu = man.at("nu").get<double>();
  inst.eps = man.at("eps").get<double>();
  inst.shots_per_region = man.at("shots_per_region").get<std::int64_t>();
  inst.delta_c_star = man.at("delta_c_star").get<double>();
  const auto& js = man.at("seeds");
  inst.seeds.master = js.at("master").get<std::uint64_t>();
  inst.seeds.state = js.at("state").get<std::uint64_t>();
  inst.seeds.confusion = js.at("confusion").get<std::vector<std::uint64_t>>();
  inst.seeds.sampling = js.at("sampling").get<std::vector<std::uint64_t>>();
  for (int r = 0; r < inst.graph.n_regions(); ++r) {
    const std::string tag = std::to_string(r);
    const auto& sites = inst.graph.regions[std::size_t(r)];
    inst.regional_truths.push_back(DensityMatrix::trusted(
        sites, read_complex_array(dir / ("region_" + tag + "_rho_truth.qtdm"))));
    inst.confusions_truth.push_back(ConfusionMatrix{
        read_real_array(dir / ("region_" + tag + "_confusion_truth.qtdm"))});
    inst.povms.push_back(tensor_povm(static_cast<int>(sites.size())));
    inst.ideal_probs.push_back(born(inst.regional_truths.back(), inst.povms.back()));
    RealVector noisy = inst.confusions_truth.back().m * inst.ideal_probs.back().p;
    inst.noisy_probs.push_back(ProbabilityVector::from(std::move(noisy)));
    const RealMatrix emp = read_real_array(dir / ("region_" + tag + "_empirical.qtdm"));
    const RealMatrix cnt = read_real_array(dir / ("region_" + tag + "_counts.qtdm"));
    ShotSample smp;
    smp.empirical = ProbabilityVector::from(emp.col(0));
    for (Eigen::Index i = 0; i < cnt.rows(); ++i)
      smp.counts.push_back(std::int64_t(cnt(i, 0)));
    inst.samples.push_back(std::move(smp));
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Result bundle and trace CSV
// ---------------------------------------------------------------------------

inline const char* kTraceHeader =
    "k,l,r_cons,objective,wall_ns,dual_asym,herm_err,trace_err,min_eig,"
    "colsum_err,subsolver_warnings";

inline void write_trace_csv(const std::vector<TraceRow>& trace, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << kTraceHeader << "\n";
  char line[512];
  for (const auto& row : trace) {
    std::snprintf(line, sizeof(line),
                  "%d,%d,%.17g,%.17g,%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                  row.k, row.l, row.r_cons, row.objective,
                  static_cast<long long>(row.wall_ns), row.dual_asym, row.herm_err,
                  row.trace_err, row.min_eig, row.colsum_err,
                  row.subsolver_warnings);
    f << line;
  }
}

inline std::vector<TraceRow> read_trace_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(f, line);  // header
  std::vector<TraceRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    TraceRow r;
    long long wall = 0;
    if (std::sscanf(line.c_str(),
                    "%d,%d,%lg,%lg,%lld,%lg,%lg,%lg,%lg,%lg,%d", &r.k, &r.l,
                    &r.r_cons, &r.objective, &wall, &r.dual_asym, &r.herm_err,
                    &r.trace_err, &r.min_eig, &r.colsum_err,
                    &r.subsolver_warnings) < 11)
      throw std::runtime_error("malformed trace row in " + path.string());
    r.wall_ns = wall;
    rows.push_back(r);
  }
  return rows;
}

// Estimates are serialized like instance arrays; the trace (which carries
// wall-clock timings) goes to a separate CSV.
inline void save_estimate(const EstimateResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t r = 0; r < res.rho_hat.size(); ++r) {
    const std::string tag = std::to_string(r);
    write_array(dir / ("region_" + tag + "_rho_hat.qtdm"), res.rho_hat[r].mat);
    write_array(dir / ("region_" + tag + "_c_hat.qtdm"), res.c_hat[r].m);
  }
  write_trace_csv(res.trace, dir / "trace.csv");
}

} // namespace io
} // namespace qtdm
