/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qtdm/regions.hpp"

using namespace qtdm;

namespace {

void check_fixed_shape(const RegionGraph& g, int q, int r, int n_overlaps) {
  CHECK(g.n_sites == q);
  CHECK(g.n_regions() == r);
  CHECK(g.n_overlaps() == n_overlaps);
  for (const auto& reg : g.regions) CHECK(reg.size() == 4);
  for (const auto& ov : g.overlaps) CHECK(ov.shared.size() == 2);
  CHECK(validate(g).ok);
}

} // namespace

TEST_CASE("ring geometry") {
  const RegionGraph g = build_geometry(Geometry::Ring);
  check_fixed_shape(g, 12, 6, 6);
  // Cyclic neighbor pairs only.
  for (const auto& ov : g.overlaps)
    CHECK(((ov.b - ov.a) % 6 == 1 || (ov.b - ov.a) % 6 == 5));
}

TEST_CASE("ladder geometry") {
  const RegionGraph g = build_geometry(Geometry::Ladder);
  check_fixed_shape(g, 12, 6, 6);
  // Each overlap is one full column (an even site and its odd partner).
  for (const auto& ov : g.overlaps) {
    CHECK(ov.shared[0] % 2 == 0);
    CHECK(ov.shared[1] == ov.shared[0] + 1);
  }
}

TEST_CASE("torus geometry") {
  const RegionGraph g = build_geometry(Geometry::Torus);
  check_fixed_shape(g, 16, 9, 12);
  // Interior plaquette degree is 4.
  CHECK(g.overlaps_of(4).size() == 4);
  // Corner plaquette degree is 2.
  CHECK(g.overlaps_of(0).size() == 2);
}

TEST_CASE("hub geometry") {
  const RegionGraph g = build_geometry(Geometry::Hub);
  check_fixed_shape(g, 14, 6, 15);
  for (const auto& ov : g.overlaps) {
    CHECK(ov.shared[0] == 0);
    CHECK(ov.shared[1] == 1);
  }
}

TEST_CASE("every site is covered in every geometry") {
  for (Geometry kind :
       {Geometry::Ring, Geometry::Ladder, Geometry::Torus, Geometry::Hub}) {
    const RegionGraph g = build_geometry(kind);
    std::vector<bool> covered(std::size_t(g.n_sites), false);
    for (const auto& reg : g.regions)
      for (int s : reg) covered[std::size_t(s)] = true;
    for (bool c : covered) CHECK(c);
  }
}

TEST_CASE("validate reports duplicate overlaps") {
  RegionGraph g = build_geometry(Geometry::Ladder);
  g.overlaps.push_back(g.overlaps.front());
  const auto rep = validate(g);
  CHECK_FALSE(rep.ok);
  bool found = false;
  for (const auto& v : rep.violations)
    found = found || v.find("duplicate overlap") != std::string::npos;
  CHECK(found);
}

TEST_CASE("validate reports a wrong stored shared set with both sets listed") {
  RegionGraph g = build_geometry(Geometry::Ring);
  const auto actual = g.overlaps.front().shared;
  g.overlaps.front().shared = {0};
  const auto rep = validate(g);
  CHECK_FALSE(rep.ok);
  bool found = false;
  for (const auto& v : rep.violations) {
    if (v.find("stores shared set") == std::string::npos) continue;
    found = true;
    CHECK(v.find("{0}") != std::string::npos);
    CHECK(v.find("{" + std::to_string(actual[0]) + "," +
                 std::to_string(actual[1]) + "}") != std::string::npos);
  }
  CHECK(found);
}

TEST_CASE("validate reports uncovered sites and empty regions") {
  RegionGraph g;
  g.n_sites = 3;
  g.regions = {{0, 1}, {}};
  const auto rep = validate(g);
  CHECK_FALSE(rep.ok);
  CHECK(rep.violations.size() >= 2);
}

TEST_CASE("generic constructor derives overlaps") {
  const RegionGraph g = make_region_graph(3, {{0, 1}, {1, 2}, {0, 2}});
  CHECK(g.n_overlaps() == 3);
  for (const auto& ov : g.overlaps) CHECK(ov.shared.size() == 1);
}

TEST_CASE("region graph JSON round trip") {
  const RegionGraph g = build_geometry(Geometry::Torus);
  const RegionGraph back = region_graph_from_json(to_json(g));
  CHECK(back.n_sites == g.n_sites);
  CHECK(back.regions == g.regions);
  REQUIRE(back.n_overlaps() == g.n_overlaps());
  for (int i = 0; i < g.n_overlaps(); ++i) {
    CHECK(back.overlaps[std::size_t(i)].a == g.overlaps[std::size_t(i)].a);
    CHECK(back.overlaps[std::size_t(i)].b == g.overlaps[std::size_t(i)].b);
    CHECK(back.overlaps[std::size_t(i)].shared == g.overlaps[std::size_t(i)].shared);
  }
}
