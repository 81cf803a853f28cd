/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtdm/errors.hpp"

namespace qtdm {

enum class Geometry { Ring, Ladder, Torus, Hub };

inline std::string to_string(Geometry g) {
  switch (g) {
    case Geometry::Ring: return "ring";
    case Geometry::Ladder: return "ladder";
    case Geometry::Torus: return "torus";
    case Geometry::Hub: return "hub";
  }
  return "?";
}

inline Geometry geometry_from_string(const std::string& s) {
  if (s == "ring") return Geometry::Ring;
  if (s == "ladder") return Geometry::Ladder;
  if (s == "torus") return Geometry::Torus;
  if (s == "hub") return Geometry::Hub;
  throw std::invalid_argument("unknown geometry: " + s);
}

// One qubit per site. Regions are ascending site-index sets; overlaps list
// each unordered region pair with a nonempty intersection together with the
// shared site set.
struct RegionGraph {
  struct Overlap {
    int a = 0;
    int b = 0;
    std::vector<int> shared;
  };

  int n_sites = 0;
  std::vector<std::vector<int>> regions;
  std::vector<Overlap> overlaps;

  int n_regions() const { return static_cast<int>(regions.size()); }
  int n_overlaps() const { return static_cast<int>(overlaps.size()); }

  // Overlap indices touching region r, in canonical (stored) order.
  std::vector<int> overlaps_of(int r) const {
    std::vector<int> out;
    for (int i = 0; i < n_overlaps(); ++i)
      if (overlaps[std::size_t(i)].a == r || overlaps[std::size_t(i)].b == r)
        out.push_back(i);
    return out;
  }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;

  void fail(std::string msg) {
    ok = false;
    violations.push_back(std::move(msg));
  }
};

namespace detail {

inline std::vector<int> sorted_intersection(const std::vector<int>& a,
                                            const std::vector<int>& b) {
  std::vector<int> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::back_inserter(out));
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string s = "{";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s + "}";
}

} // namespace detail

inline ValidationReport validate(const RegionGraph& g) {
  ValidationReport rep;
  std::vector<bool> covered(std::size_t(std::max(g.n_sites, 0)), false);
  for (int r = 0; r < g.n_regions(); ++r) {
    const auto& reg = g.regions[std::size_t(r)];
    if (reg.empty()) rep.fail("region " + std::to_string(r) + " is empty");
    if (!std::is_sorted(reg.begin(), reg.end()) ||
        std::adjacent_find(reg.begin(), reg.end()) != reg.end())
      rep.fail("region " + std::to_string(r) + " is not strictly ascending");
    for (int s : reg) {
      if (s < 0 || s >= g.n_sites)
        rep.fail("region " + std::to_string(r) + " references site " +
                 std::to_string(s) + " outside [0," + std::to_string(g.n_sites) + ")");
      else
        covered[std::size_t(s)] = true;
    }
  }
  for (int s = 0; s < g.n_sites; ++s)
    if (!covered[std::size_t(s)])
      rep.fail("site " + std::to_string(s) + " is not covered by any region");

  std::set<std::pair<int, int>> seen;
  for (const auto& ov : g.overlaps) {
    const auto key = std::minmax(ov.a, ov.b);
    if (ov.a == ov.b) rep.fail("overlap pairs a region with itself: " + std::to_string(ov.a));
    if (ov.a < 0 || ov.a >= g.n_regions() || ov.b < 0 || ov.b >= g.n_regions()) {
      rep.fail("overlap references a region out of range");
      continue;
    }
    if (!seen.insert(key).second)
      rep.fail("duplicate overlap (" + std::to_string(key.first) + "," +
               std::to_string(key.second) + ")");
    const auto actual = detail::sorted_intersection(g.regions[std::size_t(ov.a)],
                                                    g.regions[std::size_t(ov.b)]);
    if (actual.empty())
      rep.fail("overlap (" + std::to_string(ov.a) + "," + std::to_string(ov.b) +
               ") has empty intersection");
    if (actual != ov.shared)
      rep.fail("overlap (" + std::to_string(ov.a) + "," + std::to_string(ov.b) +
               ") stores shared set " + detail::join_ints(ov.shared) +
               " but the regions intersect in " + detail::join_ints(actual));
  }
  return rep;
}

// Generic constructor: overlaps are derived as all unordered region pairs
// with nonempty intersection.
inline RegionGraph make_region_graph(int n_sites,
                                     std::vector<std::vector<int>> regions) {
  RegionGraph g;
  g.n_sites = n_sites;
  g.regions = std::move(regions);
  for (auto& reg : g.regions) std::sort(reg.begin(), reg.end());
  const int nr = g.n_regions();
  for (int a = 0; a < nr; ++a)
    for (int b = a + 1; b < nr; ++b) {
      auto shared = detail::sorted_intersection(g.regions[std::size_t(a)],
                                                g.regions[std::size_t(b)]);
      if (!shared.empty()) g.overlaps.push_back({a, b, std::move(shared)});
    }
  const auto rep = validate(g);
  if (!rep.ok) throw std::invalid_argument("make_region_graph: " + rep.violations.front());
  return g;
}

// The four fixed benchmark geometries. Every region has four sites and every
// overlap shares exactly two.
inline RegionGraph build_geometry(Geometry kind) {
  switch (kind) {
    case Geometry::Ring: {
      // 12 sites on a cycle, 6 length-4 windows stepping by 2.
      std::vector<std::vector<int>> regions;
      for (int r = 0; r < 6; ++r)
        regions.push_back({2 * r, 2 * r + 1, (2 * r + 2) % 12, (2 * r + 3) % 12});
      return make_region_graph(12, std::move(regions));
    }
    case Geometry::Ladder: {
      // 6 columns x 2 legs, site = 2*col + leg; region r covers columns
      // {r, r+1 mod 6}.
      std::vector<std::vector<int>> regions;
      for (int r = 0; r < 6; ++r) {
        const int c0 = r, c1 = (r + 1) % 6;
        regions.push_back({2 * c0, 2 * c0 + 1, 2 * c1, 2 * c1 + 1});
      }
      return make_region_graph(12, std::move(regions));
    }
    case Geometry::Torus: {
      // 4x4 lattice, site = 4*row + col; 2x2 plaquettes anchored on the 3x3
      // grid. Only edge-adjacent plaquette pairs are treated as overlaps:
      // diagonal neighbors share a single site and are excluded so that every
      // overlap carries two sites.
      std::vector<std::vector<int>> regions;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          regions.push_back({4 * i + j, 4 * i + j + 1, 4 * (i + 1) + j, 4 * (i + 1) + j + 1});
      RegionGraph g;
      g.n_sites = 16;
      g.regions = std::move(regions);
      auto rid = [](int i, int j) { return 3 * i + j; };
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          if (j + 1 < 3) {
            const int a = rid(i, j), b = rid(i, j + 1);
            g.overlaps.push_back({a, b,
                                  detail::sorted_intersection(g.regions[std::size_t(a)],
                                                              g.regions[std::size_t(b)])});
          }
          if (i + 1 < 3) {
            const int a = rid(i, j), b = rid(i + 1, j);
            g.overlaps.push_back({a, b,
                                  detail::sorted_intersection(g.regions[std::size_t(a)],
                                                              g.regions[std::size_t(b)])});
          }
        }
      const auto rep = validate(g);
      if (!rep.ok) throw std::logic_error("build_geometry(torus): " + rep.violations.front());
      return g;
    }
    case Geometry::Hub: {
      // Six 4-site regions sharing the 2-site core {0,1}.
      std::vector<std::vector<int>> regions;
      for (int r = 0; r < 6; ++r)
        regions.push_back({0, 1, 2 + 2 * r, 3 + 2 * r});
      return make_region_graph(14, std::move(regions));
    }
  }
  throw std::invalid_argument("build_geometry: unknown kind");
}

inline nlohmann::json to_json(const RegionGraph& g) {
  nlohmann::json j;
  j["n_sites"] = g.n_sites;
  j["regions"] = g.regions;
  j["overlaps"] = nlohmann::json::array();
  for (const auto& ov : g.overlaps)
    j["overlaps"].push_back({{"a", ov.a}, {"b", ov.b}, {"shared", ov.shared}});
  return j;
}

inline RegionGraph region_graph_from_json(const nlohmann::json& j) {
  RegionGraph g;
  g.n_sites = j.at("n_sites").get<int>();
  g.regions = j.at("regions").get<std::vector<std::vector<int>>>();
  for (const auto& ov : j.at("overlaps"))
    g.overlaps.push_back({ov.at("a").get<int>(), ov.at("b").get<int>(),
                          ov.at("shared").get<std::vector<int>>()});
  const auto rep = validate(g);
  if (!rep.ok)
    throw std::invalid_argument("region_graph_from_json: " + rep.violations.front());
  return g;
}

} // namespace qtdm
