#pragma once

// Brute-force reference implementations. Deliberately naive and written
// without reusing library internals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lmpt/geometry.hpp"
#include "lmpt/random.hpp"

namespace oracle {

using lmpt::Vec3;

inline double dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Full sort of every reference point by (squared distance, index).
inline std::vector<std::pair<std::uint32_t, double>> knn_row(const Vec3& q, const std::vector<Vec3>& ref,
                                                              std::size_t k) {
  std::vector<std::tuple<double, std::uint32_t>> all;
  for (std::uint32_t j = 0; j < ref.size(); ++j) {
    const double dx = q[0] - ref[j][0], dy = q[1] - ref[j][1], dz = q[2] - ref[j][2];
    all.emplace_back(dx * dx + dy * dy + dz * dz, j);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::pair<std::uint32_t, double>> out;
  for (std::size_t i = 0; i < k; ++i) out.emplace_back(std::get<1>(all[i]), std::sqrt(std::get<0>(all[i])));
  return out;
}

/// Index minimizing the distance sum; first index on ties.
inline std::size_t medoid_index(const std::vector<Vec3>& pts) {
  std::size_t best = 0;
  double best_sum = INFINITY;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) s += dist(pts[i], pts[j]);
    if (s < best_sum) {
      best_sum = s;
      best = i;
    }
  }
  return best;
}

/// Interleave bit b of x, y, z into bits 3b, 3b+1, 3b+2.
inline std::uint64_t morton_loop(std::uint32_t x, std::uint32_t y, std::uint32_t z, int bits) {
  std::uint64_t code = 0;
  for (int b = 0; b < bits; ++b) {
    code |= static_cast<std::uint64_t>((x >> b) & 1u) << (3 * b);
    code |= static_cast<std::uint64_t>((y >> b) & 1u) << (3 * b + 1);
    code |= static_cast<std::uint64_t>((z >> b) & 1u) << (3 * b + 2);
  }
  return code;
}

/// Grid: bounding-box minimum at the origin, longest side spanning 2^bits
/// cells, last cell closed. Order: ascending code, then ascending index.
inline std::vector<std::uint32_t> serialize_order(const std::vector<Vec3>& pts, int bits) {
  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts)
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]), hi[a] = std::max(hi[a], p[a]);
  const double ext = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  const double n = static_cast<double>(1u << bits);
  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    std::uint32_t g[3] = {0, 0, 0};
    for (int a = 0; a < 3 && ext > 0; ++a) {
      double c = std::floor((pts[i][a] - lo[a]) / ext * n);
      if (c > n - 1) c = n - 1;
      if (c < 0) c = 0;
      g[a] = static_cast<std::uint32_t>(c);
    }
    keyed.emplace_back(morton_loop(g[0], g[1], g[2], bits), i);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::uint32_t> out;
  for (auto& [c, i] : keyed) out.push_back(i);
  return out;
}

using Errors = std::map<std::string, double>;

/// Per-name mean over samples that contain it; mean of means.
inline std::pair<std::map<std::string, double>, double> mae(const std::vector<Errors>& samples) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& s : samples)
    for (const auto& [k, v] : s) acc[k].first += v, acc[k].second += 1;
  std::map<std::string, double> per;
  double total = 0.0;
  for (const auto& [k, v] : acc) {
    per[k] = v.first / v.second;
    total += per[k];
  }
  return {per, per.empty() ? 0.0 : total / static_cast<double>(per.size())};
}

inline std::vector<double> pck(const std::vector<Errors>& samples, const std::vector<double>& thresholds) {
  std::vector<double> out;
  for (double t : thresholds) {
    int hit = 0, all = 0;
    for (const auto& s : samples)
      for (const auto& [k, v] : s) hit += v <= t, ++all;
    out.push_back(100.0 * hit / all);
  }
  return out;
}

inline std::size_t nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double a = (pts[i][0] - q[0]) * (pts[i][0] - q[0]) + (pts[i][1] - q[1]) * (pts[i][1] - q[1]) +
                     (pts[i][2] - q[2]) * (pts[i][2] - q[2]);
    const double b = (pts[best][0] - q[0]) * (pts[best][0] - q[0]) + (pts[best][1] - q[1]) * (pts[best][1] - q[1]) +
                     (pts[best][2] - q[2]) * (pts[best][2] - q[2]);
    if (a < b) best = i;
  }
  return best;
}

inline std::vector<Vec3> random_points(lmpt::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = {lmpt::uniform(rng, lo, hi), lmpt::uniform(rng, lo, hi), lmpt::uniform(rng, lo, hi)};
  return out;
}

/// Integer-grid points: plenty of exact distance ties.
inline std::vector<Vec3> grid_points(lmpt::Rng& rng, std::size_t n, int span) {
  std::vector<Vec3> out(n);
  for (auto& p : out) {
    for (auto& c : p) c = static_cast<double>(lmpt::uniform_index(rng, static_cast<std::uint64_t>(span)));
  }
  return out;
}

}  // namespace oracle
