#include "lmpt/geometry.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "lmpt/errors.hpp"
#include "lmpt/random.hpp"

namespace lmpt {

namespace {

bool finite(const Vec3& p) { return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]); }

void require_finite(std::span<const Vec3> points, const char* what) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!finite(points[i])) {
      throw InvalidInput(std::string(what) + ": non-finite coordinate at point " + std::to_string(i));
    }
  }
}

// Spreads the low 21 bits of v so that bit b lands at position 3b.
std::uint64_t split_by_3(std::uint32_t v) {
  std::uint64_t x = v & 0x1fffffULL;
  x = (x | (x << 32)) & 0x1f00000000ffffULL;
  x = (x | (x << 16)) & 0x1f0000ff0000ffULL;
  x = (x | (x << 8)) & 0x100f00f00f00f00fULL;
  x = (x | (x << 4)) & 0x10c30c30c30c30c3ULL;
  x = (x | (x << 2)) & 0x1249249249249249ULL;
  return x;
}

}  // namespace

Vec3 centroid_of(std::span<const Vec3> points) {
  Vec3 sum{0.0, 0.0, 0.0};
  for (const auto& p : points) sum = sum + p;
  const double n = static_cast<double>(points.size());
  return {sum[0] / n, sum[1] / n, sum[2] / n};
}

std::pair<PointCloud, NormTransform> normalize_cloud(const PointCloud& cloud) {
  if (cloud.empty()) throw InsufficientPoints("normalize_cloud: empty cloud");
  require_finite(cloud.points, "normalize_cloud");

  NormTransform transform;
  transform.centroid = centroid_of(cloud.points);
  double radius = 0.0;
  for (const auto& p : cloud.points) radius = std::max(radius, distance(p, transform.centroid));
  if (!(radius > 0.0)) throw DegenerateCloud("normalize_cloud: all points coincide");
  transform.scale = radius;

  PointCloud out;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back(transform.apply(p));
  return {std::move(out), transform};
}

std::vector<Vec3> denormalize_points(std::span<const Vec3> points, const NormTransform& transform) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(transform.invert(p));
  return out;
}

PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw RangeError("sample_surface: n must be >= 1");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    for (auto v : f) {
      if (v >= mesh.vertices.size()) throw IndexError("sample_surface: face index out of range");
    }
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    const Vec3 u = b - a;
    const Vec3 v = c - a;
    const Vec3 cr{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    total += 0.5 * norm(cr);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw DegenerateMesh("sample_surface: mesh has zero total area");

  Rng rng(seed);
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double target = uniform01(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    if (it == cumulative.end()) --it;
    const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(uniform01(rng));
    const double r2 = uniform01(rng);
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    out.points.push_back(a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2));
  }
  return out;
}

Subsample subsample_cloud(const PointCloud& cloud, std::size_t n, std::uint64_t seed,
                          SubsampleStrategy strategy) {
  const std::size_t count = cloud.size();
  if (n == 0) throw RangeError("subsample_cloud: n must be >= 1");
  if (n > count) {
    throw InsufficientPoints("subsample_cloud: requested " + std::to_string(n) + " of " +
                             std::to_string(count) + " points");
  }

  Subsample out;
  if (strategy == SubsampleStrategy::Random) {
    std::vector<std::uint32_t> perm(count);
    std::iota(perm.begin(), perm.end(), 0u);
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + uniform_index(rng, count - i);
      std::swap(perm[i], perm[j]);
    }
    out.indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(out.indices.begin(), out.indices.end());
  } else {
    const Vec3 c = centroid_of(cloud.points);
    std::size_t start = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < count; ++i) {
      const double d = squared_distance(cloud[i], c);
      if (d < best) {
        best = d;
        start = i;
      }
    }
    std::vector<double> min_d(count);
    for (std::size_t i = 0; i < count; ++i) min_d[i] = squared_distance(cloud[i], cloud[start]);
    std::vector<char> taken(count, 0);
    out.indices.reserve(n);
    for (std::size_t step = 0; step < n; ++step) {
      std::size_t pick = count;
      double far = -1.0;
      for (std::size_t i = 0; i < count; ++i) {
        if (!taken[i] && min_d[i] > far) {
          far = min_d[i];
          pick = i;
        }
      }
      taken[pick] = 1;
      out.indices.push_back(static_cast<std::uint32_t>(pick));
      for (std::size_t i = 0; i < count; ++i) {
        min_d[i] = std::min(min_d[i], squared_distance(cloud[i], cloud[pick]));
      }
    }
  }
  out.cloud.points.reserve(n);
  for (auto i : out.indices) out.cloud.points.push_back(cloud[i]);
  return out;
}

NeighborTable knn(std::span<const Vec3> query, std::span<const Vec3> reference, std::size_t k) {
  if (k == 0) throw RangeError("knn: k must be >= 1");
  if (k > reference.size()) {
    throw InsufficientPoints("knn: k=" + std::to_string(k) + " exceeds reference size " +
                             std::to_string(reference.size()));
  }
  NeighborTable table;
  table.rows = query.size();
  table.k = k;
  table.indices.resize(query.size() * k);
  table.distances.resize(query.size() * k);

  std::vector<double> best_d(k);
  std::vector<std::uint32_t> best_i(k);
  for (std::size_t q = 0; q < query.size(); ++q) {
    std::size_t filled = 0;
    for (std::size_t r = 0; r < reference.size(); ++r) {
      const double d = squared_distance(query[q], reference[r]);
      // References arrive in ascending index order, so strict comparison
      // keeps the smaller index on ties.
      if (filled == k && !(d < best_d[k - 1])) continue;
      std::size_t pos = filled < k ? filled++ : k - 1;
      while (pos > 0 && d < best_d[pos - 1]) {
        best_d[pos] = best_d[pos - 1];
        best_i[pos] = best_i[pos - 1];
        --pos;
      }
      best_d[pos] = d;
      best_i[pos] = static_cast<std::uint32_t>(r);
    }
    for (std::size_t j = 0; j < k; ++j) {
      table.indices[q * k + j] = best_i[j];
      table.distances[q * k + j] = std::sqrt(best_d[j]);
    }
  }
  return table;
}

PoolMap grid_pool_map(std::span<const Vec3> points, double cell_size) {
  if (!(cell_size > 0.0)) throw RangeError("grid_pool_map: cell_size must be positive");
  using Key = std::array<std::int64_t, 3>;
  std::vector<Key> keys(points.size());
  std::map<Key, std::uint32_t> bins;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      keys[i][a] = static_cast<std::int64_t>(std::floor(points[i][a] / cell_size));
    }
    bins.emplace(keys[i], 0u);
  }
  std::uint32_t next = 0;
  for (auto& [key, id] : bins) id = next++;

  PoolMap map;
  map.assignment.resize(points.size());
  map.centroids.assign(bins.size(), Vec3{0.0, 0.0, 0.0});
  std::vector<std::size_t> counts(bins.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto id = bins.at(keys[i]);
    map.assignment[i] = id;
    map.centroids[id] = map.centroids[id] + points[i];
    ++counts[id];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double n = static_cast<double>(counts[c]);
    map.centroids[c] = {map.centroids[c][0] / n, map.centroids[c][1] / n, map.centroids[c][2] / n};
  }
  return map;
}

std::size_t medoid_index(std::span<const Vec3> points) {
  if (points.empty()) throw EmptySet("medoid: empty point set");
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < points.size(); ++j) sum += distance(points[i], points[j]);
    if (sum < best_sum) {
      best_sum = sum;
      best = i;
    }
  }
  return best;
}

Vec3 medoid(std::span<const Vec3> points) { return points[medoid_index(points)]; }

std::uint64_t morton_code(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits) {
  const std::uint32_t mask = bits >= 32 ? 0xffffffffu : ((1u << bits) - 1u);
  return split_by_3(ix & mask) | (split_by_3(iy & mask) << 1) | (split_by_3(iz & mask) << 2);
}

std::vector<std::array<std::uint32_t, 3>> serialization_grid(std::span<const Vec3> points, int bits) {
  if (bits < 1 || bits > 21) throw RangeError("serialize_order: bits must be in [1, 21]");
  require_finite(points, "serialize_order");
  std::vector<std::array<std::uint32_t, 3>> grid(points.size(), {0u, 0u, 0u});
  if (points.empty()) return grid;

  Vec3 lo = points[0];
  Vec3 hi = points[0];
  for (const auto& p : points) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  const double extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]});
  if (!(extent > 0.0)) return grid;

  const double cells = std::ldexp(1.0, bits);
  const double top = cells - 1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double g = std::floor((points[i][a] - lo[a]) / extent * cells);
      grid[i][a] = static_cast<std::uint32_t>(std::clamp(g, 0.0, top));
    }
  }
  return grid;
}

std::vector<std::uint32_t> serialize_order(std::span<const Vec3> points, int bits) {
  const auto grid = serialization_grid(points, bits);
  std::vector<std::uint64_t> codes(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    codes[i] = morton_code(grid[i][0], grid[i][1], grid[i][2], bits);
  }
  std::vector<std::uint32_t> order(points.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return codes[a] < codes[b]; });
  return order;
}

double mean_nearest_neighbor_spacing(std::span<const Vec3> points) {
  if (points.size() < 2) return 0.0;
  const auto table = knn(points, points, 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) sum += table.distances[i * 2 + 1];
  return sum / static_cast<double>(points.size());
}

}  // namespace lmpt
