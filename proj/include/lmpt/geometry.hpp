#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace lmpt {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const Vec3 d = a - b;
  return dot(d, d);
}
inline double distance(const Vec3& a, const Vec3& b) { return std::sqrt(squared_distance(a, b)); }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Unordered set of 3D points, coordinates in millimetres unless normalized.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  const Vec3& operator[](std::size_t i) const { return points[i]; }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

/// Parameters of the centroid + max-radius normalization.
struct NormTransform {
  Vec3 centroid{0.0, 0.0, 0.0};
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const {
    const Vec3 d = p - centroid;
    return {d[0] / scale, d[1] / scale, d[2] / scale};
  }
  Vec3 invert(const Vec3& p) const { return p * scale + centroid; }
};

/// k nearest neighbours per query row, ascending distance.
struct NeighborTable {
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;  // rows * k
  std::vector<double> distances;       // rows * k

  std::span<const std::uint32_t> row_indices(std::size_t i) const { return {indices.data() + i * k, k}; }
  std::span<const double> row_distances(std::size_t i) const { return {distances.data() + i * k, k}; }
};

struct PoolMap {
  std::vector<std::uint32_t> assignment;  // one cluster id per input point
  std::vector<Vec3> centroids;

  std::size_t clusters() const { return centroids.size(); }
};

enum class SubsampleStrategy { Random, FarthestPoint };

struct Subsample {
  PointCloud cloud;
  std::vector<std::uint32_t> indices;  // positions in the source cloud
};

// Normalization: translate centroid to the origin, scale max radius to 1.
// Throws DegenerateCloud when every point coincides.
std::pair<PointCloud, NormTransform> normalize_cloud(const PointCloud& cloud);
std::vector<Vec3> denormalize_points(std::span<const Vec3> points, const NormTransform& transform);
Vec3 centroid_of(std::span<const Vec3> points);

// Area-weighted uniform sampling of a triangle mesh surface.
PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

// Farthest-point mode seeds its distance field with the point nearest the
// centroid and then greedily selects the point maximizing min-distance to
// everything seen so far (ties: smallest index). The seed point itself is
// only emitted if it wins a later selection round.
Subsample subsample_cloud(const PointCloud& cloud, std::size_t n, std::uint64_t seed,
                          SubsampleStrategy strategy);

NeighborTable knn(std::span<const Vec3> query, std::span<const Vec3> reference, std::size_t k);
inline NeighborTable knn(const PointCloud& query, const PointCloud& reference, std::size_t k) {
  return knn(std::span<const Vec3>(query.points), std::span<const Vec3>(reference.points), k);
}

PoolMap grid_pool_map(std::span<const Vec3> points, double cell_size);

/// Index of the medoid (minimal sum of distances, ties to smallest index).
std::size_t medoid_index(std::span<const Vec3> points);
Vec3 medoid(std::span<const Vec3> points);

/// Interleaves the low `bits` bits of each axis; x lands in bit 0 of every triple.
std::uint64_t morton_code(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz, int bits);

/// Integer grid coordinates used by serialize_order: bounding-box origin,
/// uniform scale by the longest box side, 2^bits cells per axis, clamped.
std::vector<std::array<std::uint32_t, 3>> serialization_grid(std::span<const Vec3> points, int bits);

std::vector<std::uint32_t> serialize_order(std::span<const Vec3> points, int bits);

/// Mean distance from each point to its nearest other point.
double mean_nearest_neighbor_spacing(std::span<const Vec3> points);

}  // namespace lmpt
