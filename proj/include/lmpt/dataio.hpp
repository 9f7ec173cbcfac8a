#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmpt/dataset.hpp"
#include "lmpt/geometry.hpp"
#include "lmpt/registry.hpp"

namespace lmpt {

/// Reads ASCII or binary little-endian PLY, or ASCII OBJ (by extension).
/// A file without faces yields a mesh with an empty face list.
TriangleMesh load_shape(const std::string& path);

enum class PlyEncoding { Ascii, Binary };

void write_ply(const std::string& path, const TriangleMesh& mesh, PlyEncoding encoding,
               const std::vector<std::string>& comments = {});
void write_obj(const std::string& path, const TriangleMesh& mesh, const std::vector<std::string>& comments = {});

/// Points for a loaded shape: the vertices of a point-only file, or
/// `mesh_points` area-uniform surface samples of a mesh.
PointCloud shape_to_cloud(const TriangleMesh& shape, std::size_t mesh_points, std::uint64_t seed);

LandmarkSet landmarks_from_json(const nlohmann::json& j);
nlohmann::ordered_json landmarks_to_json(const LandmarkSet& landmarks);

/// Landmark file: either a bare name -> [x,y,z] object or {"landmarks": {...}}.
LandmarkSet load_landmarks(const std::string& path);
void save_landmarks(const LandmarkSet& landmarks, const std::string& path, const nlohmann::ordered_json& meta = {});

DatasetManifest load_manifest(const std::string& path, const LabelRegistry& registry);
void save_manifest(const DatasetManifest& manifest, const std::string& path, const nlohmann::ordered_json& meta = {});

/// Per-name medoid over the rounds that annotate the name.
LandmarkSet consolidate_annotations(const std::vector<LandmarkSet>& rounds);
/// Every *.json file in the directory, in filename order.
std::vector<LandmarkSet> load_annotation_rounds(const std::string& dir);

/// Seeded shuffle, stratified by species. Samples beyond train+test are dropped.
DatasetManifest split_dataset(const DatasetManifest& manifest, std::size_t train_count, std::size_t test_count,
                              std::uint64_t seed);

/// Loads the shapes of a manifest, optionally restricted to one split.
std::vector<Sample> load_samples(const DatasetManifest& manifest, std::optional<Split> split,
                                 std::size_t mesh_points = 8192, std::uint64_t seed = 0);

}  // namespace lmpt
