#pragma once

#include <string>
#include <vector>

#include "lmpt/geometry.hpp"
#include "lmpt/registry.hpp"

namespace lmpt {

enum class Side { Left, Right };

inline const char* side_name(Side s) { return s == Side::Left ? "left" : "right"; }
inline Side other_side(Side s) { return s == Side::Left ? Side::Right : Side::Left; }

enum class Split { Train, Test };

inline const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

/// One annotated shape, coordinates in millimetres.
struct Sample {
  std::string id;
  PointCloud cloud;
  LandmarkSet landmarks;
  std::string species;
  Side side = Side::Left;
  Split split = Split::Train;
};

/// Manifest entry; `shape` is resolved relative to the manifest file.
struct ManifestEntry {
  std::string shape;
  std::string species;
  Side side = Side::Left;
  Split split = Split::Train;
  LandmarkSet landmarks;
};

struct DatasetManifest {
  std::string base_dir;
  std::vector<ManifestEntry> samples;

  std::size_t count(Split split) const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.split == split ? 1 : 0;
    return n;
  }
};

}  // namespace lmpt
