#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lmpt/geometry.hpp"

namespace lmpt {

/// Named landmark positions for one shape; iteration is ordered by name.
using LandmarkSet = std::map<std::string, Vec3>;

struct SpeciesSchema {
  std::string name;
  std::vector<std::string> classes;
  std::size_t condition = 0;
};

/// Union keypoint class list (index = logit channel), per-species subsets,
/// condition ids and mirror pairs.
class LabelRegistry {
 public:
  using MirrorPair = std::pair<std::string, std::string>;

  LabelRegistry() = default;

  /// Union ordered by first appearance; condition ids in declaration order.
  static LabelRegistry build(const std::vector<std::pair<std::string, std::vector<std::string>>>& schemas,
                             const std::vector<MirrorPair>& mirror_pairs);

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t num_classes() const { return classes_.size(); }
  std::size_t num_conditions() const { return species_.size(); }
  const std::vector<SpeciesSchema>& species() const { return species_; }
  const std::vector<MirrorPair>& mirror_pairs() const { return mirror_pairs_; }

  std::optional<std::size_t> class_index(const std::string& name) const;
  /// Throws SchemaError for unknown species.
  const SpeciesSchema& schema(const std::string& species) const;
  bool has_species(const std::string& species) const;
  std::size_t condition_of(const std::string& species) const { return schema(species).condition; }
  std::vector<std::size_t> schema_indices(const std::string& species) const;
  bool schema_contains(const std::string& species, const std::string& landmark) const;

  bool has_mirror_metadata() const { return !mirror_pairs_.empty(); }
  /// Mirror partner of a class; midline classes map to themselves.
  const std::string& mirror_of(const std::string& name) const;
  /// Channel permutation induced by the mirror pairs.
  std::vector<std::size_t> mirror_permutation() const;

  nlohmann::ordered_json to_json() const;
  static LabelRegistry from_json(const nlohmann::json& j);

  bool operator==(const LabelRegistry& other) const;

 private:
  std::vector<std::string> classes_;
  std::vector<SpeciesSchema> species_;
  std::vector<MirrorPair> mirror_pairs_;
  std::map<std::string, std::string> mirror_;
};

LabelRegistry load_registry(const std::string& path);
void save_registry(const LabelRegistry& registry, const std::string& path);

}  // namespace lmpt
