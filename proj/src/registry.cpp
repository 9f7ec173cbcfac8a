#include "lmpt/registry.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <tuple>

#include "lmpt/errors.hpp"

namespace lmpt {

LabelRegistry LabelRegistry::build(const std::vector<std::pair<std::string, std::vector<std::string>>>& schemas,
                                   const std::vector<MirrorPair>& mirror_pairs) {
  if (schemas.empty()) throw SchemaError("registry: at least one species schema is required");
  LabelRegistry reg;
  std::set<std::string> seen_species;
  for (const auto& [name, classes] : schemas) {
    if (classes.empty()) throw SchemaError("registry: species '" + name + "' has an empty schema");
    if (!seen_species.insert(name).second) throw SchemaError("registry: duplicate species '" + name + "'");
    std::set<std::string> local;
    for (const auto& c : classes) {
      if (!local.insert(c).second) throw SchemaError("registry: duplicate class '" + c + "' in species '" + name + "'");
      if (std::find(reg.classes_.begin(), reg.classes_.end(), c) == reg.classes_.end()) reg.classes_.push_back(c);
    }
    reg.species_.push_back({name, classes, reg.species_.size()});
  }

  for (const auto& [a, b] : mirror_pairs) {
    if (!reg.class_index(a) || !reg.class_index(b)) {
      throw SchemaError("registry: mirror pair (" + a + ", " + b + ") names an unknown class");
    }
    if (a == b) throw SchemaError("registry: mirror pair (" + a + ", " + b + ") pairs a class with itself");
    for (const auto& [name, partner] : reg.mirror_) {
      (void)partner;
      if (name == a || name == b) {
        throw SchemaError("registry: asymmetric mirror pair (" + a + ", " + b + "): '" + name +
                          "' is already paired with '" + reg.mirror_.at(name) + "'");
      }
    }
    for (const auto& s : reg.species_) {
      const bool has_a = std::find(s.classes.begin(), s.classes.end(), a) != s.classes.end();
      const bool has_b = std::find(s.classes.begin(), s.classes.end(), b) != s.classes.end();
      if (has_a != has_b) {
        throw SchemaError("registry: mirror pair (" + a + ", " + b + ") is split across species '" + s.name + "'");
      }
    }
    reg.mirror_[a] = b;
    reg.mirror_[b] = a;
    reg.mirror_pairs_.emplace_back(a, b);
  }
  return reg;
}

std::optional<std::size_t> LabelRegistry::class_index(const std::string& name) const {
  auto it = std::find(classes_.begin(), classes_.end(), name);
  if (it == classes_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - classes_.begin());
}

bool LabelRegistry::has_species(const std::string& species) const {
  return std::any_of(species_.begin(), species_.end(), [&](const auto& s) { return s.name == species; });
}

const SpeciesSchema& LabelRegistry::schema(const std::string& species) const {
  for (const auto& s : species_) {
    if (s.name == species) return s;
  }
  throw SchemaError("unknown species '" + species + "'");
}

std::vector<std::size_t> LabelRegistry::schema_indices(const std::string& species) const {
  std::vector<std::size_t> out;
  for (const auto& c : schema(species).classes) out.push_back(*class_index(c));
  std::sort(out.begin(), out.end());
  return out;
}

bool LabelRegistry::schema_contains(const std::string& species, const std::string& landmark) const {
  const auto& cls = schema(species).classes;
  return std::find(cls.begin(), cls.end(), landmark) != cls.end();
}

const std::string& LabelRegistry::mirror_of(const std::string& name) const {
  auto it = mirror_.find(name);
  return it == mirror_.end() ? name : it->second;
}

std::vector<std::size_t> LabelRegistry::mirror_permutation() const {
  std::vector<std::size_t> perm(classes_.size());
  for (std::size_t i = 0; i < classes_.size(); ++i) perm[i] = *class_index(mirror_of(classes_[i]));
  return perm;
}

nlohmann::ordered_json LabelRegistry::to_json() const {
  nlohmann::ordered_json j;
  j["classes"] = classes_;
  nlohmann::ordered_json sp = nlohmann::ordered_json::object();
  for (const auto& s : species_) {
    sp[s.name] = {{"condition", s.condition}, {"classes", s.classes}};
  }
  j["species"] = sp;
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : mirror_pairs_) pairs.push_back({a, b});
  j["mirror_pairs"] = pairs;
  return j;
}

LabelRegistry LabelRegistry::from_json(const nlohmann::json& j) {
  try {
    std::vector<std::tuple<std::size_t, std::string, std::vector<std::string>>> entries;
    for (const auto& [name, body] : j.at("species").items()) {
      entries.emplace_back(body.at("condition").get<std::size_t>(), name,
                           body.at("classes").get<std::vector<std::string>>());
    }
    std::sort(entries.begin(), entries.end());
    std::vector<std::pair<std::string, std::vector<std::string>>> schemas;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (std::get<0>(entries[i]) != i) throw SchemaError("registry: condition ids must be dense from 0");
      schemas.emplace_back(std::get<1>(entries[i]), std::get<2>(entries[i]));
    }
    std::vector<MirrorPair> pairs;
    if (j.contains("mirror_pairs")) {
      for (const auto& p : j.at("mirror_pairs")) {
        if (!p.is_array() || p.size() != 2) throw SchemaError("registry: mirror pairs must have two names");
        pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    }
    LabelRegistry reg = build(schemas, pairs);
    if (j.contains("classes")) {
      // An explicit class list fixes the channel order; it must cover the union exactly.
      auto declared = j.at("classes").get<std::vector<std::string>>();
      std::vector<std::string> a = declared, b = reg.classes_;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b) throw SchemaError("registry: 'classes' does not match the union of species schemas");
      reg.classes_ = std::move(declared);
    }
    return reg;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("registry: malformed JSON: ") + e.what());
  }
}

bool LabelRegistry::operator==(const LabelRegistry& other) const {
  if (classes_ != other.classes_ || mirror_pairs_ != other.mirror_pairs_) return false;
  if (species_.size() != other.species_.size()) return false;
  for (std::size_t i = 0; i < species_.size(); ++i) {
    const auto& a = species_[i];
    const auto& b = other.species_[i];
    if (a.name != b.name || a.classes != b.classes || a.condition != b.condition) return false;
  }
  return true;
}

LabelRegistry load_registry(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("registry: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("registry: cannot parse '" + path + "': " + e.what());
  }
  return LabelRegistry::from_json(j);
}

void save_registry(const LabelRegistry& registry, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("registry: cannot write '" + path + "'");
  out << registry.to_json().dump(2) << "\n";
}

}  // namespace lmpt
