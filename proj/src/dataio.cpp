#include "lmpt/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "lmpt/errors.hpp"
#include "lmpt/random.hpp"

namespace lmpt {

namespace fs = std::filesystem;

namespace {

std::string lower_extension(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

void check_mesh(const TriangleMesh& mesh, const std::string& path) {
  for (const auto& v : mesh.vertices) {
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2])) {
      throw FormatError(path + ": non-finite vertex coordinate");
    }
  }
  for (const auto& f : mesh.faces) {
    for (auto i : f) {
      if (i >= mesh.vertices.size()) throw FormatError(path + ": face index out of range");
    }
  }
}

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

PlyType ply_type(const std::string& name, const std::string& path) {
  static const std::map<std::string, PlyType> types = {
      {"char", PlyType::I8},    {"int8", PlyType::I8},     {"uchar", PlyType::U8},    {"uint8", PlyType::U8},
      {"short", PlyType::I16},  {"int16", PlyType::I16},   {"ushort", PlyType::U16},  {"uint16", PlyType::U16},
      {"int", PlyType::I32},    {"int32", PlyType::I32},   {"uint", PlyType::U32},    {"uint32", PlyType::U32},
      {"float", PlyType::F32},  {"float32", PlyType::F32}, {"double", PlyType::F64}, {"float64", PlyType::F64}};
  auto it = types.find(name);
  if (it == types.end()) throw FormatError(path + ": unknown PLY property type '" + name + "'");
  return it->second;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8:
    case PlyType::U8:
      return 1;
    case PlyType::I16:
    case PlyType::U16:
      return 2;
    case PlyType::I32:
    case PlyType::U32:
    case PlyType::F32:
      return 4;
    case PlyType::F64:
      return 8;
  }
  return 0;
}

double read_binary(std::istream& in, PlyType t, const std::string& path) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(ply_size(t)))) {
    throw FormatError(path + ": truncated binary PLY body");
  }
  auto as = [&]<typename T>(T) {
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return static_cast<double>(v);
  };
  switch (t) {
    case PlyType::I8: return as(std::int8_t{});
    case PlyType::U8: return as(std::uint8_t{});
    case PlyType::I16: return as(std::int16_t{});
    case PlyType::U16: return as(std::uint16_t{});
    case PlyType::I32: return as(std::int32_t{});
    case PlyType::U32: return as(std::uint32_t{});
    case PlyType::F32: return as(float{});
    case PlyType::F64: return as(double{});
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::F32;
  bool is_list = false;
  PlyType count_type = PlyType::U8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

TriangleMesh load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open shape file '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw FormatError(path + ": missing PLY magic");

  bool binary = false;
  std::vector<PlyElement> elements;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw FormatError(path + ": unsupported PLY format '" + fmt + "'");
    } else if (word == "element") {
      PlyElement e;
      if (!(ls >> e.name >> e.count)) throw FormatError(path + ": bad element line");
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw FormatError(path + ": property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it;
        p.is_list = true;
        p.count_type = ply_type(ct, path);
        p.type = ply_type(it, path);
      } else {
        p.type = ply_type(t, path);
      }
      ls >> p.name;
      elements.back().properties.push_back(p);
    } else if (word == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw FormatError(path + ": PLY header not terminated");

  TriangleMesh mesh;
  auto read_scalar = [&](PlyType t) -> double {
    if (binary) return read_binary(in, t, path);
    std::string tok;
    if (!(in >> tok)) throw FormatError(path + ": truncated ASCII PLY body");
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw FormatError(path + ": bad number '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      // "nan"/"inf" parse fine with stod; anything unparsable lands here.
      throw FormatError(path + ": bad number '" + tok + "'");
    }
  };

  for (const auto& e : elements) {
    for (std::size_t r = 0; r < e.count; ++r) {
      Vec3 v{0, 0, 0};
      int seen = 0;
      for (const auto& p : e.properties) {
        if (p.is_list) {
          const double n_raw = read_scalar(p.count_type);
          if (n_raw < 0 || n_raw != std::floor(n_raw)) throw FormatError(path + ": bad list length");
          const auto n = static_cast<std::size_t>(n_raw);
          std::vector<std::uint32_t> idx;
          for (std::size_t i = 0; i < n; ++i) {
            const double x = read_scalar(p.type);
            if (x < 0 || x != std::floor(x)) throw FormatError(path + ": bad face index");
            idx.push_back(static_cast<std::uint32_t>(x));
          }
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (n < 3) throw FormatError(path + ": face with fewer than 3 vertices");
            for (std::size_t i = 1; i + 1 < n; ++i) mesh.faces.push_back({idx[0], idx[i], idx[i + 1]});
          }
        } else {
          const double x = read_scalar(p.type);
          if (e.name == "vertex") {
            if (p.name == "x") v[0] = x, seen |= 1;
            else if (p.name == "y") v[1] = x, seen |= 2;
            else if (p.name == "z") v[2] = x, seen |= 4;
          }
        }
      }
      if (e.name == "vertex") {
        if (seen != 7) throw FormatError(path + ": vertex element lacks x/y/z");
        mesh.vertices.push_back(v);
      }
    }
  }
  return mesh;
}

long parse_obj_index(const std::string& tok, std::size_t nverts, const std::string& path) {
  const std::string head = tok.substr(0, tok.find('/'));
  long i = 0;
  try {
    std::size_t used = 0;
    i = std::stol(head, &used);
    if (used != head.size()) throw FormatError(path + ": bad face token '" + tok + "'");
  } catch (const std::logic_error&) {
    throw FormatError(path + ": bad face token '" + tok + "'");
  }
  if (i < 0) i = static_cast<long>(nverts) + i;
  else i -= 1;
  if (i < 0) throw FormatError(path + ": face index out of range");
  return i;
}

TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open shape file '" + path + "'");
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      std::string a, b, c;
      if (!(ls >> a >> b >> c)) throw FormatError(path + ": vertex with fewer than 3 coordinates");
      try {
        v = {std::stod(a), std::stod(b), std::stod(c)};
      } catch (const std::logic_error&) {
        throw FormatError(path + ": bad vertex line '" + line + "'");
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(static_cast<std::uint32_t>(parse_obj_index(tok, mesh.vertices.size(), path)));
      if (idx.size() < 3) throw FormatError(path + ": face with fewer than 3 vertices");
      for (std::size_t i = 1; i + 1 < idx.size(); ++i) mesh.faces.push_back({idx[0], idx[i], idx[i + 1]});
    }
  }
  return mesh;
}

}  // namespace

TriangleMesh load_shape(const std::string& path) {
  const std::string ext = lower_extension(path);
  TriangleMesh mesh;
  if (ext == ".ply") mesh = load_ply(path);
  else if (ext == ".obj") mesh = load_obj(path);
  else throw FormatError(path + ": unsupported shape extension (expected .ply or .obj)");
  check_mesh(mesh, path);
  return mesh;
}

void write_ply(const std::string& path, const TriangleMesh& mesh, PlyEncoding encoding,
               const std::vector<std::string>& comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const bool binary = encoding == PlyEncoding::Binary;
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  for (const auto& c : comments) out << "comment " << c << "\n";
  out << "element vertex " << mesh.vertices.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  if (!mesh.faces.empty()) {
    out << "element face " << mesh.faces.size() << "\nproperty list uchar uint vertex_indices\n";
  }
  out << "end_header\n";
  if (binary) {
    for (const auto& v : mesh.vertices) out.write(reinterpret_cast<const char*>(v.data()), sizeof(double) * 3);
    for (const auto& f : mesh.faces) {
      const unsigned char n = 3;
      out.write(reinterpret_cast<const char*>(&n), 1);
      out.write(reinterpret_cast<const char*>(f.data()), sizeof(std::uint32_t) * 3);
    }
  } else {
    char buf[96];
    for (const auto& v : mesh.vertices) {
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v[0], v[1], v[2]);
      out << buf;
    }
    for (const auto& f : mesh.faces) out << "3 " << f[0] << " " << f[1] << " " << f[2] << "\n";
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_obj(const std::string& path, const TriangleMesh& mesh, const std::vector<std::string>& comments) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (const auto& c : comments) out << "# " << c << "\n";
  char buf[96];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v[0], v[1], v[2]);
    out << buf;
  }
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  if (!out) throw IoError("failed writing '" + path + "'");
}

PointCloud shape_to_cloud(const TriangleMesh& shape, std::size_t mesh_points, std::uint64_t seed) {
  if (shape.faces.empty()) return PointCloud{shape.vertices};
  return sample_surface(shape, mesh_points, seed);
}

LandmarkSet landmarks_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("landmarks must be a JSON object of name -> [x, y, z]");
  LandmarkSet out;
  for (const auto& [name, v] : j.items()) {
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
      throw SchemaError("landmark '" + name + "' must be a 3-element numeric array");
    }
    Vec3 p{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
      throw SchemaError("landmark '" + name + "' is not finite");
    }
    out[name] = p;
  }
  return out;
}

nlohmann::ordered_json landmarks_to_json(const LandmarkSet& landmarks) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [name, p] : landmarks) j[name] = {p[0], p[1], p[2]};
  return j;
}

namespace {
nlohmann::json read_json_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string("cannot open ") + what + " '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string(what) + " '" + path + "': " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}
}  // namespace

LandmarkSet load_landmarks(const std::string& path) {
  const auto j = read_json_file(path, "landmark file");
  if (j.is_object() && j.contains("landmarks")) return landmarks_from_json(j.at("landmarks"));
  return landmarks_from_json(j);
}

void save_landmarks(const LandmarkSet& landmarks, const std::string& path, const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json j = meta.is_object() ? meta : nlohmann::ordered_json::object();
  j["landmarks"] = landmarks_to_json(landmarks);
  write_text(path, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& path, const LabelRegistry& registry) {
  if (!fs::exists(path)) throw ConfigError("manifest not found: '" + path + "'");
  const auto j = read_json_file(path, "manifest");
  if (!j.is_object() || !j.contains("samples") || !j.at("samples").is_array()) {
    throw SchemaError("manifest '" + path + "': expected an object with a \"samples\" array");
  }
  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::size_t index = 0;
  for (const auto& s : j.at("samples")) {
    const std::string where = "manifest sample " + std::to_string(index++);
    try {
      ManifestEntry e;
      e.shape = s.at("shape").get<std::string>();
      e.species = s.at("species").get<std::string>();
      const std::string side = s.at("side").get<std::string>();
      if (side == "left") e.side = Side::Left;
      else if (side == "right") e.side = Side::Right;
      else throw SchemaError("side must be 'left' or 'right', got '" + side + "'");
      const std::string split = s.value("split", std::string("train"));
      if (split == "train") e.split = Split::Train;
      else if (split == "test") e.split = Split::Test;
      else throw SchemaError("split must be 'train' or 'test', got '" + split + "'");
      e.landmarks = landmarks_from_json(s.at("landmarks"));
      if (!registry.has_species(e.species)) throw SchemaError("unknown species '" + e.species + "'");
      for (const auto& [name, p] : e.landmarks) {
        (void)p;
        if (!registry.schema_contains(e.species, name)) {
          throw SchemaError("landmark '" + name + "' is not in the '" + e.species + "' schema");
        }
      }
      const fs::path shape_path = fs::path(m.base_dir) / e.shape;
      if (!fs::exists(shape_path)) throw SchemaError("shape file not found '" + shape_path.string() + "'");
      m.samples.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw SchemaError(where + ": " + ex.what());
    } catch (const SchemaError& ex) {
      throw SchemaError(where + ": " + ex.what());
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path, const nlohmann::ordered_json& meta) {
  nlohmann::ordered_json j = meta.is_object() ? meta : nlohmann::ordered_json::object();
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  for (const auto& e : manifest.samples) {
    nlohmann::ordered_json s;
    s["shape"] = e.shape;
    s["species"] = e.species;
    s["side"] = side_name(e.side);
    s["split"] = split_name(e.split);
    s["landmarks"] = landmarks_to_json(e.landmarks);
    samples.push_back(std::move(s));
  }
  j["samples"] = std::move(samples);
  write_text(path, j.dump(2) + "\n");
}

LandmarkSet consolidate_annotations(const std::vector<LandmarkSet>& rounds) {
  std::map<std::string, std::vector<Vec3>> by_name;
  for (const auto& r : rounds)
    for (const auto& [name, p] : r) by_name[name].push_back(p);
  if (by_name.empty()) throw EmptySet("consolidate_annotations: no annotations in any round");
  LandmarkSet out;
  for (const auto& [name, positions] : by_name) out[name] = medoid(positions);
  return out;
}

std::vector<LandmarkSet> load_annotation_rounds(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("annotation directory not found: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && lower_extension(entry.path().string()) == ".json") files.push_back(entry.path());
  }
  if (files.empty()) throw EmptySet("no annotation round files (*.json) in '" + dir + "'");
  std::sort(files.begin(), files.end());
  std::vector<LandmarkSet> rounds;
  for (const auto& f : files) rounds.push_back(load_landmarks(f.string()));
  return rounds;
}

namespace {
// Largest-remainder apportionment of `total` over groups of the given sizes.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& sizes, std::size_t all) {
  std::vector<std::size_t> out(sizes.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    const double exact = static_cast<double>(total) * static_cast<double>(sizes[g]) / static_cast<double>(all);
    out[g] = static_cast<std::size_t>(std::floor(exact));
    used += out[g];
    rem.push_back({exact - std::floor(exact), g});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[rem[i % rem.size()].second];
  return out;
}
}  // namespace

DatasetManifest split_dataset(const DatasetManifest& manifest, std::size_t train_count, std::size_t test_count,
                              std::uint64_t seed) {
  const std::size_t n = manifest.samples.size();
  if (train_count + test_count > n) {
    throw RangeError("split_dataset: requested " + std::to_string(train_count) + "+" + std::to_string(test_count) +
                     " samples but only " + std::to_string(n) + " available");
  }
  std::vector<std::string> species;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = manifest.samples[i].species;
    if (!groups.count(s)) species.push_back(s);
    groups[s].push_back(i);
  }
  std::vector<std::size_t> sizes;
  for (const auto& s : species) sizes.push_back(groups[s].size());
  const auto train_q = apportion(train_count, sizes, n);
  auto test_q = apportion(test_count, sizes, n);
  // Apportioning separately can overdraw a small group; move the excess.
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    while (train_q[g] + test_q[g] > sizes[g]) {
      --test_q[g];
      for (std::size_t h = 0; h < sizes.size(); ++h) {
        if (train_q[h] + test_q[h] < sizes[h]) {
          ++test_q[h];
          break;
        }
      }
    }
  }

  DatasetManifest out;
  out.base_dir = manifest.base_dir;
  for (std::size_t g = 0; g < species.size(); ++g) {
    auto idx = groups[species[g]];
    Rng rng(derive_seed({seed, g}));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    for (std::size_t i = 0; i < train_q[g] + test_q[g]; ++i) {
      ManifestEntry e = manifest.samples[idx[i]];
      e.split = i < train_q[g] ? Split::Train : Split::Test;
      out.samples.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::optional<Split> split, std::size_t mesh_points,
                                 std::uint64_t seed) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& e = manifest.samples[i];
    if (split && e.split != *split) continue;
    const fs::path p = fs::path(manifest.base_dir) / e.shape;
    Sample s;
    s.id = fs::path(e.shape).stem().string();
    s.cloud = shape_to_cloud(load_shape(p.string()), mesh_points, derive_seed({seed, i}));
    s.landmarks = e.landmarks;
    s.species = e.species;
    s.side = e.side;
    s.split = e.split;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace lmpt
