#include "lmpt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "lmpt/errors.hpp"
#include "lmpt/random.hpp"

namespace lmpt {

namespace {

constexpr double kPi = std::numbers::pi;

Vec3 normalized(const Vec3& v) {
  const double n = norm(v);
  return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 random_direction(Rng& rng) {
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * kPi);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {s * std::cos(phi), s * std::sin(phi), z};
}

struct Primitive {
  enum class Kind { Sphere, Capsule, Ellipsoid } kind = Kind::Sphere;
  Vec3 a{};     // centre, or first capsule endpoint
  Vec3 b{};     // second capsule endpoint
  Vec3 axes{};  // ellipsoid semi-axes
  double r = 0.0;

  // Positive inside, zero on the surface (up to scale).
  double depth(const Vec3& p) const {
    switch (kind) {
      case Kind::Sphere:
        return r - distance(p, a);
      case Kind::Capsule: {
        const Vec3 ab = b - a;
        const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
        return r - distance(p, a + ab * t);
      }
      case Kind::Ellipsoid: {
        const Vec3 d = p - a;
        double q = 0.0;
        for (int i = 0; i < 3; ++i) q += d[i] * d[i] / (axes[i] * axes[i]);
        return (1.0 - std::sqrt(q)) * std::min({axes[0], axes[1], axes[2]});
      }
    }
    return 0.0;
  }

  double area() const {
    switch (kind) {
      case Kind::Sphere:
        return 4.0 * kPi * r * r;
      case Kind::Capsule:
        return 2.0 * kPi * r * distance(a, b) + 4.0 * kPi * r * r;
      case Kind::Ellipsoid: {
        // Thomsen's approximation; only used to apportion samples.
        const double p = 1.6075;
        const double x = std::pow(axes[0], p), y = std::pow(axes[1], p), z = std::pow(axes[2], p);
        return 4.0 * kPi * std::pow((x * y + x * z + y * z) / 3.0, 1.0 / p);
      }
    }
    return 0.0;
  }

  Vec3 extreme(const Vec3& dir) const {
    const Vec3 d = normalized(dir);
    switch (kind) {
      case Kind::Sphere:
        return a + d * r;
      case Kind::Capsule:
        return (dot(b - a, d) > 0.0 ? b : a) + d * r;
      case Kind::Ellipsoid: {
        Vec3 s{axes[0] * axes[0] * d[0], axes[1] * axes[1] * d[1], axes[2] * axes[2] * d[2]};
        const double k = std::sqrt(dot(s, d));
        return a + s * (1.0 / k);
      }
    }
    return a;
  }

  Vec3 sample(Rng& rng) const {
    switch (kind) {
      case Kind::Sphere:
        return a + random_direction(rng) * r;
      case Kind::Capsule: {
        const double len = distance(a, b);
        const Vec3 axis = normalized(b - a);
        const double cyl = 2.0 * kPi * r * len;
        if (uniform01(rng) * (cyl + 4.0 * kPi * r * r) < cyl) {
          const Vec3 helper = std::abs(axis[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
          const Vec3 u = normalized(cross(axis, helper));
          const Vec3 v = cross(axis, u);
          const double t = uniform01(rng) * len;
          const double phi = uniform(rng, 0.0, 2.0 * kPi);
          return a + axis * t + (u * std::cos(phi) + v * std::sin(phi)) * r;
        }
        const Vec3 d = random_direction(rng);
        return (dot(d, axis) > 0.0 ? b : a) + d * r;
      }
      case Kind::Ellipsoid: {
        // Rejection on the area element of the sphere -> ellipsoid map.
        const double bc = axes[1] * axes[2], ac = axes[0] * axes[2], ab = axes[0] * axes[1];
        const double gmax = std::max({bc, ac, ab});
        for (;;) {
          const Vec3 u = random_direction(rng);
          const double g = std::sqrt(bc * bc * u[0] * u[0] + ac * ac * u[1] * u[1] + ab * ab * u[2] * u[2]);
          if (uniform01(rng) * gmax <= g) return a + Vec3{axes[0] * u[0], axes[1] * u[1], axes[2] * u[2]};
        }
      }
    }
    return a;
  }
};

constexpr std::size_t kParts = 7;

double draw(Rng& rng, const Range& r) { return uniform(rng, r.min, r.max); }

// Left-femur primitives indexed by Part.
std::array<Primitive, kParts> build_primitives(const SynthParams& p, Rng& rng) {
  using K = Primitive::Kind;
  const double L = draw(rng, p.length);
  const double rs = draw(rng, p.shaft_radius) * L;
  const double top = draw(rng, p.shaft_top) * L;
  const double rn = draw(rng, p.neck_radius) * L;
  const double rh = draw(rng, p.head_radius) * L;
  const Vec3 head{draw(rng, p.head_medial) * L, 0.0, draw(rng, p.head_height) * L};
  const double rgt = draw(rng, p.gt_radius) * L;
  const Vec3 gt{-draw(rng, p.gt_lateral) * L, 0.0, draw(rng, p.gt_height) * L};
  const double rlt = draw(rng, p.lt_radius) * L;
  const double lt_z = draw(rng, p.lt_height) * L;
  const double cz = draw(rng, p.condyle_height) * L;
  const double cs = draw(rng, p.condyle_spacing) * L;
  const double cp = draw(rng, p.condyle_posterior) * L;
  const Vec3 axes{draw(rng, p.condyle_axes_x) * L, draw(rng, p.condyle_axes_y) * L, draw(rng, p.condyle_axes_z) * L};
  const double ms = draw(rng, p.medial_condyle_scale);
  const Vec3 medial_axes = axes * ms;

  const Vec3 lt_dir = normalized({1.0, -1.0, 0.0});
  std::array<Primitive, kParts> parts;
  parts[static_cast<int>(Part::Shaft)] = {K::Capsule, {0, 0, cz}, {0, 0, top}, {}, rs};
  parts[static_cast<int>(Part::Neck)] = {K::Capsule, {0, 0, top}, head, {}, rn};
  parts[static_cast<int>(Part::Head)] = {K::Sphere, head, {}, {}, rh};
  parts[static_cast<int>(Part::GreaterTrochanter)] = {K::Sphere, gt, {}, {}, rgt};
  parts[static_cast<int>(Part::LesserTrochanter)] = {K::Sphere, Vec3{0, 0, lt_z} + lt_dir * (rs + 0.5 * rlt), {}, {}, rlt};
  parts[static_cast<int>(Part::LateralCondyle)] = {K::Ellipsoid, {-cs, -cp, cz}, {}, axes, 0.0};
  // Top of the medial condyle stays level with the lateral one; it reaches lower.
  parts[static_cast<int>(Part::MedialCondyle)] = {K::Ellipsoid, {cs, -cp, cz - (ms - 1.0) * axes[2]}, {}, medial_axes, 0.0};
  return parts;
}

bool inside_other(const std::array<Primitive, kParts>& parts, std::size_t own, const Vec3& p, double tol) {
  for (std::size_t j = 0; j < kParts; ++j) {
    if (j != own && parts[j].depth(p) > tol) return true;
  }
  return false;
}

Vec3 mirror_x(const Vec3& p) { return {-p[0], p[1], p[2]}; }

using Mat3 = std::array<Vec3, 3>;

Mat3 small_rotation(Rng& rng, double max_deg) {
  const double lim = max_deg * kPi / 180.0;
  const double ax = uniform(rng, -lim, lim), ay = uniform(rng, -lim, lim), az = uniform(rng, -lim, lim);
  const double cx = std::cos(ax), sx = std::sin(ax), cy = std::cos(ay), sy = std::sin(ay), cz = std::cos(az),
               sz = std::sin(az);
  // Rz * Ry * Rx
  return Mat3{Vec3{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
              Vec3{sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx}, Vec3{-sy, cy * sx, cy * cx}};
}

Vec3 rotate_point(const Mat3& m, const Vec3& p) { return {dot(m[0], p), dot(m[1], p), dot(m[2], p)}; }

}  // namespace

void SynthParams::validate() const {
  const std::vector<std::pair<const char*, Range>> ranges = {
      {"length", length},
      {"shaft_radius", shaft_radius},
      {"shaft_top", shaft_top},
      {"neck_radius", neck_radius},
      {"head_radius", head_radius},
      {"head_medial", head_medial},
      {"head_height", head_height},
      {"gt_radius", gt_radius},
      {"gt_lateral", gt_lateral},
      {"gt_height", gt_height},
      {"lt_radius", lt_radius},
      {"lt_height", lt_height},
      {"condyle_height", condyle_height},
      {"condyle_spacing", condyle_spacing},
      {"condyle_posterior", condyle_posterior},
      {"condyle_axes_x", condyle_axes_x},
      {"condyle_axes_y", condyle_axes_y},
      {"condyle_axes_z", condyle_axes_z},
      {"medial_condyle_scale", medial_condyle_scale}};
  for (const auto& [name, r] : ranges) {
    if (!(r.min > 0.0) || !(r.min <= r.max)) {
      throw ConfigError(std::string("synth.") + name + ": range must be positive with min <= max");
    }
  }
  if (points_per_shape < 1) throw ConfigError("synth.points_per_shape: must be >= 1");
  if (dense_factor < 1) throw ConfigError("synth.dense_factor: must be >= 1");
  if (!(right_fraction >= 0.0 && right_fraction <= 1.0)) throw ConfigError("synth.right_fraction: must be in [0, 1]");
  if (landmarks.empty()) throw ConfigError("synth.landmarks: schema is empty");
  std::set<std::string> names;
  for (const auto& l : landmarks) {
    if (!names.insert(l.name).second) throw ConfigError("synth.landmarks: duplicate name '" + l.name + "'");
    if (!(norm(l.dir) > 0.0)) throw ConfigError("synth.landmarks: zero direction for '" + l.name + "'");
  }
}

std::vector<std::string> SynthParams::landmark_names() const {
  std::vector<std::string> out;
  for (const auto& l : landmarks) out.push_back(l.name);
  return out;
}

namespace {
std::vector<LandmarkRule> common_rules(bool human) {
  std::vector<LandmarkRule> r;
  r.push_back({"MFH", Part::Head, {1, 0, 0}});
  if (human) r.push_back({"IFH", Part::Head, {0, 0, -1}});
  r.push_back({"SGT", Part::GreaterTrochanter, {0, 0, 1}});
  if (!human) r.push_back({"LT", Part::LesserTrochanter, {1, -1, 0}});
  r.push_back({"LEC", Part::LateralCondyle, {-1, 0, 0}});
  r.push_back({"MEC", Part::MedialCondyle, {1, 0, 0}});
  r.push_back({"PLC", Part::LateralCondyle, {0, -1, 0}});
  r.push_back({"PMC", Part::MedialCondyle, {0, -1, 0}});
  r.push_back({"DLC", Part::LateralCondyle, {0, 0, -1}});
  r.push_back({"DMC", Part::MedialCondyle, {0, 0, -1}});
  if (human) r.push_back({"ICN", Part::Shaft, {0, 0, -1}});
  return r;
}
}  // namespace

SynthParams SynthParams::human() {
  SynthParams p;
  p.landmarks = common_rules(true);
  return p;
}

SynthParams SynthParams::dog() {
  SynthParams p;
  p.species = "dog";
  p.length = {150.0, 210.0};
  p.shaft_radius = {0.045, 0.052};
  p.shaft_top = {0.84, 0.88};
  p.neck_radius = {0.040, 0.046};
  p.head_radius = {0.068, 0.078};
  p.head_medial = {0.085, 0.100};
  p.head_height = {0.93, 0.96};
  p.gt_radius = {0.050, 0.060};
  p.gt_lateral = {0.040, 0.050};
  p.gt_height = {0.93, 0.96};
  p.lt_radius = {0.022, 0.028};
  p.lt_height = {0.80, 0.84};
  p.condyle_height = {0.070, 0.080};
  p.condyle_spacing = {0.055, 0.062};
  p.condyle_posterior = {0.030, 0.040};
  p.condyle_axes_x = {0.045, 0.050};
  p.condyle_axes_y = {0.070, 0.080};
  p.condyle_axes_z = {0.060, 0.070};
  p.medial_condyle_scale = {1.04, 1.10};
  p.translation_jitter = 5.0;
  p.landmarks = common_rules(false);
  return p;
}

std::vector<LabelRegistry::MirrorPair> synth_mirror_pairs() {
  return {{"LEC", "MEC"}, {"PLC", "PMC"}, {"DLC", "DMC"}};
}

LabelRegistry synth_registry(const std::vector<SynthParams>& presets) {
  std::vector<std::pair<std::string, std::vector<std::string>>> schemas;
  std::set<std::string> all;
  for (const auto& p : presets) {
    schemas.push_back({p.species, p.landmark_names()});
    for (const auto& l : p.landmarks) all.insert(l.name);
  }
  std::vector<LabelRegistry::MirrorPair> pairs;
  for (const auto& pr : synth_mirror_pairs()) {
    if (all.count(pr.first) && all.count(pr.second)) pairs.push_back(pr);
  }
  return LabelRegistry::build(schemas, pairs);
}

SynthShape synth_shape(const SynthParams& params, Side side, std::uint64_t seed, bool jitter) {
  params.validate();
  std::array<Primitive, kParts> parts;
  LandmarkSet landmarks;
  bool ok = false;
  for (std::uint64_t attempt = 0; attempt < 200 && !ok; ++attempt) {
    Rng rng(derive_seed({seed, 0, attempt}));
    parts = build_primitives(params, rng);
    const double tol = 1e-9 * parts[0].r;
    ok = true;
    landmarks.clear();
    for (const auto& rule : params.landmarks) {
      const auto own = static_cast<std::size_t>(rule.part);
      const Vec3 p = parts[own].extreme(rule.dir);
      if (inside_other(parts, own, p, tol)) {
        ok = false;
        break;
      }
      landmarks[rule.name] = p;
    }
  }
  if (!ok) throw ConfigError("synth: proportions always bury a landmark inside another part");

  double total_area = 0.0;
  for (const auto& p : parts) total_area += p.area();
  const std::size_t dense = params.points_per_shape * params.dense_factor;
  Rng rng(derive_seed({seed, 1}));
  PointCloud candidates;
  for (std::size_t i = 0; i < kParts; ++i) {
    const auto n = static_cast<std::size_t>(std::ceil(static_cast<double>(dense) * parts[i].area() / total_area));
    const double tol = 1e-9 * parts[0].r;
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 p = parts[i].sample(rng);
      if (!inside_other(parts, i, p, tol)) candidates.points.push_back(p);
    }
  }
  for (const auto& [name, p] : landmarks) candidates.points.push_back(p);
  if (candidates.size() < params.points_per_shape) {
    throw ConfigError("synth.dense_factor: too few surface candidates for points_per_shape");
  }
  PointCloud cloud =
      subsample_cloud(candidates, params.points_per_shape, derive_seed({seed, 2}), SubsampleStrategy::FarthestPoint)
          .cloud;

  SynthShape out;
  out.side = side;
  if (side == Side::Right) {
    for (auto& p : cloud.points) p = mirror_x(p);
    for (auto& [name, p] : landmarks) p = mirror_x(p);
  }
  if (jitter) {
    Rng jr(derive_seed({seed, 3}));
    const Mat3 rot = small_rotation(jr, params.pose_jitter_deg);
    const double t = params.translation_jitter;
    const Vec3 shift{uniform(jr, -t, t), uniform(jr, -t, t), uniform(jr, -t, t)};
    for (auto& p : cloud.points) p = rotate_point(rot, p) + shift;
    for (auto& [name, p] : landmarks) p = rotate_point(rot, p) + shift;
  }
  out.cloud = std::move(cloud);
  out.landmarks = std::move(landmarks);
  return out;
}

std::vector<Sample> synth_generate(const SynthParams& params, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw RangeError("synth_generate: count must be >= 1");
  params.validate();
  Rng side_rng(derive_seed({seed, 7}));
  std::vector<Sample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Side side = uniform01(side_rng) < params.right_fraction ? Side::Right : Side::Left;
    auto shape = synth_shape(params, side, derive_seed({seed, 11, i}));
    char id[64];
    std::snprintf(id, sizeof id, "%s_%03zu", params.species.c_str(), i);
    out.push_back(Sample{id, std::move(shape.cloud), std::move(shape.landmarks), params.species, side, Split::Train});
  }
  return out;
}

}  // namespace lmpt
