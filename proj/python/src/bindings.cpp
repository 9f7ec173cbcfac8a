#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lmpt/checkpoint.hpp"
#include "lmpt/cli.hpp"
#include "lmpt/dataio.hpp"
#include "lmpt/errors.hpp"
#include "lmpt/eval.hpp"
#include "lmpt/gradcheck.hpp"
#include "lmpt/runtime.hpp"
#include "lmpt/synth.hpp"

namespace py = pybind11;
using namespace lmpt;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("expected an (N, 3) array");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

py::array_t<double> from_points(const std::vector<Vec3>& pts) {
  py::array_t<double> a({static_cast<py::ssize_t>(pts.size()), py::ssize_t{3}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int k = 0; k < 3; ++k) w(i, k) = pts[i][k];
  return a;
}

py::dict landmarks_to_dict(const LandmarkSet& lm) {
  py::dict d;
  for (const auto& [name, p] : lm) d[py::str(name)] = py::make_tuple(p[0], p[1], p[2]);
  return d;
}

LandmarkSet landmarks_from_dict(const std::map<std::string, std::array<double, 3>>& d) {
  LandmarkSet out;
  for (const auto& [k, v] : d) out[k] = v;
  return out;
}

py::dict sample_to_dict(const Sample& s) {
  py::dict d;
  d["id"] = s.id;
  d["points"] = from_points(s.cloud.points);
  d["landmarks"] = landmarks_to_dict(s.landmarks);
  d["species"] = s.species;
  d["side"] = side_name(s.side);
  d["split"] = split_name(s.split);
  return d;
}

SynthParams preset(const std::string& species) {
  if (species == "human") return SynthParams::human();
  if (species == "dog") return SynthParams::dog();
  throw py::value_error("species must be 'human' or 'dog'");
}

}  // namespace

PYBIND11_MODULE(_lmpt, m) {
  tune_allocator();
  m.doc() = "Landmark detection on bone surface point clouds";

  static py::exception<Error> base(m, "LmptError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def(
      "normalize",
      [](const Points& pts) {
        auto [cloud, t] = normalize_cloud(PointCloud{to_points(pts)});
        return py::make_tuple(from_points(cloud.points), py::make_tuple(t.centroid[0], t.centroid[1], t.centroid[2]),
                              t.scale);
      },
      "Centre on the centroid and scale the max radius to 1. Returns (points, centroid, scale).");

  m.def(
      "knn",
      [](const Points& query, const Points& ref, std::size_t k) {
        const auto q = to_points(query), r = to_points(ref);
        NeighborTable t;
        {
          py::gil_scoped_release nogil;
          t = knn(q, r, k);
        }
        py::array_t<std::uint32_t> idx({static_cast<py::ssize_t>(t.rows), static_cast<py::ssize_t>(t.k)});
        py::array_t<double> dist({static_cast<py::ssize_t>(t.rows), static_cast<py::ssize_t>(t.k)});
        std::copy(t.indices.begin(), t.indices.end(), idx.mutable_data());
        std::copy(t.distances.begin(), t.distances.end(), dist.mutable_data());
        return py::make_tuple(idx, dist);
      },
      py::arg("query"), py::arg("reference"), py::arg("k"));

  m.def(
      "subsample",
      [](const Points& pts, std::size_t n, std::uint64_t seed, const std::string& strategy) {
        SubsampleStrategy s;
        if (strategy == "random") s = SubsampleStrategy::Random;
        else if (strategy == "fps") s = SubsampleStrategy::FarthestPoint;
        else throw py::value_error("strategy must be 'random' or 'fps'");
        const auto out = subsample_cloud(PointCloud{to_points(pts)}, n, seed, s);
        return py::make_tuple(from_points(out.cloud.points), out.indices);
      },
      py::arg("points"), py::arg("n"), py::arg("seed") = 0, py::arg("strategy") = "fps");

  m.def("medoid", [](const Points& pts) {
    const auto v = to_points(pts);
    return medoid_index(v);
  });
  m.def(
      "serialize_order", [](const Points& pts, int bits) { return serialize_order(to_points(pts), bits); },
      py::arg("points"), py::arg("bits") = 10);

  m.def("load_shape", [](const std::string& path) {
    const auto mesh = load_shape(path);
    py::array_t<std::uint32_t> faces({static_cast<py::ssize_t>(mesh.faces.size()), py::ssize_t{3}});
    auto w = faces.mutable_unchecked<2>();
    for (std::size_t i = 0; i < mesh.faces.size(); ++i)
      for (int k = 0; k < 3; ++k) w(i, k) = mesh.faces[i][k];
    return py::make_tuple(from_points(mesh.vertices), faces);
  });

  m.def(
      "synth_generate",
      [](const std::string& species, std::size_t count, std::uint64_t seed, std::size_t points) {
        auto p = preset(species);
        p.points_per_shape = points;
        py::list out;
        for (const auto& s : synth_generate(p, count, seed)) out.append(sample_to_dict(s));
        return out;
      },
      py::arg("species"), py::arg("count"), py::arg("seed") = 0, py::arg("points") = 512);

  m.def("consolidate_annotations", [](const std::vector<std::map<std::string, std::array<double, 3>>>& rounds) {
    std::vector<LandmarkSet> r;
    for (const auto& d : rounds) r.push_back(landmarks_from_dict(d));
    return landmarks_to_dict(consolidate_annotations(r));
  });

  m.def(
      "aggregate_mae",
      [](const std::vector<ErrorMap>& per_sample, const std::vector<std::string>& order) {
        const auto s = aggregate_mae(per_sample, order);
        py::dict per;
        for (std::size_t i = 0; i < s.landmarks.size(); ++i) per[py::str(s.landmarks[i])] = s.mae[i];
        return py::make_tuple(per, s.mean);
      },
      py::arg("per_sample"), py::arg("order") = std::vector<std::string>{});

  m.def("pck_curve", &pck_curve, py::arg("per_sample"), py::arg("thresholds") = EvalConfig::default_thresholds(),
        py::arg("per_landmark") = false);
  m.def("default_thresholds", &EvalConfig::default_thresholds);
  m.def("landmark_errors", [](const std::map<std::string, std::array<double, 3>>& pred,
                              const std::map<std::string, std::array<double, 3>>& gt) {
    return landmark_errors(landmarks_from_dict(pred), landmarks_from_dict(gt));
  });

  py::class_<Checkpoint>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_property_readonly("classes", [](const Checkpoint& c) { return c.registry.classes(); })
      .def_property_readonly("species",
                             [](const Checkpoint& c) {
                               std::vector<std::string> out;
                               for (const auto& s : c.registry.species()) out.push_back(s.name);
                               return out;
                             })
      .def_property_readonly("parameter_count", [](const Checkpoint& c) { return c.params.parameter_count(); })
      .def(
          "predict",
          [](const Checkpoint& c, const Points& pts, const std::string& species, std::uint64_t seed) {
            Sample s;
            s.cloud.points = to_points(pts);
            s.species = species;
            LandmarkSet out;
            {
              py::gil_scoped_release nogil;
              const auto prepared = prepare_sample(s, c.train.num_points, seed, c.registry);
              const auto logits = forward(prepared.cloud, prepared.condition, c.params, c.model);
              out = predict_landmarks(logits, prepared.cloud, prepared.transform, c.registry, species);
            }
            return landmarks_to_dict(out);
          },
          py::arg("points"), py::arg("species"), py::arg("seed") = 0);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, double tolerance) {
        py::list out;
        for (const auto& r : run_gradcheck_suite(seed, tolerance)) out.append(py::make_tuple(r.name, r.error, r.pass));
        return out;
      },
      py::arg("seed") = 0, py::arg("tolerance") = 1e-4);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"lmpt"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release nogil;
          code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      "Run an lmpt subcommand in-process. Returns (exit_code, stdout, stderr).");
}
