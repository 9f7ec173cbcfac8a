#include "lmpt/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "lmpt/checkpoint.hpp"
#include "lmpt/dataio.hpp"
#include "lmpt/errors.hpp"
#include "lmpt/eval.hpp"
#include "lmpt/gradcheck.hpp"
#include "lmpt/hash.hpp"
#include "lmpt/random.hpp"
#include "lmpt/synth.hpp"
#include "lmpt/training.hpp"

namespace lmpt {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

int exit_code_for(ErrorClass c) {
  switch (c) {
    case ErrorClass::Config: return kExitConfig;
    case ErrorClass::Schema: return kExitSchema;
    case ErrorClass::Numerical: return kExitNumerical;
    case ErrorClass::Io: return kExitIo;
  }
  return kExitFailure;
}

std::size_t worker_threads() {
  const char* env = std::getenv("LMPT_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    std::size_t used = 0;
    const long n = std::stol(env, &used);
    if (used == std::string(env).size() && n >= 1) return static_cast<std::size_t>(n);
  } catch (const std::logic_error&) {
  }
  throw ConfigError(std::string("LMPT_THREADS: expected a positive integer, got '") + env + "'");
}

// --set a.b.c=value; value parsed as JSON when possible, else kept as a string.
void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("--set: empty path component in '" + key + "'");
    if (!node->is_object()) throw ConfigError("--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json read_config(const std::string& path, const std::vector<std::string>& overrides) {
  json config = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: '" + path + "'");
    config = json::parse(in, nullptr, false);
    if (config.is_discarded() || !config.is_object()) throw ConfigError("config '" + path + "' is not a JSON object");
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

/// Merged run configuration: paths, seed, and the model/train/eval sections.
struct RunConfig {
  std::string manifest;
  std::string registry;
  std::string output_dir = "lmpt_run";
  std::uint64_t seed = 0;
  std::size_t mesh_points = 8192;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  ordered_json resolved;
  std::string hash;
};

ModelConfig model_from_section(const json& section, std::size_t classes, std::size_t conditions) {
  const std::string preset = section.value("preset", std::string("desk"));
  ModelConfig base;
  if (preset == "desk") base = ModelConfig::desk_default(classes, conditions);
  else if (preset == "tiny") base = ModelConfig::tiny(classes, conditions);
  else throw ConfigError("model.preset: expected 'desk' or 'tiny', got '" + preset + "'");
  json merged = json(to_json(base));
  for (const auto& [k, v] : section.items()) {
    if (k != "preset") merged[k] = v;
  }
  merged["num_classes"] = classes;
  merged["num_conditions"] = conditions;
  ModelConfig m = model_config_from_json(merged);
  m.validate();
  return m;
}

EvalConfig eval_from_section(const json& section) {
  EvalConfig e;
  try {
    if (section.contains("thresholds")) e.thresholds = section.at("thresholds").get<std::vector<double>>();
    e.pck_per_landmark = section.value("pck_per_landmark", false);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("eval: ") + ex.what());
  }
  e.validate();
  return e;
}

std::string get_string(const json& j, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(std::string(key) + ": expected a string");
  return j.at(key).get<std::string>();
}

RunConfig resolve_run_config(const json& raw, const LabelRegistry* registry_override) {
  RunConfig rc;
  rc.manifest = get_string(raw, "manifest", "");
  if (rc.manifest.empty()) throw ConfigError("manifest: no manifest path configured");
  if (!fs::exists(rc.manifest)) throw ConfigError("manifest not found: '" + rc.manifest + "'");
  rc.registry = get_string(raw, "registry", (fs::path(rc.manifest).parent_path() / "registry.json").string());
  rc.output_dir = get_string(raw, "output_dir", rc.output_dir);
  try {
    rc.seed = raw.value("seed", std::uint64_t{0});
    rc.mesh_points = raw.value("mesh_points", rc.mesh_points);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("seed/mesh_points: ") + e.what());
  }
  LabelRegistry registry = registry_override ? *registry_override : load_registry(rc.registry);
  rc.model = model_from_section(raw.value("model", json::object()), registry.num_classes(), registry.num_conditions());
  rc.train = train_config_from_json(raw.value("train", json::object()));
  rc.train.seed = rc.seed;
  rc.train.validate();
  rc.eval = eval_from_section(raw.value("eval", json::object()));

  rc.resolved["manifest"] = rc.manifest;
  rc.resolved["registry"] = rc.registry;
  rc.resolved["output_dir"] = rc.output_dir;
  rc.resolved["seed"] = rc.seed;
  rc.resolved["mesh_points"] = rc.mesh_points;
  rc.resolved["model"] = to_json(rc.model);
  rc.resolved["train"] = to_json(rc.train);
  rc.resolved["eval"] = {{"thresholds", rc.eval.thresholds}, {"pck_per_landmark", rc.eval.pck_per_landmark}};
  // Paths do not change results, so they stay out of the hash.
  ordered_json hashed = rc.resolved;
  hashed.erase("manifest");
  hashed.erase("registry");
  hashed.erase("output_dir");
  rc.hash = fnv1a_hex(hashed.dump());
  return rc;
}

std::string checkpoint_hash(const Checkpoint& c) {
  ordered_json j;
  j["model"] = to_json(c.model);
  j["train"] = to_json(c.train);
  return fnv1a_hex(j.dump());
}

void write_json(const std::string& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir + "'");
}

// Forward pass + argmax readout for one sample, in millimetres.
LandmarkSet predict_sample(const Checkpoint& c, const Sample& sample, std::uint64_t seed) {
  const PreparedSample prepared = prepare_sample(sample, c.train.num_points, seed, c.registry);
  const auto logits = forward(prepared.cloud, prepared.condition, c.params, c.model);
  return predict_landmarks(logits, prepared.cloud, prepared.transform, c.registry, sample.species);
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  std::size_t count = 32;
  std::uint64_t seed = 0;
  std::string species = "human";
  std::size_t points = 512;
  std::size_t test = 0;
  bool ascii = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  std::vector<SynthParams> presets;
  if (a.species == "human" || a.species == "both") presets.push_back(SynthParams::human());
  if (a.species == "dog" || a.species == "both") presets.push_back(SynthParams::dog());
  if (presets.empty()) throw ConfigError("--species: expected human, dog, or both");
  if (a.count < presets.size()) throw RangeError("--count: need at least one shape per species");
  for (auto& p : presets) p.points_per_shape = a.points;

  ordered_json cfg = {{"command", "synth"}, {"count", a.count},  {"species", a.species},
                      {"points", a.points},  {"test", a.test},    {"ascii", a.ascii}};
  const std::string hash = fnv1a_hex(cfg.dump());
  const std::string tag = "seed=" + std::to_string(a.seed) + " config_hash=" + hash;

  ensure_dir(a.out_dir);
  ensure_dir((fs::path(a.out_dir) / "shapes").string());
  DatasetManifest manifest;
  manifest.base_dir = a.out_dir;
  for (std::size_t s = 0; s < presets.size(); ++s) {
    const std::size_t n = a.count / presets.size() + (s < a.count % presets.size() ? 1 : 0);
    for (auto& sample : synth_generate(presets[s], n, derive_seed({a.seed, s}))) {
      const std::string rel = "shapes/" + sample.id + ".ply";
      write_ply((fs::path(a.out_dir) / rel).string(), TriangleMesh{sample.cloud.points, {}},
                a.ascii ? PlyEncoding::Ascii : PlyEncoding::Binary, {tag});
      manifest.samples.push_back({rel, sample.species, sample.side, Split::Train, sample.landmarks});
    }
  }
  if (a.test > 0) manifest = split_dataset(manifest, a.count - a.test, a.test, a.seed);

  const LabelRegistry registry = synth_registry(presets);
  save_registry(registry, (fs::path(a.out_dir) / "registry.json").string());
  const std::string manifest_path = (fs::path(a.out_dir) / "manifest.json").string();
  save_manifest(manifest, manifest_path, {{"seed", a.seed}, {"config_hash", hash}});
  load_manifest(manifest_path, registry);  // self-check
  out << "wrote " << manifest.samples.size() << " shapes to " << a.out_dir << " (config_hash " << hash << ")\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& sets, bool quiet, std::ostream& out,
              std::ostream& err) {
  const RunConfig rc = resolve_run_config(read_config(config_path, sets), nullptr);
  const LabelRegistry registry = load_registry(rc.registry);
  const DatasetManifest manifest = load_manifest(rc.manifest, registry);
  const auto samples = load_samples(manifest, Split::Train, rc.mesh_points, rc.seed);
  if (samples.empty()) throw SchemaError("manifest: train split is empty");

  TrainHooks hooks;
  const std::size_t every = std::max<std::size_t>(1, rc.train.epochs / 20);
  if (!quiet) {
    hooks.on_epoch = [&](const EpochMetrics& m) {
      if (m.epoch % every == 0 || m.epoch == rc.train.epochs) {
        err << "epoch " << m.epoch << "/" << rc.train.epochs << " loss " << m.mean_loss << " lr " << m.lr << "\n";
      }
    };
  }
  const TrainResult result = train(rc.train, rc.model, samples, registry, hooks);

  ensure_dir(rc.output_dir);
  const std::string ckpt = (fs::path(rc.output_dir) / "checkpoint.lmpt").string();
  save_checkpoint(result.checkpoint, ckpt);
  write_metrics_csv(result.log, (fs::path(rc.output_dir) / "metrics.csv").string(), rc.seed, rc.hash);
  ordered_json resolved = rc.resolved;
  resolved["config_hash"] = rc.hash;
  write_json((fs::path(rc.output_dir) / "run_config.json").string(), resolved);
  out << "checkpoint " << ckpt << " crc32 " << file_checksum(ckpt) << " config_hash " << rc.hash << "\n";
  return kExitOk;
}

// ---- predict --------------------------------------------------------------

int cmd_predict(const std::string& checkpoint, const std::string& shape, const std::string& species,
                const std::string& side, const std::string& out_path, std::ostream& out) {
  const Checkpoint c = load_checkpoint(checkpoint);
  if (!c.registry.has_species(species)) throw SchemaError("species '" + species + "' is not in the checkpoint registry");
  Sample s;
  s.id = fs::path(shape).stem().string();
  s.species = species;
  s.side = side == "right" ? Side::Right : Side::Left;
  s.cloud = shape_to_cloud(load_shape(shape), c.train.num_points, c.train.seed);
  const LandmarkSet pred = predict_sample(c, s, c.train.seed);
  save_landmarks(pred, out_path,
                 {{"seed", c.train.seed}, {"config_hash", checkpoint_hash(c)}, {"species", species},
                  {"shape", shape}});
  out << "wrote " << pred.size() << " landmarks to " << out_path << "\n";
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string report = "report.csv";
  std::string format = "both";
  std::string predictor = "model";
  bool pck_per_landmark = false;
  std::vector<double> thresholds;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint c = load_checkpoint(a.checkpoint);
  if (!fs::exists(a.manifest)) throw ConfigError("manifest not found: '" + a.manifest + "'");
  const DatasetManifest manifest = load_manifest(a.manifest, c.registry);
  Split split;
  if (a.split == "train") split = Split::Train;
  else if (a.split == "test") split = Split::Test;
  else throw ConfigError("--split: expected train or test");

  auto samples = load_samples(manifest, split, c.train.num_points, c.train.seed);
  if (samples.empty()) throw EmptyEval("split '" + a.split + "' has no samples");
  // Fix each sample's point set up front so the quantization floor refers to
  // the exact points the model sees.
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].cloud.size() > c.train.num_points) {
      samples[i].cloud = subsample_cloud(samples[i].cloud, c.train.num_points, derive_seed({c.train.seed, 5, i}),
                                         SubsampleStrategy::Random)
                             .cloud;
    }
  }

  EvalConfig ec;
  if (!a.thresholds.empty()) ec.thresholds = a.thresholds;
  ec.pck_per_landmark = a.pck_per_landmark;

  Predictor predictor;
  if (a.predictor == "model") {
    predictor = [&c](const Sample& s) { return predict_sample(c, s, c.train.seed); };
  } else if (a.predictor == "baseline") {
    predictor = baseline_mean_position(load_samples(manifest, Split::Train, c.train.num_points, c.train.seed), c.registry);
  } else if (a.predictor == "ground-truth") {
    predictor = [](const Sample& s) { return s.landmarks; };
  } else {
    throw ConfigError("--predictor: expected model, baseline, or ground-truth");
  }

  EvalReport report = evaluate(samples, predictor, ec, c.registry.classes(), worker_threads());
  report.meta["seed"] = c.train.seed;
  report.meta["config_hash"] = checkpoint_hash(c);
  report.meta["split"] = a.split;
  report.meta["predictor"] = a.predictor;

  const fs::path base(a.report);
  if (a.format == "csv" || a.format == "both") {
    emit_report(report, fs::path(base).replace_extension(".csv").string(), ReportFormat::Csv);
  }
  if (a.format == "markdown" || a.format == "md" || a.format == "both") {
    emit_report(report, fs::path(base).replace_extension(".md").string(), ReportFormat::Markdown);
  }
  if (a.format != "csv" && a.format != "markdown" && a.format != "md" && a.format != "both") {
    throw ConfigError("--format: expected csv, markdown, or both");
  }
  out << "mean MAE " << report.mae.mean << " mm over " << samples.size() << " samples; PCK@"
      << report.thresholds.back() << "mm " << report.pck.back() << "%\n";
  return kExitOk;
}

// ---- medoid / gradcheck ---------------------------------------------------

int cmd_medoid(const std::string& rounds_dir, const std::string& out_path, std::ostream& out) {
  const auto rounds = load_annotation_rounds(rounds_dir);
  const LandmarkSet consolidated = consolidate_annotations(rounds);
  const ordered_json cfg = {{"command", "medoid"}, {"rounds", rounds.size()}};
  save_landmarks(consolidated, out_path,
                 {{"seed", 0}, {"config_hash", fnv1a_hex(cfg.dump())}, {"rounds", rounds.size()}});
  out << "consolidated " << consolidated.size() << " landmarks from " << rounds.size() << " rounds\n";
  return kExitOk;
}

int cmd_gradcheck(bool inject_fault, double tolerance, std::uint64_t seed, std::ostream& out) {
  struct FaultGuard {
    explicit FaultGuard(bool on) { ad::testing::inject_relu_fault(on); }
    ~FaultGuard() { ad::testing::inject_relu_fault(false); }
  } guard(inject_fault);
  const auto results = run_gradcheck_suite(seed, tolerance);
  std::size_t failed = 0;
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%s %-18s max_rel_err=%.3e\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.error);
    out << line;
    failed += r.pass ? 0 : 1;
  }
  out << (results.size() - failed) << "/" << results.size() << " gradient checks passed (tolerance " << tolerance
      << ")\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Landmark detection on bone surface point clouds"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic femur dataset");
  synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of shapes");
  synth_cmd->add_option("--seed", synth.seed, "Random seed");
  synth_cmd->add_option("--species", synth.species, "human, dog, or both");
  synth_cmd->add_option("--points", synth.points, "Points per shape");
  synth_cmd->add_option("--test", synth.test, "Shapes assigned to the test split");
  synth_cmd->add_flag("--ascii", synth.ascii, "Write ASCII PLY instead of binary");

  std::string config_path;
  std::vector<std::string> sets;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
  train_cmd->add_option("config", config_path, "Run config (JSON)")->required();
  train_cmd->add_option("--set", sets, "Override a config key: key.path=value");
  train_cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress");

  std::string ckpt, shape, species, side = "left", out_path;
  auto* predict_cmd = app.add_subcommand("predict", "Predict landmarks for one shape");
  predict_cmd->add_option("--checkpoint", ckpt)->required();
  predict_cmd->add_option("--shape", shape)->required();
  predict_cmd->add_option("--species", species)->required();
  predict_cmd->add_option("--side", side)->check(CLI::IsMember({"left", "right"}));
  predict_cmd->add_option("--out", out_path)->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--manifest", ev.manifest)->required();
  eval_cmd->add_option("--split", ev.split);
  eval_cmd->add_option("--report", ev.report, "Report path; extension is replaced per format");
  eval_cmd->add_option("--format", ev.format, "csv, markdown, or both");
  eval_cmd->add_option("--predictor", ev.predictor, "model, baseline, or ground-truth");
  eval_cmd->add_option("--thresholds", ev.thresholds, "PCK thresholds in mm");
  eval_cmd->add_flag("--pck-per-landmark", ev.pck_per_landmark, "Average per-landmark PCK instead of pooling");

  std::string rounds_dir, medoid_out;
  auto* medoid_cmd = app.add_subcommand("medoid", "Consolidate annotation rounds by per-landmark medoid");
  medoid_cmd->add_option("--rounds", rounds_dir, "Directory of per-round landmark JSON files")->required();
  medoid_cmd->add_option("--out", medoid_out)->required();

  bool inject_fault = false;
  double tolerance = 1e-4;
  std::uint64_t gc_seed = 0;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");
  gradcheck_cmd->add_flag("--inject-fault", inject_fault, "Corrupt the relu backward rule (checker self-test)");
  gradcheck_cmd->add_option("--tolerance", tolerance);
  gradcheck_cmd->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*train_cmd) return cmd_train(config_path, sets, quiet, out, err);
    if (*predict_cmd) return cmd_predict(ckpt, shape, species, side, out_path, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*medoid_cmd) return cmd_medoid(rounds_dir, medoid_out, out);
    if (*gradcheck_cmd) return cmd_gradcheck(inject_fault, tolerance, gc_seed, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.error_class());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace lmpt
