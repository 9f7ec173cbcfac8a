#include "lmpt/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lmpt/errors.hpp"

namespace lmpt {

std::vector<double> EvalConfig::default_thresholds() {
  std::vector<double> t(10);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1.0 + 7.0 * static_cast<double>(i) / 9.0;
  return t;
}

void EvalConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("eval.thresholds: must not be empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0)) throw ConfigError("eval.thresholds: must be positive");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("eval.thresholds: must be strictly increasing");
  }
}

ErrorMap landmark_errors(const LandmarkSet& pred, const LandmarkSet& gt) {
  ErrorMap out;
  for (const auto& [name, g] : gt) {
    auto it = pred.find(name);
    if (it != pred.end()) out[name] = distance(it->second, g);
  }
  if (out.empty()) throw EmptyEval("landmark_errors: prediction and ground truth share no landmark names");
  return out;
}

namespace {
std::vector<std::string> ordered_names(const std::vector<ErrorMap>& per_sample, const std::vector<std::string>& order) {
  std::set<std::string> present;
  for (const auto& s : per_sample)
    for (const auto& [name, e] : s) present.insert(name);
  std::vector<std::string> out;
  for (const auto& n : order) {
    if (present.erase(n)) out.push_back(n);
  }
  out.insert(out.end(), present.begin(), present.end());
  return out;
}
}  // namespace

MaeSummary aggregate_mae(const std::vector<ErrorMap>& per_sample, const std::vector<std::string>& order) {
  MaeSummary s;
  s.landmarks = ordered_names(per_sample, order);
  for (const auto& name : s.landmarks) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& sample : per_sample) {
      auto it = sample.find(name);
      if (it != sample.end()) {
        total += it->second;
        ++n;
      }
    }
    s.mae.push_back(total / static_cast<double>(n));
  }
  double total = 0.0;
  for (double m : s.mae) total += m;
  s.mean = s.mae.empty() ? 0.0 : total / static_cast<double>(s.mae.size());
  return s;
}

std::vector<double> pck_curve(const std::vector<ErrorMap>& per_sample, const std::vector<double>& thresholds,
                              bool per_landmark) {
  auto pct = [&](const std::vector<double>& errors, double t) {
    std::size_t hit = 0;
    for (double e : errors) hit += e <= t ? 1 : 0;
    return 100.0 * static_cast<double>(hit) / static_cast<double>(errors.size());
  };
  std::map<std::string, std::vector<double>> by_name;
  std::vector<double> pooled;
  for (const auto& s : per_sample) {
    for (const auto& [name, e] : s) {
      by_name[name].push_back(e);
      pooled.push_back(e);
    }
  }
  if (pooled.empty()) throw EmptyEval("pck_curve: no errors to evaluate");
  std::vector<double> out;
  for (double t : thresholds) {
    if (!per_landmark) {
      out.push_back(pct(pooled, t));
      continue;
    }
    double total = 0.0;
    for (const auto& [name, errors] : by_name) total += pct(errors, t);
    out.push_back(total / static_cast<double>(by_name.size()));
  }
  return out;
}

ErrorMap quantization_errors(const PointCloud& cloud, const LandmarkSet& landmarks) {
  if (cloud.empty()) throw InsufficientPoints("quantization_errors: empty cloud");
  ErrorMap out;
  for (const auto& [name, p] : landmarks) {
    double best = squared_distance(cloud[0], p);
    for (const auto& q : cloud.points) best = std::min(best, squared_distance(q, p));
    out[name] = std::sqrt(best);
  }
  return out;
}

Predictor baseline_mean_position(const std::vector<Sample>& train, const LabelRegistry& registry) {
  std::map<std::string, std::pair<Vec3, std::size_t>> sums;
  for (const auto& s : train) {
    const auto transform = normalize_cloud(s.cloud).second;
    for (const auto& [name, p] : s.landmarks) {
      auto& [acc, n] = sums[name];
      acc = acc + transform.apply(p);
      ++n;
    }
  }
  std::map<std::string, Vec3> means;
  for (const auto& [name, v] : sums) means[name] = v.first * (1.0 / static_cast<double>(v.second));
  return [means, registry](const Sample& sample) {
    const auto transform = normalize_cloud(sample.cloud).second;
    const bool known = registry.has_species(sample.species);
    LandmarkSet out;
    for (const auto& [name, m] : means) {
      if (known && !registry.schema_contains(sample.species, name)) continue;
      out[name] = transform.invert(m);
    }
    return out;
  };
}

EvalReport evaluate(const std::vector<Sample>& samples, const Predictor& predictor, const EvalConfig& config,
                    const std::vector<std::string>& order, std::size_t threads) {
  config.validate();
  if (samples.empty()) throw EmptyEval("evaluate: no samples in the requested split");
  std::vector<LandmarkSet> predictions(samples.size());
  threads = std::clamp<std::size_t>(threads, 1, samples.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) predictions[i] = predictor(samples[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < samples.size(); i = next++) {
          try {
            predictions[i] = predictor(samples[i]);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  EvalReport r;
  std::vector<ErrorMap> quant;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    r.sample_ids.push_back(samples[i].id);
    r.per_sample.push_back(landmark_errors(predictions[i], samples[i].landmarks));
    quant.push_back(quantization_errors(samples[i].cloud, samples[i].landmarks));
  }
  r.mae = aggregate_mae(r.per_sample, order);
  r.thresholds = config.thresholds;
  r.pck = pck_curve(r.per_sample, config.thresholds, config.pck_per_landmark);
  r.pck_per_landmark = config.pck_per_landmark;
  r.quantization = aggregate_mae(quant, order);
  return r;
}

namespace {
std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string fixed(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
std::string meta_line(const EvalReport& r) {
  std::string s;
  for (const auto& [k, v] : r.meta.items()) {
    if (!s.empty()) s += " ";
    s += k + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
  }
  return s;
}
}  // namespace

std::string render_report(const EvalReport& r, ReportFormat format) {
  std::ostringstream out;
  const std::string meta = meta_line(r);
  if (format == ReportFormat::Csv) {
    if (!meta.empty()) out << "# " << meta << "\n";
    out << "landmark,mae_mm\n";
    for (std::size_t i = 0; i < r.mae.landmarks.size(); ++i) out << r.mae.landmarks[i] << "," << num(r.mae.mae[i]) << "\n";
    out << "Mean," << num(r.mae.mean) << "\n\n";
    out << "threshold_mm,pck_pct\n";
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) out << num(r.thresholds[i]) << "," << num(r.pck[i]) << "\n";
    out << "\nlandmark,quantization_mm\n";
    for (std::size_t i = 0; i < r.quantization.landmarks.size(); ++i) {
      out << r.quantization.landmarks[i] << "," << num(r.quantization.mae[i]) << "\n";
    }
    out << "Mean," << num(r.quantization.mean) << "\n";
    return out.str();
  }
  out << "# Landmark localization report\n\n";
  if (!meta.empty()) out << "`" << meta << "`\n\n";
  out << "| Landmark | MAE (mm) | Quantization (mm) |\n|---|---:|---:|\n";
  for (std::size_t i = 0; i < r.mae.landmarks.size(); ++i) {
    const auto& name = r.mae.landmarks[i];
    const auto q = std::find(r.quantization.landmarks.begin(), r.quantization.landmarks.end(), name);
    const std::string qs =
        q == r.quantization.landmarks.end() ? "-" : fixed(r.quantization.mae[q - r.quantization.landmarks.begin()], 2);
    out << "| " << name << " | " << fixed(r.mae.mae[i], 2) << " | " << qs << " |\n";
  }
  out << "| Mean | " << fixed(r.mae.mean, 2) << " | " << fixed(r.quantization.mean, 2) << " |\n\n";
  out << "PCK (" << (r.pck_per_landmark ? "per-landmark average" : "pooled") << ")\n\n";
  out << "| Threshold (mm) | PCK (%) |\n|---:|---:|\n";
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    out << "| " << fixed(r.thresholds[i], 2) << " | " << fixed(r.pck[i], 1) << " |\n";
  }
  return out.str();
}

void emit_report(const EvalReport& report, const std::string& path, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << render_report(report, format);
  if (!out) throw IoError("failed writing report '" + path + "'");
}

}  // namespace lmpt
