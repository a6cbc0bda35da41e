/*
 * Copyright 2026 The oodsynth Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "oodsynth/pipeline.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "oodsynth/doeb.hpp"
#include "oodsynth/error.hpp"
#include "oodsynth/metrics.hpp"
#include "oodsynth/rng.hpp"

namespace oodsynth {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kIdTrain[] = "id_train.doeb";
constexpr char kIdTest[] = "id_test.doeb";
constexpr char kOodTest[] = "ood_test.doeb";
constexpr char kPrototypes[] = "prototypes.doeb";
constexpr char kHead[] = "head.doeb";
constexpr char kEmbeddedTrain[] = "embedded_train.doeb";
constexpr char kPhase1Loss[] = "phase1_loss.csv";
constexpr char kOodEmbeddings[] = "ood_embeddings.doeb";
constexpr char kIdEmbeddings[] = "id_embeddings.doeb";
constexpr char kDetector[] = "detector.doeb";
constexpr char kDetectorLoss[] = "detector_loss.csv";
constexpr char kMetrics[] = "metrics.csv";
constexpr char kThreshold[] = "threshold.csv";

// Reads one JSON object, remembering which keys were consumed so that
// finish() can reject the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const char* key) const { return path_ + "." + key; }

  bool get(const char* key, std::uint64_t& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      throw ConfigError(where(key) + ": expected a non-negative integer");
    }
    out = v->get<std::uint64_t>();
    return true;
  }

  bool get(const char* key, int& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_integer()) throw ConfigError(where(key) + ": expected an integer");
    const auto x = v->get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(where(key) + ": out of range");
    out = static_cast<int>(x);
    return true;
  }

  bool get(const char* key, double& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
    out = v->get<double>();
    return true;
  }

  bool get(const char* key, bool& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
    out = v->get<bool>();
    return true;
  }

  bool get(const char* key, std::string& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
    out = v->get<std::string>();
    return true;
  }

  bool get(const char* key, fs::path& out) {
    std::string s;
    if (!get(key, s)) return false;
    out = s;
    return true;
  }

  bool get(const char* key, std::vector<std::size_t>& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) throw ConfigError(where(key) + ": expected an array of integers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) throw ConfigError(where(key) + ": expected positive integers");
      out.push_back(e.get<std::size_t>());
    }
    return true;
  }

  bool get(const char* key, std::vector<std::vector<double>>& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) throw ConfigError(where(key) + ": expected an array of arrays");
    out.clear();
    for (const auto& row : *v) {
      if (!row.is_array()) throw ConfigError(where(key) + ": expected an array of arrays");
      std::vector<double> r;
      for (const auto& e : row) {
        if (!e.is_number()) throw ConfigError(where(key) + ": expected numbers");
        r.push_back(e.get<double>());
      }
      out.push_back(std::move(r));
    }
    return true;
  }

  template <typename T>
  bool get(const char* key, std::optional<T>& out) {
    T v{};
    if (!get(key, v)) return false;
    out = v;
    return true;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key " + path_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Shared TrainConfig keys; the detector has no temperature.
bool read_train(ObjectReader& r, TrainConfig& t, bool with_temperature) {
  int epochs = t.epochs;
  r.get("epochs", epochs);
  t.epochs = epochs;
  r.get("batch_size", t.batch_size);
  r.get("lr0", t.lr0);
  r.get("momentum", t.momentum);
  r.get("weight_decay", t.weight_decay);
  if (with_temperature) r.get("temperature", t.temperature);
  return r.get("seed", t.seed);
}

SyntheticSpec read_synthetic(const json& j) {
  ObjectReader r(j, "data.synthetic");
  SyntheticSpec s;
  r.get("classes", s.classes);
  r.get("d_in", s.d_in);
  r.get("ood_components", s.ood_components);
  r.get("train_per_class", s.train_per_class);
  r.get("test_per_class", s.test_per_class);
  r.get("ood_test_per_component", s.ood_test_per_component);
  r.get("mean_radius", s.mean_radius);
  r.get("ood_mean_radius", s.ood_mean_radius);
  r.get("id_stddev", s.id_stddev);
  r.get("ood_stddev", s.ood_stddev);
  r.get("id_means", s.id_means);
  r.get("ood_means", s.ood_means);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

SampleMode parse_mode(const std::string& s) {
  if (s == "ood") return SampleMode::kOod;
  if (s == "id") return SampleMode::kId;
  throw ConfigError("sampler.mode: expected \"ood\" or \"id\", got \"" + s + "\"");
}

ReferenceSet parse_reference(const std::string& s) {
  if (s == "class") return ReferenceSet::kClass;
  if (s == "global") return ReferenceSet::kGlobal;
  throw ConfigError("sampler.reference: expected \"class\" or \"global\", got \"" + s + "\"");
}

// Runs a validate() that throws std::invalid_argument and rethrows it as a
// ConfigError prefixed with the config section.
template <typename F>
void as_config_error(const std::string& section, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("error writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<double> random_mean(Rng& rng, std::size_t d, double radius) {
  std::vector<double> v(d);
  double norm = 0.0;
  while (norm == 0.0) {
    for (auto& x : v) x = rng.normal();
    norm = l2_norm(v);
  }
  for (auto& x : v) x *= radius / norm;
  return v;
}

LabeledFeatures draw_mixture(const std::vector<std::vector<double>>& means, double stddev,
                             std::size_t per_component, std::uint64_t seed, std::uint64_t tag) {
  LabeledFeatures out;
  const std::size_t d = means.front().size();
  out.features = EmbeddingMatrix(means.size() * per_component, d);
  std::size_t row = 0;
  for (std::size_t c = 0; c < means.size(); ++c) {
    Rng rng(derive_seed(seed, {tag, c}));
    for (std::size_t i = 0; i < per_component; ++i, ++row) {
      for (std::size_t j = 0; j < d; ++j) out.features(row, j) = means[c][j] + stddev * rng.normal();
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

fs::path split_path(const PipelineConfig& config, const char* file, const fs::path& configured) {
  return config.data.synthetic ? config.output_dir / file : configured;
}

PrototypeBank load_prototypes(const PipelineConfig& config) {
  return doeb::to_prototypes(doeb::read(config.output_dir / kPrototypes));
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

json doeb_to_json(const doeb::File& f) {
  json j;
  j["version"] = doeb::kVersion;
  j["count"] = f.count;
  j["dim"] = f.dim;
  json rows = json::array();
  for (std::uint64_t i = 0; i < f.count; ++i) {
    json row = json::array();
    for (std::uint32_t c = 0; c < f.dim; ++c) row.push_back(static_cast<double>(f.payload[i * f.dim + c]));
    rows.push_back(std::move(row));
  }
  j["payload"] = std::move(rows);
  if (f.labels) j["labels"] = *f.labels;
  if (f.provenance) {
    json prov = json::array();
    for (const auto& p : *f.provenance) {
      prov.push_back({{"class_id", p.class_id}, {"anchor_index", p.anchor_index},
                      {"knn_distance", p.knn_distance}});
    }
    j["provenance"] = std::move(prov);
  }
  if (f.weights) {
    json tensors = json::array();
    for (const auto& t : *f.weights) {
      json data = json::array();
      for (const float v : t.data) data.push_back(static_cast<double>(v));
      tensors.push_back({{"dims", t.dims}, {"data", std::move(data)}});
    }
    j["weights"] = std::move(tensors);
  }
  return j;
}

std::string doeb_to_csv(const doeb::File& f) {
  if (f.dim == 0 || (f.count == 0 && f.weights)) {
    throw ConfigError("csv export needs a row-oriented file; use json for checkpoints");
  }
  std::ostringstream out;
  for (std::uint32_t c = 0; c < f.dim; ++c) out << (c ? "," : "") << 'x' << c;
  if (f.labels) out << ",label";
  if (f.provenance) out << ",class_id,anchor_index,knn_distance";
  out << '\n';
  for (std::uint64_t i = 0; i < f.count; ++i) {
    for (std::uint32_t c = 0; c < f.dim; ++c) {
      out << (c ? "," : "") << format_double(static_cast<double>(f.payload[i * f.dim + c]));
    }
    if (f.labels) out << ',' << (*f.labels)[i];
    if (f.provenance) {
      const auto& p = (*f.provenance)[i];
      out << ',' << p.class_id << ',' << p.anchor_index << ',' << format_double(p.knn_distance);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void SyntheticSpec::validate() const {
  if (classes < 1 || d_in < 1 || ood_components < 1) {
    throw std::invalid_argument("classes, d_in and ood_components must be >= 1");
  }
  if (train_per_class < 1 || test_per_class < 1 || ood_test_per_component < 1) {
    throw std::invalid_argument("sample counts must be >= 1");
  }
  if (!(mean_radius > 0.0) || !std::isfinite(mean_radius)) throw std::invalid_argument("mean_radius must be > 0");
  if (ood_mean_radius && (!(*ood_mean_radius > 0.0) || !std::isfinite(*ood_mean_radius))) {
    throw std::invalid_argument("ood_mean_radius must be > 0");
  }
  if (!(id_stddev >= 0.0) || !(ood_stddev >= 0.0) || !std::isfinite(id_stddev) || !std::isfinite(ood_stddev)) {
    throw std::invalid_argument("stddevs must be finite and >= 0");
  }
  const auto check_means = [&](const std::vector<std::vector<double>>& means, std::size_t n, const char* name) {
    if (means.empty()) return;
    if (means.size() != n) throw std::invalid_argument(std::string(name) + " must list one mean per component");
    for (const auto& m : means) {
      if (m.size() != d_in) throw std::invalid_argument(std::string(name) + " rows must have d_in entries");
      for (const double v : m) {
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be finite");
      }
    }
  };
  check_means(id_means, classes, "id_means");
  check_means(ood_means, ood_components, "ood_means");
  for (const auto& o : ood_means) {
    for (const auto& i : id_means) {
      if (o == i) throw std::invalid_argument("OOD means must differ from every ID mean");
    }
  }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  if (!spec.seed) throw std::invalid_argument("generate_synthetic: seed is not set");
  const std::uint64_t seed = *spec.seed;
  auto id_means = spec.id_means;
  auto ood_means = spec.ood_means;
  Rng means_rng(derive_seed(seed, {hash_string("means")}));
  // ID and OOD directions share one stream, so generated means never repeat.
  if (id_means.empty()) {
    for (std::size_t c = 0; c < spec.classes; ++c) id_means.push_back(random_mean(means_rng, spec.d_in, spec.mean_radius));
  }
  if (ood_means.empty()) {
    for (std::size_t c = 0; c < spec.ood_components; ++c) {
      ood_means.push_back(random_mean(means_rng, spec.d_in, spec.ood_mean_radius.value_or(spec.mean_radius)));
    }
  }
  Dataset d;
  d.id_train = draw_mixture(id_means, spec.id_stddev, spec.train_per_class, seed, hash_string("id_train"));
  d.id_test = draw_mixture(id_means, spec.id_stddev, spec.test_per_class, seed, hash_string("id_test"));
  d.ood_test = draw_mixture(ood_means, spec.ood_stddev, spec.ood_test_per_component, seed, hash_string("ood_test"));
  return d;
}

PrototypeBank make_prototypes(std::size_t classes, std::size_t dim, double norm, std::uint64_t seed) {
  if (classes < 1 || dim < 2) throw std::invalid_argument("make_prototypes: need >= 1 class and dim >= 2");
  if (!(norm > 0.0) || !std::isfinite(norm)) throw std::invalid_argument("make_prototypes: norm must be > 0");
  Rng rng(seed);
  EmbeddingMatrix raw(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> v;
    // Gram-Schmidt against earlier rows while an orthogonal direction exists.
    for (;;) {
      v = random_mean(rng, dim, 1.0);
      if (classes <= dim) {
        for (std::size_t p = 0; p < c; ++p) {
          const double proj = dot(v, raw.row(p));
          for (std::size_t j = 0; j < dim; ++j) v[j] -= proj * raw(p, j);
        }
      }
      const double n = l2_norm(v);
      if (n > 1e-6) {
        for (auto& x : v) x /= n;
        break;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) raw(c, j) = v[j];
  }
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < dim; ++j) raw(c, j) *= norm;
  }
  return PrototypeBank(raw);
}

void PipelineConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (data.synthetic) {
    as_config_error("data.synthetic", [&] { data.synthetic->validate(); });
  } else {
    for (const auto* p : {&data.id_train, &data.id_test, &data.ood_test}) {
      if (p->empty()) throw ConfigError("data: give either synthetic or id_train, id_test and ood_test");
      if (!fs::exists(*p)) throw ConfigError("data: file " + p->string() + " does not exist");
    }
  }
  if (prototypes.file) {
    if (!fs::exists(*prototypes.file)) {
      throw ConfigError("prototypes.file: " + prototypes.file->string() + " does not exist");
    }
  } else {
    if (prototypes.dim < 2) throw ConfigError("prototypes.dim must be >= 2");
    if (!(prototypes.norm > 0.0) || !std::isfinite(prototypes.norm)) throw ConfigError("prototypes.norm must be > 0");
  }
  as_config_error("phase1", [&] { phase1.train.validate(); });
  for (const auto w : phase1.hidden_widths) {
    if (w < 1) throw ConfigError("phase1.hidden_widths entries must be >= 1");
  }
  as_config_error("sampler", [&] { sampler.validate(); });
  as_config_error("detector", [&] { detector.train.validate(); });
  if (!(detector.beta >= 0.0) || !std::isfinite(detector.beta)) throw ConfigError("detector.beta must be >= 0");
  if (detector.arch.phi_width < 1) throw ConfigError("detector.phi_width must be >= 1");
  for (const auto w : detector.arch.hidden_widths) {
    if (w < 1) throw ConfigError("detector.hidden_widths entries must be >= 1");
  }
}

PipelineConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  ObjectReader r(root, "config");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);

  if (const json* d = r.find("data")) {
    ObjectReader dr(*d, "data");
    if (const json* s = dr.find("synthetic")) c.data.synthetic = read_synthetic(*s);
    const bool a = dr.get("id_train", c.data.id_train);
    const bool b = dr.get("id_test", c.data.id_test);
    const bool e = dr.get("ood_test", c.data.ood_test);
    dr.finish();
    if (c.data.synthetic && (a || b || e)) {
      throw ConfigError("data: synthetic and file paths are mutually exclusive");
    }
  } else {
    c.data.synthetic = SyntheticSpec{};
  }

  if (const json* p = r.find("prototypes")) {
    ObjectReader pr(*p, "prototypes");
    pr.get("file", c.prototypes.file);
    pr.get("dim", c.prototypes.dim);
    pr.get("norm", c.prototypes.norm);
    pr.get("seed", c.prototypes.seed);
    pr.finish();
  }
  if (const json* p = r.find("phase1")) {
    ObjectReader pr(*p, "phase1");
    c.phase1.seed_set = read_train(pr, c.phase1.train, true);
    pr.get("hidden_widths", c.phase1.hidden_widths);
    pr.finish();
  }
  if (const json* p = r.find("sampler")) {
    ObjectReader sr(*p, "sampler");
    sr.get("k", c.sampler.k);
    sr.get("sigma2", c.sampler.sigma2);
    sr.get("candidates_per_anchor", c.sampler.candidates_per_anchor);
    sr.get("anchors_per_class", c.sampler.anchors_per_class);
    sr.get("samples_per_class", c.sampler.samples_per_class);
    std::string s;
    if (sr.get("mode", s)) c.sampler.mode = parse_mode(s);
    if (sr.get("reference", s)) c.sampler.reference = parse_reference(s);
    c.sampler_seed_set = sr.get("seed", c.sampler.seed);
    sr.finish();
  }
  if (const json* p = r.find("detector")) {
    ObjectReader dr(*p, "detector");
    c.detector.seed_set = read_train(dr, c.detector.train, false);
    dr.get("beta", c.detector.beta);
    dr.get("hidden_widths", c.detector.arch.hidden_widths);
    dr.get("phi_width", c.detector.arch.phi_width);
    dr.finish();
  }
  if (const json* p = r.find("metrics")) {
    ObjectReader mr(*p, "metrics");
    mr.get("record_wall_ms", c.record_wall_ms);
    mr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  return parse_config(read_text(path));
}

PipelineConfig resolve_seeds(const PipelineConfig& config) {
  PipelineConfig c = config;
  const auto child = [&](const char* name) { return derive_seed(c.seed, {hash_string(name)}); };
  if (c.data.synthetic && !c.data.synthetic->seed) c.data.synthetic->seed = child("data");
  if (!c.prototypes.seed) c.prototypes.seed = child("prototypes");
  if (!c.phase1.seed_set) c.phase1.train.seed = child("phase1");
  if (!c.sampler_seed_set) c.sampler.seed = child("sampler");
  if (!c.detector.seed_set) c.detector.train.seed = child("detector");
  c.phase1.seed_set = c.sampler_seed_set = c.detector.seed_set = true;
  return c;
}

Evaluation evaluate(const DetectorModel& model, const EncoderHead& head, const LabeledFeatures& id_test,
                    const EmbeddingMatrix& ood_test) {
  const std::size_t classes = model.classifier.output_dim();
  id_test.validate(classes);
  if (ood_test.empty()) throw std::invalid_argument("evaluate: empty OOD test set");
  const EmbeddingMatrix id_z = embed_all(head, id_test.features);
  const EmbeddingMatrix ood_z = embed_all(head, ood_test);

  ScoreSet reg, msp, energy_scores;
  std::vector<double> id_detection;
  EmbeddingMatrix id_logits(id_z.rows(), classes);
  const auto score_rows = [&](const EmbeddingMatrix& z, bool is_id) {
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const auto lg = logits(model, z.row(i));
      const double lse = energy_baseline_score(lg);
      // sigmoid is strictly increasing, so ranking by phi(E) gives the
      // ood_score metrics without saturating near 0 or 1.
      const double r = model.beta > 0.0 ? phi_value(model.phi, -lse) : lse;
      (is_id ? reg.id_scores : reg.ood_scores).push_back(r);
      (is_id ? msp.id_scores : msp.ood_scores).push_back(msp_score(lg));
      (is_id ? energy_scores.id_scores : energy_scores.ood_scores).push_back(lse);
      if (is_id) {
        std::copy(lg.begin(), lg.end(), id_logits.row(i).begin());
        id_detection.push_back(ood_score(model, z.row(i)));
      }
    }
  };
  score_rows(id_z, true);
  score_rows(ood_z, false);

  const double acc = id_accuracy(id_logits, id_test.labels);
  Evaluation out;
  out.rows = {{"outlier_reg", fpr_at_95_tpr(reg), auroc(reg), acc},
              {"msp", fpr_at_95_tpr(msp), auroc(msp), acc},
              {"energy", fpr_at_95_tpr(energy_scores), auroc(energy_scores), acc}};
  out.threshold = threshold_at_tpr(id_detection, 0.95);
  return out;
}

Phase1Result run_phase1(const PipelineConfig& resolved, const LabeledFeatures& id_train,
                        const PrototypeBank& bank) {
  Phase1Result r;
  r.space = train_space(id_train, bank, resolved.phase1.train, resolved.phase1.hidden_widths);
  r.embedded_train.features = embed_all(r.space.head, id_train.features);
  r.embedded_train.labels = id_train.labels;
  return r;
}

OutlierBatch run_phase2(const PipelineConfig& resolved, const LabeledFeatures& embedded_train,
                        const PrototypeBank& bank, SampleMode mode) {
  SamplerConfig cfg = resolved.sampler;
  cfg.mode = mode;
  return synthesize(embedded_train, bank, cfg);
}

DetectorTrainResult run_detector(const PipelineConfig& resolved, const LabeledFeatures& embedded_train,
                                 const OutlierBatch& outliers) {
  return train_detector(embedded_train, outliers, resolved.detector.train, resolved.detector.beta,
                        resolved.detector.arch);
}

void stage_gen_data(const PipelineConfig& config) {
  const PipelineConfig c = resolve_seeds(config);
  std::size_t classes = 0;
  if (c.data.synthetic) {
    const Dataset d = generate_synthetic(*c.data.synthetic);
    doeb::write(c.output_dir / kIdTrain, doeb::from_labeled(d.id_train));
    doeb::write(c.output_dir / kIdTest, doeb::from_labeled(d.id_test));
    doeb::write(c.output_dir / kOodTest, doeb::from_labeled(d.ood_test));
    classes = c.data.synthetic->classes;
  } else {
    classes = doeb::to_labeled(doeb::read(c.data.id_train)).class_count();
  }
  const PrototypeBank bank = c.prototypes.file
                                 ? doeb::to_prototypes(doeb::read(*c.prototypes.file))
                                 : make_prototypes(classes, c.prototypes.dim, c.prototypes.norm, *c.prototypes.seed);
  if (bank.size() != classes) {
    throw ConfigError("prototypes: " + std::to_string(bank.size()) + " prototypes for " +
                      std::to_string(classes) + " classes");
  }
  doeb::write(c.output_dir / kPrototypes, doeb::from_prototypes(bank));
}

void stage_fit_space(const PipelineConfig& config) {
  const PipelineConfig c = resolve_seeds(config);
  const PrototypeBank bank = load_prototypes(c);
  const LabeledFeatures train = doeb::to_labeled(doeb::read(split_path(c, kIdTrain, c.data.id_train)));
  if (train.class_count() > bank.size()) {
    throw ConfigError("fit-space: training labels exceed the " + std::to_string(bank.size()) + " prototypes");
  }
  const Phase1Result r = run_phase1(c, train, bank);
  doeb::write(c.output_dir / kHead, doeb::from_head(r.space.head));
  doeb::write(c.output_dir / kEmbeddedTrain, doeb::from_labeled(r.embedded_train));
  std::ostringstream csv;
  csv << "epoch,loss\n0," << format_double(r.space.initial_loss) << '\n';
  for (std::size_t e = 0; e < r.space.epoch_losses.size(); ++e) {
    csv << e + 1 << ',' << format_double(r.space.epoch_losses[e]) << '\n';
  }
  write_text(c.output_dir / kPhase1Loss, csv.str());
}

void stage_sample(const PipelineConfig& config, SampleMode mode) {
  const PipelineConfig c = resolve_seeds(config);
  const PrototypeBank bank = load_prototypes(c);
  const LabeledFeatures embedded = doeb::to_labeled(doeb::read(c.output_dir / kEmbeddedTrain));
  const OutlierBatch batch = run_phase2(c, embedded, bank, mode);
  doeb::write(c.output_dir / (mode == SampleMode::kOod ? kOodEmbeddings : kIdEmbeddings),
              doeb::from_outliers(batch));
}

void stage_train_detector(const PipelineConfig& config) {
  const PipelineConfig c = resolve_seeds(config);
  const LabeledFeatures embedded = doeb::to_labeled(doeb::read(c.output_dir / kEmbeddedTrain));
  const OutlierBatch outliers = doeb::to_outliers(doeb::read(c.output_dir / kOodEmbeddings));
  const DetectorTrainResult r = run_detector(c, embedded, outliers);
  doeb::write(c.output_dir / kDetector, doeb::from_detector(r.model));
  std::ostringstream csv;
  csv << "epoch,total,ood_reg\n";
  for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
    csv << e + 1 << ',' << format_double(r.epoch_losses[e]) << ',' << format_double(r.epoch_reg_losses[e])
        << '\n';
  }
  write_text(c.output_dir / kDetectorLoss, csv.str());
}

Evaluation stage_evaluate(const PipelineConfig& config) {
  const PipelineConfig c = resolve_seeds(config);
  const auto start = std::chrono::steady_clock::now();
  const EncoderHead head = doeb::to_head(doeb::read(c.output_dir / kHead));
  const DetectorModel model = doeb::to_detector(doeb::read(c.output_dir / kDetector));
  const LabeledFeatures id_test = doeb::to_labeled(doeb::read(split_path(c, kIdTest, c.data.id_test)));
  const EmbeddingMatrix ood_test = doeb::to_matrix(doeb::read(split_path(c, kOodTest, c.data.ood_test)));
  const Evaluation ev = evaluate(model, head, id_test, ood_test);
  const double wall = c.record_wall_ms ? elapsed_ms(start) : 0.0;

  std::ostringstream csv;
  csv << "method,fpr95,auroc,id_acc,beta,sigma2,k,seed,wall_ms\n";
  for (const auto& row : ev.rows) {
    csv << row.method << ',' << format_double(row.fpr95) << ',' << format_double(row.auroc) << ','
        << format_double(row.id_acc) << ',' << format_double(model.beta) << ','
        << format_double(c.sampler.sigma2) << ',' << c.sampler.k << ',' << c.seed << ','
        << format_double(std::round(wall * 1000.0) / 1000.0) << '\n';
  }
  write_text(c.output_dir / kMetrics, csv.str());
  write_text(c.output_dir / kThreshold, "tpr,threshold\n0.95," + format_double(ev.threshold) + "\n");
  return ev;
}

Evaluation run_all(const PipelineConfig& config) {
  stage_gen_data(config);
  stage_fit_space(config);
  stage_sample(config, SampleMode::kOod);
  stage_train_detector(config);
  return stage_evaluate(config);
}

SweepAxis parse_axis(std::string_view name) {
  if (name == "beta") return SweepAxis::kBeta;
  if (name == "sigma2") return SweepAxis::kSigma2;
  if (name == "k") return SweepAxis::kK;
  throw ConfigError("sweep axis must be beta, sigma2 or k, got \"" + std::string(name) + "\"");
}

std::string_view axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBeta: return "beta";
    case SweepAxis::kSigma2: return "sigma2";
    case SweepAxis::kK: return "k";
  }
  return "";
}

std::vector<double> preset_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBeta: return {0.5, 1.0, 1.5, 2.0, 2.5};
    case SweepAxis::kSigma2: return {0.02, 0.03, 0.04, 0.05, 0.06, 0.2};
    case SweepAxis::kK: return {100, 200, 300, 400, 500};
  }
  return {};
}

std::uint64_t sweep_seed(std::uint64_t global_seed, SweepAxis axis, double value, std::size_t replicate) {
  return derive_seed(global_seed,
                     {hash_string(axis_name(axis)), std::bit_cast<std::uint64_t>(value), replicate});
}

PipelineConfig sweep_child(const PipelineConfig& config, SweepAxis axis, double value, std::size_t replicate) {
  PipelineConfig c = config;
  switch (axis) {
    case SweepAxis::kBeta:
      c.detector.beta = value;
      break;
    case SweepAxis::kSigma2:
      c.sampler.sigma2 = value;
      break;
    case SweepAxis::kK:
      if (!(value >= 1.0) || value != std::floor(value)) {
        throw ConfigError("sweep: k values must be positive integers, got " + format_double(value));
      }
      c.sampler.k = static_cast<std::size_t>(value);
      break;
  }
  c.seed = sweep_seed(config.seed, axis, value, replicate);
  c.output_dir = config.output_dir / ("sweep_" + std::string(axis_name(axis))) /
                 (format_double(value) + "_r" + std::to_string(replicate));
  c.validate();
  return c;
}

std::vector<SweepRow> sweep(const PipelineConfig& config, SweepAxis axis, const std::vector<double>& values,
                            std::size_t replicates) {
  if (values.empty()) throw ConfigError("sweep: no values");
  if (replicates < 1) throw ConfigError("sweep: replicates must be >= 1");
  std::vector<SweepRow> rows;
  for (const double v : values) {
    for (std::size_t rep = 0; rep < replicates; ++rep) {
      const PipelineConfig child = sweep_child(config, axis, v, rep);
      const Evaluation ev = run_all(child);
      for (const auto& m : ev.rows) {
        rows.push_back({v, rep, child.seed, m.method + ".fpr95", m.fpr95});
        rows.push_back({v, rep, child.seed, m.method + ".auroc", m.auroc});
        rows.push_back({v, rep, child.seed, m.method + ".id_acc", m.id_acc});
      }
    }
  }
  std::ostringstream csv;
  csv << "axis,value,replicate,seed,metric,score\n";
  for (const auto& r : rows) {
    csv << axis_name(axis) << ',' << format_double(r.value) << ',' << r.replicate << ',' << r.seed << ','
        << r.metric << ',' << format_double(r.score) << '\n';
  }
  write_text(config.output_dir / ("sweep_" + std::string(axis_name(axis)) + ".csv"), csv.str());
  return rows;
}

void export_doeb(const fs::path& input, const fs::path& output, std::string_view format) {
  if (format != "doeb" && format != "json" && format != "csv") {
    throw ConfigError("export format must be csv, json or doeb, got \"" + std::string(format) + "\"");
  }
  const doeb::File f = doeb::read(input);
  if (format == "doeb") {
    doeb::write(output, f);
  } else if (format == "json") {
    write_text(output, doeb_to_json(f).dump(1) + "\n");
  } else {
    write_text(output, doeb_to_csv(f));
  }
}

}  // namespace oodsynth
