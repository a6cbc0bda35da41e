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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "oodsynth/doeb.hpp"
#include "oodsynth/error.hpp"
#include "oodsynth/pipeline.hpp"

namespace oodsynth {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("oodsynth_pipeline_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string tiny_json(const fs::path& out, const std::string& extra = "") {
  return R"({
    "seed": 7,
    "output_dir": ")" + out.string() + R"(",
    "data": {"synthetic": {"classes": 3, "d_in": 4, "ood_components": 2, "train_per_class": 40,
                           "test_per_class": 20, "ood_test_per_component": 20, "mean_radius": 4.0}},
    "prototypes": {"dim": 4},
    "phase1": {"epochs": 3, "batch_size": 32, "hidden_widths": [8]},
    "sampler": {"k": 5, "sigma2": 0.05, "candidates_per_anchor": 10, "anchors_per_class": 5,
                "samples_per_class": 12},
    "detector": {"epochs": 3, "batch_size": 32, "hidden_widths": [8], "phi_width": 4},
    "metrics": {"record_wall_ms": false})" + extra + "}";
}

PipelineConfig tiny(const fs::path& out) { return parse_config(tiny_json(out)); }

// ---- synthetic data --------------------------------------------------------

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.classes = 3;
  s.d_in = 5;
  s.ood_components = 2;
  s.train_per_class = 400;
  s.test_per_class = 10;
  s.ood_test_per_component = 10;
  s.seed = 1;
  return s;
}

TEST(Synthetic, ZeroSpreadGivesMeans) {
  auto s = small_spec();
  s.id_stddev = 0.0;
  s.ood_stddev = 0.0;
  s.id_means = {{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {0, 0, 1, 0, 0}};
  s.ood_means = {{0, 0, 0, 1, 0}, {0, 0, 0, 0, 1}};
  const auto d = generate_synthetic(s);
  for (std::size_t i = 0; i < d.id_train.size(); ++i) {
    const auto& mean = s.id_means[static_cast<std::size_t>(d.id_train.labels[i])];
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(d.id_train.features(i, j), mean[j]);
  }
  for (std::size_t i = 0; i < d.ood_test.size(); ++i) {
    const auto& mean = s.ood_means[static_cast<std::size_t>(d.ood_test.labels[i])];
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(d.ood_test.features(i, j), mean[j]);
  }
}

TEST(Synthetic, SampleMeansNearSpecMeans) {
  auto s = small_spec();
  s.id_stddev = 0.7;
  s.id_means = {{1, 2, 3, 4, 5}, {-1, 0, 0, 0, 2}, {0, 0, -3, 0, 0}};
  const auto d = generate_synthetic(s);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < 5; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < d.id_train.size(); ++i) {
        if (d.id_train.labels[i] == static_cast<int>(c)) sum += d.id_train.features(i, j);
      }
      const double mean = sum / 400.0;
      EXPECT_LT(std::abs(mean - s.id_means[c][j]), 4.0 * 0.7 / std::sqrt(400.0));
    }
  }
}

TEST(Synthetic, SeedDeterminesBytes) {
  const auto a = generate_synthetic(small_spec());
  const auto b = generate_synthetic(small_spec());
  EXPECT_EQ(doeb::encode(doeb::from_labeled(a.id_train)), doeb::encode(doeb::from_labeled(b.id_train)));
  EXPECT_EQ(doeb::encode(doeb::from_labeled(a.ood_test)), doeb::encode(doeb::from_labeled(b.ood_test)));
  auto other = small_spec();
  other.seed = 2;
  EXPECT_NE(generate_synthetic(other).id_train.features, a.id_train.features);
}

TEST(Synthetic, Validation) {
  auto s = small_spec();
  s.id_means = {{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}, {0, 0, 1, 0, 0}};
  s.ood_means = {{1, 0, 0, 0, 0}, {0, 0, 0, 0, 1}};
  EXPECT_THROW(generate_synthetic(s), std::invalid_argument);
  s = small_spec();
  s.train_per_class = 0;
  EXPECT_THROW(generate_synthetic(s), std::invalid_argument);
  s = small_spec();
  s.seed.reset();
  EXPECT_THROW(generate_synthetic(s), std::invalid_argument);
}

TEST(Prototypes, OrthogonalWithRequestedNorm) {
  const auto bank = make_prototypes(5, 8, 2.5, 3);
  for (std::size_t a = 0; a < 5; ++a) {
    EXPECT_NEAR(bank.original_norm(a), 2.5, 1e-12);
    for (std::size_t b = a + 1; b < 5; ++b) EXPECT_NEAR(dot(bank.prototype(a), bank.prototype(b)), 0.0, 1e-12);
  }
  const auto crowded = make_prototypes(10, 3, 1.0, 3);
  EXPECT_EQ(crowded.size(), 10u);
  EXPECT_TRUE(crowded.prototypes().is_unit_normalized());
}

// ---- config ----------------------------------------------------------------

TEST(Config, DefaultsFromEmptyObject) {
  const auto c = parse_config("{}");
  ASSERT_TRUE(c.data.synthetic);
  EXPECT_EQ(c.data.synthetic->classes, 8u);
  EXPECT_EQ(c.sampler.k, 300u);
  EXPECT_EQ(c.sampler.sigma2, 0.03);
  EXPECT_EQ(c.sampler.samples_per_class, 1000u);
  EXPECT_EQ(c.phase1.train.lr0, 0.1);
  EXPECT_EQ(c.phase1.train.batch_size, 160u);
  EXPECT_EQ(c.phase1.train.temperature, 0.1);
  EXPECT_EQ(c.detector.beta, 1.0);
  EXPECT_EQ(c.detector.arch.phi_width, 32u);
  EXPECT_TRUE(c.record_wall_ms);
}

TEST(Config, UnknownKeysFailLoud) {
  for (const char* text : {R"({"sed": 1})", R"({"sampler": {"kk": 3}})", R"({"data": {"synthetic": {"clases": 3}}})",
                           R"({"phase1": {"beta": 1}})", R"({"detector": {"temperature": 0.1}})",
                           R"({"metrics": {"wall": true}})", R"({"prototypes": {"size": 3}})"}) {
    EXPECT_THROW(parse_config(text), ConfigError) << text;
  }
  try {
    parse_config(R"({"sampler": {"kk": 3}})");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sampler.kk"), std::string::npos);
  }
}

TEST(Config, TypeAndRangeErrors) {
  for (const char* text : {R"({"seed": "x"})", R"({"seed": -1})", R"({"sampler": {"k": 0}})",
                           R"({"sampler": {"sigma2": -0.1}})", R"({"sampler": {"mode": "both"}})",
                           R"({"detector": {"beta": -1}})", R"({"phase1": {"epochs": 0}})",
                           R"({"phase1": {"hidden_widths": [0]}})", R"({"data": {"id_train": "/nonexistent"}})",
                           R"({"prototypes": {"file": "/nonexistent.doeb"}})", "{not json",
                           R"({"data": {"synthetic": {}, "id_train": "x"}})"}) {
    EXPECT_THROW(parse_config(text), ConfigError) << text;
  }
}

TEST(Config, ExplicitValuesParsed) {
  const auto c = parse_config(R"({"seed": 9, "sampler": {"mode": "id", "reference": "global", "seed": 4},
                                  "detector": {"beta": 2.5, "hidden_widths": [5, 6]}})");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.sampler.mode, SampleMode::kId);
  EXPECT_EQ(c.sampler.reference, ReferenceSet::kGlobal);
  EXPECT_TRUE(c.sampler_seed_set);
  EXPECT_EQ(c.detector.beta, 2.5);
  EXPECT_EQ(c.detector.arch.hidden_widths, (std::vector<std::size_t>{5, 6}));
}

TEST(Config, SeedResolution) {
  const auto c = resolve_seeds(parse_config(R"({"seed": 9, "sampler": {"seed": 4}})"));
  EXPECT_EQ(c.sampler.seed, 4u);
  EXPECT_EQ(c.phase1.train.seed, derive_seed(9, {hash_string("phase1")}));
  EXPECT_EQ(*c.data.synthetic->seed, derive_seed(9, {hash_string("data")}));
  EXPECT_NE(c.phase1.train.seed, c.detector.train.seed);
  const auto d = resolve_seeds(parse_config(R"({"seed": 10, "sampler": {"seed": 4}})"));
  EXPECT_NE(d.phase1.train.seed, c.phase1.train.seed);
  EXPECT_EQ(d.sampler.seed, 4u);
}

TEST(Config, LoadFromFile) {
  const auto dir = scratch("load");
  fs::create_directories(dir);
  std::ofstream(dir / "c.json") << tiny_json(dir / "out");
  EXPECT_EQ(load_config(dir / "c.json").sampler.k, 5u);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}

// ---- stages ----------------------------------------------------------------

TEST(Stages, ArtifactsAndFormats) {
  const auto dir = scratch("stages");
  const auto c = tiny(dir);
  stage_gen_data(c);
  for (const char* f : {"id_train.doeb", "id_test.doeb", "ood_test.doeb", "prototypes.doeb"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  stage_fit_space(c);
  for (const char* f : {"head.doeb", "embedded_train.doeb", "phase1_loss.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto embedded = doeb::to_labeled(doeb::read(dir / "embedded_train.doeb"));
  EXPECT_EQ(embedded.size(), 120u);
  EXPECT_TRUE(embedded.features.is_unit_normalized());
  const std::string loss = slurp(dir / "phase1_loss.csv");
  EXPECT_EQ(loss.rfind("epoch,loss\n0,", 0), 0u);
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 5);

  const auto before = snapshot(dir);
  stage_fit_space(c);
  EXPECT_EQ(snapshot(dir), before);

  stage_sample(c, SampleMode::kOod);
  stage_sample(c, SampleMode::kId);
  const auto ood = doeb::to_outliers(doeb::read(dir / "ood_embeddings.doeb"));
  EXPECT_EQ(ood.size(), 36u);
  const auto bank = doeb::to_prototypes(doeb::read(dir / "prototypes.doeb"));
  for (std::size_t r = 0; r < ood.size(); ++r) {
    EXPECT_NEAR(l2_norm(ood.embeddings.row(r)), bank.original_norm(static_cast<std::size_t>(ood.class_id[r])), 1e-5);
  }
  EXPECT_TRUE(fs::exists(dir / "id_embeddings.doeb"));

  stage_train_detector(c);
  EXPECT_EQ(slurp(dir / "detector_loss.csv").rfind("epoch,total,ood_reg\n1,", 0), 0u);
  const auto ev = stage_evaluate(c);
  ASSERT_EQ(ev.rows.size(), 3u);
  const std::string metrics = slurp(dir / "metrics.csv");
  std::istringstream lines(metrics);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "method,fpr95,auroc,id_acc,beta,sigma2,k,seed,wall_ms");
  std::vector<std::string> methods;
  while (std::getline(lines, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8) << line;
    methods.push_back(line.substr(0, line.find(',')));
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
  }
  EXPECT_EQ(methods, (std::vector<std::string>{"outlier_reg", "msp", "energy"}));
  EXPECT_EQ(slurp(dir / "threshold.csv").rfind("tpr,threshold\n0.95,", 0), 0u);
  fs::remove_all(dir);
}

TEST(Stages, MissingUpstreamArtifactIsIoError) {
  const auto dir = scratch("missing");
  EXPECT_THROW(stage_fit_space(tiny(dir)), IoError);
  fs::remove_all(dir);
}

TEST(Stages, FileDataSource) {
  const auto gen = scratch("source");
  stage_gen_data(tiny(gen));
  const auto out = scratch("source_out");
  const auto c = parse_config(R"({"seed": 7, "output_dir": ")" + out.string() + R"(",
      "data": {"id_train": ")" + (gen / "id_train.doeb").string() + R"(",
               "id_test": ")" + (gen / "id_test.doeb").string() + R"(",
               "ood_test": ")" + (gen / "ood_test.doeb").string() + R"("},
      "prototypes": {"file": ")" + (gen / "prototypes.doeb").string() + R"("},
      "phase1": {"epochs": 2, "hidden_widths": [8]},
      "sampler": {"k": 5, "candidates_per_anchor": 5, "anchors_per_class": 3, "samples_per_class": 6},
      "detector": {"epochs": 2, "hidden_widths": [8], "phi_width": 4}})");
  const auto ev = run_all(c);
  EXPECT_EQ(ev.rows.size(), 3u);
  EXPECT_EQ(slurp(out / "prototypes.doeb"), slurp(gen / "prototypes.doeb"));
  fs::remove_all(gen);
  fs::remove_all(out);
}

TEST(Evaluate, BetaZeroRowIsEnergyBaseline) {
  const auto dir = scratch("beta0");
  auto c = parse_config(tiny_json(dir));
  c.detector.beta = 0.0;
  const auto ev = run_all(c);
  EXPECT_EQ(ev.rows[0].auroc, ev.rows[2].auroc);
  EXPECT_EQ(ev.rows[0].fpr95, ev.rows[2].fpr95);
  EXPECT_EQ(ev.rows[0].id_acc, ev.rows[2].id_acc);
  fs::remove_all(dir);
}

TEST(RunAll, ByteIdenticalAcrossRuns) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  run_all(tiny(a));
  run_all(tiny(b));
  const auto sa = snapshot(a);
  EXPECT_EQ(sa.size(), 12u);
  EXPECT_EQ(sa, snapshot(b));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunAll, EveryDoebFileRoundTrips) {
  const auto dir = scratch("roundtrip");
  run_all(tiny(dir));
  for (const auto& [name, bytes] : snapshot(dir)) {
    if (name.size() < 5 || name.substr(name.size() - 5) != ".doeb") continue;
    const std::vector<std::uint8_t> raw(bytes.begin(), bytes.end());
    EXPECT_EQ(doeb::encode(doeb::decode(raw)), raw) << name;
  }
  fs::remove_all(dir);
}

// ---- sweep -----------------------------------------------------------------

TEST(Sweep, SeedsDistinctAndDerived) {
  EXPECT_NE(sweep_seed(1, SweepAxis::kBeta, 1.0, 0), sweep_seed(1, SweepAxis::kBeta, 1.0, 1));
  EXPECT_NE(sweep_seed(1, SweepAxis::kBeta, 1.0, 0), sweep_seed(1, SweepAxis::kSigma2, 1.0, 0));
  EXPECT_NE(sweep_seed(1, SweepAxis::kBeta, 1.0, 0), sweep_seed(1, SweepAxis::kBeta, 1.5, 0));
  EXPECT_NE(sweep_seed(1, SweepAxis::kBeta, 1.0, 0), sweep_seed(2, SweepAxis::kBeta, 1.0, 0));
  EXPECT_EQ(sweep_seed(1, SweepAxis::kK, 100, 2), sweep_seed(1, SweepAxis::kK, 100, 2));
}

TEST(Sweep, PresetsAndAxes) {
  EXPECT_EQ(preset_values(SweepAxis::kSigma2), (std::vector<double>{0.02, 0.03, 0.04, 0.05, 0.06, 0.2}));
  EXPECT_EQ(preset_values(SweepAxis::kK), (std::vector<double>{100, 200, 300, 400, 500}));
  EXPECT_EQ(preset_values(SweepAxis::kBeta).size(), 5u);
  EXPECT_EQ(parse_axis("sigma2"), SweepAxis::kSigma2);
  EXPECT_THROW(parse_axis("lr"), ConfigError);
  const auto c = tiny(scratch("axes"));
  EXPECT_THROW(sweep_child(c, SweepAxis::kK, 2.5, 0), ConfigError);
  EXPECT_EQ(sweep_child(c, SweepAxis::kK, 7, 0).sampler.k, 7u);
}

TEST(Sweep, RowCountAndCsv) {
  const auto dir = scratch("sweep");
  const auto rows = sweep(tiny(dir), SweepAxis::kSigma2, {0.03, 0.1}, 2);
  EXPECT_EQ(rows.size(), 2u * 2u * 9u);
  const std::string csv = slurp(dir / "sweep_sigma2.csv");
  EXPECT_EQ(csv.rfind("axis,value,replicate,seed,metric,score\nsigma2,0.03,0,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 36);
  EXPECT_TRUE(fs::exists(dir / "sweep_sigma2" / "0.1_r1" / "metrics.csv"));
  fs::remove_all(dir);
}

TEST(Sweep, SingleValueEqualsDirectRun) {
  const auto dir = scratch("sweep_one");
  const auto base = tiny(dir);
  const auto rows = sweep(base, SweepAxis::kBeta, {1.0}, 1);
  const auto child = sweep_child(base, SweepAxis::kBeta, 1.0, 0);
  const auto sweep_metrics = slurp(child.output_dir / "metrics.csv");
  auto direct = child;
  direct.output_dir = scratch("sweep_direct");
  const auto ev = run_all(direct);
  EXPECT_EQ(slurp(direct.output_dir / "metrics.csv"), sweep_metrics);
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[1].metric, "outlier_reg.auroc");
  EXPECT_EQ(rows[1].score, ev.rows[0].auroc);
  EXPECT_EQ(rows[1].seed, child.seed);
  fs::remove_all(dir);
  fs::remove_all(direct.output_dir);
}

// ---- export ----------------------------------------------------------------

TEST(Export, Formats) {
  const auto dir = scratch("export");
  run_all(tiny(dir));
  export_doeb(dir / "ood_embeddings.doeb", dir / "copy.doeb", "doeb");
  EXPECT_EQ(slurp(dir / "copy.doeb"), slurp(dir / "ood_embeddings.doeb"));
  export_doeb(dir / "ood_embeddings.doeb", dir / "o.csv", "csv");
  const auto csv = slurp(dir / "o.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 36);
  export_doeb(dir / "detector.doeb", dir / "d.json", "json");
  EXPECT_NE(slurp(dir / "d.json").find("\"weights\""), std::string::npos);
  EXPECT_THROW(export_doeb(dir / "head.doeb", dir / "x", "yaml"), ConfigError);
  EXPECT_THROW(export_doeb(dir / "nope.doeb", dir / "x", "csv"), IoError);
  fs::remove_all(dir);
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (const double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -0.0, 5e-324}) {
    EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v) << format_double(v);
  }
  EXPECT_EQ(format_double(0.05), "0.05");
  EXPECT_EQ(format_double(1.0), "1");
}

}  // namespace
}  // namespace oodsynth
