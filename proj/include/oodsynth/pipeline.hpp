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

// End-to-end orchestration: synthetic data, configuration, the file-backed
// stages behind the CLI, evaluation reports and ablation sweeps.
//
// Stage artifacts inside output_dir:
//   gen-data        id_train.doeb id_test.doeb ood_test.doeb prototypes.doeb
//   fit-space       head.doeb embedded_train.doeb phase1_loss.csv
//   sample-ood      ood_embeddings.doeb
//   sample-id       id_embeddings.doeb
//   train-detector  detector.doeb detector_loss.csv
//   evaluate        metrics.csv threshold.csv

#ifndef OODSYNTH_PIPELINE_HPP_
#define OODSYNTH_PIPELINE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oodsynth/conditioned_space.hpp"
#include "oodsynth/detector.hpp"
#include "oodsynth/embeddings.hpp"
#include "oodsynth/knn_sampler.hpp"

namespace oodsynth {

// Isotropic Gaussian mixture standing in for backbone features. When the
// mean lists are empty, means are random directions of length mean_radius
// (ID) and ood_mean_radius (OOD, defaulting to mean_radius).
struct SyntheticSpec {
  std::size_t classes = 8;
  std::size_t d_in = 16;
  std::size_t ood_components = 4;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  std::size_t ood_test_per_component = 100;
  double mean_radius = 5.0;
  std::optional<double> ood_mean_radius;
  double id_stddev = 1.0;
  double ood_stddev = 1.0;
  std::vector<std::vector<double>> id_means;
  std::vector<std::vector<double>> ood_means;
  std::optional<std::uint64_t> seed;  // defaults to a child of the global seed

  void validate() const;
};

struct Dataset {
  LabeledFeatures id_train;
  LabeledFeatures id_test;
  LabeledFeatures ood_test;  // labels are OOD component indices
};

// Requires spec.seed.
Dataset generate_synthetic(const SyntheticSpec& spec);

// C random token embeddings of length `norm` in R^m, orthogonal when C <= m.
PrototypeBank make_prototypes(std::size_t classes, std::size_t dim, double norm, std::uint64_t seed);

struct DataConfig {
  std::optional<SyntheticSpec> synthetic;
  // Used when synthetic is absent.
  std::filesystem::path id_train;
  std::filesystem::path id_test;
  std::filesystem::path ood_test;
};

struct PrototypeConfig {
  std::optional<std::filesystem::path> file;  // raw token embeddings
  std::size_t dim = 8;
  double norm = 1.0;
  std::optional<std::uint64_t> seed;
};

struct Phase1Config {
  TrainConfig train{};
  bool seed_set = false;
  std::vector<std::size_t> hidden_widths{64};
};

struct DetectorConfig {
  TrainConfig train{.lr0 = 0.01};
  bool seed_set = false;
  double beta = 1.0;
  DetectorArchitecture arch{};
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  DataConfig data;
  PrototypeConfig prototypes;
  Phase1Config phase1;
  SamplerConfig sampler;
  bool sampler_seed_set = false;
  DetectorConfig detector;
  bool record_wall_ms = true;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

// Strict JSON reader: unknown keys and wrong types throw ConfigError.
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::filesystem::path& path);

// Copy with every unset sub-seed replaced by a child of config.seed.
PipelineConfig resolve_seeds(const PipelineConfig& config);

// Scores of one method on the ID and OOD test sets.
struct MethodMetrics {
  std::string method;  // outlier_reg, msp or energy
  double fpr95 = 0.0;
  double auroc = 0.0;
  double id_acc = 0.0;
};

struct Evaluation {
  std::vector<MethodMetrics> rows;
  // ood_score threshold keeping 95% of ID test samples.
  double threshold = 0.0;
};

// The detector scores embeddings; raw test features go through the head
// first. With beta = 0 the outlier_reg row ranks by -E, which makes it the
// unregularized energy baseline.
Evaluation evaluate(const DetectorModel& model, const EncoderHead& head, const LabeledFeatures& id_test,
                    const EmbeddingMatrix& ood_test);

// In-memory pipeline pieces used by the file stages and by experiments.
struct Phase1Result {
  SpaceTrainResult space;
  LabeledFeatures embedded_train;
};
Phase1Result run_phase1(const PipelineConfig& resolved, const LabeledFeatures& id_train,
                        const PrototypeBank& bank);
OutlierBatch run_phase2(const PipelineConfig& resolved, const LabeledFeatures& embedded_train,
                        const PrototypeBank& bank, SampleMode mode);
DetectorTrainResult run_detector(const PipelineConfig& resolved, const LabeledFeatures& embedded_train,
                                 const OutlierBatch& outliers);

// File-backed stages. Each reads the artifacts of earlier stages from
// output_dir and writes its own.
void stage_gen_data(const PipelineConfig& config);
void stage_fit_space(const PipelineConfig& config);
void stage_sample(const PipelineConfig& config, SampleMode mode);
void stage_train_detector(const PipelineConfig& config);
Evaluation stage_evaluate(const PipelineConfig& config);

// All stages in order.
Evaluation run_all(const PipelineConfig& config);

enum class SweepAxis { kBeta, kSigma2, kK };

SweepAxis parse_axis(std::string_view name);
std::string_view axis_name(SweepAxis axis);

// Grids used when no values are given.
std::vector<double> preset_values(SweepAxis axis);

// Seed of one sweep run: hash(global_seed, axis, value, replicate).
std::uint64_t sweep_seed(std::uint64_t global_seed, SweepAxis axis, double value, std::size_t replicate);

// Config of one sweep run: the axis value applied, seed = sweep_seed, and
// output_dir = <output_dir>/sweep_<axis>/<value>_r<replicate>.
PipelineConfig sweep_child(const PipelineConfig& config, SweepAxis axis, double value,
                           std::size_t replicate);

struct SweepRow {
  double value = 0.0;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  std::string metric;  // <method>.<fpr95|auroc|id_acc>
  double score = 0.0;
};

// Runs run_all for every (value, replicate) and writes
// <output_dir>/sweep_<axis>.csv with columns
// axis,value,replicate,seed,metric,score.
std::vector<SweepRow> sweep(const PipelineConfig& config, SweepAxis axis,
                            const std::vector<double>& values, std::size_t replicates);

// Re-encodes a DOEB file as csv, json or doeb (canonical bytes).
void export_doeb(const std::filesystem::path& input, const std::filesystem::path& output,
                 std::string_view format);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace oodsynth

#endif  // OODSYNTH_PIPELINE_HPP_
