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

// Classifier trained with cross-entropy plus an energy-based binary
// regularizer. A small scalar network phi maps the energy of the logits to
// an ID-vs-OOD logit; sigmoid(phi(E)) is the detection score, higher = ID.

#ifndef OODSYNTH_DETECTOR_HPP_
#define OODSYNTH_DETECTOR_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "oodsynth/conditioned_space.hpp"
#include "oodsynth/embeddings.hpp"
#include "oodsynth/knn_sampler.hpp"
#include "oodsynth/mlp.hpp"

namespace oodsynth {

struct DetectorModel {
  Mlp classifier;  // input -> C logits
  Mlp phi;         // 1 -> h -> h -> 1
  double beta = 1.0;

  static DetectorModel create(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                              std::size_t classes, std::size_t phi_width, double beta, Rng& rng);

  // Throws std::invalid_argument unless phi is 1 -> h -> h -> 1 and beta >= 0.
  void validate() const;

  bool operator==(const DetectorModel&) const = default;
};

// -log sum_j exp(logit_j).
double energy(std::span<const double> logits);

// log(1 + exp(x)) without overflow.
double softplus(double x);
double sigmoid(double x);

double phi_value(const Mlp& phi, double e);

// mean_ood log(1 + exp(phi(E))) + mean_id log(1 + exp(-phi(E))). Each row
// of the two matrices is one logit vector.
double ood_reg_loss(const EmbeddingMatrix& id_logits, const EmbeddingMatrix& ood_logits,
                    const Mlp& phi);

struct DetectorLoss {
  double cross_entropy = 0.0;
  double ood_reg = 0.0;
  double total = 0.0;  // cross_entropy + beta * ood_reg
};

DetectorLoss total_loss(const DetectorModel& model, const LabeledFeatures& id_batch,
                        const EmbeddingMatrix& ood_batch);

struct DetectorGradient {
  DetectorLoss loss;
  std::vector<double> classifier;  // matches model.classifier.parameters()
  std::vector<double> phi;         // matches model.phi.parameters()
};

// Gradient of total + 0.5 * weight_decay * ||theta||^2 over both networks.
// With beta = 0 the phi gradient is exactly the weight-decay term.
DetectorGradient total_loss_and_gradient(const DetectorModel& model,
                                         const LabeledFeatures& id_batch,
                                         const EmbeddingMatrix& ood_batch, double weight_decay);

struct DetectorArchitecture {
  std::vector<std::size_t> hidden_widths{64, 64, 64};
  std::size_t phi_width = 32;
};

struct DetectorTrainResult {
  DetectorModel model;
  std::vector<double> epoch_losses;      // mean total loss per epoch
  std::vector<double> epoch_reg_losses;  // mean ood_reg per epoch
  double phi_loss_grad_norm = 0.0;       // sum over steps of ||dL/dphi|| (no decay)
};

// Embedded outliers as detector inputs: each row projected back onto the
// unit sphere, where the ID embeddings live.
EmbeddingMatrix detector_inputs(const OutlierBatch& outliers);

// Joint SGD on classifier and phi. ID minibatches and proportionally sized
// outlier minibatches are drawn from per-epoch shuffles.
DetectorTrainResult train_detector(const LabeledFeatures& id_data, const OutlierBatch& outliers,
                                   const TrainConfig& config, double beta,
                                   const DetectorArchitecture& arch = {});

// Same, with outlier inputs given directly.
DetectorTrainResult train_detector(const LabeledFeatures& id_data, const EmbeddingMatrix& ood_inputs,
                                   const TrainConfig& config, double beta,
                                   const DetectorArchitecture& arch = {});

std::vector<double> logits(const DetectorModel& model, std::span<const double> x);

// sigmoid(phi(E(f(x)))); higher = more in-distribution.
double ood_score(const DetectorModel& model, std::span<const double> x);

enum class Verdict { kIn, kOut };

// kIn iff ood_score >= threshold.
Verdict detect(const DetectorModel& model, std::span<const double> x, double threshold);

}  // namespace oodsynth

#endif  // OODSYNTH_DETECTOR_HPP_
