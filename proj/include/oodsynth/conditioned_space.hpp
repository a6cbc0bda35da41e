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

// Learning an embedding space aligned with fixed class prototypes: an MLP
// encoder followed by L2 normalization, trained with the prototype-softmax
// cross-entropy at temperature t.

#ifndef OODSYNTH_CONDITIONED_SPACE_HPP_
#define OODSYNTH_CONDITIONED_SPACE_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "oodsynth/embeddings.hpp"
#include "oodsynth/mlp.hpp"

namespace oodsynth {

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 160;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double temperature = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LabeledFeatures {
  EmbeddingMatrix features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  // Throws std::invalid_argument unless n >= 1, shapes agree and every label
  // lies in [0, num_classes).
  void validate(std::size_t num_classes) const;

  // Largest label + 1.
  std::size_t class_count() const;

  LabeledFeatures select(std::span<const std::size_t> indices) const;
};

// h_theta followed by L2 normalization.
class EncoderHead {
 public:
  EncoderHead() = default;
  explicit EncoderHead(Mlp net) : net_(std::move(net)) {}

  // d_in -> hidden... -> m, uniformly initialized from `rng`.
  static EncoderHead create(std::size_t d_in, const std::vector<std::size_t>& hidden,
                            std::size_t m, Rng& rng);

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  std::size_t input_dim() const { return net_.input_dim(); }
  std::size_t output_dim() const { return net_.output_dim(); }

  bool operator==(const EncoderHead&) const = default;

 private:
  Mlp net_;
};

// Unit embedding of x. Throws NumericalError when the pre-normalization
// output is zero.
std::vector<double> forward(const EncoderHead& head, std::span<const double> x);

// Embeds every row.
EmbeddingMatrix embed_all(const EncoderHead& head, const EmbeddingMatrix& x);

// Mean over the batch of -log softmax_{y_i}(T(y_j).z_i / t).
double alignment_loss(const EncoderHead& head, const LabeledFeatures& batch,
                      const PrototypeBank& bank, double temperature);

struct LossAndGradient {
  double loss = 0.0;               // data term only
  std::vector<double> gradient;    // flat, matches head.net().parameters()
};

// Gradient of alignment_loss + 0.5 * weight_decay * ||theta||^2.
LossAndGradient alignment_loss_and_gradient(const EncoderHead& head, const LabeledFeatures& batch,
                                            const PrototypeBank& bank, double temperature,
                                            double weight_decay);

std::vector<double> loss_gradient(const EncoderHead& head, const LabeledFeatures& batch,
                                  const PrototypeBank& bank, double temperature,
                                  double weight_decay);

// lr0 * 0.5 * (1 + cos(pi * epoch / epochs)), epoch in [0, epochs).
double cosine_lr(int epoch, const TrainConfig& config);

struct SpaceTrainResult {
  EncoderHead head;
  double initial_loss = 0.0;          // full-data loss before the first step
  std::vector<double> epoch_losses;   // mean minibatch loss per epoch
};

// Minibatch SGD with momentum over `config.epochs`. Initialization and
// shuffling use separate streams derived from config.seed. Throws
// NumericalError naming the epoch if the loss becomes non-finite.
SpaceTrainResult train_space(const LabeledFeatures& data, const PrototypeBank& bank,
                             const TrainConfig& config,
                             const std::vector<std::size_t>& hidden_widths = {64});

}  // namespace oodsynth

#endif  // OODSYNTH_CONDITIONED_SPACE_HPP_
