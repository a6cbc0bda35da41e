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

#include "oodsynth/conditioned_space.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "oodsynth/error.hpp"

namespace oodsynth {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(lr0 > 0.0)) throw std::invalid_argument("TrainConfig: lr0 must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("TrainConfig: temperature must be > 0");
}

void LabeledFeatures::validate(std::size_t num_classes) const {
  if (labels.empty()) throw std::invalid_argument("LabeledFeatures: no samples");
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("LabeledFeatures: feature rows and labels disagree");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("LabeledFeatures: label " + std::to_string(labels[i]) +
                                  " at row " + std::to_string(i) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
}

std::size_t LabeledFeatures::class_count() const {
  int hi = -1;
  for (const int y : labels) hi = std::max(hi, y);
  return static_cast<std::size_t>(hi + 1);
}

LabeledFeatures LabeledFeatures::select(std::span<const std::size_t> indices) const {
  LabeledFeatures out;
  out.features = features.select_rows(indices);
  out.labels.reserve(indices.size());
  for (const std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

EncoderHead EncoderHead::create(std::size_t d_in, const std::vector<std::size_t>& hidden,
                                std::size_t m, Rng& rng) {
  std::vector<std::size_t> widths{d_in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(m);
  return EncoderHead(Mlp::random(std::move(widths), rng));
}

namespace {

std::vector<double> unit_or_throw(std::vector<double> h) {
  const double n = l2_norm(h);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw NumericalError("EncoderHead: pre-normalization output has zero or non-finite norm");
  }
  for (double& v : h) v /= n;
  return h;
}

void check_batch(const LabeledFeatures& batch, const PrototypeBank& bank, double temperature) {
  batch.validate(bank.size());
  if (!(temperature > 0.0)) throw std::invalid_argument("alignment loss: temperature must be > 0");
}

}  // namespace

std::vector<double> forward(const EncoderHead& head, std::span<const double> x) {
  return unit_or_throw(head.net().forward(x));
}

EmbeddingMatrix embed_all(const EncoderHead& head, const EmbeddingMatrix& x) {
  EmbeddingMatrix out(x.rows(), head.output_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto z = forward(head, x.row(i));
    std::copy(z.begin(), z.end(), out.row(i).begin());
  }
  return out;
}

double alignment_loss(const EncoderHead& head, const LabeledFeatures& batch,
                      const PrototypeBank& bank, double temperature) {
  check_batch(batch, bank, temperature);
  std::vector<double> logits(bank.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto z = forward(head, batch.features.row(i));
    for (std::size_t c = 0; c < bank.size(); ++c) logits[c] = dot(bank.prototype(c), z) / temperature;
    total += log_sum_exp(logits) - logits[static_cast<std::size_t>(batch.labels[i])];
  }
  return total / static_cast<double>(batch.size());
}

LossAndGradient alignment_loss_and_gradient(const EncoderHead& head, const LabeledFeatures& batch,
                                            const PrototypeBank& bank, double temperature,
                                            double weight_decay) {
  check_batch(batch, bank, temperature);
  const Mlp& net = head.net();
  const std::size_t m = net.output_dim();
  const std::size_t classes = bank.size();
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  LossAndGradient out;
  out.gradient.assign(net.parameter_count(), 0.0);
  Mlp::Tape tape;
  std::vector<double> logits(classes);
  std::vector<double> grad_z(m);
  std::vector<double> grad_h(m);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto h = net.forward(batch.features.row(i), tape);
    const double norm = l2_norm(h);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericalError("EncoderHead: pre-normalization output has zero or non-finite norm");
    }
    std::vector<double> z(h);
    for (double& v : z) v /= norm;

    for (std::size_t c = 0; c < classes; ++c) logits[c] = dot(bank.prototype(c), z) / temperature;
    const double lse = log_sum_exp(logits);
    const auto y = static_cast<std::size_t>(batch.labels[i]);
    out.loss += (lse - logits[y]) * inv_n;

    // dL/dlogit_c = p_c - [c == y]; dL/dz = sum_c (p_c - [c == y]) mu_c / t.
    std::fill(grad_z.begin(), grad_z.end(), 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      const double residual = std::exp(logits[c] - lse) - (c == y ? 1.0 : 0.0);
      const auto mu = bank.prototype(c);
      for (std::size_t j = 0; j < m; ++j) grad_z[j] += residual * mu[j] / temperature;
    }
    // Through z = h / ||h||: dL/dh = (g - (g.z) z) / ||h||.
    const double gz = dot(grad_z, z);
    for (std::size_t j = 0; j < m; ++j) grad_h[j] = (grad_z[j] - gz * z[j]) / norm * inv_n;
    net.backward(tape, grad_h, out.gradient);
  }
  const auto params = net.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) out.gradient[p] += weight_decay * params[p];
  return out;
}

std::vector<double> loss_gradient(const EncoderHead& head, const LabeledFeatures& batch,
                                  const PrototypeBank& bank, double temperature,
                                  double weight_decay) {
  return alignment_loss_and_gradient(head, batch, bank, temperature, weight_decay).gradient;
}

double cosine_lr(int epoch, const TrainConfig& config) {
  if (epoch < 0 || epoch >= config.epochs) {
    throw std::invalid_argument("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(config.epochs) + ")");
  }
  return config.lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / config.epochs));
}

SpaceTrainResult train_space(const LabeledFeatures& data, const PrototypeBank& bank,
                             const TrainConfig& config,
                             const std::vector<std::size_t>& hidden_widths) {
  config.validate();
  data.validate(bank.size());
  if (data.class_count() != bank.size()) {
    throw std::invalid_argument("train_space: data has " + std::to_string(data.class_count()) +
                                " classes but the prototype bank has " +
                                std::to_string(bank.size()));
  }
  Rng init_rng(derive_seed(config.seed, {hash_string("init")}));
  Rng shuffle_rng(derive_seed(config.seed, {hash_string("shuffle")}));

  SpaceTrainResult result;
  result.head = EncoderHead::create(data.features.cols(), hidden_widths, bank.dim(), init_rng);
  result.initial_loss = alignment_loss(result.head, data, bank, config.temperature);

  SgdMomentum optimizer(result.head.net().parameter_count(), config.momentum, 0.0);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config);
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const auto batch = data.select(std::span<const std::size_t>(order).subspan(start, end - start));
      const auto lg = alignment_loss_and_gradient(result.head, batch, bank, config.temperature,
                                                  config.weight_decay);
      if (!std::isfinite(lg.loss)) {
        throw NumericalError("train_space: non-finite loss at epoch " + std::to_string(epoch));
      }
      // Weight decay is already folded into lg.gradient.
      optimizer.step(result.head.net().parameters(), lg.gradient, lr);
      epoch_loss += lg.loss;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
  }
  return result;
}

}  // namespace oodsynth
