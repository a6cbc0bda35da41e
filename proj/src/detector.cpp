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

#include "oodsynth/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "oodsynth/error.hpp"

namespace oodsynth {

DetectorModel DetectorModel::create(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                    std::size_t classes, std::size_t phi_width, double beta,
                                    Rng& rng) {
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(classes);
  DetectorModel model;
  model.classifier = Mlp::random(std::move(widths), rng);
  model.phi = Mlp::random({1, phi_width, phi_width, 1}, rng);
  model.beta = beta;
  model.validate();
  return model;
}

void DetectorModel::validate() const {
  const auto& w = phi.widths();
  if (w.size() != 4 || w.front() != 1 || w.back() != 1) {
    throw std::invalid_argument("DetectorModel: phi must have exactly three affine layers 1 -> h -> h -> 1");
  }
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("DetectorModel: beta must be >= 0");
}

double energy(std::span<const double> logits) { return -log_sum_exp(logits); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double phi_value(const Mlp& phi, double e) {
  const double in[1] = {e};
  return phi.forward(in)[0];
}

double ood_reg_loss(const EmbeddingMatrix& id_logits, const EmbeddingMatrix& ood_logits,
                    const Mlp& phi) {
  if (id_logits.empty() || ood_logits.empty()) {
    throw std::invalid_argument("ood_reg_loss: both batches must be nonempty");
  }
  double ood_term = 0.0;
  for (std::size_t i = 0; i < ood_logits.rows(); ++i) {
    ood_term += softplus(phi_value(phi, energy(ood_logits.row(i))));
  }
  double id_term = 0.0;
  for (std::size_t i = 0; i < id_logits.rows(); ++i) {
    id_term += softplus(-phi_value(phi, energy(id_logits.row(i))));
  }
  return ood_term / static_cast<double>(ood_logits.rows()) +
         id_term / static_cast<double>(id_logits.rows());
}

std::vector<double> logits(const DetectorModel& model, std::span<const double> x) {
  return model.classifier.forward(x);
}

namespace {

EmbeddingMatrix logits_of(const Mlp& classifier, const EmbeddingMatrix& x) {
  EmbeddingMatrix out(x.rows(), classifier.output_dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto l = classifier.forward(x.row(i));
    std::copy(l.begin(), l.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

DetectorLoss total_loss(const DetectorModel& model, const LabeledFeatures& id_batch,
                        const EmbeddingMatrix& ood_batch) {
  id_batch.validate(model.classifier.output_dim());
  const auto id_logits = logits_of(model.classifier, id_batch.features);
  DetectorLoss loss;
  for (std::size_t i = 0; i < id_batch.size(); ++i) {
    const auto row = id_logits.row(i);
    loss.cross_entropy += log_sum_exp(row) - row[static_cast<std::size_t>(id_batch.labels[i])];
  }
  loss.cross_entropy /= static_cast<double>(id_batch.size());
  loss.ood_reg = ood_reg_loss(id_logits, logits_of(model.classifier, ood_batch), model.phi);
  loss.total = loss.cross_entropy + model.beta * loss.ood_reg;
  return loss;
}

DetectorGradient total_loss_and_gradient(const DetectorModel& model,
                                         const LabeledFeatures& id_batch,
                                         const EmbeddingMatrix& ood_batch, double weight_decay) {
  id_batch.validate(model.classifier.output_dim());
  if (ood_batch.empty()) throw std::invalid_argument("total_loss: empty outlier batch");
  const Mlp& f = model.classifier;
  const Mlp& phi = model.phi;
  const std::size_t classes = f.output_dim();
  const bool regularize = model.beta != 0.0;

  DetectorGradient g;
  g.classifier.assign(f.parameter_count(), 0.0);
  g.phi.assign(phi.parameter_count(), 0.0);
  Mlp::Tape f_tape;
  Mlp::Tape phi_tape;
  std::vector<double> grad_logits(classes);

  // One sample's contribution. `label` < 0 marks an outlier; `reg_sign` is
  // +1 for outliers (softplus(s)) and -1 for ID (softplus(-s)).
  const auto accumulate = [&](std::span<const double> x, int label, double ce_weight,
                              double reg_weight, double reg_sign) {
    const auto l = f.forward(x, f_tape);
    const double lse = log_sum_exp(l);
    std::fill(grad_logits.begin(), grad_logits.end(), 0.0);
    if (label >= 0) {
      const auto y = static_cast<std::size_t>(label);
      g.loss.cross_entropy += ce_weight * (lse - l[y]);
      for (std::size_t c = 0; c < classes; ++c) {
        grad_logits[c] += ce_weight * (std::exp(l[c] - lse) - (c == y ? 1.0 : 0.0));
      }
    }
    const double e_in[1] = {-lse};
    const double s = phi.forward(e_in, phi_tape)[0];
    g.loss.ood_reg += reg_weight * softplus(reg_sign * s);
    if (regularize) {
      // d/ds softplus(sign * s) = sign * sigmoid(sign * s)
      const double d_s[1] = {model.beta * reg_weight * reg_sign * sigmoid(reg_sign * s)};
      const double d_energy = phi.backward(phi_tape, d_s, g.phi)[0];
      // dE/dlogit_c = -softmax_c
      for (std::size_t c = 0; c < classes; ++c) grad_logits[c] -= d_energy * std::exp(l[c] - lse);
    }
    f.backward(f_tape, grad_logits, g.classifier);
  };

  const double inv_id = 1.0 / static_cast<double>(id_batch.size());
  const double inv_ood = 1.0 / static_cast<double>(ood_batch.rows());
  for (std::size_t i = 0; i < id_batch.size(); ++i) {
    accumulate(id_batch.features.row(i), id_batch.labels[i], inv_id, inv_id, -1.0);
  }
  for (std::size_t i = 0; i < ood_batch.rows(); ++i) {
    accumulate(ood_batch.row(i), -1, 0.0, inv_ood, 1.0);
  }
  g.loss.total = g.loss.cross_entropy + model.beta * g.loss.ood_reg;

  const auto fp = f.parameters();
  for (std::size_t p = 0; p < fp.size(); ++p) g.classifier[p] += weight_decay * fp[p];
  const auto pp = phi.parameters();
  for (std::size_t p = 0; p < pp.size(); ++p) g.phi[p] += weight_decay * pp[p];
  return g;
}

EmbeddingMatrix detector_inputs(const OutlierBatch& outliers) {
  return normalize_rows(outliers.embeddings);
}

DetectorTrainResult train_detector(const LabeledFeatures& id_data, const OutlierBatch& outliers,
                                   const TrainConfig& config, double beta,
                                   const DetectorArchitecture& arch) {
  return train_detector(id_data, detector_inputs(outliers), config, beta, arch);
}

DetectorTrainResult train_detector(const LabeledFeatures& id_data, const EmbeddingMatrix& ood_inputs,
                                   const TrainConfig& config, double beta,
                                   const DetectorArchitecture& arch) {
  config.validate();
  if (id_data.size() == 0 || ood_inputs.empty()) {
    throw std::invalid_argument("train_detector: ID data and outliers must be nonempty");
  }
  const std::size_t classes = id_data.class_count();
  id_data.validate(classes);
  if (ood_inputs.cols() != id_data.features.cols()) {
    throw std::invalid_argument("train_detector: outlier dimension does not match ID features");
  }

  Rng init_rng(derive_seed(config.seed, {hash_string("init")}));
  Rng shuffle_rng(derive_seed(config.seed, {hash_string("shuffle")}));
  DetectorTrainResult result;
  result.model = DetectorModel::create(id_data.features.cols(), arch.hidden_widths, classes,
                                       arch.phi_width, beta, init_rng);
  DetectorModel& model = result.model;

  // Weight decay goes through the gradient, so the optimizers carry none.
  SgdMomentum f_opt(model.classifier.parameter_count(), config.momentum, 0.0);
  SgdMomentum phi_opt(model.phi.parameter_count(), config.momentum, 0.0);

  const std::size_t n_id = id_data.size();
  const std::size_t n_ood = ood_inputs.rows();
  const std::size_t steps = (n_id + config.batch_size - 1) / config.batch_size;
  const std::size_t ood_per_step = std::max<std::size_t>(1, (n_ood + steps - 1) / steps);
  std::vector<std::size_t> id_order(n_id);
  std::vector<std::size_t> ood_order(n_ood);
  std::iota(id_order.begin(), id_order.end(), std::size_t{0});
  std::iota(ood_order.begin(), ood_order.end(), std::size_t{0});
  std::vector<std::size_t> ood_idx(ood_per_step);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config);
    shuffle_rng.shuffle(std::span<std::size_t>(id_order));
    shuffle_rng.shuffle(std::span<std::size_t>(ood_order));
    double epoch_total = 0.0;
    double epoch_reg = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t start = s * config.batch_size;
      const std::size_t end = std::min(n_id, start + config.batch_size);
      const auto id_batch =
          id_data.select(std::span<const std::size_t>(id_order).subspan(start, end - start));
      for (std::size_t j = 0; j < ood_per_step; ++j) {
        ood_idx[j] = ood_order[(s * ood_per_step + j) % n_ood];
      }
      const auto ood_batch = ood_inputs.select_rows(ood_idx);
      const auto g = total_loss_and_gradient(model, id_batch, ood_batch, config.weight_decay);
      if (!std::isfinite(g.loss.total)) {
        throw NumericalError("train_detector: non-finite loss at epoch " + std::to_string(epoch));
      }
      {
        double norm2 = 0.0;
        const auto pp = model.phi.parameters();
        for (std::size_t p = 0; p < pp.size(); ++p) {
          const double loss_part = g.phi[p] - config.weight_decay * pp[p];
          norm2 += loss_part * loss_part;
        }
        result.phi_loss_grad_norm += std::sqrt(norm2);
      }
      f_opt.step(model.classifier.parameters(), g.classifier, lr);
      phi_opt.step(model.phi.parameters(), g.phi, lr);
      epoch_total += g.loss.total;
      epoch_reg += g.loss.ood_reg;
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(steps));
    result.epoch_reg_losses.push_back(epoch_reg / static_cast<double>(steps));
  }
  return result;
}

double ood_score(const DetectorModel& model, std::span<const double> x) {
  // Kept inside the open interval (0, 1) so thresholds 0 and 1 stay strict.
  const double s = sigmoid(phi_value(model.phi, energy(logits(model, x))));
  return std::clamp(s, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

Verdict detect(const DetectorModel& model, std::span<const double> x, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw std::invalid_argument("detect: threshold must lie in [0, 1]");
  }
  return ood_score(model, x) >= threshold ? Verdict::kIn : Verdict::kOut;
}

}  // namespace oodsynth
