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

#ifndef OODSYNTH_MLP_HPP_
#define OODSYNTH_MLP_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "oodsynth/rng.hpp"

namespace oodsynth {

// Fully connected network: affine layers with a rectifier between them and
// no activation after the last one. All parameters live in one flat vector
// (per layer: weight out x in row-major, then bias), so optimizers and
// finite-difference checks can treat the model as a single array.
class Mlp {
 public:
  // Per-layer forward record needed by backward().
  struct Tape {
    std::vector<std::vector<double>> inputs;  // input fed to each layer
    std::vector<std::vector<double>> pre;     // affine output of each layer
  };

  Mlp() = default;

  // widths = {in, hidden..., out}; parameters start at zero.
  explicit Mlp(std::vector<std::size_t> widths);

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  static Mlp random(std::vector<std::size_t> widths, Rng& rng);

  // Builds a network from explicit per-layer (weight, bias) arrays.
  static Mlp from_layers(const std::vector<std::vector<double>>& weights,
                         const std::vector<std::vector<double>>& biases,
                         const std::vector<std::size_t>& widths);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  std::size_t layer_count() const { return widths_.empty() ? 0 : widths_.size() - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::span<double> weight(std::size_t layer);
  std::span<const double> weight(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;

  std::vector<double> forward(std::span<const double> x) const;
  std::vector<double> forward(std::span<const double> x, Tape& tape) const;

  // Adds dL/dtheta into `grad` (length parameter_count()) given dL/dout and
  // returns dL/dx.
  std::vector<double> backward(const Tape& tape, std::span<const double> grad_out,
                               std::span<double> grad) const;

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::vector<double> params_;
};

// v <- momentum * v - lr * (g + weight_decay * w);  w <- w + v
class SgdMomentum {
 public:
  SgdMomentum(std::size_t parameter_count, double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay), velocity_(parameter_count, 0.0) {}

  void step(std::span<double> params, std::span<const double> loss_grad, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<double> velocity_;
};

// Returns 0.5 * weight_decay * ||params||^2, the objective term whose
// gradient the optimizer adds.
double weight_decay_penalty(std::span<const double> params, double weight_decay);

}  // namespace oodsynth

#endif  // OODSYNTH_MLP_HPP_
