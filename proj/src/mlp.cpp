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

#include "oodsynth/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oodsynth {

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (const std::size_t w : widths_) {
    if (w == 0) throw std::invalid_argument("Mlp: layer widths must be positive");
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weight_offset_.push_back(offset);
    offset += widths_[l] * widths_[l + 1];
    bias_offset_.push_back(offset);
    offset += widths_[l + 1];
  }
  params_.assign(offset, 0.0);
}

Mlp Mlp::random(std::vector<std::size_t> widths, Rng& rng) {
  Mlp net(std::move(widths));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.widths_[l]));
    for (double& w : net.weight(l)) w = rng.uniform(-bound, bound);
    for (double& b : net.bias(l)) b = rng.uniform(-bound, bound);
  }
  return net;
}

Mlp Mlp::from_layers(const std::vector<std::vector<double>>& weights,
                     const std::vector<std::vector<double>>& biases,
                     const std::vector<std::size_t>& widths) {
  Mlp net(widths);
  if (weights.size() != net.layer_count() || biases.size() != net.layer_count()) {
    throw std::invalid_argument("Mlp::from_layers: layer count mismatch");
  }
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (weights[l].size() != net.weight(l).size() || biases[l].size() != net.bias(l).size()) {
      throw std::invalid_argument("Mlp::from_layers: tensor shape mismatch at layer " +
                                  std::to_string(l));
    }
    std::copy(weights[l].begin(), weights[l].end(), net.weight(l).begin());
    std::copy(biases[l].begin(), biases[l].end(), net.bias(l).begin());
  }
  return net;
}

std::span<double> Mlp::weight(std::size_t layer) {
  return {params_.data() + weight_offset_.at(layer), widths_[layer] * widths_[layer + 1]};
}
std::span<const double> Mlp::weight(std::size_t layer) const {
  return {params_.data() + weight_offset_.at(layer), widths_[layer] * widths_[layer + 1]};
}
std::span<double> Mlp::bias(std::size_t layer) {
  return {params_.data() + bias_offset_.at(layer), widths_[layer + 1]};
}
std::span<const double> Mlp::bias(std::size_t layer) const {
  return {params_.data() + bias_offset_.at(layer), widths_[layer + 1]};
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
  Tape tape;
  return forward(x, tape);
}

std::vector<double> Mlp::forward(std::span<const double> x, Tape& tape) const {
  if (x.size() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: expected input of dimension " +
                                std::to_string(input_dim()) + ", got " + std::to_string(x.size()));
  }
  const std::size_t layers = layer_count();
  tape.inputs.resize(layers);
  tape.pre.resize(layers);
  std::vector<double> h(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const auto w = weight(l);
    const auto b = bias(l);
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * h[i];
      z[o] = s;
    }
    tape.inputs[l] = std::move(h);
    h = z;
    if (l + 1 < layers) {
      for (double& v : h) v = v > 0.0 ? v : 0.0;
    }
    tape.pre[l] = std::move(z);
  }
  return h;
}

std::vector<double> Mlp::backward(const Tape& tape, std::span<const double> grad_out,
                                  std::span<double> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("Mlp::backward: gradient size");
  if (grad_out.size() != output_dim()) throw std::invalid_argument("Mlp::backward: output size");
  std::vector<double> delta(grad_out.begin(), grad_out.end());
  for (std::size_t l = layer_count(); l-- > 0;) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    if (l + 1 < layer_count()) {
      const auto& pre = tape.pre[l];
      for (std::size_t o = 0; o < out; ++o) {
        if (!(pre[o] > 0.0)) delta[o] = 0.0;
      }
    }
    const auto w = weight(l);
    const auto& input = tape.inputs[l];
    double* gw = grad.data() + weight_offset_[l];
    double* gb = grad.data() + bias_offset_[l];
    std::vector<double> next(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      const double* row = w.data() + o * in;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += d * input[i];
        next[i] += d * row[i];
      }
    }
    delta = std::move(next);
  }
  return delta;
}

void SgdMomentum::step(std::span<double> params, std::span<const double> loss_grad, double lr) {
  if (params.size() != velocity_.size() || loss_grad.size() != velocity_.size()) {
    throw std::invalid_argument("SgdMomentum::step: size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = loss_grad[i] + weight_decay_ * params[i];
    velocity_[i] = momentum_ * velocity_[i] - lr * g;
    params[i] += velocity_[i];
  }
}

double weight_decay_penalty(std::span<const double> params, double weight_decay) {
  double s = 0.0;
  for (const double p : params) s += p * p;
  return 0.5 * weight_decay * s;
}

}  // namespace oodsynth
