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

#include "oodsynth/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "oodsynth/error.hpp"

namespace oodsynth {
namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (const double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("EmbeddingMatrix: data size does not match rows x cols");
  }
  require_finite(data_, "EmbeddingMatrix");
}

EmbeddingMatrix EmbeddingMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  EmbeddingMatrix out;
  for (const auto& r : rows) out.append_row(r);
  return out;
}

void EmbeddingMatrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && data_.empty()) cols_ = values.size();
  if (values.size() != cols_) {
    throw std::invalid_argument("EmbeddingMatrix::append_row: expected " + std::to_string(cols_) +
                                " columns, got " + std::to_string(values.size()));
  }
  require_finite(values, "EmbeddingMatrix::append_row");
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

EmbeddingMatrix EmbeddingMatrix::select_rows(std::span<const std::size_t> indices) const {
  EmbeddingMatrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw std::out_of_range("EmbeddingMatrix::select_rows");
    std::copy_n(row(indices[i]).begin(), cols_, out.row(i).begin());
  }
  return out;
}

bool EmbeddingMatrix::is_unit_normalized(double tolerance) const {
  for (std::size_t i = 0; i < rows_; ++i) {
    if (std::abs(l2_norm(row(i)) - 1.0) > tolerance) return false;
  }
  return true;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<double> normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("normalize: vector has zero or non-finite norm");
  }
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
  EmbeddingMatrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto unit = normalize(m.row(i));
    std::copy(unit.begin(), unit.end(), out.row(i).begin());
  }
  return out;
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double hi = *std::max_element(x.begin(), x.end());
  if (std::isinf(hi)) return hi;
  double s = 0.0;
  for (const double v : x) s += std::exp(v - hi);
  return hi + std::log(s);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

PrototypeBank::PrototypeBank(const EmbeddingMatrix& token_embeddings,
                             std::vector<std::string> class_names)
    : prototypes_(token_embeddings.rows(), token_embeddings.cols()),
      original_norms_(token_embeddings.rows()),
      class_names_(std::move(class_names)) {
  if (token_embeddings.cols() == 0 && token_embeddings.rows() > 0) {
    throw std::invalid_argument("PrototypeBank: zero-dimensional prototypes");
  }
  for (std::size_t c = 0; c < token_embeddings.rows(); ++c) {
    const double n = l2_norm(token_embeddings.row(c));
    if (!(n > 0.0)) {
      throw std::invalid_argument("PrototypeBank: token embedding " + std::to_string(c) +
                                  " has zero norm");
    }
    original_norms_[c] = n;
    for (std::size_t j = 0; j < token_embeddings.cols(); ++j) {
      prototypes_(c, j) = token_embeddings(c, j) / n;
    }
  }
  if (class_names_.empty()) {
    for (std::size_t c = 0; c < token_embeddings.rows(); ++c) {
      class_names_.push_back("class_" + std::to_string(c));
    }
  } else if (class_names_.size() != token_embeddings.rows()) {
    throw std::invalid_argument("PrototypeBank: class name count does not match prototypes");
  }
}

std::vector<double> PrototypeBank::token_embedding(std::size_t c) const {
  std::vector<double> out(prototype(c).begin(), prototype(c).end());
  for (double& x : out) x *= original_norms_.at(c);
  return out;
}

EmbeddingMatrix PrototypeBank::token_embeddings() const {
  EmbeddingMatrix out(size(), dim());
  for (std::size_t c = 0; c < size(); ++c) {
    const auto t = token_embedding(c);
    std::copy(t.begin(), t.end(), out.row(c).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Modified Bessel function of the first kind, log domain.

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2 pi)
constexpr double kSeriesCrossover = 30.0;
constexpr int kDebyeTerms = 14;

// log sum_j q^j / (j! Gamma(v + j + 1)).
double log_series_sum(double v, double q) {
  double term = -std::lgamma(v + 1.0);
  if (q == 0.0) return term;
  const double log_q = std::log(q);
  std::vector<double> terms;
  double peak = term;
  for (int j = 0;; ++j) {
    terms.push_back(term);
    peak = std::max(peak, term);
    const double ratio_log = log_q - std::log(j + 1.0) - std::log(v + j + 1.0);
    // Past the peak the terms fall monotonically; stop once negligible.
    if (ratio_log < 0.0 && term < peak - 40.0) break;
    if (j > 1000000) {
      throw NumericalError("log_bessel_i: series regime failed to converge (v=" +
                           std::to_string(v) + ", q=" + std::to_string(q) + ")");
    }
    term += ratio_log;
  }
  double s = 0.0;
  for (const double t : terms) s += std::exp(t - peak);
  return peak + std::log(s);
}

// Coefficients of the Debye polynomials u_k(t), indexed by power of t.
const std::vector<std::vector<double>>& debye_polynomials() {
  static const std::vector<std::vector<double>> polys = [] {
    std::vector<std::vector<double>> u(kDebyeTerms);
    u[0] = {1.0};
    for (int k = 0; k + 1 < kDebyeTerms; ++k) {
      const auto& c = u[k];
      std::vector<double> next(c.size() + 3, 0.0);
      for (std::size_t p = 1; p < c.size(); ++p) {
        // (1/2) t^2 (1 - t^2) * p c_p t^(p-1)
        next[p + 1] += 0.5 * p * c[p];
        next[p + 3] -= 0.5 * p * c[p];
      }
      for (std::size_t p = 0; p < c.size(); ++p) {
        // (1/8) integral_0^t (1 - 5 s^2) c_p s^p ds
        next[p + 1] += c[p] / (8.0 * (p + 1));
        next[p + 3] -= 5.0 * c[p] / (8.0 * (p + 3));
      }
      u[k + 1] = std::move(next);
    }
    return u;
  }();
  return polys;
}

void check_result(double value, const char* regime, double v, double x) {
  if (std::isnan(value) || value == std::numeric_limits<double>::infinity()) {
    throw NumericalError(std::string("log_bessel_i: overflow in ") + regime +
                         " regime (v=" + std::to_string(v) + ", x=" + std::to_string(x) + ")");
  }
}

}  // namespace

double log_bessel_i_series(double v, double x) {
  if (v < 0.0 || x < 0.0) throw std::invalid_argument("log_bessel_i: requires v >= 0, x >= 0");
  if (x == 0.0) return v == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  const double result = v * std::log(0.5 * x) + log_series_sum(v, 0.25 * x * x);
  check_result(result, "series", v, x);
  return result;
}

double log_bessel_i_asymptotic(double v, double x) {
  if (v < 0.0 || !(x > 0.0)) {
    throw std::invalid_argument("log_bessel_i_asymptotic: requires v >= 0, x > 0");
  }
  // I_v(x) ~ e^(v eta) / sqrt(2 pi r) * sum_k u_k(t) / v^k, r = sqrt(v^2 + x^2),
  // t = v / r. Writing u_k(t) / v^k = sum_p c_kp t^(p-k) / r^k keeps v = 0 finite.
  const double r = std::hypot(v, x);
  const double t = v / r;
  const auto& polys = debye_polynomials();
  double sum = 1.0;
  double previous = 1.0;
  double inv_r_pow = 1.0;
  for (int k = 1; k < kDebyeTerms; ++k) {
    inv_r_pow /= r;
    double poly = 0.0;
    const auto& c = polys[k];
    double t_pow = 1.0;
    for (std::size_t p = k; p < c.size(); ++p) {
      poly += c[p] * t_pow;
      t_pow *= t;
    }
    const double term = poly * inv_r_pow;
    if (std::abs(term) > std::abs(previous)) break;  // series started to diverge
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    previous = term;
  }
  const double exponent = r + (v > 0.0 ? v * std::log(x / (v + r)) : 0.0);
  const double result = exponent - 0.5 * (kLogTwoPi + std::log(r)) + std::log(sum);
  check_result(result, "asymptotic", v, x);
  return result;
}

double log_bessel_i(double v, double x) {
  if (v < 0.0 || x < 0.0 || std::isnan(v) || std::isnan(x)) {
    throw std::invalid_argument("log_bessel_i: requires v >= 0, x >= 0");
  }
  if (x < std::max(v, kSeriesCrossover)) return log_bessel_i_series(v, x);
  return log_bessel_i_asymptotic(v, x);
}

void VmfParams::validate() const {
  if (m < 2) throw std::invalid_argument("VmfParams: m must be >= 2");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw std::invalid_argument("VmfParams: kappa must be finite and >= 0");
  }
}

double vmf_log_normalizer(const VmfParams& params) {
  params.validate();
  const double v = 0.5 * params.m - 1.0;
  const double half_m = 0.5 * params.m;
  const double kappa = params.kappa;
  double result = 0.0;
  const char* regime = "series";
  if (kappa < std::max(v, kSeriesCrossover)) {
    // kappa^v / I_v(kappa) = 2^v / S with S the scaled series; the kappa^v
    // factors cancel analytically, which keeps kappa -> 0 exact.
    result = v * std::numbers::ln2 - half_m * kLogTwoPi - log_series_sum(v, 0.25 * kappa * kappa);
  } else {
    regime = "asymptotic";
    result = v * std::log(kappa) - half_m * kLogTwoPi - log_bessel_i_asymptotic(v, kappa);
  }
  if (!std::isfinite(result)) {
    throw NumericalError(std::string("vmf_log_normalizer: non-finite result in ") + regime +
                         " regime (m=" + std::to_string(params.m) +
                         ", kappa=" + std::to_string(kappa) + ")");
  }
  return result;
}

double vmf_log_density(std::span<const double> z, std::span<const double> mu,
                       const VmfParams& params) {
  params.validate();
  const auto m = static_cast<std::size_t>(params.m);
  if (z.size() != m || mu.size() != m) {
    throw std::invalid_argument("vmf_log_density: dimension mismatch with params.m");
  }
  return vmf_log_normalizer(params) + params.kappa * dot(mu, z);
}

std::vector<double> class_posterior(std::span<const double> z, const PrototypeBank& bank,
                                    double temperature) {
  if (bank.size() == 0) throw std::invalid_argument("class_posterior: empty prototype bank");
  if (!(temperature > 0.0)) throw std::invalid_argument("class_posterior: temperature must be > 0");
  if (z.size() != bank.dim()) throw std::invalid_argument("class_posterior: dimension mismatch");
  std::vector<double> logits(bank.size());
  for (std::size_t c = 0; c < bank.size(); ++c) logits[c] = dot(bank.prototype(c), z) / temperature;
  return softmax(logits);
}

}  // namespace oodsynth
