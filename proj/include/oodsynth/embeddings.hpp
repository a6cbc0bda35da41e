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

// Embedding containers, the class prototype bank, and the von Mises-Fisher
// machinery on the unit hypersphere. Densities and normalizers are returned
// in the log domain; the only linear-domain probabilities handed out are the
// class posteriors.

#ifndef OODSYNTH_EMBEDDINGS_HPP_
#define OODSYNTH_EMBEDDINGS_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace oodsynth {

// Tolerance for "is unit-normalized" checks.
inline constexpr double kUnitTolerance = 1e-6;

// Row-major n x m matrix of finite reals.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t cols);
  EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  const std::vector<double>& data() const { return data_; }

  // Appends a row. The first append on an empty 0 x 0 matrix fixes cols.
  void append_row(std::span<const double> values);

  // Copy of the listed rows, in the listed order.
  EmbeddingMatrix select_rows(std::span<const std::size_t> indices) const;

  bool is_unit_normalized(double tolerance = kUnitTolerance) const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double squared_distance(std::span<const double> a, std::span<const double> b);

// v / ||v||_2. Throws std::invalid_argument on zero or non-finite norm.
std::vector<double> normalize(std::span<const double> v);

// Row-wise normalize.
EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m);

// Max-shifted log(sum(exp(x))). Requires a nonempty input.
double log_sum_exp(std::span<const double> x);

std::vector<double> softmax(std::span<const double> logits);

// C unit prototypes plus the norms of the token embeddings they came from.
class PrototypeBank {
 public:
  PrototypeBank() = default;

  // Normalizes each row of `token_embeddings` and records its norm. Names
  // default to "class_<i>" when `class_names` is empty.
  explicit PrototypeBank(const EmbeddingMatrix& token_embeddings,
                         std::vector<std::string> class_names = {});

  std::size_t size() const { return prototypes_.rows(); }
  std::size_t dim() const { return prototypes_.cols(); }

  const EmbeddingMatrix& prototypes() const { return prototypes_; }
  std::span<const double> prototype(std::size_t c) const { return prototypes_.row(c); }
  double original_norm(std::size_t c) const { return original_norms_.at(c); }
  const std::vector<double>& original_norms() const { return original_norms_; }
  const std::string& class_name(std::size_t c) const { return class_names_.at(c); }

  // prototype(c) * original_norm(c).
  std::vector<double> token_embedding(std::size_t c) const;
  EmbeddingMatrix token_embeddings() const;

 private:
  EmbeddingMatrix prototypes_;
  std::vector<double> original_norms_;
  std::vector<std::string> class_names_;
};

struct VmfParams {
  int m = 3;
  double kappa = 1.0;

  void validate() const;
};

// log I_v(x) for v >= 0, x >= 0. Power series below max(v, 30), uniform
// asymptotic (Debye) expansion above. Throws NumericalError naming the
// regime if the result overflows.
double log_bessel_i(double v, double x);

// The two regimes, exposed so the crossover can be checked for continuity.
double log_bessel_i_series(double v, double x);
double log_bessel_i_asymptotic(double v, double x);

// log Z_m(kappa), Z_m = kappa^(m/2-1) / ((2 pi)^(m/2) I_(m/2-1)(kappa)).
// kappa = 0 yields the uniform density 1 / |S^(m-1)|.
double vmf_log_normalizer(const VmfParams& params);

// log Z_m(kappa) + kappa * mu.z
double vmf_log_density(std::span<const double> z, std::span<const double> mu,
                       const VmfParams& params);

// softmax_j(mu_j . z / t). Equal to the vMF mixture posterior with
// kappa = 1 / t and equal priors.
std::vector<double> class_posterior(std::span<const double> z, const PrototypeBank& bank,
                                    double temperature);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace oodsynth

#endif  // OODSYNTH_EMBEDDINGS_HPP_
