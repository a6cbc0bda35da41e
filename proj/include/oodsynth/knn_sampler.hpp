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

// Non-parametric embedding synthesis. Anchors are chosen by their exact k-NN
// distance inside their own class, Gaussian candidates are drawn around each
// anchor, and one candidate per draw set survives the k-NN filter: the
// farthest for outliers, the nearest for inliers. Survivors are rescaled to
// the norm of their class token embedding.

#ifndef OODSYNTH_KNN_SAMPLER_HPP_
#define OODSYNTH_KNN_SAMPLER_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "oodsynth/conditioned_space.hpp"
#include "oodsynth/embeddings.hpp"
#include "oodsynth/rng.hpp"

namespace oodsynth {

enum class SampleMode { kOod, kId };

// Which embeddings the candidate filter measures k-NN distance against.
enum class ReferenceSet { kClass, kGlobal };

struct SamplerConfig {
  std::size_t k = 300;
  double sigma2 = 0.03;
  std::size_t candidates_per_anchor = 100;
  std::size_t anchors_per_class = 50;
  std::size_t samples_per_class = 1000;
  SampleMode mode = SampleMode::kOod;
  ReferenceSet reference = ReferenceSet::kClass;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OutlierBatch {
  EmbeddingMatrix embeddings;
  std::vector<int> class_id;
  std::vector<std::int64_t> anchor_index;
  std::vector<double> knn_distance;

  std::size_t size() const { return class_id.size(); }
  void append(std::span<const double> v, int cls, std::int64_t anchor, double distance);

  bool operator==(const OutlierBatch&) const = default;
};

// Distance to the k-th nearest row of `index_set` (k is 1-based). With
// `self_index` set, that row is skipped. Throws when fewer than k rows remain.
double knn_distance(std::span<const double> query, const EmbeddingMatrix& index_set, std::size_t k,
                    std::optional<std::size_t> self_index);

// Flag form: with exclude_self, the first row bitwise equal to `query` is
// skipped (std::invalid_argument if there is none).
double knn_distance(std::span<const double> query, const EmbeddingMatrix& index_set, std::size_t k,
                    bool exclude_self);

// Self-excluded k-NN distance of every row of `points` within `points`.
std::vector<double> member_knn_distances(const EmbeddingMatrix& points, std::size_t k);

// The `count` rows with the largest (boundary) or smallest (inlier)
// self-excluded k-NN distance, ordered by that distance; ties go to the
// lower index.
std::vector<std::size_t> select_boundary_anchors(const EmbeddingMatrix& class_embeddings,
                                                 std::size_t k, std::size_t count);
std::vector<std::size_t> select_inlier_anchors(const EmbeddingMatrix& class_embeddings,
                                               std::size_t k, std::size_t count);

// count i.i.d. draws from N(anchor, sigma2 I). Not renormalized.
EmbeddingMatrix sample_candidates(std::span<const double> anchor, double sigma2, std::size_t count,
                                  Rng& rng);

struct FilterResult {
  std::size_t row = 0;
  double distance = 0.0;
};

// Candidate with the largest / smallest k-NN distance to `index_set`; ties
// go to the lower row.
FilterResult filter_max_knn(const EmbeddingMatrix& candidates, const EmbeddingMatrix& index_set,
                            std::size_t k);
FilterResult filter_min_knn(const EmbeddingMatrix& candidates, const EmbeddingMatrix& index_set,
                            std::size_t k);

// v / ||v|| * bank.original_norm(class_id).
std::vector<double> rescale_to_token_norm(std::span<const double> v, std::size_t class_id,
                                          const PrototypeBank& bank);

// Per class: select anchors_per_class anchors, then cycle over them emitting
// one filtered, rescaled candidate per visit until samples_per_class rows are
// produced. anchor_index is the row in `embedded`. Each anchor owns a random
// stream derived from (seed, class, anchor ordinal), so the result does not
// depend on the order anchors are processed in.
OutlierBatch synthesize(const LabeledFeatures& embedded, const PrototypeBank& bank,
                        const SamplerConfig& config);

// Table-free baselines on the token embeddings themselves.
//
// Token noise: per class, `count_per_class` rows of mu_c + N(0, sigma1_sq I)
// rescaled to the class token norm. anchor_index is -1 and knn_distance holds
// the pre-rescale distance from the prototype.
OutlierBatch token_noise_sampler(const PrototypeBank& bank, double sigma1_sq,
                                 std::size_t count_per_class, std::uint64_t seed);

enum class PairPolicy { kDistinct, kWithReplacement };

// `count` rows of alpha * T(y1) + (1 - alpha) * T(y2) for uniformly drawn
// class pairs, rescaled to the norm of T(y1). class_id is y1, anchor_index
// is y2, knn_distance is 0. alpha must lie in (0, 1].
OutlierBatch interpolation_sampler(const PrototypeBank& bank, double alpha, PairPolicy policy,
                                   std::size_t count, std::uint64_t seed);

}  // namespace oodsynth

#endif  // OODSYNTH_KNN_SAMPLER_HPP_
