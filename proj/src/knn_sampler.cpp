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

#include "oodsynth/knn_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace oodsynth {

void SamplerConfig::validate() const {
  if (k < 1) throw std::invalid_argument("SamplerConfig: k must be >= 1");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw std::invalid_argument("SamplerConfig: sigma2 must be finite and > 0");
  }
  if (candidates_per_anchor < 1) {
    throw std::invalid_argument("SamplerConfig: candidates_per_anchor must be >= 1");
  }
  if (anchors_per_class < 1) throw std::invalid_argument("SamplerConfig: anchors_per_class must be >= 1");
  if (samples_per_class < 1) throw std::invalid_argument("SamplerConfig: samples_per_class must be >= 1");
}

void OutlierBatch::append(std::span<const double> v, int cls, std::int64_t anchor, double distance) {
  embeddings.append_row(v);
  class_id.push_back(cls);
  anchor_index.push_back(anchor);
  knn_distance.push_back(distance);
}

double knn_distance(std::span<const double> query, const EmbeddingMatrix& index_set, std::size_t k,
                    std::optional<std::size_t> self_index) {
  if (k < 1) throw std::invalid_argument("knn_distance: k must be >= 1");
  if (query.size() != index_set.cols()) throw std::invalid_argument("knn_distance: dimension mismatch");
  const std::size_t usable = index_set.rows() - (self_index ? 1 : 0);
  if (self_index && *self_index >= index_set.rows()) {
    throw std::invalid_argument("knn_distance: self index out of range");
  }
  if (k > usable) {
    throw std::invalid_argument("knn_distance: k=" + std::to_string(k) + " exceeds the " +
                                std::to_string(usable) + " usable reference points");
  }
  std::vector<double> d2;
  d2.reserve(usable);
  for (std::size_t i = 0; i < index_set.rows(); ++i) {
    if (self_index && i == *self_index) continue;
    d2.push_back(squared_distance(query, index_set.row(i)));
  }
  std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(k - 1), d2.end());
  return std::sqrt(d2[k - 1]);
}

double knn_distance(std::span<const double> query, const EmbeddingMatrix& index_set, std::size_t k,
                    bool exclude_self) {
  if (!exclude_self) return knn_distance(query, index_set, k, std::nullopt);
  for (std::size_t i = 0; i < index_set.rows(); ++i) {
    const auto r = index_set.row(i);
    if (r.size() == query.size() && std::equal(r.begin(), r.end(), query.begin())) {
      return knn_distance(query, index_set, k, std::optional<std::size_t>(i));
    }
  }
  throw std::invalid_argument("knn_distance: exclude_self requested but query is not in the index set");
}

std::vector<double> member_knn_distances(const EmbeddingMatrix& points, std::size_t k) {
  std::vector<double> out(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    out[i] = knn_distance(points.row(i), points, k, std::optional<std::size_t>(i));
  }
  return out;
}

namespace {

std::vector<std::size_t> select_anchors(const EmbeddingMatrix& points, std::size_t k,
                                        std::size_t count, bool largest) {
  if (count > points.rows()) {
    throw std::invalid_argument("select anchors: count=" + std::to_string(count) +
                                " exceeds class population " + std::to_string(points.rows()));
  }
  const auto d = member_knn_distances(points, k);
  std::vector<std::size_t> idx(points.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return largest ? d[a] > d[b] : d[a] < d[b];
  });
  idx.resize(count);
  return idx;
}

FilterResult filter_knn(const EmbeddingMatrix& candidates, const EmbeddingMatrix& index_set,
                        std::size_t k, bool largest) {
  if (candidates.empty()) throw std::invalid_argument("filter: empty candidate set");
  FilterResult best{0, knn_distance(candidates.row(0), index_set, k, std::nullopt)};
  for (std::size_t i = 1; i < candidates.rows(); ++i) {
    const double d = knn_distance(candidates.row(i), index_set, k, std::nullopt);
    if (largest ? d > best.distance : d < best.distance) best = {i, d};
  }
  return best;
}

}  // namespace

std::vector<std::size_t> select_boundary_anchors(const EmbeddingMatrix& class_embeddings,
                                                 std::size_t k, std::size_t count) {
  return select_anchors(class_embeddings, k, count, true);
}

std::vector<std::size_t> select_inlier_anchors(const EmbeddingMatrix& class_embeddings,
                                               std::size_t k, std::size_t count) {
  return select_anchors(class_embeddings, k, count, false);
}

EmbeddingMatrix sample_candidates(std::span<const double> anchor, double sigma2, std::size_t count,
                                  Rng& rng) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sample_candidates: sigma2 must be > 0");
  const double sigma = std::sqrt(sigma2);
  EmbeddingMatrix out(count, anchor.size());
  for (std::size_t i = 0; i < count; ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < anchor.size(); ++j) r[j] = anchor[j] + sigma * rng.normal();
  }
  return out;
}

FilterResult filter_max_knn(const EmbeddingMatrix& candidates, const EmbeddingMatrix& index_set,
                            std::size_t k) {
  return filter_knn(candidates, index_set, k, true);
}

FilterResult filter_min_knn(const EmbeddingMatrix& candidates, const EmbeddingMatrix& index_set,
                            std::size_t k) {
  return filter_knn(candidates, index_set, k, false);
}

std::vector<double> rescale_to_token_norm(std::span<const double> v, std::size_t class_id,
                                          const PrototypeBank& bank) {
  if (class_id >= bank.size()) throw std::invalid_argument("rescale_to_token_norm: bad class id");
  auto out = normalize(v);
  const double target = bank.original_norm(class_id);
  for (double& x : out) x *= target;
  return out;
}

OutlierBatch synthesize(const LabeledFeatures& embedded, const PrototypeBank& bank,
                        const SamplerConfig& config) {
  config.validate();
  embedded.validate(bank.size());
  if (embedded.features.cols() != bank.dim()) {
    throw std::invalid_argument("synthesize: embedding dimension does not match prototypes");
  }
  const bool ood = config.mode == SampleMode::kOod;
  OutlierBatch batch;
  for (std::size_t c = 0; c < bank.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < embedded.size(); ++i) {
      if (static_cast<std::size_t>(embedded.labels[i]) == c) members.push_back(i);
    }
    if (config.k >= members.size()) {
      throw std::invalid_argument("synthesize: k=" + std::to_string(config.k) +
                                  " must be below the population of class " + std::to_string(c) +
                                  " (" + std::to_string(members.size()) + ")");
    }
    const EmbeddingMatrix class_set = embedded.features.select_rows(members);
    const EmbeddingMatrix& reference =
        config.reference == ReferenceSet::kClass ? class_set : embedded.features;
    const auto anchors = ood ? select_boundary_anchors(class_set, config.k, config.anchors_per_class)
                             : select_inlier_anchors(class_set, config.k, config.anchors_per_class);

    std::vector<Rng> streams;
    streams.reserve(anchors.size());
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      streams.emplace_back(derive_seed(config.seed, {c, a}));
    }
    for (std::size_t e = 0; e < config.samples_per_class; ++e) {
      const std::size_t a = e % anchors.size();
      const auto candidates =
          sample_candidates(class_set.row(anchors[a]), config.sigma2,
                            config.candidates_per_anchor, streams[a]);
      const auto chosen = ood ? filter_max_knn(candidates, reference, config.k)
                              : filter_min_knn(candidates, reference, config.k);
      const auto v = rescale_to_token_norm(candidates.row(chosen.row), c, bank);
      batch.append(v, static_cast<int>(c), static_cast<std::int64_t>(members[anchors[a]]),
                   chosen.distance);
    }
  }
  return batch;
}

OutlierBatch token_noise_sampler(const PrototypeBank& bank, double sigma1_sq,
                                 std::size_t count_per_class, std::uint64_t seed) {
  if (!(sigma1_sq > 0.0)) throw std::invalid_argument("token_noise_sampler: sigma1_sq must be > 0");
  OutlierBatch batch;
  for (std::size_t c = 0; c < bank.size(); ++c) {
    Rng rng(derive_seed(seed, {hash_string("token_noise"), c}));
    const auto candidates = sample_candidates(bank.prototype(c), sigma1_sq, count_per_class, rng);
    for (std::size_t i = 0; i < candidates.rows(); ++i) {
      const double offset = std::sqrt(squared_distance(candidates.row(i), bank.prototype(c)));
      batch.append(rescale_to_token_norm(candidates.row(i), c, bank), static_cast<int>(c), -1,
                   offset);
    }
  }
  return batch;
}

OutlierBatch interpolation_sampler(const PrototypeBank& bank, double alpha, PairPolicy policy,
                                   std::size_t count, std::uint64_t seed) {
  if (bank.size() < 2) throw std::invalid_argument("interpolation_sampler: needs at least 2 classes");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("interpolation_sampler: alpha must lie in (0, 1]");
  }
  Rng rng(derive_seed(seed, {hash_string("interpolation")}));
  const std::size_t classes = bank.size();
  OutlierBatch batch;
  std::vector<double> mix(bank.dim());
  for (std::size_t i = 0; i < count; ++i) {
    const auto first = static_cast<std::size_t>(rng.below(classes));
    std::size_t second = 0;
    if (policy == PairPolicy::kDistinct) {
      second = static_cast<std::size_t>(rng.below(classes - 1));
      if (second >= first) ++second;
    } else {
      second = static_cast<std::size_t>(rng.below(classes));
    }
    const auto t1 = bank.token_embedding(first);
    const auto t2 = bank.token_embedding(second);
    for (std::size_t j = 0; j < mix.size(); ++j) mix[j] = alpha * t1[j] + (1.0 - alpha) * t2[j];
    batch.append(rescale_to_token_norm(mix, first, bank), static_cast<int>(first),
                 static_cast<std::int64_t>(second), 0.0);
  }
  return batch;
}

}  // namespace oodsynth
